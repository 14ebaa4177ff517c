"""Time integration: Stokes initial data, fully implicit CN/BDF2/BDF3,
the semi-implicit SBDF2 scheme, startup sequencing and checkpointing.

Multistep schemes are started with Crank-Nicolson steps (two for BDF3,
one for BDF2 and SBDF2) so the overall order matches the main scheme.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .assembly import Assembler, ConvectiveForm, eliminate, apply_dirichlet
from .linsolve import factorize, SingularMatrixError
from .nonlinear import NewtonConfig, newton_solve, NewtonFailedError

log = logging.getLogger(__name__)

SCHEMES = ("CN", "BDF2", "BDF3", "SBDF2")
_SCHEME_IDS = {s: i for i, s in enumerate(SCHEMES)}

# mass stencil weights, newest first, divided by dt on use
_MASS_WEIGHTS = {
    "CN": (1.0, -1.0),
    "BDF2": (1.5, -2.0, 0.5),
    "BDF3": (11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0),
    "SBDF2": (1.5, -2.0, 0.5),
}


@dataclass
class SchemeConfig:
    scheme: str = "BDF3"
    dt: float = 0.01
    t_end: float = 500.0
    form: ConvectiveForm = ConvectiveForm.EMAC
    nu: float = 2.0 / 500.0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.form = ConvectiveForm.parse(self.form)


class CflViolationError(Exception):
    """SBDF2 blow-up consistent with a violated CFL restriction."""


class CheckpointError(Exception):
    pass


@dataclass
class State:
    u: np.ndarray
    t: float


class Model:
    """Spatial discretization bundle: constant matrices, the convective
    form, and Dirichlet bookkeeping."""

    def __init__(self, space, nu, form, dirichlet):
        self.space = space
        self.nu = float(nu)
        self.form = ConvectiveForm.parse(form)
        self.asm = Assembler(space)
        self.M = self.asm.mass()
        self.A = self.asm.viscous(self.nu)
        self.B = self.asm.div_blocks()
        # dirichlet: a DirichletData, or a callable t -> DirichletData for
        # time-dependent boundary values (the constrained dof set is fixed)
        self._bc_timedep = callable(dirichlet)
        self.dirichlet = dirichlet
        bc0 = dirichlet(0.0) if self._bc_timedep else dirichlet
        self.bc_idx, self.bc_vals = bc0.constraints(space)

    def bc_values_at(self, t):
        if not self._bc_timedep:
            return self.bc_vals
        idx, vals = self.dirichlet(t).constraints(self.space)
        if not np.array_equal(idx, self.bc_idx):
            raise ValueError("constrained dof set must not change over time")
        return vals

    # -- raw (unconstrained) residuals ---------------------------------------

    def steady_raw_residual(self, U, form=None):
        f = self.form if form is None else ConvectiveForm.parse(form)
        return self.A @ U + self.B @ U + self.asm.convective(f, U)

    def transient_raw_residual(self, scheme, states, dt):
        """Residual of the active scheme at the accepted solution states
        (newest first), without Dirichlet row replacement. Used both by
        the Newton callbacks and the residual-based force functional."""
        w = _MASS_WEIGHTS[scheme]
        if len(states) < len(w):
            raise ValueError(f"{scheme} needs {len(w)} states, got {len(states)}")
        combo = sum(wi * s.u for wi, s in zip(w, states)) / dt
        R = self.M @ combo + self.B @ states[0].u
        U = states[0].u
        if scheme == "CN":
            u1 = states[1].u
            R += 0.5 * (self.A @ U + self.asm.convective(self.form, U))
            R += 0.5 * (self.A @ u1 + self.asm.convective(self.form, u1))
        elif scheme == "SBDF2":
            u1, u2 = states[1].u, states[2].u
            R += self.A @ U
            R += 2.0 * self.asm.convective(self.form, u1)
            R -= self.asm.convective(self.form, u2)
        else:
            R += self.A @ U + self.asm.convective(self.form, U)
        return R

    # -- constrained residual/jacobian closures -------------------------------

    def _constrain(self, R, U, vals=None):
        R = R.copy()
        R[self.bc_idx] = U[self.bc_idx] - (self.bc_vals if vals is None else vals)
        return R

    def implicit_step_functions(self, scheme, prev_states, dt):
        """(residual_fn, jacobian_fn) for one implicit step of the scheme."""
        bc_vals = self.bc_values_at(prev_states[0].t + dt)
        w = _MASS_WEIGHTS[scheme]
        hist = sum(wi * s.u for wi, s in zip(w[1:], prev_states)) / dt
        Mhist = self.M @ hist
        theta = 0.5 if scheme == "CN" else 1.0
        alpha = w[0] / dt
        if scheme == "CN":
            u1 = prev_states[0].u
            expl = 0.5 * (self.A @ u1 + self.asm.convective(self.form, u1))
        else:
            expl = 0.0
        base = (alpha * self.M + theta * self.A + self.B).tocsr()

        def residual(U):
            R = (
                alpha * (self.M @ U) + Mhist + self.B @ U
                + theta * (self.A @ U + self.asm.convective(self.form, U))
                + expl
            )
            return self._constrain(R, U, bc_vals)

        def jacobian(U):
            J = base + theta * self.asm.convective_jacobian(self.form, U)
            return eliminate(J, self.bc_idx)

        return residual, jacobian

    def steady_step_functions(self):
        base = (self.A + self.B).tocsr()

        def residual(U):
            return self._constrain(self.steady_raw_residual(U), U)

        def jacobian(U):
            return eliminate(base + self.asm.convective_jacobian(self.form, U),
                             self.bc_idx)

        return residual, jacobian


def stokes_initial(model: Model):
    """Solution of the stationary Stokes problem with the model's BCs."""
    K = (model.A + model.B).tocsr()
    rhs = np.zeros(model.space.total)
    K_e, rhs_e = apply_dirichlet(K, rhs, model.bc_idx, model.bc_vals)
    F = factorize(K_e)
    U = F.solve(rhs_e)
    return State(u=U, t=0.0), F


def steady_solve(model: Model, newton_cfg=None, u0=None):
    """Steady Navier-Stokes solve from a Stokes (or given) initial guess."""
    if u0 is None:
        state, _ = stokes_initial(model)
        u0 = state.u
    res, jac = model.steady_step_functions()
    return newton_solve(res, jac, u0, newton_cfg)


# -- single steps (spec-level API) -------------------------------------------


def step_cn(model, state_prev, dt, newton_cfg=None, factorization=None):
    res, jac = model.implicit_step_functions("CN", [state_prev], dt)
    U, rep, F = newton_solve(res, jac, state_prev.u, newton_cfg, factorization)
    return State(U, state_prev.t + dt), rep, F


def step_bdf2(model, history, dt, newton_cfg=None, factorization=None):
    res, jac = model.implicit_step_functions("BDF2", history, dt)
    U, rep, F = newton_solve(res, jac, history[0].u, newton_cfg, factorization)
    return State(U, history[0].t + dt), rep, F


def step_bdf3(model, history, dt, newton_cfg=None, factorization=None):
    res, jac = model.implicit_step_functions("BDF3", history, dt)
    U, rep, F = newton_solve(res, jac, history[0].u, newton_cfg, factorization)
    return State(U, history[0].t + dt), rep, F


class Sbdf2Stepper:
    """IMEX stepper with one constant factorized matrix for the whole run."""

    def __init__(self, model, dt):
        self.model = model
        self.dt = dt
        self.S = ((1.5 / dt) * model.M + model.A + model.B).tocsr()
        g = np.zeros(model.space.total)
        g[model.bc_idx] = model.bc_vals
        self.col_fix = self.S @ g
        self.S_e = eliminate(self.S, model.bc_idx)
        self.factorization = factorize(self.S_e)
        self._norms = []

    def step(self, history):
        m = self.model
        u1, u2 = history[0].u, history[1].u
        t_new = history[0].t + self.dt
        vals = m.bc_values_at(t_new)
        if m._bc_timedep:
            g = np.zeros(m.space.total)
            g[m.bc_idx] = vals
            col_fix = self.S @ g
        else:
            col_fix = self.col_fix
        rhs = m.M @ ((2.0 * u1 - 0.5 * u2) / self.dt)
        rhs -= 2.0 * m.asm.convective(m.form, u1)
        rhs += m.asm.convective(m.form, u2)
        rhs -= col_fix
        rhs[m.bc_idx] = vals
        U = self.factorization.solve(rhs)
        nrm = float(np.linalg.norm(U[: 2 * m.space.n_u]))
        self._norms.append(nrm)
        if len(self._norms) > 10:
            old = self._norms[-11]
            if old > 0 and nrm > 1e6 * old:
                raise CflViolationError(
                    f"velocity norm grew from {old:.3e} to {nrm:.3e} over 10 "
                    f"steps; dt={self.dt} likely violates the advective CFL limit"
                )
        return State(U, history[0].t + self.dt)


def cfl_advisory(mesh, k, dt):
    """Log how dt compares with h * k^(-3/2) for the smallest element."""
    areas = None
    try:
        areas = mesh.triangle_areas()
    except Exception:
        return None
    h_min = float(np.sqrt(2.0 * np.min(areas)))
    limit = h_min * k ** (-1.5)
    log.info(
        "SBDF2 CFL advisory: dt=%g vs h_min*k^-1.5=%g (%s)",
        dt, limit, "ok" if dt <= limit else "dt exceeds the advisory",
    )
    return limit


# -----------------------------------------------------------------------------
# simulation driver

@dataclass
class RunStatus:
    status: str = "Completed"        # or "SolverFailed"
    t_fail: float = None
    detail: str = ""


@dataclass
class StepInfo:
    step: int
    t: float
    scheme: str
    newton_iterations: int
    factorizations: int
    residual: float


def run_simulation(model, cfg: SchemeConfig, newton_cfg=None, callback=None,
                   checkpoint_path=None, resume=None, initial=None):
    """Run the time loop to t_end.

    callback(states, info) is invoked after every accepted step with the
    state history (newest first). Returns (status, step_types, last_states).
    Solver failures are captured in the status, never raised.
    """
    newton_cfg = newton_cfg or NewtonConfig()
    dt = cfg.dt
    n_steps = int(round(cfg.t_end / dt))
    if abs(n_steps * dt - cfg.t_end) > 1e-9 * max(1.0, cfg.t_end):
        raise ValueError(f"dt={dt} does not divide t_end={cfg.t_end}")

    step_types = []
    sbdf2 = None
    if cfg.scheme == "SBDF2":
        cfl_advisory(model.space.mesh, model.space.k, dt)

    if resume is not None:
        start_step, t0, states = read_checkpoint(resume, model, cfg)
        fact = None
    else:
        state0, fact = stokes_initial(model)
        if initial is not None:
            state0 = initial
            fact = None
        states = [state0]
        start_step = 0

    depth = len(_MASS_WEIGHTS[cfg.scheme])  # states needed incl. the new one
    status = RunStatus()

    for n in range(start_step + 1, n_steps + 1):
        # startup: CN until the multistep stencil has enough history
        scheme_now = cfg.scheme if len(states) >= depth - 1 else "CN"
        try:
            if scheme_now == "SBDF2":
                if sbdf2 is None:
                    sbdf2 = Sbdf2Stepper(model, dt)
                new_state = sbdf2.step(states)
                info = StepInfo(n, new_state.t, "SBDF2", 0, 0, 0.0)
            else:
                res, jac = model.implicit_step_functions(scheme_now, states, dt)
                U, rep, fact = newton_solve(res, jac, states[0].u, newton_cfg, fact)
                new_state = State(U, n * dt)
                info = StepInfo(n, new_state.t, scheme_now, rep.iterations,
                                rep.factorizations, rep.final_residual)
        except (NewtonFailedError, SingularMatrixError, CflViolationError) as exc:
            status = RunStatus("SolverFailed", t_fail=n * dt, detail=str(exc))
            log.warning("solver failed at t=%.4f: %s", n * dt, exc)
            break

        step_types.append(scheme_now)
        states = ([new_state] + states)[:4]
        if callback is not None:
            callback(states, info)
        if checkpoint_path and cfg.checkpoint_every and n % cfg.checkpoint_every == 0:
            write_checkpoint(checkpoint_path, model, cfg, n, new_state.t, states)

    return status, step_types, states


# -----------------------------------------------------------------------------
# checkpointing

_MAGIC = b"EMACFLOW-CKPT"
_CKPT_VERSION = 1


def write_checkpoint(path, model, cfg, step, t, states):
    mesh_hash = model.space.mesh.hash().encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<I", len(mesh_hash)))
        f.write(mesh_hash)
        f.write(struct.pack("<III", model.space.k, _SCHEME_IDS[cfg.scheme],
                            len(states)))
        f.write(struct.pack("<qdd", step, t, cfg.dt))
        f.write(struct.pack("<q", model.space.total))
        for s in states:
            f.write(struct.pack("<d", s.t))
            f.write(np.ascontiguousarray(s.u, dtype="<f8").tobytes())


def read_checkpoint(path, model, cfg):
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"{path}: not an EMACFLOW-CKPT file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        mesh_hash = f.read(hlen).decode()
        k, scheme_id, nstates = struct.unpack("<III", f.read(12))
        step, t, dt = struct.unpack("<qdd", f.read(24))
        (total,) = struct.unpack("<q", f.read(8))
        if mesh_hash != model.space.mesh.hash() or k != model.space.k:
            raise CheckpointError("checkpoint fingerprint does not match the "
                                  "current mesh/space")
        if scheme_id != _SCHEME_IDS[cfg.scheme]:
            raise CheckpointError("checkpoint was written with a different scheme")
        if abs(dt - cfg.dt) > 1e-15:
            raise CheckpointError(f"checkpoint dt={dt} differs from config dt={cfg.dt}")
        if total != model.space.total:
            raise CheckpointError("checkpoint state size mismatch")
        states = []
        for _ in range(nstates):
            (st,) = struct.unpack("<d", f.read(8))
            u = np.frombuffer(f.read(8 * total), dtype="<f8").copy()
            states.append(State(u, st))
    return step, t, states
