"""Derived quantities: drag/lift functionals, conservation monitors,
divergence norm and the drag-lift limit-cycle period estimator.

Forces come in two flavours: a volumetric residual functional evaluated
with a discrete boundary lifting (superconvergent) and a direct boundary
integral of the stress, kept for cross-checking.
"""

from dataclasses import dataclass, field

import numpy as np

from .assembly import ConvectiveForm
from .mesh import CYLINDER
from .quadrature import edge_rule
from .spaces import tabulate_basis


@dataclass
class StepQuantities:
    t: float
    drag: float
    lift: float
    drag_direct: float
    lift_direct: float
    kinetic_energy: float
    momentum_x: float
    momentum_y: float
    angular_momentum: float
    div_l2: float
    newton_iters: int = 0
    factorizations: int = 0
    residual: float = 0.0


@dataclass
class PeriodEstimate:
    period: float = float("nan")
    deviation: float = float("nan")
    cycles: int = 0
    window: tuple = (0.0, 0.0)
    valid: bool = False
    reason: str = ""


# ---------------------------------------------------------------------------
# conservation monitors


def monitors(asm, U):
    """Kinetic energy, linear/angular momentum and ||div u||_L2 of a state.

    Uses the bilinear quadrature rule (degree 2k), which integrates |u|^2
    exactly on straight triangles.
    """
    u, grad = asm.velocity_at_qp(U, rule="bilinear")
    wq = asm.quad_weights("bilinear")
    xy = asm.quad_points_physical("bilinear")
    e = 0.5 * float(np.sum(wq * (u[..., 0] ** 2 + u[..., 1] ** 2)))
    mx = float(np.sum(wq * u[..., 0]))
    my = float(np.sum(wq * u[..., 1]))
    ang = float(np.sum(wq * (xy[..., 0] * u[..., 1] - xy[..., 1] * u[..., 0])))
    div = grad[..., 0, 0] + grad[..., 1, 1]
    div_l2 = float(np.sqrt(np.sum(wq * div * div)))
    return {
        "kinetic_energy": e,
        "momentum_x": mx,
        "momentum_y": my,
        "angular_momentum": ang,
        "div_l2": div_l2,
    }


# ---------------------------------------------------------------------------
# residual-based forces


def force_residual(model, scheme, states, dt, tag=CYLINDER):
    """(drag, lift) from the raw scheme residual summed over the boundary
    velocity dofs (the volumetric functional with a nodal-indicator lifting).

    The residual of the momentum equation tested with a lifting v that
    equals e_x (or e_y) on the cylinder reduces to the boundary stress
    integral with the fluid-domain outward normal; the force on the body
    carries the opposite sign, hence the leading minus.
    """
    R = model.transient_raw_residual(scheme, states, dt)
    dofs = model.space.velocity.boundary_dofs[tag]
    n_u = model.space.n_u
    drag = -float(np.sum(R[dofs]))
    lift = -float(np.sum(R[dofs + n_u]))
    return drag, lift


def force_residual_steady(model, U, tag=CYLINDER, form=None):
    """Steady-state counterpart of force_residual (no time term)."""
    R = model.steady_raw_residual(U, form=form)
    dofs = model.space.velocity.boundary_dofs[tag]
    n_u = model.space.n_u
    return -float(np.sum(R[dofs])), -float(np.sum(R[dofs + n_u]))


# ---------------------------------------------------------------------------
# direct boundary-stress forces


class BoundaryForce:
    """Edge-quadrature evaluation of the boundary stress integral
    over one tagged boundary polygon.

    The normal points away from the body into the fluid, so drag is
    positive for flow in +x. Per-edge basis tabulations are precomputed,
    making repeated per-step evaluation cheap.
    """

    def __init__(self, space, tag=CYLINDER, npoints=None):
        mesh = space.mesh
        k = space.k
        nq = npoints or (k + 2)
        s_pts, s_wts = edge_rule(nq)

        edges = [
            e for e, tg in zip(mesh.boundary_edges, mesh.boundary_tags)
            if tg == tag
        ]
        if not edges:
            raise ValueError(f"no boundary edges tagged {tag!r}")

        # adjacent (unique, boundary) triangle for each edge
        edge_to_tri = {}
        for ti, tri in enumerate(mesh.triangles):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                edge_to_tri[frozenset((tri[a], tri[b]))] = ti

        verts = mesh.vertices
        tris = mesh.triangles
        ne = len(edges)
        phis, grads, pphis = [], [], []
        udofs, pdofs, normals, lengths = [], [], [], []
        for v0, v1 in edges:
            ti = edge_to_tri[frozenset((v0, v1))]
            tri = tris[ti]
            a = verts[tri[0]]
            J = np.column_stack([verts[tri[1]] - a, verts[tri[2]] - a])
            invJ = np.linalg.inv(J)
            p0, p1 = verts[v0], verts[v1]
            pts = p0[None, :] + s_pts[:, None] * (p1 - p0)[None, :]
            ref = (pts - a) @ invJ.T
            phi, dphi = tabulate_basis(k, ref)
            pphi, _ = tabulate_basis(k - 1, ref)
            phys_grad = dphi @ invJ                     # [q, a, 2]
            tvec = p1 - p0
            ell = float(np.hypot(*tvec))
            n = np.array([tvec[1], -tvec[0]]) / ell
            mid = 0.5 * (p0 + p1)
            centroid = verts[tri].mean(axis=0)
            if np.dot(n, centroid - mid) < 0:
                n = -n
            phis.append(phi)
            grads.append(phys_grad)
            pphis.append(pphi)
            udofs.append(space.velocity.cell_dofs[ti])
            pdofs.append(space.pressure.cell_dofs[ti])
            normals.append(n)
            lengths.append(ell)

        self.space = space
        self.s_wts = s_wts
        self.phi = np.stack(phis)          # [e, q, a]
        self.grad = np.stack(grads)        # [e, q, a, 2]
        self.pphi = np.stack(pphis)        # [e, q, m]
        self.udofs = np.stack(udofs)       # [e, a]
        self.pdofs = np.stack(pdofs)       # [e, m]
        self.normals = np.stack(normals)   # [e, 2]
        self.lengths = np.asarray(lengths)

    def evaluate(self, U, nu, form=ConvectiveForm.CONVECTIVE):
        """(drag, lift) = boundary integral of (nu*D(u) - p_kin*I) n,
        with p_kin = p + |u|^2/2 for the EMAC form."""
        s = self.space
        cu = U[s.ux][self.udofs]           # [e, a]
        cv = U[s.uy][self.udofs]
        cp = U[s.p][self.pdofs]
        uq = np.einsum("ea,eqa->eq", cu, self.phi)
        vq = np.einsum("ea,eqa->eq", cv, self.phi)
        gu = np.einsum("ea,eqaj->eqj", cu, self.grad)   # grad u_x
        gv = np.einsum("ea,eqaj->eqj", cv, self.grad)   # grad u_y
        pq = np.einsum("em,eqm->eq", cp, self.pphi)
        if ConvectiveForm.parse(form) == ConvectiveForm.EMAC:
            pq = pq + 0.5 * (uq**2 + vq**2)
        nx = self.normals[:, 0][:, None]
        ny = self.normals[:, 1][:, None]
        # sigma = nu (grad u + grad u^T) - p_kin I
        s11 = nu * 2.0 * gu[..., 0] - pq
        s12 = nu * (gu[..., 1] + gv[..., 0])
        s22 = nu * 2.0 * gv[..., 1] - pq
        tx = s11 * nx + s12 * ny
        ty = s12 * nx + s22 * ny
        w = self.s_wts[None, :] * self.lengths[:, None]
        return float(np.sum(w * tx)), float(np.sum(w * ty))


def force_direct(space, U, nu, form=ConvectiveForm.CONVECTIVE, tag=CYLINDER):
    return BoundaryForce(space, tag).evaluate(U, nu, form)


# ---------------------------------------------------------------------------
# period estimation


def _no_period(window, reason):
    return PeriodEstimate(window=tuple(window), valid=False, reason=reason)


def estimate_period(t, drag, lift, window=(280.0, 480.0)):
    """Period of the drag-lift limit cycle by look-ahead closest return.

    A first guess T0 comes from the mean spacing of upward zero crossings
    of the mean-removed lift. For each sample n that leaves at least
    1.5*T0 of look-ahead inside the window, the squared phase-space
    distance to samples near n + T0 is minimized and the return time is
    refined with a three-point quadratic fit, giving one period sample
    per n. The estimate is the mean with the max deviation as half-width.
    """
    t = np.asarray(t, dtype=float)
    drag = np.asarray(drag, dtype=float)
    lift = np.asarray(lift, dtype=float)
    t0, t1 = float(window[0]), float(window[1])
    eps_t = 1e-9 * max(1.0, abs(t1))
    if t.size < 4 or t[0] > t0 + eps_t or t[-1] < t1 - eps_t:
        return _no_period(window, "window not covered by the series")
    diffs = np.diff(t)
    dt = float(diffs[0])
    if not np.allclose(diffs, dt, rtol=1e-6, atol=1e-12 * max(1.0, dt)):
        return _no_period(window, "non-uniform sampling")

    sel = (t >= t0 - eps_t) & (t <= t1 + eps_t)
    tw, dw, lw = t[sel], drag[sel], lift[sel]

    l0 = lw - lw.mean()
    up = np.flatnonzero((l0[:-1] < 0) & (l0[1:] >= 0))
    if up.size < 2:
        return _no_period(window, "no oscillation (fewer than 2 zero crossings)")
    # linear-interpolated crossing times
    frac = l0[up] / (l0[up] - l0[up + 1])
    tc = tw[up] + frac * dt
    T0 = float(np.mean(np.diff(tc)))
    if T0 <= 0:
        return _no_period(window, "degenerate zero-crossing spacing")

    K = int(round(T0 / dt))
    W = max(2, int(round(0.25 * T0 / dt)))
    n_pts = tw.size
    # samples with enough look-ahead and a full search stencil available
    n_max = min(
        int(np.searchsorted(tw, t1 - 1.5 * T0 + eps_t, side="right")),
        n_pts - (K + W + 1),
    )
    if n_max <= 0:
        return _no_period(window, "window too short for the look-ahead search")

    ns = np.arange(n_max)
    offs = np.arange(-W - 1, W + 2)
    periods = np.empty(n_max)
    chunk = 2048
    for lo in range(0, n_max, chunk):
        hi = min(lo + chunk, n_max)
        idx = ns[lo:hi, None] + K + offs[None, :]
        dd = dw[idx] - dw[lo:hi, None]
        ll = lw[idx] - lw[lo:hi, None]
        dist2 = dd * dd + ll * ll
        inner = dist2[:, 1:-1]
        j = np.argmin(inner, axis=1) + 1
        rows = np.arange(hi - lo)
        f0 = dist2[rows, j]
        fm = dist2[rows, j - 1]
        fp = dist2[rows, j + 1]
        denom = fm - 2.0 * f0 + fp
        shift = np.where(np.abs(denom) > 1e-300, 0.5 * (fm - fp) / np.where(denom == 0, 1.0, denom), 0.0)
        shift = np.clip(shift, -1.0, 1.0)
        m = (j - (W + 1)) + K  # offset from n in samples
        periods[lo:hi] = (m + shift) * dt

    mean = float(np.mean(periods))
    dev = float(np.max(np.abs(periods - mean)))
    cycles = int(np.floor((tw[-1] - tw[0]) / mean)) if mean > 0 else 0
    est = PeriodEstimate(period=mean, deviation=dev, cycles=cycles,
                         window=(t0, t1), valid=cycles >= 2)
    if not est.valid:
        est.reason = "fewer than 2 cycles in the window"
    return est
