"""Quasi-Newton iteration with line-search globalization.

The Jacobian factorization is kept as long as the residual contracts by
at least the update tolerance delta per step; if a full step does not
decrease the residual, the update is damped geometrically up to N times
and the last damped iterate is accepted anyway if none helped.
"""

from dataclasses import dataclass, field

import numpy as np

from .linsolve import factorize


@dataclass
class NewtonConfig:
    eps: float = 1e-11          # residual tolerance
    delta: float = 0.1          # update tolerance triggering refactorization
    gamma: float = 0.5          # line-search damping factor
    max_line_search: int = 8
    max_iterations: int = 20

    def __post_init__(self):
        if not (0 < self.delta < 1 and 0 < self.gamma < 1 and self.max_line_search >= 1):
            raise ValueError("require 0 < delta < 1, 0 < gamma < 1, N >= 1")


@dataclass
class NewtonReport:
    converged: bool = False
    iterations: int = 0
    line_search_steps: list = field(default_factory=list)
    forced_accepts: list = field(default_factory=list)
    refactorized_at: list = field(default_factory=list)
    factorizations: int = 0
    residuals: list = field(default_factory=list)
    final_residual: float = np.inf


class NewtonFailedError(Exception):
    """Iteration cap reached without convergence ('solver failed')."""

    def __init__(self, report, last_iterate):
        super().__init__(
            f"Newton did not converge in {report.iterations} iterations "
            f"(residual {report.final_residual:.3e})"
        )
        self.report = report
        self.last_iterate = last_iterate


def newton_solve(residual_fn, jacobian_fn, u0, config=None, factorization=None):
    """Solve residual_fn(U) = 0, returning (U, NewtonReport, factorization).

    residual_fn(U) returns the residual vector R(U) (target zero),
    jacobian_fn(U) its Gateaux derivative. A caller-provided factorization
    (e.g. from the previous time step) is reused for the first update.
    """
    cfg = config or NewtonConfig()
    report = NewtonReport()
    U = np.asarray(u0, dtype=float).copy()

    if factorization is None:
        factorization = factorize(jacobian_fn(U))
        report.factorizations += 1

    R = residual_fn(U)
    rho_prev = float(np.linalg.norm(R))
    report.residuals.append(rho_prev)

    while rho_prev >= cfg.eps:
        if report.iterations >= cfg.max_iterations:
            report.final_residual = rho_prev
            raise NewtonFailedError(report, U)
        report.iterations += 1

        W = factorization.solve(-R)
        omega = 1.0
        accepted = False
        for j in range(1, cfg.max_line_search + 1):
            U_trial = U + omega * W
            R_trial = residual_fn(U_trial)
            rho_trial = float(np.linalg.norm(R_trial))
            if rho_trial < rho_prev:
                accepted = True
                break
            omega *= cfg.gamma
        report.line_search_steps.append(j)
        if not accepted:
            # forced accept of the most-damped iterate
            report.forced_accepts.append(report.iterations)
        U = U_trial
        R = R_trial
        rho = rho_trial

        if rho > cfg.delta * rho_prev:
            factorization = factorize(jacobian_fn(U))
            report.factorizations += 1
            report.refactorized_at.append(report.iterations)

        rho_prev = rho
        report.residuals.append(rho)

    report.converged = True
    report.final_residual = rho_prev
    return U, report, factorization
