"""Second-order sufficiency check at a converged estimate.

The Lagrangian Hessian is constant except for per-RTU bilinear blocks coupling
(v_re, v_im) at the RTU bus with (g, b). Each such block is

    [[0, A], [A^T, 0]],   A = [[lam_re, -lam_im], [lam_im, lam_re]],

whose spectrum is analytic: {+rho, +rho, -rho, -rho} with
rho = sqrt(lam_re^2 + lam_im^2). The indefiniteness is harmless as long as the
Hessian is positive definite on the tangent space of the active constraints,
which is what check_sosc evaluates: project the Hessian onto the null space of
the equality Jacobian stacked with the active bound rows, and look at the
smallest eigenvalue.

Dense null-space projection is intentional: the check runs once per estimate
on networks of at most a few thousand variables, where clarity beats sparse
machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import DualState, PrimalState, Problem

ACTIVE_TOL = 1e-8
EIG_TOL = 1e-9


@dataclass
class SOSCResult:
    verdict: str  # "satisfied" | "violated" | "indeterminate"
    min_eig: float | None
    n_active: int
    null_dim: int


def rtu_block_hessian(lam_re: float, lam_im: float) -> np.ndarray:
    """The 4x4 curvature block over (v_re, v_im, g, b) for one RTU."""
    a = np.array([[lam_re, -lam_im], [lam_im, lam_re]])
    block = np.zeros((4, 4))
    block[:2, 2:] = a
    block[2:, :2] = a.T
    return block


def rtu_block_eigs(lam_re: float, lam_im: float) -> np.ndarray:
    """Analytic eigenvalues of the RTU curvature block, ascending.

    The block is real symmetric with paired spectrum {-rho, -rho, rho, rho},
    rho = |lam_re + j lam_im|.
    """
    rho = float(np.hypot(lam_re, lam_im))
    return np.array([-rho, -rho, rho, rho])


def _dense_blocks(
    problem: Problem, primal: PrimalState, dual: DualState
) -> tuple[np.ndarray, np.ndarray]:
    """Dense (Hessian, equality Jacobian) extracted from the KKT assembly."""
    system = problem.assemble_kkt(primal, dual)
    k = system.matrix.toarray()
    nx, n = problem.nx, problem.n
    hess = k[:nx, :nx]
    jac = k[nx : nx + 2 * n, :nx]
    return hess, jac


def check_sosc(
    problem: Problem,
    primal: PrimalState,
    dual: DualState,
    eig_tol: float = EIG_TOL,
    active_tol: float = ACTIVE_TOL,
) -> SOSCResult:
    """Projected-Hessian curvature check at the given iterate.

    A bound joins the equality Jacobian as active when its multiplier
    dominates its slack (on the central path mu * slack is constant, so the
    two separate sharply) or the slack falls below active_tol outright.
    Verdict is "satisfied" when the smallest projected eigenvalue exceeds
    eig_tol, "violated" below -eig_tol, otherwise "indeterminate". A
    zero-dimensional tangent space is trivially satisfied.
    """
    hess, jac = _dense_blocks(problem, primal, dual)
    nx, n = problem.nx, problem.n

    rows = [jac]
    n_active = 0
    if problem.m:
        slack = -problem.bound_residual(primal)
        active = (slack <= active_tol) | (dual.mu >= slack)
        for k in np.flatnonzero(active):
            row = np.zeros((1, nx))
            row[0, problem.s_x[problem.mu_scalar[k]]] = problem.mu_sign[k]
            rows.append(row)
            n_active += 1
    constraints = np.vstack(rows)

    null = sla.null_space(constraints)
    null_dim = null.shape[1]
    if null_dim == 0:
        return SOSCResult(
            verdict="satisfied", min_eig=None, n_active=n_active, null_dim=0
        )

    reduced = null.T @ (0.5 * (hess + hess.T)) @ null
    try:
        eigs = sla.eigvalsh(reduced)
    except sla.LinAlgError:
        return SOSCResult(
            verdict="indeterminate", min_eig=None, n_active=n_active, null_dim=null_dim
        )
    min_eig = float(eigs[0])
    if min_eig > eig_tol:
        verdict = "satisfied"
    elif min_eig < -eig_tol:
        verdict = "violated"
    else:
        verdict = "indeterminate"
    return SOSCResult(
        verdict=verdict, min_eig=min_eig, n_active=n_active, null_dim=null_dim
    )
