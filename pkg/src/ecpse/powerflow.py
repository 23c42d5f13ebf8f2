"""Newton-Raphson power flow used as the ground-truth state generator.

Solves the scheduled-injection equations in polar coordinates with a full
Jacobian. Generator reactive limits are deliberately ignored: the solved state
feeds measurement synthesis, where a fixed, reproducible operating point
matters more than dispatch realism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .case_io import PQ, PV, SLACK, CaseNetwork
from .grid_model import build_bus_admittance


class PowerFlowError(RuntimeError):
    """Power flow failed: divergence or a singular Jacobian (islanded net)."""


@dataclass
class TruthState:
    """A solved operating point in rectangular coordinates."""

    bus_ids: np.ndarray
    v_re: np.ndarray
    v_im: np.ndarray
    i_re: np.ndarray
    i_im: np.ndarray
    iterations: int
    mismatch_inf: float

    @property
    def v(self) -> np.ndarray:
        return self.v_re + 1j * self.v_im

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def va(self) -> np.ndarray:
        return np.angle(self.v)

    @property
    def i(self) -> np.ndarray:
        return self.i_re + 1j * self.i_im


def solve_powerflow(net: CaseNetwork, tol: float = 1e-10, max_iter: int = 50) -> TruthState:
    """Solve the network's power flow from a flat start.

    PV buses hold their generator voltage setpoint, the slack holds both
    magnitude and angle. Raises PowerFlowError when the mismatch fails to
    reach tol within max_iter iterations or the Jacobian factorization is
    singular.
    """
    pair = build_bus_admittance(net)
    ybus = pair.complex_matrix()
    n = net.n_bus
    idx = net.bus_index()

    btype = np.array([b.btype for b in net.buses])
    p_sched = -np.array([b.pd for b in net.buses])
    q_sched = -np.array([b.qd for b in net.buses])
    vset = np.ones(n)
    for gen in net.gens:
        k = idx[gen.bus]
        p_sched[k] += gen.pg
        q_sched[k] += gen.qg
        vset[k] = gen.vg

    slack = int(np.flatnonzero(btype == SLACK)[0])
    pv = np.flatnonzero(btype == PV)
    pq = np.flatnonzero(btype == PQ)
    pvpq = np.concatenate([pv, pq])

    vm = np.ones(n)
    vm[btype != PQ] = vset[btype != PQ]
    va = np.full(n, net.buses[slack].va)

    def mismatch(v: np.ndarray) -> np.ndarray:
        s = v * np.conj(ybus @ v)
        return np.concatenate(
            [s.real[pvpq] - p_sched[pvpq], s.imag[pq] - q_sched[pq]]
        )

    iterations = 0
    v = vm * np.exp(1j * va)
    f = mismatch(v)
    while np.max(np.abs(f)) > tol:
        if iterations >= max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations "
                f"(mismatch {np.max(np.abs(f)):.3e})"
            )
        ibus = ybus @ v
        diag_v = sp.diags(v)
        diag_i = sp.diags(ibus)
        diag_vn = sp.diags(v / np.abs(v))
        ds_dva = (1j * (diag_v @ (diag_i - ybus @ diag_v).conjugate())).tocsr()
        ds_dvm = (diag_v @ (ybus @ diag_vn).conjugate() + diag_i.conjugate() @ diag_vn).tocsr()

        j11 = ds_dva[pvpq][:, pvpq].real
        j12 = ds_dvm[pvpq][:, pq].real
        j21 = ds_dva[pq][:, pvpq].imag
        j22 = ds_dvm[pq][:, pq].imag
        jac = sp.bmat([[j11, j12], [j21, j22]], format="csc")

        try:
            dx = spla.splu(jac).solve(-f)
        except RuntimeError as exc:
            raise PowerFlowError(f"singular power flow Jacobian: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular power flow Jacobian: non-finite update")

        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq) :]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        iterations += 1

    i_inj = ybus @ v
    return TruthState(
        bus_ids=pair.bus_ids,
        v_re=v.real.copy(),
        v_im=v.imag.copy(),
        i_re=i_inj.real.copy(),
        i_im=i_inj.imag.copy(),
        iterations=iterations,
        mismatch_inf=float(np.max(np.abs(f))),
    )
