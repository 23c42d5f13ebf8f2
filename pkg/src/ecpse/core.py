"""Estimation problem: residual stack and structured KKT assembly.

The estimator minimizes measurement mismatch subject to nodal current balance
and interval bounds, all in rectangular coordinates:

    minimize   sum_p g_p^2 [(vp_re - v_re)^2 + (vp_im - v_im)^2]
             + sum_r [(g_r - g_m)^2 + (b_r - b_m)^2]
    subject to  KCL at every bus (real and imaginary), and
                lo <= x <= hi for each bounded scalar.

Each PMU contributes internal voltage/current variables tied to the bus by a
mismatch conductance g_p; each RTU contributes an equivalent shunt admittance
(g_r, b_r) whose element current is I = (g - jb) V. The Lagrangian's
stationarity conditions form an adjoint circuit over multipliers (lam_re,
lam_im): the transposed network admittance, RTU adjoint currents
(g lam_re - b lam_im, b lam_re + g lam_im), and current sources driven by the
measurement residuals. Interval bounds carry nonnegative multipliers mu with
smoothed complementarity mu * ib = -epsilon.

Bound boxes of zero width (exact measurements) are pinned: the scalar becomes
a constant, carrying no variable slot, no multiplier, and no complementarity
row. With every scalar pinned the KKT system is linear in (v, lam) and one
Newton solve is exact.

The KKT matrix is assembled from a fixed stamp pattern: index arrays and
constant entries are computed once per problem, and each iteration rewrites
only the numeric values that depend on the current iterate (RTU admittances,
bilinear curvature, complementarity rows). Duplicate (row, col) stamps sum,
so overlapping contributions stack like element stamps in nodal analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .case_io import POINT_BOX_WIDTH, CaseFormatError, CaseNetwork, MeasurementSet
from .grid_model import AdmittancePair, build_bus_admittance

KIND_G, KIND_B, KIND_VP_RE, KIND_VP_IM, KIND_IP_RE, KIND_IP_IM = range(6)


class EstimatorError(RuntimeError):
    """Base class for estimation failures."""


class SingularKKTError(EstimatorError):
    """The KKT factorization failed; the problem is unobservable as posed."""


@dataclass
class PrimalState:
    """Primal iterate: bus voltages plus one flat vector of device scalars.

    scalars is laid out in blocks [g_rtu, b_rtu, vp_re, vp_im, ip_re, ip_im];
    the named properties are views into it. Pinned scalars keep their fixed
    value here so every formula can read one array.
    """

    v_re: np.ndarray
    v_im: np.ndarray
    scalars: np.ndarray
    n_rtu: int
    n_pmu: int

    def _block(self, k: int) -> np.ndarray:
        r, p = self.n_rtu, self.n_pmu
        bounds = [0, r, 2 * r, 2 * r + p, 2 * r + 2 * p, 2 * r + 3 * p, 2 * r + 4 * p]
        return self.scalars[bounds[k] : bounds[k + 1]]

    @property
    def g_rtu(self) -> np.ndarray:
        return self._block(0)

    @property
    def b_rtu(self) -> np.ndarray:
        return self._block(1)

    @property
    def vp_re(self) -> np.ndarray:
        return self._block(2)

    @property
    def vp_im(self) -> np.ndarray:
        return self._block(3)

    @property
    def ip_re(self) -> np.ndarray:
        return self._block(4)

    @property
    def ip_im(self) -> np.ndarray:
        return self._block(5)

    def copy(self) -> "PrimalState":
        return PrimalState(
            v_re=self.v_re.copy(), v_im=self.v_im.copy(), scalars=self.scalars.copy(),
            n_rtu=self.n_rtu, n_pmu=self.n_pmu,
        )


@dataclass
class DualState:
    """Dual iterate: KCL multipliers, bound multipliers, barrier parameter."""

    lam_re: np.ndarray
    lam_im: np.ndarray
    mu: np.ndarray
    epsilon: float

    def copy(self) -> "DualState":
        return DualState(
            lam_re=self.lam_re.copy(), lam_im=self.lam_im.copy(),
            mu=self.mu.copy(), epsilon=self.epsilon,
        )


@dataclass
class KKTSystem:
    """One assembled Newton system K delta = -residual."""

    matrix: sp.csc_matrix
    residual: np.ndarray
    nx: int
    n: int
    m: int

    def split(self, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split a solution vector into (dx, dlam, dmu)."""
        nx, n, m = self.nx, self.n, self.m
        return delta[:nx], delta[nx : nx + 2 * n], delta[nx + 2 * n : nx + 2 * n + m]


class Problem:
    """Index bookkeeping plus residual/KKT evaluation for one measurement set.

    pmu_mode "full" keeps the PMU internal voltages as bounded variables with
    dual pairs. pmu_mode "simplified" removes those dual pairs together with
    their complementarity rows: the internal voltages leave the variable
    vector and act as sources whose values the solver updates by substitution
    into the dropped stationarity row, limited into the measurement box
    (update_pmu_sources). A source resting on a box face stands in for the
    removed bound multiplier, so both modes share their fixed points. PMU
    internal currents always carry dual pairs.
    """

    def __init__(
        self,
        pair: AdmittancePair,
        mset: MeasurementSet,
        pmu_mode: str = "simplified",
    ) -> None:
        if pmu_mode not in ("simplified", "full"):
            raise ValueError(f"unknown pmu_mode {pmu_mode!r}")
        self.pair = pair
        self.mode = pmu_mode
        self.n = pair.n
        n = self.n
        idx = {int(b): k for k, b in enumerate(pair.bus_ids)}
        for m in list(mset.pmu) + list(mset.rtu):
            if m.bus not in idx:
                raise CaseFormatError(f"measurement references unknown bus {m.bus}")

        self.mset = mset
        self.n_rtu = len(mset.rtu)
        self.n_pmu = len(mset.pmu)
        if self.n_rtu + self.n_pmu == 0:
            raise SingularKKTError(
                "measurement set has no devices: every bus state is "
                "unobservable and the optimality system admits v = 0"
            )
        r_cnt, p_cnt = self.n_rtu, self.n_pmu

        self.rtu_bus = np.array([idx[m.bus] for m in mset.rtu], dtype=np.int64)
        self.pmu_bus = np.array([idx[m.bus] for m in mset.pmu], dtype=np.int64)
        self.pmu_g = np.array([m.g_pmu for m in mset.pmu])

        # Scalar table in block order [g, b, vp_re, vp_im, ip_re, ip_im].
        boxes = (
            [m.g for m in mset.rtu]
            + [m.b for m in mset.rtu]
            + [m.v_re for m in mset.pmu]
            + [m.v_im for m in mset.pmu]
            + [m.i_re for m in mset.pmu]
            + [m.i_im for m in mset.pmu]
        )
        ns = len(boxes)
        self.n_scalar = ns
        self.s_kind = np.concatenate(
            [
                np.full(r_cnt, KIND_G), np.full(r_cnt, KIND_B),
                np.full(p_cnt, KIND_VP_RE), np.full(p_cnt, KIND_VP_IM),
                np.full(p_cnt, KIND_IP_RE), np.full(p_cnt, KIND_IP_IM),
            ]
        ).astype(np.int64) if ns else np.zeros(0, dtype=np.int64)
        self.s_bus = np.concatenate(
            [self.rtu_bus, self.rtu_bus] + [self.pmu_bus] * 4
        ).astype(np.int64) if ns else np.zeros(0, dtype=np.int64)
        self.s_lo = np.array([b.lo for b in boxes])
        self.s_hi = np.array([b.hi for b in boxes])
        self.s_meas = np.array([b.value for b in boxes])
        self.s_pinned = (self.s_hi - self.s_lo) <= POINT_BOX_WIDTH

        # Simplified mode: non-pinned PMU internal voltages become sources.
        is_vp = np.isin(self.s_kind, (KIND_VP_RE, KIND_VP_IM))
        if pmu_mode == "simplified":
            self.s_source = is_vp & ~self.s_pinned
        else:
            self.s_source = np.zeros(ns, dtype=bool)
        o = 2 * r_cnt
        self._src_re = np.flatnonzero(self.s_source[o : o + p_cnt])
        self._src_im = np.flatnonzero(self.s_source[o + p_cnt : o + 2 * p_cnt])

        # Variable slots for free scalars, mu rows for dual-carrying bounds.
        self.s_x = np.full(ns, -1, dtype=np.int64)
        free = np.flatnonzero(~self.s_pinned & ~self.s_source)
        self.s_x[free] = 2 * n + np.arange(free.size)
        self.free_scalars = free
        self.nx = 2 * n + free.size

        self.s_has_mu = ~self.s_pinned & ~self.s_source
        mu_scalars = np.flatnonzero(self.s_has_mu)
        self.mu_scalar = np.repeat(mu_scalars, 2)
        self.mu_sign = np.tile(np.array([-1.0, 1.0]), mu_scalars.size)
        self.s_mu_lo = np.full(ns, -1, dtype=np.int64)
        self.s_mu_hi = np.full(ns, -1, dtype=np.int64)
        self.s_mu_lo[mu_scalars] = 2 * np.arange(mu_scalars.size)
        self.s_mu_hi[mu_scalars] = 2 * np.arange(mu_scalars.size) + 1
        self.m = int(self.mu_scalar.size)
        self.size = self.nx + 2 * n + self.m

        self.g_meas = self.s_meas[:r_cnt]
        self.b_meas = self.s_meas[r_cnt : 2 * r_cnt]
        self.y_gt = pair.y_g.T.tocsr()
        self.y_bt = pair.y_b.T.tocsr()

        self._build_stamps()

    # ----- residual evaluation -------------------------------------------

    def gather_meas_state(self) -> PrimalState:
        """Primal state sitting exactly at the measured values."""
        v_re = np.ones(self.n)
        v_im = np.zeros(self.n)
        return PrimalState(
            v_re=v_re, v_im=v_im, scalars=self.s_meas.copy(),
            n_rtu=self.n_rtu, n_pmu=self.n_pmu,
        )

    def objective(self, primal: PrimalState) -> float:
        dvr = primal.vp_re - primal.v_re[self.pmu_bus]
        dvi = primal.vp_im - primal.v_im[self.pmu_bus]
        mism = np.sum((self.pmu_g * dvr) ** 2) + np.sum((self.pmu_g * dvi) ** 2)
        dev = np.sum((primal.g_rtu - self.g_meas) ** 2) + np.sum(
            (primal.b_rtu - self.b_meas) ** 2
        )
        return float(mism + dev)

    def primal_residual(self, primal: PrimalState) -> np.ndarray:
        """KCL residuals, stacked [real(n); imag(n)]."""
        v_re, v_im = primal.v_re, primal.v_im
        c_re = self.pair.y_g @ v_re - self.pair.y_b @ v_im
        c_im = self.pair.y_g @ v_im + self.pair.y_b @ v_re
        rb, g, b = self.rtu_bus, primal.g_rtu, primal.b_rtu
        np.add.at(c_re, rb, g * v_re[rb] + b * v_im[rb])
        np.add.at(c_im, rb, g * v_im[rb] - b * v_re[rb])
        pb, gp = self.pmu_bus, self.pmu_g
        np.add.at(c_re, pb, -(primal.ip_re + gp * (primal.vp_re - v_re[pb])))
        np.add.at(c_im, pb, -(primal.ip_im + gp * (primal.vp_im - v_im[pb])))
        return np.concatenate([c_re, c_im])

    def _mu_diff(self, dual: DualState) -> np.ndarray:
        """Per-scalar (mu_hi - mu_lo); zero where no dual pair exists."""
        mu_ext = np.append(dual.mu, 0.0)
        lo = np.where(self.s_mu_lo >= 0, self.s_mu_lo, self.m)
        hi = np.where(self.s_mu_hi >= 0, self.s_mu_hi, self.m)
        return mu_ext[hi] - mu_ext[lo]

    def adjoint_residual(self, primal: PrimalState, dual: DualState) -> np.ndarray:
        """Stationarity residuals aligned with the variable vector X."""
        n = self.n
        v_re, v_im = primal.v_re, primal.v_im
        lam_re, lam_im = dual.lam_re, dual.lam_im

        s_vre = self.y_gt @ lam_re + self.y_bt @ lam_im
        s_vim = -self.y_bt @ lam_re + self.y_gt @ lam_im

        rb, g, b = self.rtu_bus, primal.g_rtu, primal.b_rtu
        np.add.at(s_vre, rb, g * lam_re[rb] - b * lam_im[rb])
        np.add.at(s_vim, rb, b * lam_re[rb] + g * lam_im[rb])

        pb, gp = self.pmu_bus, self.pmu_g
        dvr = primal.vp_re - v_re[pb]
        dvi = primal.vp_im - v_im[pb]
        np.add.at(s_vre, pb, gp * lam_re[pb] - 2.0 * gp**2 * dvr)
        np.add.at(s_vim, pb, gp * lam_im[pb] - 2.0 * gp**2 * dvi)

        mu_diff = self._mu_diff(dual)
        r_cnt, p_cnt = self.n_rtu, self.n_pmu
        st = np.empty(self.n_scalar)
        st[:r_cnt] = (
            2.0 * (primal.g_rtu - self.g_meas)
            + lam_re[rb] * v_re[rb] + lam_im[rb] * v_im[rb]
        )
        st[r_cnt : 2 * r_cnt] = (
            2.0 * (primal.b_rtu - self.b_meas)
            + lam_re[rb] * v_im[rb] - lam_im[rb] * v_re[rb]
        )
        o = 2 * r_cnt
        st[o : o + p_cnt] = 2.0 * gp**2 * dvr - gp * lam_re[pb]
        st[o + p_cnt : o + 2 * p_cnt] = 2.0 * gp**2 * dvi - gp * lam_im[pb]
        st[o + 2 * p_cnt : o + 3 * p_cnt] = -lam_re[pb]
        st[o + 3 * p_cnt : o + 4 * p_cnt] = -lam_im[pb]
        st += mu_diff

        return np.concatenate([s_vre, s_vim, st[self.free_scalars]])

    def bound_residual(self, primal: PrimalState) -> np.ndarray:
        """Inequality bodies ib <= 0, two per dual-carrying box (lo, hi)."""
        xs = primal.scalars[self.mu_scalar]
        lo = self.s_lo[self.mu_scalar]
        hi = self.s_hi[self.mu_scalar]
        return np.where(self.mu_sign < 0, lo - xs, xs - hi)

    def complementarity_residual(self, primal: PrimalState, dual: DualState) -> np.ndarray:
        return dual.mu * self.bound_residual(primal) + dual.epsilon

    def update_pmu_sources(self, primal: PrimalState, dual: DualState) -> None:
        """Voltage-limited update of PMU internal-voltage sources (in place).

        Simplified mode removes the stationarity row
        2 g_p^2 (vp - v) - g_p lam = 0 from the system; it is solved here by
        substitution, vp = v + lam / (2 g_p), and the result is limited into
        the measurement box. Saturation at a face plays the role the removed
        multiplier pair would have played. No-op in full mode.
        """
        sr, si = self._src_re, self._src_im
        if not sr.size and not si.size:
            return
        pb, gp = self.pmu_bus, self.pmu_g
        o = 2 * self.n_rtu
        p_cnt = self.n_pmu
        if sr.size:
            tgt = primal.v_re[pb[sr]] + dual.lam_re[pb[sr]] / (2.0 * gp[sr])
            k = o + sr
            primal.scalars[k] = np.clip(tgt, self.s_lo[k], self.s_hi[k])
        if si.size:
            tgt = primal.v_im[pb[si]] + dual.lam_im[pb[si]] / (2.0 * gp[si])
            k = o + p_cnt + si
            primal.scalars[k] = np.clip(tgt, self.s_lo[k], self.s_hi[k])

    def full_residual(self, primal: PrimalState, dual: DualState) -> np.ndarray:
        return np.concatenate(
            [
                self.adjoint_residual(primal, dual),
                self.primal_residual(primal),
                self.complementarity_residual(primal, dual),
            ]
        )

    # ----- KKT assembly ---------------------------------------------------

    def _build_stamps(self) -> None:
        n, nx = self.n, self.nx
        off_l, off_li, off_mu = nx, nx + n, nx + 2 * n
        row_c, row_ci, row_mu = nx, nx + n, nx + 2 * n
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []

        def stamp(r: np.ndarray, c: np.ndarray, v: np.ndarray) -> None:
            rows.append(np.asarray(r, dtype=np.int64))
            cols.append(np.asarray(c, dtype=np.int64))
            vals.append(np.asarray(v, dtype=np.float64))

        # Network blocks: adjoint (transposed) in stationarity rows, primal in
        # KCL rows. Shared sparsity makes all four the same pattern.
        ygt = self.y_gt.tocoo()
        ybt = self.y_bt.tocoo()
        stamp(ygt.row, off_l + ygt.col, ygt.data)
        stamp(ybt.row, off_li + ybt.col, ybt.data)
        stamp(n + ybt.row, off_l + ybt.col, -ybt.data)
        stamp(n + ygt.row, off_li + ygt.col, ygt.data)
        yg = self.pair.y_g.tocoo()
        yb = self.pair.y_b.tocoo()
        stamp(row_c + yg.row, yg.col, yg.data)
        stamp(row_c + yb.row, n + yb.col, -yb.data)
        stamp(row_ci + yb.row, yb.col, yb.data)
        stamp(row_ci + yg.row, n + yg.col, yg.data)

        # PMU constants: mismatch conductance couplings and objective curvature.
        pb, gp = self.pmu_bus, self.pmu_g
        if pb.size:
            stamp(pb, off_l + pb, gp)
            stamp(n + pb, off_li + pb, gp)
            stamp(pb, pb, 2.0 * gp**2)
            stamp(n + pb, n + pb, 2.0 * gp**2)
            stamp(row_c + pb, pb, gp)
            stamp(row_ci + pb, n + pb, gp)

        r_cnt, p_cnt = self.n_rtu, self.n_pmu
        sx = self.s_x

        def free_slot(kind_block_start: int, k: int) -> int:
            return int(sx[kind_block_start + k])

        for p in range(p_cnt):
            k, g1 = int(pb[p]), float(gp[p])
            vpre = free_slot(2 * r_cnt, p)
            vpim = free_slot(2 * r_cnt + p_cnt, p)
            ipre = free_slot(2 * r_cnt + 2 * p_cnt, p)
            ipim = free_slot(2 * r_cnt + 3 * p_cnt, p)
            one = np.ones(1)
            if vpre >= 0:
                stamp([k], [vpre], [-2.0 * g1 * g1])
                stamp([vpre], [vpre], [2.0 * g1 * g1])
                stamp([vpre], [k], [-2.0 * g1 * g1])
                stamp([vpre], [off_l + k], [-g1])
                stamp([row_c + k], [vpre], [-g1])
            if vpim >= 0:
                stamp([n + k], [vpim], [-2.0 * g1 * g1])
                stamp([vpim], [vpim], [2.0 * g1 * g1])
                stamp([vpim], [n + k], [-2.0 * g1 * g1])
                stamp([vpim], [off_li + k], [-g1])
                stamp([row_ci + k], [vpim], [-g1])
            if ipre >= 0:
                stamp([ipre], [off_l + k], -one)
                stamp([row_c + k], [ipre], -one)
            if ipim >= 0:
                stamp([ipim], [off_li + k], -one)
                stamp([row_ci + k], [ipim], -one)

        # Pinned RTU admittances become constant conductance stamps; free ones
        # are variable entries rewritten each assembly.
        rb = self.rtu_bus
        pin_g = np.flatnonzero(self.s_pinned[:r_cnt])
        pin_b = np.flatnonzero(self.s_pinned[r_cnt : 2 * r_cnt])
        gv = self.s_meas[:r_cnt]
        bv = self.s_meas[r_cnt : 2 * r_cnt]
        if pin_g.size:
            kk, val = rb[pin_g], gv[pin_g]
            stamp(kk, off_l + kk, val)
            stamp(n + kk, off_li + kk, val)
            stamp(row_c + kk, kk, val)
            stamp(row_ci + kk, n + kk, val)
        if pin_b.size:
            kk, val = rb[pin_b], bv[pin_b]
            stamp(kk, off_li + kk, -val)
            stamp(n + kk, off_l + kk, val)
            stamp(row_c + kk, n + kk, val)
            stamp(row_ci + kk, kk, -val)

        # Objective curvature on free RTU admittances, and dual-pair columns
        # (J_ib transpose) in the stationarity rows.
        free_rtu_slots = sx[: 2 * r_cnt][sx[: 2 * r_cnt] >= 0]
        if free_rtu_slots.size:
            stamp(free_rtu_slots, free_rtu_slots, np.full(free_rtu_slots.size, 2.0))
        has_mu = np.flatnonzero(self.s_has_mu)
        if has_mu.size:
            slots = sx[has_mu]
            stamp(slots, off_mu + self.s_mu_lo[has_mu], -np.ones(has_mu.size))
            stamp(slots, off_mu + self.s_mu_hi[has_mu], np.ones(has_mu.size))

        self._const_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self._const_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        self._const_vals = np.concatenate(vals) if vals else np.zeros(0)

        # Variable stamp pattern: positions fixed, values rewritten per call.
        vrows: list[np.ndarray] = []
        vcols: list[np.ndarray] = []
        self._fg = np.flatnonzero(~self.s_pinned[:r_cnt])
        self._fb = np.flatnonzero(~self.s_pinned[r_cnt : 2 * r_cnt])
        fg, fb = self._fg, self._fb
        kg, kb = rb[fg], rb[fb]
        slot_g = sx[fg]
        slot_b = sx[r_cnt + fb]

        def vstamp(r: np.ndarray, c: np.ndarray) -> None:
            vrows.append(np.asarray(r, dtype=np.int64))
            vcols.append(np.asarray(c, dtype=np.int64))

        # Conductance couplings whose value is the current free g (4 blocks).
        vstamp(kg, off_l + kg)
        vstamp(n + kg, off_li + kg)
        vstamp(row_c + kg, kg)
        vstamp(row_ci + kg, n + kg)
        # Susceptance couplings for free b (4 blocks).
        vstamp(kb, off_li + kb)
        vstamp(n + kb, off_l + kb)
        vstamp(row_c + kb, n + kb)
        vstamp(row_ci + kb, kb)
        # Bilinear curvature and constraint Jacobian columns for free g.
        vstamp(kg, slot_g)            # lam_re
        vstamp(n + kg, slot_g)        # lam_im
        vstamp(slot_g, kg)            # lam_re
        vstamp(slot_g, n + kg)        # lam_im
        vstamp(slot_g, off_l + kg)    # v_re
        vstamp(slot_g, off_li + kg)   # v_im
        vstamp(row_c + kg, slot_g)    # v_re
        vstamp(row_ci + kg, slot_g)   # v_im
        # Same for free b.
        vstamp(kb, slot_b)            # -lam_im
        vstamp(n + kb, slot_b)        # lam_re
        vstamp(slot_b, kb)            # -lam_im
        vstamp(slot_b, n + kb)        # lam_re
        vstamp(slot_b, off_l + kb)    # v_im
        vstamp(slot_b, off_li + kb)   # -v_re
        vstamp(row_c + kb, slot_b)    # v_im
        vstamp(row_ci + kb, slot_b)   # -v_re
        # Simplified-mode sources, linearized through the substitution rule
        # vp = clip(v + lam / (2 g_p), box). Interior sources cancel the
        # constant PMU couplings exactly and leave a -1/2 KCL sensitivity to
        # lam; clipped sources are frozen at a face, so the constant stamps
        # stand. Values switch with the clip state at each assembly.
        sr, si = self._src_re, self._src_im
        if sr.size:
            kk = pb[sr]
            vstamp(kk, kk)                  # -2 g_p^2 | 0
            vstamp(kk, off_l + kk)          # -g_p     | 0
            vstamp(row_c + kk, kk)          # -g_p     | 0
            vstamp(row_c + kk, off_l + kk)  # -1/2     | 0
        if si.size:
            kk = pb[si]
            vstamp(n + kk, n + kk)
            vstamp(n + kk, off_li + kk)
            vstamp(row_ci + kk, n + kk)
            vstamp(row_ci + kk, off_li + kk)

        # Complementarity rows: mu * dib/dx in the x column, ib on the mu diag.
        if self.m:
            vstamp(row_mu + np.arange(self.m), sx[self.mu_scalar])
            vstamp(row_mu + np.arange(self.m), off_mu + np.arange(self.m))

        vr = np.concatenate(vrows) if vrows else np.zeros(0, dtype=np.int64)
        vc = np.concatenate(vcols) if vcols else np.zeros(0, dtype=np.int64)
        self._all_rows = np.concatenate([self._const_rows, vr])
        self._all_cols = np.concatenate([self._const_cols, vc])

    def _var_vals(self, primal: PrimalState, dual: DualState) -> np.ndarray:
        fg, fb = self._fg, self._fb
        kg, kb = self.rtu_bus[fg], self.rtu_bus[fb]
        g = primal.g_rtu[fg]
        b = primal.b_rtu[fb]
        lr_g, li_g = dual.lam_re[kg], dual.lam_im[kg]
        lr_b, li_b = dual.lam_re[kb], dual.lam_im[kb]
        vr_g, vi_g = primal.v_re[kg], primal.v_im[kg]
        vr_b, vi_b = primal.v_re[kb], primal.v_im[kb]
        parts = [
            g, g, g, g,
            -b, b, b, -b,
            lr_g, li_g, lr_g, li_g, vr_g, vi_g, vr_g, vi_g,
            -li_b, lr_b, -li_b, lr_b, vi_b, -vr_b, vi_b, -vr_b,
        ]
        o = 2 * self.n_rtu
        sr, si = self._src_re, self._src_im
        if sr.size:
            kk = self.pmu_bus[sr]
            g1 = self.pmu_g[sr]
            tgt = primal.v_re[kk] + dual.lam_re[kk] / (2.0 * g1)
            w = ((tgt > self.s_lo[o + sr]) & (tgt < self.s_hi[o + sr])).astype(float)
            parts += [-2.0 * g1 * g1 * w, -g1 * w, -g1 * w, -0.5 * w]
        if si.size:
            kk = self.pmu_bus[si]
            g1 = self.pmu_g[si]
            tgt = primal.v_im[kk] + dual.lam_im[kk] / (2.0 * g1)
            p_cnt = self.n_pmu
            w = (
                (tgt > self.s_lo[o + p_cnt + si]) & (tgt < self.s_hi[o + p_cnt + si])
            ).astype(float)
            parts += [-2.0 * g1 * g1 * w, -g1 * w, -g1 * w, -0.5 * w]
        if self.m:
            ib = self.bound_residual(primal)
            parts.append(self.mu_sign * dual.mu)
            parts.append(ib)
        return np.concatenate(parts) if parts else np.zeros(0)

    def assemble_kkt(self, primal: PrimalState, dual: DualState) -> KKTSystem:
        """Assemble the Newton system at the current iterate.

        The sparsity pattern is identical across calls (constant stamp
        positions plus a fixed variable-entry pattern); only variable numeric
        values change between iterations.
        """
        vals = np.concatenate([self._const_vals, self._var_vals(primal, dual)])
        mat = sp.coo_matrix(
            (vals, (self._all_rows, self._all_cols)), shape=(self.size, self.size)
        ).tocsc()
        return KKTSystem(
            matrix=mat,
            residual=self.full_residual(primal, dual),
            nx=self.nx,
            n=self.n,
            m=self.m,
        )


def build_problem(
    net: CaseNetwork, mset: MeasurementSet, pmu_mode: str = "simplified"
) -> Problem:
    """Convenience constructor: network -> admittance pair -> Problem."""
    return Problem(build_bus_admittance(net), mset, pmu_mode=pmu_mode)


# Module-level functional surface over Problem methods.

def objective(problem: Problem, primal: PrimalState) -> float:
    """Measurement mismatch objective at a primal point."""
    return problem.objective(primal)


def primal_residual(problem: Problem, primal: PrimalState) -> np.ndarray:
    """Stacked KCL residuals [real; imag] at a primal point."""
    return problem.primal_residual(primal)


def adjoint_residual(problem: Problem, primal: PrimalState, dual: DualState) -> np.ndarray:
    """Stationarity residuals (gradient of the Lagrangian) aligned with X."""
    return problem.adjoint_residual(primal, dual)


def bound_residual(problem: Problem, primal: PrimalState) -> np.ndarray:
    """Inequality bodies (<= 0 when feasible), two rows per bounded scalar."""
    return problem.bound_residual(primal)


def complementarity_residual(
    problem: Problem, primal: PrimalState, dual: DualState
) -> np.ndarray:
    """Smoothed complementarity residuals mu * ib + epsilon."""
    return problem.complementarity_residual(primal, dual)


def assemble_kkt(problem: Problem, primal: PrimalState, dual: DualState) -> KKTSystem:
    """Assemble the structured Newton system at the current iterate."""
    return problem.assemble_kkt(primal, dual)


def rtu_sensitivity(v_re: float, v_im: float, g: float, b: float) -> np.ndarray:
    """Jacobian of the RTU element current (I_re, I_im) w.r.t. (v_re, v_im, g, b).

    The element satisfies I_re = g v_re + b v_im, I_im = g v_im - b v_re, so

        [[g,  b,  v_re, v_im],
         [-b, g,  v_im, -v_re]]
    """
    return np.array(
        [[g, b, v_re, v_im], [-b, g, v_im, -v_re]], dtype=np.float64
    )


def rtu_adjoint_currents(
    g: np.ndarray | float,
    b: np.ndarray | float,
    lam_re: np.ndarray | float,
    lam_im: np.ndarray | float,
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint-circuit currents injected by an RTU at multiplier (lam_re, lam_im).

    The primal element admittance g - jb turns into g + jb in the adjoint
    (transposition conjugates the rotation), giving currents
    (g lam_re - b lam_im, b lam_re + g lam_im).
    """
    g = np.asarray(g, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lam_re = np.asarray(lam_re, dtype=np.float64)
    lam_im = np.asarray(lam_im, dtype=np.float64)
    return g * lam_re - b * lam_im, b * lam_re + g * lam_im


def newton_step(system: KKTSystem) -> np.ndarray:
    """Solve K delta = -residual with a sparse LU factorization.

    Raises SingularKKTError when the factorization fails or produces
    non-finite values; the caller maps that to an unobservable verdict.
    """
    try:
        lu = spla.splu(system.matrix)
    except RuntimeError as exc:
        raise SingularKKTError(f"KKT factorization failed: {exc}") from exc
    delta = lu.solve(-system.residual)
    if not np.all(np.isfinite(delta)):
        raise SingularKKTError("KKT solve produced non-finite values")
    return delta
