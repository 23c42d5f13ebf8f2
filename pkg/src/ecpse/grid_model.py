"""Bus admittance assembly split into real and imaginary parts.

The estimator works on rectangular voltage coordinates, so the complex bus
admittance matrix Y = G + jB is kept as two real sparse matrices sharing one
sparsity pattern (identical indices/indptr). The shared pattern is what lets
downstream KKT assembly reuse a single symbolic structure for both parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .case_io import CaseNetwork


@dataclass
class AdmittancePair:
    """Real and imaginary parts of the bus admittance matrix.

    y_g and y_b are CSR with identical sparsity (explicit zeros kept), so
    y_g[i, j] + 1j * y_b[i, j] is the complex bus admittance entry.
    """

    y_g: sp.csr_matrix
    y_b: sp.csr_matrix
    bus_ids: np.ndarray

    @property
    def n(self) -> int:
        return self.y_g.shape[0]

    def complex_matrix(self) -> sp.csr_matrix:
        return (self.y_g + 1j * self.y_b).tocsr()


def build_bus_admittance(net: CaseNetwork) -> AdmittancePair:
    """Assemble the split bus admittance matrices for a parsed network.

    Branch model: series admittance ys = 1/(r + jx), total line charging b
    split evenly between ends, off-nominal tap t with phase shift applied on
    the from side (Yff = (ys + jb/2)/t^2, Yft = -ys/conj(tc), Ytf = -ys/tc,
    Ytt = ys + jb/2, tc = t e^{j shift}). Bus shunts gs + j bs land on the
    diagonal.
    """
    idx = net.bus_index()
    n = net.n_bus
    nb = len(net.branches)

    rows = np.empty(4 * nb + n, dtype=np.int64)
    cols = np.empty_like(rows)
    vals = np.empty(4 * nb + n, dtype=np.complex128)

    for k, br in enumerate(net.branches):
        f, t = idx[br.f_bus], idx[br.t_bus]
        ys = 1.0 / complex(br.r, br.x)
        shunt = 0.5j * br.b
        tap_c = br.tap * np.exp(1j * br.shift)
        base = 4 * k
        rows[base : base + 4] = (f, f, t, t)
        cols[base : base + 4] = (f, t, f, t)
        vals[base] = (ys + shunt) / (br.tap * br.tap)
        vals[base + 1] = -ys / np.conj(tap_c)
        vals[base + 2] = -ys / tap_c
        vals[base + 3] = ys + shunt

    for k, bus in enumerate(net.buses):
        rows[4 * nb + k] = k
        cols[4 * nb + k] = k
        vals[4 * nb + k] = complex(bus.gs, bus.bs)

    ybus = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    ybus.sum_duplicates()
    ybus.sort_indices()

    # Split off one complex CSR so both parts share indices/indptr verbatim.
    y_g = sp.csr_matrix((ybus.data.real.copy(), ybus.indices, ybus.indptr), shape=(n, n))
    y_b = sp.csr_matrix((ybus.data.imag.copy(), ybus.indices, ybus.indptr), shape=(n, n))
    bus_ids = np.array([bus.bus_i for bus in net.buses], dtype=np.int64)
    return AdmittancePair(y_g=y_g, y_b=y_b, bus_ids=bus_ids)


def injection_current(
    pair: AdmittancePair, v_re: np.ndarray, v_im: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Rectangular bus injection currents I = Y V.

    Returns (i_re, i_im) with i_re = G v_re - B v_im and
    i_im = G v_im + B v_re.
    """
    v_re = np.asarray(v_re, dtype=np.float64)
    v_im = np.asarray(v_im, dtype=np.float64)
    if v_re.shape != (pair.n,) or v_im.shape != (pair.n,):
        raise ValueError(
            f"voltage vectors must have shape ({pair.n},), got {v_re.shape} and {v_im.shape}"
        )
    i_re = pair.y_g @ v_re - pair.y_b @ v_im
    i_im = pair.y_g @ v_im + pair.y_b @ v_re
    return i_re, i_im
