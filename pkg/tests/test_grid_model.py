"""Bus admittance assembly checked against a dense textbook construction."""

import json
from hashlib import sha256

import numpy as np
import pytest

from ecpse.case_io import parse_matpower
from ecpse.grid_model import build_bus_admittance, injection_current

from conftest import FIXTURES
from oracles import dense_ybus


@pytest.mark.parametrize("case", ["case3.m", "case14.m", "grid118.m"])
def test_matches_dense_oracle(case):
    net = parse_matpower(FIXTURES / case)
    pair = build_bus_admittance(net)
    dense = dense_ybus(net)
    built = pair.complex_matrix().toarray()
    assert np.max(np.abs(built - dense)) <= 1e-12


def test_matches_frozen_entries():
    """Entries frozen from the dense oracle, keyed to the exact case bytes."""
    for name in ("ybus_case14.json", "ybus_grid118.json"):
        doc = json.loads((FIXTURES / name).read_text())
        case_path = FIXTURES / (doc["case"] + ".m")
        assert sha256(case_path.read_bytes()).hexdigest() == doc["case_sha256"], (
            f"{doc['case']} changed since {name} was frozen; regenerate fixtures")
        net = parse_matpower(case_path)
        built = build_bus_admittance(net).complex_matrix().toarray()
        seen = np.zeros_like(built, dtype=bool)
        for row, col, re, im in doc["entries"]:
            assert built[row, col] == pytest.approx(complex(re, im), abs=1e-12)
            seen[row, col] = True
        assert np.all(np.abs(built[~seen]) <= 1e-12)


def test_shared_sparsity_pattern(net14):
    pair = build_bus_admittance(net14)
    assert np.array_equal(pair.y_g.indices, pair.y_b.indices)
    assert np.array_equal(pair.y_g.indptr, pair.y_b.indptr)


def test_bus_ids_follow_case_order(net14):
    pair = build_bus_admittance(net14)
    assert pair.bus_ids.tolist() == [b.bus_i for b in net14.buses]
    assert pair.n == net14.n_bus


def test_injection_current_is_dense_multiply(net14):
    pair = build_bus_admittance(net14)
    dense = dense_ybus(net14)
    rng = np.random.default_rng(3)
    v = rng.normal(1.0, 0.05, net14.n_bus) + 1j * rng.normal(0.0, 0.05, net14.n_bus)
    i_re, i_im = injection_current(pair, v.real, v.imag)
    expected = dense @ v
    assert np.max(np.abs(i_re + 1j * i_im - expected)) <= 1e-12


def test_injection_current_rejects_bad_shape(net14):
    pair = build_bus_admittance(net14)
    with pytest.raises(ValueError):
        injection_current(pair, np.ones(3), np.ones(3))


def test_tap_branch_is_asymmetric(net14):
    # Branch 4-7 has tap 0.978, so Y[4,7] != Y[7,4] in general only through
    # the phase shift; with shift 0 the off-diagonals stay equal but the
    # diagonal picks up the 1/t^2 scaling. Check the from-side diagonal term.
    pair = build_bus_admittance(net14)
    dense = dense_ybus(net14)
    idx = net14.bus_index()
    assert pair.complex_matrix()[idx[4], idx[4]] == pytest.approx(
        dense[idx[4], idx[4]], abs=1e-12)
