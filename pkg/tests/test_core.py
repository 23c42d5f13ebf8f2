"""Optimality-system evaluation: objective, residuals, KKT assembly, solves.

Derivative-heavy checks run in full mode, where the assembled system is the
exact Jacobian of the residual stack. Simplified mode linearizes through the
solver-updated internal-voltage sources and is checked separately for the
properties it does keep (shared fixed points, smaller system).
"""

import numpy as np
import pytest

from ecpse.case_io import CaseFormatError, MeasurementSet
from ecpse.core import (
    DualState,
    SingularKKTError,
    adjoint_residual,
    assemble_kkt,
    bound_residual,
    build_problem,
    complementarity_residual,
    newton_step,
    objective,
    primal_residual,
    rtu_adjoint_currents,
    rtu_sensitivity,
)
from ecpse.synth import Placement, synthesize_measurements

from oracles import ReferenceNLP, fd_gradient


def _random_point(problem, rng, spread=0.05):
    """Interior primal/dual point with scalars pulled toward box centers."""
    primal = problem.gather_meas_state()
    primal.v_re = primal.v_re + rng.normal(0.0, spread, problem.n)
    primal.v_im = primal.v_im + rng.normal(0.0, spread, problem.n)
    width = problem.s_hi - problem.s_lo
    center = 0.5 * (problem.s_lo + problem.s_hi)
    jitter = rng.uniform(-0.3, 0.3, problem.n_scalar) * width
    primal.scalars = np.where(problem.s_pinned, problem.s_meas, center + jitter)
    dual = DualState(
        lam_re=rng.normal(0.0, 0.1, problem.n),
        lam_im=rng.normal(0.0, 0.1, problem.n),
        mu=rng.uniform(0.1, 1.0, problem.m),
        epsilon=1e-3,
    )
    return primal, dual


def _apply_delta(problem, primal, dual, dx, dlam, dmu, t=1.0):
    p = primal.copy()
    d = dual.copy()
    n = problem.n
    p.v_re = p.v_re + t * dx[:n]
    p.v_im = p.v_im + t * dx[n : 2 * n]
    p.scalars[problem.free_scalars] += t * dx[2 * n :]
    d.lam_re = d.lam_re + t * dlam[:n]
    d.lam_im = d.lam_im + t * dlam[n:]
    d.mu = d.mu + t * dmu
    return p, d


@pytest.fixture(scope="module")
def mset14(net14, truth14):
    placement = Placement.choose(net14, truth14, n_pmu=3)
    return synthesize_measurements(net14, truth14, placement, seed=4)


class TestDimensions:
    def test_full_mode_counts(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        n, r, p = problem.n, problem.n_rtu, problem.n_pmu
        n_free = int(np.sum(~problem.s_pinned))
        assert problem.nx == 2 * n + n_free
        assert problem.m == 2 * n_free
        assert problem.size == problem.nx + 2 * n + problem.m

    def test_simplified_drops_source_pairs(self, net14, mset14):
        full = build_problem(net14, mset14, pmu_mode="full")
        simp = build_problem(net14, mset14, pmu_mode="simplified")
        n_src = int(np.sum(simp.s_source))
        assert n_src == 2 * simp.n_pmu  # all four-σ PMU voltage comps free here
        assert simp.nx == full.nx - n_src
        assert simp.m == full.m - 2 * n_src

    def test_unknown_mode_rejected(self, net14, mset14):
        with pytest.raises(ValueError, match="pmu_mode"):
            build_problem(net14, mset14, pmu_mode="hybrid")

    def test_unknown_bus_rejected(self, net14, mset14, truth14):
        placement = Placement(pmu_buses=[], rtu_buses=[2])
        bad = synthesize_measurements(
            net14, truth14, Placement.choose(net14, truth14, n_pmu=2), seed=0)
        moved = MeasurementSet(
            pmu=[], rtu=[type(bad.rtu[0])(bus=999, g=bad.rtu[0].g, b=bad.rtu[0].b)])
        with pytest.raises(CaseFormatError, match="unknown bus"):
            build_problem(net14, moved)

    def test_empty_measurement_set_rejected(self, net14):
        with pytest.raises(SingularKKTError, match="no devices"):
            build_problem(net14, MeasurementSet(pmu=[], rtu=[]))


class TestObjective:
    def test_matches_naive_loop(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        rng = np.random.default_rng(1)
        primal, _ = _random_point(problem, rng)
        naive = 0.0
        idx = {int(b): k for k, b in enumerate(problem.pair.bus_ids)}
        for j, m in enumerate(mset14.pmu):
            k = idx[m.bus]
            naive += m.g_pmu**2 * (primal.vp_re[j] - primal.v_re[k]) ** 2
            naive += m.g_pmu**2 * (primal.vp_im[j] - primal.v_im[k]) ** 2
        for j, m in enumerate(mset14.rtu):
            naive += (primal.g_rtu[j] - m.g.value) ** 2
            naive += (primal.b_rtu[j] - m.b.value) ** 2
        assert objective(problem, primal) == pytest.approx(naive, rel=1e-14)

    def test_matches_dense_reference(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        ref = ReferenceNLP(net14, mset14)
        rng = np.random.default_rng(2)
        for _ in range(5):
            primal, _ = _random_point(problem, rng)
            x = np.concatenate([primal.v_re, primal.v_im, primal.scalars])
            assert objective(problem, primal) == pytest.approx(
                ref.objective(x), rel=1e-13, abs=1e-15)

    def test_zero_at_measured_point(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        primal = problem.gather_meas_state()
        # Internal voltages equal the measured phasors only once v matches;
        # force the bus voltages onto the PMU readings first.
        primal.v_re[problem.pmu_bus] = primal.vp_re
        primal.v_im[problem.pmu_bus] = primal.vp_im
        assert objective(problem, primal) == 0.0


class TestResiduals:
    def test_kcl_matches_dense_reference(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        ref = ReferenceNLP(net14, mset14)
        rng = np.random.default_rng(3)
        for _ in range(5):
            primal, _ = _random_point(problem, rng)
            x = np.concatenate([primal.v_re, primal.v_im, primal.scalars])
            assert np.max(np.abs(primal_residual(problem, primal) - ref.kcl(x))) <= 1e-12

    def test_adjoint_is_lagrangian_gradient(self, net14, mset14):
        """FD check of stationarity rows at mu = 0 (pure f + lam . c)."""
        problem = build_problem(net14, mset14, pmu_mode="full")
        ref = ReferenceNLP(net14, mset14)
        rng = np.random.default_rng(4)
        primal, dual = _random_point(problem, rng)
        dual.mu = np.zeros(problem.m)
        lam = np.concatenate([dual.lam_re, dual.lam_im])

        def lagrangian(x):
            return ref.objective(x) + lam @ ref.kcl(x)

        x0 = np.concatenate([primal.v_re, primal.v_im, primal.scalars])
        grad_fd = fd_gradient(lagrangian, x0)
        got = adjoint_residual(problem, primal, dual)
        # Align: full vector is [v rows; free scalar rows].
        want = np.concatenate(
            [grad_fd[: 2 * problem.n], grad_fd[2 * problem.n :][problem.free_scalars]])
        scale = max(1.0, float(np.max(np.abs(want))))
        assert np.max(np.abs(got - want)) / scale <= 1e-6

    def test_bound_residual_examples(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        primal = problem.gather_meas_state()
        width = problem.s_hi - problem.s_lo

        # At box centers both rows sit at minus half the width.
        primal.scalars = 0.5 * (problem.s_lo + problem.s_hi)
        ib = bound_residual(problem, primal)
        assert ib == pytest.approx(-0.5 * width[problem.mu_scalar], abs=1e-15)

        # At the lower face the lo row is exactly zero, the hi row is -width.
        primal.scalars = problem.s_lo.copy()
        ib = bound_residual(problem, primal)
        lo_rows = problem.mu_sign < 0
        assert np.max(np.abs(ib[lo_rows])) == 0.0
        assert ib[~lo_rows] == pytest.approx(-width[problem.mu_scalar[~lo_rows]])

        # Any interior point is strictly feasible: every body negative.
        rng = np.random.default_rng(5)
        primal.scalars = problem.s_lo + width * rng.uniform(0.2, 0.8, problem.n_scalar)
        assert np.all(bound_residual(problem, primal) < 0.0)

    def test_complementarity_formula(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        rng = np.random.default_rng(6)
        primal, dual = _random_point(problem, rng)
        ib = bound_residual(problem, primal)
        got = complementarity_residual(problem, primal, dual)
        assert got == pytest.approx(dual.mu * ib + dual.epsilon, abs=1e-15)
        dual.mu = np.zeros(problem.m)
        assert complementarity_residual(problem, primal, dual) == pytest.approx(
            np.full(problem.m, dual.epsilon))


class TestKKT:
    def test_transpose_identity(self, net14, mset14):
        """KCL Jacobian block equals the transposed adjoint cross block."""
        problem = build_problem(net14, mset14, pmu_mode="full")
        rng = np.random.default_rng(7)
        for _ in range(3):
            primal, dual = _random_point(problem, rng)
            K = assemble_kkt(problem, primal, dual).matrix.toarray()
            nx, n = problem.nx, problem.n
            primal_block = K[nx : nx + 2 * n, :nx]
            adjoint_block = K[:nx, nx : nx + 2 * n]
            assert np.max(np.abs(primal_block - adjoint_block.T)) <= 1e-13

    def test_directional_derivative(self, net14, mset14):
        """Full-mode KKT matrix is the Jacobian of the residual stack."""
        problem = build_problem(net14, mset14, pmu_mode="full")
        rng = np.random.default_rng(8)
        primal, dual = _random_point(problem, rng)
        system = assemble_kkt(problem, primal, dual)

        d = rng.normal(0.0, 1.0, problem.size)
        d /= np.linalg.norm(d)
        dx, dlam, dmu = system.split(d)
        h = 1e-6
        pp, dp = _apply_delta(problem, primal, dual, dx, dlam, dmu, t=h)
        pm, dm = _apply_delta(problem, primal, dual, dx, dlam, dmu, t=-h)
        fd = (problem.full_residual(pp, dp) - problem.full_residual(pm, dm)) / (2 * h)
        jd = system.matrix @ d
        scale = max(1.0, float(np.max(np.abs(jd))))
        assert np.max(np.abs(fd - jd)) / scale <= 1e-6

    def test_newton_step_solves_system(self, net14, mset14):
        for mode in ("full", "simplified"):
            problem = build_problem(net14, mset14, pmu_mode=mode)
            rng = np.random.default_rng(9)
            primal, dual = _random_point(problem, rng)
            system = assemble_kkt(problem, primal, dual)
            delta = newton_step(system)
            back = system.matrix @ delta + system.residual
            scale = max(1.0, float(np.max(np.abs(system.residual))))
            assert np.max(np.abs(back)) / scale <= 1e-10

    def test_residual_matches_full_residual(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        rng = np.random.default_rng(10)
        primal, dual = _random_point(problem, rng)
        system = assemble_kkt(problem, primal, dual)
        assert np.array_equal(system.residual, problem.full_residual(primal, dual))

    def test_split_partition(self, net14, mset14):
        problem = build_problem(net14, mset14)
        rng = np.random.default_rng(11)
        primal, dual = _random_point(problem, rng)
        system = assemble_kkt(problem, primal, dual)
        vec = np.arange(problem.size, dtype=float)
        dx, dlam, dmu = system.split(vec)
        assert np.array_equal(np.concatenate([dx, dlam, dmu]), vec)
        assert dx.size == problem.nx and dlam.size == 2 * problem.n
        assert dmu.size == problem.m


class TestPMUSources:
    def test_interior_substitution(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="simplified")
        primal = problem.gather_meas_state()
        dual = DualState(
            lam_re=np.zeros(problem.n), lam_im=np.zeros(problem.n),
            mu=np.ones(problem.m), epsilon=1e-2,
        )
        # Zero multipliers: source lands on the bus voltage when inside the box.
        pb = problem.pmu_bus
        primal.v_re[pb] = primal.vp_re
        primal.v_im[pb] = primal.vp_im
        problem.update_pmu_sources(primal, dual)
        assert primal.vp_re == pytest.approx(primal.v_re[pb], abs=1e-15)
        assert primal.vp_im == pytest.approx(primal.v_im[pb], abs=1e-15)

    def test_saturation_at_face(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="simplified")
        primal = problem.gather_meas_state()
        dual = DualState(
            lam_re=np.full(problem.n, 1e3), lam_im=np.full(problem.n, -1e3),
            mu=np.ones(problem.m), epsilon=1e-2,
        )
        problem.update_pmu_sources(primal, dual)
        o = 2 * problem.n_rtu
        p = problem.n_pmu
        assert primal.vp_re == pytest.approx(problem.s_hi[o : o + p])
        assert primal.vp_im == pytest.approx(problem.s_lo[o + p : o + 2 * p])

    def test_full_mode_noop(self, net14, mset14):
        problem = build_problem(net14, mset14, pmu_mode="full")
        primal = problem.gather_meas_state()
        dual = DualState(
            lam_re=np.full(problem.n, 1e3), lam_im=np.full(problem.n, 1e3),
            mu=np.ones(problem.m), epsilon=1e-2,
        )
        before = primal.scalars.copy()
        problem.update_pmu_sources(primal, dual)
        assert np.array_equal(primal.scalars, before)


class TestElementFormulas:
    def test_sensitivity_unit_conductance(self):
        J = rtu_sensitivity(1.0, 0.0, 1.0, 0.0)
        assert np.array_equal(J, [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])

    def test_sensitivity_zero_everything(self):
        assert np.array_equal(rtu_sensitivity(0.0, 0.0, 0.0, 0.0), np.zeros((2, 4)))

    def test_sensitivity_matches_fd(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            v_re, v_im, g, b = rng.normal(0.0, 1.0, 4)

            def i_re(z):
                return z[2] * z[0] + z[3] * z[1]

            def i_im(z):
                return z[2] * z[1] - z[3] * z[0]

            z0 = np.array([v_re, v_im, g, b])
            J = rtu_sensitivity(v_re, v_im, g, b)
            assert np.max(np.abs(J[0] - fd_gradient(i_re, z0))) <= 1e-7
            assert np.max(np.abs(J[1] - fd_gradient(i_im, z0))) <= 1e-7

    def test_adjoint_currents_identity_passthrough(self):
        ar, ai = rtu_adjoint_currents(1.0, 0.0, 0.3, -0.7)
        assert (ar, ai) == (0.3, -0.7)

    def test_adjoint_currents_pure_susceptance(self):
        ar, ai = rtu_adjoint_currents(0.0, 1.0, 0.3, -0.7)
        assert (ar, ai) == (0.7, 0.3)

    def test_adjoint_currents_are_transposed_voltage_rows(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            v_re, v_im, g, b = rng.normal(0.0, 1.0, 4)
            lam = rng.normal(0.0, 1.0, 2)
            jt_lam = rtu_sensitivity(v_re, v_im, g, b).T @ lam
            ar, ai = rtu_adjoint_currents(g, b, lam[0], lam[1])
            assert ar == pytest.approx(jt_lam[0], abs=1e-15)
            assert ai == pytest.approx(jt_lam[1], abs=1e-15)
