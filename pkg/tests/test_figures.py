"""Figure rendering: files appear, are valid PNGs, and close their figures."""

import matplotlib.pyplot as plt
import pytest

from ecpse.figures import (
    bench_trials,
    convergence_history,
    render_bench_figures,
    render_estimate_figures,
    voltage_profile,
)
from ecpse.metrics import benchmark
from ecpse.solver import estimate
from ecpse.synth import Placement, synthesize_measurements

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture(scope="module")
def report14(net14, truth14):
    placement = Placement.choose(net14, truth14, n_pmu=3)
    mset = synthesize_measurements(net14, truth14, placement, seed=4)
    return estimate(net14, mset, truth=truth14)


@pytest.fixture(scope="module")
def bench14(net14):
    return benchmark(net14, n_trials=3, n_pmu=3, seed=5, threads=1)


def _assert_png(path):
    assert path.exists()
    assert path.read_bytes()[:8] == PNG_MAGIC


def test_voltage_profile(report14, tmp_path):
    out = tmp_path / "v.png"
    voltage_profile(report14, out)
    _assert_png(out)


def test_convergence_history(report14, tmp_path):
    out = tmp_path / "c.png"
    convergence_history(report14, out)
    _assert_png(out)


def test_bench_trials(bench14, tmp_path):
    out = tmp_path / "b.png"
    bench_trials(bench14, out)
    _assert_png(out)


def test_render_estimate_figures_names(report14, tmp_path):
    paths = render_estimate_figures(report14, tmp_path, "run1")
    assert [p.name for p in paths] == ["run1_voltage.png", "run1_convergence.png"]
    for p in paths:
        _assert_png(p)


def test_render_bench_figures_names(bench14, tmp_path):
    paths = render_bench_figures(bench14, tmp_path, "bench1")
    assert [p.name for p in paths] == ["bench1_trials.png"]
    _assert_png(paths[0])


def test_figures_closed_after_render(report14, bench14, tmp_path):
    before = len(plt.get_fignums())
    render_estimate_figures(report14, tmp_path, "x")
    render_bench_figures(bench14, tmp_path, "y")
    assert len(plt.get_fignums()) == before


def test_bench_figure_marks_failures(net14, tmp_path):
    from ecpse.solver import SolverConfig

    bench = benchmark(
        net14, n_trials=2, n_pmu=3, config=SolverConfig(max_iter=1),
        seed=5, threads=1)
    out = tmp_path / "fail.png"
    bench_trials(bench, out)
    _assert_png(out)
