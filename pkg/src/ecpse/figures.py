"""Figure rendering for estimation and benchmark reports.

Every function here consumes the plain report dictionaries produced by the
solver and benchmark layers, never live solver objects, so figures can be
regenerated later from a saved report document alone. The non-interactive
backend is forced before pyplot is imported; rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 130


def voltage_profile(report: dict, path: str | Path) -> Path:
    """Render estimated voltage magnitude and angle per bus."""
    state = report["state"]
    bus = np.asarray(state["bus"], dtype=np.int64)
    v_re = np.asarray(state["v_re"], dtype=np.float64)
    v_im = np.asarray(state["v_im"], dtype=np.float64)
    vm = np.hypot(v_re, v_im)
    va = np.degrees(np.arctan2(v_im, v_re))

    fig, (ax_m, ax_a) = plt.subplots(2, 1, figsize=(8.0, 5.0), sharex=True)
    ax_m.plot(bus, vm, ".", markersize=5, color="tab:blue")
    ax_m.set_ylabel("|V| (p.u.)")
    ax_m.grid(alpha=0.3)
    ax_a.plot(bus, va, ".", markersize=5, color="tab:orange")
    ax_a.set_ylabel("angle (deg)")
    ax_a.set_xlabel("bus id")
    ax_a.grid(alpha=0.3)
    fig.suptitle(f"Estimated voltage profile: {report.get('case_name', '')}")
    return _save(fig, path)


def convergence_history(report: dict, path: str | Path) -> Path:
    """Render the optimality-residual history on a log scale."""
    hist = np.asarray(report.get("residual_history", []), dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    if hist.size:
        ax.semilogy(np.arange(hist.size), np.maximum(hist, 1e-300), "o-",
                    markersize=4, color="tab:blue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual (inf-norm)")
    ax.grid(alpha=0.3, which="both")
    status = report.get("status", "?")
    ax.set_title(f"Convergence ({status}, {report.get('iterations', 0)} iterations)")
    return _save(fig, path)


def bench_trials(bench: dict, path: str | Path) -> Path:
    """Render per-trial accuracy and runtime for a benchmark run."""
    rows = bench["trials"]
    idx = np.array([r["trial"] for r in rows], dtype=np.int64)
    ok = np.array([r["status"] == "converged" for r in rows], dtype=bool)
    sss = np.array([r["sigma_ss"] if r["sigma_ss"] is not None else np.nan for r in rows])
    smax = np.array([r["sigma_max"] if r["sigma_max"] is not None else np.nan for r in rows])
    rt = np.array([r["runtime_s"] if r["runtime_s"] is not None else np.nan for r in rows])

    fig, (ax_s, ax_t) = plt.subplots(2, 1, figsize=(8.0, 5.6), sharex=True)
    ax_s.semilogy(idx[ok], sss[ok], "o", markersize=4, color="tab:blue",
                  label="sigma_ss (p.u.^2)")
    ax_s.semilogy(idx[ok], smax[ok], "s", markersize=4, color="tab:orange",
                  label="sigma_max (p.u.)")
    if bench.get("mean_sigma_ss") is not None:
        ax_s.axhline(bench["mean_sigma_ss"], color="tab:blue", ls="--", lw=1)
    if bench.get("mean_sigma_max") is not None:
        ax_s.axhline(bench["mean_sigma_max"], color="tab:orange", ls="--", lw=1)
    ax_s.set_ylabel("deviation")
    ax_s.grid(alpha=0.3, which="both")
    ax_s.legend(loc="best", fontsize=8)

    ax_t.plot(idx[ok], rt[ok], ".-", markersize=5, color="tab:green")
    if np.any(~ok):
        for t in idx[~ok]:
            ax_t.axvline(t, color="tab:red", lw=1, alpha=0.6)
    ax_t.set_ylabel("runtime (s)")
    ax_t.set_xlabel("trial")
    ax_t.grid(alpha=0.3)

    fig.suptitle(
        f"{bench.get('case_name', '')}: {bench.get('n_trials', 0)} trials, "
        f"{bench.get('n_pmu', 0)} PMU / {bench.get('n_rtu', 0)} RTU, "
        f"{bench.get('failures', 0)} failures"
    )
    return _save(fig, path)


def render_estimate_figures(report: dict, out_dir: str | Path, stem: str) -> list[Path]:
    """Write the estimate-report figure set; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        voltage_profile(report, out / f"{stem}_voltage.png"),
        convergence_history(report, out / f"{stem}_convergence.png"),
    ]


def render_bench_figures(bench: dict, out_dir: str | Path, stem: str) -> list[Path]:
    """Write the benchmark figure set; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [bench_trials(bench, out / f"{stem}_trials.png")]


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path
