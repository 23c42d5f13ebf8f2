"""Accuracy metrics and the repeated-trial benchmark driver."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .case_io import CaseNetwork
from .powerflow import TruthState, solve_powerflow
from .solver import SolverConfig, estimate
from .synth import NoiseProfile, Placement, synthesize_measurements

THREADS_ENV = "ECP_SE_THREADS"


def sigma_ss(est: np.ndarray, true: np.ndarray) -> float:
    """Sum of squared deviations between two stacked component vectors."""
    est = np.asarray(est, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {true.shape}")
    return float(np.sum((est - true) ** 2))


def sigma_max(est: np.ndarray, true: np.ndarray) -> float:
    """Largest absolute deviation between two stacked component vectors."""
    est = np.asarray(est, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {true.shape}")
    if est.size == 0:
        return 0.0
    return float(np.max(np.abs(est - true)))


def voltage_deviations(report: dict, truth: TruthState) -> np.ndarray:
    """Stacked rectangular voltage deviations of a report against a truth state."""
    est = np.concatenate(
        [np.array(report["state"]["v_re"]), np.array(report["state"]["v_im"])]
    )
    ref = np.concatenate([truth.v_re, truth.v_im])
    return est - ref


def _thread_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, os.cpu_count() or 1)


def benchmark(
    net: CaseNetwork,
    n_trials: int,
    n_pmu: int,
    profile: NoiseProfile | None = None,
    config: SolverConfig | None = None,
    seed: int = 0,
    threads: int | None = None,
    placement: Placement | None = None,
) -> dict:
    """Repeated synthesize-estimate trials against one operating point.

    The truth power flow and device placement are computed once; each trial
    draws its own noise from an independent stream keyed by (seed, trial), so
    results do not depend on execution order or thread count. The curvature
    check is skipped inside trials to keep per-solve runtimes comparable.
    Failures (any non-converged status) are counted, never raised. An explicit
    placement overrides the default degree-based one (n_pmu is then ignored).
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    profile = profile or NoiseProfile()
    base = config or SolverConfig()
    config = SolverConfig(**{**base.__dict__, "check_sosc": False})

    truth = solve_powerflow(net)
    if placement is None:
        placement = Placement.choose(net, truth, n_pmu=n_pmu, seed=seed)

    def run_trial(trial: int) -> dict:
        rng = np.random.default_rng(np.random.SeedSequence((seed, trial)))
        mset = synthesize_measurements(net, truth, placement, profile, seed=rng)
        report = estimate(net, mset, config, truth=truth)
        return {
            "trial": trial,
            "status": report["status"],
            "iterations": report["iterations"],
            "runtime_s": report["runtime_s"],
            "sigma_ss": report["sigma_ss"],
            "sigma_max": report["sigma_max"],
            "kkt_residual_inf": report["kkt_residual_inf"],
            "objective": report["objective"],
        }

    n_threads = _thread_count(threads)
    if n_threads == 1:
        trials = [run_trial(t) for t in range(n_trials)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            trials = list(pool.map(run_trial, range(n_trials)))
    trials.sort(key=lambda row: row["trial"])

    converged = [t for t in trials if t["status"] == "converged"]
    failures = n_trials - len(converged)

    def agg(key: str, fn) -> float | None:
        vals = [t[key] for t in converged if t[key] is not None]
        return float(fn(vals)) if vals else None

    return {
        "case_name": net.name,
        "n_bus": net.n_bus,
        "n_trials": n_trials,
        "n_pmu": len(placement.pmu_buses),
        "n_rtu": len(placement.rtu_buses),
        "seed": seed,
        "threads": n_threads,
        "failures": failures,
        "mean_sigma_ss": agg("sigma_ss", np.mean),
        "mean_sigma_max": agg("sigma_max", np.mean),
        "max_sigma_max": agg("sigma_max", np.max),
        "mean_runtime_s": agg("runtime_s", np.mean),
        "max_runtime_s": agg("runtime_s", np.max),
        "mean_iterations": agg("iterations", np.mean),
        "trials": trials,
    }


TRIAL_CSV_FIELDS = (
    "trial",
    "status",
    "iterations",
    "runtime_s",
    "sigma_ss",
    "sigma_max",
    "kkt_residual_inf",
    "objective",
)


def write_trials_csv(bench: dict, path: str | Path) -> None:
    """Write per-trial benchmark rows as a delimited table."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRIAL_CSV_FIELDS)
        writer.writeheader()
        for row in bench["trials"]:
            writer.writerow({k: row[k] for k in TRIAL_CSV_FIELDS})
