"""Command-line pipeline: synthesize, estimate, verify, benchmark.

Exit codes: 0 success, 1 usage error, 2 parse or validation error, 3 solver
non-convergence or failed verification, 4 unobservable or numerically
singular system. Human-readable progress goes to the error stream; files
carry all machine-readable output. Every subcommand is reproducible from its
flags alone; the only environment input is ECP_SE_THREADS, which caps
benchmark parallelism.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .case_io import (
    CaseFormatError,
    CaseNetwork,
    MeasurementSet,
    parse_matpower,
    parse_measurements,
    read_report,
    write_measurements,
    write_report,
    write_state_csv,
)
from .core import SingularKKTError
from .figures import render_bench_figures, render_estimate_figures
from .metrics import benchmark, write_trials_csv
from .powerflow import PowerFlowError, solve_powerflow
from .solver import SolverConfig, estimate, verify
from .synth import (
    ZERO_INJECTION_TOL,
    NoiseProfile,
    ObservabilityError,
    Placement,
    SynthesisError,
    synthesize_measurements,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_SINGULAR = 4

_PROFILE_FIELDS = (
    "rtu_v_sigma",
    "rtu_i_sigma",
    "rtu_pf_sigma",
    "pmu_v_sigma",
    "pmu_i_sigma",
    "g_pmu",
    "bound_sigmas",
    "kappa_dist",
)


class UsageError(Exception):
    """Bad flags or flag values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the contract reserves 2 for
    # file problems, so route parser errors through UsageError instead.
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _bus_list(text: str) -> list[int]:
    try:
        buses = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated bus ids, got {text!r}")
    if not buses:
        raise argparse.ArgumentTypeError("bus list is empty")
    if len(set(buses)) != len(buses):
        raise argparse.ArgumentTypeError("bus list contains duplicates")
    return buses


def _fraction(text: str) -> float:
    val = float(text)
    if not 0.0 <= val <= 1.0:
        raise argparse.ArgumentTypeError(f"fraction must be in [0, 1], got {text}")
    return val


def build_parser() -> _Parser:
    parser = _Parser(prog="ecpse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def placement_flags(p) -> None:
        group = p.add_mutually_exclusive_group()
        group.add_argument("--pmu-count", type=int,
                           help="number of PMU buses (highest degree first)")
        group.add_argument("--pmu-frac", type=_fraction,
                           help="PMU count as a fraction of bus count")
        p.add_argument("--pmu-buses", type=_bus_list, metavar="1,5,9",
                       help="explicit PMU bus ids; overrides count/fraction")
        p.add_argument("--rtu-frac", type=_fraction, default=1.0,
                       help="cap on RTU-covered buses as a fraction of bus count "
                            "(default 1.0: every injecting non-PMU bus)")

    ps = sub.add_parser("synth", help="synthesize a measurement set from a case")
    ps.add_argument("--case", required=True, help="MATPOWER case file")
    placement_flags(ps)
    ps.add_argument("--seed", type=int, required=True, help="noise stream seed")
    ps.add_argument("--profile", default="table3",
                    help="noise profile: table3 (default) or custom:key=value,... "
                         f"with keys {', '.join(_PROFILE_FIELDS)}")
    ps.add_argument("--gpmu", type=float, default=10.0,
                    help="PMU coupling conductance in p.u. (default 10.0)")
    ps.add_argument("--out", required=True, help="measurement JSON output path")
    ps.set_defaults(func=cmd_synth)

    pe = sub.add_parser("estimate", help="estimate the state from a case and measurements")
    pe.add_argument("--case", required=True, help="MATPOWER case file")
    pe.add_argument("--meas", required=True, help="measurement JSON file")
    pe.add_argument("--tol", type=float, default=1e-6, help="optimality tolerance (default 1e-6)")
    pe.add_argument("--max-iter", type=int, default=200, help="iteration cap (default 200)")
    pe.add_argument("--init", choices=("flat", "seeded"), default="flat",
                    help="start point: flat (1+j0) or seeded from measurements")
    pe.add_argument("--report", required=True, help="report JSON output path")
    pe.set_defaults(func=cmd_estimate)

    pv = sub.add_parser("verify", help="recompute optimality residuals for a saved report")
    pv.add_argument("--case", required=True, help="MATPOWER case file")
    pv.add_argument("--meas", required=True, help="measurement JSON file")
    pv.add_argument("--state", required=True, help="report JSON file to check")
    pv.set_defaults(func=cmd_verify)

    pb = sub.add_parser("bench", help="repeated synthesize-estimate trials with aggregates")
    pb.add_argument("--case", required=True, help="MATPOWER case file")
    pb.add_argument("--trials", type=int, required=True, help="number of noise trials")
    pb.add_argument("--seed", type=int, required=True, help="base seed for trial streams")
    placement_flags(pb)
    pb.add_argument("--report", required=True, help="benchmark JSON output path")
    pb.set_defaults(func=cmd_bench)

    return parser


def _load_case(path: str) -> CaseNetwork:
    return parse_matpower(Path(path))


def _load_meas(path: str) -> MeasurementSet:
    return parse_measurements(Path(path))


def _choose_placement(net: CaseNetwork, truth, args) -> Placement:
    """Resolve the placement flags shared by synth and bench."""
    if args.pmu_buses is not None:
        n_pmu = len(args.pmu_buses)
    elif args.pmu_count is not None:
        n_pmu = args.pmu_count
    elif args.pmu_frac is not None:
        n_pmu = int(args.pmu_frac * net.n_bus)
    else:
        raise UsageError("one of --pmu-count, --pmu-frac, --pmu-buses is required")

    placement = Placement.choose(net, truth, n_pmu=n_pmu, seed=args.seed)
    if args.pmu_buses is not None:
        # Keep the RTU rule (every injecting non-PMU bus), swap in the
        # requested PMU set, and re-derive coverage against it.
        inj = np.hypot(truth.i_re, truth.i_im)
        idx = net.bus_index()
        unknown = [b for b in args.pmu_buses if b not in idx]
        if unknown:
            raise SynthesisError(f"pmu placement references unknown buses {unknown}")
        pmu = sorted(args.pmu_buses)
        rtu = [b.bus_i for b in net.buses
               if b.bus_i not in pmu and inj[idx[b.bus_i]] > ZERO_INJECTION_TOL]
        placement = Placement(pmu_buses=pmu, rtu_buses=rtu)

    cap = int(args.rtu_frac * net.n_bus)
    if len(placement.rtu_buses) > cap:
        # Deterministic truncation by ascending bus id; if a dropped bus
        # injects current, synthesis rejects the placement as unobservable.
        placement = Placement(
            pmu_buses=placement.pmu_buses,
            rtu_buses=sorted(placement.rtu_buses)[:cap],
        )
    return placement


def _parse_profile(text: str, gpmu: float) -> NoiseProfile:
    profile = replace(NoiseProfile(), g_pmu=gpmu)
    if text == "table3":
        return profile
    if not text.startswith("custom:"):
        raise UsageError(f"unknown profile {text!r}; expected table3 or custom:key=value,...")
    for item in text[len("custom:"):].split(","):
        if not item.strip():
            continue
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or key not in _PROFILE_FIELDS:
            raise UsageError(f"bad profile entry {item!r}; keys: {', '.join(_PROFILE_FIELDS)}")
        try:
            value: object = val.strip() if key == "kappa_dist" else float(val)
        except ValueError:
            raise UsageError(f"profile entry {item!r} is not a number")
        profile = replace(profile, **{key: value})
    return profile


def cmd_synth(args) -> int:
    net = _load_case(args.case)
    profile = _parse_profile(args.profile, args.gpmu)
    truth = solve_powerflow(net)
    placement = _choose_placement(net, truth, args)
    mset = synthesize_measurements(net, truth, placement, profile, seed=args.seed)
    write_measurements(mset, args.out)
    _note(
        f"synth: {net.name}: {len(placement.pmu_buses)} PMU, "
        f"{len(placement.rtu_buses)} RTU of {net.n_bus} buses -> {args.out}"
    )
    return EXIT_OK


def cmd_estimate(args) -> int:
    net = _load_case(args.case)
    mset = _load_meas(args.meas)
    config = SolverConfig(
        tol_kkt=args.tol,
        max_iter=args.max_iter,
        init_mode="measurement-seeded" if args.init == "seeded" else "flat",
    )
    report = estimate(net, mset, config)
    out = Path(args.report)
    write_report(report, out)
    csv_path = out.with_suffix(".csv")
    write_state_csv(report, csv_path)
    figs = render_estimate_figures(report, out.parent, out.stem)
    made = ", ".join(str(p) for p in [out, csv_path, *figs])
    _note(
        f"estimate: {net.name}: {report['status']} in {report['iterations']} iterations, "
        f"residual {report['kkt_residual_inf']:.3e} -> {made}"
    )
    if report["status"] == "converged":
        return EXIT_OK
    return EXIT_SINGULAR if report["status"] == "singular" else EXIT_SOLVER


def cmd_verify(args) -> int:
    net = _load_case(args.case)
    mset = _load_meas(args.meas)
    report = read_report(args.state)
    if "state" not in report:
        raise CaseFormatError(f"{args.state} is not an estimate report")
    cfg = report.get("config", {})
    res = verify(
        net,
        mset,
        report,
        tol_kkt=cfg.get("tol_kkt", 1e-6),
        tol_eps=cfg.get("tol_eps", 1e-8),
    )

    from .core import build_problem
    from .solver import state_from_report
    from .sosc import check_sosc

    problem = build_problem(net, mset, pmu_mode=cfg.get("pmu_mode", "simplified"))
    primal, dual = state_from_report(problem, report)
    sosc = check_sosc(problem, primal, dual)

    ok = res["ok"] and sosc.verdict != "violated"
    _note(
        f"verify: residual {res['kkt_residual_inf']:.3e} (tol {res['tol_kkt']:.1e}), "
        f"epsilon {res['epsilon']:.3e} (tol {res['tol_eps']:.1e}), "
        f"curvature {sosc.verdict}: {'ok' if ok else 'FAILED'}"
    )
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_bench(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    net = _load_case(args.case)
    if args.pmu_buses is None and args.pmu_count is None and args.pmu_frac is None:
        args.pmu_frac = 0.1
    truth = solve_powerflow(net)
    placement = _choose_placement(net, truth, args)
    _note(
        f"bench: {net.name}: {args.trials} trials, {len(placement.pmu_buses)} PMU / "
        f"{len(placement.rtu_buses)} RTU of {net.n_bus} buses"
    )
    bench = benchmark(
        net,
        n_trials=args.trials,
        n_pmu=len(placement.pmu_buses),
        seed=args.seed,
        placement=placement,
    )
    out = Path(args.report)
    write_report(bench, out)
    csv_path = out.parent / (out.stem + "_trials.csv")
    write_trials_csv(bench, csv_path)
    figs = render_bench_figures(bench, out.parent, out.stem)
    made = ", ".join(str(p) for p in [out, csv_path, *figs])
    _note(
        f"bench: {bench['failures']} failures, mean sigma_ss "
        f"{_fmt(bench['mean_sigma_ss'])}, mean sigma_max {_fmt(bench['mean_sigma_max'])}, "
        f"mean runtime {_fmt(bench['mean_runtime_s'])}s -> {made}"
    )
    return EXIT_OK if bench["failures"] == 0 else EXIT_SOLVER


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.3e}"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.error("a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        _note(str(exc))
        return EXIT_USAGE
    except CaseFormatError as exc:
        _note(f"error: {exc}")
        return EXIT_PARSE
    except ObservabilityError as exc:
        _note(f"error: {exc}")
        return EXIT_SINGULAR
    except SynthesisError as exc:
        _note(f"error: {exc}")
        return EXIT_PARSE
    except SingularKKTError as exc:
        _note(f"error: {exc}")
        return EXIT_SINGULAR
    except PowerFlowError as exc:
        _note(f"error: {exc}")
        return EXIT_SINGULAR if "singular" in str(exc).lower() else EXIT_SOLVER
    except OSError as exc:
        _note(f"error: {exc}")
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
