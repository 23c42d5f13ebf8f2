"""MATPOWER case parsing and measurement/report serialization.

Everything past the parse boundary is per-unit on the system MVA base with
angles in radians; raw files keep their native conventions (MW, MVAr, degrees).
Measurement sets and solver reports are JSON documents whose floats survive a
write/parse round trip bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

PQ, PV, SLACK = 1, 2, 3

# Bound boxes narrower than this count as exact (pinned) values.
POINT_BOX_WIDTH = 1e-12

REQUIRED_REPORT_KEYS = (
    "status",
    "iterations",
    "kkt_residual_inf",
    "epsilon",
    "sigma_ss",
    "sigma_max",
    "runtime_s",
    "sosc",
    "state",
)

# Benchmark aggregates reuse the report writer; a "trials" array marks them.
REQUIRED_BENCH_KEYS = (
    "case_name",
    "n_trials",
    "n_pmu",
    "failures",
    "mean_sigma_ss",
    "mean_sigma_max",
    "mean_runtime_s",
    "trials",
)


class CaseFormatError(ValueError):
    """A case or measurement file failed parsing or validation."""


@dataclass
class Bus:
    bus_i: int
    btype: int
    pd: float
    qd: float
    gs: float
    bs: float
    vm: float
    va: float
    base_kv: float
    vmax: float
    vmin: float


@dataclass
class Branch:
    f_bus: int
    t_bus: int
    r: float
    x: float
    b: float
    tap: float
    shift: float


@dataclass
class Gen:
    bus: int
    pg: float
    qg: float
    qmax: float
    qmin: float
    vg: float


@dataclass
class CaseNetwork:
    name: str
    base_mva: float
    buses: list[Bus]
    branches: list[Branch]
    gens: list[Gen]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    def bus_index(self) -> dict[int, int]:
        """Map external bus ids to dense 0-based positions."""
        return {bus.bus_i: k for k, bus in enumerate(self.buses)}

    def slack_position(self) -> int:
        for k, bus in enumerate(self.buses):
            if bus.btype == SLACK:
                return k
        raise CaseFormatError("network has no slack bus")


@dataclass
class Bounded:
    """A measured value with a closed interval certain to contain the truth."""

    value: float
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (self.lo <= self.hi):
            raise CaseFormatError(f"bound box has lo > hi: [{self.lo}, {self.hi}]")
        if not (self.lo <= self.value <= self.hi):
            raise CaseFormatError(
                f"bound box [{self.lo}, {self.hi}] excludes its value {self.value}"
            )

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def is_point(self) -> bool:
        return self.width <= POINT_BOX_WIDTH


@dataclass
class PMUMeasurement:
    """Synchrophasor device: rectangular voltage and injection-current boxes."""

    bus: int
    g_pmu: float
    v_re: Bounded
    v_im: Bounded
    i_re: Bounded
    i_im: Bounded

    def __post_init__(self) -> None:
        if not self.g_pmu > 0.0:
            raise CaseFormatError(f"pmu at bus {self.bus}: g_pmu must be > 0, got {self.g_pmu}")


@dataclass
class RTUMeasurement:
    """Remote terminal unit mapped to an equivalent shunt admittance box."""

    bus: int
    g: Bounded
    b: Bounded


@dataclass
class MeasurementSet:
    pmu: list[PMUMeasurement] = field(default_factory=list)
    rtu: list[RTUMeasurement] = field(default_factory=list)
    case_name: str | None = None
    base_mva: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        pmu_buses = [m.bus for m in self.pmu]
        rtu_buses = [m.bus for m in self.rtu]
        for label, buses in (("pmu", pmu_buses), ("rtu", rtu_buses)):
            dupes = {b for b in buses if buses.count(b) > 1}
            if dupes:
                raise CaseFormatError(f"duplicate {label} entries for buses {sorted(dupes)}")
        both = set(pmu_buses) & set(rtu_buses)
        if both:
            raise CaseFormatError(f"buses {sorted(both)} appear in both pmu and rtu lists")

    def pmu_buses(self) -> list[int]:
        return [m.bus for m in self.pmu]

    def rtu_buses(self) -> list[int]:
        return [m.bus for m in self.rtu]


_COMMENT = re.compile(r"%[^\n]*")
_SECTION = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*('[^']*'|[^\[;\s][^;]*);")


def _parse_matrix(body: str, what: str) -> list[list[float]]:
    rows: list[list[float]] = []
    for line in body.replace(";", "\n").split("\n"):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise CaseFormatError(f"{what}: unparseable row {line!r}") from exc
    return rows


def parse_matpower(source: str | Path) -> CaseNetwork:
    """Parse a MATPOWER case file (text or path) into a validated network.

    Applies per-unit conversion on baseMVA, converts angles to radians,
    normalizes tap ratio 0 to 1.0, and drops out-of-service branches. Raises
    CaseFormatError for structural problems: missing sections, duplicate or
    dangling bus ids, zero-impedance branches, no or multiple slack buses,
    isolated buses, or a disconnected network.
    """
    path: Path | None = None
    if isinstance(source, Path):
        path = source
    elif isinstance(source, str) and "\n" not in source and source.endswith(".m"):
        path = Path(source)
    text = path.read_text() if path is not None else str(source)
    name = path.stem if path is not None else "case"

    stripped = _COMMENT.sub("", text)
    sections = {m.group(1): m.group(2) for m in _SECTION.finditer(stripped)}
    scalars = {m.group(1): m.group(2).strip() for m in _SCALAR.finditer(stripped)}

    if "baseMVA" not in scalars:
        raise CaseFormatError("missing mpc.baseMVA")
    try:
        base_mva = float(scalars["baseMVA"])
    except ValueError as exc:
        raise CaseFormatError(f"bad baseMVA {scalars['baseMVA']!r}") from exc
    if base_mva <= 0.0:
        raise CaseFormatError(f"baseMVA must be positive, got {base_mva}")

    for required in ("bus", "branch"):
        if required not in sections:
            raise CaseFormatError(f"missing mpc.{required} section")

    buses: list[Bus] = []
    seen: set[int] = set()
    for row in _parse_matrix(sections["bus"], "bus"):
        if len(row) < 13:
            raise CaseFormatError(f"bus row too short ({len(row)} columns): {row}")
        bus_i = int(row[0])
        if bus_i in seen:
            raise CaseFormatError(f"duplicate bus id {bus_i}")
        seen.add(bus_i)
        btype = int(row[1])
        if btype not in (PQ, PV, SLACK):
            raise CaseFormatError(f"bus {bus_i}: unknown type {btype}")
        buses.append(
            Bus(
                bus_i=bus_i,
                btype=btype,
                pd=row[2] / base_mva,
                qd=row[3] / base_mva,
                gs=row[4] / base_mva,
                bs=row[5] / base_mva,
                vm=row[7],
                va=math.radians(row[8]),
                base_kv=row[9],
                vmax=row[11],
                vmin=row[12],
            )
        )
    if not buses:
        raise CaseFormatError("empty bus section")

    slack_ids = [b.bus_i for b in buses if b.btype == SLACK]
    if len(slack_ids) == 0:
        raise CaseFormatError("no slack bus in case")
    if len(slack_ids) > 1:
        raise CaseFormatError(f"multiple slack buses: {slack_ids}")

    branches: list[Branch] = []
    for row in _parse_matrix(sections["branch"], "branch"):
        if len(row) < 11:
            raise CaseFormatError(f"branch row too short ({len(row)} columns): {row}")
        f_bus, t_bus = int(row[0]), int(row[1])
        for end in (f_bus, t_bus):
            if end not in seen:
                raise CaseFormatError(f"branch {f_bus}-{t_bus}: unknown bus {end}")
        if int(row[10]) == 0:
            continue
        r, x, b = row[2], row[3], row[4]
        if r == 0.0 and x == 0.0:
            raise CaseFormatError(f"branch {f_bus}-{t_bus} has zero impedance")
        tap = row[8]
        if tap < 0.0:
            raise CaseFormatError(f"branch {f_bus}-{t_bus}: negative tap ratio {tap}")
        branches.append(
            Branch(
                f_bus=f_bus,
                t_bus=t_bus,
                r=r,
                x=x,
                b=b,
                tap=tap if tap != 0.0 else 1.0,
                shift=math.radians(row[9]),
            )
        )

    gens: list[Gen] = []
    for row in _parse_matrix(sections.get("gen", ""), "gen"):
        if len(row) < 8:
            raise CaseFormatError(f"gen row too short ({len(row)} columns): {row}")
        gbus = int(row[0])
        if gbus not in seen:
            raise CaseFormatError(f"gen references unknown bus {gbus}")
        if int(row[7]) == 0:
            continue
        gens.append(
            Gen(
                bus=gbus,
                pg=row[1] / base_mva,
                qg=row[2] / base_mva,
                qmax=row[3] / base_mva,
                qmin=row[4] / base_mva,
                vg=row[5],
            )
        )

    gen_buses = {g.bus for g in gens}
    for bus in buses:
        if bus.btype in (PV, SLACK) and bus.bus_i not in gen_buses:
            raise CaseFormatError(
                f"bus {bus.bus_i} is type {bus.btype} but has no in-service generator"
            )

    # Connectivity over in-service branches: isolated buses and islands are
    # both fatal, the estimator and the power flow need one connected network.
    adjacency: dict[int, set[int]] = {b.bus_i: set() for b in buses}
    for br in branches:
        adjacency[br.f_bus].add(br.t_bus)
        adjacency[br.t_bus].add(br.f_bus)
    isolated = sorted(b for b, nbrs in adjacency.items() if not nbrs)
    if isolated:
        raise CaseFormatError(f"isolated buses (no in-service branch): {isolated}")
    reached = {buses[0].bus_i}
    frontier = [buses[0].bus_i]
    while frontier:
        nxt = frontier.pop()
        for nbr in adjacency[nxt]:
            if nbr not in reached:
                reached.add(nbr)
                frontier.append(nbr)
    unreached = sorted(set(seen) - reached)
    if unreached:
        raise CaseFormatError(f"network is disconnected; unreachable buses: {unreached}")

    return CaseNetwork(name=name, base_mva=base_mva, buses=buses, branches=branches, gens=gens)


_BOUNDED_KEYS = {"value", "lo", "hi"}
_PMU_KEYS = {"bus", "g_pmu", "v_re", "v_im", "i_re", "i_im"}
_RTU_KEYS = {"bus", "g", "b"}
_TOP_KEYS = {"pmu", "rtu", "case_name", "base_mva", "seed"}


def _bounded_from(obj: object, where: str) -> Bounded:
    if not isinstance(obj, dict):
        raise CaseFormatError(f"{where}: expected an object with value/lo/hi")
    unknown = set(obj) - _BOUNDED_KEYS
    if unknown:
        raise CaseFormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = _BOUNDED_KEYS - set(obj)
    if missing:
        raise CaseFormatError(f"{where}: missing keys {sorted(missing)}")
    return Bounded(value=float(obj["value"]), lo=float(obj["lo"]), hi=float(obj["hi"]))


def parse_measurements(source: str | Path) -> MeasurementSet:
    """Parse a measurement sidecar (JSON text or path) into a MeasurementSet.

    The document must carry "pmu" and "rtu" lists (either may be empty).
    Unknown keys anywhere are rejected rather than ignored: a misspelled field
    would otherwise silently drop a measurement.
    """
    path: Path | None = None
    if isinstance(source, Path):
        path = source
    elif isinstance(source, str) and "\n" not in source and not source.lstrip().startswith("{"):
        path = Path(source)
    text = path.read_text() if path is not None else str(source)

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"measurement file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseFormatError("measurement document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise CaseFormatError(f"unknown top-level keys {sorted(unknown)}")
    for required in ("pmu", "rtu"):
        if required not in doc or not isinstance(doc[required], list):
            raise CaseFormatError(f'measurement document needs a "{required}" list')

    pmu: list[PMUMeasurement] = []
    for k, entry in enumerate(doc["pmu"]):
        where = f"pmu[{k}]"
        if not isinstance(entry, dict):
            raise CaseFormatError(f"{where}: expected an object")
        unknown = set(entry) - _PMU_KEYS
        if unknown:
            raise CaseFormatError(f"{where}: unknown keys {sorted(unknown)}")
        missing = _PMU_KEYS - set(entry)
        if missing:
            raise CaseFormatError(f"{where}: missing keys {sorted(missing)}")
        pmu.append(
            PMUMeasurement(
                bus=int(entry["bus"]),
                g_pmu=float(entry["g_pmu"]),
                v_re=_bounded_from(entry["v_re"], f"{where}.v_re"),
                v_im=_bounded_from(entry["v_im"], f"{where}.v_im"),
                i_re=_bounded_from(entry["i_re"], f"{where}.i_re"),
                i_im=_bounded_from(entry["i_im"], f"{where}.i_im"),
            )
        )

    rtu: list[RTUMeasurement] = []
    for k, entry in enumerate(doc["rtu"]):
        where = f"rtu[{k}]"
        if not isinstance(entry, dict):
            raise CaseFormatError(f"{where}: expected an object")
        unknown = set(entry) - _RTU_KEYS
        if unknown:
            raise CaseFormatError(f"{where}: unknown keys {sorted(unknown)}")
        missing = _RTU_KEYS - set(entry)
        if missing:
            raise CaseFormatError(f"{where}: missing keys {sorted(missing)}")
        rtu.append(
            RTUMeasurement(
                bus=int(entry["bus"]),
                g=_bounded_from(entry["g"], f"{where}.g"),
                b=_bounded_from(entry["b"], f"{where}.b"),
            )
        )

    return MeasurementSet(
        pmu=pmu,
        rtu=rtu,
        case_name=doc.get("case_name"),
        base_mva=None if doc.get("base_mva") is None else float(doc["base_mva"]),
        seed=None if doc.get("seed") is None else int(doc["seed"]),
    )


def _bounded_dict(b: Bounded) -> dict:
    return {"value": b.value, "lo": b.lo, "hi": b.hi}


def write_measurements(mset: MeasurementSet, path: str | Path) -> None:
    """Serialize a MeasurementSet as JSON; parse_measurements round-trips it
    bit-exactly (floats are written with shortest round-trip repr)."""
    doc: dict = {}
    if mset.case_name is not None:
        doc["case_name"] = mset.case_name
    if mset.base_mva is not None:
        doc["base_mva"] = mset.base_mva
    if mset.seed is not None:
        doc["seed"] = mset.seed
    doc["pmu"] = [
        {
            "bus": m.bus,
            "g_pmu": m.g_pmu,
            "v_re": _bounded_dict(m.v_re),
            "v_im": _bounded_dict(m.v_im),
            "i_re": _bounded_dict(m.i_re),
            "i_im": _bounded_dict(m.i_im),
        }
        for m in mset.pmu
    ]
    doc["rtu"] = [
        {"bus": m.bus, "g": _bounded_dict(m.g), "b": _bounded_dict(m.b)} for m in mset.rtu
    ]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _report_schema(doc: dict) -> tuple[str, ...]:
    return REQUIRED_BENCH_KEYS if "trials" in doc else REQUIRED_REPORT_KEYS


def write_report(report: dict, path: str | Path) -> None:
    """Write a solver or benchmark report as JSON after checking its keys."""
    missing = [k for k in _report_schema(report) if k not in report]
    if missing:
        raise CaseFormatError(f"report is missing required keys {missing}")
    Path(path).write_text(json.dumps(report, indent=2) + "\n")


def read_report(path: str | Path) -> dict:
    """Load a report document written by write_report, re-validating its keys."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"report file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseFormatError("report must be a JSON object")
    missing = [k for k in _report_schema(doc) if k not in doc]
    if missing:
        raise CaseFormatError(f"report is missing required keys {missing}")
    return doc


STATE_CSV_FIELDS = ("bus", "v_re", "v_im", "v_mag", "v_angle_deg")


def write_state_csv(report: dict, path: str | Path) -> None:
    """Write the report's per-bus voltage estimate as a delimited table."""
    state = report["state"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATE_CSV_FIELDS)
        for bus, re_, im_ in zip(state["bus"], state["v_re"], state["v_im"]):
            mag = math.hypot(re_, im_)
            ang = math.degrees(math.atan2(im_, re_))
            writer.writerow([bus, repr(re_), repr(im_), repr(mag), repr(ang)])
