"""Shared fixtures: parsed cases, truth states, and small helpers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from ecpse.case_io import parse_matpower
from ecpse.powerflow import solve_powerflow

FIXTURES = Path(__file__).parent / "fixtures"

# One line per acceptance criterion, printed after the run regardless of
# output capture; test_acceptance.py appends through record_criterion.
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> str:
    line = f"criterion {number} ({name}): {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def net3():
    return parse_matpower(FIXTURES / "case3.m")


@pytest.fixture(scope="session")
def net14():
    return parse_matpower(FIXTURES / "case14.m")


@pytest.fixture(scope="session")
def net118():
    return parse_matpower(FIXTURES / "grid118.m")


@pytest.fixture(scope="session")
def truth3(net3):
    return solve_powerflow(net3)


@pytest.fixture(scope="session")
def truth14(net14):
    return solve_powerflow(net14)


@pytest.fixture(scope="session")
def truth118(net118):
    return solve_powerflow(net118)


def stack_report_state(report: dict) -> np.ndarray:
    """Report state flattened in [v_re, v_im, g, b, vp_re, vp_im, ip_re, ip_im] order."""
    st = report["state"]
    return np.concatenate([
        st["v_re"], st["v_im"],
        [e["g"] for e in st["rtu"]], [e["b"] for e in st["rtu"]],
        [e["vp_re"] for e in st["pmu"]], [e["vp_im"] for e in st["pmu"]],
        [e["ip_re"] for e in st["pmu"]], [e["ip_im"] for e in st["pmu"]],
    ])
