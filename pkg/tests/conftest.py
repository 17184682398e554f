import json
from pathlib import Path

import numpy as np
import pytest

from eepa.model import CellConfig, db_to_linear

FIXTURES = Path(__file__).parent / "fixtures"
SIGMA2 = 5e-14
MEAN_GAIN = 10.0**-11.2

_criteria: list[str] = []


@pytest.fixture
def cfg():
    return CellConfig(num_users=2, power_budget=1.0, noise_variance=SIGMA2, outage_threshold=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def load_saturated_k3():
    cases = json.loads((FIXTURES / "saturated_k3.json").read_text())
    out = []
    for case in cases:
        cell = CellConfig(3, case["power_budget"], SIGMA2, case["outage_threshold"])
        out.append((case["name"], db_to_linear(np.array(case["gains_db"], dtype=float)), cell))
    return out


@pytest.fixture
def report_criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        _criteria.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
