import json
import pathlib

import numpy as np
import pytest
from hypothesis import settings

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# Case C encounter-plane data as published
CASE_C_X = np.array([11.84, -1.36])
CASE_C_VAR = (25.1**2, 11.61**2)

# acceptance verdict lines, echoed in the terminal summary
VERDICTS = []


def load_fixture(name):
    with open(FIXTURES / name) as fh:
        return json.load(fh)


@pytest.fixture
def fixture_path():
    return lambda name: str(FIXTURES / name)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda v: int(v.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
