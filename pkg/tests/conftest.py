import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from procequil.channels import KrausMap  # noqa: E402

DATA = Path(__file__).parent / "data" / "frozen_oracles.json"


def decode(m) -> np.ndarray:
    return np.array(m["re"]) + 1j * np.array(m["im"])


@pytest.fixture(scope="session")
def frozen():
    return json.loads(DATA.read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def kraus_from(data) -> KrausMap:
    return KrausMap(tuple(decode(k) for k in data))


def random_unitary(d, rng):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_channel(d, rng, kraus=2, d_out=None):
    d_out = d if d_out is None else d_out
    z = rng.normal(size=(kraus * d_out, d)) + 1j * rng.normal(size=(kraus * d_out, d))
    q, _ = np.linalg.qr(z)
    return KrausMap(tuple(q.reshape(kraus, d_out, d)))


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one line for the end-of-run acceptance summary."""
    def emit(line):
        print(line)
        ACCEPTANCE_LINES.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
