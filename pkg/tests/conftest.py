import os
from pathlib import Path

import numpy as np
import pytest

from tightprop.linalg import make_rng

REPO = Path(__file__).resolve().parents[1]

# Acceptance results are collected here and echoed in the terminal summary.
ACCEPTANCE = {}


def pytest_configure(config):
    os.environ.setdefault("TIGHTPROP_DATA_DIR", str(REPO / "data"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return make_rng(12345)


def naive_forward(weights, biases, x):
    """Scalar-loop evaluator, independent of the vectorized code path."""
    h = [float(v) for v in x]
    for i, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for r in range(len(b)):
            s = float(b[r])
            for c in range(len(h)):
                s += float(w[r][c]) * h[c]
            out.append(s)
        h = [max(v, 0.0) for v in out] if i < len(weights) - 1 else out
    return np.array(h)


def failure_example(n):
    """Two-layer net whose expected bounds are far looser than IBP."""
    return 1000.0 * np.eye(n), -999.0 * np.ones(n), -10.0 * np.ones(n), 0.0
