import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from heitlerlab.tags import TagStream  # noqa: E402

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE = []


def poisson_tags(rates_per_ps, span_ps, seed, resolution=1):
    """Independent homogeneous Poisson streams, one per channel."""
    rng = np.random.default_rng(seed)
    chans, times = [], []
    for ch, rate in enumerate(rates_per_ps):
        n = rng.poisson(rate * span_ps)
        t = np.sort(rng.integers(0, span_ps // resolution, size=n))
        chans.append(np.full(n, ch, dtype=np.uint8))
        times.append(t)
    return TagStream.from_unsorted(np.concatenate(chans), np.concatenate(times), resolution)


@pytest.fixture
def poisson():
    return poisson_tags


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
