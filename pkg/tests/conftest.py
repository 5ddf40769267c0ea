"""Shared fixtures: small seeded synthetic datasets and encoded batches."""
from __future__ import annotations

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from spikecast import datakit as dk
from spikecast import trainkit as tk


@pytest.fixture(scope="session")
def small_dataset() -> dk.Dataset:
    return dk.gen_synthetic(dk.SyntheticConfig(scenes=24), seed=5)


@pytest.fixture(scope="session")
def teacher_batch(small_dataset):
    return tk.encode_dataset(small_dataset, 16, 9)


@pytest.fixture(scope="session")
def student_batch(small_dataset):
    return tk.encode_dataset(small_dataset, 8, 9)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    ran = {int(r.nodeid.split("criterion_")[1].split("_")[0])
           for key, reports in terminalreporter.stats.items() if key != "deselected" for r in reports
           if hasattr(r, "nodeid") and "test_acceptance.py::test_criterion_" in r.nodeid}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ran):
        terminalreporter.write_line(acceptance_log.line(n))
