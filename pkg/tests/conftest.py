from __future__ import annotations

import importlib
import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
FIXTURE_MANIFEST = ROOT / "fixtures" / "manifest.json"


@pytest.fixture(params=["python", "cython"])
def kernel_impl(request, monkeypatch):
    """Run a test against each kernel implementation that is importable."""
    from togkit import kernels

    impls = kernels.available()
    if request.param not in impls:
        pytest.skip(f"{request.param} kernels not built")
    mod = impls[request.param]
    monkeypatch.setattr(kernels, "_impl", mod)
    monkeypatch.setattr(kernels, "_c", impls.get("cython") if request.param == "cython" else None)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixture_dataset():
    from togkit.dataset import load_dataset

    return load_dataset(FIXTURE_MANIFEST)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
