import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("VD2NN_MNIST_DIR", "/root/data/mnist"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "t10k-images.idx3-ubyte").exists():
        pytest.skip(f"MNIST IDX files not found under {MNIST_DIR} (set VD2NN_MNIST_DIR)")
    return MNIST_DIR


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def _report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
        ACCEPTANCE_LINES.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print(f"\n{line}", flush=True)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
