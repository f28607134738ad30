import numpy as np
import pytest
import torch

# single-threaded compute keeps results bit-reproducible and timings stable
torch.set_num_threads(1)
try:
    torch.set_num_interop_threads(1)
except RuntimeError:
    pass


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per criterion; shown in the run summary."""

    def report(number, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
        request.config._acceptance_lines.append(line)
        print(line)

    return report


@pytest.fixture
def rng():
    return np.random.default_rng(20240816)
