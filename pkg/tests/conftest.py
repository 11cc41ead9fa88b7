import numpy as np
import pytest
import torch


def crandn(g, *shape):
    return torch.randn(*shape, dtype=torch.complex128, generator=g)


def vdot(a, b):
    return torch.vdot(a.flatten(), b.flatten())


def centered_dft_matrix(n):
    """Dense centered orthonormal DFT built from the exponential formula."""
    c = n // 2
    k = np.arange(n)[:, None] - c
    m = np.arange(n)[None, :] - c
    return np.exp(-2j * np.pi * k * m / n) / np.sqrt(n)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
