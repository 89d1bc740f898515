import numpy as np
import pytest

import acceptance_report


def pytest_terminal_summary(terminalreporter):
    if acceptance_report.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def layered_kappa(n_cells, contrast=1e3, rows=((3, 5),)):
    """Unit background with horizontal high-permeability bands (cell rows)."""
    kappa = np.ones((n_cells, n_cells))
    for a, b in rows:
        kappa[a:b, :] = contrast
    return kappa
