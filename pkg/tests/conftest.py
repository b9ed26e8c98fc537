from __future__ import annotations

import numpy as np
import pytest

from sylvagen.plot_assembly import PlotSpec, make_plot
from sylvagen.rng import derive_seed
from sylvagen.tree_models import ModelLibrary


@pytest.fixture(scope="session")
def library():
    return ModelLibrary.generated(seed=0)


@pytest.fixture(scope="session")
def easy_plot(library):
    return make_plot("e0", PlotSpec.default("easy"), library, derive_seed(11, "easy"))


@pytest.fixture(scope="session")
def difficult_plot(library):
    return make_plot("d0", PlotSpec.default("difficult"), library, derive_seed(11, "difficult"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_batch(library, seed: int, per_class: int, classes=("easy", "medium", "difficult")):
    plots = []
    for cx in classes:
        for k in range(per_class):
            pid = f"{cx}{k:02d}"
            plots.append(make_plot(pid, PlotSpec.default(cx), library, derive_seed(seed, "plot", cx, k)))
    return plots


@pytest.fixture(scope="session")
def batch30(library):
    return make_batch(library, seed=2025, per_class=10)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
