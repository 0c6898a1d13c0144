import numpy as np
import pytest

from noisr.dataset import build_dataset, write_desk_images
from noisr.noise import NoiseSpec

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def desk_sources(tmp_path_factory):
    src = tmp_path_factory.mktemp("desk_src")
    write_desk_images(src, 28, size=128, seed=0)
    return src


@pytest.fixture(scope="session")
def mini_dataset(desk_sources, tmp_path_factory):
    out = tmp_path_factory.mktemp("mini_ds")
    return build_dataset(desk_sources, out, NoiseSpec(), 2, seed=3, splits=(4, 2, 2))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
