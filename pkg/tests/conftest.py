import numpy as np
import pytest
import torch

from vigas.dataset import DataConfig, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Three novel-protocol scenes with four clips each."""
    root = tmp_path_factory.mktemp("data_novel")
    return generate_dataset(DataConfig(scenes=3, clips_per_scene=4, scene_seconds=2, seed=7), root)


@pytest.fixture(scope="session")
def single_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data_single")
    cfg = DataConfig(scenes=2, clips_per_scene=5, scene_seconds=3, seed=3, protocol="single")
    return generate_dataset(cfg, root)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


# one line per acceptance criterion, repeated after the run so they are easy to find
ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
