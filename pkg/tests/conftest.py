import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrverify.dataset import DatasetConfig, build_dataset
from mrverify.fixtures import make_boards
from mrverify.imaging import Frame

settings.register_profile("ci", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def boards():
    return make_boards(8, seed=11, size=(160, 160))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, boards):
    """Tiny val/test dataset built from 160x160 boards; shared read-only."""
    root = tmp_path_factory.mktemp("ds")
    cfg = DatasetConfig(counts={"val": 16, "test": 20}, seed=5)
    return build_dataset(boards, root, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_frame(rng, w, h):
    return Frame(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


# ------------------------------------------------------------ acceptance lines

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion's verdict for the summary."""
    table = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        table[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(ACCEPTANCE, {})
    if table:
        terminalreporter.section("acceptance criteria")
        for n in sorted(table):
            terminalreporter.write_line(table[n])
