import numpy as np
import pytest

from dualcodec.autodiff import Initializer
from dualcodec.config import toy_profile
from dualcodec.net import CodecModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    return toy_profile()


@pytest.fixture(scope="session")
def toy_model():
    """Randomly initialized float32 toy model; treat as read-only."""
    return CodecModel(toy_profile(), Initializer(7)).eval()


@pytest.fixture(scope="session")
def toy_model64():
    """Double-precision toy model with non-zero weights in every layer."""
    model = CodecModel(toy_profile(), Initializer(11, dtype=np.float64))
    perturb = np.random.default_rng(5)
    for _, p in model.named_parameters():
        if not np.any(p.data):
            p.data = perturb.normal(0.0, 0.05, size=p.shape)
    return model


ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def record():
    """Store one acceptance outcome; the summary is printed at the end of the run."""

    def _record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE_RESULTS[number] = (name, bool(passed), detail)
        print(f"criterion {number} ({name}): {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {name}: {detail}")
