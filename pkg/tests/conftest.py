import numpy as np
import pytest

from aupipe.dataset import AU_IDS, Dataset

ACCEPTANCE_RESULTS = []


def tiny_dataset(n_subjects=3, frames=10, dim=4, seed=0, positive_rate=0.4):
    rng = np.random.default_rng(seed)
    n = n_subjects * frames
    subjects = np.repeat([f"S{i + 1:02d}" for i in range(n_subjects)], frames)
    frame_index = np.tile(np.arange(frames), n_subjects)
    active = rng.random((n, len(AU_IDS))) < positive_rate
    intens = np.where(active, rng.integers(2, 6, size=active.shape), rng.integers(0, 2, size=active.shape))
    return Dataset(subjects, frame_index, intens, rng.normal(size=(n, dim)))


@pytest.fixture
def small_dataset():
    return tiny_dataset()


@pytest.fixture
def record_criterion():
    def record(number, name, passed, detail=""):
        ACCEPTANCE_RESULTS.append((number, name, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {name} {detail}".rstrip())
