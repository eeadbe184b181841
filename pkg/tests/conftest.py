import numpy as np
import pytest

from tractlab.dataset import Dataset, FeatureSchema


def make_ds(X, y=None, kind="fraction", n_classes=None):
    X = np.asarray(X, dtype=float)
    return Dataset(FeatureSchema.generic(X.shape[1], kind), X, None if y is None else np.asarray(y), n_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
