import numpy as np
import pytest

from unicon.dataio import DatasetSpec, LabeledBatch, augment, generate_blobs


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def class_labels(rng, n_pairs, n_classes):
    """View labels (two per sample) with every class holding at least two views."""
    labels = np.arange(n_pairs) % n_classes
    rng.shuffle(labels)
    return np.repeat(labels, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_views():
    data = generate_blobs(DatasetSpec(class_count=3, per_class=4, dim=5, seed=2))
    return augment(data, noise_scale=0.1, drop_prob=0.0, seed=0)


@pytest.fixture
def tiny_dataset():
    return LabeledBatch(np.arange(12.0).reshape(6, 2), np.array([0, 0, 1, 1, 2, 2]), 3)


CRITERIA = {}


def record_criterion(number, passed, detail):
    """Store one acceptance line; printed in the terminal summary."""
    CRITERIA[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
