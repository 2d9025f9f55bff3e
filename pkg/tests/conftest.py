import numpy as np
import pytest

from hmcgap.dataset import LabelMatrix
from hmcgap.hierarchy import ClassHierarchy, ancestor_closure, enforce_probability_monotonicity
from hmcgap.synthetic import PRESETS, generate_synthetic


def random_hierarchy(rng, n_classes, prefix="k"):
    """Random recursive tree with shuffled identifiers, so id order differs from build order."""
    names = [f"{prefix}{v}" for v in rng.permutation(n_classes * 3)[:n_classes]]
    parent = {names[0]: None}
    for k in range(1, n_classes):
        parent[names[k]] = names[int(rng.integers(0, k))]
    return ClassHierarchy(parent)


def random_problem(rng, max_classes=15, max_instances=10, grid=8):
    """Closed random Y and a monotone Y' quantized to ``1/grid`` so ties are frequent."""
    h = random_hierarchy(rng, int(rng.integers(2, max_classes + 1)))
    n = int(rng.integers(1, max_instances + 1))
    ids = tuple(f"i{v:02d}" for v in rng.permutation(90)[:n])
    raw = rng.random((n, len(h))) < rng.uniform(0.05, 0.5)
    y = LabelMatrix(ids, h.classes, ancestor_closure(raw, h))
    p = rng.integers(0, grid + 1, size=(n, len(h))) / grid
    p = enforce_probability_monotonicity(p, h)
    return h, y, p


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic(PRESETS["small"])


@pytest.fixture(scope="session")
def small_synthetic_dir(tmp_path_factory, small_synthetic):
    out = tmp_path_factory.mktemp("small")
    small_synthetic.write(out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record a PASS/FAIL line for the acceptance summary, then assert."""

    def report(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
