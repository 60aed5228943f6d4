"""Shared fixtures and the per-criterion summary printed after the run."""
from fractions import Fraction

import pytest

from knapsack_lab import _rng
from knapsack_lab.demand import DemandDistribution, MultiDemandDistribution

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if call.excinfo is not None and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:160]
    _CRITERIA[number] = (title, call.excinfo is None, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        )


@pytest.fixture
def detail(record_property):
    """Attach a one-line result description to the current criterion."""
    return lambda text: record_property("detail", text)


@pytest.fixture
def bernoulli():
    return DemandDistribution.from_atoms([(1, 1, Fraction(1, 2))])


@pytest.fixture
def two_price():
    return DemandDistribution.from_atoms([(1, 1, Fraction(2, 5)), (2, 1, Fraction(3, 10))])


def random_distribution(gen, max_support=3, max_price=4, max_qty=3):
    """Small random law with rational probabilities and a no-arrival atom."""
    k = int(gen.integers(1, max_support + 1))
    weights = gen.integers(1, 10, size=k + 1)
    total = int(weights.sum())
    atoms = [
        (Fraction(int(gen.integers(0, 2 * max_price + 1)), 2), int(gen.integers(1, max_qty + 1)),
         Fraction(int(w), total))
        for w in weights[1:]
    ]
    return DemandDistribution.from_atoms(atoms, Fraction(int(weights[0]), total))


def random_multi_distribution(gen, dim=2, max_support=3, max_qty=2):
    k = int(gen.integers(1, max_support + 1))
    weights = gen.integers(1, 10, size=k + 1)
    total = int(weights.sum())
    atoms = [
        (Fraction(int(gen.integers(0, 9)), 2),
         tuple(int(q) for q in gen.integers(1, max_qty + 1, size=dim)),
         Fraction(int(w), total))
        for w in weights[1:]
    ]
    return MultiDemandDistribution.from_atoms(dim, atoms, Fraction(int(weights[0]), total))


@pytest.fixture
def instance_gen():
    """Seeded generator for the ``key``-th batch of random instances."""
    return lambda key: _rng.substream(2024, key, _rng.INSTANCES)


@pytest.fixture
def make_dist():
    return random_distribution


@pytest.fixture
def make_multi_dist():
    return random_multi_distribution
