from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knapsack_lab.demand import DemandDistribution
from knapsack_lab.dp import accept, decision_table, enumeration_oracle, solve_dp
from knapsack_lab.errors import ResourceError, ValidationError
from test_demand import distributions

CERTAIN = DemandDistribution.from_atoms([(1, 1, 1)])
EMPTY = DemandDistribution.from_atoms([], 1)
BERNOULLI = DemandDistribution.from_atoms([(1, 1, Fraction(1, 2))])


def test_certain_arrivals():
    T = 6
    table = solve_dp(CERTAIN, 10, T)
    for t in range(T + 1):
        assert table.values[t, T - t + 1 :].tolist() == [T - t + 1] * (10 - (T - t))


def test_no_arrivals():
    assert not solve_dp(EMPTY, 5, 4).values.any()
    assert enumeration_oracle(EMPTY, 5, 4) == 0


def test_bernoulli_two_periods():
    table = solve_dp(BERNOULLI, 1, 2)
    assert abs(table.values[0, 1] - enumeration_oracle(BERNOULLI, 1, 2)) <= 1e-12
    assert table.values[0, 1] == 0.875
    assert accept(table, 0, 1, 1, 1)


def test_zero_capacity():
    dist = DemandDistribution.from_atoms([(3, 2, Fraction(1, 2))])
    assert enumeration_oracle(dist, 0, 3) == 0
    assert not solve_dp(dist, 0, 3).values.any()
    assert not solve_dp(dist, 1, 3).values.any()


def test_accept_rules():
    dist = DemandDistribution.from_atoms([(1, 1, Fraction(1, 2)), (3, 2, Fraction(1, 4))])
    table = solve_dp(dist, 4, 6)
    assert not accept(table, 0, 1, 5, 2)
    # zero revenue is refused wherever another unit still has value
    nxt = table.values[1]
    for d in range(1, 5):
        assert accept(table, 0, d, 0, 1) == (nxt[d - 1] == nxt[d])
    with pytest.raises(IndexError):
        accept(table, 6, 1, 1, 1)
    with pytest.raises(IndexError):
        accept(table, 0, 5, 1, 1)


def test_decision_table_matches_accept():
    dist = DemandDistribution.from_atoms([(1, 1, Fraction(1, 3)), (Fraction(5, 2), 2, Fraction(1, 3))])
    table = solve_dp(dist, 5, 7)
    dec = decision_table(table)
    for t in range(7):
        for d in range(6):
            for a, (p, q, _) in enumerate(dist.atoms):
                assert dec[t, d, a] == accept(table, t, d, p, q)
    assert dec[7, :, 1].tolist() == [d >= 2 for d in range(6)]


def test_budget_and_validation():
    with pytest.raises(ResourceError):
        solve_dp(BERNOULLI, 100_000, 1000)
    with pytest.raises(ResourceError):
        enumeration_oracle(BERNOULLI, 5, 40)
    with pytest.raises(ValidationError):
        solve_dp(BERNOULLI, -1, 3)
    with pytest.raises(ValidationError):
        solve_dp(BERNOULLI, 2, 0)


def test_csv(tmp_path):
    path = tmp_path / "v.csv"
    solve_dp(BERNOULLI, 1, 2).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,d,value"
    assert lines[1:] == ["0,0,0.0", "0,1,0.875", "1,0,0.0", "1,1,0.75", "2,0,0.0", "2,1,0.5"]


def test_table_is_read_only():
    table = solve_dp(BERNOULLI, 2, 2)
    with pytest.raises(ValueError):
        table.values[0, 0] = 1.0


@given(distributions(), st.integers(0, 6), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_table_invariants(dist, W, T):
    V = solve_dp(dist, W, T).values
    assert np.all(V[:, 0] == 0)
    assert np.all(np.diff(V, axis=1) >= -1e-12)
    assert np.all(V[:-1] >= V[1:] - 1e-12)
    terminal = [sum(float(p * q * prob) for p, q, prob in dist.atoms if q <= d) for d in range(W + 1)]
    assert np.allclose(V[T], terminal, rtol=0, atol=1e-12)


@given(distributions(), st.integers(0, 4), st.integers(1, 4))
@settings(max_examples=60, deadline=None)
def test_matches_oracle(dist, W, T):
    assert abs(solve_dp(dist, W, T).values[0, W] - enumeration_oracle(dist, W, T)) <= 1e-9


@given(distributions(), st.sampled_from([Fraction(1, 2), Fraction(2), Fraction(4)]))
@settings(max_examples=40, deadline=None)
def test_price_scaling(dist, lam):
    # powers of two keep the float arithmetic exact, so decisions match tie for tie
    scaled = DemandDistribution(
        tuple((p * lam, q, prob) for p, q, prob in dist.atoms), dist.no_arrival_prob
    )
    a, b = solve_dp(dist, 5, 6), solve_dp(scaled, 5, 6)
    assert np.array_equal(b.values, float(lam) * a.values)
    assert np.array_equal(decision_table(a), decision_table(b))
