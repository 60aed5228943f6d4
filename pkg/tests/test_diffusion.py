from fractions import Fraction

import numpy as np
import pytest

from knapsack_lab.demand import DemandDistribution
from knapsack_lab.diffusion import (
    euler_maruyama,
    fluctuation_compare,
    integrated_variance,
    ks_critical,
    sde_coefficients,
    simulate_diffusion,
    solve_center_ode,
)
from knapsack_lab.dp import solve_dp
from knapsack_lab.errors import ValidationError
from knapsack_lab.fluid import FluidField, solve_grid
from knapsack_lab.simulation import simulate

BERNOULLI = DemandDistribution.from_atoms([(1, 1, Fraction(1, 2))])
CERTAIN = DemandDistribution.from_atoms([(1, 1, 1)])
RICH = DemandDistribution.from_atoms([(3, 1, Fraction(1, 2))])


@pytest.fixture(scope="module")
def bernoulli_field():
    return solve_grid(BERNOULLI, None, 1.0, 2.0, 200, 400)


def test_center_never_accepts():
    x, y = np.linspace(0, 1, 11), np.linspace(0, 1, 11)
    X, Y = np.meshgrid(x, y, indexing="ij")
    field = FluidField(x, y, 2 * Y, np.zeros_like(X), np.full_like(X, 2.0))
    center = solve_center_ode(field, BERNOULLI, 0.5)
    assert not center.values.any()


def test_center_certain_acceptance():
    field = solve_grid(CERTAIN, None, 1.0, 2.0, 200, 400)
    center = solve_center_ode(field, CERTAIN, 2.0)
    assert np.allclose(center.values, center.times, atol=1e-12)


def test_center_bernoulli(bernoulli_field):
    center = solve_center_ode(bernoulli_field, BERNOULLI, 2.0)
    assert np.max(np.abs(center.values - 0.5 * center.times)) <= 1e-6


def test_center_domain_checked(bernoulli_field):
    with pytest.raises(ValidationError):
        solve_center_ode(bernoulli_field, BERNOULLI, 3.0)
    with pytest.raises(ValidationError):
        solve_center_ode(bernoulli_field, BERNOULLI, 1.0, t_span=(0.0, 1.5), dt=0.01)


def test_center_matches_policy_mean():
    n, d = 200, 0.4
    field = solve_grid(BERNOULLI, None, 1.0, d, 400, 160)
    center = solve_center_ode(field, BERNOULLI, d)
    ens = simulate(BERNOULLI, solve_dp(BERNOULLI, int(n * d), n), 0, int(n * d), 4000, seed=4)
    for tau in (0.25, 0.5, 1.0):
        mc = ens.supplied[:, int(n * tau)].mean() / n
        assert abs(center(tau) - mc) <= 0.02 * mc


def test_zero_sigma_gives_zero_paths():
    sde = euler_maruyama(None, lambda t: 0.0 * t, (0.0, 1.0), 1 / 64, 20, seed=1)
    assert not sde.Y.any() and not sde.Z.any()


def test_standard_brownian_motion():
    sde = euler_maruyama(None, lambda t: np.ones_like(t), (0.0, 1.0), 1 / 128, 10_000, seed=2)
    assert np.all(sde.Y[:, 0] == 0)
    assert sde.at(1.0).var(ddof=1) == pytest.approx(1.0, rel=0.05)


def test_bernoulli_variance_and_martingale(bernoulli_field):
    center, coef, sde = simulate_diffusion(bernoulli_field, BERNOULLI, 2.0, 10_000, seed=3,
                                           record_every=64)
    for t in (0.25, 0.5, 1.0):
        assert sde.at(t).var(ddof=1) == pytest.approx(0.25 * t, rel=0.10)
        assert integrated_variance(coef.sigma, t) == pytest.approx(0.25 * t, rel=1e-9)
    se = sde.Y.std(axis=0, ddof=1) / np.sqrt(sde.n_paths)
    assert np.all(np.abs(sde.Y.mean(axis=0)) <= 3 * se + 1e-15)
    # one price atom: revenue fluctuation is the price times the unit fluctuation
    assert np.allclose(sde.Z, sde.Y)


def test_refinement_stability(bernoulli_field):
    center = solve_center_ode(bernoulli_field, BERNOULLI, 2.0)
    coef = sde_coefficients(bernoulli_field, BERNOULLI, center)
    n = 10_000
    v = [euler_maruyama(center, coef.sigma, (0, 1), dt, n, seed=8).at(1.0).var(ddof=1)
         for dt in (1 / 512, 1 / 1024)]
    width = 2 * 1.96 * v[0] * np.sqrt(2 / (n - 1))
    assert abs(v[0] - v[1]) < width


def test_verbatim_mode_clamps(bernoulli_field):
    field = solve_grid(RICH, None, 1.0, 2.0, 200, 400)
    with pytest.warns(RuntimeWarning):
        _, coef, sde = simulate_diffusion(field, RICH, 2.0, 10, seed=1, mode="verbatim-g")
    assert coef.clamped and sde.metadata["clamped"]
    with pytest.raises(ValidationError):
        solve_center_ode(field, RICH, 1.0, mode="nonsense")


def test_fluctuation_compare_degenerate():
    n = 50
    field = solve_grid(CERTAIN, None, 1.0, 2.0, 100, 200)
    ens = simulate(CERTAIN, solve_dp(CERTAIN, 2 * n, n), 0, 2 * n, 200, seed=1)
    center, _, sde = simulate_diffusion(field, CERTAIN, 2.0, 200, seed=2)
    rep = fluctuation_compare(ens, sde, n, [0.5, 1.0], center=center)
    for row in rep.rows:
        assert row["var_empirical"] == 0.0 and row["var_sde"] == 0.0


def test_non_unit_demand_rejected(bernoulli_field):
    lumpy = DemandDistribution.from_atoms([(1, 2, Fraction(1, 2))])
    ens = simulate(lumpy, solve_dp(lumpy, 10, 10), 0, 10, 10, seed=0)
    _, _, sde = simulate_diffusion(bernoulli_field, BERNOULLI, 1.0, 10, seed=0)
    with pytest.raises(ValidationError):
        fluctuation_compare(ens, sde, 10, [1.0])
    with pytest.raises(ValidationError):
        simulate_diffusion(bernoulli_field, lumpy, 1.0, 10, seed=0)
    field = solve_grid(lumpy, None, 1.0, 2.0, 200, 200)
    _, coef, sde = simulate_diffusion(field, lumpy, 1.0, 10, seed=0, conjecture=True)
    assert coef.experimental and sde.metadata["experimental"]


def test_report_csv(tmp_path, bernoulli_field):
    n = 40
    ens = simulate(BERNOULLI, solve_dp(BERNOULLI, 2 * n, n), 0, 2 * n, 500, seed=1)
    center, _, sde = simulate_diffusion(bernoulli_field, BERNOULLI, 2.0, 500, seed=2)
    rep = fluctuation_compare(ens, sde, n, [1.0], center=center)
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "t,var_empirical,var_sde,ks_stat,ks_crit"
    assert "n=40" in rep.summary()
    assert rep.rows[0]["ks_crit"] == pytest.approx(ks_critical(500, 500))
