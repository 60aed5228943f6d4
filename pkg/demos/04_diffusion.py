"""
Fluctuations around the fluid path
==================================

Centered and scaled consumption under the optimal policy is compared with
Euler-Maruyama paths of the driftless limiting SDE whose coefficient is
``sqrt(A (1 - A))`` along the fluid center.
"""

# %%
from knapsack_lab.demand import DemandDistribution
from knapsack_lab.diffusion import fluctuation_compare, simulate_diffusion
from knapsack_lab.dp import solve_dp
from knapsack_lab.fluid import solve_grid
from knapsack_lab.simulation import simulate

n, paths = 200, 4000


def compare(dist, d, nx, ny, times):
    field = solve_grid(dist, None, 1.0, d, nx, ny)
    center, _, sde = simulate_diffusion(field, dist, d, paths, seed=5, record_every=8)
    table = solve_dp(dist, int(d * n), n)
    ens = simulate(dist, table, 0, int(d * n), paths, seed=6)
    return fluctuation_compare(ens, sde, n, times, center=center)


# %%
# Plenty of capacity: every request is accepted, A = 1/2 throughout and the
# SDE is a scaled Brownian motion. Variances and marginals agree.
bernoulli = DemandDistribution(atoms=[(1, 1, "1/2")], no_arrival_prob="1/2")
print(compare(bernoulli, 2.0, 400, 400, [0.5, 1.0]).summary())

# %%
# Scarce capacity with two prices: the fluid gradient u_y sits just below
# the cheap price, so the optimal policy hovers on the switching curve and
# toggles the cheap class on and off. That feedback pulls consumption back
# toward the curve; the driftless SDE has no such term and overstates the
# spread. The top price bounds |g'|, so the grid needs dy >= 2 dx.
two_price = DemandDistribution(atoms=[(1, 1, "1/4"), (2, 1, "1/4")], no_arrival_prob="1/2")
print(compare(two_price, 0.4, 400, 80, [0.25, 0.5, 0.75]).summary())
