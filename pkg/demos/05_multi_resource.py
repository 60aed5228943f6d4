"""
Several resources at once
=========================

Requests consume a vector of resources. The exact recursion carries over
directly, and the fluid equation moves to a three-dimensional grid.
"""

# %%
from knapsack_lab.demand import MultiDemandDistribution
from knapsack_lab.multidim import (
    hessian_det_residual,
    multi_enumeration_oracle,
    multi_sde,
    multi_sde_coefficients,
    scaled_dp_error_multi,
    solve_centers_multi,
    solve_dp_multi,
    solve_fluid_multi,
)

dist = MultiDemandDistribution(
    dim=2,
    atoms=[(2, (1, 1), "1/4"), (1, (1, 2), "1/4"), (1, (2, 1), "1/4")],
    no_arrival_prob="1/4",
)
table = solve_dp_multi(dist, (3, 2), 5)
print("V =", table.values[0, 3, 2], " oracle =", multi_enumeration_oracle(dist, (3, 2), 5))

# %%
field = solve_fluid_multi(dist, None, (1.0, 1.0, 1.0), (160, 80, 80))
for n in (10, 20, 40):
    t = solve_dp_multi(dist, (n, n), n)
    print(f"n={n}: max gap {scaled_dp_error_multi(field, t, n):.4f}")
print("Hessian determinant residual:", hessian_det_residual(field))

# %%
centers = solve_centers_multi(field, dist, (1.0, 1.0))
coef, _ = multi_sde_coefficients(field, dist, centers)
paths = multi_sde(centers, coef, (0.0, 1.0), centers.dt, 2000, seed=3, record_every=16)
print("terminal center:", centers.values[-1])
print("terminal variance:", paths.Y[:, -1].var(axis=0, ddof=1))
