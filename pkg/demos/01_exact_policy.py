"""
Exact values and the optimal accept/reject policy
=================================================

Solve a small instance by backward recursion, compare with brute-force
enumeration, then simulate the optimal policy and check that the average
revenue matches the value.
"""

# %%
import numpy as np

from knapsack_lab.demand import DemandDistribution
from knapsack_lab.dp import decision_table, enumeration_oracle, solve_dp
from knapsack_lab.simulation import simulate

# Two price classes sharing unit and double-unit requests, plus idle periods.
dist = DemandDistribution(
    atoms=[(1, 1, "3/10"), (3, 1, "1/5"), (2, 2, "1/5")],
    no_arrival_prob="3/10",
)
W, T = 4, 8
table = solve_dp(dist, W, T)
print("V(0, W) =", table.values[0, W])
print("enumeration oracle =", enumeration_oracle(dist, W, T))

# %%
# Each row of the decision table is a period, each column a remaining
# capacity; entries flag whether the cheapest unit request is accepted.
acc = decision_table(table)
print(acc.shape)

# %%
ens = simulate(dist, table, 0, W, 20000, seed=11)
x = ens.terminal
half = 1.96 * x.std(ddof=1) / np.sqrt(x.size)
print(f"simulated mean {x.mean():.4f} +/- {half:.4f}")
