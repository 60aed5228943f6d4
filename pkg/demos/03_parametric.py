"""
Solutions from a family of characteristic lines
===============================================

For ``g(z) = exp(-gamma z)`` characteristics are straight lines labelled by
their slope. Pick the family ``f`` and evaluate ``u`` and its gradient
pointwise without any grid.
"""

# %%
import numpy as np

from knapsack_lab.fluid import evaluate_parametric, exponential_solution, solve_xi

gamma = 0.5
sol = exponential_solution(gamma, lambda xi: -2.0 * xi, (-1.5, -1e-9), anchor=(1.0, 0.5))
for point in [(0.5, 0.5), (0.2, 0.9), (0.8, 0.3)]:
    xi = solve_xi(sol, *point)
    u, ux, uy = evaluate_parametric(sol, *point)
    print(f"point {point}: xi={xi:.5f} u={u:.6f} u_x={ux:.6f} u_y={uy:.6f}")

# %%
# Check the equation u_x + g(u_y) = 0 at a few random points.
rng = np.random.default_rng(0)
pts = rng.uniform([0.2, 0.1], [0.8, 1.0], size=(5, 2))
res = [evaluate_parametric(sol, x, y) for x, y in pts]
print("max residual:", max(abs(ux + np.exp(-gamma * uy)) for _, ux, uy in res))
