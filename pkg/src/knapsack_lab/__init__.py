"""Stochastic knapsack laboratory.

Exact dynamic programming for sequential accept/reject allocation, its
Monte Carlo evaluation, the fluid limit as a first-order PDE and the
diffusion approximation of the fluctuations around it.
"""

__version__ = "0.1.0"
