"""Exact finite-horizon dynamic programming for the one-resource knapsack."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .demand import DemandDistribution, as_fraction, theta_tail
from .errors import ResourceError, ValidationError

# dense tables beyond this many cells are refused
TABLE_BUDGET = 50_000_000
ORACLE_BUDGET = 10_000_000


def backward_sweep(rewards, quantities, probs, stay, horizon):
    """Backward recursion on a dense capacity lattice.

    Parameters
    ----------
    rewards : (k,) array
        Reward earned when atom ``a`` is accepted.
    quantities : (k, m) int array
        Units of each resource the atom consumes.
    probs : (k,) array
    stay : array with the lattice shape
        Mass of "no arrival or infeasible request" at each capacity point.
    horizon : int
        Last period ``T``; the returned array has ``T + 1`` time slices.

    The last period accepts every feasible request. Earlier periods compare
    accept and reject for each feasible atom, ties going to accept.
    """
    shape = stay.shape
    values = np.zeros((horizon + 1,) + shape)
    usable = [
        a for a in range(len(rewards)) if all(q <= n - 1 for q, n in zip(quantities[a], shape))
    ]
    # lattice points where atom a fits, and the points left after taking it
    fits = {a: tuple(slice(int(q), None) for q in quantities[a]) for a in usable}
    after = {
        a: tuple(slice(0, n - int(q)) for q, n in zip(quantities[a], shape)) for a in usable
    }
    last = values[horizon]
    for a in usable:
        last[fits[a]] += probs[a] * rewards[a]
    for t in range(horizon - 1, -1, -1):
        nxt = values[t + 1]
        cur = nxt * stay
        for a in usable:
            cur[fits[a]] += probs[a] * np.maximum(rewards[a] + nxt[after[a]], nxt[fits[a]])
        values[t] = cur
    values.flags.writeable = False
    return values


def check_budget(cells, budget=TABLE_BUDGET):
    if cells > budget:
        raise ResourceError(f"table needs {cells} cells, budget is {budget}")


@dataclass(frozen=True)
class ValueTable:
    """Optimal expected revenue ``V(t, d)`` for ``t = 0..T`` and ``d = 0..W``.

    ``values[t, d]`` is indexed by time first, then remaining capacity.
    """

    dist: DemandDistribution
    horizon: int
    capacity: int
    values: np.ndarray

    def __getitem__(self, key):
        return self.values[key]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "d", "value"])
            for t in range(self.horizon + 1):
                for d in range(self.capacity + 1):
                    writer.writerow([t, d, repr(float(self.values[t, d]))])


def _validate_instance(W, T):
    if int(W) != W or W < 0:
        raise ValidationError(f"capacity must be a nonnegative integer, got {W!r}")
    if int(T) != T or T < 1:
        raise ValidationError(f"horizon must be a positive integer, got {T!r}")
    return int(W), int(T)


def solve_dp(dist: DemandDistribution, W: int, T: int) -> ValueTable:
    """Solve the knapsack recursion for capacity ``W`` and last period ``T``.

    Accepting ``(p, q)`` earns ``p * q``. Cost is O(T * W * atoms).
    """
    W, T = _validate_instance(W, T)
    check_budget((T + 1) * (W + 1))
    rewards = np.array([float(p * q) for p, q, _ in dist.atoms], dtype=float)
    quantities = dist.quantities.reshape(-1, 1)
    stay = np.array([float(dist.no_arrival_prob) + theta_tail(dist, d) for d in range(W + 1)])
    values = backward_sweep(rewards, quantities, dist.probs, stay, T)
    return ValueTable(dist, T, W, values)


def accept(table: ValueTable, t: int, d: int, p, q: int) -> bool:
    """Optimal decision for request ``(p, q)`` at period ``t < T`` with ``d`` units left."""
    if not 0 <= t < table.horizon:
        raise IndexError(f"period {t} outside 0..{table.horizon - 1}")
    if not 0 <= d <= table.capacity:
        raise IndexError(f"capacity {d} outside 0..{table.capacity}")
    if q > d:
        return False
    nxt = table.values[t + 1]
    return bool(float(as_fraction(p) * q) + nxt[d - q] >= nxt[d])


def decision_table(table: ValueTable) -> np.ndarray:
    """Boolean array ``[t, d, atom]`` of optimal accept decisions.

    Row ``T`` accepts every feasible request, like the terminal value.
    """
    dist, T, W = table.dist, table.horizon, table.capacity
    caps = np.arange(W + 1)
    out = np.zeros((T + 1, W + 1, len(dist.atoms)), dtype=bool)
    for a, (p, q, _) in enumerate(dist.atoms):
        reward = float(p * q)
        feasible = caps >= q
        src = np.where(feasible, caps - q, 0)
        out[T, :, a] = feasible
        nxt = table.values[1:]
        out[:T, :, a] = feasible & (reward + nxt[:, src] >= nxt[:, caps])
    return out


def enumeration_oracle(dist: DemandDistribution, W: int, T: int, t: int = 0) -> float:
    """Optimal expected revenue from period ``t`` by exhaustive expectimax.

    Walks every demand sequence for periods ``t..T`` and takes the better
    action at each node. Shares no code with :func:`solve_dp`.
    """
    W, T = _validate_instance(W, T)
    if not 0 <= t <= T:
        raise ValidationError(f"start period {t} outside 0..{T}")
    outcomes = [(float(p) * q, q, float(prob)) for p, q, prob in dist.atoms]
    nodes = (len(outcomes) + 1) ** (T - t + 1)
    if nodes > ORACLE_BUDGET:
        raise ResourceError(f"enumeration needs {nodes} nodes, budget is {ORACLE_BUDGET}")
    p_none = float(dist.no_arrival_prob)

    def best(s, d):
        if s > T:
            return 0.0
        reject = best(s + 1, d)
        total = p_none * reject
        for reward, q, prob in outcomes:
            if q <= d:
                total += prob * max(reward + best(s + 1, d - q), reject)
            else:
                total += prob * reject
        return total

    return best(t, W)
