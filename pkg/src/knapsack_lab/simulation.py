"""Monte Carlo evaluation of the optimal admission policy."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _rng
from .demand import DemandDistribution
from .dp import ValueTable, decision_table, solve_dp
from .errors import ValidationError

CHUNK = 8192


@dataclass(frozen=True)
class PathEnsemble:
    """Seeded trajectories of the optimal policy started at ``(start, capacity)``.

    ``rewards[k, j]`` is the revenue collected by path ``k`` through period
    ``start + j`` inclusive, ``j = 0..T-start``, so the last column is the
    terminal reward. ``supplied[k, j]`` counts units supplied in periods
    ``start .. start + j - 1``; it has one more column than ``rewards`` and
    starts at zero.
    """

    dist: DemandDistribution
    start: int
    capacity: int
    horizon: int
    seed: int
    rewards: np.ndarray
    supplied: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.rewards.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.rewards[:, -1]

    def summary(self):
        """Per-period mean, variance and a normal 95% interval for the mean reward."""
        mean = self.rewards.mean(axis=0)
        var = self.rewards.var(axis=0, ddof=1) if self.n_paths > 1 else np.zeros_like(mean)
        half = 1.959963984540054 * np.sqrt(var / self.n_paths)
        s = np.arange(self.start, self.horizon + 1)
        return s, mean, var, mean - half, mean + half

    def write_summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["s", "mean", "var", "ci_lo", "ci_hi"])
            for row in zip(*self.summary()):
                writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])

    def write_paths_csv(self, path):
        """Full dump; ``supplied`` is the running total through period ``s``."""
        s_values = range(self.start, self.horizon + 1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "s", "reward", "supplied"])
            for k in range(self.n_paths):
                for j, s in enumerate(s_values):
                    writer.writerow(
                        [k, s, repr(float(self.rewards[k, j])), int(self.supplied[k, j + 1])]
                    )


def _sample_atoms(dist, u):
    """Map uniforms to atom indices, ``-1`` meaning no arrival."""
    edges = np.cumsum(np.concatenate(([float(dist.no_arrival_prob)], dist.probs)))
    idx = np.searchsorted(edges, u, side="right")
    return np.minimum(idx, len(dist.atoms)) - 1


def _run_chunk(dist, decisions, rewards_by_atom, qty, t, d, T, seed, lo, hi):
    steps = T - t + 1
    atoms = _sample_atoms(dist, _rng.uniforms(seed, lo, hi, steps, _rng.POLICY))
    n = hi - lo
    cap = np.full(n, d, dtype=np.int64)
    reward = np.zeros(n)
    used = np.zeros(n, dtype=np.int64)
    rewards = np.empty((n, steps))
    supplied = np.zeros((n, steps + 1), dtype=np.int64)
    for j in range(steps):
        a = atoms[:, j]
        arrived = a >= 0
        a0 = np.where(arrived, a, 0)
        take = arrived & decisions[t + j, cap, a0]
        q = np.where(take, qty[a0], 0)
        reward = reward + np.where(take, rewards_by_atom[a0], 0.0)
        cap = cap - q
        used = used + q
        rewards[:, j] = reward
        supplied[:, j + 1] = used
    return rewards, supplied


def simulate(
    dist: DemandDistribution,
    table: ValueTable,
    t: int,
    d: int,
    n_paths: int,
    seed: int,
    *,
    workers: int = 1,
) -> PathEnsemble:
    """Simulate ``n_paths`` runs of the optimal policy from period ``t`` with ``d`` units.

    Path ``k`` draws its arrivals from the substream keyed by ``(seed, k)``,
    so the ensemble does not depend on ``workers``.
    """
    if table.dist != dist:
        raise ValidationError("value table was solved for a different distribution")
    if not 0 <= t <= table.horizon:
        raise ValidationError(f"start period {t} outside 0..{table.horizon}")
    if not 0 <= d <= table.capacity:
        raise ValidationError(f"capacity {d} outside table range 0..{table.capacity}")
    if n_paths < 1:
        raise ValidationError("n_paths must be positive")
    T = table.horizon
    decisions = decision_table(table)
    rewards_by_atom = np.array([float(p * q) for p, q, _ in dist.atoms] or [0.0])
    qty = dist.quantities if dist.atoms else np.zeros(1, dtype=np.int64)
    if not dist.atoms:
        decisions = np.zeros(decisions.shape[:2] + (1,), dtype=bool)
    bounds = [(lo, min(lo + CHUNK, n_paths)) for lo in range(0, n_paths, CHUNK)]

    def job(b):
        return _run_chunk(dist, decisions, rewards_by_atom, qty, t, d, T, seed, *b)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    rewards = np.concatenate([p[0] for p in parts])
    supplied = np.concatenate([p[1] for p in parts])
    rewards.flags.writeable = False
    supplied.flags.writeable = False
    return PathEnsemble(dist, t, d, T, int(seed), rewards, supplied)


def _scaled(value, n, name):
    scaled = value * n
    if abs(scaled - round(scaled)) > 1e-9:
        raise ValidationError(f"{name}={value} times scale {n} is not an integer")
    return int(round(scaled))


def bootstrap_variance_ci(samples, seed, n_boot=200, level=0.95, batch=20):
    """Percentile bootstrap interval for the sample variance."""
    gen = _rng.substream(seed, 0, _rng.BOOTSTRAP)
    n = samples.size
    stats = []
    for start in range(0, n_boot, batch):
        m = min(batch, n_boot - start)
        idx = gen.integers(0, n, size=(m, n))
        stats.append(samples[idx].var(axis=1, ddof=1))
    stats = np.concatenate(stats)
    alpha = (1 - level) / 2
    return float(np.quantile(stats, alpha)), float(np.quantile(stats, 1 - alpha))


def variance_scaling(dist, t, d, T, n_list, n_paths, seed, *, n_boot=200, workers=1):
    """Sample variance of the scaled terminal reward divided by the scale.

    For each ``n`` the instance ``(n t, n d, n T)`` is solved exactly and
    simulated; the rows hold ``n``, ``Var/n`` and a bootstrap interval for
    ``Var/n``. The ratio stays bounded when the variance grows linearly.
    """
    rows = []
    for n in n_list:
        tn, dn, Tn = _scaled(t, n, "t"), _scaled(d, n, "d"), _scaled(T, n, "T")
        table = solve_dp(dist, dn, Tn)
        ens = simulate(dist, table, tn, dn, n_paths, seed, workers=workers)
        x = ens.terminal
        var = float(x.var(ddof=1))
        if var > 0:
            lo, hi = bootstrap_variance_ci(x, seed, n_boot)
        else:
            lo = hi = 0.0
        rows.append({"n": n, "ratio": var / n, "ci_lo": lo / n, "ci_hi": hi / n})
    return rows


def scaled_fluctuations(ensemble: PathEnsemble, center, n, times):
    """``(y(floor(n tau)) - n s(tau)) / sqrt(n)`` for each path and each ``tau``.

    ``y`` counts units supplied since the ensemble's start period and
    ``center`` maps scaled time to the expected scaled consumption.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.empty((ensemble.n_paths, times.size))
    for i, tau in enumerate(times):
        s = int(np.floor(n * tau + 1e-9))
        j = s - ensemble.start
        if j < 0 or j >= ensemble.supplied.shape[1]:
            raise ValidationError(
                f"time {tau} maps to period {s}, outside {ensemble.start}..{ensemble.horizon + 1}"
            )
        out[:, i] = (ensemble.supplied[:, j] - n * center(tau)) / np.sqrt(n)
    return out
