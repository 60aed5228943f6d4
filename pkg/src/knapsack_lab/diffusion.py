"""Second-order (diffusion) approximation for unit demand.

Units supplied grow along a deterministic center ``s(t)`` driven by the
acceptance rate at the fluid threshold ``u_y(t, d - s(t))``; their scaled
fluctuation is a driftless diffusion with Bernoulli variance rate
``A (1 - A)``. Two rate conventions are supported: ``"accept-prob"`` uses
the probability that an arrival clears the threshold, ``"verbatim-g"``
uses the loss function ``g`` in the same slot (clamped to ``[0, 1]``).
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from . import _rng
from .demand import DemandDistribution, accept_prob, loss_g, mean_accepted_price
from .errors import ValidationError
from .fluid import FluidField
from .simulation import PathEnsemble, scaled_fluctuations

MODES = ("accept-prob", "verbatim-g")
KS_LEVEL = 0.01


def _rate_function(dist, mode):
    if mode == "accept-prob":
        return lambda thr: accept_prob(dist, thr)
    if mode == "verbatim-g":
        return lambda thr: loss_g(dist, thr)
    raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")


@dataclass(frozen=True)
class CenterPath:
    """Deterministic scaled consumption ``s(t)`` sampled on a uniform mesh."""

    times: np.ndarray
    values: np.ndarray
    capacity: float
    mode: str

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


def _mesh(t_span, dt):
    t0, t1 = map(float, t_span)
    steps = int(round((t1 - t0) / dt))
    if steps < 1 or abs(steps * dt - (t1 - t0)) > 1e-9 * max(1.0, t1 - t0):
        raise ValidationError(f"dt={dt} does not divide the interval {t_span}")
    return np.linspace(t0, t1, steps + 1)


def solve_center_ode(
    field: FluidField, dist: DemandDistribution, d, t_span=None, dt=None, mode="accept-prob"
) -> CenterPath:
    """Integrate ``ds/dt = A(u_y(t, d - s))`` with ``s(t_0) = 0`` by classical RK4.

    ``u_y`` is interpolated bilinearly from ``field``. Consumption stops
    once the capacity ``d`` is used up, so ``s`` is nondecreasing and never
    exceeds ``d``. ``dt`` defaults to ``X / 2048``.
    """
    rate_of = _rate_function(dist, mode)
    if t_span is None:
        t_span = (0.0, field.x_max)
    if dt is None:
        dt = (t_span[1] - t_span[0]) / 2048
    times = _mesh(t_span, dt)
    if times[0] < -1e-12 or times[-1] > field.x_max + 1e-12:
        raise ValidationError(f"time span {t_span} leaves the field domain [0, {field.x_max}]")
    if d < 0 or d > field.y_max + 1e-12:
        raise ValidationError(f"capacity {d} outside the field domain [0, {field.y_max}]")
    slope = field.interpolator("u_y")
    x_hi, y_hi = field.x_max, field.y_max

    def rate(t, s):
        left = d - s
        if left <= 1e-12:
            return 0.0
        thr = slope([[min(max(t, 0.0), x_hi), min(left, y_hi)]])[0]
        return float(rate_of(thr))

    values = np.empty_like(times)
    s = 0.0
    values[0] = s
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = rate(t, s)
        k2 = rate(t + h / 2, s + h * k1 / 2)
        k3 = rate(t + h / 2, s + h * k2 / 2)
        k4 = rate(t + h, s + h * k3)
        s = min(s + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6, d)
        values[k + 1] = s
    return CenterPath(times, values, float(d), mode)


@dataclass(frozen=True)
class SdeCoefficients:
    """Diffusion and price coefficients sampled on the center's mesh."""

    times: np.ndarray
    rate: np.ndarray
    sigma_values: np.ndarray
    price_values: np.ndarray
    mode: str
    clamped: bool
    experimental: bool = False

    def sigma(self, t):
        return np.interp(t, self.times, self.sigma_values)

    def price(self, t):
        return np.interp(t, self.times, self.price_values)


def sde_coefficients(field: FluidField, dist: DemandDistribution, center: CenterPath, mode=None):
    """Evaluate ``sqrt(A (1 - A))`` and the accepted mean price along the center.

    In ``"verbatim-g"`` mode a rate above one is clamped with a warning and
    ``clamped`` is set.
    """
    mode = mode or center.mode
    rate_of = _rate_function(dist, mode)
    slope = field.interpolator("u_y")
    left = center.capacity - center.values
    pts = np.column_stack(
        [np.clip(center.times, 0, field.x_max), np.clip(left, 0, field.y_max)]
    )
    thr = slope(pts)
    rate = np.where(left > 1e-12, rate_of(thr), 0.0)
    clamped = bool(np.any(rate > 1.0) or np.any(rate < 0.0))
    if clamped:
        warnings.warn(
            f"rate outside [0, 1] in {mode} mode (max {rate.max():.3f}); clamped", RuntimeWarning
        )
        rate = np.clip(rate, 0.0, 1.0)
    sigma = np.sqrt(rate * (1.0 - rate))
    price = mean_accepted_price(dist, thr)
    return SdeCoefficients(
        center.times, rate, sigma, price, mode, clamped, experimental=not dist.unit_demand
    )


@dataclass(frozen=True)
class SdePathSet:
    """Euler-Maruyama paths of the fluctuation ``Y`` and revenue fluctuation ``Z``.

    ``Y[k, j]`` and ``Z[k, j]`` are recorded at ``times[j]``.
    """

    times: np.ndarray
    center: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    dt: float
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.Y.shape[0]

    def index_of(self, t):
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 0.5 * self.dt * max(1, self._stride) + 1e-12:
            raise ValidationError(f"time {t} is not on the recorded mesh")
        return j

    @property
    def _stride(self):
        if self.times.size < 2:
            return 1
        return int(round((self.times[1] - self.times[0]) / self.dt))

    def at(self, t):
        return self.Y[:, self.index_of(t)]


def _evaluate(fn, t):
    out = np.asarray(fn(t), dtype=float)
    if out.shape != t.shape:
        out = np.array([float(fn(v)) for v in t])
    return out


def euler_maruyama(
    center,
    sigma,
    t_span,
    dt,
    n_paths,
    seed,
    *,
    price=None,
    record_every=1,
    metadata=None,
):
    """Simulate ``dY = sigma(t) dW`` and ``dZ = price(t) dY`` from zero.

    Path ``k`` takes its normals from the substream keyed by ``(seed, k)``.

    Parameters
    ----------
    center : CenterPath or callable or None
        Stored with the result for reference; the equation has no drift.
    sigma, price : callable
        Functions of time; ``price`` defaults to one.
    record_every : int
        Keep every ``record_every``-th mesh point (the last point is always
        on the kept mesh when it divides the step count).
    """
    times = _mesh(t_span, dt)
    steps = times.size - 1
    if steps % record_every:
        raise ValidationError("record_every must divide the number of steps")
    sig = _evaluate(sigma, times[:-1])
    if np.any(sig < 0):
        raise ValidationError("diffusion coefficient must be nonnegative")
    pr = np.ones(steps) if price is None else _evaluate(price, times[:-1])
    scale = sig * np.sqrt(dt)
    kept = np.arange(0, steps + 1, record_every)
    Y = np.empty((n_paths, kept.size))
    Z = np.empty((n_paths, kept.size))
    for lo in range(0, n_paths, 4096):
        hi = min(lo + 4096, n_paths)
        dY = _rng.normals(seed, lo, hi, (steps,), _rng.SDE) * scale
        y = np.concatenate([np.zeros((hi - lo, 1)), np.cumsum(dY, axis=1)], axis=1)
        z = np.concatenate([np.zeros((hi - lo, 1)), np.cumsum(dY * pr, axis=1)], axis=1)
        Y[lo:hi] = y[:, kept]
        Z[lo:hi] = z[:, kept]
    center_vals = np.zeros(kept.size) if center is None else _evaluate(center, times[kept])
    meta = dict(metadata or {})
    return SdePathSet(times[kept], center_vals, Y, Z, float(dt), int(seed), meta)


def simulate_diffusion(field, dist, d, n_paths, seed, *, dt=None, mode="accept-prob",
                       record_every=1, conjecture=False):
    """Center ODE, coefficients and Euler-Maruyama paths in one call."""
    if not dist.unit_demand and not conjecture:
        raise ValidationError(
            "diffusion limit is established for unit demand only; pass conjecture=True"
        )
    center = solve_center_ode(field, dist, d, dt=dt, mode=mode)
    coef = sde_coefficients(field, dist, center, mode)
    meta = {"mode": mode, "clamped": coef.clamped, "experimental": coef.experimental}
    sde = euler_maruyama(
        center, coef.sigma, (center.times[0], center.times[-1]), center.dt, n_paths, seed,
        price=coef.price, record_every=record_every, metadata=meta,
    )
    return center, coef, sde


def integrated_variance(sigma, t, steps=4096):
    """``int_0^t sigma(s)^2 ds`` by the trapezoid rule."""
    grid = np.linspace(0.0, t, steps + 1)
    return float(integrate.trapezoid(_evaluate(sigma, grid) ** 2, grid))


def ks_critical(n1, n2, level=KS_LEVEL):
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    return float(special.kolmogi(level) * np.sqrt((n1 + n2) / (n1 * n2)))


@dataclass(frozen=True)
class FluctuationReport:
    rows: list
    n: int
    config: dict

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "var_empirical", "var_sde", "ks_stat", "ks_crit"])
            for r in self.rows:
                writer.writerow([repr(float(r[k])) for k in
                                 ("t", "var_empirical", "var_sde", "ks_stat", "ks_crit")])

    def summary(self):
        lines = [f"fluctuation comparison at scale n={self.n}"]
        lines += [f"  {k}: {v}" for k, v in sorted(self.config.items())]
        for r in self.rows:
            verdict = "ok" if r["ks_stat"] < r["ks_crit"] else "REJECT"
            lines.append(
                f"  t={r['t']:.4g} var_emp={r['var_empirical']:.5f} var_sde={r['var_sde']:.5f} "
                f"ratio={r['var_empirical'] / r['var_sde'] if r['var_sde'] else float('nan'):.4f} "
                f"KS={r['ks_stat']:.4f} crit={r['ks_crit']:.4f} {verdict}"
            )
        return "\n".join(lines)


def fluctuation_compare(
    ensemble: PathEnsemble, sde: SdePathSet, n, times, *, center=None, conjecture=False,
    dither=True,
):
    """Compare scaled policy fluctuations with the SDE marginals.

    The policy counts live on a lattice of spacing ``1/sqrt(n)``. With
    ``dither`` each count gets an independent uniform offset on that
    spacing before the Kolmogorov-Smirnov test, which removes the lattice
    atoms without changing the mean and adds ``1/(12 n)`` to the variance.
    Reported empirical variances are those of the undithered counts.
    """
    if not ensemble.dist.unit_demand and not conjecture:
        raise ValidationError("fluctuation comparison needs a unit-demand distribution")
    if center is None:
        center = lambda t: float(np.interp(t, sde.times, sde.center))  # noqa: E731
    fluct = scaled_fluctuations(ensemble, center, n, times)
    rows = []
    for i, tau in enumerate(np.atleast_1d(times)):
        emp = fluct[:, i]
        ref = sde.at(tau)
        sample = emp
        if dither:
            u = _rng.uniforms(ensemble.seed, i, i + 1, emp.size, _rng.DITHER)[0]
            sample = emp + (u - 0.5) / np.sqrt(n)
        ks = stats.ks_2samp(sample, ref).statistic if np.ptp(ref) or np.ptp(sample) else 0.0
        rows.append(
            {
                "t": float(tau),
                "var_empirical": float(emp.var(ddof=1)),
                "var_sde": float(ref.var(ddof=1)),
                "ks_stat": float(ks),
                "ks_crit": ks_critical(emp.size, ref.size),
            }
        )
    config = {"n": n, "paths_policy": ensemble.n_paths, "paths_sde": sde.n_paths,
              "seed_policy": ensemble.seed, "seed_sde": sde.seed, "dither": dither,
              "experimental": bool(conjecture and not ensemble.dist.unit_demand)}
    config.update({f"sde_{k}": v for k, v in sde.metadata.items()})
    return FluctuationReport(rows, n, config)
