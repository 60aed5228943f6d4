"""Knapsack with ``m`` resources: exact DP plus its fluid and diffusion limits.

A request ``(P, Q^1..Q^m)`` earns ``P`` in total when accepted and
consumes ``Q^k`` units of resource ``k``. The fluid limit solves

    u_0 + G(u_1, ..., u_m) = 0,   G(z) = E[(P - z . Q)^+],

with time ``x_0`` first and one capacity coordinate per resource.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _rng
from .demand import (
    MultiDemandDistribution,
    multi_accept_prob,
    multi_consumption_rate,
    multi_G,
)
from .dp import ORACLE_BUDGET, backward_sweep, check_budget
from .errors import ArtifactIOError, NumericalError, ResourceError, ValidationError
from .diffusion import MODES, _mesh
from .fluid import estimate_slope_bounds, hessian_det, march, read_grid, write_grid

MAX_GRID_DIM = 3


@dataclass(frozen=True)
class MultiValueTable:
    """``values[t, d^1, ..., d^m]`` for ``t = 0..T`` and ``0 <= d^k <= W^k``."""

    dist: MultiDemandDistribution
    horizon: int
    capacities: tuple
    values: np.ndarray

    def to_csv(self, path):
        m = len(self.capacities)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t"] + [f"d{k + 1}" for k in range(m)] + ["value"])
            for idx in np.ndindex(self.values.shape):
                writer.writerow(list(idx) + [repr(float(self.values[idx]))])


def _capacities(dist, W):
    W = tuple(int(w) for w in np.atleast_1d(W))
    if len(W) != dist.dim:
        raise ValidationError(f"{len(W)} capacities given for {dist.dim} resources")
    if any(w < 0 for w in W):
        raise ValidationError("capacities must be nonnegative")
    return W


def solve_dp_multi(dist: MultiDemandDistribution, W, T) -> MultiValueTable:
    """Backward recursion on the full capacity lattice.

    The lattice has ``prod(W^k + 1)`` points per period, so the budget
    check fires quickly as ``m`` grows.
    """
    W = _capacities(dist, W)
    if int(T) != T or T < 1:
        raise ValidationError(f"horizon must be a positive integer, got {T!r}")
    T = int(T)
    shape = tuple(w + 1 for w in W)
    check_budget((T + 1) * int(np.prod(shape)))
    lattice = np.indices(shape)
    tail = np.zeros(shape)
    for qty, prob in zip(dist.quantities, dist.probs):
        over = np.zeros(shape, dtype=bool)
        for k in range(dist.dim):
            over |= lattice[k] < qty[k]
        tail = tail + np.where(over, prob, 0.0)
    stay = float(dist.no_arrival_prob) + tail
    rewards = np.array([float(p) for p, _, _ in dist.atoms], dtype=float)
    values = backward_sweep(rewards, dist.quantities, dist.probs, stay, T)
    return MultiValueTable(dist, T, W, values)


def multi_enumeration_oracle(dist: MultiDemandDistribution, W, T, t=0) -> float:
    """Exhaustive expectimax over demand sequences; independent of :func:`solve_dp_multi`."""
    W = _capacities(dist, W)
    outcomes = [(float(p), tuple(q), float(prob)) for p, q, prob in dist.atoms]
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
            if all(qk <= dk for qk, dk in zip(q, d)):
                rest = tuple(dk - qk for qk, dk in zip(q, d))
                total += prob * max(reward + best(s + 1, rest), reject)
            else:
                total += prob * reject
        return total

    return best(t, W)


# -- fluid limit ---------------------------------------------------------------


@dataclass(frozen=True)
class MultiFluidField:
    """Grid solution; ``grids[0]`` is time, ``grids[k]`` capacity of resource ``k``."""

    grids: tuple
    u: np.ndarray
    gradient: tuple

    @property
    def dim(self):
        return len(self.grids) - 1

    @property
    def extents(self):
        return tuple(float(g[-1]) for g in self.grids)

    def interpolator(self, which="u"):
        """Multilinear interpolant of ``u`` (``"u"``) or of gradient component ``which``."""
        data = self.u if which == "u" else self.gradient[which]
        return RegularGridInterpolator(self.grids, data, method="linear")

    def to_binary(self, path):
        """Binary grid with fields ``u`` then ``u_0 .. u_m``."""
        write_grid(path, self.extents, [self.u, *self.gradient])

    @classmethod
    def from_binary(cls, path):
        extents, fields = read_grid(path)
        if len(fields) != len(extents) + 1:
            raise ArtifactIOError(f"{path} holds {len(fields)} fields for {len(extents)} axes")
        grids = tuple(np.linspace(0.0, e, n) for e, n in zip(extents, fields[0].shape))
        return cls(grids, fields[0], tuple(fields[1:]))


def solve_fluid_multi(G, h, extents, grid, *, slope_bounds=None, scheme="upwind", boundary=None):
    """March the multi-resource fluid equation backward from ``x_0 = X``.

    Parameters
    ----------
    G : MultiDemandDistribution or callable
        Callables receive the capacity gradient stacked on a leading axis.
    h : callable or None
        ``h(x_1, ..., x_m)`` on meshgrid arrays; ``None`` means zero.
    extents : sequence
        ``(X, Y_1, ..., Y_m)``.
    grid : sequence of int
        Intervals per axis, time first.
    boundary : callable, optional
        ``boundary(x_0, x_1, ..., x_m)`` for the ``x_k = 0`` faces; zero by
        default.
    """
    extents = [float(e) for e in extents]
    grid = [int(n) for n in grid]
    m = len(extents) - 1
    if len(grid) != m + 1:
        raise ValidationError("grid and extents must have the same number of axes")
    if m < 1 or m > MAX_GRID_DIM:
        raise ValidationError(f"grid solver supports 1..{MAX_GRID_DIM} resources, got {m}")
    if isinstance(G, MultiDemandDistribution):
        if G.dim != m:
            raise ValidationError(f"distribution has {G.dim} resources, grid has {m}")
        bounds = G.slope_bounds() if slope_bounds is None else slope_bounds
        G = partial(multi_G, G)
    else:
        bounds = slope_bounds
    grids = [np.linspace(0.0, e, n + 1) for e, n in zip(extents, grid)]
    spacings = [e / n for e, n in zip(extents[1:], grid[1:])]
    mesh = np.meshgrid(*grids[1:], indexing="ij")
    terminal = np.zeros(mesh[0].shape) if h is None else np.asarray(h(*mesh), dtype=float)
    if bounds is None:
        lower = [min(0.0, float(np.diff(terminal, axis=k).min()) / spacings[k]) for k in range(m)]
        bounds = estimate_slope_bounds(G, lower)
    face = None
    if boundary is not None:
        X = extents[0]

        def face(s, _u):
            return np.asarray(boundary(X - s, *mesh), dtype=float)

    u = march(G, terminal, spacings, extents[0], grid[0], list(bounds), scheme, face)
    grad = tuple(np.gradient(u, *grids, edge_order=1))
    u.flags.writeable = False
    for arr in grad:
        arr.flags.writeable = False
    return MultiFluidField(tuple(grids), u, grad)


def hessian_det_residual(field: MultiFluidField, eps=1e-12):
    """Normalised ``max |det D^2 u|`` over interior nodes of the full space-time grid."""
    spacings = [g[1] - g[0] for g in field.grids]
    det, scale = hessian_det(field.u, spacings)
    peak = float(np.max(np.abs(det))) if det.size else 0.0
    return peak / max(scale, eps)


def scaled_dp_error_multi(field: MultiFluidField, table: MultiValueTable, n):
    """Largest ``|V(i, j) / n - u(i / n, j / n)|`` over lattice points inside the field."""
    limits = [min(table.horizon, int(np.floor(field.extents[0] * n + 1e-9)))]
    limits += [
        min(w, int(np.floor(e * n + 1e-9))) for w, e in zip(table.capacities, field.extents[1:])
    ]
    idx = np.indices([l + 1 for l in limits])
    pts = np.stack([a.ravel() / n for a in idx], axis=1)
    approx = field.interpolator("u")(pts).reshape(idx.shape[1:])
    exact = table.values[tuple(slice(0, l + 1) for l in limits)] / n
    return float(np.max(np.abs(exact - approx)))


# -- parametric construction -----------------------------------------------------


@dataclass(frozen=True)
class ParametricSolutionMulti:
    """Generating functions for the ``m``-dimensional parametric solution.

    Characteristics are ``x_j - xi_j x_0 = M^j(xi)`` with
    ``M = (D^2 R)^{-1} DL``; along them ``u_0 = R - xi . DR`` and
    ``u_j = R_j``. ``jac_M`` may be omitted, in which case it is formed by
    central differences.
    """

    R: object
    grad_R: object
    hess_R: object
    L: object
    grad_L: object
    jac_M: object = None
    xi_guess: object = None


def _char_map(sol, xi):
    H = np.atleast_2d(sol.hess_R(xi))
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"Hessian of R is singular at xi={xi} (condition {cond:.3g})")
    return np.linalg.solve(H, np.atleast_1d(sol.grad_L(xi)))


def _char_jacobian(sol, xi):
    if sol.jac_M is not None:
        return np.atleast_2d(sol.jac_M(xi))
    m = xi.size
    J = np.empty((m, m))
    for k in range(m):
        step = 1e-6 * (1.0 + abs(xi[k]))
        e = np.zeros(m)
        e[k] = step
        J[:, k] = (_char_map(sol, xi + e) - _char_map(sol, xi - e)) / (2 * step)
    return J


def solve_characteristic(sol: ParametricSolutionMulti, point, tol=1e-13, max_iter=60):
    """Newton iteration for ``xi`` with ``x - xi x_0 - M(xi) = 0``."""
    point = np.asarray(point, dtype=float)
    x0, x = point[0], point[1:]
    xi = np.zeros(x.size) if sol.xi_guess is None else np.array(sol.xi_guess, dtype=float)
    for _ in range(max_iter):
        F = x - xi * x0 - _char_map(sol, xi)
        if np.max(np.abs(F)) <= tol * (1.0 + np.max(np.abs(x))):
            return xi
        J = -x0 * np.eye(x.size) - _char_jacobian(sol, xi)
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Newton system at xi={xi}") from exc
        xi = xi + step
    F = x - xi * x0 - _char_map(sol, xi)
    if np.max(np.abs(F)) <= tol * (1.0 + np.max(np.abs(x))):
        return xi
    raise NumericalError(f"Newton did not converge; last xi={xi}, residual={np.abs(F).max():.3g}")


def evaluate_parametric_multi(sol: ParametricSolutionMulti, point):
    """Return ``(u, grad)`` with ``grad = (u_0, u_1, ..., u_m)``.

    ``u = x_0 R + DR . (x - xi x_0) - L`` up to an additive constant; its
    differential is exactly the stated gradient on the characteristic.
    """
    point = np.asarray(point, dtype=float)
    xi = solve_characteristic(sol, point)
    dR = np.atleast_1d(sol.grad_R(xi))
    R = float(sol.R(xi))
    u0 = R - float(xi @ dR)
    x0, x = point[0], point[1:]
    u = x0 * R + float(dR @ (x - xi * x0)) - float(sol.L(xi))
    return u, np.concatenate([[u0], dR])


# -- centers and component diffusions ----------------------------------------------


@dataclass(frozen=True)
class MultiCenterPath:
    """Scaled consumption ``s^k(t)``; ``values[j, k]`` is component ``k`` at ``times[j]``."""

    times: np.ndarray
    values: np.ndarray
    capacities: np.ndarray
    mode: str

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def __call__(self, t):
        cols = [np.interp(t, self.times, self.values[:, k]) for k in range(self.values.shape[1])]
        return np.stack(cols, axis=-1)


def _rates(dist, mode):
    """Per-component consumption rate and per-component Bernoulli parameter at prices ``z``."""
    if mode == "accept-prob":
        return (lambda z: multi_consumption_rate(dist, z),
                lambda z: np.broadcast_to(multi_accept_prob(dist, z), z.shape))
    if mode == "verbatim-g":
        # G on the full gradient vector fills every component's slot
        def full(z):
            return np.broadcast_to(multi_G(dist, z), z.shape)

        return full, full
    raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")


def _check_domain(field, d, times):
    if times[0] < -1e-12 or times[-1] > field.extents[0] + 1e-12:
        raise ValidationError(f"time span leaves the field domain [0, {field.extents[0]}]")
    if np.any(d < 0) or np.any(d > np.array(field.extents[1:]) + 1e-12):
        raise ValidationError(f"capacities {d} outside the field domain")


def solve_centers_multi(field: MultiFluidField, dist, d, t_span=None, dt=None, mode="accept-prob"):
    """Joint RK4 for ``ds^k/dt = rate_k(grad u(t, d - s(t)))`` with ``s(t_0) = 0``.

    Every component's rate depends on the whole capacity gradient, so the
    system is stepped as one vector. Consumption stops once any resource
    is exhausted. ``dt`` defaults to ``X / 2048``.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.size != field.dim:
        raise ValidationError(f"{d.size} capacities for a {field.dim}-resource field")
    rate_of, _ = _rates(dist, mode)
    X = field.extents[0]
    if t_span is None:
        t_span = (0.0, X)
    if dt is None:
        dt = (t_span[1] - t_span[0]) / 2048
    times = _mesh(t_span, dt)
    _check_domain(field, d, times)
    slopes = [field.interpolator(k) for k in range(1, field.dim + 1)]
    hi = np.array(field.extents[1:])

    def rate(t, s):
        left = d - s
        if np.any(left <= 1e-12):
            return np.zeros_like(s)
        pt = [np.concatenate([[min(max(t, 0.0), X)], np.minimum(left, hi)])]
        z = np.array([f(pt)[0] for f in slopes])
        return np.asarray(rate_of(z), dtype=float)

    values = np.empty((times.size, d.size))
    s = np.zeros(d.size)
    values[0] = s
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = rate(t, s)
        k2 = rate(t + h / 2, s + h * k1 / 2)
        k3 = rate(t + h / 2, s + h * k2 / 2)
        k4 = rate(t + h, s + h * k3)
        s = np.minimum(s + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6, d)
        values[k + 1] = s
    return MultiCenterPath(times, values, d, mode)


def multi_sde_coefficients(field: MultiFluidField, dist, centers: MultiCenterPath, mode=None):
    """Per-component Bernoulli parameters along the centers, shape ``(n_t, m)``.

    ``"accept-prob"`` uses the probability that an arrival's reward covers
    its cost at the gradient prices; ``"verbatim-g"`` puts ``G`` of the full
    gradient in every slot and clamps to ``[0, 1]`` with a warning.
    Returns ``(coefficients, clamped)``.
    """
    mode = mode or centers.mode
    _, param_of = _rates(dist, mode)
    left = centers.capacities - centers.values
    cols = [np.clip(centers.times, 0, field.extents[0])]
    cols += [np.clip(left[:, k], 0, field.extents[k + 1]) for k in range(field.dim)]
    pts = np.column_stack(cols)
    z = np.stack([field.interpolator(k)(pts) for k in range(1, field.dim + 1)])
    alive = np.all(left > 1e-12, axis=1)
    out = np.where(alive[:, None], np.asarray(param_of(z), dtype=float).T, 0.0)
    clamped = bool(np.any(out > 1.0) or np.any(out < 0.0))
    if clamped:
        warnings.warn(f"coefficient outside [0, 1] in {mode} mode; clamped", RuntimeWarning)
        out = np.clip(out, 0.0, 1.0)
    return out, clamped


@dataclass(frozen=True)
class MultiSdePathSet:
    """``Y[path, j, k]``: fluctuation of component ``k`` at ``times[j]``."""

    times: np.ndarray
    Y: np.ndarray
    dt: float
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.Y.shape[0]

    def at(self, t):
        j = int(np.argmin(np.abs(self.times - t)))
        return self.Y[:, j, :]


def multi_sde(centers, coefficients, t_span, dt, n_paths, seed, *, record_every=1, metadata=None):
    """Euler-Maruyama for ``dY^k = sqrt(c_k (1 - c_k)) dW^k`` with independent ``W^k``.

    Parameters
    ----------
    centers : MultiCenterPath or None
        Kept for reference only; the equations have no drift.
    coefficients : array or callable
        Bernoulli parameters, either ``(n_steps + 1, m)`` on the time mesh or
        a function of time returning an ``m``-vector. Values outside
        ``[0, 1]`` are clamped with a warning.
    """
    times = _mesh(t_span, dt)
    steps = times.size - 1
    if steps % record_every:
        raise ValidationError("record_every must divide the number of steps")
    if callable(coefficients):
        c = np.array([np.atleast_1d(coefficients(t)) for t in times], dtype=float)
    else:
        c = np.asarray(coefficients, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
    if c.shape[0] != times.size:
        raise ValidationError("coefficients do not match the time mesh")
    meta = dict(metadata or {})
    if np.any(c > 1) or np.any(c < 0):
        warnings.warn("SDE coefficient outside [0, 1]; clamped", RuntimeWarning)
        meta["clamped"] = True
        c = np.clip(c, 0.0, 1.0)
    m = c.shape[1]
    scale = np.sqrt(c[:-1] * (1.0 - c[:-1])) * np.sqrt(dt)
    kept = np.arange(0, steps + 1, record_every)
    Y = np.empty((n_paths, kept.size, m))
    for lo in range(0, n_paths, 4096):
        hi = min(lo + 4096, n_paths)
        dY = _rng.normals(seed, lo, hi, (steps, m), _rng.SDE) * scale
        y = np.concatenate([np.zeros((hi - lo, 1, m)), np.cumsum(dY, axis=1)], axis=1)
        Y[lo:hi] = y[:, kept]
    return MultiSdePathSet(times[kept], Y, float(dt), int(seed), meta)
