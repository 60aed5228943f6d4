"""Fluid limit of the scaled value function.

The limit ``u(x, y)`` of ``V(n x, n y) / n`` solves

    u_x + g(u_y) = 0,   u(X, y) = h(y),   u(x, 0) = 0,

where ``x`` is scaled elapsed time, ``y`` scaled remaining capacity and
``g`` the loss function of the demand law. Two solvers live here: an
explicit monotone march backward from ``x = X`` and the parametric
construction along straight characteristics ``y - x xi = f(xi)``.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .demand import DemandDistribution, loss_g
from .errors import ArtifactIOError, CFLError, CharacteristicCrossingError, ValidationError

EPS = 1e-300
SCHEMES = ("upwind", "lax-friedrichs")


# -- explicit march ----------------------------------------------------------


def _one_sided_gradients(u, spacings):
    """Backward and forward differences along every axis.

    At the first node the backward difference copies the forward one and at
    the last node the forward difference copies the backward one.
    """
    minus, plus = [], []
    for k, h in enumerate(spacings):
        d = np.diff(u, axis=k) / h
        first = np.take(d, [0], axis=k)
        last = np.take(d, [-1], axis=k)
        minus.append(np.concatenate([first, d], axis=k))
        plus.append(np.concatenate([d, last], axis=k))
    return np.stack(minus), np.stack(plus)


def _face(axis, ndim, index=0):
    sl = [slice(None)] * ndim
    sl[axis] = index
    return tuple(sl)


def estimate_slope_bounds(G, lower):
    """Secant bound on ``|dG/dz_k|`` for ``z >= lower``, valid for convex nonincreasing ``G``."""
    lower = np.asarray(lower, dtype=float)
    base = float(G(lower))
    out = np.empty(lower.size)
    for k in range(lower.size):
        delta = 1e-6 * (1.0 + abs(lower[k]))
        z = lower.copy()
        z[k] -= delta
        out[k] = max((float(G(z)) - base) / delta, 0.0)
    return out


def march(G, terminal, spacings, extent, steps, slopes, scheme="upwind", boundary=None):
    """March ``u_s = G(grad u)`` in time-to-go ``s`` from ``s = 0`` to ``s = extent``.

    Parameters
    ----------
    G : callable
        Hamiltonian; takes the gradient stacked along a leading axis.
    terminal : ndarray
        Values at ``s = 0`` on the capacity lattice.
    spacings : sequence of float
        Lattice step along each capacity axis.
    slopes : sequence of float
        Bounds on ``|dG/dz_k|`` used for the CFL test and the
        Lax-Friedrichs dissipation.
    boundary : callable, optional
        ``boundary(s, lattice_values)`` returns the lattice array whose
        ``index 0`` faces are imposed after each step; zero faces if omitted.

    Returns
    -------
    ndarray of shape ``(steps + 1,) + terminal.shape``, ordered by elapsed
    time, i.e. the last slice is ``terminal``.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    ds = extent / steps
    courant = ds * sum(a / h for a, h in zip(slopes, spacings))
    if courant > 1 + 1e-6:
        need = int(np.ceil(extent * sum(a / h for a, h in zip(slopes, spacings)) - 1e-6))
        raise CFLError(
            f"time step {ds:.3g} violates the CFL bound (Courant number {courant:.3f}); "
            f"use at least {need} time steps",
            need,
        )
    ndim = terminal.ndim
    out = np.empty((steps + 1,) + terminal.shape)
    u = np.array(terminal, dtype=float)
    out[steps] = u
    half_alpha = [0.5 * a for a in slopes]
    for i in range(1, steps + 1):
        minus, plus = _one_sided_gradients(u, spacings)
        if scheme == "upwind":
            u = u + ds * G(minus)
        else:
            rate = G(0.5 * (minus + plus))
            for k in range(ndim):
                rate = rate + half_alpha[k] * (plus[k] - minus[k])
            u = u + ds * rate
        face_values = boundary(i * ds, u) if boundary is not None else None
        for k in range(ndim):
            face = _face(k, ndim)
            u[face] = 0.0 if face_values is None else face_values[face]
        out[steps - i] = u
    return out


# -- one-dimensional field -----------------------------------------------------


@dataclass(frozen=True)
class FluidField:
    """Grid solution on ``[0, X] x [0, Y]``; arrays are indexed ``[i_x, j_y]``."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    u_x: np.ndarray
    u_y: np.ndarray

    @property
    def x_max(self):
        return float(self.x[-1])

    @property
    def y_max(self):
        return float(self.y[-1])

    @property
    def nx(self):
        return self.x.size - 1

    @property
    def ny(self):
        return self.y.size - 1

    def interpolator(self, name="u"):
        """Bilinear interpolant of ``u``, ``u_x`` or ``u_y``."""
        return RegularGridInterpolator((self.x, self.y), getattr(self, name), method="linear")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,y,u,u_x,u_y\n")
            for i, xv in enumerate(self.x):
                for j, yv in enumerate(self.y):
                    fh.write(
                        f"{xv!r},{yv!r},{self.u[i, j]!r},{self.u_x[i, j]!r},{self.u_y[i, j]!r}\n"
                    )

    def to_binary(self, path):
        write_grid(path, (self.x_max, self.y_max), [self.u, self.u_x, self.u_y])

    @classmethod
    def from_binary(cls, path):
        extents, fields = read_grid(path)
        X, Y = extents
        u, ux, uy = fields
        return cls(np.linspace(0, X, u.shape[0]), np.linspace(0, Y, u.shape[1]), u, ux, uy)


# Binary grid layout, little-endian:
#   8 bytes  magic b"KSLGRID1"
#   uint32   number of axes A
#   uint32   number of stored fields F
#   A x uint64  node counts per axis
#   A x float64 extents (upper bounds; lower bounds are 0)
#   F blocks of prod(node counts) float64 in row-major order
MAGIC = b"KSLGRID1"


def write_grid(path, extents, fields):
    shape = fields[0].shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(shape), len(fields)))
        fh.write(struct.pack(f"<{len(shape)}Q", *shape))
        fh.write(struct.pack(f"<{len(shape)}d", *map(float, extents)))
        for arr in fields:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_grid(path):
    try:
        blob = open(path, "rb").read()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read grid file {path}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise ArtifactIOError(f"{path} is not a grid file")
    n_axes, n_fields = struct.unpack_from("<II", blob, 8)
    pos = 16
    shape = struct.unpack_from(f"<{n_axes}Q", blob, pos)
    pos += 8 * n_axes
    extents = struct.unpack_from(f"<{n_axes}d", blob, pos)
    pos += 8 * n_axes
    size = int(np.prod(shape))
    fields = []
    for _ in range(n_fields):
        fields.append(np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape))
        pos += 8 * size
    if pos != len(blob):
        raise ArtifactIOError(f"{path} has {len(blob) - pos} trailing bytes")
    return extents, fields


def _as_loss(g):
    if isinstance(g, DemandDistribution):
        return partial(loss_g, g), g.slope_bound()
    return g, None


def solve_grid(
    g, h, X, Y, nx, ny, *, slope_bound=None, scheme="upwind", check_h=True
) -> FluidField:
    """Solve ``u_x + g(u_y) = 0`` on an ``(nx + 1) x (ny + 1)`` node grid.

    Parameters
    ----------
    g : DemandDistribution or callable
        Loss function, convex and nonincreasing. A distribution supplies
        both ``g`` and an exact slope bound.
    h : callable or None
        Terminal values ``u(X, y)``; ``None`` means zero.
    slope_bound : float, optional
        Bound on ``|g'|`` over the reachable gradients; estimated by a
        secant at the smallest terminal slope when omitted.

    Raises
    ------
    CFLError
        When ``nx`` is too small for the requested ``ny``.
    """
    loss, exact_bound = _as_loss(g)
    if nx < 1 or ny < 1:
        raise ValidationError("grid sizes must be positive")
    y = np.linspace(0.0, Y, ny + 1)
    x = np.linspace(0.0, X, nx + 1)
    terminal = np.zeros(ny + 1) if h is None else np.asarray(h(y), dtype=float)
    dh = np.diff(terminal)
    if check_h and (np.any(dh < -1e-12) or abs(terminal[0]) > 1e-12):
        raise ValidationError("terminal data must be nondecreasing with h(0) = 0")
    if slope_bound is None:
        slope_bound = exact_bound
    if slope_bound is None:
        lower = min(0.0, float(dh.min()) * ny / Y)
        slope_bound = float(estimate_slope_bounds(lambda z: loss(z[0]), [lower])[0])

    def G(p):
        return loss(p[0])

    u = march(G, terminal, [Y / ny], X, nx, [slope_bound], scheme)
    u_x, u_y = np.gradient(u, x, y, edge_order=1)
    for arr in (u, u_x, u_y):
        arr.flags.writeable = False
    return FluidField(x, y, u, u_x, u_y)


def pde_residual(field: FluidField, g):
    """``|u_x + g(u_y)|`` on interior nodes, from the field's difference quotients."""
    loss, _ = _as_loss(g)
    ux = field.u_x[1:-1, 1:-1]
    uy = field.u_y[1:-1, 1:-1]
    return np.abs(ux + loss(uy))


def hessian_det(u, spacings):
    """Determinant of the second-difference Hessian at interior nodes.

    Returns ``(det, scale)`` where ``scale`` is the largest magnitude of any
    single product in the Leibniz expansion, used to normalise ``det``.
    """
    n = u.ndim
    inner = tuple(slice(1, -1) for _ in range(n))
    H = {}
    for a in range(n):
        fwd = _shift(u, a, 1)
        bwd = _shift(u, a, -1)
        H[a, a] = (fwd - 2 * u[inner] + bwd) / spacings[a] ** 2
        for b in range(a + 1, n):
            pp = _shift(u, a, 1, b, 1)
            pm = _shift(u, a, 1, b, -1)
            mp = _shift(u, a, -1, b, 1)
            mm = _shift(u, a, -1, b, -1)
            H[a, b] = H[b, a] = (pp - pm - mp + mm) / (4 * spacings[a] * spacings[b])
    det = np.zeros(u[inner].shape)
    scale = 0.0
    for perm in itertools.permutations(range(n)):
        term = H[0, perm[0]]
        for i in range(1, n):
            term = term * H[i, perm[i]]
        det = det + _perm_sign(perm) * term
        scale = max(scale, float(np.max(np.abs(term))) if term.size else 0.0)
    return det, scale


def _shift(u, *pairs):
    """Interior view of ``u`` displaced by the given (axis, offset) pairs."""
    offsets = dict(zip(pairs[::2], pairs[1::2]))
    sl = []
    for k, size in enumerate(u.shape):
        o = offsets.get(k, 0)
        sl.append(slice(1 + o, size - 1 + o))
    return u[tuple(sl)]


def _perm_sign(perm):
    sign, seen = 1, list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def monge_ampere_residual(field: FluidField, eps=1e-12):
    """``u_xx u_yy - u_xy^2`` at interior nodes and its normalised maximum.

    The maximum absolute residual is divided by the largest of
    ``|u_xx u_yy|`` and ``u_xy^2`` over the grid (floored at ``eps``).
    """
    det, scale = hessian_det(field.u, [field.x[1] - field.x[0], field.y[1] - field.y[0]])
    peak = float(np.max(np.abs(det))) if det.size else 0.0
    return det, peak / max(scale, eps)


def scaled_dp_error(field: FluidField, table, n):
    """Largest ``|V(i, j) / n - u(i / n, j / n)|`` over lattice nodes inside the field."""
    imax = min(table.horizon, int(np.floor(field.x_max * n + 1e-9)))
    jmax = min(table.capacity, int(np.floor(field.y_max * n + 1e-9)))
    ti, dj = np.meshgrid(np.arange(imax + 1), np.arange(jmax + 1), indexing="ij")
    pts = np.column_stack([(ti / n).ravel(), (dj / n).ravel()])
    approx = field.interpolator("u")(pts).reshape(ti.shape)
    exact = table.values[: imax + 1, : jmax + 1] / n
    return float(np.max(np.abs(exact - approx)))


# -- parametric construction ----------------------------------------------------


@dataclass(frozen=True)
class ParametricSolution:
    """Solution built from a generating function ``R`` and a line family ``f``.

    Characteristics are the lines ``y - x xi = f(xi)`` carrying
    ``u_y = R'(xi)`` and ``u_x = R(xi) - xi R'(xi)``. ``u`` is fixed by its
    value at ``anchor``. ``xi_domain`` must be an interval on which
    ``f(xi) + x xi`` is monotone for the points of interest.
    """

    R: object
    dR: object
    f: object
    xi_domain: tuple
    anchor: tuple = (0.0, 0.0)
    anchor_value: float = 0.0
    scan: int = 64


def solve_xi(sol: ParametricSolution, x, y, tol=1e-12):
    """Characteristic parameter through ``(x, y)`` by bisection."""
    lo, hi = map(float, sol.xi_domain)

    def phi(xi):
        return sol.f(xi) + x * xi - y

    grid = np.linspace(lo, hi, sol.scan + 1)
    vals = np.array([phi(v) for v in grid])
    roots = []
    for i in range(sol.scan):
        if vals[i] == 0.0:
            roots.append((grid[i], grid[i]))
        elif vals[i] * vals[i + 1] < 0:
            roots.append((grid[i], grid[i + 1]))
    if vals[-1] == 0.0:
        roots.append((grid[-1], grid[-1]))
    if not roots:
        raise CharacteristicCrossingError(f"no characteristic reaches ({x}, {y}) in {sol.xi_domain}")
    if len(roots) > 1:
        raise CharacteristicCrossingError(
            f"{len(roots)} characteristics cross at ({x}, {y}); the parametric solution is not single-valued"
        )
    a, b = roots[0]
    fa = phi(a)
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = phi(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (fa < 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def parametric_gradient(sol: ParametricSolution, x, y):
    xi = solve_xi(sol, x, y)
    slope = sol.dR(xi)
    return sol.R(xi) - xi * slope, slope


def evaluate_parametric(sol: ParametricSolution, x, y):
    """Return ``(u, u_x, u_y)`` at ``(x, y)``.

    ``u`` is the anchor value plus the line integral of
    ``u_x dx + u_y dy`` along the segment from the anchor, by 48-point
    Gauss-Legendre quadrature.
    """
    x0, y0 = sol.anchor
    dx, dy = x - x0, y - y0
    u = float(sol.anchor_value)
    if dx or dy:
        total = 0.0
        for node, w in zip(_GL_NODES, _GL_WEIGHTS):
            tau = 0.5 * (node + 1)
            gx, gy = parametric_gradient(sol, x0 + tau * dx, y0 + tau * dy)
            total += w * (gx * dx + gy * dy)
        u += 0.5 * total
    ux, uy = parametric_gradient(sol, x, y)
    return u, ux, uy


def exponential_solution(gamma, f, xi_domain, anchor=(0.0, 0.0), anchor_value=0.0):
    """Parametric family for the loss ``g(z) = exp(-gamma z)``.

    Characteristic slopes are ``xi = g'(u_y) < 0``, so
    ``R'(xi) = -log(-xi / gamma) / gamma`` and ``R = xi R' - g(R')``.
    At ``gamma = 1/2`` this ``R'`` equals ``-log(xi / (gamma - 1)) / gamma``.
    """
    if gamma <= 0:
        raise ValidationError("gamma must be positive")

    def dR(xi):
        return -np.log(-xi / gamma) / gamma

    def R(xi):
        return xi * dR(xi) + xi / gamma

    return ParametricSolution(R, dR, f, tuple(xi_domain), tuple(anchor), anchor_value)


def quadratic_problem(a, b, c, X):
    """Smooth test problem with a closed-form solution.

    ``g(z) = a (b - z)^2`` for ``z <= b`` (zero beyond) and terminal data
    ``h(y) = b y - c y^2 / 2``. The exact solution is
    ``u = b y - c y^2 / (2 (1 + 2 a c (X - x)))``; it is valid while
    ``h' >= 0``, i.e. for ``y <= b / c``.

    Returns ``(g, h, exact, solution)`` with ``solution`` a
    :class:`ParametricSolution` anchored at ``(X, 0)``.
    """

    def g(z):
        return a * np.maximum(b - np.asarray(z, dtype=float), 0.0) ** 2

    def h(y):
        return b * y - 0.5 * c * y**2

    def exact(x, y):
        return b * y - c * y**2 / (2 * (1 + 2 * a * c * (X - x)))

    def dR(xi):
        return b + xi / (2 * a)

    def R(xi):
        return b * xi + xi**2 / (4 * a)

    def f(xi):
        return -xi / (2 * a * c) - X * xi

    y_cap = b / c
    sol = ParametricSolution(R, dR, f, (-2 * a * c * y_cap, 0.0), (X, 0.0), 0.0)
    return g, h, exact, sol
