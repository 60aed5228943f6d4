"""Discrete demand laws and the functions derived from them.

A period brings at most one request ``(price, quantity)``. The law is a
finite list of atoms plus the probability of no arrival. Prices and
probabilities are kept as exact :class:`fractions.Fraction` values and
evaluated in double precision through the cached array views.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .errors import ArtifactIOError, ValidationError

PROB_TOL = 1e-12


def as_fraction(value) -> Fraction:
    """Parse ``"3/10"``, ``0.3``, ``1`` or a Fraction into a Fraction.

    Floats are read through their shortest repr so that a config value of
    ``0.3`` becomes exactly 3/10.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValidationError(f"not a number: {value!r}")
    if isinstance(value, float):
        if not np.isfinite(value):
            raise ValidationError(f"not a finite number: {value!r}")
        return Fraction(repr(value))
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"not a number: {value!r}") from exc


def _check_total(probs, no_arrival):
    if no_arrival < 0 or no_arrival > 1:
        raise ValidationError(f"no-arrival probability {no_arrival} outside [0, 1]")
    for p in probs:
        if p < 0 or p > 1:
            raise ValidationError(f"atom probability {p} outside [0, 1]")
    total = no_arrival + sum(probs, Fraction(0))
    if abs(float(total) - 1.0) > PROB_TOL:
        raise ValidationError(f"probabilities sum to {float(total)!r}, not 1")


@dataclass(frozen=True)
class DemandDistribution:
    """Joint law of (unit price, quantity) for one period.

    Parameters
    ----------
    atoms : tuple of (price, quantity, prob)
        Arrival atoms; duplicates on ``(price, quantity)`` are merged.
    no_arrival_prob : Fraction
        Probability that nothing arrives in a period.
    """

    atoms: tuple
    no_arrival_prob: Fraction = field(default=Fraction(0))

    def __post_init__(self):
        merged = {}
        for atom in self.atoms:
            if len(atom) != 3:
                raise ValidationError(f"atom must be (price, quantity, prob): {atom!r}")
            price, qty, prob = as_fraction(atom[0]), atom[1], as_fraction(atom[2])
            if price < 0:
                raise ValidationError(f"negative price {price}")
            if int(qty) != qty or int(qty) < 1:
                raise ValidationError(f"quantity must be a positive integer: {qty!r}")
            key = (price, int(qty))
            merged[key] = merged.get(key, Fraction(0)) + prob
        atoms = tuple((p, q, prob) for (p, q), prob in merged.items())
        no_arrival = as_fraction(self.no_arrival_prob)
        _check_total([a[2] for a in atoms], no_arrival)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "no_arrival_prob", no_arrival)

    @classmethod
    def from_atoms(cls, atoms, no_arrival_prob=None):
        """Build a law; a missing ``no_arrival_prob`` absorbs the remainder."""
        atoms = tuple(atoms)
        if no_arrival_prob is None:
            no_arrival_prob = 1 - sum((as_fraction(a[2]) for a in atoms), Fraction(0))
        return cls(atoms, no_arrival_prob)

    @cached_property
    def prices(self) -> np.ndarray:
        return np.array([float(a[0]) for a in self.atoms], dtype=float)

    @cached_property
    def quantities(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms], dtype=np.int64)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([float(a[2]) for a in self.atoms], dtype=float)

    @property
    def max_price(self) -> float:
        return float(self.prices.max()) if self.atoms else 0.0

    @property
    def max_quantity(self) -> int:
        return int(self.quantities.max()) if self.atoms else 0

    @property
    def arrival_prob(self) -> float:
        return float(1 - self.no_arrival_prob)

    @property
    def unit_demand(self) -> bool:
        return all(a[1] == 1 for a in self.atoms)

    def slope_bound(self) -> float:
        """Upper bound on ``|g'|``: the mean requested quantity."""
        total = 0.0
        for prob, q in zip(self.probs, self.quantities):
            total += prob * q
        return float(total)

    def as_multi(self) -> "MultiDemandDistribution":
        """One-resource embedding with per-request reward ``price * quantity``."""
        return MultiDemandDistribution(
            1,
            tuple((p * q, (q,), prob) for p, q, prob in self.atoms),
            self.no_arrival_prob,
        )


@dataclass(frozen=True)
class MultiDemandDistribution:
    """Joint law of (reward, quantity vector) over ``dim`` resources.

    Here the price of an atom is the total reward of the request, as in the
    multi-resource recursion; it is not multiplied by any quantity.
    """

    dim: int
    atoms: tuple
    no_arrival_prob: Fraction = field(default=Fraction(0))

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValidationError(f"dimension must be a positive integer: {self.dim!r}")
        merged = {}
        for atom in self.atoms:
            if len(atom) != 3:
                raise ValidationError(f"atom must be (price, quantities, prob): {atom!r}")
            price, prob = as_fraction(atom[0]), as_fraction(atom[2])
            qty = tuple(atom[1])
            if len(qty) != self.dim:
                raise ValidationError(f"quantity vector {qty} does not have {self.dim} components")
            if any(int(q) != q or int(q) < 1 for q in qty):
                raise ValidationError(f"quantities must be positive integers: {qty}")
            if price < 0:
                raise ValidationError(f"negative price {price}")
            key = (price, tuple(int(q) for q in qty))
            merged[key] = merged.get(key, Fraction(0)) + prob
        atoms = tuple((p, q, prob) for (p, q), prob in merged.items())
        no_arrival = as_fraction(self.no_arrival_prob)
        _check_total([a[2] for a in atoms], no_arrival)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "no_arrival_prob", no_arrival)

    @classmethod
    def from_atoms(cls, dim, atoms, no_arrival_prob=None):
        atoms = tuple(atoms)
        if no_arrival_prob is None:
            no_arrival_prob = 1 - sum((as_fraction(a[2]) for a in atoms), Fraction(0))
        return cls(dim, atoms, no_arrival_prob)

    @cached_property
    def prices(self) -> np.ndarray:
        return np.array([float(a[0]) for a in self.atoms], dtype=float)

    @cached_property
    def quantities(self) -> np.ndarray:
        """Array of shape ``(n_atoms, dim)``."""
        return np.array([a[1] for a in self.atoms], dtype=np.int64).reshape(-1, self.dim)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([float(a[2]) for a in self.atoms], dtype=float)

    @property
    def max_price(self) -> float:
        return float(self.prices.max()) if self.atoms else 0.0

    def slope_bounds(self) -> np.ndarray:
        """Per-axis bound on ``|dG/dz_k|``: the mean requested quantity of resource k."""
        if not self.atoms:
            return np.zeros(self.dim)
        total = np.zeros(self.dim)
        for prob, qty in zip(self.probs, self.quantities):
            total = total + prob * qty
        return total


def theta_tail(dist: DemandDistribution, d: int) -> float:
    """Probability that a request arrives and asks for more than ``d`` units."""
    total = 0.0
    for prob, q in zip(dist.probs, dist.quantities):
        if q > d:
            total += prob
    return total


def loss_g(dist: DemandDistribution, x):
    """Quantity-weighted loss ``E[Q (P - x)^+]`` of the revenue per request.

    Vectorised in ``x``; ``g(0)`` is the mean revenue per period.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    # written as reward minus cost so the one-resource multi loss rounds identically
    for (p, q, _), prob in zip(dist.atoms, dist.probs):
        out = out + prob * np.maximum(float(p * q) - float(q) * x, 0.0)
    return out if out.ndim else float(out)


def accept_prob(dist: DemandDistribution, x):
    """Probability that a request arrives with unit price ``>= x``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for price, prob in zip(dist.prices, dist.probs):
        out = out + np.where(price >= x, prob, 0.0)
    return out if out.ndim else float(out)


def mean_accepted_price(dist: DemandDistribution, x):
    """Mean unit price of the requests that clear threshold ``x``.

    Used as the price multiplying the fluctuation of units sold; zero where
    nothing clears the threshold.
    """
    x = np.asarray(x, dtype=float)
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    for price, prob in zip(dist.prices, dist.probs):
        hit = price >= x
        num = num + np.where(hit, prob * price, 0.0)
        den = den + np.where(hit, prob, 0.0)
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return out if out.ndim else float(out)


def _check_dim(dist, vec, name):
    vec = np.asarray(vec, dtype=float)
    if vec.shape[0] != dist.dim:
        raise ValidationError(f"{name} has {vec.shape[0]} components, expected {dist.dim}")
    return vec


def multi_G(dist: MultiDemandDistribution, z):
    """Loss ``E[(P - sum_k z_k Q^k)^+]`` of the request reward over its resource cost.

    ``z`` holds marginal resource values; its leading axis has length
    ``dim`` and any trailing axes are broadcast, so a whole gradient field
    can be passed at once. With all quantities equal to one this is the
    loss of ``P`` at ``z_1 + ... + z_m``.
    """
    z = _check_dim(dist, z, "z")
    out = np.zeros(z.shape[1:])
    for price, qty, prob in zip(dist.prices, dist.quantities, dist.probs):
        cost = np.tensordot(qty.astype(float), z, axes=(0, 0))
        out = out + prob * np.maximum(price - cost, 0.0)
    return out if out.ndim else float(out)


def multi_accept_prob(dist: MultiDemandDistribution, z):
    """Probability that a request arrives whose reward covers its cost at prices ``z``."""
    z = _check_dim(dist, z, "z")
    out = np.zeros(z.shape[1:])
    for price, qty, prob in zip(dist.prices, dist.quantities, dist.probs):
        cost = np.tensordot(qty.astype(float), z, axes=(0, 0))
        out = out + np.where(price >= cost, prob, 0.0)
    return out if out.ndim else float(out)


def multi_consumption_rate(dist: MultiDemandDistribution, z):
    """Expected units of each resource taken per period at threshold prices ``z``."""
    z = _check_dim(dist, z, "z")
    out = np.zeros(z.shape)
    for price, qty, prob in zip(dist.prices, dist.quantities, dist.probs):
        cost = np.tensordot(qty.astype(float), z, axes=(0, 0))
        hit = np.where(price >= cost, prob, 0.0)
        out = out + qty.reshape((-1,) + (1,) * (z.ndim - 1)) * hit
    return out


def multi_theta_tail(dist: MultiDemandDistribution, d) -> float:
    """Probability that some component of the request exceeds the remaining capacity."""
    d = _check_dim(dist, d, "d")
    total = 0.0
    for qty, prob in zip(dist.quantities, dist.probs):
        if np.any(qty > d):
            total += prob
    return total


# -- configuration documents ------------------------------------------------


def distribution_from_mapping(doc):
    """Build a distribution from a parsed config mapping.

    Schema::

        no_arrival: 1/2          # optional, defaults to the remainder
        dim: 2                   # optional; implied by list quantities
        atoms:
          - {price: 1, quantity: 1, prob: 1/2}
          - {price: 3, quantity: [1, 2], prob: 0.25}

    A list-valued quantity (or ``dim``) yields a
    :class:`MultiDemandDistribution`.
    """
    if not isinstance(doc, dict):
        raise ValidationError("distribution must be a mapping")
    unknown = set(doc) - {"no_arrival", "atoms", "dim"}
    if unknown:
        raise ValidationError(f"unknown distribution keys: {sorted(unknown)}")
    raw_atoms = doc.get("atoms") or []
    if not isinstance(raw_atoms, list):
        raise ValidationError("'atoms' must be a list")
    atoms = []
    multi = "dim" in doc
    for entry in raw_atoms:
        if not isinstance(entry, dict) or set(entry) != {"price", "quantity", "prob"}:
            raise ValidationError(f"atom needs exactly price, quantity, prob: {entry!r}")
        qty = entry["quantity"]
        if isinstance(qty, list):
            multi = True
        atoms.append((entry["price"], qty, entry["prob"]))
    no_arrival = doc.get("no_arrival")
    if multi:
        dim = doc.get("dim")
        if dim is None:
            dim = len(atoms[0][1]) if atoms else 1
        atoms = [(p, q if isinstance(q, list) else [q], prob) for p, q, prob in atoms]
        return MultiDemandDistribution.from_atoms(dim, atoms, no_arrival)
    return DemandDistribution.from_atoms(atoms, no_arrival)


def load_distribution(path):
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ArtifactIOError(f"cannot read distribution file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"malformed distribution file {path}: {exc}") from exc
    return distribution_from_mapping(doc)


def distribution_to_mapping(dist):
    """Inverse of :func:`distribution_from_mapping`, with exact fractions as strings."""
    multi = isinstance(dist, MultiDemandDistribution)
    doc = {"no_arrival": str(dist.no_arrival_prob)}
    if multi:
        doc["dim"] = dist.dim
    doc["atoms"] = [
        {"price": str(p), "quantity": list(q) if multi else q, "prob": str(prob)}
        for p, q, prob in dist.atoms
    ]
    return doc
