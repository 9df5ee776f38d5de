"""Finitely-atomic vector measures.

A measure is a finite sum ``sum_k w_k * delta(theta_k)`` with weights in
``R^m``.  Locations are either non-negative integers (discrete parameter
spaces such as the natural numbers) or tuples of floats (euclidean parameter
spaces).  Instances are immutable; every operation builds a new measure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, KindMismatch, NegativeIndex, NotUnitBall

Location = Union[int, tuple]

EUCLIDEAN_MERGE_TOL = 1e-12
UNIT_TV_TOL = 1e-12


def location_kind(loc) -> str:
    if isinstance(loc, (int, np.integer)) and not isinstance(loc, bool):
        return "discrete"
    if isinstance(loc, tuple):
        return "euclidean"
    raise KindMismatch(f"unsupported parameter point {loc!r}")


def as_location(loc) -> Location:
    """Normalize user input (int, list, ndarray) to a hashable location."""
    if isinstance(loc, (int, np.integer)) and not isinstance(loc, bool):
        if loc < 0:
            raise NegativeIndex(f"discrete index must be >= 0, got {loc}")
        return int(loc)
    if isinstance(loc, (tuple, list, np.ndarray)):
        coords = np.asarray(loc, dtype=float).ravel()
        if coords.size == 0:
            raise KindMismatch("euclidean location needs at least one coordinate")
        return tuple(float(c) for c in coords)
    raise KindMismatch(f"unsupported parameter point {loc!r}")


@dataclass(frozen=True, eq=False)
class Atom:
    location: Location
    weight: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location", as_location(self.location))
        w = np.array(self.weight, dtype=float).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)


class AtomicVectorMeasure:
    """Immutable finitely-atomic measure with values in ``R^target_dim``.

    Construction canonicalizes: coincident locations are merged by adding
    weights, atoms with an exactly zero weight are dropped, and atoms are
    stored sorted by location (index order, or lexicographic coordinates).
    """

    __slots__ = ("_locations", "_weights", "_target_dim", "_kind")

    def __init__(self, locations: Sequence = (), weights=None, target_dim: int | None = None):
        locs = [as_location(loc) for loc in locations]
        if weights is None:
            if locs:
                raise DimensionMismatch("weights are required when locations are given")
            if target_dim is None:
                raise DimensionMismatch("target_dim is required for an empty measure")
            weights = np.zeros((0, target_dim))
        W = np.array(weights, dtype=float)
        if W.ndim == 1 and len(locs) == 1:
            W = W[None, :]
        if W.ndim != 2 or W.shape[0] != len(locs):
            raise DimensionMismatch(
                f"expected one weight row per atom, got shape {W.shape} for {len(locs)} atoms")
        if target_dim is None:
            target_dim = W.shape[1]
        if target_dim < 1:
            raise DimensionMismatch("target_dim must be positive")
        if W.shape[1] != target_dim:
            raise DimensionMismatch(f"weight dimension {W.shape[1]} != target_dim {target_dim}")
        if not np.all(np.isfinite(W)):
            raise ValueError("weights must be finite")

        kinds = {location_kind(loc) for loc in locs}
        if len(kinds) > 1:
            raise KindMismatch("a measure cannot mix discrete and euclidean locations")
        kind = kinds.pop() if kinds else None
        if kind == "euclidean" and len({len(loc) for loc in locs}) > 1:
            raise DimensionMismatch("euclidean locations must share one dimension")

        locs, W = _merge(locs, W, kind)
        keep = np.any(W != 0.0, axis=1)
        locs = [loc for loc, k in zip(locs, keep) if k]
        W = W[keep]
        order = sorted(range(len(locs)), key=lambda i: locs[i])
        locs = tuple(locs[i] for i in order)
        W = W[order] if order else W.reshape(0, target_dim)
        W.setflags(write=False)
        self._locations = locs
        self._weights = W
        self._target_dim = int(target_dim)
        self._kind = kind if locs else None

    @classmethod
    def from_atoms(cls, atoms: Iterable[Atom], target_dim: int | None = None) -> "AtomicVectorMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls((), None, target_dim)
        return cls([a.location for a in atoms], np.stack([a.weight for a in atoms]), target_dim)

    @classmethod
    def empty(cls, target_dim: int) -> "AtomicVectorMeasure":
        return cls((), None, target_dim)

    @property
    def locations(self) -> tuple:
        return self._locations

    @property
    def weights(self) -> np.ndarray:
        """Read-only ``(n_atoms, target_dim)`` array, rows aligned with ``locations``."""
        return self._weights

    @property
    def target_dim(self) -> int:
        return self._target_dim

    @property
    def kind(self) -> str | None:
        return self._kind

    @property
    def atoms(self) -> tuple:
        return tuple(Atom(loc, w) for loc, w in zip(self._locations, self._weights))

    def __len__(self):
        return len(self._locations)

    def __iter__(self):
        return iter(self.atoms)

    def __repr__(self):
        parts = ", ".join(f"({loc}, {np.array2string(w, precision=4)})"
                          for loc, w in zip(self._locations, self._weights))
        return f"AtomicVectorMeasure(m={self._target_dim}, [{parts}])"

    def __eq__(self, other):
        if not isinstance(other, AtomicVectorMeasure):
            return NotImplemented
        return (self._target_dim == other._target_dim
                and self._locations == other._locations
                and np.array_equal(self._weights, other._weights))

    def __hash__(self):
        return hash((self._target_dim, self._locations, self._weights.tobytes()))

    def allclose(self, other: "AtomicVectorMeasure", atol: float = 1e-12) -> bool:
        if self._target_dim != other._target_dim or len(self) != len(other):
            return False
        for a, b in zip(self._locations, other._locations):
            if a != b and not (isinstance(a, tuple) and np.allclose(a, b, atol=atol, rtol=0)):
                return False
        return bool(np.allclose(self._weights, other._weights, atol=atol, rtol=0))

    def restrict(self, mask) -> "AtomicVectorMeasure":
        mask = np.asarray(mask, dtype=bool)
        locs = [loc for loc, k in zip(self._locations, mask) if k]
        return AtomicVectorMeasure(locs, self._weights[mask] if locs else None, self._target_dim)

    def scale(self, a: float) -> "AtomicVectorMeasure":
        if not self._locations:
            return self
        return AtomicVectorMeasure(self._locations, a * self._weights, self._target_dim)


def _merge(locs, W, kind):
    if len(locs) < 2:
        return locs, W
    if kind == "discrete":
        index = {}
        out_locs, rows = [], []
        for loc, w in zip(locs, W):
            if loc in index:
                rows[index[loc]] = rows[index[loc]] + w
            else:
                index[loc] = len(out_locs)
                out_locs.append(loc)
                rows.append(w.copy())
        return out_locs, np.array(rows)
    # euclidean: union points within EUCLIDEAN_MERGE_TOL of an earlier representative
    pts = np.array(locs)
    out_locs, rows, reps = [], [], []
    for loc, p, w in zip(locs, pts, W):
        for j, q in enumerate(reps):
            if np.linalg.norm(p - q) <= EUCLIDEAN_MERGE_TOL:
                rows[j] = rows[j] + w
                break
        else:
            reps.append(p)
            out_locs.append(loc)
            rows.append(w.copy())
    return out_locs, np.array(rows)


def row_norms(W) -> np.ndarray:
    """Euclidean row norms, rescaled so tiny or huge rows neither underflow nor overflow."""
    W = np.asarray(W, dtype=float)
    scale = np.max(np.abs(W), axis=1) if W.size else np.zeros(W.shape[0])
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(np.sum((W / safe[:, None]) ** 2, axis=1))


def tv_norm(mu: AtomicVectorMeasure) -> float:
    """Total variation: the sum of the Euclidean norms of the atom weights."""
    if len(mu) == 0:
        return 0.0
    return float(np.sum(row_norms(mu.weights)))


def linear_combine(a: float, mu: AtomicVectorMeasure, b: float, nu: AtomicVectorMeasure) -> AtomicVectorMeasure:
    """Return ``a*mu + b*nu``; shared locations add, cancelled atoms vanish."""
    if mu.target_dim != nu.target_dim:
        raise DimensionMismatch(f"target dims differ: {mu.target_dim} vs {nu.target_dim}")
    locs = list(mu.locations) + list(nu.locations)
    if not locs:
        return AtomicVectorMeasure.empty(mu.target_dim)
    W = np.vstack([a * mu.weights, b * nu.weights])
    return AtomicVectorMeasure(locs, W, mu.target_dim)


def apply_linear_to_weights(mu: AtomicVectorMeasure, P) -> AtomicVectorMeasure:
    """Map every weight through the matrix ``P`` of shape ``(m', m)``.

    If the operator norm of ``P`` is at most one the total variation cannot
    grow.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[1] != mu.target_dim:
        raise DimensionMismatch(f"map expects dimension {P.shape[1]}, measure has {mu.target_dim}")
    if len(mu) == 0:
        return AtomicVectorMeasure.empty(P.shape[0])
    return AtomicVectorMeasure(mu.locations, mu.weights @ P.T, P.shape[0])


def pushforward(mu: AtomicVectorMeasure, T: Callable) -> AtomicVectorMeasure:
    """Relocate every atom to ``T(location)``; atoms landing together merge."""
    if len(mu) == 0:
        return mu
    return AtomicVectorMeasure([T(loc) for loc in mu.locations], mu.weights, mu.target_dim)


def integrate(mu: AtomicVectorMeasure, phi: Callable) -> np.ndarray:
    """``sum_k phi(theta_k) * w_k`` for a scalar function ``phi``."""
    values = np.array([float(phi(loc)) for loc in mu.locations])
    if values.size == 0:
        return np.zeros(mu.target_dim)
    return values @ mu.weights


class Extreme:
    """Marker returned when a unit-TV measure is an extreme point of the ball."""

    def __repr__(self):
        return "Extreme"

    def __eq__(self, other):
        return isinstance(other, Extreme)

    def __hash__(self):
        return hash("Extreme")


@dataclass(frozen=True)
class Decomposition:
    """Witness ``mu = t*mu1 + (1-t)*mu2`` with ``0 < t < 1`` and unit-TV parts."""
    mu1: AtomicVectorMeasure
    mu2: AtomicVectorMeasure
    t: float

    def reconstruct(self) -> AtomicVectorMeasure:
        return linear_combine(self.t, self.mu1, 1.0 - self.t, self.mu2)


def extreme_point_check(mu: AtomicVectorMeasure, tol: float = UNIT_TV_TOL):
    """Decide whether ``mu`` is an extreme point of the unit TV ball.

    Single atoms with unit weight are extreme.  Any other unit-TV measure is
    split into its first atom and the remaining ones, giving an explicit
    proper convex combination.
    """
    total = tv_norm(mu)
    if abs(total - 1.0) > tol:
        raise NotUnitBall(f"tv_norm is {total!r}, expected 1 within {tol}")
    if len(mu) == 1:
        return Extreme()
    first = np.zeros(len(mu), dtype=bool)
    first[0] = True
    head, tail = mu.restrict(first), mu.restrict(~first)
    a, b = tv_norm(head), tv_norm(tail)
    # scale each part by total/part (not 1/t, 1/(1-t)) so both keep the TV of mu
    # even when one part is tiny
    t = a / (a + b)
    return Decomposition(head.scale((a + b) / a), tail.scale((a + b) / b), t)
