"""Basis functions rho(x, theta) for integral layers.

Three families are provided:

* :class:`InputAffine` -- the input layer, ``rho(x, 0) = 1`` and
  ``rho(x, j) = x_j`` for ``1 <= j <= d``.
* :class:`DiscreteNeural` -- hidden layers indexed by the natural numbers,
  ``rho(x, 0) = 1`` (bias atom) and
  ``rho(x, n) = sigma(x_{n-1} + c) * beta_{n-1}`` for ``n >= 1``.
  Coordinates past the end of a finite vector read as zero.
* :class:`ContinuousNeural` -- euclidean parameters,
  ``rho(x, theta) = sigma(<x, theta> + c(theta)) * exp(-|theta|^2 / (2 s^2))``.

Every family can evaluate a whole design matrix ``Phi[i, k] = rho(x_i, theta_k)``
and backpropagate through it; that is what the solver and trainer use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, KindMismatch, NegativeIndex

LIPSCHITZ_SLACK = 1e-12


@dataclass(frozen=True)
class Activation:
    """Scalar activation applied component-wise.

    ``kind`` is one of ``relu``, ``leaky_relu``, ``tanh`` or ``custom``.  A
    custom activation must supply ``func``, ``deriv`` and ``lipschitz``.
    The ReLU derivative at zero is taken as zero.
    """
    kind: str = "relu"
    slope: float = 0.01
    func: Callable | None = field(default=None, compare=False, repr=False)
    deriv: Callable | None = field(default=None, compare=False, repr=False)
    lipschitz: float | None = None
    zero_at_zero: bool | None = None

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "tanh", "custom"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "custom":
            if self.func is None or self.deriv is None or self.lipschitz is None:
                raise ValueError("custom activations need func, deriv and lipschitz")
            if self.zero_at_zero is None:
                object.__setattr__(self, "zero_at_zero", float(self.func(np.zeros(1))[0]) == 0.0)
        else:
            object.__setattr__(self, "zero_at_zero", True)
        if self.lipschitz is not None and self.lipschitz <= 0:
            raise ValueError("Lipschitz constant must be positive")

    @property
    def lipschitz_constant(self) -> float:
        if self.kind == "custom":
            return float(self.lipschitz)
        if self.kind == "leaky_relu":
            return max(1.0, abs(self.slope))
        return 1.0

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if self.kind == "relu":
            return np.maximum(a, 0.0)
        if self.kind == "leaky_relu":
            return np.where(a > 0, a, self.slope * a)
        if self.kind == "tanh":
            return np.tanh(a)
        return np.asarray(self.func(a), dtype=float)

    def derivative(self, a):
        a = np.asarray(a, dtype=float)
        if self.kind == "relu":
            return (a > 0).astype(float)
        if self.kind == "leaky_relu":
            return np.where(a > 0, 1.0, self.slope)
        if self.kind == "tanh":
            return 1.0 - np.tanh(a) ** 2
        return np.asarray(self.deriv(a), dtype=float)

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom activations cannot be serialized")
        if self.kind == "leaky_relu":
            return {"kind": "leaky_relu", "slope": self.slope}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "Activation":
        return cls(kind=d["kind"], slope=float(d.get("slope", 0.01)))


@dataclass(frozen=True)
class WindowSequence:
    """Positive window ``beta_n``: constant one, ``q**n`` or ``1/(1+n)^2``."""
    kind: str = "geometric"
    q: float = 0.9

    def __post_init__(self):
        if self.kind not in ("constant_one", "geometric", "inverse_square"):
            raise ValueError(f"unknown window {self.kind!r}")
        if self.kind == "geometric" and not 0.0 < self.q < 1.0:
            raise ValueError("geometric window needs 0 < q < 1")

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        if np.any(n < 0):
            raise NegativeIndex("window index must be >= 0")
        if self.kind == "constant_one":
            return np.ones_like(n)
        if self.kind == "geometric":
            return self.q ** n
        return 1.0 / (1.0 + n) ** 2

    @property
    def max_value(self) -> float:
        return 1.0

    def to_dict(self) -> dict:
        if self.kind == "geometric":
            return {"kind": "geometric", "q": self.q}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "WindowSequence":
        return cls(kind=d["kind"], q=float(d.get("q", 0.9)))


def _as_index(theta) -> int:
    if isinstance(theta, (bool, np.bool_)) or not isinstance(theta, (int, np.integer)):
        raise KindMismatch(f"expected a discrete index, got {theta!r}")
    if theta < 0:
        raise NegativeIndex(f"discrete index must be >= 0, got {theta}")
    return int(theta)


def _as_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch("inputs must be a vector or a (N, d) matrix")
    return X


@dataclass(frozen=True)
class InputAffine:
    """Input-layer basis on ``{0, ..., d}``: a constant and the coordinates."""
    input_dim: int

    kind = "discrete"

    def check_location(self, theta) -> int:
        j = _as_index(theta)
        if j > self.input_dim:
            raise KindMismatch(f"index {j} outside {{0..{self.input_dim}}}")
        return j

    def check_input(self, X: np.ndarray) -> None:
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"expected inputs of dimension {self.input_dim}, got {X.shape[1]}")

    def candidates(self, input_dim: int | None = None) -> list:
        return list(range(self.input_dim + 1))

    def design(self, X, locations: Sequence) -> np.ndarray:
        X = _as_rows(X)
        self.check_input(X)
        idx = np.array([self.check_location(t) for t in locations], dtype=int)
        Xa = np.hstack([np.ones((X.shape[0], 1)), X])
        return Xa[:, idx]

    def backprop_input(self, X, locations, G) -> np.ndarray:
        X = _as_rows(X)
        dX = np.zeros((X.shape[0], self.input_dim + 1))
        idx = np.array([self.check_location(t) for t in locations], dtype=int)
        np.add.at(dX, (slice(None), idx), G)
        return dX[:, 1:]

    def window_at(self, theta) -> float:
        self.check_location(theta)
        return 1.0

    def reads(self, theta) -> int | None:
        j = self.check_location(theta)
        return j - 1 if j > 0 else None

    def witness_terms(self, x, x2, theta):
        j = self.check_location(theta)
        if j == 0:
            return 0.0
        return abs(x[j - 1] - x2[j - 1])

    @property
    def lipschitz_constant(self) -> float:
        return 1.0

    def to_dict(self) -> dict:
        return {"type": "input_affine", "input_dim": self.input_dim}


@dataclass(frozen=True)
class DiscreteNeural:
    """Hidden-layer basis indexed by the natural numbers.

    With ``bias_atom`` the index 0 is the constant atom; index ``n >= 1``
    reads coordinate ``n - 1`` of the input sequence.  ``offset`` is a
    constant shift added inside the activation (zero by default).
    """
    activation: Activation = field(default_factory=Activation)
    window: WindowSequence = field(default_factory=WindowSequence)
    bias_atom: bool = True
    offset: float = 0.0

    kind = "discrete"

    def check_location(self, theta) -> int:
        n = _as_index(theta)
        if n == 0 and not self.bias_atom:
            raise KindMismatch("index 0 is the bias atom, which is disabled for this basis")
        return n

    def check_input(self, X: np.ndarray) -> None:
        pass

    def candidates(self, input_dim: int) -> list:
        start = 0 if self.bias_atom else 1
        return list(range(start, input_dim + 1))

    def _columns(self, X, locations):
        idx = np.array([self.check_location(t) for t in locations], dtype=int)
        coord = idx - 1
        inside = (coord >= 0) & (coord < X.shape[1])
        pre = np.zeros((X.shape[0], len(idx)))
        pre[:, inside] = X[:, coord[inside]]
        pre += self.offset
        beta = np.where(idx > 0, self.window(np.maximum(coord, 0)), 1.0)
        return idx, coord, inside, pre, beta

    def design(self, X, locations: Sequence) -> np.ndarray:
        X = _as_rows(X)
        idx, _, _, pre, beta = self._columns(X, locations)
        Phi = self.activation(pre) * beta
        Phi[:, idx == 0] = 1.0
        return Phi

    def backprop_input(self, X, locations, G) -> np.ndarray:
        X = _as_rows(X)
        idx, coord, inside, pre, beta = self._columns(X, locations)
        local = G * self.activation.derivative(pre) * beta
        dX = np.zeros_like(X)
        cols = np.flatnonzero(inside & (idx > 0))
        np.add.at(dX, (slice(None), coord[cols]), local[:, cols])
        return dX

    def window_at(self, theta) -> float:
        n = self.check_location(theta)
        return 1.0 if n == 0 else float(self.window(n - 1))

    def reads(self, theta) -> int | None:
        n = self.check_location(theta)
        return n - 1 if n > 0 else None

    def witness_terms(self, x, x2, theta):
        n = self.check_location(theta)
        if n == 0:
            return 0.0
        a = x[n - 1] if n - 1 < len(x) else 0.0
        b = x2[n - 1] if n - 1 < len(x2) else 0.0
        return self.activation.lipschitz_constant * abs(a - b) * float(self.window(n - 1))

    @property
    def lipschitz_constant(self) -> float:
        return self.activation.lipschitz_constant

    def to_dict(self) -> dict:
        return {"type": "discrete_neural", "activation": self.activation.to_dict(),
                "window": self.window.to_dict(), "bias_atom": self.bias_atom,
                "offset": self.offset}


@dataclass(frozen=True)
class ContinuousNeural:
    """Euclidean-parameter basis with a Gaussian window of scale ``window_scale``.

    ``window_scale=math.inf`` disables the window.  ``offset`` is a constant
    or a callable ``c(theta)``.
    """
    activation: Activation = field(default_factory=Activation)
    window_scale: float = 10.0
    offset: Union[float, Callable] = 0.0

    kind = "euclidean"

    def __post_init__(self):
        if not self.window_scale > 0:
            raise ValueError("window_scale must be positive")

    def check_location(self, theta) -> tuple:
        if not isinstance(theta, (tuple, list, np.ndarray)):
            raise KindMismatch(f"expected a euclidean parameter, got {theta!r}")
        return tuple(float(c) for c in np.asarray(theta, dtype=float).ravel())

    def check_input(self, X: np.ndarray) -> None:
        pass

    def _parts(self, X, locations):
        Theta = np.array([self.check_location(t) for t in locations], dtype=float)
        if Theta.size == 0:
            Theta = np.zeros((0, X.shape[1]))
        if Theta.shape[1] != X.shape[1]:
            raise DimensionMismatch(
                f"parameter dimension {Theta.shape[1]} != input dimension {X.shape[1]}")
        if callable(self.offset):
            c = np.array([float(self.offset(t)) for t in Theta])
        else:
            c = np.full(len(Theta), float(self.offset))
        pre = X @ Theta.T + c
        return Theta, pre, self.gaussian(Theta)

    def gaussian(self, Theta) -> np.ndarray:
        Theta = np.atleast_2d(Theta)
        if math.isinf(self.window_scale):
            return np.ones(len(Theta))
        return np.exp(-np.sum(Theta ** 2, axis=1) / (2.0 * self.window_scale ** 2))

    def design(self, X, locations: Sequence) -> np.ndarray:
        X = _as_rows(X)
        _, pre, g = self._parts(X, locations)
        return self.activation(pre) * g

    def backprop_input(self, X, locations, G) -> np.ndarray:
        X = _as_rows(X)
        Theta, pre, g = self._parts(X, locations)
        return (G * self.activation.derivative(pre) * g) @ Theta

    def window_at(self, theta) -> float:
        return float(self.gaussian(np.array(self.check_location(theta)))[0])

    def reads(self, theta):
        return None

    def witness_terms(self, x, x2, theta):
        t = np.array(self.check_location(theta))
        if t.size != len(x):
            raise DimensionMismatch("parameter and input dimensions differ")
        return (self.activation.lipschitz_constant * abs(float(np.dot(np.asarray(x) - np.asarray(x2), t)))
                * self.window_at(theta))

    @property
    def lipschitz_constant(self) -> float:
        return self.activation.lipschitz_constant

    def to_dict(self) -> dict:
        if callable(self.offset):
            raise ValueError("callable offsets cannot be serialized")
        scale = "inf" if math.isinf(self.window_scale) else self.window_scale
        return {"type": "continuous_neural", "activation": self.activation.to_dict(),
                "window_scale": scale, "offset": self.offset}


BasisFunction = Union[InputAffine, DiscreteNeural, ContinuousNeural]


def basis_from_dict(d: dict) -> BasisFunction:
    kind = d.get("type")
    if kind == "input_affine":
        return InputAffine(int(d["input_dim"]))
    if kind == "discrete_neural":
        return DiscreteNeural(Activation.from_dict(d["activation"]),
                              WindowSequence.from_dict(d["window"]),
                              bool(d.get("bias_atom", True)), float(d.get("offset", 0.0)))
    if kind == "continuous_neural":
        return ContinuousNeural(Activation.from_dict(d["activation"]),
                                float(d.get("window_scale", 10.0)), float(d.get("offset", 0.0)))
    raise KindMismatch(f"unknown basis type {kind!r}")


def evaluate_basis(rho: BasisFunction, x, theta) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return float(rho.design(x[None, :], [theta])[0, 0])


@dataclass(frozen=True)
class LipschitzWitness:
    lhs: float
    rhs: float
    ok: bool


def lipschitz_witness(rho: BasisFunction, x, x2, theta) -> LipschitzWitness:
    """Probe ``|rho(x,t) - rho(x2,t)| <= C |<x - x2, g(t)>| beta(t)`` at one point."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise DimensionMismatch("x and x2 must have the same dimension")
    lhs = abs(evaluate_basis(rho, x, theta) - evaluate_basis(rho, x2, theta))
    rhs = float(rho.witness_terms(x, x2, theta))
    return LipschitzWitness(lhs, rhs, lhs <= rhs + LIPSCHITZ_SLACK)
