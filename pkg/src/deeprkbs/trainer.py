"""Regularized empirical risk minimization over discrete deep measure networks.

Atom locations are fixed at initialization; only the weights are trained.
Each step is a gradient step on the empirical risk followed by block
soft-thresholding of every atom weight (the proximal map of the TV norm).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .basis import Activation, DiscreteNeural, InputAffine, WindowSequence
from .errors import DimensionMismatch, DivergenceDetected, FormatError
from .measure import AtomicVectorMeasure, tv_norm
from .network import DeepMeasureNetwork, FiniteNetwork, LayerMeasure, forward, forward_finite

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossFunction:
    """Per-sample loss ``l(yhat, y)``.

    ``squared`` is ``1/2 |yhat - y|^2``; ``logistic`` is
    ``sum_j log(1 + exp(-y_j yhat_j))`` with labels in ``{-1, +1}``.
    """
    kind: str = "squared"

    def __post_init__(self):
        if self.kind not in ("squared", "logistic"):
            raise ValueError(f"unknown loss {self.kind!r}")

    def value(self, Yhat, Y) -> np.ndarray:
        Yhat, Y = np.atleast_2d(Yhat), np.atleast_2d(Y)
        if self.kind == "squared":
            return 0.5 * np.sum((Yhat - Y) ** 2, axis=1)
        return np.sum(np.logaddexp(0.0, -Y * Yhat), axis=1)

    def grad(self, Yhat, Y) -> np.ndarray:
        Yhat, Y = np.atleast_2d(Yhat), np.atleast_2d(Y)
        if self.kind == "squared":
            return Yhat - Y
        return -Y * expit(-Y * Yhat)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} inputs but {Y.shape[0]} outputs")
        if X.shape[0] < 1:
            raise DimensionMismatch("a dataset needs at least one sample")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.Y.shape[1]

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        X, Y = read_dataset_csv(path)
        return cls(X, Y)

    def to_csv(self, path) -> None:
        write_dataset_csv(path, self.X, self.Y)


def write_dataset_csv(path, X, Y) -> None:
    """CSV with header ``x_1..x_d,y_1..y_p``; floats keep all 17 significant digits."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    header = [f"x_{j + 1}" for j in range(X.shape[1])] + [f"y_{j + 1}" for j in range(Y.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(X, Y):
            w.writerow([repr(float(v)) for v in np.concatenate([x, y])])


def read_dataset_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    xs = [i for i, h in enumerate(header) if h.startswith("x_")]
    ys = [i for i, h in enumerate(header) if h.startswith("y_")]
    if not xs or not ys or len(xs) + len(ys) != len(header):
        raise FormatError(f"{path}: header must be x_1..x_d,y_1..y_p")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return data[:, xs], data[:, ys]


@dataclass(frozen=True)
class TrainConfig:
    """``init_widths`` lists the number of hidden units per hidden layer.

    Hidden layer ``l`` is initialized with atoms ``0..init_widths[l]``
    (the bias atom plus one atom per unit); the input layer with ``0..d``.
    """
    init_widths: tuple = (32,)
    lam: float = 1.0
    steps: int = 2000
    step_size: float = 0.1
    seed: int = 0
    init_scale: float | None = None
    activation: Activation = field(default_factory=Activation)
    window: WindowSequence = field(default_factory=WindowSequence)
    penalize_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "init_widths", tuple(int(w) for w in self.init_widths))
        if any(w < 1 for w in self.init_widths):
            raise ValueError("widths must be at least 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "activation" in d:
            d["activation"] = Activation.from_dict(d["activation"])
        if "window" in d:
            d["window"] = WindowSequence.from_dict(d["window"])
        d.pop("loss", None)
        return cls(**d)

    def to_dict(self) -> dict:
        return {"init_widths": list(self.init_widths), "lam": self.lam, "steps": self.steps,
                "step_size": self.step_size, "seed": self.seed, "init_scale": self.init_scale,
                "activation": self.activation.to_dict(), "window": self.window.to_dict(),
                "penalize_bias": self.penalize_bias}


def _check_data(net: DeepMeasureNetwork, data: Dataset):
    if data.input_dim != net.input_dim or data.output_dim != net.output_dim:
        raise DimensionMismatch(
            f"data is {data.input_dim}->{data.output_dim}, network is {net.input_dim}->{net.output_dim}")


def risk(net: DeepMeasureNetwork, data: Dataset, loss: LossFunction | None = None) -> float:
    loss = loss or LossFunction()
    _check_data(net, data)
    return float(np.mean(loss.value(forward(net, data.X), data.Y)))


def objective(net: DeepMeasureNetwork, data: Dataset, lam: float, loss: LossFunction | None = None) -> float:
    """Mean loss plus ``lam`` times the sum of layer TV norms."""
    tv = sum(tv_norm(layer.measure) for layer in net.layers)
    return risk(net, data, loss) + lam * tv


# -- array-level forward/backward with fixed locations ----------------------

def _forward_cache(bases, locs, weights, X):
    H = [X]
    Phis = []
    for basis, loc, W in zip(bases, locs, weights):
        Phi = basis.design(H[-1], loc) if len(loc) else np.zeros((X.shape[0], 0))
        Phis.append(Phi)
        H.append(Phi @ W)
    return H, Phis


def _backward(bases, locs, weights, H, Phis, G):
    grads = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        grads[l] = Phis[l].T @ G
        if l:
            G = bases[l].backprop_input(H[l], locs[l], G @ weights[l].T) if len(locs[l]) \
                else np.zeros_like(H[l])
    return grads


def _unpack(net: DeepMeasureNetwork):
    bases = [layer.basis for layer in net.layers]
    locs = [list(layer.measure.locations) for layer in net.layers]
    weights = [np.array(layer.measure.weights).reshape(len(layer.measure), layer.output_dim)
               for layer in net.layers]
    return bases, locs, weights


def grad_weights(net: DeepMeasureNetwork, data: Dataset, loss: LossFunction | None = None) -> list:
    """Exact gradients of the mean loss with respect to every atom weight.

    Returns one ``(n_atoms, m)`` array per layer, rows aligned with
    ``layer.measure.locations``.
    """
    loss = loss or LossFunction()
    _check_data(net, data)
    bases, locs, weights = _unpack(net)
    H, Phis = _forward_cache(bases, locs, weights, data.X)
    G = loss.grad(H[-1], data.Y) / data.n
    return _backward(bases, locs, weights, H, Phis, G)


def _pack(net: DeepMeasureNetwork, locs, weights) -> DeepMeasureNetwork:
    layers = []
    for layer, loc, W in zip(net.layers, locs, weights):
        alive = np.linalg.norm(W, axis=1) > 0
        keep = [t for t, a in zip(loc, alive) if a]
        mu = AtomicVectorMeasure(keep, W[alive], layer.output_dim) if keep \
            else AtomicVectorMeasure.empty(layer.output_dim)
        layers.append(LayerMeasure(layer.basis, mu, layer.input_dim))
    return DeepMeasureNetwork(tuple(layers))


def init_network(config: TrainConfig, input_dim: int, output_dim: int) -> DeepMeasureNetwork:
    """Seeded uniform initialization with scale ``1/sqrt(fan_in)`` by default."""
    rng = np.random.default_rng(config.seed)
    basis_h = DiscreteNeural(config.activation, config.window)
    dims = [input_dim] + list(config.init_widths) + [output_dim]
    layers = []
    for l in range(len(dims) - 1):
        fan_in, fan_out = dims[l], dims[l + 1]
        s = config.init_scale if config.init_scale is not None else 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-s, s, size=(fan_in + 1, fan_out))
        basis = InputAffine(input_dim) if l == 0 else basis_h
        mu = AtomicVectorMeasure(list(range(fan_in + 1)), W, fan_out)
        layers.append(LayerMeasure(basis, mu, fan_in))
    return DeepMeasureNetwork(tuple(layers))


def train_prox(config: TrainConfig, data: Dataset, loss: LossFunction | None = None,
               trace: list | None = None, init: DeepMeasureNetwork | None = None) -> DeepMeasureNetwork:
    """Proximal gradient descent on ``risk + lam * sum_l TV(mu_l)``.

    The step size is halved whenever a step would increase the objective, so
    the accepted objective values are non-increasing.  Atoms whose weight is
    thresholded to zero are removed for the rest of the run.  If ``trace`` is
    a list, one row per accepted step is appended (plus the initial state).
    """
    loss = loss or LossFunction()
    net = init if init is not None else init_network(config, data.input_dim, data.output_dim)
    _check_data(net, data)
    bases, locs, weights = _unpack(net)
    lam = config.lam
    penal = [np.array([config.penalize_bias or t != 0 for t in loc], dtype=bool) for loc in locs]
    alive = [np.ones(len(loc), dtype=bool) for loc in locs]

    def evaluate(ws):
        H, Phis = _forward_cache(bases, locs, ws, data.X)
        r = float(np.mean(loss.value(H[-1], data.Y)))
        tv = sum(float(np.sum(np.linalg.norm(W, axis=1))) for W in ws)
        pen = sum(float(np.sum(np.linalg.norm(W[p], axis=1))) for W, p in zip(ws, penal))
        return r, tv, r + lam * pen, H, Phis

    def record(step, r, tv, obj):
        if trace is not None:
            trace.append({"step": step, "risk": r, "tv_total": tv, "objective": obj,
                          "atoms_alive": int(sum(int(a.sum()) for a in alive))})

    r, tv, obj, H, Phis = evaluate(weights)
    initial = obj
    record(0, r, tv, obj)
    t = config.step_size
    for step in range(1, config.steps + 1):
        G = loss.grad(H[-1], data.Y) / data.n
        grads = _backward(bases, locs, weights, H, Phis, G)
        while True:
            cand = []
            for W, g, p, a in zip(weights, grads, penal, alive):
                V = W - t * g
                norms = np.linalg.norm(V, axis=1)
                shrink = np.where(p, np.maximum(1.0 - t * lam / np.where(norms > 0, norms, 1.0), 0.0), 1.0)
                V = V * shrink[:, None]
                V[~a] = 0.0
                cand.append(V)
            r2, tv2, obj2, H2, Phis2 = evaluate(cand)
            if obj2 <= obj:
                break
            t *= 0.5
            if t < 1e-18:
                break
        if not np.isfinite(obj2) or obj2 > 10.0 * max(initial, 1e-300):
            raise DivergenceDetected(f"objective {obj2!r} at step {step} (initial {initial!r})")
        if obj2 > obj:
            log.info("step size underflow at step %d; stopping", step)
            break
        weights, r, tv, obj, H, Phis = cand, r2, tv2, obj2, H2, Phis2
        for W, a in zip(weights, alive):
            a &= np.linalg.norm(W, axis=1) > 0
        record(step, r, tv, obj)
    return _pack(net, locs, weights)


def write_trace_csv(path, rows: list, fields: tuple | None = None) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fields = fields or tuple(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(float(row[f])) if isinstance(row[f], float) else row[f] for f in fields])


def random_teacher(widths, input_dim: int, output_dim: int, rng: np.random.Generator,
                   activation: Activation | None = None, output_scale: float = 1.0) -> FiniteNetwork:
    """Random finite network with standard normal weights scaled by ``1/sqrt(fan_in)``."""
    dims = [input_dim] + list(widths) + [output_dim]
    Ws, bs = [], []
    for l in range(len(dims) - 1):
        Ws.append(rng.normal(size=(dims[l + 1], dims[l])) / np.sqrt(dims[l]))
        bs.append(rng.normal(size=dims[l + 1]) * 0.1)
    Ws[-1] = Ws[-1] * output_scale
    bs[-1] = bs[-1] * output_scale
    return FiniteNetwork(tuple(Ws), tuple(bs), activation or Activation())


def teacher_dataset(n: int, input_dim: int, output_dim: int, widths, seed: int, noise: float = 0.0,
                    output_scale: float = 1.0, activation: Activation | None = None):
    """Inputs uniform on ``[-1, 1]^d`` labelled by a seeded random teacher.

    Returns ``(X, Y)`` arrays; ``n = 0`` gives empty arrays.
    """
    rng = np.random.default_rng(seed)
    teacher = random_teacher(widths, input_dim, output_dim, rng, activation, output_scale)
    X = rng.uniform(-1.0, 1.0, size=(n, input_dim))
    Y = forward_finite(teacher, X) if n else np.zeros((0, output_dim))
    if noise:
        Y = Y + noise * rng.normal(size=Y.shape)
    return X, Y.reshape(n, output_dim)
