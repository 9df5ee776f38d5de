"""Deep measure networks, finite networks, and the export between them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import Activation, BasisFunction, ContinuousNeural, DiscreteNeural, InputAffine
from .errors import DimensionMismatch, KindMismatch, UnsupportedBasis
from .measure import AtomicVectorMeasure, tv_norm


@dataclass(frozen=True)
class LayerMeasure:
    """One integral layer ``x -> sum_k w_k rho(x, theta_k)``."""
    basis: BasisFunction
    measure: AtomicVectorMeasure
    input_dim: int

    def __post_init__(self):
        if self.input_dim < 1:
            raise DimensionMismatch("input_dim must be positive")
        if isinstance(self.basis, InputAffine) and self.basis.input_dim != self.input_dim:
            raise DimensionMismatch("input-affine basis dimension differs from input_dim")
        if self.measure.kind is not None and self.measure.kind != self.basis.kind:
            raise KindMismatch(f"{self.measure.kind} atoms on a {self.basis.kind} basis")
        for loc in self.measure.locations:
            self.basis.check_location(loc)
        if isinstance(self.basis, ContinuousNeural) and len(self.measure):
            if len(self.measure.locations[0]) != self.input_dim:
                raise DimensionMismatch("euclidean atoms must match the layer input dimension")

    @property
    def output_dim(self) -> int:
        return self.measure.target_dim

    def design(self, X) -> np.ndarray:
        return self.basis.design(X, self.measure.locations)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"layer expects dimension {self.input_dim}, got {X.shape[1]}")
        if len(self.measure) == 0:
            return np.zeros((X.shape[0], self.output_dim))
        return self.design(X) @ self.measure.weights

    def with_measure(self, measure: AtomicVectorMeasure, input_dim: int | None = None) -> "LayerMeasure":
        return LayerMeasure(self.basis, measure, self.input_dim if input_dim is None else input_dim)

    def unit_locations(self) -> list:
        """Atoms that read an input coordinate (bias atoms excluded), in storage order."""
        return [loc for loc in self.measure.locations if self.basis.reads(loc) is not None]

    def read_coordinates(self) -> list:
        return [self.basis.reads(loc) for loc in self.unit_locations()]

    def lipschitz_bound(self) -> float:
        """Upper bound on the Lipschitz constant of the layer map (Euclidean norms).

        Uses ``C_sigma * ||U||_2`` where the columns of ``U`` are the weights of
        the coordinate-reading atoms scaled by their windows.
        """
        if isinstance(self.basis, ContinuousNeural):
            W = self.measure.weights
            if len(W) == 0:
                return 0.0
            Theta = np.array(self.measure.locations)
            g = self.basis.gaussian(Theta)
            # |f(x)-f(y)| <= C sum_k |w_k| g_k |<x-y, theta_k>|
            return self.basis.lipschitz_constant * float(
                np.linalg.norm(W.T * g, 2) * np.linalg.norm(Theta, 2))
        rows = [i for i, loc in enumerate(self.measure.locations) if self.basis.reads(loc) is not None]
        if not rows:
            return 0.0
        beta = np.array([self.basis.window_at(self.measure.locations[i]) for i in rows])
        U = self.measure.weights[rows].T * beta
        return self.basis.lipschitz_constant * float(np.linalg.norm(U, 2))


@dataclass(frozen=True)
class DeepMeasureNetwork:
    """Composition ``f_L o ... o f_0`` of integral layers."""
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise DimensionMismatch("a network needs at least one layer")
        if not isinstance(layers[0].basis, InputAffine):
            raise UnsupportedBasis("the first layer must use the input-affine basis")
        for a, b in zip(layers, layers[1:]):
            if a.output_dim != b.input_dim:
                raise DimensionMismatch(
                    f"layer output {a.output_dim} does not feed layer input {b.input_dim}")

    @property
    def depth(self) -> int:
        """Number of hidden layers ``L`` (the network has ``L + 1`` layers)."""
        return len(self.layers) - 1

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    @property
    def dims(self) -> list:
        return [self.layers[0].input_dim] + [layer.output_dim for layer in self.layers]

    def replace_layer(self, index: int, layer: LayerMeasure) -> "DeepMeasureNetwork":
        layers = list(self.layers)
        layers[index] = layer
        return DeepMeasureNetwork(tuple(layers))


def forward(net: DeepMeasureNetwork, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"network expects dimension {net.input_dim}, got {X.shape[1]}")
    for layer in net.layers:
        X = layer(X)
    return X[0] if single else X


def complexity_upper_bound(net: DeepMeasureNetwork) -> float:
    """Sum of layer TV norms; an upper bound on the complexity of ``net``.

    The complexity of the represented function is an infimum over all
    measure representations and is not computed.
    """
    return float(sum(tv_norm(layer.measure) for layer in net.layers))


@dataclass(frozen=True)
class FiniteNetwork:
    """Plain feed-forward network ``x1 = W1 x + b1``, ``x_{l+1} = W_{l+1} s(x_l) + b_{l+1}``.

    ``windows`` optionally carries, per layer, the window value of the atom
    behind each input column (ones for the input layer); it is metadata used
    for the norm bound and does not affect evaluation.
    """
    weights: tuple
    biases: tuple
    activation: Activation = field(default_factory=Activation)
    windows: tuple | None = None

    def __post_init__(self):
        weights = tuple(np.atleast_2d(np.asarray(W, dtype=float)) for W in self.weights)
        biases = tuple(np.asarray(b, dtype=float).ravel() for b in self.biases)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        if len(weights) != len(biases) or not weights:
            raise DimensionMismatch("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.shape[0] != b.shape[0]:
                raise DimensionMismatch(f"layer {i + 1}: W has {W.shape[0]} rows, b has {b.shape[0]}")
            if i and weights[i - 1].shape[0] != W.shape[1]:
                raise DimensionMismatch(f"layer {i + 1}: shape chain broken")
        if self.windows is not None:
            windows = tuple(np.asarray(w, dtype=float).ravel() for w in self.windows)
            if len(windows) != len(weights) or any(
                    len(w) != W.shape[1] for w, W in zip(windows, weights)):
                raise DimensionMismatch("windows must give one value per weight column")
            object.__setattr__(self, "windows", windows)

    @property
    def widths(self) -> list:
        """Hidden widths ``d_1..d_L``."""
        return [W.shape[0] for W in self.weights[:-1]]

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]


def forward_finite(fn: FiniteNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != fn.weights[0].shape[1]:
        raise DimensionMismatch(f"network expects dimension {fn.weights[0].shape[1]}, got {X.shape[1]}")
    H = X @ fn.weights[0].T + fn.biases[0]
    for W, b in zip(fn.weights[1:], fn.biases[1:]):
        H = fn.activation(H) @ W.T + b
    return H[0] if single else H


def _split_layer(layer: LayerMeasure):
    """Bias weight, unit weights (columns) and unit windows/read coordinates."""
    m = layer.output_dim
    bias = np.zeros(m)
    cols, beta, reads = [], [], []
    for loc, w in zip(layer.measure.locations, layer.measure.weights):
        r = layer.basis.reads(loc)
        if r is None:
            bias = bias + w
        else:
            cols.append(w)
            beta.append(layer.basis.window_at(loc))
            reads.append(r)
    U = np.array(cols).T if cols else np.zeros((m, 0))
    return bias, U, np.array(beta), reads


def export_finite(net: DeepMeasureNetwork) -> FiniteNetwork:
    """Convert a network with discrete bases into a plain finite network.

    The hidden units of layer ``l`` are the coordinate-reading atoms of the
    measure that consumes it, so the exported widths equal those atom counts.
    Window values are folded into the weight columns, bias atoms become the
    biases, and constant offsets are added to the biases of the preceding
    layer.
    """
    hidden = net.layers[1:]
    for layer in hidden:
        if not isinstance(layer.basis, DiscreteNeural):
            raise UnsupportedBasis("export needs discrete hidden layers")
    activations = {layer.basis.activation for layer in hidden}
    if len(activations) > 1:
        raise UnsupportedBasis("hidden layers must share one activation to export")
    activation = activations.pop() if activations else Activation()

    d = net.input_dim
    # input layer as a full affine map into the ambient coordinates of layer 1
    bias0, cols0, _, reads0 = _split_layer(net.layers[0])
    M = np.zeros((net.layers[0].output_dim, d))
    for col, j in zip(cols0.T, reads0):
        M[:, j] += col
    pieces = [(M, bias0, np.ones(d))]
    for layer in hidden:
        bias, U, beta, _ = _split_layer(layer)
        pieces.append((U * beta if U.size else U, bias, beta))

    weights, biases, windows = [], [], []
    for i, (full_W, full_b, win) in enumerate(pieces):
        if i + 1 < len(pieces):
            nxt = hidden[i]
            sel = nxt.read_coordinates()
            offset = nxt.basis.offset
        else:
            sel = list(range(full_W.shape[0]))
            offset = 0.0
        # coordinates past the ambient dimension read as zero
        pad = max([s + 1 for s in sel], default=0) - full_W.shape[0]
        if pad > 0:
            full_W = np.vstack([full_W, np.zeros((pad, full_W.shape[1]))])
            full_b = np.concatenate([full_b, np.zeros(pad)])
        weights.append(full_W[sel, :].reshape(len(sel), full_W.shape[1]))
        biases.append(full_b[sel] + offset)
        windows.append(win)
    return FiniteNetwork(tuple(weights), tuple(biases), activation, tuple(windows))


def discrete_norm_bound(fn: FiniteNetwork) -> float:
    """``sum_l sum_k ||W^(l+1)[:, k] / beta_k||`` plus the bias norms.

    Biases enter as the constant column of each layer (window one).  For
    networks exported with zero offsets this never exceeds the TV sum of the
    source network.
    """
    if fn.windows is None:
        raise ValueError("finite network carries no window metadata")
    total = 0.0
    for W, b, beta in zip(fn.weights, fn.biases, fn.windows):
        if W.size:
            total += float(np.sum(np.linalg.norm(W, axis=0) / beta))
        total += float(np.linalg.norm(b))
    return total


def make_identity_input_layer(d: int) -> LayerMeasure:
    """Input layer encoding ``x -> x`` (atom ``j`` carries ``e_j``)."""
    return LayerMeasure(InputAffine(d), AtomicVectorMeasure(list(range(1, d + 1)), np.eye(d), d), d)


def lipschitz_product(layers: Sequence[LayerMeasure]) -> float:
    out = 1.0
    for layer in layers:
        out *= layer.lipschitz_bound()
    return out
