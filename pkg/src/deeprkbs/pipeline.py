"""Layer-wise sparsification of a trained deep measure network.

Starting from the output layer and moving towards the input, every layer is
replaced by a minimum-TV measure that reproduces the layer's values on the
training representations.  Only the coordinates read by the (already
sparsified) next layer are fitted, so each layer needs at most ``N`` times
the next layer's width atoms.  The result is exported as a finite network.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import DiscreteNeural, InputAffine
from .errors import Infeasible, RKBSError, UnsupportedBasis
from .measure import AtomicVectorMeasure, tv_norm
from .network import (DeepMeasureNetwork, FiniteNetwork, LayerMeasure, complexity_upper_bound,
                      discrete_norm_bound, export_finite, forward, forward_finite)
from .sparse_solver import (CandidateGrid, InterpolationResult, LayerConstraintSet, SolverConfig,
                            solve_interpolation)
from .trainer import Dataset, LossFunction, objective

log = logging.getLogger(__name__)

REPORT_NOTES = (
    "representations are recomputed from the partially sparsified network after every layer",
    "interpolation holds up to tolerance_residual per layer; output bound is propagated "
    "through downstream Lipschitz bounds",
)


def hidden_representations(net: DeepMeasureNetwork, inputs) -> list:
    """Exact traces ``[x^(0), ..., x^(L+1)]``; ``x^(0)`` is the input, the last is the output."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    reps = [X]
    forward(net, X[:1])  # dimension check
    for layer in net.layers:
        reps.append(layer(reps[-1]))
    return reps


def project_layer(next_layer: LayerMeasure | None, targets, output_dim: int | None = None):
    """Coordinates read by ``next_layer`` and the targets restricted to them.

    Returns ``(coords, P, reduced_targets)`` where ``P`` is the
    ``len(coords) x ambient`` selection matrix.  Without a next layer (the
    output layer) every coordinate is kept.
    """
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    ambient = T.shape[1] if output_dim is None else output_dim
    if next_layer is None:
        coords = list(range(ambient))
    else:
        if not isinstance(next_layer.basis, DiscreteNeural):
            raise UnsupportedBasis("projection is only implemented for discrete bases")
        coords = sorted(set(next_layer.read_coordinates()))
    P = np.zeros((len(coords), max(ambient, max(coords, default=-1) + 1)))
    P[np.arange(len(coords)), coords] = 1.0
    # coordinates past the ambient dimension read as zero
    Tp = np.hstack([T, np.zeros((T.shape[0], P.shape[1] - T.shape[1]))]) if P.shape[1] > T.shape[1] else T
    return coords, P, Tp @ P.T


def default_grid(layer: LayerMeasure) -> CandidateGrid:
    """All admissible atoms of a discrete layer over its current input dimension."""
    return CandidateGrid.for_basis(layer.basis, layer.input_dim)


def sparsify_layer(index: int, reps: list, net: DeepMeasureNetwork, grid: CandidateGrid,
                   cfg: SolverConfig, targets=None):
    """Minimum-TV refit of layer ``index`` on its current input representations.

    ``targets`` defaults to ``reps[index + 1]``.  Returns the solver result;
    the measure has one weight column per target column.
    """
    layer = net.layers[index]
    T = reps[index + 1] if targets is None else targets
    constraints = LayerConstraintSet(reps[index], T, layer.basis)
    try:
        return solve_interpolation(constraints, grid, cfg)
    except Infeasible as exc:
        raise Infeasible(str(exc), layer=index) from None


def _embed(mu: AtomicVectorMeasure, coords: list, ambient: int) -> AtomicVectorMeasure:
    if len(mu) == 0 or not coords:
        return AtomicVectorMeasure.empty(ambient)
    W = np.zeros((len(mu), ambient))
    W[:, coords] = mu.weights
    return AtomicVectorMeasure(mu.locations, W, ambient)


@dataclass
class LayerReport:
    layer: int
    width_before: int
    width_after: int
    units_after: int
    bound: int
    tv_before: float
    tv_after: float
    residual: float
    lipschitz: float

    @property
    def ok(self) -> bool:
        return self.width_after <= self.bound


@dataclass
class SparsifyReport:
    n_samples: int
    tolerance: float
    lam: float
    layers: list
    objective_before: float
    objective_after: float
    phi_bound: float
    norm_bound_export: float
    output_dims: list
    exported_widths: list
    output_deviation: float
    certified_output_bound: float
    notes: list = field(default_factory=lambda: list(REPORT_NOTES))

    @property
    def width_cascade_ok(self) -> bool:
        dims = self.exported_widths + [self.output_dims[-1]]
        return all(a <= self.n_samples * b for a, b in zip(dims[:-1], dims[1:]))

    @property
    def checks(self) -> dict:
        return {
            "width_bound": all(r.ok for r in self.layers) and self.width_cascade_ok,
            "objective_non_increase": self.objective_after <= self.objective_before + 1e-6,
            "output_preservation": self.output_deviation <= self.certified_output_bound,
            "tv_non_increase": all(r.tv_after <= r.tv_before + 1e-9 for r in self.layers),
            "norm_bound": self.norm_bound_export <= self.phi_bound + 1e-9,
        }

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = self.checks
        d["ok"] = self.ok
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["layer", "width_before", "width_after", "units_after", "bound",
                  "tv_before", "tv_after", "residual", "lipschitz"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in self.layers:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, f) for f in fields)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"# {note}" for note in self.notes]
        lines.append(f"samples N = {self.n_samples}, tolerance_residual = {self.tolerance:g}, lambda = {self.lam:g}")
        lines.append(f"{'layer':>5} {'atoms':>11} {'bound':>6} {'tv before':>12} {'tv after':>12} {'residual':>10}")
        for r in self.layers:
            lines.append(f"{r.layer:>5} {r.width_before:>5}->{r.width_after:<5} {r.bound:>6} "
                         f"{r.tv_before:>12.6g} {r.tv_after:>12.6g} {r.residual:>10.3g}")
        lines.append(f"exported widths: {self.exported_widths} (output dim {self.output_dims[-1]})")
        lines.append(f"objective: {self.objective_before:.12g} -> {self.objective_after:.12g}")
        lines.append(f"phi_bound = {self.phi_bound:.12g}; exported norm expression = {self.norm_bound_export:.12g}")
        lines.append(f"output deviation {self.output_deviation:.3g} <= certified {self.certified_output_bound:.3g}")
        for name, ok in self.checks.items():
            lines.append(f"check {name}: {'PASS' if ok else 'FAIL'}")
        return "\n".join(lines) + "\n"


def run_representer(net: DeepMeasureNetwork, data: Dataset, cfg: SolverConfig | None = None,
                    grids: dict | None = None, lam: float = 1.0, loss: LossFunction | None = None):
    """Sparsify every layer from the output to the input and export the result.

    Returns ``(finite_network, report, sparse_net)``.  ``grids`` optionally
    maps layer indices to candidate grids; by default every admissible atom
    over the layer's input dimension is a candidate.
    """
    cfg = cfg or SolverConfig()
    loss = loss or LossFunction()
    grids = grids or {}
    for layer in net.layers[1:]:
        if not isinstance(layer.basis, DiscreteNeural):
            raise UnsupportedBasis("the representer pipeline needs discrete hidden layers")
    if not isinstance(net.layers[0].basis, InputAffine):
        raise UnsupportedBasis("the first layer must be input-affine")
    N = data.n
    before = objective(net, data, lam, loss)
    out_before = forward(net, data.X)
    reports = []
    current = net
    coords = list(range(net.output_dim))
    for l in range(net.depth, -1, -1):
        reps = hidden_representations(current, data.X)
        nxt = current.layers[l + 1] if l < net.depth else None
        coords, _, reduced = project_layer(nxt, reps[l + 1])
        layer = current.layers[l]
        grid = grids.get(l) or default_grid(layer)
        if not coords:
            # nothing downstream reads this layer: the zero map interpolates trivially
            res = InterpolationResult(AtomicVectorMeasure.empty(1), 0.0, 0.0, 0.0, [])
        else:
            try:
                res = sparsify_layer(l, reps, current, grid, cfg, targets=reduced)
            except Infeasible:
                raise
            except RKBSError as exc:
                raise type(exc)(f"layer {l}: {exc}") from None
        ambient = net.output_dim if nxt is None else max(max(coords, default=-1) + 1, 1)
        new_layer = LayerMeasure(layer.basis, _embed(res.measure, coords, ambient), layer.input_dim)
        layers = list(current.layers)
        layers[l] = new_layer
        if nxt is not None:
            layers[l + 1] = LayerMeasure(nxt.basis, nxt.measure, ambient)
        current = DeepMeasureNetwork(tuple(layers))
        units = len(new_layer.unit_locations())
        reports.append(LayerReport(l, len(layer.measure), len(res.measure), units, N * max(len(coords), 0),
                                   tv_norm(layer.measure), tv_norm(new_layer.measure), res.residual,
                                   new_layer.lipschitz_bound()))
        log.info("layer %d: %d -> %d atoms (bound %d), residual %.2e", l, len(layer.measure),
                 len(res.measure), N * len(coords), res.residual)
    reports.reverse()

    finite = export_finite(current)
    after = objective(current, data, lam, loss)
    deviation = float(np.max(np.linalg.norm(forward(current, data.X) - out_before, axis=1), initial=0.0))
    # a residual at layer l moves the output by at most r_l times the downstream Lipschitz product
    lips = [r.lipschitz for r in reports]
    certified = 0.0
    for l in range(len(reports)):
        certified += cfg.tolerance_residual * float(np.prod(lips[l + 1:]))
    report = SparsifyReport(
        n_samples=N, tolerance=cfg.tolerance_residual, lam=lam, layers=reports,
        objective_before=before, objective_after=after,
        phi_bound=complexity_upper_bound(current), norm_bound_export=discrete_norm_bound(finite),
        output_dims=current.dims, exported_widths=finite.widths,
        output_deviation=deviation, certified_output_bound=certified)
    return finite, report, current
