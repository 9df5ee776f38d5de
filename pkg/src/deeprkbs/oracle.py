"""Slow, independent reference solvers for tiny instances.

Nothing here shares code with the production solver apart from evaluating
the basis functions.  The regularized reference is plain proximal gradient
on dense weights over the whole grid; the interpolation reference
enumerates supports and solves each by iteratively reweighted least
squares.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numba
import numpy as np

from .errors import CapExceeded, Infeasible
from .measure import AtomicVectorMeasure
from .network import DeepMeasureNetwork, LayerMeasure
from .sparse_solver import CandidateGrid, LayerConstraintSet
from .trainer import Dataset, LossFunction, risk

MAX_GRID = 12
MAX_SAMPLES = 4
MAX_TARGET_DIM = 2


@dataclass(frozen=True)
class TinyInstance:
    constraints: LayerConstraintSet
    grid: CandidateGrid
    lam: float | None = None

    def __post_init__(self):
        c = self.constraints
        if len(self.grid.locations) > MAX_GRID:
            raise CapExceeded(f"grid of {len(self.grid.locations)} atoms exceeds {MAX_GRID}")
        if c.n_samples > MAX_SAMPLES:
            raise CapExceeded(f"{c.n_samples} samples exceed {MAX_SAMPLES}")
        if c.target_dim > MAX_TARGET_DIM:
            raise CapExceeded(f"target dimension {c.target_dim} exceeds {MAX_TARGET_DIM}")

    def design(self) -> np.ndarray:
        return self.constraints.basis.design(self.constraints.inputs, self.grid.locations)


@dataclass
class OracleRegularized:
    objective: float
    measure: AtomicVectorMeasure
    certified: bool
    score: float
    gap: float
    iterations: int


@numba.njit(cache=True)
def _ista(Phi, T, lam, step, max_iter, check_every):
    G, m = Phi.shape[1], T.shape[1]
    W = np.zeros((G, m))
    PtP = Phi.T @ Phi
    PtT = Phi.T @ T
    it = 0
    prev = np.inf
    for it in range(1, max_iter + 1):
        V = W - step * (PtP @ W - PtT)
        for g in range(G):
            nrm = 0.0
            for j in range(m):
                nrm += V[g, j] * V[g, j]
            nrm = np.sqrt(nrm)
            f = 0.0 if nrm <= step * lam else 1.0 - step * lam / nrm
            for j in range(m):
                W[g, j] = f * V[g, j]
        if it % check_every == 0:
            R = Phi @ W - T
            obj = 0.5 * np.sum(R * R)
            for g in range(G):
                obj += lam * np.sqrt(np.sum(W[g] * W[g]))
            if prev - obj <= 1e-16 * (1.0 + abs(obj)):
                break
            prev = obj
    return W, it


def brute_force_regularized(inst: TinyInstance, max_iter: int = 1_000_000) -> OracleRegularized:
    """Proximal gradient with constant step ``1/|Phi|_2^2`` over every grid atom.

    ``certified`` means the largest grid score at the returned point is at
    most ``lam * (1 + 1e-8)`` and the duality gap is below ``1e-9``.
    """
    if inst.lam is None or inst.lam <= 0:
        raise ValueError("brute_force_regularized needs a positive lambda")
    lam = float(inst.lam)
    Phi = inst.design()
    T = inst.constraints.targets
    L = float(np.linalg.norm(Phi, 2)) ** 2
    step = 1.0 / L if L > 0 else 1.0
    W, it = _ista(np.ascontiguousarray(Phi), np.ascontiguousarray(T), lam, step, max_iter, 1000)
    R = T - Phi @ W
    primal = 0.5 * float(np.sum(R * R)) + lam * float(np.sum(np.linalg.norm(W, axis=1)))
    score = float(np.max(np.linalg.norm(Phi.T @ R, axis=1)))
    s = min(1.0, lam / score) if score > 0 else 1.0
    dual = s * float(np.sum(R * T)) - 0.5 * s * s * float(np.sum(R * R))
    gap = primal - dual
    keep = np.linalg.norm(W, axis=1) > 0
    locs = [loc for loc, k in zip(inst.grid.locations, keep) if k]
    mu = AtomicVectorMeasure(locs, W[keep], T.shape[1]) if locs else AtomicVectorMeasure.empty(T.shape[1])
    certified = score <= lam * (1.0 + 1e-8) and gap <= 1e-9
    return OracleRegularized(primal, mu, certified, score, gap, it)


@dataclass
class OracleInterpolation:
    tv: float
    measure: AtomicVectorMeasure
    support: tuple


def _irls_batch(A, T, iters=500):
    """Batched ``min sum_k |w_k|  s.t.  A_s W = T`` by reweighted least norm.

    ``A`` has shape ``(S, N, k)``.  Each iteration solves
    ``W = D A^T (A D A^T)^+ T`` with ``d_k = sqrt(|w_k|^2 + eps^2)``.
    """
    S, N, k = A.shape
    d = np.ones((S, k))
    eps = 1.0
    W = None
    for _ in range(iters):
        # same iterate as D A^T (A D A^T)^+ T, computed as D^(1/2) (A D^(1/2))^+ T,
        # which is much better conditioned once some d_k are tiny
        r = np.sqrt(d)
        W = r[:, :, None] * (np.linalg.pinv(A * r[:, None, :]) @ T)
        eps = max(eps * 0.95, 1e-12)
        d = np.hypot(_norms(W), eps)
    return W


def _norms(W):
    # norms along the last axis without overflow for huge weights
    s = np.max(np.abs(W), axis=-1, keepdims=True)
    safe = np.where(s > 0, s, 1.0)
    return s[..., 0] * np.sqrt(np.sum((W / safe) ** 2, axis=-1))


def enumerate_supports(inst: TinyInstance, feas_tol: float = 1e-8) -> OracleInterpolation:
    """Exact minimum TV interpolation by exhaustive search over supports.

    A minimizer with at most ``N * m`` atoms exists, and every smaller
    support is contained in one of size ``min(N * m, |grid|)``, so only
    those are enumerated.
    """
    c = inst.constraints
    T = c.targets
    N, m = T.shape
    if not np.any(T):
        return OracleInterpolation(0.0, AtomicVectorMeasure.empty(m), ())
    Phi = inst.design()
    G = Phi.shape[1]
    size = min(N * m, G)
    supports = np.array(list(itertools.combinations(range(G), size)), dtype=int)
    # near-singular supports may overflow; they end up with infinite TV and are never chosen
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _best_support(inst, Phi, supports, T, feas_tol)


def _best_support(inst, Phi, supports, T, feas_tol):
    m = T.shape[1]
    A = Phi[:, supports].transpose(1, 0, 2)
    # feasibility of each support by least squares
    X = np.linalg.pinv(A) @ T
    resid = np.max(np.linalg.norm(A @ X - T, axis=2), axis=1)
    feasible = resid <= feas_tol
    if not np.any(feasible):
        raise Infeasible("no support reproduces the targets")
    supports, A = supports[feasible], A[feasible]
    W = _irls_batch(A, T)
    fit = np.max(np.linalg.norm(A @ W - T, axis=2), axis=1)
    tv = np.sum(_norms(W), axis=1)
    tv = np.where((fit <= feas_tol) & np.isfinite(tv), tv, np.inf)
    best = int(np.argmin(tv))
    if not np.isfinite(tv[best]):
        raise Infeasible("no support reproduces the targets")
    Wb = W[best]
    locs = [inst.grid.locations[g] for g in supports[best]]
    mu = AtomicVectorMeasure(locs, Wb, m)
    return OracleInterpolation(float(tv[best]), mu, tuple(mu.locations))


def finite_difference_gradient(net: DeepMeasureNetwork, data: Dataset, loss: LossFunction | None = None,
                               h: float = 1e-5) -> list:
    """Central differences of the mean loss in every atom weight component."""
    if h <= 0:
        raise ValueError("h must be positive")
    loss = loss or LossFunction()
    out = []
    for l, layer in enumerate(net.layers):
        W = np.array(layer.measure.weights)
        g = np.zeros_like(W)
        for idx in np.ndindex(*W.shape):
            vals = []
            for sign in (1.0, -1.0):
                Wp = W.copy()
                Wp[idx] += sign * h
                mu = AtomicVectorMeasure(layer.measure.locations, Wp, layer.output_dim)
                probe = net.replace_layer(l, LayerMeasure(layer.basis, mu, layer.input_dim))
                vals.append(risk(probe, data, loss))
            g[idx] = (vals[0] - vals[1]) / (2.0 * h)
        out.append(g)
    return out



def random_tiny_instance(seed: int, basis=None) -> TinyInstance:
    """Seeded instance with ``|grid| <= 8``, ``N <= 3``, ``m <= 2`` and feasible targets.

    Targets are generated from a random sparse measure on the grid, so the
    interpolation problem always has a solution.
    """
    from .basis import Activation, DiscreteNeural, WindowSequence

    rng = np.random.default_rng(seed)
    basis = basis or DiscreteNeural(Activation("relu"), WindowSequence("geometric", 0.9))
    N, m, G = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(2, 9))
    grid = CandidateGrid.discrete(G)
    X = rng.normal(size=(N, G))
    Phi = basis.design(X, grid.locations)
    W = rng.normal(size=(G, m)) * (rng.random((G, 1)) < 0.6)
    lam = float(rng.uniform(0.05, 1.0))
    return TinyInstance(LayerConstraintSet(X, Phi @ W, basis), grid, lam)


@dataclass
class CrossCheck:
    seed: int
    objective_diff: float
    tv_rel_diff: float
    support: int
    support_bound: int
    certified: bool

    def passed(self, obj_tol: float = 1e-6, tv_tol: float = 1e-4) -> bool:
        return (self.certified and self.objective_diff < obj_tol and self.tv_rel_diff < tv_tol
                and self.support <= self.support_bound)


def cross_check(seed: int, cfg=None) -> CrossCheck:
    """Compare both production solvers with the oracles on one seeded instance."""
    from .sparse_solver import SolverConfig, solve_interpolation, solve_regularized

    cfg = cfg or SolverConfig(tolerance_gap=1e-9)
    inst = random_tiny_instance(seed)
    c = inst.constraints
    ref = brute_force_regularized(inst)
    reg = solve_regularized(c, inst.grid, SolverConfig.from_dict({**cfg.to_dict(), "lam": inst.lam}))
    ref_tv = enumerate_supports(inst).tv
    interp = solve_interpolation(c, inst.grid, cfg)
    rel = abs(interp.tv - ref_tv) / ref_tv if ref_tv > 0 else abs(interp.tv)
    return CrossCheck(seed, abs(reg.objective - ref.objective), rel, len(interp.measure),
                      c.n_samples * c.target_dim, ref.certified)
