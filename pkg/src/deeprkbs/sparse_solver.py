"""Sparse atomic solvers for layer-wise fitting problems.

Given layer inputs ``x_i`` and targets ``t_i`` the solvers search for an
atomic measure ``mu = sum_k w_k delta(theta_k)`` over a candidate grid of
locations, either

* penalized:     min 1/2 sum_i |f_mu(x_i) - t_i|^2 + lam * TV(mu), or
* interpolating: min TV(mu)  s.t.  f_mu(x_i) = t_i  (up to a tolerance).

The penalized problem is solved by a fully-corrective conditional gradient
method.  Its linear minimization oracle scores every candidate location by
``|sum_i r_i rho(x_i, theta)|`` and inserts the single best atom
``y * delta(theta)``; after each insertion all active weights are re-fitted
with accelerated proximal gradient steps.  The interpolation problem is
reached by a lambda-homotopy followed by an exact support reduction that
keeps at most ``N * m`` atoms.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisFunction
from .errors import AtomBudgetExceeded, DimensionMismatch, EmptyGrid, Infeasible
from .measure import AtomicVectorMeasure, tv_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerConstraintSet:
    inputs: np.ndarray
    targets: np.ndarray
    basis: BasisFunction

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        T = np.asarray(self.targets, dtype=float)
        if T.ndim == 1:
            T = T[:, None]
        if X.shape[0] != T.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} inputs but {T.shape[0]} targets")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", T)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True)
class CandidateGrid:
    """Finite set of candidate atom locations for the oracle.

    Discrete grids are index ranges.  Euclidean grids are axis-aligned
    product grids in lexicographic order; with ``refine_steps > 0`` the
    oracle polishes the best grid point by a coordinate search whose radius
    starts at the grid spacing and shrinks by ``shrink`` each round.
    """
    locations: tuple
    refine_steps: int = 0
    shrink: float = 0.5
    spacing: tuple | None = None
    lower: tuple | None = None
    upper: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(self.locations))
        if not self.locations:
            raise EmptyGrid("candidate grid is empty")

    @classmethod
    def discrete(cls, stop: int, start: int = 0) -> "CandidateGrid":
        if stop <= start:
            raise EmptyGrid(f"empty index range [{start}, {stop})")
        return cls(tuple(range(start, stop)))

    @classmethod
    def euclidean(cls, lower, upper, counts, refine_steps: int = 0, shrink: float = 0.5) -> "CandidateGrid":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        counts = np.broadcast_to(np.asarray(counts, dtype=int), lower.shape)
        if np.any(counts < 1):
            raise EmptyGrid("every axis needs at least one point")
        axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(lower, upper, counts)]
        spacing = tuple(float((hi - lo) / (c - 1)) if c > 1 else float(hi - lo) / 2 or 1.0
                        for lo, hi, c in zip(lower, upper, counts))
        locs = tuple(tuple(float(v) for v in p) for p in itertools.product(*axes))
        return cls(locs, refine_steps, shrink, spacing, tuple(lower), tuple(upper))

    @classmethod
    def for_basis(cls, basis, input_dim: int) -> "CandidateGrid":
        """Every admissible location of a discrete basis reading ``input_dim`` coordinates."""
        return cls(tuple(basis.candidates(input_dim)))


@dataclass(frozen=True)
class HomotopyConfig:
    lambda_start: float | None = None
    decay: float = 0.5
    min_lambda: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("homotopy decay must lie in (0, 1)")
        if self.min_lambda <= 0:
            raise ValueError("min_lambda must be positive")


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 1.0
    max_atoms: int = 10_000
    max_outer_iters: int = 1000
    fc_inner_iters: int = 500
    tolerance_residual: float = 1e-6
    tolerance_gap: float = 1e-3
    homotopy: HomotopyConfig = field(default_factory=HomotopyConfig)

    def __post_init__(self):
        for name in ("lam", "max_atoms", "max_outer_iters", "fc_inner_iters",
                     "tolerance_residual", "tolerance_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        homotopy = HomotopyConfig(**d.pop("homotopy", {}))
        return cls(homotopy=homotopy, **d)

    def to_dict(self) -> dict:
        return {"lam": self.lam, "max_atoms": self.max_atoms, "max_outer_iters": self.max_outer_iters,
                "fc_inner_iters": self.fc_inner_iters, "tolerance_residual": self.tolerance_residual,
                "tolerance_gap": self.tolerance_gap,
                "homotopy": {"lambda_start": self.homotopy.lambda_start, "decay": self.homotopy.decay,
                             "min_lambda": self.homotopy.min_lambda}}


def prox_group(w, tau: float) -> np.ndarray:
    """Proximal map of ``tau * ||.||_2``: block soft-thresholding."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    if norm <= tau:
        return np.zeros_like(w)
    return (1.0 - tau / norm) * w


def _prox_rows(V, tau):
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    scale = np.where(norms > tau, 1.0 - tau / np.where(norms > 0, norms, 1.0), 0.0)
    return V * scale


def _objective(A, W, T, lam):
    R = A @ W - T
    return 0.5 * float(np.sum(R * R)) + lam * float(np.sum(np.linalg.norm(W, axis=1)))


def _power_lipschitz(A, iters=300, rtol=1e-12):
    """Largest eigenvalue of ``A^T A`` by power iteration (deterministic start)."""
    K = A.shape[1]
    if K == 0:
        return 1.0
    v = np.ones(K) / np.sqrt(K) + 1e-3 * np.arange(K) / K
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        u = A.T @ (A @ v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return 1.0
        v = u / new
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    # power iteration approaches from below; pad the estimate
    return est * 1.01


def _fully_correct(A, W, T, lam, iters, lip=None):
    """Accelerated proximal gradient on the active weights, best iterate kept."""
    if A.shape[1] == 0:
        return W, _objective(A, W, T, lam), 0
    step = 1.0 / (lip if lip is not None else _power_lipschitz(A))
    AtA, AtT = A.T @ A, A.T @ T
    best, best_obj = W, _objective(A, W, T, lam)
    x_prev, y, t = W, W.copy(), 1.0
    n = 0
    for n in range(1, iters + 1):
        x = _prox_rows(y - step * (AtA @ y - AtT), step * lam)
        obj = _objective(A, x, T, lam)
        if obj < best_obj:
            best, best_obj = x, obj
        if np.sum((y - x) * (x - x_prev)) > 0:  # gradient-based adaptive restart
            t, y = 1.0, x.copy()
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
        if np.max(np.abs(x - x_prev), initial=0.0) <= 1e-15 * (1.0 + np.max(np.abs(x), initial=0.0)):
            x_prev = x
            break
        x_prev = x
    return best, best_obj, n


def _newton_polish(A, W, T, lam, iters=50):
    """Newton steps on the smooth stationarity system of the nonzero rows.

    On the rows with ``w_k != 0`` the objective is smooth; its gradient is
    ``A_k^T (A W - T) + lam * w_k / |w_k|``.  Damped Newton with a backtracking
    line search on the objective; returns the best point seen.
    """
    norms = np.linalg.norm(W, axis=1)
    nz = np.flatnonzero(norms > 0)
    if nz.size == 0:
        return W, _objective(A, W, T, lam)
    m = W.shape[1]
    An = A[:, nz]
    AtA, AtT = An.T @ An, An.T @ T
    cur = W[nz].copy()
    base = W.copy()
    base[nz] = 0.0
    rest = A @ base  # contribution of the zero rows (exactly zero, kept for clarity)
    def obj(V):
        R = An @ V + rest - T
        return 0.5 * float(np.sum(R * R)) + lam * float(np.sum(np.linalg.norm(V, axis=1)))
    f = obj(cur)
    k = len(nz)
    eye = np.eye(m)
    for _ in range(iters):
        nrm = np.linalg.norm(cur, axis=1)
        if np.any(nrm == 0):
            break
        U = cur / nrm[:, None]
        F = AtA @ cur - AtT + An.T @ rest + lam * U
        if np.max(np.abs(F)) <= 1e-15 * (1.0 + np.max(np.abs(AtT))):
            break
        H = np.kron(AtA, eye)
        for i in range(k):
            H[i * m:(i + 1) * m, i * m:(i + 1) * m] += lam * (eye - np.outer(U[i], U[i])) / nrm[i]
        d = np.linalg.lstsq(H, -F.ravel(), rcond=None)[0].reshape(k, m)
        t = 1.0
        while t > 1e-10:
            cand = cur + t * d
            fc = obj(cand)
            if fc < f:
                break
            t *= 0.5
        else:
            break
        cur, f = cand, fc
    out = W.copy()
    out[nz] = cur
    return out, _objective(A, out, T, lam)


def _active_kkt_violation(A, W, T, lam):
    """Largest ``| grad_k + lam * w_k / |w_k| |`` over nonzero active rows, relative to lam."""
    if A.shape[1] == 0:
        return 0.0
    G = A.T @ (A @ W - T)
    norms = np.linalg.norm(W, axis=1)
    nz = norms > 0
    viol = np.zeros(len(W))
    viol[nz] = np.linalg.norm(G[nz] + lam * W[nz] / norms[nz, None], axis=1)
    viol[~nz] = np.maximum(np.linalg.norm(G[~nz], axis=1) - lam, 0.0)
    return float(np.max(viol)) / lam


class _GridProblem:
    """Constraint data with the design matrix over the grid precomputed."""

    def __init__(self, constraints: LayerConstraintSet, grid: CandidateGrid):
        if not grid.locations:
            raise EmptyGrid("candidate grid is empty")
        self.c = constraints
        self.grid = grid
        self.basis = constraints.basis
        self.X = constraints.inputs
        self.T = constraints.targets
        self.Phi = self.basis.design(self.X, grid.locations)
        self.scale = max(float(np.max(self.scores(self.T))), float(np.max(np.abs(self.T))), 1e-300)

    def column(self, loc):
        return self.basis.design(self.X, [loc])[:, 0]

    def scores(self, R):
        return np.linalg.norm(self.Phi.T @ R, axis=1)

    def lmo(self, R):
        s = self.scores(R)
        g = int(np.argmax(s))  # first maximizer: smallest index / lexicographic
        loc, col, score = self.grid.locations[g], self.Phi[:, g], float(s[g])
        if self.grid.refine_steps and self.basis.kind == "euclidean" and score > 0:
            loc, col, score = self._refine(R, loc, col, score)
        v = col @ R
        norm = np.linalg.norm(v)
        if norm > 0:
            y = v / norm
        else:
            y = np.zeros(R.shape[1])
            y[0] = 1.0
        return loc, col, y, score

    def _refine(self, R, loc, col, score):
        theta = np.array(loc)
        radius = np.array(self.grid.spacing, dtype=float)
        lo = np.array(self.grid.lower) if self.grid.lower is not None else None
        hi = np.array(self.grid.upper) if self.grid.upper is not None else None
        for _ in range(self.grid.refine_steps):
            for axis in range(theta.size):
                for sign in (-1.0, 1.0):
                    cand = theta.copy()
                    cand[axis] += sign * radius[axis]
                    if lo is not None:
                        cand = np.clip(cand, lo, hi)
                    c = self.column(tuple(cand))
                    s = float(np.linalg.norm(c @ R))
                    if s > score:
                        theta, col, score = cand, c, s
            radius = radius * self.grid.shrink
        return tuple(float(v) for v in theta), col, score


@dataclass
class LMOResult:
    theta: object
    direction: np.ndarray
    score: float


def lmo(residuals, constraints: LayerConstraintSet, grid: CandidateGrid) -> LMOResult:
    """Best extreme point ``y * delta(theta)`` against the residuals ``r_i``."""
    R = np.asarray(residuals, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    if R.shape != constraints.targets.shape:
        raise DimensionMismatch(f"residuals of shape {R.shape}, expected {constraints.targets.shape}")
    theta, _, y, score = _GridProblem(constraints, grid).lmo(R)
    return LMOResult(theta, y, score)


@dataclass
class RegularizedResult:
    measure: AtomicVectorMeasure
    objective: float
    dual_gap: float
    certificate: float
    iterations: int
    trace: list


@dataclass
class _Active:
    locs: list
    A: np.ndarray
    W: np.ndarray

    def measure(self, m):
        if not self.locs:
            return AtomicVectorMeasure.empty(m)
        return AtomicVectorMeasure(self.locs, self.W, m)

    def drop_zeros(self):
        keep = np.linalg.norm(self.W, axis=1) > 0
        if not np.all(keep):
            self.locs = [loc for loc, k in zip(self.locs, keep) if k]
            self.A = self.A[:, keep]
            self.W = self.W[keep]


def _warm_active(problem: _GridProblem, warm: AtomicVectorMeasure | None) -> _Active:
    N, m = problem.T.shape
    if warm is None or len(warm) == 0:
        return _Active([], np.zeros((N, 0)), np.zeros((0, m)))
    if warm.target_dim != m:
        raise DimensionMismatch("warm start has the wrong target dimension")
    A = problem.basis.design(problem.X, warm.locations)
    return _Active(list(warm.locations), A, np.array(warm.weights))


def _dual_gap(problem, active, lam):
    """Primal minus dual value using the scaled residual as dual candidate."""
    T = problem.T
    R = T - active.A @ active.W
    primal = _objective(active.A, active.W, T, lam)
    smax = float(np.max(problem.scores(R)))
    if active.locs:
        smax = max(smax, float(np.max(np.linalg.norm(active.A.T @ R, axis=1))))
    s = 1.0 if smax <= lam else lam / smax
    dual = s * float(np.sum(R * T)) - 0.5 * s * s * float(np.sum(R * R))
    return primal - dual, smax


def _solve_regularized(problem: _GridProblem, cfg: SolverConfig, lam: float,
                       warm: AtomicVectorMeasure | None = None) -> RegularizedResult:
    T = problem.T
    m = T.shape[1]
    active = _warm_active(problem, warm)
    obj = _objective(active.A, active.W, T, lam)
    trace = []
    # absolute slack: below this the scores are rounding noise
    slack = 1e-13 * problem.scale
    threshold = lam * (1.0 + cfg.tolerance_gap) + slack
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        R = T - active.A @ active.W
        loc, col, _, score = problem.lmo(R)
        kkt = _active_kkt_violation(active.A, active.W, T, lam) * lam
        if score <= threshold and kkt <= cfg.tolerance_gap * lam + slack:
            break
        inserted = False
        if score > threshold and loc not in active.locs:
            inserted = True
            if len(active.locs) >= cfg.max_atoms:
                raise AtomBudgetExceeded(
                    f"{cfg.max_atoms} atoms in use and the oracle score {score:.3g} still exceeds {threshold:.3g}")
            active.locs.append(loc)
            active.A = np.column_stack([active.A, col])
            active.W = np.vstack([active.W, np.zeros((1, m))])
        W, new_obj, _ = _fully_correct(active.A, active.W, T, lam, cfg.fc_inner_iters)
        W2, obj2 = _newton_polish(active.A, W, T, lam)
        if obj2 <= new_obj:
            W, new_obj = W2, obj2
        if new_obj > obj + 1e-12 * (1.0 + abs(obj)):
            raise AssertionError(f"objective increased from {obj!r} to {new_obj!r}")
        stalled = not inserted and new_obj >= obj - 1e-15 * (1.0 + abs(obj))
        active.W = W
        active.drop_zeros()
        obj = new_obj
        R = T - active.A @ active.W
        trace.append({"iter": it, "objective": obj, "score": score, "atoms": len(active.locs),
                      "residual": float(np.max(np.linalg.norm(R, axis=1), initial=0.0))})
        if stalled:
            break
    gap, smax = _dual_gap(problem, active, lam)
    return RegularizedResult(active.measure(m), _objective(active.A, active.W, T, lam),
                             gap, smax, it, trace)


def solve_regularized(constraints: LayerConstraintSet, grid: CandidateGrid, cfg: SolverConfig,
                      warm_start: AtomicVectorMeasure | None = None) -> RegularizedResult:
    """Minimize ``1/2 sum_i |f_mu(x_i) - t_i|^2 + cfg.lam * TV(mu)`` over the grid.

    ``certificate`` is the final oracle score; at convergence it is at most
    ``lam * (1 + 2 * tolerance_gap)``.
    """
    return _solve_regularized(_GridProblem(constraints, grid), cfg, cfg.lam, warm_start)


def reduce_support(A, W, max_atoms: int, rtol: float = 1e-12):
    """Shrink an atomic solution to at most ``max_atoms`` atoms.

    Each atom contributes the rank-one matrix ``c_k a_k y_k^T`` (with
    ``c_k = |w_k|``) to the fitted values.  While there are more atoms than
    allowed these matrices are linearly dependent; moving the coefficients
    along a null vector keeps the fit and, with the sign chosen so the sum
    of coefficients does not grow, never increases the total variation.  The
    step stops when one coefficient hits zero, and that atom is removed.
    Returns the kept row indices and the new weights.
    """
    W = np.array(W, dtype=float)
    c = np.linalg.norm(W, axis=1)
    keep = list(np.flatnonzero(c > 0))
    Y = np.zeros_like(W)
    Y[keep] = W[keep] / c[keep, None]
    while len(keep) > max_atoms:
        V = np.stack([np.outer(A[:, k], Y[k]).ravel() for k in keep], axis=1)
        _, _, vt = np.linalg.svd(V, full_matrices=True)
        alpha = vt[-1]
        if np.sum(alpha) > 0 or (np.sum(alpha) == 0 and not np.any(alpha < 0)):
            alpha = -alpha
        neg = alpha < -rtol * np.max(np.abs(alpha))
        ck = c[keep]
        ratios = np.full(len(keep), np.inf)
        ratios[neg] = ck[neg] / -alpha[neg]
        j = int(np.argmin(ratios))
        ck = ck + ratios[j] * alpha
        ck[j] = 0.0
        c[keep] = np.maximum(ck, 0.0)
        keep = [k for k in keep if c[k] > 0]
    out = np.zeros_like(W)
    out[keep] = c[keep, None] * Y[keep]
    return keep, out[keep]


def complete_interpolation(A, W, T, lam, iters=20):
    """Newton solve of the exact-interpolation optimality system on a fixed support.

    Unknowns are the weights ``W`` and multipliers ``Z``; the equations are
    ``A W = T`` and ``w_k / |w_k| = (A^T Z)_k``.  A penalized solution at
    small ``lam`` with residual ``R`` is close to a root with ``Z = R / lam``.
    Returns the refined weights, or ``None`` when Newton fails.
    """
    N, m = T.shape
    K = A.shape[1]
    if K == 0 or np.any(np.linalg.norm(W, axis=1) == 0):
        return None
    eye = np.eye(m)
    R = T - A @ W
    Z = R / lam
    W = W.copy()
    B1 = np.kron(A, eye)
    B2 = -np.kron(A.T, eye)
    for _ in range(iters):
        nrm = np.linalg.norm(W, axis=1)
        if np.any(nrm <= 1e-300):
            return None
        U = W / nrm[:, None]
        F1 = (A @ W - T).ravel()
        F2 = (U - A.T @ Z).ravel()
        if max(np.max(np.abs(F1)), np.max(np.abs(F2))) <= 1e-15 * (1.0 + np.max(np.abs(T))):
            break
        D = np.zeros((K * m, K * m))
        for k in range(K):
            D[k * m:(k + 1) * m, k * m:(k + 1) * m] = (eye - np.outer(U[k], U[k])) / nrm[k]
        J = np.block([[B1, np.zeros((N * m, N * m))], [D, B2]])
        step = np.linalg.lstsq(J, -np.concatenate([F1, F2]), rcond=None)[0]
        W = W + step[:K * m].reshape(K, m)
        Z = Z + step[K * m:].reshape(N, m)
    if not np.all(np.isfinite(W)):
        return None
    return W


@dataclass
class InterpolationResult:
    measure: AtomicVectorMeasure
    tv: float
    residual: float
    lam: float
    path: list


def _residual_max(R):
    return float(np.max(np.linalg.norm(R, axis=1), initial=0.0))


def solve_interpolation(constraints: LayerConstraintSet, grid: CandidateGrid,
                        cfg: SolverConfig) -> InterpolationResult:
    """Approximate ``min TV(mu)`` subject to ``f_mu(x_i) = t_i`` for all ``i``.

    Runs the penalized solver along a decreasing sequence of ``lam`` values,
    warm-starting each from the previous solution, until the largest
    per-sample residual is below ``cfg.tolerance_residual``.  The result is
    then reduced to at most ``N * m`` atoms without changing the fit or
    increasing the TV.
    """
    problem = _GridProblem(constraints, grid)
    T = problem.T
    N, m = T.shape
    if not np.any(T):
        return InterpolationResult(AtomicVectorMeasure.empty(m), 0.0, 0.0, 0.0, [])
    lam = cfg.homotopy.lambda_start
    if lam is None:
        lam = float(np.max(problem.scores(T)))
    if lam <= 0:
        raise Infeasible("targets are orthogonal to every candidate atom")
    warm = None
    path = []
    while True:
        res = _solve_regularized(problem, cfg, lam, warm)
        warm = res.measure
        A = problem.basis.design(problem.X, warm.locations) if len(warm) else np.zeros((N, 0))
        R = T - A @ np.asarray(warm.weights) if len(warm) else T
        resid = _residual_max(R)
        path.append({"lam": lam, "residual": resid, "residual_fro": float(np.linalg.norm(R)),
                     "tv": tv_norm(warm), "atoms": len(warm), "gap": res.dual_gap})
        log.debug("homotopy lam=%.3e residual=%.3e atoms=%d", lam, resid, len(warm))
        if resid <= cfg.tolerance_residual:
            break
        if lam <= cfg.homotopy.min_lambda:
            raise Infeasible(f"residual {resid:.3e} above {cfg.tolerance_residual:.1e} at lam={lam:.1e}")
        lam = max(lam * cfg.homotopy.decay, cfg.homotopy.min_lambda)

    if len(warm) > N * m:
        keep, Wr = reduce_support(A, np.asarray(warm.weights), N * m)
        warm = AtomicVectorMeasure([warm.locations[k] for k in keep], Wr, m)
        A = problem.basis.design(problem.X, warm.locations)
        resid = _residual_max(T - A @ np.asarray(warm.weights))
    # the penalized solution undershoots the TV by O(lam); close the gap on the support
    Wc = complete_interpolation(A, np.asarray(warm.weights), T, lam)
    if Wc is not None:
        rc = _residual_max(T - A @ Wc)
        if rc <= min(resid, cfg.tolerance_residual):
            warm = AtomicVectorMeasure(warm.locations, Wc, m)
            resid = rc
    if len(warm) > N * m:
        raise AssertionError(f"support {len(warm)} exceeds N*m = {N * m}")
    return InterpolationResult(warm, tv_norm(warm), resid, lam, path)
