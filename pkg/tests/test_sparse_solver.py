import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeprkbs.basis import Activation, ContinuousNeural, DiscreteNeural, InputAffine, WindowSequence
from deeprkbs.errors import AtomBudgetExceeded, DimensionMismatch, EmptyGrid, Infeasible
from deeprkbs.measure import tv_norm
from deeprkbs.oracle import random_tiny_instance
from deeprkbs.sparse_solver import (CandidateGrid, HomotopyConfig, LayerConstraintSet, SolverConfig, lmo,
                                    prox_group, reduce_support, solve_interpolation, solve_regularized)

TIGHT = SolverConfig(tolerance_gap=1e-9)

# Reference optima of random_tiny_instance(seed), computed once with an interior-point
# conic solver at 1e-13 tolerances: (seed, N, m, |grid|, regularized objective, min TV).
FROZEN = [
    (0, 3, 2, 5, 0.01945132640724349, 0.749419405886967),
    (1, 2, 2, 7, 0.07314237281523588, 0.5998913212866521),
    (2, 3, 1, 2, 0.2295515738190853, 0.8350335062217017),
    (3, 3, 1, 3, 0.4201945039800961, 0.6680463461089502),
    (4, 3, 2, 8, 2.86406917726784, 4.0975945259162465),
    (5, 3, 2, 2, 1.4874670078994585, 1.7980922742556469),
]


class FixedColumns:
    """Basis whose design matrix is given explicitly (one input row per sample)."""
    kind = "discrete"

    def __init__(self, Phi):
        self.Phi = np.asarray(Phi, dtype=float)

    def design(self, X, locations):
        rows = np.asarray(X)[:, 0].astype(int)
        return self.Phi[np.ix_(rows, list(locations))]


def fixed(Phi, T):
    Phi = np.atleast_2d(Phi)
    return LayerConstraintSet(np.arange(Phi.shape[0])[:, None], T, FixedColumns(Phi))


class TestProx:
    def test_examples(self):
        np.testing.assert_array_equal(prox_group([3.0, 4.0], 5.0), [0.0, 0.0])
        np.testing.assert_allclose(prox_group([3.0, 4.0], 2.5), [1.5, 2.0])
        np.testing.assert_array_equal(prox_group([0.0, 0.0], 1.0), [0.0, 0.0])
        with pytest.raises(ValueError):
            prox_group([1.0], -1.0)

    @given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=4), st.floats(0, 50))
    def test_shrinks_norm(self, w, tau):
        out = prox_group(w, tau)
        assert np.linalg.norm(out) == pytest.approx(max(np.linalg.norm(w) - tau, 0.0), abs=1e-9)


class TestLMO:
    def test_zero_residual(self):
        r = lmo(np.zeros((1, 2)), fixed([[1.0, 3.0]], np.zeros((1, 2))), CandidateGrid.discrete(2))
        assert r.score == 0.0 and list(r.direction) == [1.0, 0.0]

    def test_two_atoms(self):
        r = lmo([[2.0]], fixed([[1.0, 3.0]], [[0.0]]), CandidateGrid.discrete(2))
        assert (r.theta, r.score, list(r.direction)) == (1, 6.0, [1.0])

    def test_ties_pick_first(self):
        r = lmo([[1.0]], fixed([[2.0, -2.0, 2.0]], [[0.0]]), CandidateGrid.discrete(3))
        assert r.theta == 0

    def test_shape_error(self):
        with pytest.raises(DimensionMismatch):
            lmo(np.zeros((2, 1)), fixed([[1.0]], [[0.0]]), CandidateGrid.discrete(1))

    @given(st.integers(0, 2**32 - 1))
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        basis = DiscreteNeural(Activation("tanh"))
        X, R = rng.normal(size=(4, 6)), rng.normal(size=(4, 2))
        c = LayerConstraintSet(X, R, basis)
        scores = [np.linalg.norm(sum(R[i] * basis.design(X[i:i + 1], [g])[0, 0] for i in range(4)))
                  for g in range(7)]
        r = lmo(R, c, CandidateGrid.discrete(7))
        assert r.score == pytest.approx(max(scores), rel=1e-12)
        assert np.linalg.norm(r.direction) == pytest.approx(1.0)

    def test_euclidean_refinement_improves(self):
        rng = np.random.default_rng(0)
        basis = ContinuousNeural(Activation("tanh"), 5.0)
        X, R = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
        c = LayerConstraintSet(X, R, basis)
        coarse = lmo(R, c, CandidateGrid.euclidean([-2, -2], [2, 2], 5))
        fine = lmo(R, c, CandidateGrid.euclidean([-2, -2], [2, 2], 5, refine_steps=6))
        assert fine.score >= coarse.score

    def test_empty_grid(self):
        with pytest.raises(EmptyGrid):
            CandidateGrid.discrete(0)
        with pytest.raises(EmptyGrid):
            CandidateGrid(())


class TestRegularized:
    def test_large_lambda_gives_zero(self):
        c = fixed([[1.0, 3.0], [0.5, -1.0]], [[1.0], [2.0]])
        lam_max = np.max(np.abs(c.basis.Phi.T @ c.targets))
        res = solve_regularized(c, CandidateGrid.discrete(2), SolverConfig(lam=lam_max))
        assert len(res.measure) == 0 and res.objective == pytest.approx(2.5)

    def test_single_atom_closed_form(self):
        b = np.array([[3.0, 4.0]])
        res = solve_regularized(fixed([[1.0]], b), CandidateGrid.discrete(1), SolverConfig(lam=2.5))
        np.testing.assert_allclose(res.measure.weights, [prox_group(b[0], 2.5)], atol=1e-12)

    @pytest.mark.parametrize("row", FROZEN, ids=lambda r: f"seed{r[0]}")
    def test_frozen_optimum(self, row):
        seed, N, m, G, obj, _ = row
        inst = random_tiny_instance(seed)
        assert inst.constraints.targets.shape == (N, m) and len(inst.grid.locations) == G
        cfg = SolverConfig(lam=inst.lam, tolerance_gap=1e-9)
        res = solve_regularized(inst.constraints, inst.grid, cfg)
        assert res.objective == pytest.approx(obj, abs=1e-8)
        assert res.certificate <= inst.lam * (1 + 2 * cfg.tolerance_gap)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0))
    def test_trace_monotone_and_certified(self, seed, lam):
        rng = np.random.default_rng(seed)
        c = LayerConstraintSet(rng.normal(size=(4, 6)), rng.normal(size=(4, 2)), DiscreteNeural())
        cfg = SolverConfig(lam=lam)
        res = solve_regularized(c, CandidateGrid.discrete(7), cfg)
        objs = [row["objective"] for row in res.trace]
        assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(objs, objs[1:]))
        assert res.certificate <= lam * (1 + 2 * cfg.tolerance_gap)
        assert res.dual_gap >= -1e-9
        assert tv_norm(res.measure) == pytest.approx(np.sum(np.linalg.norm(res.measure.weights, axis=1)), rel=1e-14)

    def test_atom_budget(self):
        rng = np.random.default_rng(0)
        c = LayerConstraintSet(rng.normal(size=(4, 6)), rng.normal(size=(4, 2)), DiscreteNeural())
        with pytest.raises(AtomBudgetExceeded):
            solve_regularized(c, CandidateGrid.discrete(7), SolverConfig(lam=1e-4, max_atoms=1))


class TestInterpolation:
    def test_zero_targets(self):
        res = solve_interpolation(fixed([[1.0, 2.0]], [[0.0, 0.0]]), CandidateGrid.discrete(2), TIGHT)
        assert len(res.measure) == 0 and res.tv == 0.0

    @given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3),
           st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=2))
    @settings(deadline=None)
    def test_single_constraint_closed_form(self, row, t):
        row = np.array(row)
        if np.max(np.abs(row)) < 0.1 or np.linalg.norm(t) < 1e-3:
            return
        res = solve_interpolation(fixed([row], [t]), CandidateGrid.discrete(3), TIGHT)
        expected = np.linalg.norm(t) / np.max(np.abs(row))
        assert res.tv == pytest.approx(expected, rel=1e-6)
        assert len(res.measure) == 1
        assert res.measure.locations[0] == int(np.argmax(np.abs(row)))

    @pytest.mark.parametrize("row", FROZEN, ids=lambda r: f"seed{r[0]}")
    def test_frozen_min_tv(self, row):
        seed, N, m, _, _, tv = row
        inst = random_tiny_instance(seed)
        res = solve_interpolation(inst.constraints, inst.grid, TIGHT)
        assert res.tv == pytest.approx(tv, rel=1e-6)
        assert len(res.measure) <= N * m and res.residual <= TIGHT.tolerance_residual

    def test_infeasible(self):
        c = fixed([[1.0, 0.0], [1.0, 0.0]], [[1.0], [2.0]])
        with pytest.raises(Infeasible):
            solve_interpolation(c, CandidateGrid.discrete(2), TIGHT)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_homotopy_path(self, seed):
        inst = random_tiny_instance(seed)
        res = solve_interpolation(inst.constraints, inst.grid, TIGHT)
        fro = [p["residual_fro"] for p in res.path]
        assert all(b <= a * (1 + 1e-6) + 1e-12 for a, b in zip(fro, fro[1:]))
        lams = [p["lam"] for p in res.path]
        assert all(b < a for a, b in zip(lams, lams[1:]))
        N, m = inst.constraints.targets.shape
        assert len(res.measure) <= N * m

    def test_support_bound_on_wide_grid(self):
        rng = np.random.default_rng(7)
        basis = InputAffine(12)
        c = LayerConstraintSet(rng.normal(size=(3, 12)), rng.normal(size=(3, 2)), basis)
        res = solve_interpolation(c, CandidateGrid.discrete(13), TIGHT)
        assert len(res.measure) <= 6 and res.residual <= 1e-6

    def test_homotopy_config_validation(self):
        with pytest.raises(ValueError):
            HomotopyConfig(decay=1.0)
        with pytest.raises(ValueError):
            SolverConfig(lam=0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 2))
def test_reduce_support_keeps_fit(seed, N, m):
    rng = np.random.default_rng(seed)
    K = N * m + int(rng.integers(1, 5))
    A, W = rng.normal(size=(N, K)), rng.normal(size=(K, m))
    keep, Wr = reduce_support(A, W, N * m)
    assert len(keep) <= N * m
    np.testing.assert_allclose(A[:, keep] @ Wr, A @ W, atol=1e-9)
    assert np.sum(np.linalg.norm(Wr, axis=1)) <= np.sum(np.linalg.norm(W, axis=1)) + 1e-9
