import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _factories import random_discrete_net
from deeprkbs.basis import Activation, ContinuousNeural, DiscreteNeural, InputAffine, WindowSequence
from deeprkbs.errors import DimensionMismatch, KindMismatch, UnsupportedBasis
from deeprkbs.measure import AtomicVectorMeasure, tv_norm
from deeprkbs.network import (DeepMeasureNetwork, FiniteNetwork, LayerMeasure, complexity_upper_bound,
                              discrete_norm_bound, export_finite, forward, forward_finite,
                              make_identity_input_layer)

RELU_FLAT = DiscreteNeural(Activation("relu"), WindowSequence("constant_one"))


def direct_sum(net, x):
    """Independent evaluation: loop over atoms and apply the basis formulas by hand."""
    v = np.asarray(x, dtype=float)
    for layer in net.layers:
        out = np.zeros(layer.output_dim)
        for t, w in zip(layer.measure.locations, layer.measure.weights):
            b = layer.basis
            if isinstance(b, InputAffine):
                val = 1.0 if t == 0 else v[t - 1]
            elif t == 0:
                val = 1.0
            else:
                xi = v[t - 1] if t - 1 < len(v) else 0.0
                val = float(b.activation(xi + b.offset)) * float(b.window(t - 1))
            out = out + val * w
        v = out
    return v


def test_identity_network():
    net = DeepMeasureNetwork((make_identity_input_layer(3),))
    x = np.array([0.5, -2.0, 7.0])
    np.testing.assert_array_equal(forward(net, x), x)


def test_single_atom_shallow():
    l0 = LayerMeasure(InputAffine(1), AtomicVectorMeasure([1], [[1.0]]), 1)
    l1 = LayerMeasure(DiscreteNeural(Activation("relu"), WindowSequence("constant_one"), bias_atom=False),
                      AtomicVectorMeasure([1], [[3.0]]), 1)
    assert forward(DeepMeasureNetwork((l0, l1)), [2.0])[0] == 6.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    net = random_discrete_net(rng, depth=3)
    X = rng.normal(size=(20, net.input_dim))
    batch = forward(net, X)
    for x, y in zip(X, batch):
        assert np.max(np.abs(direct_sum(net, x) - y)) < 1e-12


def test_structure_errors():
    l0 = make_identity_input_layer(2)
    with pytest.raises(UnsupportedBasis):
        DeepMeasureNetwork((LayerMeasure(RELU_FLAT, AtomicVectorMeasure([1], [[1.0]]), 2),))
    bad = LayerMeasure(RELU_FLAT, AtomicVectorMeasure([1], [[1.0]]), 3)
    with pytest.raises(DimensionMismatch):
        DeepMeasureNetwork((l0, bad))
    with pytest.raises(KindMismatch):
        LayerMeasure(RELU_FLAT, AtomicVectorMeasure([(1.0, 2.0)], [[1.0]]), 2)
    with pytest.raises(DimensionMismatch):
        forward(DeepMeasureNetwork((l0,)), [1.0, 2.0, 3.0])


def test_complexity_bound():
    l0 = LayerMeasure(InputAffine(1), AtomicVectorMeasure([1], [[3.0, 4.0]]), 1)
    l1 = LayerMeasure(RELU_FLAT, AtomicVectorMeasure([1], [[3.0]]), 2)
    assert complexity_upper_bound(DeepMeasureNetwork((l0, l1))) == 8.0
    empty = DeepMeasureNetwork((LayerMeasure(InputAffine(1), AtomicVectorMeasure.empty(2), 1),
                                LayerMeasure(RELU_FLAT, AtomicVectorMeasure.empty(1), 2)))
    assert complexity_upper_bound(empty) == 0.0


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
def test_complexity_homogeneity(seed, t):
    net = random_discrete_net(np.random.default_rng(seed), depth=2)
    before = [tv_norm(l.measure) for l in net.layers]
    scaled = net.replace_layer(1, net.layers[1].with_measure(net.layers[1].measure.scale(t)))
    after = [tv_norm(l.measure) for l in scaled.layers]
    assert after[1] == pytest.approx(t * before[1], rel=1e-12)
    assert after[0] == before[0] and after[2] == before[2]


class TestFinite:
    def test_zero_weights(self):
        fn = FiniteNetwork((np.zeros((2, 3)), np.zeros((1, 2))), (np.ones(2), np.array([4.0])))
        assert forward_finite(fn, [1.0, 2.0, 3.0])[0] == 4.0

    def test_small_example(self):
        fn = FiniteNetwork(([[1.0]], [[2.0]]), ([-1.0], [0.0]))
        assert forward_finite(fn, [3.0])[0] == 4.0

    def test_shape_errors(self):
        with pytest.raises(DimensionMismatch):
            FiniteNetwork((np.zeros((2, 3)), np.zeros((1, 3))), (np.zeros(2), np.zeros(1)))
        with pytest.raises(DimensionMismatch):
            FiniteNetwork((np.zeros((2, 3)),), (np.zeros(3),))


class TestExport:
    def test_shallow_linear_row(self):
        l0 = LayerMeasure(InputAffine(3), AtomicVectorMeasure([0, 1, 3], [[0.5], [2.0], [-1.0]]), 3)
        fn = export_finite(DeepMeasureNetwork((l0,)))
        np.testing.assert_array_equal(fn.weights[0], [[2.0, 0.0, -1.0]])
        np.testing.assert_array_equal(fn.biases[0], [0.5])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        net = random_discrete_net(rng)
        fn = export_finite(net)
        X = rng.normal(size=(100, net.input_dim)) * 2
        assert np.max(np.abs(forward(net, X) - forward_finite(fn, X))) < 1e-10
        units = [len(layer.unit_locations()) for layer in net.layers[1:]]
        assert fn.widths == units
        assert discrete_norm_bound(fn) <= complexity_upper_bound(net) + 1e-9

    def test_offset_goes_to_bias(self):
        rng = np.random.default_rng(3)
        basis = DiscreteNeural(Activation("tanh"), WindowSequence("geometric", 0.7), offset=0.25)
        l0 = LayerMeasure(InputAffine(2), AtomicVectorMeasure([0, 1, 2], rng.normal(size=(3, 3))), 2)
        l1 = LayerMeasure(basis, AtomicVectorMeasure([0, 1, 3], rng.normal(size=(3, 1))), 3)
        net = DeepMeasureNetwork((l0, l1))
        X = rng.normal(size=(10, 2))
        np.testing.assert_allclose(forward_finite(export_finite(net), X), forward(net, X), atol=1e-12)

    def test_rejects_continuous(self):
        l0 = make_identity_input_layer(2)
        l1 = LayerMeasure(ContinuousNeural(), AtomicVectorMeasure([(1.0, 0.0)], [[1.0]]), 2)
        with pytest.raises(UnsupportedBasis):
            export_finite(DeepMeasureNetwork((l0, l1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lipschitz_bound_holds(seed):
    rng = np.random.default_rng(seed)
    net = random_discrete_net(rng)
    K = np.prod([layer.lipschitz_bound() for layer in net.layers])
    X, X2 = rng.normal(size=(20, net.input_dim)), rng.normal(size=(20, net.input_dim))
    lhs = np.linalg.norm(forward(net, X) - forward(net, X2), axis=1)
    assert np.all(lhs <= K * np.linalg.norm(X - X2, axis=1) + 1e-9)


def test_continuous_layer_lipschitz():
    rng = np.random.default_rng(0)
    basis = ContinuousNeural(Activation("tanh"), 2.0)
    mu = AtomicVectorMeasure([tuple(rng.normal(size=3)) for _ in range(4)], rng.normal(size=(4, 2)))
    layer = LayerMeasure(basis, mu, 3)
    X, X2 = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    lhs = np.linalg.norm(layer(X) - layer(X2), axis=1)
    assert np.all(lhs <= layer.lipschitz_bound() * np.linalg.norm(X - X2, axis=1) + 1e-12)
