import numpy as np
import pytest

from wedgenet.datasets import cross as cross_dataset
from wedgenet.datasets import gaussian, uniform_1d
from wedgenet.dict_builder import DataMatrix, build_dictionary
from wedgenet.errors import DimensionError, ProvenanceError
from wedgenet.lasso_solver import problem_for, solve
from wedgenet.net_builder import (Layer, ReluNetwork, accuracy, balance_scaling, describe_neurons, forward,
                                  nonconvex_cost, rank_reduce, reconstruct, regularization)


def _trained(variant, data, lam=0.1):
    dictionary = build_dictionary(variant, data)
    solution = solve(problem_for(dictionary, data.y, lam=lam))
    return dictionary, solution, reconstruct(dictionary, solution, data)


def _lasso_outputs(dictionary, solution):
    outputs = dictionary.K @ solution.Z
    return outputs + solution.T if dictionary.intercept else outputs


@pytest.mark.parametrize('variant, data', [
    ('1d', uniform_1d(8)),
    ('l1-nobias', gaussian(10, 3)),
    ('l2-bias', gaussian(8, 2)),
    ('2d-l1-bias', gaussian(6, 2)),
    ('3layer-l1-nobias', gaussian(4, 2)),
    ('3layer-l1-bias', gaussian(4, 2)),
])
def test_reconstruction_matches_lasso_outputs(variant, data):
    dictionary, solution, net = _trained(variant, data)
    assert net.depth == dictionary.depth
    assert net.layers[0].width == solution.support.size
    assert np.allclose(forward(net, data.samples), _lasso_outputs(dictionary, solution), rtol=0, atol=1e-10)


@pytest.mark.parametrize('variant, data', [
    ('1d', uniform_1d(8)),
    ('l1-nobias', gaussian(10, 3)),
    ('2d-l1-bias', gaussian(6, 2)),
    ('3layer-l1-nobias', gaussian(4, 2)),
    ('l2-nobias', gaussian(8, 3)),
    ('l2-bias', gaussian(8, 2)),
    ('l1-nobias', gaussian(8, 2, outputs=3)),
    ('l2-bias', gaussian(8, 2, outputs=2)),
])
def test_balanced_cost_equals_lasso_objective(variant, data):
    dictionary, solution, net = _trained(variant, data)
    assert net.p == dictionary.p
    report = nonconvex_cost(balance_scaling(net), data, lam=0.1)
    assert report.total == pytest.approx(solution.objective, rel=1e-8)
    assert report.total == pytest.approx(report.loss_term + 0.1 * report.reg_term)


def test_one_dimensional_kinks_sit_on_training_points():
    data = uniform_1d(8)
    _, _, net = _trained('1d', data)
    x = data.samples[:, 0]
    first = net.layers[0]
    breakpoints = -first.b / first.W[0]
    for point in breakpoints:
        assert np.min(np.abs(x - point)) <= 1e-12
    for left, right in zip(x[:-1], x[1:]):
        grid = np.linspace(left, right, 5)[1:-1]
        values = forward(net, grid[:, None])[:, 0]
        assert values[1] - values[0] == pytest.approx(values[2] - values[1], abs=1e-10)


def test_provenance_neurons_are_orthogonal_to_their_generators():
    data = gaussian(10, 3)
    dictionary, _, net = _trained('l1-nobias', data)
    W = net.layers[0].W
    for neuron, entry in net.provenance_of(0).items():
        w = W[:, neuron]
        for i in entry.samples:
            x = dictionary.generators[i]
            assert abs(x @ w) <= 1e-8 * np.linalg.norm(w) * np.linalg.norm(x)


def test_single_feature_vanishes_on_its_generator():
    data = gaussian(6, 2)
    dictionary, solution, net = _trained('l2-nobias', data, lam=0.01)
    for neuron, entry in net.provenance_of(0).items():
        single = ReluNetwork((Layer(net.layers[0].W[:, [neuron]]), Layer(np.ones((1, 1)))))
        for i in entry.samples:
            assert forward(single, dictionary.generators[i][None, :])[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_empty_support_is_a_constant_network():
    data = DataMatrix(np.array([[0.0], [1.0], [2.0]]), np.array([3.0, 3.0, 3.0]))
    _, solution, net = _trained('1d', data, lam=10.0)
    assert solution.support.size == 0
    assert np.allclose(forward(net, np.array([[-5.0], [0.5], [7.0]])), 3.0)


def test_reconstruct_rejects_other_data():
    data = gaussian(6, 2)
    dictionary = build_dictionary('l2-bias', data)
    solution = solve(problem_for(dictionary, data.y, lam=0.1))
    with pytest.raises(ProvenanceError):
        reconstruct(dictionary, solution, gaussian(6, 2, seed=1))


def test_forward_examples():
    zero = ReluNetwork((Layer(np.zeros((2, 3)), np.array([1.0, -1.0, 2.0])), Layer(np.zeros((3, 1)), [0.5])))
    assert np.array_equal(forward(zero, np.ones((4, 2))), np.full((4, 1), 0.5))
    identity = ReluNetwork((Layer(np.eye(2)),))
    assert np.array_equal(forward(identity, [[1.0, -2.0]]), [[1.0, -2.0]])
    with pytest.raises(DimensionError):
        forward(zero, np.ones((4, 3)))


def test_forward_matches_scalar_evaluation(rng):
    W1, b1, W2, b2 = rng.standard_normal((3, 5)), rng.standard_normal(5), rng.standard_normal((5, 1)), 0.3
    net = ReluNetwork((Layer(W1, b1), Layer(W2, [b2])))
    X = rng.standard_normal((7, 3))
    for x, value in zip(X, forward(net, X)[:, 0]):
        expected = b2 + sum(W2[j, 0] * max(0.0, sum(x[k] * W1[k, j] for k in range(3)) + b1[j]) for j in range(5))
        assert value == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_layers_must_chain():
    with pytest.raises(DimensionError):
        Layer(np.ones((2, 3)), np.ones(2))
    with pytest.raises(DimensionError):
        ReluNetwork((Layer(np.ones((2, 3))), Layer(np.ones((2, 1)))))


def test_cost_of_hand_built_network():
    net = ReluNetwork((Layer(np.array([[2.0]])), Layer(np.array([[3.0]]))), p=2)
    data = DataMatrix(np.array([[1.0]]), np.array([5.0]))
    report = nonconvex_cost(net, data, lam=0.5)
    assert report.loss_term == pytest.approx(0.5)
    assert report.reg_term == pytest.approx(13.0)
    assert report.total == pytest.approx(7.0)
    silent = ReluNetwork((Layer(np.zeros((1, 1))), Layer(np.zeros((1, 1)))))
    assert nonconvex_cost(silent, data, lam=1.0).total == pytest.approx(12.5)


def test_balance_formula():
    net = ReluNetwork((Layer(np.array([[4.0]])), Layer(np.array([[1.0]]))), p=2)
    balanced = balance_scaling(net)
    assert balanced.layers[0].W[0, 0] == pytest.approx(2.0)
    assert balanced.layers[1].W[0, 0] == pytest.approx(2.0)
    again = balance_scaling(balanced)
    assert np.allclose(again.layers[0].W, balanced.layers[0].W, rtol=1e-15)


def _scaled(net, neuron, s):
    first, second = net.layers
    W1, W2 = first.W.copy(), second.W.copy()
    b1 = first.b.copy()
    W1[:, neuron] *= s
    b1[neuron] *= s
    W2[neuron] /= s
    return ReluNetwork((Layer(W1, b1), Layer(W2, second.b)), p=net.p)


@pytest.mark.parametrize('p', [1, 2])
def test_balance_is_stationary_and_keeps_outputs(rng, p):
    net = ReluNetwork((Layer(rng.standard_normal((3, 6)), rng.standard_normal(6)),
                       Layer(rng.standard_normal((6, 2)), rng.standard_normal(2))), p=p)
    balanced = balance_scaling(net)
    X = rng.standard_normal((20, 3))
    before, after = forward(net, X), forward(balanced, X)
    assert np.allclose(after, before, rtol=1e-12, atol=1e-12 * np.abs(before).max())
    assert regularization(balanced) < regularization(net)
    h = 1e-4
    for neuron in range(6):
        derivative = (regularization(_scaled(balanced, neuron, 1 + h))
                      - regularization(_scaled(balanced, neuron, 1 - h))) / (2 * h)
        assert abs(derivative) <= 1e-6 * regularization(balanced)
        for s in (0.5, 0.9, 1.1, 2.0):
            assert regularization(_scaled(balanced, neuron, s)) >= regularization(balanced)


def test_balance_three_layer_paths_and_deep_nets(rng):
    _, _, net = _trained('3layer-l1-bias', gaussian(4, 2))
    X = rng.standard_normal((10, 2))
    balanced = balance_scaling(net)
    assert np.allclose(forward(balanced, X), forward(net, X), rtol=1e-12, atol=1e-12)
    first, middle, last = balanced.layers
    assert np.allclose(np.abs(first.W).sum(axis=0), np.abs(np.diag(middle.W)))
    assert np.allclose(np.abs(last.W[:, 0]), np.abs(np.diag(middle.W)))

    deep = ReluNetwork(tuple(Layer(rng.standard_normal(shape), rng.standard_normal(shape[1]))
                             for shape in ((2, 4), (4, 3), (3, 3), (3, 1))))
    balanced = balance_scaling(deep)
    assert np.allclose(forward(balanced, X), forward(deep, X), rtol=1e-10, atol=1e-10)
    assert regularization(balanced) <= regularization(deep)


def test_zero_neurons_are_left_alone():
    net = ReluNetwork((Layer(np.array([[0.0, 1.0]])), Layer(np.array([[3.0], [4.0]]))))
    balanced = balance_scaling(net)
    assert balanced.layers[0].W[0, 0] == 0.0
    assert balanced.layers[1].W[0, 0] == 3.0


def test_rank_reduce_and_lift(rng):
    basis = rng.standard_normal((2, 4))
    X = rng.standard_normal((12, 2)) @ basis
    reduction = rank_reduce(DataMatrix(X, rng.standard_normal(12)))
    assert reduction.r == 2
    assert reduction.reduced.samples.shape == (12, 2)
    assert np.allclose(reduction.reduced.samples @ reduction.V.T, X, atol=1e-10)
    net = ReluNetwork((Layer(rng.standard_normal((2, 3)), rng.standard_normal(3)), Layer(np.ones((3, 1)))))
    lifted = reduction.lift(net)
    assert lifted.input_dim == 4
    assert np.allclose(forward(lifted, X), forward(net, reduction.reduced.samples), atol=1e-10)
    with pytest.raises(DimensionError):
        reduction.lift(lifted)


def test_rank_reduce_examples(rng):
    assert rank_reduce(np.outer(rng.standard_normal(5), [1.0, 2.0, 3.0])).r == 1
    assert rank_reduce(np.eye(3)).r == 3
    noisy = rng.standard_normal((20, 3)) @ rng.standard_normal((3, 6)) + 1e-14 * rng.standard_normal((20, 6))
    assert rank_reduce(noisy, rtol=1e-10).r == 3
    with pytest.raises(DimensionError):
        rank_reduce(np.zeros((3, 2)))


def test_describe_neurons():
    _, _, net = _trained('1d', uniform_1d(8))
    assert {entry.kind for entry in describe_neurons(net)} == {'threshold'}
    _, _, net = _trained('l2-bias', gaussian(8, 2))
    descriptions = describe_neurons(net)
    assert descriptions and {entry.kind for entry in descriptions} == {'affine'}
    assert all('Aff(' in entry.text for entry in descriptions)
    _, _, net = _trained('l2-nobias', gaussian(8, 3), lam=0.01)
    assert {entry.kind for entry in describe_neurons(net)} == {'span'}


def test_accuracy():
    assert accuracy(np.array([0.3, -2.0, 1.0]), np.array([1.0, -1.0, -1.0])) == pytest.approx(2 / 3)
    assert accuracy(np.array([0.3]), np.array([0.5])) is None
    data = cross_dataset()
    _, _, net = _trained('3layer-l1-nobias', data, lam=0.01)
    assert accuracy(forward(net, data.samples)[:, 0], data.y) == 1.0
