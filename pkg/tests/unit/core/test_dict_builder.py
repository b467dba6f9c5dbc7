from collections import defaultdict

import numpy as np
import pytest

from wedgenet import config
from wedgenet.datasets import cross as cross_dataset
from wedgenet.dict_builder import (DataMatrix, augment, build_1d, build_2d_l1_bias, build_2d_l2_bias,
                                   build_3layer_l1, build_dictionary, build_l1_nobias, build_l2, build_vector_output,
                                   evaluate_feature)
from wedgenet.errors import RankError, StateError, VariantError
from wedgenet.ga_core import cross, signed_triangle_area, signed_volume


def _columns(dictionary, **match):
    return [j for j, feature in enumerate(dictionary.features)
            if all(getattr(feature, name) == value for name, value in match.items())]


def _orientation_pairs(dictionary):
    pairs = defaultdict(list)
    for j, feature in enumerate(dictionary.features):
        pairs[(feature.indices, feature.anchor_j0, feature.anchor_ell, feature.branch)].append(j)
    return pairs


def test_augment():
    data = augment(DataMatrix(np.array([[1.0, 2.0], [3.0, 4.0]])))
    assert np.array_equal(data.X, [[1, 2], [3, 4], [1, 0], [0, 1]])
    assert data.n_samples == 2 and data.augmented
    assert np.array_equal(augment(DataMatrix(np.array([[5.0]]))).X, [[5], [1]])
    with pytest.raises(StateError):
        augment(data)


def test_data_matrix_rank():
    assert DataMatrix(np.array([[1.0, 2.0], [2.0, 4.0]])).effective_rank == 1
    assert DataMatrix(np.eye(3)).effective_rank == 3


def test_build_1d_entries():
    dictionary = build_1d(DataMatrix(np.array([[1.0], [2.0], [4.0]])))
    K = dictionary.K
    assert K.shape == (3, 6)
    assert dictionary.intercept
    assert K[2, 0] == 3.0
    assert K[0, 1] == 0.0
    assert K[1, 3] == 0.0
    assert K[0, 4] == 1.0
    x = np.array([1.0, 2.0, 4.0])
    expected = np.hstack([np.maximum(x[:, None] - x[None, :], 0), np.maximum(x[None, :] - x[:, None], 0)])
    assert np.array_equal(K, expected)


def test_build_1d_rejects_planar_data():
    with pytest.raises(VariantError):
        build_1d(DataMatrix(np.eye(2)))


def test_build_l1_nobias_planar_example():
    dictionary = build_l1_nobias(DataMatrix(np.eye(2)))
    assert not dictionary.intercept and dictionary.p == 1
    (column,) = _columns(dictionary, indices=(1,), sign=1)
    assert np.array_equal(dictionary.K[:, column], [1.0, 0.0])


def test_build_l1_nobias_matches_determinants(rng):
    data = DataMatrix(rng.standard_normal((5, 3)))
    dictionary = build_l1_nobias(data)
    generators = dictionary.generators
    assert generators.shape == (8, 3)
    assert dictionary.n_features == 2 * 28
    for j, feature in enumerate(dictionary.features):
        rows = generators[list(feature.indices)]
        for i, x in enumerate(data.X):
            expected = max(0.0, feature.sign * signed_volume(np.vstack([x, rows]))) / feature.norm_value
            assert dictionary.K[i, j] == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert feature.norm_value == pytest.approx(np.abs(cross(rows).direction).sum())


def test_build_l2_nobias_planar_example():
    X = np.array([[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0]])
    dictionary = build_l2(DataMatrix(X))
    (column,) = _columns(dictionary, indices=(0,), sign=1)
    assert np.allclose(dictionary.K[:, column], np.maximum(-X[:, 1], 0.0), rtol=0, atol=1e-15)


@pytest.mark.parametrize('builder', [lambda data: build_l2(data, biased=True), build_2d_l2_bias])
def test_biased_l2_height_above_line(builder):
    dictionary = builder(DataMatrix(np.array([[1.0, 1.0], [-1.0, 1.0], [0.0, 2.0]])))
    columns = _columns(dictionary, indices=(0,), anchor_ell=1)
    assert len(columns) == 2
    assert sorted(dictionary.K[2, columns]) == pytest.approx([0.0, 1.0])
    assert np.all(dictionary.K[:2, columns] == 0.0)


def test_build_l2_biased_matches_projection_oracle(rng):
    X = rng.standard_normal((6, 4))
    dictionary = build_l2(DataMatrix(X), biased=True)
    for (indices, _, anchor, _), (first, second) in _orientation_pairs(dictionary).items():
        differences = X[list(indices)] - X[anchor]
        for i, x in enumerate(X):
            coefficients = np.linalg.lstsq(differences.T, x - X[anchor], rcond=None)[0]
            residual = np.linalg.norm(x - X[anchor] - differences.T @ coefficients)
            assert dictionary.K[i, first] + dictionary.K[i, second] == pytest.approx(residual, rel=1e-9, abs=1e-12)
            assert min(dictionary.K[i, first], dictionary.K[i, second]) == 0.0


def test_build_2d_l1_bias_example():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    dictionary = build_2d_l1_bias(DataMatrix(X))
    columns = _columns(dictionary, indices=(1,), anchor_ell=0)
    assert sorted(dictionary.K[2, columns]) == pytest.approx([0.0, 0.5])
    assert np.all(dictionary.K[:2, columns] == 0.0)


def test_build_2d_l1_bias_matches_triangle_areas(rng):
    X = rng.standard_normal((5, 2))
    dictionary = build_2d_l1_bias(DataMatrix(X))
    assert dictionary.intercept
    for (indices, _, anchor, _), (first, second) in _orientation_pairs(dictionary).items():
        partner = dictionary.generators[indices[0]]
        denominator = np.abs(partner - X[anchor]).sum()
        for i, x in enumerate(X):
            area = abs(2.0 * signed_triangle_area(x, X[anchor], partner))
            assert dictionary.K[i, first] + dictionary.K[i, second] == pytest.approx(area / denominator,
                                                                                    rel=1e-12, abs=1e-12)


def test_build_3layer_cross_dataset_contains_difference_normals():
    data = cross_dataset()
    dictionary = build_3layer_l1(data)
    assert dictionary.depth == 3
    X = data.X
    for i in range(4):
        for j in range(i + 1, 4):
            difference = X[i] - X[j]
            products = np.abs(dictionary.weights @ difference)
            assert np.any(products <= 1e-10 * np.linalg.norm(dictionary.weights, axis=1) * np.linalg.norm(difference))
    assert np.any(np.all(np.isclose(dictionary.weights, [0.5, 0.5], rtol=0, atol=1e-10), axis=1))


def test_build_3layer_anchor_rows_vanish():
    dictionary = build_3layer_l1(cross_dataset())
    for j, feature in enumerate(dictionary.features):
        assert dictionary.K[feature.anchor_j0, j] == 0.0


def test_build_3layer_matches_nested_positive_parts(rng):
    X = rng.standard_normal((4, 3))
    dictionary = build_3layer_l1(DataMatrix(X))
    assert dictionary.n_features == 2 * 2 * 4 * 78
    for j, feature in enumerate(dictionary.features):
        T = cross(dictionary.generators[list(feature.indices)]).direction
        w = feature.sign * T / np.abs(T).sum()
        inner = np.maximum(X @ w, 0.0)
        anchor = inner[feature.anchor_j0]
        expected = np.maximum(inner - anchor, 0.0) if feature.branch == 1 else np.maximum(anchor - inner, 0.0)
        assert np.allclose(dictionary.K[:, j], expected, rtol=1e-12, atol=1e-12)


def test_build_3layer_biased_is_shifted(rng):
    X = rng.standard_normal((3, 2))
    dictionary = build_3layer_l1(DataMatrix(X), biased=True)
    assert dictionary.intercept
    for j, feature in enumerate(dictionary.features):
        assert dictionary.biases[j] == pytest.approx(-dictionary.weights[j] @ X[feature.anchor_ell], abs=1e-15)


def test_build_3layer_on_a_moderate_dataset(rng):
    X = rng.standard_normal((150, 2))
    X[1] = X[0]
    dictionary = build_3layer_l1(DataMatrix(X), seed=1, max_features=4000)
    # repeated sample, its zero difference and the 148 differences x_1 - x_k equal to x_0 - x_k
    assert dictionary.build_stats.deduplicated == 150
    assert dictionary.generators.shape == (150 + 11175 + 2 - 150, 2)
    assert dictionary.build_stats.subsampled
    assert dictionary.n_features <= 4000
    assert dictionary.K.shape == (150, dictionary.n_features)


@pytest.mark.parametrize('variant, d', [
    ('1d', 1), ('l1-nobias', 2), ('l1-nobias', 3), ('l2-nobias', 3), ('l2-bias', 3),
    ('2d-l1-bias', 2), ('2d-l2-bias', 2), ('3layer-l1-nobias', 2), ('3layer-l1-bias', 2),
])
def test_columns_are_recomputable(rng, variant, d):
    data = DataMatrix(rng.standard_normal((5, d)), rng.standard_normal(5))
    dictionary = build_dictionary(variant, data)
    assert np.all(dictionary.K >= 0.0)
    assert np.allclose(dictionary.evaluate(data.samples), dictionary.K, rtol=0, atol=1e-12)
    for j in range(0, dictionary.n_features, 7):
        column = evaluate_feature(dictionary.features[j], dictionary.generators, dictionary.samples)
        assert np.allclose(column, dictionary.K[:, j], rtol=0, atol=1e-12)
    ids = [feature.id for feature in dictionary.features]
    assert len(set(ids)) == len(ids)


def test_degenerate_subsets_are_skipped():
    X = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    dictionary = build_l2(DataMatrix(X))
    assert dictionary.build_stats.skipped_degenerate == 1
    assert dictionary.n_features == 2 * (6 - 1)


def test_rank_deficient_data_is_rejected():
    with pytest.raises(RankError):
        build_l2(DataMatrix(np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])))


@pytest.mark.parametrize('variant, d', [('2d-l2-bias', 3), ('2d-l1-bias', 1), ('l2-bias', 1), ('nonsense', 2)])
def test_wrong_dimension_or_variant(rng, variant, d):
    with pytest.raises(VariantError):
        build_dictionary(variant, DataMatrix(rng.standard_normal((4, d))))


def test_subsampling_is_seeded(rng):
    data = DataMatrix(rng.standard_normal((12, 3)))
    first = build_dictionary('l2-nobias', data, seed=3, max_features=40)
    again = build_dictionary('l2-nobias', data, seed=3, max_features=40)
    other = build_dictionary('l2-nobias', data, seed=4, max_features=40)
    assert first.build_stats.subsampled
    assert first.n_features <= 40
    assert first.features == again.features and np.array_equal(first.K, again.K)
    assert first.features != other.features


def test_output_does_not_depend_on_threads(rng):
    data = DataMatrix(rng.standard_normal((7, 3)))
    threads = config.get_threads()
    try:
        config.set_threads(1)
        single = build_dictionary('l1-nobias', data)
        config.set_threads(4)
        pooled = build_dictionary('l1-nobias', data)
    finally:
        config.set_threads(threads)
    assert single.features == pooled.features
    assert np.array_equal(single.K, pooled.K)


def test_vector_output_groups(rng):
    X = rng.standard_normal((6, 2))
    Y = rng.standard_normal((6, 3))
    grouped = build_dictionary('l1-nobias', DataMatrix(X, Y))
    scalar = build_dictionary('l1-nobias', DataMatrix(X, Y[:, 0]))
    assert grouped.grouped and grouped.n_outputs == 3
    assert np.array_equal(grouped.K, scalar.K)
    with pytest.raises(VariantError):
        build_dictionary('2d-l2-bias', DataMatrix(X, Y))
    with pytest.raises(VariantError):
        build_vector_output(DataMatrix(X, Y[:, :1]))
