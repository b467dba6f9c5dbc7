from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from wedgenet.config import config
from wedgenet.errors import DimensionError, ProvenanceError, RankError, SizeError, StateError, VariantError
from wedgenet.ga_core import cross
from wedgenet.seeding import make_generator

logger = logging.getLogger(__file__)

# pre-activations this small relative to |w|·|x| are exact zeros that rounding made nonzero
_ACTIVATION_ZERO_RTOL = 1e-13
_DEDUP_RTOL = 1e-12


class Variant(Enum):
    ONE_D = 'one-d'
    TWO_D_L1_NOBIAS = '2d-l1-nobias'
    TWO_D_L1_BIAS = '2d-l1-bias'
    TWO_D_L2_BIAS = '2d-l2-bias'
    DDIM_L1_NOBIAS = 'l1-nobias'
    DDIM_L2_NOBIAS = 'l2-nobias'
    DDIM_L2_BIAS = 'l2-bias'
    THREE_LAYER_L1_NOBIAS_K1 = '3layer-l1-nobias-k1'
    THREE_LAYER_L1_NOBIAS_K2 = '3layer-l1-nobias-k2'
    THREE_LAYER_L1_BIAS = '3layer-l1-bias'

    @property
    def p(self) -> int:
        return 2 if self in _L2_VARIANTS else 1

    @property
    def is_three_layer(self) -> bool:
        return self in _THREE_LAYER_VARIANTS

    @property
    def relative_generators(self) -> bool:
        """ Whether generators are taken relative to the shift anchor before the cross product. """
        return self in (Variant.TWO_D_L1_BIAS, Variant.TWO_D_L2_BIAS, Variant.DDIM_L2_BIAS)


_L2_VARIANTS = frozenset({Variant.TWO_D_L2_BIAS, Variant.DDIM_L2_NOBIAS, Variant.DDIM_L2_BIAS})
_THREE_LAYER_VARIANTS = frozenset({Variant.THREE_LAYER_L1_NOBIAS_K1, Variant.THREE_LAYER_L1_NOBIAS_K2,
                                   Variant.THREE_LAYER_L1_BIAS})


@dataclass(frozen=True)
class DataMatrix:
    """ Training samples with their labels.

    ``X`` holds the ``n_samples`` training rows, followed by the standard basis rows when ``augmented``.
    """
    X: np.ndarray
    y: np.ndarray | None = None
    augmented: bool = False
    n_samples: int | None = None
    effective_rank: int = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError(f'Data should be a non-empty n x d matrix, got shape {X.shape}.')
        if not np.all(np.isfinite(X)):
            raise ValueError('Data entries should be finite.')
        n_samples = X.shape[0] if self.n_samples is None else int(self.n_samples)
        y = self.y
        if y is not None:
            y = np.asarray(y, dtype=float)
            if y.shape[0] != n_samples or y.ndim > 2:
                raise DimensionError(f'Labels of shape {y.shape} do not match {n_samples} samples.')
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'n_samples', n_samples)
        object.__setattr__(self, 'effective_rank', effective_rank(X[:n_samples]))

    @property
    def samples(self) -> np.ndarray:
        return self.X[:self.n_samples]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_outputs(self) -> int:
        if self.y is None or self.y.ndim == 1:
            return 1
        return self.y.shape[1]


def effective_rank(X: np.ndarray, rtol: float | None = None) -> int:
    rtol = config.get_dependence_rtol() if rtol is None else rtol
    singular_values = np.linalg.svd(np.atleast_2d(X), compute_uv=False)
    if singular_values.size == 0 or singular_values[0] == 0:
        return 0
    return int(np.count_nonzero(singular_values > rtol * singular_values[0]))


def augment(data: DataMatrix) -> DataMatrix:
    """ Appends the standard basis e_1..e_d as extra rows. """
    if data.augmented:
        raise StateError('Data matrix is already augmented.')
    basis = np.eye(data.dim)
    return DataMatrix(np.vstack([data.samples, basis]), data.y, augmented=True, n_samples=data.n_samples)


@dataclass(frozen=True)
class FeatureDescriptor:
    """ Identity of one dictionary column.

    ``indices`` point into the dictionary generators, ``anchor_j0`` and ``anchor_ell`` point into the
    training samples. ``branch`` tells the two outer positive parts of three-layer features apart.
    """
    variant: Variant
    indices: tuple[int, ...]
    sign: int
    norm_value: float
    anchor_j0: int | None = None
    anchor_ell: int | None = None
    branch: int | None = None

    @property
    def p(self) -> int:
        return self.variant.p

    def sort_key(self) -> tuple:
        return (0 if self.sign > 0 else 1, self.indices,
                -1 if self.anchor_j0 is None else self.anchor_j0,
                -1 if self.anchor_ell is None else self.anchor_ell,
                0 if self.branch is None else self.branch)

    @property
    def id(self) -> str:
        parts = [self.variant.value, '+' if self.sign > 0 else '-', '.'.join(map(str, self.indices)) or '_']
        if self.anchor_j0 is not None:
            parts.append(f'j0={self.anchor_j0}')
        if self.anchor_ell is not None:
            parts.append(f'ell={self.anchor_ell}')
        if self.branch is not None:
            parts.append(f'k{self.branch}')
        return ':'.join(parts)


@dataclass
class BuildStats:
    candidates: int = 0
    enumerated: int = 0
    skipped_degenerate: int = 0
    subsampled: bool = False
    deduplicated: int = 0


@dataclass(frozen=True)
class Dictionary:
    """ Kernel matrix ``K`` (n x P) with the neuron behind every column.

    Column j equals ``relu(X @ weights[j] + biases[j])`` for two-layer features; for three-layer
    features that inner activation h gives ``relu(h - thresholds[j])`` (branch 1) or
    ``relu(thresholds[j] - h)`` (branch 2).
    """
    K: np.ndarray
    features: tuple[FeatureDescriptor, ...]
    p: int
    variant: str
    weights: np.ndarray
    biases: np.ndarray
    thresholds: np.ndarray
    branches: np.ndarray
    samples: np.ndarray
    generators: np.ndarray
    generator_labels: tuple[tuple, ...]
    intercept: bool
    build_stats: BuildStats
    depth: int = 2
    grouped: bool = False
    n_outputs: int = 1

    @property
    def n_features(self) -> int:
        return len(self.features)

    def inner_activations(self, X: np.ndarray) -> np.ndarray:
        return _activate(np.asarray(X, dtype=float), self.weights, self.biases)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """ Dictionary columns evaluated on new points. """
        return _outer(self.inner_activations(X), self.thresholds, self.branches)


def _activate(X: np.ndarray, weights: np.ndarray, biases: np.ndarray) -> np.ndarray:
    pre = X @ weights.T + biases
    scale = np.outer(np.linalg.norm(X, axis=1), np.linalg.norm(weights, axis=1)) + np.abs(biases)
    pre[np.abs(pre) <= _ACTIVATION_ZERO_RTOL * scale] = 0.0
    return np.maximum(pre, 0.0)


def _outer(inner: np.ndarray, thresholds: np.ndarray, branches: np.ndarray) -> np.ndarray:
    result = inner.copy()
    first, second = branches == 1, branches == 2
    result[:, first] = np.maximum(inner[:, first] - thresholds[first], 0.0)
    result[:, second] = np.maximum(thresholds[second] - inner[:, second], 0.0)
    return result


def _branch_code(branch: int | None) -> int:
    return 0 if branch is None else branch


def neuron_for(descriptor: FeatureDescriptor,
               generators: np.ndarray,
               samples: np.ndarray) -> tuple[np.ndarray, float, float]:
    """ First-layer neuron (w, b) and outer threshold of a feature, rebuilt from its descriptor and raw data. """
    n = samples.shape[0]
    indices = list(descriptor.indices)
    if any(not 0 <= i < generators.shape[0] for i in indices):
        raise ProvenanceError(f'Feature {descriptor.id} refers to generators beyond the {generators.shape[0]} available.')
    for anchor in (descriptor.anchor_j0, descriptor.anchor_ell):
        if anchor is not None and not 0 <= anchor < n:
            raise ProvenanceError(f'Feature {descriptor.id} refers to sample {anchor}, but only {n} are available.')

    anchor = None if descriptor.anchor_ell is None else samples[descriptor.anchor_ell]
    if descriptor.variant is Variant.ONE_D:
        direction = np.ones(1)
    else:
        stack = generators[indices]
        if descriptor.variant.relative_generators:
            stack = stack - anchor
        direction = cross(stack).direction
    norm = float(np.linalg.norm(direction, ord=descriptor.p))
    if norm == 0.0 or not math.isclose(norm, descriptor.norm_value, rel_tol=1e-9):
        raise ProvenanceError(f'Feature {descriptor.id} has norm {descriptor.norm_value}, '
                              f'but its generators give {norm}; the data does not match the dictionary.')
    w = descriptor.sign * direction / norm
    b = 0.0 if anchor is None else -float(w @ anchor)
    threshold = 0.0
    if descriptor.anchor_j0 is not None:
        threshold = float(_activate(samples, w[None, :], np.array([b]))[descriptor.anchor_j0, 0])
    return w, b, threshold


def evaluate_feature(descriptor: FeatureDescriptor,
                     generators: np.ndarray,
                     samples: np.ndarray,
                     X: np.ndarray | None = None) -> np.ndarray:
    """ Recomputes one dictionary column on ``X`` (the training samples by default). """
    X = samples if X is None else np.asarray(X, dtype=float)
    w, b, threshold = neuron_for(descriptor, generators, samples)
    inner = _activate(X, w[None, :], np.array([b]))
    return _outer(inner, np.array([threshold]), np.array([_branch_code(descriptor.branch)]))[:, 0]


class _Combinations:
    """ k-subsets of range(n) in lexicographic order, with random access by rank. """

    def __init__(self, n: int, k: int):
        self.n = n
        self.k = k

    @property
    def size(self) -> int:
        return math.comb(self.n, self.k)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        return itertools.combinations(range(self.n), self.k)

    def __getitem__(self, rank: int) -> tuple[int, ...]:
        result = []
        start = 0
        for remaining in range(self.k, 0, -1):
            for i in range(start, self.n):
                count = math.comb(self.n - i - 1, remaining - 1)
                if rank < count:
                    result.append(i)
                    start = i + 1
                    break
                rank -= count
        return tuple(result)


def _axis_size(axis: Sequence | _Combinations) -> int:
    return axis.size if isinstance(axis, _Combinations) else len(axis)


class _CandidateGrid:
    """ Cartesian product of enumeration axes, iterated or sampled in lexicographic rank order. """

    def __init__(self, *axes: Sequence):
        self.axes = axes

    @property
    def size(self) -> int:
        return math.prod(_axis_size(axis) for axis in self.axes)

    def __iter__(self) -> Iterator[tuple]:
        return itertools.product(*self.axes)

    def __getitem__(self, rank: int) -> tuple:
        items = []
        for axis in reversed(self.axes):
            rank, position = divmod(rank, _axis_size(axis))
            items.append(axis[position])
        return tuple(reversed(items))

    def sample(self, count: int, seed: int | None) -> list[tuple]:
        total = self.size
        if total > np.iinfo(np.int64).max:
            raise SizeError(f'Cannot subsample a candidate set of size {total}.')
        rng = make_generator(seed, 'subsample')
        ranks = np.sort(rng.choice(total, size=count, replace=False, shuffle=False))
        return [self[int(rank)] for rank in ranks]


_Candidate = tuple[tuple[int, ...], int | None, int | None]


@dataclass(frozen=True)
class _Family:
    name: str
    variants: tuple[tuple[Variant, int | None], ...]
    intercept: bool
    depth: int = 2

    @property
    def p(self) -> int:
        return self.variants[0][0].p


def _chunks(items: list, parts: int) -> list[list]:
    size = max(1, math.ceil(len(items) / max(parts, 1)))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _directions(keys: list[tuple[tuple[int, ...], int | None]],
                generators: np.ndarray,
                samples: np.ndarray,
                relative: bool,
                scale: float) -> list[np.ndarray | None]:
    def compute(chunk):
        result = []
        for indices, anchor in chunk:
            if not indices:
                result.append(np.ones(1))
                continue
            stack = generators[list(indices)]
            if relative:
                stack = stack - samples[anchor]
            product = cross(stack, indices=indices, scale=scale)
            result.append(None if product.is_zero else product.direction)
        return result

    threads = config.get_threads()
    chunks = _chunks(keys, 4 * threads)
    if threads == 1 or len(chunks) <= 1:
        return [direction for chunk in chunks for direction in compute(chunk)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return [direction for chunk_result in executor.map(compute, chunks) for direction in chunk_result]


def _assemble(family: _Family,
              grid: _CandidateGrid,
              to_candidate: Callable[[tuple], _Candidate],
              samples: np.ndarray,
              generators: np.ndarray,
              generator_labels: Sequence[tuple],
              seed: int | None,
              max_features: int | None,
              stats: BuildStats | None = None) -> Dictionary:
    stats = stats or BuildStats()
    max_features = config.get_max_features() if max_features is None else max_features
    columns_per_candidate = 2 * len(family.variants)
    stats.candidates = grid.size
    if stats.candidates * columns_per_candidate > max_features:
        keep = max(1, max_features // columns_per_candidate)
        logger.info(f'Sampling {keep} of {stats.candidates} candidate generator sets for "{family.name}".')
        items = grid.sample(keep, seed)
        stats.subsampled = True
    else:
        items = list(grid)
    candidates = [to_candidate(item) for item in items]
    stats.enumerated = len(candidates)

    relative = family.variants[0][0].relative_generators
    keys = list(dict.fromkeys((indices, ell if relative else None) for indices, _, ell in candidates))
    scale = float(np.linalg.norm(generators, axis=1).max(initial=0.0))
    directions = dict(zip(keys, _directions(keys, generators, samples, relative, scale)))

    descriptors, weights, biases, j0s, codes = [], [], [], [], []
    for indices, j0, ell in candidates:
        direction = directions[(indices, ell if relative else None)]
        if direction is None:
            stats.skipped_degenerate += 1
            continue
        norm = float(np.linalg.norm(direction, ord=family.p))
        for sign in (1, -1):
            w = sign * direction / norm
            b = 0.0 if ell is None else -float(w @ samples[ell])
            for variant, branch in family.variants:
                descriptors.append(FeatureDescriptor(variant, indices, sign, norm, j0, ell, branch))
                weights.append(w)
                biases.append(b)
                j0s.append(-1 if j0 is None else j0)
                codes.append(_branch_code(branch))
    if stats.skipped_degenerate:
        logger.info(f'Skipped {stats.skipped_degenerate} degenerate generator sets for "{family.name}".')

    order = sorted(range(len(descriptors)), key=lambda j: descriptors[j].sort_key())
    dim = samples.shape[1]
    weights = np.array(weights, dtype=float).reshape(-1, dim)[order]
    biases = np.array(biases, dtype=float)[order]
    j0s = np.array(j0s, dtype=int)[order]
    branches = np.array(codes, dtype=int)[order]

    inner = _activate(samples, weights, biases)
    thresholds = np.zeros(len(order))
    anchored = j0s >= 0
    thresholds[anchored] = inner[j0s[anchored], np.flatnonzero(anchored)]
    K = _outer(inner, thresholds, branches)

    dictionary = Dictionary(
        K=K,
        features=tuple(descriptors[j] for j in order),
        p=family.p,
        variant=family.name,
        weights=weights,
        biases=biases,
        thresholds=thresholds,
        branches=branches,
        samples=samples,
        generators=generators,
        generator_labels=tuple(generator_labels),
        intercept=family.intercept,
        build_stats=stats,
        depth=family.depth,
    )
    logger.info(f'Built "{family.name}" dictionary with {dictionary.n_features} columns '
                f'from {stats.enumerated} generator sets.')
    return dictionary


def _as_data(data: DataMatrix | np.ndarray) -> DataMatrix:
    return data if isinstance(data, DataMatrix) else DataMatrix(np.asarray(data, dtype=float))


def _require_dim(data: DataMatrix, name: str, dim: int | None = None, min_dim: int | None = None):
    if dim is not None and data.dim != dim:
        raise VariantError(f'"{name}" dictionaries need d={dim}, got d={data.dim}.')
    if min_dim is not None and data.dim < min_dim:
        raise VariantError(f'"{name}" dictionaries need d >= {min_dim}, got d={data.dim}; use "1d" for scalar inputs.')


def _require_full_rank(data: DataMatrix, name: str):
    if data.effective_rank < data.dim:
        raise RankError(f'"{name}" needs full-rank data, got rank {data.effective_rank} < d={data.dim}. '
                        f'Reduce the data with net_builder.rank_reduce first.')


def _sample_labels(n: int) -> list[tuple]:
    return [('x', i) for i in range(n)]


def _point(item: tuple) -> _Candidate:
    return (), None, item[0]


def _subset(item: tuple) -> _Candidate:
    return item[0], None, None


def _subset_with_anchor(item: tuple) -> _Candidate:
    return item[0][:-1], None, item[0][-1]


def _pair(item: tuple) -> _Candidate:
    partner, anchor = item[0]
    return (partner,), None, anchor


def _anchored_subset(item: tuple) -> _Candidate:
    return item[0], item[1], None


def _shifted_anchored_subset(item: tuple) -> _Candidate:
    return item[0], item[1], item[2]


def build_1d(data: DataMatrix | np.ndarray, seed: int | None = None, max_features: int | None = None) -> Dictionary:
    """ Kinks at every training point: K[i, j] = (x_i - x_j)_+ for j < n and (x_{j-n} - x_i)_+ after. """
    data = _as_data(data)
    _require_dim(data, '1d', dim=1)
    samples = data.samples
    family = _Family('1d', ((Variant.ONE_D, None),), intercept=True)
    grid = _CandidateGrid(range(data.n_samples))
    return _assemble(family, grid, _point,
                     samples, samples, _sample_labels(data.n_samples), seed, max_features)


def build_l1_nobias(data: DataMatrix | np.ndarray,
                    seed: int | None = None,
                    max_features: int | None = None) -> Dictionary:
    """ Bias-free l1 dictionary: one column per independent (d-1)-subset of the augmented rows and orientation,
    K[i, j] = (x_i ^ x_j1 ^ ... ^ x_j{d-1})_+ / |x_j1 ^ ... ^ x_j{d-1}|_1.
    """
    data = _as_data(data)
    _require_dim(data, 'l1-nobias', min_dim=2)
    _require_full_rank(data, 'l1-nobias')
    if not data.augmented:
        data = augment(data)
    variant = Variant.TWO_D_L1_NOBIAS if data.dim == 2 else Variant.DDIM_L1_NOBIAS
    family = _Family('l1-nobias', ((variant, None),), intercept=False)
    labels = _sample_labels(data.n_samples) + [('e', k) for k in range(data.dim)]
    grid = _CandidateGrid(_Combinations(data.X.shape[0], data.dim - 1))
    return _assemble(family, grid, _subset,
                     data.samples, data.X, labels, seed, max_features)


def build_l2(data: DataMatrix | np.ndarray,
             biased: bool = False,
             seed: int | None = None,
             max_features: int | None = None) -> Dictionary:
    """ l2 dictionaries of oriented distances to spans of d-1 samples, or to affine hulls of d samples.

    An affine hull does not depend on which of its points is the anchor, so every d-subset appears once
    with its last element as anchor.
    """
    data = _as_data(data)
    name = 'l2-bias' if biased else 'l2-nobias'
    _require_dim(data, name, min_dim=2)
    _require_full_rank(data, name)
    samples = data.samples
    labels = _sample_labels(data.n_samples)
    if biased:
        family = _Family(name, ((Variant.DDIM_L2_BIAS, None),), intercept=True)
        grid = _CandidateGrid(_Combinations(data.n_samples, data.dim))
        return _assemble(family, grid, _subset_with_anchor,
                         samples, samples, labels, seed, max_features)
    family = _Family(name, ((Variant.DDIM_L2_NOBIAS, None),), intercept=False)
    grid = _CandidateGrid(_Combinations(data.n_samples, data.dim - 1))
    return _assemble(family, grid, _subset, samples, samples, labels, seed, max_features)


def build_2d_l2_bias(data: DataMatrix | np.ndarray,
                     seed: int | None = None,
                     max_features: int | None = None) -> Dictionary:
    """ Planar biased l2 dictionary over pairs of samples:
    K[i, j] = (x ^ x' + x' ^ x'' + x'' ^ x)_+ / |x' - x''|_2.
    """
    data = _as_data(data)
    _require_dim(data, '2d-l2-bias', dim=2)
    _require_full_rank(data, '2d-l2-bias')
    family = _Family('2d-l2-bias', ((Variant.TWO_D_L2_BIAS, None),), intercept=True)
    grid = _CandidateGrid(_Combinations(data.n_samples, 2))
    return _assemble(family, grid, _subset_with_anchor,
                     data.samples, data.samples, _sample_labels(data.n_samples), seed, max_features)


def build_2d_l1_bias(data: DataMatrix | np.ndarray,
                     seed: int | None = None,
                     max_features: int | None = None) -> Dictionary:
    """ Planar biased l1 dictionary: K[i, j] = 2 Vol_+(x_i, x_j1, x_j2) / |x_j1 - x_j2|_1.

    The partner point x_j2 is either a later sample or one of the shifted points x_j1 + e_k.
    """
    data = _as_data(data)
    _require_dim(data, '2d-l1-bias', dim=2)
    n, dim = data.n_samples, data.dim
    samples = data.samples
    shifted = (samples[:, None, :] + np.eye(dim)[None, :, :]).reshape(-1, dim)
    generators = np.vstack([samples, shifted])
    labels = _sample_labels(n) + [('shift', j, k) for j in range(n) for k in range(dim)]
    pairs = [(j2, j1) for j1 in range(n) for j2 in range(j1 + 1, n)]
    pairs += [(n + j1 * dim + k, j1) for j1 in range(n) for k in range(dim)]
    pairs.sort(key=lambda pair: (pair[1], pair[0]))
    family = _Family('2d-l1-bias', ((Variant.TWO_D_L1_BIAS, None),), intercept=True)
    grid = _CandidateGrid(pairs)
    return _assemble(family, grid, _pair,
                     samples, generators, labels, seed, max_features)


def _extended_set(samples: np.ndarray, include_samples: bool) -> tuple[np.ndarray, list[tuple], int]:
    n, dim = samples.shape
    vectors, labels = [], []
    if include_samples:
        vectors.extend(samples)
        labels.extend(_sample_labels(n))
    for i, j in itertools.combinations(range(n), 2):
        vectors.append(samples[i] - samples[j])
        labels.append(('diff', i, j))
    vectors.extend(np.eye(dim))
    labels.extend(('e', k) for k in range(dim))
    vectors = np.array(vectors, dtype=float).reshape(-1, dim)

    norms = np.linalg.norm(vectors, axis=1)
    scale = max(float(norms.max(initial=0.0)), 1.0)
    keep = norms > _DEDUP_RTOL * scale
    if len(vectors) > 1:
        pairs = cKDTree(vectors).query_pairs(_DEDUP_RTOL * scale, output_type='ndarray')
        keep[pairs[:, 1]] = False
    removed = int(len(vectors) - keep.sum())
    return vectors[keep], [label for label, kept in zip(labels, keep) if kept], removed


def build_3layer_l1(data: DataMatrix | np.ndarray,
                    biased: bool = False,
                    seed: int | None = None,
                    max_features: int | None = None) -> Dictionary:
    """ Three-layer l1 dictionary.

    The inner direction T is the cross product of d-1 vectors of the extended set (samples, pairwise
    differences and the standard basis); with anchor x_j0 the columns are
    K1 = ((x_i ^ T)_+ - (x_j0 ^ T)_+)_+ / |T|_1 and K2 = ((x_j0 ^ T)_+ - (x_i ^ T)_+)_+ / |T|_1.
    The biased variant evaluates the same construction on data shifted by each sample x_ell, which
    leaves only differences and the basis in the extended set.
    """
    data = _as_data(data)
    name = '3layer-l1-bias' if biased else '3layer-l1-nobias'
    _require_dim(data, name, min_dim=2)
    _require_full_rank(data, name)
    n = data.n_samples
    generators, labels, removed = _extended_set(data.samples, include_samples=not biased)
    stats = BuildStats(deduplicated=removed)
    combinations = _Combinations(generators.shape[0], data.dim - 1)
    if biased:
        family = _Family(name, ((Variant.THREE_LAYER_L1_BIAS, 1), (Variant.THREE_LAYER_L1_BIAS, 2)),
                         intercept=True, depth=3)
        grid = _CandidateGrid(combinations, range(n), range(n))
        to_candidate = _shifted_anchored_subset
    else:
        family = _Family(name, ((Variant.THREE_LAYER_L1_NOBIAS_K1, 1), (Variant.THREE_LAYER_L1_NOBIAS_K2, 2)),
                         intercept=False, depth=3)
        grid = _CandidateGrid(combinations, range(n))
        to_candidate = _anchored_subset
    return _assemble(family, grid, to_candidate, data.samples, generators, labels, seed, max_features, stats)


def build_vector_output(data: DataMatrix,
                        p: int = 1,
                        biased: bool = False,
                        seed: int | None = None,
                        max_features: int | None = None) -> Dictionary:
    """ Same columns as the scalar-output dictionary, marked for a group penalty over each feature's output row. """
    if data.y is None or data.y.ndim != 2 or data.y.shape[1] < 2:
        shape = None if data.y is None else data.y.shape
        raise VariantError(f'Vector output needs an n x c label matrix with c >= 2, got labels of shape {shape}.')
    if p == 1:
        if biased:
            raise VariantError('Vector output with p=1 is available for the bias-free dictionary only.')
        base = build_l1_nobias(data, seed=seed, max_features=max_features)
    elif p == 2:
        base = build_l2(data, biased=biased, seed=seed, max_features=max_features)
    else:
        raise VariantError(f'Only p in (1, 2) is supported, got p={p}.')
    return replace(base, variant=f'vector-{base.variant}', grouped=True, n_outputs=data.y.shape[1])


BUILDERS: dict[str, Callable[..., Dictionary]] = {
    '1d': build_1d,
    'l1-nobias': build_l1_nobias,
    'l2-nobias': partial(build_l2, biased=False),
    'l2-bias': partial(build_l2, biased=True),
    '2d-l1-bias': build_2d_l1_bias,
    '2d-l2-bias': build_2d_l2_bias,
    '3layer-l1-nobias': partial(build_3layer_l1, biased=False),
    '3layer-l1-bias': partial(build_3layer_l1, biased=True),
}

_VECTOR_CAPABLE = {'l1-nobias': (1, False), 'l2-nobias': (2, False), 'l2-bias': (2, True)}


def build_dictionary(variant: str, data: DataMatrix, seed: int | None = None,
                     max_features: int | None = None) -> Dictionary:
    """ Builds the named dictionary, switching to the grouped form for vector labels. """
    if variant not in BUILDERS:
        raise VariantError(f'Unknown dictionary variant "{variant}", expected one of {sorted(BUILDERS)}.')
    if data.n_outputs > 1:
        if variant not in _VECTOR_CAPABLE:
            raise VariantError(f'Variant "{variant}" does not support vector labels; '
                               f'use one of {sorted(_VECTOR_CAPABLE)}.')
        p, biased = _VECTOR_CAPABLE[variant]
        return build_vector_output(data, p=p, biased=biased, seed=seed, max_features=max_features)
    return BUILDERS[variant](data, seed=seed, max_features=max_features)
