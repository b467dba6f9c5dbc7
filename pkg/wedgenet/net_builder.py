from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from wedgenet.dict_builder import DataMatrix, Dictionary, neuron_for
from wedgenet.errors import DimensionError, ProvenanceError
from wedgenet.lasso_solver import LassoSolution, Loss, loss_value

logger = logging.getLogger(__file__)

_BALANCE_SWEEPS = 1000
_BALANCE_TOL = 1e-13


@dataclass(frozen=True)
class Layer:
    """ Affine map ``x @ W + b``; ``W`` is stored input-major (in x out). """
    W: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if W.ndim != 2:
            raise DimensionError(f'Layer weights should be a matrix, got shape {W.shape}.')
        b = None if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        if b is not None and b.shape[0] != W.shape[1]:
            raise DimensionError(f'Layer bias of length {b.shape[0]} does not match {W.shape[1]} neurons.')
        object.__setattr__(self, 'W', W)
        object.__setattr__(self, 'b', b)

    @property
    def width(self) -> int:
        return self.W.shape[1]

    def bias(self) -> np.ndarray:
        return np.zeros(self.width) if self.b is None else self.b


@dataclass(frozen=True)
class Provenance:
    """ Training samples a neuron was generated from.

    ``samples`` index the generator set of the layer (dictionary generators, or the incoming activations
    for polished layers); ``labels`` name them.
    """
    layer: int
    neuron: int
    samples: tuple[int, ...]
    sign: int
    p: int
    variant: str | None = None
    anchor_j0: int | None = None
    anchor_ell: int | None = None
    labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class ReluNetwork:
    """ Feed-forward network with ReLU after every layer but the last. """
    layers: tuple[Layer, ...]
    p: int = 2
    provenance: tuple[Provenance, ...] = ()

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError('A network needs at least one layer.')
        for index, (previous, current) in enumerate(zip(layers, layers[1:])):
            if previous.width != current.W.shape[0]:
                raise DimensionError(f'Layer {index} has {previous.width} outputs, '
                                     f'but layer {index + 1} expects {current.W.shape[0]} inputs.')
        if self.p not in (1, 2):
            raise ValueError(f'Only p in (1, 2) is supported, got p={self.p}.')
        object.__setattr__(self, 'layers', layers)
        object.__setattr__(self, 'provenance', tuple(self.provenance))

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width

    @property
    def depth(self) -> int:
        return len(self.layers)

    def provenance_of(self, layer: int) -> dict[int, Provenance]:
        return {entry.neuron: entry for entry in self.provenance if entry.layer == layer}


@dataclass(frozen=True)
class NonconvexObjectiveReport:
    loss_term: float
    reg_term: float
    total: float


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def layer_inputs(net: ReluNetwork, X: np.ndarray) -> list[np.ndarray]:
    """ Inputs of every layer: ``X`` itself, then the ReLU activations of each hidden layer. """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if net.input_dim == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionError(f'Network expects inputs of dimension {net.input_dim}, got shape {X.shape}.')
    inputs = [X]
    for layer in net.layers[:-1]:
        inputs.append(_relu(inputs[-1] @ layer.W + layer.bias()))
    return inputs


def forward(net: ReluNetwork, X: np.ndarray) -> np.ndarray:
    last = net.layers[-1]
    return layer_inputs(net, X)[-1] @ last.W + last.bias()


def accuracy(outputs: np.ndarray, y: np.ndarray) -> float | None:
    """ Fraction of correctly signed outputs, defined only for labels in {-1, +1}. """
    y = np.asarray(y, dtype=float).reshape(np.shape(outputs))
    if not np.all(np.isin(y, (-1.0, 1.0))):
        return None
    return float(np.mean(np.where(outputs >= 0, 1.0, -1.0) == y))


def _labels_for(dictionary: Dictionary, indices: Sequence[int]) -> tuple[str, ...]:
    def name(label: tuple) -> str:
        kind, *rest = label
        if kind == 'x':
            return f'x{rest[0]}'
        if kind == 'diff':
            return f'x{rest[0]}-x{rest[1]}'
        if kind == 'shift':
            return f'x{rest[0]}+e{rest[1]}'
        return f'e{rest[0]}'
    return tuple(name(dictionary.generator_labels[i]) for i in indices)


def _check_data(dictionary: Dictionary, data: DataMatrix | np.ndarray | None, support: np.ndarray):
    if data is None:
        return
    samples = data.samples if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    if samples.shape != dictionary.samples.shape or not np.allclose(samples, dictionary.samples, rtol=1e-12, atol=0):
        raise ProvenanceError(f'Data of shape {samples.shape} is not the data the dictionary was built from.')
    for j in support:
        neuron_for(dictionary.features[j], dictionary.generators, samples)


def reconstruct(dictionary: Dictionary,
                solution: LassoSolution,
                data: DataMatrix | np.ndarray | None = None) -> ReluNetwork:
    """ Explicit network whose output on the training samples equals ``K z + 1 t``.

    Every support feature becomes one unit-p-norm hidden neuron whose magnitude sits in the output layer.
    Three-layer features add a diagonal second layer realizing the outer positive part.
    """
    Z = solution.Z
    if Z.shape[0] != dictionary.n_features:
        raise ProvenanceError(f'Solution has {Z.shape[0]} coefficients for a dictionary of '
                              f'{dictionary.n_features} features.')
    support = np.asarray(solution.support, dtype=int)
    _check_data(dictionary, data, support)

    has_bias = bool(np.any(dictionary.biases[support] != 0)) or dictionary.intercept
    first = Layer(dictionary.weights[support].T.reshape(dictionary.samples.shape[1], support.size),
                  dictionary.biases[support].copy() if has_bias else None)
    output = Layer(Z[support], solution.T.copy() if dictionary.intercept else None)
    if dictionary.depth == 3:
        signs = np.where(dictionary.branches[support] == 1, 1.0, -1.0)
        middle = Layer(np.diag(signs), -signs * dictionary.thresholds[support])
        layers = (first, middle, output)
    else:
        layers = (first, output)

    provenance = []
    for neuron, j in enumerate(support):
        feature = dictionary.features[j]
        provenance.append(Provenance(
            layer=0,
            neuron=neuron,
            samples=feature.indices,
            sign=feature.sign,
            p=feature.p,
            variant=feature.variant.value,
            anchor_j0=feature.anchor_j0,
            anchor_ell=feature.anchor_ell,
            labels=_labels_for(dictionary, feature.indices),
        ))
    logger.info(f'Reconstructed a {len(layers)}-layer network with {support.size} hidden neurons.')
    return ReluNetwork(layers, p=dictionary.p, provenance=tuple(provenance))


def _is_parallel_paths(net: ReluNetwork) -> bool:
    if net.depth != 3:
        return False
    W = net.layers[1].W
    return W.shape[0] == W.shape[1] and np.array_equal(W, np.diag(np.diag(W)))


def regularization(net: ReluNetwork, p: int | None = None) -> float:
    """ Weight-decay term of the non-convex objective (without lambda).

    Two-layer nets: sum_j |W1_j|_p^2 + |W2_j|_2^2, where W2_j is the outgoing row (a scalar for one output).
    Three-layer parallel paths: (1/3) sum_j of the cubed path norms. Other depths: sum of squared Frobenius norms.
    """
    p = net.p if p is None else p
    if net.depth == 2:
        first, second = net.layers
        return float(np.sum(np.linalg.norm(first.W, ord=p, axis=0) ** 2)
                     + np.sum(np.linalg.norm(second.W, axis=1) ** 2))
    if _is_parallel_paths(net):
        first, middle, last = net.layers
        return float(np.sum(np.linalg.norm(first.W, ord=p, axis=0) ** 3)
                     + np.sum(np.abs(np.diag(middle.W)) ** 3)
                     + np.sum(np.linalg.norm(last.W, axis=1) ** 3)) / 3.0
    return float(sum(np.sum(layer.W ** 2) for layer in net.layers))


def nonconvex_cost(net: ReluNetwork,
                   data: DataMatrix,
                   lam: float,
                   p: int | None = None,
                   loss: Loss = Loss.SQUARED) -> NonconvexObjectiveReport:
    if data.y is None:
        raise ValueError('Cost evaluation needs labelled data.')
    outputs = forward(net, data.samples)
    loss_term = loss_value(Loss(loss), outputs, data.y.reshape(outputs.shape))
    reg_term = regularization(net, p)
    return NonconvexObjectiveReport(loss_term, reg_term, loss_term + lam * reg_term)


def _balance_two_layer(net: ReluNetwork, p: int) -> tuple[list[Layer], int]:
    first, second = net.layers
    W1, b1, W2 = first.W.copy(), None if first.b is None else first.b.copy(), second.W.copy()
    a = np.linalg.norm(W1, ord=p, axis=0)
    c = np.linalg.norm(W2, axis=1)
    ok = (a > 0) & (c > 0)
    alpha = np.ones_like(a)
    alpha[ok] = np.sqrt(c[ok] / a[ok])
    W1 *= alpha
    if b1 is not None:
        b1 *= alpha
    W2 /= alpha[:, None]
    return [Layer(W1, b1), Layer(W2, second.b)], int(np.count_nonzero(~ok))


def _balance_paths(net: ReluNetwork, p: int) -> tuple[list[Layer], int]:
    first, middle, last = net.layers
    W1, W3 = first.W.copy(), last.W.copy()
    b1 = None if first.b is None else first.b.copy()
    s = np.diag(middle.W).copy()
    b2 = None if middle.b is None else middle.b.copy()
    a = np.linalg.norm(W1, ord=p, axis=0)
    m = np.abs(s)
    c = np.linalg.norm(W3, axis=1)
    ok = (a > 0) & (m > 0) & (c > 0)
    mean = np.ones_like(a)
    mean[ok] = np.cbrt(a[ok] * m[ok] * c[ok])
    alpha1, alpha2, alpha3 = np.ones_like(a), np.ones_like(a), np.ones_like(a)
    alpha1[ok] = mean[ok] / a[ok]
    alpha2[ok] = mean[ok] / m[ok]
    alpha3[ok] = mean[ok] / c[ok]
    W1 *= alpha1
    if b1 is not None:
        b1 *= alpha1
    s *= alpha2
    if b2 is not None:
        b2 *= alpha1 * alpha2
    W3 *= alpha3[:, None]
    return [Layer(W1, b1), Layer(np.diag(s), b2), Layer(W3, last.b)], int(np.count_nonzero(~ok))


def _balance_deep(net: ReluNetwork) -> tuple[list[Layer], int]:
    Ws = [layer.W.copy() for layer in net.layers]
    bs = [None if layer.b is None else layer.b.copy() for layer in net.layers]
    skipped = set()
    for _ in range(_BALANCE_SWEEPS):
        largest_change = 0.0
        for ell in range(len(Ws) - 1):
            incoming = np.linalg.norm(Ws[ell], axis=0)
            outgoing = np.linalg.norm(Ws[ell + 1], axis=1)
            ok = (incoming > 0) & (outgoing > 0)
            skipped.update((ell, j) for j in np.flatnonzero(~ok))
            alpha = np.ones_like(incoming)
            alpha[ok] = np.sqrt(outgoing[ok] / incoming[ok])
            Ws[ell] *= alpha
            if bs[ell] is not None:
                bs[ell] *= alpha
            Ws[ell + 1] /= alpha[:, None]
            largest_change = max(largest_change, float(np.abs(alpha - 1.0).max(initial=0.0)))
        if largest_change <= _BALANCE_TOL:
            break
    return [Layer(W, b) for W, b in zip(Ws, bs)], len(skipped)


def balance_scaling(net: ReluNetwork) -> ReluNetwork:
    """ Per-neuron positive rescaling that leaves the function unchanged and minimizes the weight decay term.

    Two-layer neurons get alpha = (|W2_j|_2 / |W1_j|_p)^(1/2); three-layer paths equalize their three factors
    at the geometric mean; deeper nets are swept neuron by neuron on squared Frobenius norms. Neurons with a
    zero weight factor are left as they are.
    """
    if net.depth == 1:
        return net
    if net.depth == 2:
        layers, skipped = _balance_two_layer(net, net.p)
    elif _is_parallel_paths(net):
        layers, skipped = _balance_paths(net, net.p)
    else:
        layers, skipped = _balance_deep(net)
    if skipped:
        logger.warning(f'Left {skipped} zero-norm neurons unscaled.')
    return replace(net, layers=tuple(layers))


@dataclass(frozen=True)
class RankReduction:
    """ Data ``X`` (rank r) written as ``U S`` in an r-dimensional basis ``V``: ``X = reduced @ V.T``. """
    reduced: DataMatrix
    V: np.ndarray
    r: int
    singular_values: np.ndarray

    def lift(self, net: ReluNetwork) -> ReluNetwork:
        """ Maps a network trained on the reduced data back to the original input space (W1 <- V W1). """
        if net.input_dim != self.r:
            raise DimensionError(f'Network expects {net.input_dim} inputs, the reduction has rank {self.r}.')
        first = net.layers[0]
        lifted = Layer(self.V @ first.W, first.b)
        return replace(net, layers=(lifted,) + net.layers[1:])


def rank_reduce(data: DataMatrix | np.ndarray, rtol: float = 1e-10) -> RankReduction:
    data = data if isinstance(data, DataMatrix) else DataMatrix(np.asarray(data, dtype=float))
    U, s, Vt = np.linalg.svd(data.samples, full_matrices=False)
    r = int(np.count_nonzero(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    if r == 0:
        raise DimensionError('Data matrix is zero, nothing to reduce to.')
    reduced = DataMatrix(U[:, :r] * s[:r], data.y)
    if r < data.dim:
        logger.info(f'Reduced data of dimension {data.dim} to its rank {r}.')
    return RankReduction(reduced, Vt[:r].T.copy(), r, s)


@dataclass(frozen=True)
class NeuronDescription:
    neuron: int
    kind: str
    samples: tuple[int, ...]
    sign: int
    text: str


_AFFINE_VARIANTS = frozenset({'2d-l1-bias', '2d-l2-bias', 'l2-bias'})


def describe_neurons(net: ReluNetwork) -> list[NeuronDescription]:
    """ Oriented-distance reading of every first-layer neuron that has provenance. """
    descriptions = []
    for neuron, entry in sorted(net.provenance_of(0).items()):
        names = entry.labels or tuple(f'g{i}' for i in entry.samples)
        if entry.variant == 'one-d':
            kind = 'threshold'
            text = f'(x - x{entry.anchor_ell})_+' if entry.sign > 0 else f'(x{entry.anchor_ell} - x)_+'
        elif entry.variant in _AFFINE_VARIANTS:
            kind = 'affine'
            text = f'dist+(x, Aff({", ".join(names + (f"x{entry.anchor_ell}",))}))'
        elif entry.anchor_ell is not None:
            kind = 'shifted-span'
            text = f'dist+(x - x{entry.anchor_ell}, Span({", ".join(names)}))'
        else:
            kind = 'span'
            text = f'dist+(x, Span({", ".join(names)}))'
        if entry.sign < 0 and kind != 'threshold':
            text += ' [reversed orientation]'
        if entry.anchor_j0 is not None:
            text += f' compared with its value at x{entry.anchor_j0}'
        descriptions.append(NeuronDescription(neuron, kind, entry.samples, entry.sign, text))
    return descriptions
