""" Polishing of trained ReLU layers.

Each neuron is replaced by the closed-form direction orthogonal to the r-1 training rows it is already
closest to being orthogonal to, where r is the rank of the layer inputs. The layer that follows is then
refit as a convex problem with the polished features frozen, and the layer scalings are rebalanced.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.linalg

from wedgenet.config import config as wedgenet_config
from wedgenet.dict_builder import DataMatrix, effective_rank
from wedgenet.errors import DimensionError, NeuronSkipped, NumericalError
from wedgenet.ga_core import cross, is_independent
from wedgenet.lasso_solver import Loss, loss_curvature, loss_gradient, loss_value
from wedgenet.net_builder import (Layer, Provenance, ReluNetwork, accuracy, balance_scaling, forward, layer_inputs,
                                  nonconvex_cost)

logger = logging.getLogger(__file__)

_RIDGE_FLOOR = 1e-10
_NEWTON_GRADIENT_TOL = 1e-10
_NEWTON_MAX_STEPS = 200


class Refit(Enum):
    LEAST_SQUARES_RIDGE = 'least-squares-ridge'
    LOGISTIC_RIDGE = 'logistic-ridge'

    @property
    def loss(self) -> Loss:
        return Loss.SQUARED if self is Refit.LEAST_SQUARES_RIDGE else Loss.LOGISTIC


@dataclass(frozen=True)
class PolishConfig:
    """ Polishing settings.

    ``lam`` and ``p`` only enter the objective reported before and after polishing; ``rank_rtol`` is the
    relative singular value threshold for the rank of the layer inputs and for the independence of the
    selected rows.
    """
    include_bias: bool = True
    rank_override: int | None = None
    refit: Refit = Refit.LEAST_SQUARES_RIDGE
    refit_reg: float = 1e-6
    layers_to_polish: tuple[int, ...] = (0,)
    lam: float = 0.0
    p: int | None = None
    rank_rtol: float = 1e-8

    def __post_init__(self):
        if self.refit_reg < 0:
            raise ValueError(f'Refit regularization should be non-negative, got {self.refit_reg}.')
        if self.rank_override is not None and self.rank_override < 1:
            raise ValueError(f'Rank override should be positive, got {self.rank_override}.')
        object.__setattr__(self, 'refit', Refit(self.refit))
        object.__setattr__(self, 'layers_to_polish', tuple(sorted(set(int(i) for i in self.layers_to_polish))))


@dataclass(frozen=True)
class NeuronPolish:
    neuron: int
    samples: tuple[int, ...]
    sign: int
    residual_before: float
    residual_after: float
    angle: float
    skipped: str | None = None


@dataclass(frozen=True)
class LayerPolishReport:
    layer: int
    rank: int
    neurons: tuple[NeuronPolish, ...]

    @property
    def skipped(self) -> tuple[int, ...]:
        return tuple(entry.neuron for entry in self.neurons if entry.skipped is not None)


@dataclass(frozen=True)
class RefitReport:
    layer: int
    objective_before: float
    objective_after: float
    ridge_floor: bool = False
    gradient_norm: float = 0.0


@dataclass
class PolishReport:
    layers: list[LayerPolishReport] = field(default_factory=list)
    refits: list[RefitReport] = field(default_factory=list)
    objective_before: float = math.nan
    objective_after: float = math.nan
    accuracy_before: float | None = None
    accuracy_after: float | None = None


def _lift(samples: np.ndarray, include_bias: bool) -> np.ndarray:
    if not include_bias:
        return samples
    return np.hstack([samples, np.ones((samples.shape[0], 1))])


def _row_space(samples: np.ndarray, rank: int) -> np.ndarray:
    _, _, Vt = np.linalg.svd(samples, full_matrices=False)
    return Vt[:rank].T


def _relative_residual(rows: np.ndarray, w: np.ndarray) -> float:
    if rows.shape[0] == 0:
        return 0.0
    scale = np.linalg.norm(rows, axis=1) * np.linalg.norm(w)
    products = np.abs(rows @ w)
    return float(np.max(np.divide(products, scale, out=np.zeros_like(products), where=scale > 0)))


def _select_rows(samples: np.ndarray, w: np.ndarray, count: int, rtol: float, scale: float) -> list[int]:
    magnitudes = np.abs(samples @ w)
    order = np.lexsort((np.arange(samples.shape[0]), magnitudes))
    selected: list[int] = []
    for i in order:
        if is_independent(samples[selected + [int(i)]], rtol=rtol, scale=scale):
            selected.append(int(i))
            if len(selected) == count:
                break
    return selected


def closed_form_neuron(samples: np.ndarray, indices: tuple[int, ...], rank: int, p: int) -> np.ndarray:
    """ Unit-p-norm neuron orthogonal to the rows ``indices`` within the rank-``rank`` row space of ``samples``.

    The direction is the cross product of the selected rows written in an orthonormal basis of the row space,
    so the same (samples, indices, rank) always give the same vector and orientation.
    """
    if rank < 2 or len(indices) != rank - 1:
        raise DimensionError(f'A rank-{rank} row space needs {rank - 1} rows, got {len(indices)}.')
    basis = _row_space(samples, rank)
    coordinates = samples[list(indices)] @ basis
    direction = basis @ cross(coordinates).direction
    norm = float(np.linalg.norm(direction, ord=p))
    if norm == 0.0:
        raise NumericalError(f'Rows {indices} do not determine a direction.')
    return direction / norm


def polish_layer(W: np.ndarray,
                 b: np.ndarray | None,
                 samples: np.ndarray,
                 config: PolishConfig | None = None,
                 p: int = 2,
                 layer: int = 0) -> tuple[np.ndarray, np.ndarray | None, LayerPolishReport]:
    """ Replaces every column of ``W`` (d x m) by its closed form over the rows of ``samples`` (n x d).

    With ``include_bias`` the samples get a trailing 1 and the neurons their bias as last coordinate; the
    polished lifted neuron is split back into weights and bias. Neurons that cannot be polished keep their
    weights and are reported with the reason.
    """
    config = config or PolishConfig()
    W = np.asarray(W, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or W.ndim != 2 or samples.shape[1] != W.shape[0]:
        raise DimensionError(f'Weights of shape {W.shape} do not match samples of shape {samples.shape}.')
    d, m = W.shape
    bias = np.zeros(m) if b is None else np.asarray(b, dtype=float)
    lifted = _lift(samples, config.include_bias)
    neurons = np.vstack([W, bias[None, :]]) if config.include_bias else W.copy()
    rank = config.rank_override or effective_rank(lifted, rtol=config.rank_rtol)
    scale = float(np.linalg.norm(lifted, axis=1).max(initial=0.0))

    def polish(j: int) -> tuple[np.ndarray, NeuronPolish]:
        w = neurons[:, j]
        try:
            if rank < 2:
                raise NeuronSkipped(j, f'layer inputs have rank {rank}, no rows to be orthogonal to')
            if not np.any(w):
                raise NeuronSkipped(j, 'neuron is zero')
            selected = _select_rows(lifted, w, rank - 1, config.rank_rtol, scale)
            if len(selected) < rank - 1:
                raise NeuronSkipped(j, f'only {len(selected)} independent rows available, {rank - 1} needed')
        except NeuronSkipped as e:
            return w, NeuronPolish(j, (), 0, math.nan, math.nan, 0.0, skipped=e.reason)
        indices = tuple(selected)
        polished = closed_form_neuron(lifted, indices, rank, p)
        sign = -1 if float(w @ polished) < 0 else 1
        polished = sign * polished
        u, v = w / np.linalg.norm(w), polished / np.linalg.norm(polished)
        rows = lifted[selected]
        return polished, NeuronPolish(
            neuron=j,
            samples=indices,
            sign=sign,
            residual_before=_relative_residual(rows, w),
            residual_after=_relative_residual(rows, polished),
            angle=2.0 * math.atan2(float(np.linalg.norm(u - v)), float(np.linalg.norm(u + v))),
        )

    threads = wedgenet_config.get_threads()
    if threads > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(polish, range(m)))
    else:
        results = [polish(j) for j in range(m)]

    polished_neurons = np.column_stack([neuron for neuron, _ in results]) if m else neurons
    entries = tuple(entry for _, entry in results)
    report = LayerPolishReport(layer=layer, rank=rank, neurons=entries)
    for entry in entries:
        if entry.skipped is not None:
            logger.warning(f'Layer {layer} neuron {entry.neuron} left unpolished: {entry.skipped}.')
    logger.info(f'Polished {m - len(report.skipped)} of {m} neurons of layer {layer} at rank {rank}.')

    if config.include_bias:
        return polished_neurons[:d], polished_neurons[d], report
    return polished_neurons, b, report


def _ridge_objective(loss: Loss, features: np.ndarray, targets: np.ndarray, W: np.ndarray, b: np.ndarray,
                     reg: float) -> float:
    return loss_value(loss, features @ W + b, targets) + 0.5 * reg * float(np.sum(W ** 2))


def _solve_normal_equations(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter('error', scipy.linalg.LinAlgWarning)
        return scipy.linalg.solve(A, rhs, assume_a='pos')


def _penalty_diagonal(width: int, reg: float) -> np.ndarray:
    # the trailing coordinate is the unpenalized intercept
    diagonal = np.full(width + 1, reg)
    diagonal[-1] = 0.0
    return diagonal


def _fit_squared(features: np.ndarray, targets: np.ndarray, reg: float) -> tuple[np.ndarray, bool]:
    A = np.hstack([features, np.ones((features.shape[0], 1))])
    gram = A.T @ A
    rhs = A.T @ targets
    try:
        if reg == 0.0:
            theta = _solve_normal_equations(gram, rhs)
        else:
            theta = _solve_normal_equations(gram + np.diag(_penalty_diagonal(features.shape[1], reg)), rhs)
        return theta, False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        floor = np.full(gram.shape[0], max(reg, _RIDGE_FLOOR))
        floor[-1] = _RIDGE_FLOOR
        return scipy.linalg.solve(gram + np.diag(floor), rhs, assume_a='pos'), True


def _fit_logistic(features: np.ndarray, targets: np.ndarray, reg: float,
                  theta0: np.ndarray) -> tuple[np.ndarray, bool, float]:
    A = np.hstack([features, np.ones((features.shape[0], 1))])
    floor = reg < _RIDGE_FLOOR
    penalty = _penalty_diagonal(features.shape[1], max(reg, _RIDGE_FLOOR))
    penalty[-1] = _RIDGE_FLOOR if floor else 0.0
    theta = theta0.copy()

    def objective(th):
        return loss_value(Loss.LOGISTIC, A @ th, targets) + 0.5 * float(np.sum(penalty[:, None] * th ** 2))

    gradient_norm = math.inf
    for _ in range(_NEWTON_MAX_STEPS):
        F = A @ theta
        gradient = A.T @ loss_gradient(Loss.LOGISTIC, F, targets) + penalty[:, None] * theta
        gradient_norm = float(np.linalg.norm(gradient))
        if gradient_norm <= _NEWTON_GRADIENT_TOL:
            break
        curvature = loss_curvature(Loss.LOGISTIC, F, targets)
        step = np.empty_like(theta)
        for k in range(theta.shape[1]):
            hessian = A.T @ (curvature[:, k:k + 1] * A) + np.diag(penalty)
            step[:, k] = scipy.linalg.solve(hessian, gradient[:, k], assume_a='pos')
        current, alpha = objective(theta), 1.0
        while alpha > 1e-12 and objective(theta - alpha * step) > current - 1e-4 * alpha * float(np.sum(gradient * step)):
            alpha *= 0.5
        if alpha <= 1e-12:
            break
        theta = theta - alpha * step
    else:
        logger.warning(f'Logistic refit stopped after {_NEWTON_MAX_STEPS} Newton steps, '
                       f'gradient norm {gradient_norm}.')
    return theta, floor, gradient_norm


def refit_head(net: ReluNetwork,
               polished_layer_index: int,
               data: DataMatrix,
               config: PolishConfig | None = None,
               targets: np.ndarray | None = None) -> tuple[ReluNetwork, RefitReport]:
    """ Refits the layer after ``polished_layer_index`` with every earlier layer frozen.

    The output layer is refit to the labels with the configured loss; a hidden layer is refit by
    least squares to ``targets``, its pre-activations in the network before polishing. The ridge
    penalty ``refit_reg / 2 * |W|_F^2`` leaves the bias free.
    """
    config = config or PolishConfig()
    head_index = polished_layer_index + 1
    if not 0 < head_index < net.depth:
        raise DimensionError(f'Layer {polished_layer_index} of a {net.depth}-layer network has no layer after it.')
    features = layer_inputs(net, data.samples)[head_index]
    head = net.layers[head_index]
    is_output = head_index == net.depth - 1
    if is_output:
        if data.y is None:
            raise ValueError('Refitting the output layer needs labelled data.')
        targets = data.y.reshape(data.y.shape[0], -1)
        loss = config.refit.loss
    else:
        if targets is None:
            raise ValueError(f'Refitting hidden layer {head_index} needs its target pre-activations.')
        loss = Loss.SQUARED
    reg = config.refit_reg
    before = _ridge_objective(loss, features, targets, head.W, head.bias(), reg)

    gradient_norm = 0.0
    if loss is Loss.SQUARED:
        theta, floored = _fit_squared(features, targets, reg)
    else:
        theta0 = np.vstack([head.W, head.bias()[None, :]])
        theta, floored, gradient_norm = _fit_logistic(features, targets, reg, theta0)
    if floored:
        logger.warning(f'Normal equations of layer {head_index} are singular, applied ridge floor {_RIDGE_FLOOR}.')
    W, b = theta[:-1], theta[-1]
    after = _ridge_objective(loss, features, targets, W, b, reg)
    if after > before:
        # round-off only
        W, b, after = head.W, head.bias(), before
    layers = list(net.layers)
    layers[head_index] = Layer(W, b)
    logger.info(f'Refit layer {head_index}: objective {before} -> {after}.')
    return replace(net, layers=tuple(layers)), RefitReport(head_index, before, after, floored, gradient_norm)


def _objective(net: ReluNetwork, data: DataMatrix, config: PolishConfig) -> tuple[float, float | None]:
    if data.y is None:
        return math.nan, None
    cost = nonconvex_cost(net, data, config.lam, config.p, config.refit.loss).total
    return cost, accuracy(forward(net, data.samples), data.y)


def _polished_provenance(net: ReluNetwork, report: LayerPolishReport, p: int) -> tuple[Provenance, ...]:
    kept = tuple(entry for entry in net.provenance if entry.layer != report.layer)
    added = tuple(
        Provenance(layer=report.layer, neuron=entry.neuron, samples=entry.samples, sign=entry.sign, p=p,
                   variant='polished', labels=tuple(f'x{i}' for i in entry.samples))
        for entry in report.neurons if entry.skipped is None
    )
    return kept + added


def polish_network(net: ReluNetwork,
                   data: DataMatrix,
                   config: PolishConfig | None = None) -> tuple[ReluNetwork, PolishReport]:
    """ Polishes the configured hidden layers in order; each layer sees the activations of the already
    polished layers before it. After each layer the next one is refit and the scalings are rebalanced.
    """
    config = config or PolishConfig()
    p = config.p or net.p
    hidden = net.depth - 1
    for index in config.layers_to_polish:
        if not 0 <= index < hidden:
            raise DimensionError(f'Only hidden layers 0..{hidden - 1} can be polished, got {index}.')

    report = PolishReport()
    report.objective_before, report.accuracy_before = _objective(net, data, config)
    original_inputs = layer_inputs(net, data.samples)

    for index in config.layers_to_polish:
        inputs = layer_inputs(net, data.samples)[index]
        layer = net.layers[index]
        W, b, layer_report = polish_layer(layer.W, layer.b, inputs, config, p=p, layer=index)
        layers = list(net.layers)
        layers[index] = Layer(W, b)
        net = replace(net, layers=tuple(layers))
        net = replace(net, provenance=_polished_provenance(net, layer_report, p))

        head_index = index + 1
        targets = None
        if head_index < net.depth - 1:
            head = net.layers[head_index]
            targets = original_inputs[head_index] @ head.W + head.bias()
        net, refit_report = refit_head(net, index, data, config, targets)
        net = balance_scaling(net)
        report.layers.append(layer_report)
        report.refits.append(refit_report)

    report.objective_after, report.accuracy_after = _objective(net, data, config)
    logger.info(f'Polishing changed the objective from {report.objective_before} to {report.objective_after}.')
    return net, report
