""" Gradient-based training of the non-convex weight decay objectives, used as a reference for the convex solves.

Two-layer networks minimize ``loss(f(X), y) + lam * sum_j (|W1_j|_p^2 + |W2_j|_2^2)``; three-layer parallel-path
networks minimize the cubic form ``loss + lam / 3 * sum_j (|W1_j|_p^3 + |s_j|^3 + |W3_j|_2^3)``. Biases are not
penalized. The ReLU subgradient at 0 is 0, so an all-zero start stays at zero.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from wedgenet.config import config as wedgenet_config
from wedgenet.dict_builder import DataMatrix
from wedgenet.errors import NumericalError
from wedgenet.lasso_solver import Loss
from wedgenet.net_builder import Layer, ReluNetwork, nonconvex_cost
from wedgenet.seeding import make_generator

logger = logging.getLogger(__file__)

_BIASES = ('b1', 'b2', 'b_out')


class Optimizer(Enum):
    GD = 'gd'
    ADAM = 'adam'


@dataclass(frozen=True)
class TrainConfig:
    """ Baseline training settings. ``batch_size=None`` trains on the full batch. """
    m: int = 50
    lam: float = 0.1
    p: int = 2
    steps: int = 5000
    lr: float = 1e-2
    restarts: int = 20
    seed: int | None = 0
    optimizer: Optimizer = Optimizer.ADAM
    init_scale: float = 0.5
    loss: Loss = Loss.SQUARED
    bias: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f'Neuron count should be positive, got m={self.m}.')
        if self.steps < 1:
            raise ValueError(f'Step count should be positive, got steps={self.steps}.')
        if self.restarts < 1:
            raise ValueError(f'Restart count should be positive, got restarts={self.restarts}.')
        if self.p not in (1, 2):
            raise ValueError(f'Only p in (1, 2) is supported, got p={self.p}.')
        if self.lam < 0:
            raise ValueError(f'Regularization lambda should be non-negative, got {self.lam}.')
        if self.init_scale < 0:
            raise ValueError(f'Initial scale should be non-negative, got {self.init_scale}.')
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f'Batch size should be positive, got {self.batch_size}.')
        object.__setattr__(self, 'optimizer', Optimizer(self.optimizer))
        object.__setattr__(self, 'loss', Loss(self.loss))


@dataclass(frozen=True)
class RestartOutcome:
    restart: int
    objective: float
    failed: bool


@dataclass(frozen=True)
class TrainResult:
    net: ReluNetwork
    objective: float
    restarts: tuple[RestartOutcome, ...]

    @property
    def failed(self) -> int:
        return sum(outcome.failed for outcome in self.restarts)


def _norm_power(W: torch.Tensor, dim: int, p: int, power: int) -> torch.Tensor:
    """ sum_j |W_j|_p^power over slices along ``dim``; written without a bare norm so the gradient at 0 is 0. """
    if p == 1:
        return (W.abs().sum(dim=dim) ** power).sum()
    return ((W ** 2).sum(dim=dim) ** (power / 2)).sum()


class _PathNetwork(nn.Module):
    """ ``relu(X W1 + b1)`` followed, for depth 3, by the per-path scale ``relu(s * h + b2)`` and a linear head. """

    def __init__(self, params: dict[str, np.ndarray], depth: int, config: TrainConfig):
        super().__init__()
        self.depth = depth
        self.config = config
        for name, value in params.items():
            trainable = config.bias or name not in _BIASES
            self.register_parameter(name, nn.Parameter(torch.from_numpy(value.copy()), requires_grad=trainable))

    def forward(self, X: torch.Tensor) -> torch.Tensor:
        hidden = torch.relu(X @ self.W1 + self.b1)
        if self.depth == 3:
            hidden = torch.relu(hidden * self.s + self.b2)
        return hidden @ self.W_out + self.b_out

    def regularization(self) -> torch.Tensor:
        p = self.config.p
        if self.depth == 2:
            return _norm_power(self.W1, 0, p, 2) + _norm_power(self.W_out, 1, 2, 2)
        return (_norm_power(self.W1, 0, p, 3) + (self.s.abs() ** 3).sum() + _norm_power(self.W_out, 1, 2, 3)) / 3.0

    def objective(self, X: torch.Tensor, Y: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
        F = self(X)
        if self.config.loss is Loss.SQUARED:
            loss = 0.5 * ((F - Y) ** 2).sum()
        else:
            loss = torch.logaddexp(torch.zeros_like(F), -Y * F).sum()
        return scale * loss + self.config.lam * self.regularization()

    def network(self) -> ReluNetwork:
        P = {name: param.detach().numpy().copy() for name, param in self.named_parameters()}
        bias = self.config.bias
        first = Layer(P['W1'], P['b1'] if bias else None)
        output = Layer(P['W_out'], P['b_out'] if bias else None)
        if self.depth == 2:
            return ReluNetwork((first, output), p=self.config.p)
        middle = Layer(np.diag(P['s']), P['b2'] if bias else None)
        return ReluNetwork((first, middle, output), p=self.config.p)


def _initial_params(d: int, Y: np.ndarray, depth: int, config: TrainConfig, rng: np.random.Generator) -> dict:
    m, c, scale = config.m, Y.shape[1], config.init_scale
    params = {
        'W1': scale * rng.standard_normal((d, m)) / math.sqrt(d),
        'b1': np.zeros(m),
    }
    if depth == 3:
        params['s'] = scale * rng.standard_normal(m)
        params['b2'] = np.zeros(m)
    params['W_out'] = scale * rng.standard_normal((m, c)) / math.sqrt(m)
    params['b_out'] = Y.mean(axis=0) if config.bias and config.loss is Loss.SQUARED else np.zeros(c)
    return params


def _make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    params = [param for param in model.parameters() if param.requires_grad]
    if config.optimizer is Optimizer.GD:
        return torch.optim.SGD(params, lr=config.lr)
    return torch.optim.Adam(params, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)


def _train_restart(restart: int, data: DataMatrix, depth: int, config: TrainConfig) -> tuple[_PathNetwork, float]:
    X_np = data.samples
    Y_np = data.y.reshape(data.y.shape[0], -1)
    rng = make_generator(config.seed, 'restarts', restart)
    model = _PathNetwork(_initial_params(X_np.shape[1], Y_np, depth, config, rng), depth, config)
    X, Y = torch.from_numpy(X_np.copy()), torch.from_numpy(Y_np.copy())
    n = X.shape[0]
    batch = None if config.batch_size is None or config.batch_size >= n else config.batch_size
    batches = make_generator(config.seed, 'batches', restart)

    optimizer = _make_optimizer(model, config)
    best, best_state = math.inf, None
    for step in range(config.steps + 1):
        if batch is not None:
            with torch.no_grad():
                current = model.objective(X, Y).item()
        optimizer.zero_grad()
        if batch is None:
            objective = model.objective(X, Y)
            current = objective.item()
        else:
            rows = torch.from_numpy(batches.choice(n, size=batch, replace=False))
            objective = model.objective(X[rows], Y[rows], scale=n / batch)
        if not math.isfinite(current):
            raise NumericalError(f'Restart {restart} diverged at step {step}.')
        if current < best:
            best = current
            best_state = {name: value.detach().clone() for name, value in model.state_dict().items()}
        if step == config.steps:
            break
        objective.backward()
        optimizer.step()
    model.load_state_dict(best_state)
    return model, best


def _train(data: DataMatrix, config: TrainConfig, depth: int) -> TrainResult:
    if data.y is None:
        raise ValueError('Training needs labelled data.')

    def run(restart: int) -> tuple[_PathNetwork | None, RestartOutcome]:
        try:
            model, objective = _train_restart(restart, data, depth, config)
        except NumericalError as e:
            logger.warning(str(e))
            return None, RestartOutcome(restart, math.nan, failed=True)
        return model, RestartOutcome(restart, objective, failed=False)

    threads = wedgenet_config.get_threads()
    if threads > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(run, range(config.restarts)))
    else:
        results = [run(restart) for restart in range(config.restarts)]

    finished = [(outcome.objective, outcome.restart, model) for model, outcome in results if not outcome.failed]
    if not finished:
        raise NumericalError(f'All {config.restarts} restarts diverged.')
    _, restart, model = min(finished, key=lambda item: (item[0], item[1]))
    net = model.network()
    objective = nonconvex_cost(net, data, config.lam, config.p, config.loss).total
    outcomes = tuple(outcome for _, outcome in results)
    logger.info(f'Best of {len(finished)} restarts is restart {restart} with objective {objective}.')
    return TrainResult(net, objective, outcomes)


def train_two_layer(data: DataMatrix, config: TrainConfig | None = None) -> TrainResult:
    return _train(data, config or TrainConfig(), depth=2)


def train_three_layer(data: DataMatrix, config: TrainConfig | None = None) -> TrainResult:
    """ Trains parallel-path three-layer networks ``relu(s * relu(X W1 + b1) + b2) W3 + b3``. """
    return _train(data, config or TrainConfig(), depth=3)
