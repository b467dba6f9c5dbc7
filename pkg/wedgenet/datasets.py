""" Small synthetic datasets. """
from __future__ import annotations

import numpy as np

from wedgenet.dict_builder import DataMatrix
from wedgenet.seeding import make_generator


def spiral(n: int = 200, turns: float = 1.5, noise: float = 0.0, seed: int | None = 0) -> DataMatrix:
    """ Two interleaved planar spirals with labels +1 and -1, ``n // 2`` points each (the first arm gets the
    extra point for odd ``n``).
    """
    rng = make_generator(seed, 'data', 0)
    sizes = (n - n // 2, n // 2)
    points, labels = [], []
    for arm, (size, label) in enumerate(zip(sizes, (1.0, -1.0))):
        radius = np.linspace(0.1, 1.0, size)
        angle = 2 * np.pi * turns * radius + arm * np.pi
        arm_points = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        points.append(arm_points + noise * rng.standard_normal(arm_points.shape))
        labels.append(np.full(size, label))
    return DataMatrix(np.vstack(points), np.concatenate(labels))


def cross() -> DataMatrix:
    """ The four points (1, 0), (-1, 0), (0, 1), (0, -1); the horizontal pair is labelled +1. """
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    return DataMatrix(X, np.array([1.0, 1.0, -1.0, -1.0]))


def gaussian(n: int, d: int, outputs: int = 1, seed: int | None = 0) -> DataMatrix:
    """ Standard normal samples with independent standard normal labels. """
    rng = make_generator(seed, 'data', 1)
    X = rng.standard_normal((n, d))
    y = rng.standard_normal((n, outputs))
    return DataMatrix(X, y[:, 0] if outputs == 1 else y)


def uniform_1d(n: int, low: float = -1.0, high: float = 1.0, seed: int | None = 0) -> DataMatrix:
    """ Sorted scalar inputs uniform on [low, high] with standard normal labels. """
    rng = make_generator(seed, 'data', 2)
    x = np.sort(rng.uniform(low, high, n))
    return DataMatrix(x[:, None], rng.standard_normal(n))

