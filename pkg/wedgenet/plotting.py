""" SVG rendering of first-layer breaklines and decision regions of planar networks. """
from __future__ import annotations

import logging
import os
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from wedgenet.dict_builder import DataMatrix  # noqa: E402
from wedgenet.errors import DimensionError  # noqa: E402
from wedgenet.net_builder import ReluNetwork, forward  # noqa: E402

logger = logging.getLogger(__file__)

Box = tuple[float, float, float, float]
Segment = tuple[tuple[float, float], tuple[float, float]]

_EDGE_TOL = 1e-12


def default_box(X: np.ndarray, margin: float = 0.25) -> Box:
    low, high = X.min(axis=0), X.max(axis=0)
    pad = margin * np.maximum(high - low, 1.0)
    return float(low[0] - pad[0]), float(high[0] + pad[0]), float(low[1] - pad[1]), float(high[1] + pad[1])


def _clip_line(w: np.ndarray, b: float, box: Box) -> Segment | None:
    x_min, x_max, y_min, y_max = box
    points = []
    if w[1] != 0:
        for x in (x_min, x_max):
            points.append((x, -(b + w[0] * x) / w[1]))
    if w[0] != 0:
        for y in (y_min, y_max):
            points.append((-(b + w[1] * y) / w[0], y))
    scale = _EDGE_TOL * max(x_max - x_min, y_max - y_min)
    inside = [(x, y) for x, y in points
              if x_min - scale <= x <= x_max + scale and y_min - scale <= y <= y_max + scale]
    if len(inside) < 2:
        return None
    pairs = [(p, q) for i, p in enumerate(inside) for q in inside[i + 1:]]
    p, q = max(pairs, key=lambda pair: np.hypot(pair[0][0] - pair[1][0], pair[0][1] - pair[1][1]))
    if p == q:
        return None
    return (float(p[0]), float(p[1])), (float(q[0]), float(q[1]))


def breaklines(net: ReluNetwork, box: Box) -> list[Segment | None]:
    """ Zero set {x : w_j^T x + b_j = 0} of every first-layer neuron clipped to ``box``; None when it misses. """
    if net.input_dim != 2:
        raise DimensionError(f'Breaklines are drawn for planar inputs, got d={net.input_dim}.')
    first = net.layers[0]
    bias = first.bias()
    return [None if not np.any(first.W[:, j]) else _clip_line(first.W[:, j], float(bias[j]), box)
            for j in range(first.width)]


def plot_partition(net: ReluNetwork,
                   data: DataMatrix,
                   file_path: os.PathLike | str,
                   box: Box | None = None,
                   regions: bool = True,
                   resolution: int = 200) -> Path:
    """ Draws the samples, the breaklines and, with ``regions``, the sign of the first network output. """
    X = data.samples
    if X.shape[1] != 2:
        raise DimensionError(f'Partitions are drawn for planar data, got d={X.shape[1]}.')
    box = box or default_box(X)
    fig, ax = plt.subplots(figsize=(5, 5))
    try:
        if regions:
            xs = np.linspace(box[0], box[1], resolution)
            ys = np.linspace(box[2], box[3], resolution)
            grid_x, grid_y = np.meshgrid(xs, ys)
            values = forward(net, np.column_stack([grid_x.ravel(), grid_y.ravel()]))[:, 0]
            ax.contourf(grid_x, grid_y, np.sign(values).reshape(grid_x.shape), levels=[-1.5, 0, 1.5],
                        colors=['#f4c7c3', '#c6dbef'], alpha=0.6)
        for segment in breaklines(net, box):
            if segment is not None:
                (x0, y0), (x1, y1) = segment
                ax.plot([x0, x1], [y0, y1], color='0.3', linewidth=1.0)
        colors = 'tab:blue' if data.y is None else np.where(data.y.reshape(data.n_samples, -1)[:, 0] > 0,
                                                            'tab:blue', 'tab:red')
        ax.scatter(X[:, 0], X[:, 1], c=colors, s=18, zorder=3)
        ax.set_xlim(box[0], box[1])
        ax.set_ylim(box[2], box[3])
        ax.set_aspect('equal')
        file_path = Path(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        # byte-identical on rerun
        with plt.rc_context({'svg.hashsalt': 'wedgenet'}):
            fig.savefig(file_path, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    logger.info(f'Wrote partition plot "{file_path}".')
    return file_path
