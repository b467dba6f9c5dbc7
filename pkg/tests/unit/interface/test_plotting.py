import numpy as np
import pytest

from wedgenet.datasets import spiral
from wedgenet.errors import DimensionError
from wedgenet.net_builder import Layer, ReluNetwork
from wedgenet.plotting import breaklines, default_box, plot_partition


def _net(W, b):
    W = np.asarray(W, dtype=float)
    return ReluNetwork((Layer(W, b), Layer(np.ones((W.shape[1], 1)))))


def test_default_box():
    box = default_box(np.array([[0.0, 0.0], [2.0, 1.0]]))
    assert box == pytest.approx((-0.5, 2.5, -0.25, 1.25))


def test_breaklines_are_clipped_to_the_box():
    net = _net([[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 1.0]], [-0.5, 0.0, 1.0, 5.0])
    vertical, horizontal, silent, outside = breaklines(net, (-1.0, 1.0, -1.0, 1.0))
    assert sorted(vertical) == [(0.5, -1.0), (0.5, 1.0)]
    assert sorted(horizontal) == [(-1.0, 0.0), (1.0, 0.0)]
    assert silent is None
    assert outside is None


def test_breaklines_need_planar_inputs():
    with pytest.raises(DimensionError):
        breaklines(_net(np.ones((3, 2)), None), (-1.0, 1.0, -1.0, 1.0))


def test_plot_partition_is_reproducible(tmp_path):
    data = spiral(n=10)
    net = _net([[1.0, -1.0], [1.0, 1.0]], [0.1, -0.2])
    first = plot_partition(net, data, tmp_path / 'first.svg', resolution=40)
    second = plot_partition(net, data, tmp_path / 'second.svg', resolution=40)
    assert first.read_text(encoding='utf-8').lstrip().startswith('<?xml')
    assert first.read_bytes() == second.read_bytes()
    with pytest.raises(DimensionError):
        plot_partition(_net(np.ones((3, 2)), None), data, tmp_path / 'bad.svg')
