""" Geometry of the hyperplane arrangement {w : x_i^T w = 0} spanned by a data matrix.

Chambers are the full-dimensional cells of the arrangement. Every chamber of a pointed arrangement has a
vertex ray on the intersection of d-1 hyperplanes, which is the cross product of their normals; nudging
that ray off each of the d-1 hyperplanes reaches every chamber around it.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from wedgenet.config import config
from wedgenet.errors import DimensionError, SizeError
from wedgenet.ga_core import cross
from wedgenet.seeding import make_generator, spawn_generators, split_counts

logger = logging.getLogger(__file__)

ENUMERATION_BUDGET = 10 ** 7
_ZERO_RTOL = 1e-12
_RANK_RTOL = 1e-10
_PROBE_CHUNK = 1000
_MAX_PROBE_ROUNDS = 10


@dataclass(frozen=True)
class ArrangementEnumeration:
    """ Full-dimensional sign patterns of ``sign(X w)``.

    ``witnesses[k]`` is a unit direction inside chamber ``k``; ``rays[k]`` holds the unit vertex rays of the
    chamber that the enumeration reached (empty for chambers found by random probes only).
    """
    sign_patterns: tuple[tuple[int, ...], ...]
    witnesses: np.ndarray
    rays: tuple[np.ndarray, ...]
    bound: int
    rank: int
    dim: int

    @property
    def count(self) -> int:
        return len(self.sign_patterns)


@dataclass(frozen=True)
class ChamberDiameter:
    value: float
    exact: bool
    # maxima are only searched among vertex rays
    vertex_attained: bool


@dataclass(frozen=True)
class IsometryEstimate:
    epsilon: float
    alpha: float
    diameter_bound: float


@dataclass(frozen=True)
class DispersionReport:
    chamber_diameter_estimate: float
    exact: bool
    vertex_attained: bool
    epsilon_2d: float | None
    local_epsilons: tuple[float, ...]
    isometry_epsilon: float
    isometry_alpha: float
    isometry_diameter_bound: float


def _as_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionError(f'Expected an n x d data matrix, got shape {X.shape}.')
    if not np.all(np.isfinite(X)):
        raise ValueError('Data entries should be finite.')
    return X


def _nonzero_rows(X: np.ndarray) -> np.ndarray:
    keep = np.linalg.norm(X, axis=1) > 0
    if not keep.all():
        logger.warning(f'Dropped {int(np.count_nonzero(~keep))} zero rows, they define no hyperplane.')
    return keep


def _signs(Y: np.ndarray, W: np.ndarray) -> np.ndarray:
    """ Sign of ``Y @ W`` with relative zero snapping; W holds directions as columns. """
    products = Y @ W
    scale = np.outer(np.linalg.norm(Y, axis=1), np.linalg.norm(W, axis=0))
    signs = np.sign(products).astype(np.int8)
    signs[np.abs(products) <= _ZERO_RTOL * scale] = 0
    return signs


def _unique_hyperplanes(Y: np.ndarray) -> np.ndarray:
    units = Y / np.linalg.norm(Y, axis=1, keepdims=True)
    leading = units[np.arange(units.shape[0]), np.argmax(np.abs(units) > _ZERO_RTOL, axis=1)]
    units = units * np.where(leading < 0, -1.0, 1.0)[:, None]
    _, first = np.unique(np.round(units, 12), axis=0, return_index=True)
    return units[np.sort(first)]


def arrangement_bound(hyperplanes: int, dim: int) -> int:
    """ 2 sum_{j<d} C(n-1, j), the largest number of chambers n central hyperplanes of R^d can make. """
    if hyperplanes == 0:
        return 1
    return 2 * sum(math.comb(hyperplanes - 1, j) for j in range(dim))


def enumeration_size(X) -> int:
    X = _as_rows(X)
    d = X.shape[1]
    return math.comb(X.shape[0], d - 1) * 2 ** d


class _Chambers:
    def __init__(self, Y_all: np.ndarray):
        self.Y_all = Y_all
        self.index: dict[bytes, int] = {}
        self.patterns: list[tuple[int, ...]] = []
        self.witnesses: list[np.ndarray] = []
        self.rays: list[list[np.ndarray]] = []

    def add(self, directions: np.ndarray, nonzero: np.ndarray, ray: np.ndarray | None = None) -> int:
        signs = _signs(self.Y_all, directions)
        added = 0
        for k in range(directions.shape[1]):
            pattern = signs[:, k]
            if np.any(pattern[nonzero] == 0):
                continue
            key = pattern.tobytes()
            if key not in self.index:
                self.index[key] = len(self.patterns)
                self.patterns.append(tuple(int(s) for s in pattern))
                self.witnesses.append(directions[:, k] / np.linalg.norm(directions[:, k]))
                self.rays.append([])
                added += 1
            if ray is not None:
                self.rays[self.index[key]].append(ray)
        return added


def _vertex_directions(H: np.ndarray, subset: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray] | None:
    normals = H[list(subset)]
    product = cross(normals)
    if product.is_zero:
        return None
    ray = product.direction / product.l2_norm
    nudges = np.linalg.pinv(normals) @ np.array(list(itertools.product((1.0, -1.0), repeat=len(subset)))).T
    return ray, nudges


def _step(H: np.ndarray, base: np.ndarray, nudges: np.ndarray) -> np.ndarray:
    """ Largest safe step along each nudge that crosses no hyperplane off the vertex. """
    at_base = np.abs(H @ base)
    off = at_base > _ZERO_RTOL
    if not off.any():
        return np.ones(nudges.shape[1])
    rates = np.abs(H[off] @ nudges)
    with np.errstate(divide='ignore'):
        limits = np.where(rates > 0, at_base[off][:, None] / rates, np.inf)
    return np.minimum(0.5 * limits.min(axis=0), 1.0)


def enumerate_arrangements(X, probes: int = 1000, seed: int | None = 0,
                           budget: int = ENUMERATION_BUDGET) -> ArrangementEnumeration:
    """ Exact set of full-dimensional sign patterns of ``sign(X w)``.

    Zero rows keep sign 0 in every pattern. The arrangement is enumerated in the row space of ``X``; vertex
    rays of all (r-1)-subsets of distinct hyperplanes are nudged into their neighbouring chambers, then random
    probes are added in rounds until a round finds nothing new.
    """
    X = _as_rows(X)
    n, d = X.shape
    nonzero = _nonzero_rows(X)
    size = enumeration_size(X)
    if size > budget:
        raise SizeError(f'Enumerating the arrangement of {n} rows in R^{d} needs {size} candidate directions, '
                        f'the budget is {budget}.')

    if not nonzero.any():
        return ArrangementEnumeration(((0,) * n,), np.eye(d)[:1], (np.empty((0, d)),), 1, 0, d)
    _, s, Vt = np.linalg.svd(X[nonzero], full_matrices=False)
    r = int(np.count_nonzero(s > _RANK_RTOL * s[0]))
    basis = Vt[:r].T
    Y_all = X @ basis
    H = _unique_hyperplanes(Y_all[nonzero])
    chambers = _Chambers(Y_all)

    if r == 1:
        chambers.add(np.array([[1.0, -1.0]]), nonzero)
    else:
        for subset in itertools.combinations(range(H.shape[0]), r - 1):
            vertex = _vertex_directions(H, subset)
            if vertex is None:
                continue
            ray, nudges = vertex
            for base in (ray, -ray):
                directions = base[:, None] + _step(H, base, nudges) * nudges
                chambers.add(directions, nonzero, ray=base)

    for round_index in range(_MAX_PROBE_ROUNDS):
        rng = make_generator(seed, 'arrangement', round_index)
        directions = rng.standard_normal((r, probes))
        if chambers.add(directions, nonzero) == 0:
            break

    count = len(chambers.patterns)
    bound = arrangement_bound(H.shape[0], r)
    logger.info(f'Enumerated {count} chambers of {H.shape[0]} hyperplanes in rank {r} (bound {bound}).')
    witnesses = np.array(chambers.witnesses) @ basis.T
    rays = tuple(np.array(found).reshape(-1, r) @ basis.T for found in chambers.rays)
    return ArrangementEnumeration(tuple(chambers.patterns), witnesses, rays, bound, r, d)


def _max_distance(points: np.ndarray) -> float:
    best = 0.0
    for start in range(0, points.shape[0], _PROBE_CHUNK):
        best = max(best, float(cdist(points[start:start + _PROBE_CHUNK], points).max(initial=0.0)))
    return best


def _unit_probes(seed: int | None, stream: str, dim: int, count: int) -> list[np.ndarray]:
    """ Unit probes from per-worker streams, in worker order. """
    parts = split_counts(count, config.get_threads())
    generators = spawn_generators(seed, stream, len(parts))

    def draw(job):
        rng, size = job
        W = rng.standard_normal((size, dim))
        return W / np.linalg.norm(W, axis=1, keepdims=True)

    threads = config.get_threads()
    if threads == 1 or len(parts) == 1:
        return [draw(job) for job in zip(generators, parts)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(draw, zip(generators, parts)))


def _sampled_diameter(X: np.ndarray, probes: int, seed: int | None) -> float:
    buckets: dict[bytes, list[np.ndarray]] = {}
    for block in _unit_probes(seed, 'probes', X.shape[1], probes):
        for start in range(0, block.shape[0], _PROBE_CHUNK):
            W = block[start:start + _PROBE_CHUNK]
            keys = np.packbits(X @ W.T > 0, axis=0)
            for k in range(W.shape[0]):
                buckets.setdefault(keys[:, k].tobytes(), []).append(W[k])
    return max((_max_distance(np.array(members)) for members in buckets.values() if len(members) > 1),
               default=0.0)


def _exact_diameter(enumeration: ArrangementEnumeration) -> float | None:
    if enumeration.dim == 1:
        return 0.0
    if enumeration.rank < enumeration.dim:
        # every chamber contains the orthogonal complement of the row space
        return 2.0
    best = 0.0
    for rays in enumeration.rays:
        if rays.shape[0] < 2:
            return None
        best = max(best, _max_distance(np.unique(np.round(rays, 14), axis=0)))
    return best


def _chamber_diameter(X, mode: str = 'exact', probes: int = 10000, seed: int | None = 0) -> ChamberDiameter:
    X = _as_rows(X)
    if mode not in ('exact', 'sampled'):
        raise ValueError(f'Unknown chamber diameter mode "{mode}", expected "exact" or "sampled".')
    X = X[_nonzero_rows(X)]
    if X.shape[0] == 0:
        return ChamberDiameter(2.0, True, False)
    if mode == 'exact':
        value = _exact_diameter(enumerate_arrangements(X, seed=seed))
        if value is not None:
            return ChamberDiameter(value, True, True)
        logger.warning('Some chambers have fewer than two known vertex rays, falling back to sampling.')
    return ChamberDiameter(_sampled_diameter(X, probes, seed), False, False)


def chamber_diameter(X, mode: str = 'exact', probes: int = 10000, seed: int | None = 0) -> float:
    """ Largest distance between two unit vectors with the same sign pattern under ``X``.

    ``exact`` takes the largest distance between vertex rays of a chamber; ``sampled`` buckets random unit
    probes by sign pattern and is a lower bound.
    """
    return _chamber_diameter(X, mode, probes, seed).value


def _angles_mod_pi(V: np.ndarray) -> np.ndarray:
    V = V[np.linalg.norm(V, axis=1) > 0]
    return np.sort(np.mod(np.arctan2(V[:, 1], V[:, 0]), np.pi))


def _largest_gap(angles: np.ndarray) -> float:
    if angles.size == 0:
        return 1.0
    gaps = np.diff(np.append(angles, angles[0] + np.pi))
    return float(gaps.max()) / np.pi


def local_dispersions(X) -> tuple[float, ...]:
    X = _as_rows(X)
    return tuple(_largest_gap(_angles_mod_pi(np.delete(X, j, axis=0) - X[j])) for j in range(X.shape[0]))


def angular_dispersion_2d(X, local: bool = False) -> float:
    """ Largest gap between consecutive row angles modulo pi, as a fraction of pi.

    The local version centers the data at every sample in turn and returns the largest value.
    """
    X = _as_rows(X)
    if X.shape[1] != 2:
        raise DimensionError(f'Angular dispersion is defined for d=2, got d={X.shape[1]}.')
    if local:
        return max(local_dispersions(X), default=1.0)
    return _largest_gap(_angles_mod_pi(X))


def isometry_epsilon(X, probes: int = 10000, seed: int | None = 0) -> IsometryEstimate:
    """ How far ``w -> |X w|_1 / n`` is from a multiple ``alpha`` of the Euclidean norm on the sphere.

    ``alpha`` is the median over unit probes and ``epsilon`` the largest relative deviation from it; the
    chamber diameter is then at most ``4 sqrt(epsilon)``.
    """
    X = _as_rows(X)
    n = X.shape[0]
    values = []
    for block in _unit_probes(seed, 'isometry', X.shape[1], probes):
        for start in range(0, block.shape[0], _PROBE_CHUNK):
            values.append(np.abs(X @ block[start:start + _PROBE_CHUNK].T).sum(axis=0) / n)
    values = np.concatenate(values)
    alpha = float(np.median(values))
    if alpha == 0.0:
        return IsometryEstimate(math.inf, 0.0, math.inf)
    epsilon = float(np.abs(values / alpha - 1.0).max())
    return IsometryEstimate(epsilon, alpha, 4.0 * math.sqrt(epsilon))


def diagnose(X, mode: str | None = None, probes: int = 10000, seed: int | None = 0) -> DispersionReport:
    """ Every dispersion estimate of ``X``; ``mode=None`` picks the exact chamber diameter when affordable. """
    X = _as_rows(X)
    if mode is None:
        mode = 'exact' if enumeration_size(X) <= ENUMERATION_BUDGET else 'sampled'
    diameter = _chamber_diameter(X, mode, probes, seed)
    epsilon_2d, local = None, ()
    if X.shape[1] == 2:
        epsilon_2d = angular_dispersion_2d(X)
        local = local_dispersions(X)
    isometry = isometry_epsilon(X, probes, seed)
    return DispersionReport(
        chamber_diameter_estimate=diameter.value,
        exact=diameter.exact,
        vertex_attained=diameter.vertex_attained,
        epsilon_2d=epsilon_2d,
        local_epsilons=local,
        isometry_epsilon=isometry.epsilon,
        isometry_alpha=isometry.alpha,
        isometry_diameter_bound=isometry.diameter_bound,
    )
