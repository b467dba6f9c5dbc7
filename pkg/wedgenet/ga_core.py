""" Exterior-algebra primitives over Euclidean R^d.

Only the blades the convex reformulations need are represented:

- a top-grade blade ``v_1 ^ ... ^ v_d`` through its Hodge dual, the signed volume ``det[v_1 ... v_d]``;
- a (d-1)-blade ``u_1 ^ ... ^ u_{d-1}`` through its Hodge dual, the generalized cross product.

All functions are pure and accept anything ``numpy.asarray`` turns into a float array.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from wedgenet.config import config
from wedgenet.errors import DegenerateFeature, DimensionError

ArrayLike = np.ndarray | Sequence[float] | Sequence[Sequence[float]]

_CLOSED_FORM_MAX_ORDER = 4


@dataclass(frozen=True)
class CrossProduct:
    direction: np.ndarray
    generating_indices: tuple[int, ...]
    l1_norm: float = field(init=False)
    l2_norm: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'l1_norm', float(np.abs(self.direction).sum()))
        object.__setattr__(self, 'l2_norm', float(np.sqrt(self.direction @ self.direction)))

    def norm(self, p: int) -> float:
        if p == 1:
            return self.l1_norm
        if p == 2:
            return self.l2_norm
        raise ValueError(f'Only p in (1, 2) is supported, got p={p}.')

    @property
    def is_zero(self) -> bool:
        return self.l2_norm == 0.0


def _as_vector(x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f'Expected a vector, got an array of shape {x.shape}.')
    if not np.all(np.isfinite(x)):
        raise ValueError('Vector entries should be finite.')
    return x


def _as_stack(vectors: ArrayLike, dim: int | None = None) -> np.ndarray:
    stack = np.asarray(vectors, dtype=float)
    if stack.ndim == 1 and stack.size == 0 and dim is not None:
        stack = stack.reshape(0, dim)
    if stack.ndim != 2:
        raise DimensionError(f'Expected a list of vectors, got an array of shape {stack.shape}.')
    if dim is not None and stack.shape[1] != dim:
        raise DimensionError(f'Expected vectors of length {dim}, got length {stack.shape[1]}.')
    if not np.all(np.isfinite(stack)):
        raise ValueError('Vector entries should be finite.')
    return stack


def det(matrix: np.ndarray) -> float:
    """ Determinant with closed-form cofactors up to order 4 and LU with partial pivoting above. """
    m = matrix
    k = m.shape[0]
    if k == 0:
        return 1.0
    if k == 1:
        return float(m[0, 0])
    if k == 2:
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    if k == 3:
        return float(m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
                     - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
                     + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))
    if k <= _CLOSED_FORM_MAX_ORDER:
        total = 0.0
        for j in range(k):
            minor = np.delete(m[1:], j, axis=1)
            total += (-1.0) ** j * m[0, j] * det(minor)
        return float(total)
    with warnings.catch_warnings():
        # exactly singular inputs are legitimate here, their determinant is 0
        warnings.simplefilter('ignore', scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
    swaps = np.count_nonzero(piv != np.arange(k))
    return float((-1.0) ** swaps * np.prod(np.diag(lu)))


def is_independent(vectors: ArrayLike, rtol: float | None = None, scale: float | None = None) -> bool:
    """ Whether the stacked vectors are linearly independent.

    The smallest singular value is compared with ``rtol`` times the largest one, or times ``scale``
    when that is larger (so that a set of tiny vectors in a large dataset counts as dependent).
    """
    stack = np.atleast_2d(np.asarray(vectors, dtype=float))
    rows, cols = stack.shape
    if rows == 0:
        return True
    if rows > cols:
        return False
    rtol = config.get_dependence_rtol() if rtol is None else rtol
    singular_values = np.linalg.svd(stack, compute_uv=False)
    reference = max(float(singular_values[0]), float(scale or 0.0))
    return reference > 0.0 and float(singular_values[-1]) > rtol * reference


def signed_volume(vectors: ArrayLike) -> float:
    """ Hodge dual of ``v_1 ^ ... ^ v_d``: the signed volume ``det[v_1 ... v_d]``. """
    stack = _as_stack(vectors)
    count, dim = stack.shape
    if count != dim:
        raise DimensionError(f'Signed volume needs exactly d={dim} vectors, got {count}.')
    return det(stack.T)


def _permutation_parity(order: np.ndarray) -> float:
    seen = np.zeros(len(order), dtype=bool)
    transpositions = 0
    for start in range(len(order)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = order[j]
            length += 1
        transpositions += length - 1
    return -1.0 if transpositions % 2 else 1.0


def _cofactor_vector(columns: np.ndarray) -> np.ndarray:
    """ sum_i (-1)^i |A_i| e_i for the d x (d-1) matrix ``columns`` (0-based i). """
    dim = columns.shape[0]
    result = np.empty(dim)
    for i in range(dim):
        minor = np.delete(columns, i, axis=0)
        result[i] = (-1.0) ** i * det(minor)
    return result


def cross(vectors: ArrayLike, indices: Sequence[int] | None = None, rtol: float | None = None,
          scale: float | None = None) -> CrossProduct:
    """ Generalized cross product of d-1 vectors of R^d, the Hodge dual of their wedge.

    The inputs are first put in lexicographic order and the sign of that permutation is applied
    afterwards, so swapping two inputs negates every coordinate exactly. Dependent inputs give the
    zero vector.
    """
    stack = _as_stack(vectors)
    count, dim = stack.shape
    if dim < 2 or count != dim - 1:
        raise DimensionError(f'Cross product needs d-1 vectors of length d >= 2, got {count} of length {dim}.')
    indices = tuple(range(count)) if indices is None else tuple(int(i) for i in indices)
    if not is_independent(stack, rtol=rtol, scale=scale):
        return CrossProduct(np.zeros(dim), indices)
    order = np.lexsort(stack.T[::-1])
    parity = _permutation_parity(order)
    direction = _cofactor_vector(stack[order].T) * parity
    return CrossProduct(direction, indices)


def wedge_norm(vectors: ArrayLike, p: int = 2) -> float:
    """ p-norm of the (d-1)-blade ``u_1 ^ ... ^ u_{d-1}``, measured on its Hodge dual. """
    return cross(vectors).norm(p)


def signed_distance_to_span(x: ArrayLike, basis: ArrayLike) -> float:
    x = _as_vector(x)
    basis = _as_stack(basis, dim=x.shape[0])
    if basis.shape[0] != x.shape[0] - 1:
        raise DimensionError(f'A hyperplane in R^{x.shape[0]} needs {x.shape[0] - 1} basis vectors, '
                             f'got {basis.shape[0]}.')
    product = cross(basis)
    if product.is_zero:
        raise DegenerateFeature('Basis vectors are linearly dependent, the span is not a hyperplane.')
    return float(product.direction @ x) / product.l2_norm


def dist_plus_to_span(x: ArrayLike, basis: ArrayLike) -> float:
    """ Positive part of the oriented distance from ``x`` to ``Span(basis)``. """
    return max(0.0, signed_distance_to_span(x, basis))


def signed_distance_to_affine(x: ArrayLike, points: ArrayLike) -> float:
    x = _as_vector(x)
    points = _as_stack(points, dim=x.shape[0])
    if points.shape[0] != x.shape[0]:
        raise DimensionError(f'An affine hyperplane in R^{x.shape[0]} needs {x.shape[0]} points, '
                             f'got {points.shape[0]}.')
    anchor = points[-1]
    scale = float(np.abs(points).max(initial=0.0))
    if not is_independent(points[:-1] - anchor, scale=scale):
        raise DegenerateFeature('Points are affinely dependent, their hull is not a hyperplane.')
    return signed_distance_to_span(x - anchor, points[:-1] - anchor)


def dist_plus_to_affine(x: ArrayLike, points: ArrayLike) -> float:
    """ Positive part of the oriented distance from ``x`` to the affine hull of ``points``.

    The last point is the anchor ``u_d``; the result is ``dist_plus_to_span(x - u_d, {u_i - u_d})``.
    """
    return max(0.0, signed_distance_to_affine(x, points))


def signed_triangle_area(a: ArrayLike, b: ArrayLike, c: ArrayLike) -> float:
    """ 1/2 (a - c) ^ (b - c), positive for counterclockwise triangles. """
    a, b, c = _as_vector(a), _as_vector(b), _as_vector(c)
    if not a.shape == b.shape == c.shape == (2,):
        raise DimensionError('Signed triangle area is defined for points of R^2 only.')
    u, v = a - c, b - c
    return 0.5 * float(u[0] * v[1] - u[1] * v[0])
