""" Accelerated proximal-gradient solver for l1 and group-l1 penalized convex losses.

The problem is ``min_{Z, t} loss(K Z + 1 t, Y) + lambda_eff * sum_g |Z_g|_F`` with an unpenalized
intercept ``t``. Without explicit groups every row of ``Z`` is its own group, which is the plain l1
penalty for a coefficient vector and the per-feature group penalty for a coefficient matrix.

FISTA iterations use backtracking and a function-value restart, so accepted iterates never increase
the objective. Whenever the objective stagnates, a Newton solve on the current support (signs held
fixed) sharpens the iterate to the precision required by the dual certificate.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

from wedgenet.errors import NonConverged, NumericalError
from wedgenet.seeding import make_generator

logger = logging.getLogger(__file__)


class Loss(Enum):
    SQUARED = 'squared'
    LOGISTIC = 'logistic'


@dataclass(frozen=True)
class LassoProblem:
    K: np.ndarray
    y: np.ndarray
    lam: float
    penalty_scale: float = 2.0
    loss: Loss = Loss.SQUARED
    intercept: bool = False
    groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if K.ndim != 2:
            raise ValueError(f'K should be a matrix, got shape {K.shape}.')
        if y.ndim not in (1, 2) or y.shape[0] != K.shape[0]:
            raise ValueError(f'Labels of shape {y.shape} do not match K of shape {K.shape}.')
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(y))):
            raise ValueError('K and labels should be finite.')
        if not self.lam > 0:
            raise ValueError(f'Regularization lambda should be positive, got {self.lam}.')
        if not self.penalty_scale > 0:
            raise ValueError(f'Penalty scale should be positive, got {self.penalty_scale}.')
        loss = Loss(self.loss)
        if loss is Loss.LOGISTIC and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError('Logistic loss needs labels in {-1, +1}.')
        groups = self.groups
        if groups is not None:
            groups = tuple(tuple(int(j) for j in group) for group in groups)
            flat = sorted(j for group in groups for j in group)
            if flat != list(range(K.shape[1])) or any(len(group) == 0 for group in groups):
                raise ValueError('Groups should partition the columns of K exactly once.')
        object.__setattr__(self, 'K', K)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'loss', loss)
        object.__setattr__(self, 'groups', groups)

    @property
    def lambda_eff(self) -> float:
        return self.penalty_scale * self.lam

    @property
    def n_features(self) -> int:
        return self.K.shape[1]

    @property
    def n_outputs(self) -> int:
        return 1 if self.y.ndim == 1 else self.y.shape[1]

    @property
    def Y(self) -> np.ndarray:
        return self.y.reshape(self.y.shape[0], -1)


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 200_000
    tol: float = 1e-9
    patience: int = 10
    dual_tol: float = 1e-6
    intercept_tol: float = 1e-6
    support_rtol: float = 1e-8
    power_steps: int = 50
    refine_every: int = 1000
    newton_steps: int = 50
    strict: bool = True


@dataclass(frozen=True)
class LassoSolution:
    z: np.ndarray
    t: float | np.ndarray | None
    objective: float
    dual_residual: float
    intercept_residual: float
    support: np.ndarray
    iterations: int
    lambda_eff: float
    converged: bool = True

    @property
    def Z(self) -> np.ndarray:
        return self.z.reshape(self.z.shape[0], -1)

    @property
    def T(self) -> np.ndarray:
        width = self.Z.shape[1]
        return np.zeros(width) if self.t is None else np.asarray(self.t, dtype=float).reshape(width)


class DualCertificate(NamedTuple):
    v: np.ndarray
    max_violation: float
    intercept_residual: float


def loss_value(loss: Loss, F: np.ndarray, Y: np.ndarray) -> float:
    if loss is Loss.SQUARED:
        return 0.5 * float(np.sum((F - Y) ** 2))
    return float(np.sum(np.logaddexp(0.0, -Y * F)))


def loss_gradient(loss: Loss, F: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if loss is Loss.SQUARED:
        return F - Y
    return -Y * expit(-Y * F)


def loss_curvature(loss: Loss, F: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if loss is Loss.SQUARED:
        return np.ones_like(F)
    s = expit(Y * F)
    return s * (1.0 - s)


def _group_norms(Z: np.ndarray, groups: tuple[tuple[int, ...], ...] | None) -> np.ndarray:
    if groups is None:
        return np.linalg.norm(Z, axis=1)
    return np.array([np.linalg.norm(Z[list(group)]) for group in groups])


def _prox(Z: np.ndarray, tau: float, groups: tuple[tuple[int, ...], ...] | None) -> np.ndarray:
    if groups is None and Z.shape[1] == 1:
        return np.sign(Z) * np.maximum(np.abs(Z) - tau, 0.0)
    if groups is None:
        norms = np.linalg.norm(Z, axis=1)
        shrink = np.maximum(1.0 - tau / np.where(norms > 0, norms, 1.0), 0.0)
        return Z * shrink[:, None]
    result = Z.copy()
    for group in groups:
        rows = list(group)
        norm = np.linalg.norm(Z[rows])
        result[rows] = 0.0 if norm <= tau else Z[rows] * (1.0 - tau / norm)
    return result


def _predict(problem: LassoProblem, Z: np.ndarray, t: np.ndarray) -> np.ndarray:
    return problem.K @ Z + t


def _objective(problem: LassoProblem, Z: np.ndarray, t: np.ndarray) -> float:
    penalty = float(np.sum(_group_norms(Z, problem.groups)))
    return loss_value(problem.loss, _predict(problem, Z, t), problem.Y) + problem.lambda_eff * penalty


def _shape_solution(problem: LassoProblem, Z: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, float | np.ndarray | None]:
    z = Z[:, 0].copy() if problem.y.ndim == 1 else Z.copy()
    if not problem.intercept:
        return z, None
    return z, (float(t[0]) if problem.y.ndim == 1 else t.copy())


def _as_matrix(problem: LassoProblem, z, t) -> tuple[np.ndarray, np.ndarray]:
    width = problem.n_outputs
    Z = np.zeros((problem.n_features, width)) if z is None else np.asarray(z, dtype=float).reshape(-1, width)
    if Z.shape[0] != problem.n_features:
        raise ValueError(f'Coefficients of shape {np.shape(z)} do not match {problem.n_features} features.')
    T = np.zeros(width) if t is None or not problem.intercept else np.asarray(t, dtype=float).reshape(width)
    return Z, T


def objective_value(problem: LassoProblem, z: np.ndarray, t: float | np.ndarray | None = None) -> float:
    """ loss(K z + 1 t, y) + lambda_eff * penalty(z). """
    Z, T = _as_matrix(problem, z, t)
    return _objective(problem, Z, T)


def _certificate(problem: LassoProblem, Z: np.ndarray, t: np.ndarray) -> DualCertificate:
    V = loss_gradient(problem.loss, _predict(problem, Z, t), problem.Y)
    correlations = problem.K.T @ V
    norms = _group_norms(correlations, problem.groups)
    max_violation = float(norms.max(initial=0.0)) - problem.lambda_eff
    intercept_residual = float(np.abs(V.sum(axis=0)).max()) if problem.intercept else 0.0
    v = V[:, 0] if problem.y.ndim == 1 else V
    return DualCertificate(v, max_violation, intercept_residual)


def dual_certificate(problem: LassoProblem, solution: LassoSolution) -> DualCertificate:
    """ Gradient v of the loss at the solution, the worst dual-constraint violation and |sum v| with an intercept. """
    Z, T = _as_matrix(problem, solution.z, solution.t)
    return _certificate(problem, Z, T)


def critical_lambda(problem: LassoProblem) -> float:
    """ Smallest lambda_eff for which Z = 0 (with the best intercept) is optimal. """
    Z = np.zeros((problem.n_features, problem.n_outputs))
    t = _refine(problem, Z, np.zeros(problem.n_outputs), SolverConfig())[1]
    V = loss_gradient(problem.loss, _predict(problem, Z, t), problem.Y)
    return float(_group_norms(problem.K.T @ V, problem.groups).max(initial=0.0))


def _lipschitz(problem: LassoProblem, steps: int) -> float:
    n = problem.K.shape[0]
    A = np.hstack([problem.K, np.ones((n, 1))]) if problem.intercept else problem.K
    if A.shape[1] == 0:
        return 1.0
    v = make_generator(0, 'power-iteration').standard_normal(A.shape[1])
    estimate = 0.0
    for _ in range(steps):
        norm = np.linalg.norm(v)
        if norm == 0:
            break
        v = A.T @ (A @ (v / norm))
        estimate = float(np.linalg.norm(v))
    if problem.loss is Loss.LOGISTIC:
        estimate *= 0.25
    return max(estimate, 1e-12)


def _active_rows(problem: LassoProblem, Z: np.ndarray, support_rtol: float) -> list[int]:
    norms = _group_norms(Z, problem.groups)
    top = float(norms.max(initial=0.0))
    if top == 0.0:
        return []
    active = np.flatnonzero(norms > support_rtol * top)
    if problem.groups is None:
        return [int(j) for j in active]
    return sorted(j for g in active for j in problem.groups[g])


def _restricted_groups(problem: LassoProblem, rows: list[int]) -> list[list[int]]:
    """ Positions within ``rows`` of every active group. """
    position = {j: k for k, j in enumerate(rows)}
    if problem.groups is None:
        return [[k] for k in range(len(rows))]
    return [[position[j] for j in group] for group in problem.groups if group[0] in position]


def _newton_step(hessian: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter('error', scipy.linalg.LinAlgWarning)
        try:
            step = scipy.linalg.solve(hessian, -gradient, assume_a='sym')
            if np.all(np.isfinite(step)):
                return step
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
            pass
    # singular restricted problem (dependent active columns): minimum-norm step
    return scipy.linalg.lstsq(hessian, -gradient)[0]


def _refine(problem: LassoProblem, Z: np.ndarray, t: np.ndarray,
            config: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """ Damped Newton on the smooth objective restricted to the active groups of ``Z``. """
    rows = _active_rows(problem, Z, config.support_rtol)
    n, width = problem.Y.shape
    A = problem.K[:, rows]
    if problem.intercept:
        A = np.hstack([A, np.ones((n, 1))])
    if A.shape[1] == 0:
        return np.zeros_like(Z), t
    n_coef = len(rows)
    groups = _restricted_groups(problem, rows)
    lam = problem.lambda_eff

    def unpack(theta):
        block = theta.reshape(A.shape[1], width)
        return block[:n_coef], (block[n_coef] if problem.intercept else np.zeros(width))

    def restricted_objective(theta):
        coef, intercept = unpack(theta)
        penalty = sum(np.linalg.norm(coef[g]) for g in groups)
        return loss_value(problem.loss, A[:, :n_coef] @ coef + intercept, problem.Y) + lam * penalty

    theta = np.vstack([Z[rows], t[None, :]] if problem.intercept else [Z[rows]]).ravel()
    scale = lam + float(np.abs(A.T @ problem.Y).max(initial=0.0))
    for _ in range(config.newton_steps):
        coef, intercept = unpack(theta)
        F = A[:, :n_coef] @ coef + intercept
        G = loss_gradient(problem.loss, F, problem.Y)
        gradient = (A.T @ G)
        curvature = loss_curvature(problem.loss, F, problem.Y)
        hessian = np.zeros((theta.size, theta.size))
        for k in range(width):
            hessian[k::width, k::width] = A.T @ (A * curvature[:, k:k + 1])
        for g in groups:
            block = coef[g]
            norm = float(np.linalg.norm(block))
            if norm == 0.0:
                return Z, t
            gradient[g] += lam * block / norm
            flat = np.array([r * width + k for r in g for k in range(width)])
            u = block.ravel()
            hessian[np.ix_(flat, flat)] += lam * (np.eye(u.size) / norm - np.outer(u, u) / norm ** 3)
        gradient = gradient.ravel()
        if np.abs(gradient).max() <= 1e-14 * scale:
            break
        step = _newton_step(hessian, gradient)

        current = restricted_objective(theta)
        signs = [np.sign(coef[g]) for g in groups]
        alpha = 1.0
        for _ in range(40):
            candidate = theta + alpha * step
            new_coef, _ = unpack(candidate)
            keeps_signs = all(np.array_equal(np.sign(new_coef[g]), s) if len(g) == 1 and width == 1
                              else np.linalg.norm(new_coef[g]) > 0 for g, s in zip(groups, signs))
            if keeps_signs and restricted_objective(candidate) <= current + 1e-14 * max(1.0, abs(current)):
                break
            alpha *= 0.5
        else:
            break
        theta = candidate
        if alpha * np.abs(step).max(initial=0.0) <= 1e-16 * max(1.0, np.abs(theta).max(initial=0.0)):
            break

    coef, intercept = unpack(theta)
    refined = np.zeros_like(Z)
    refined[rows] = coef
    return refined, (intercept.copy() if problem.intercept else t)


def _converged(problem: LassoProblem, certificate: DualCertificate, config: SolverConfig) -> bool:
    v_l1 = float(np.abs(certificate.v).sum())
    return (certificate.max_violation <= problem.lambda_eff * config.dual_tol
            and certificate.intercept_residual <= config.intercept_tol * v_l1)


def _solution(problem: LassoProblem, Z: np.ndarray, t: np.ndarray, iterations: int,
              config: SolverConfig, converged: bool) -> LassoSolution:
    certificate = _certificate(problem, Z, t)
    norms = _group_norms(Z, problem.groups)
    top = float(norms.max(initial=0.0))
    support = np.flatnonzero(_group_norms(Z, None) > config.support_rtol * top) if top > 0 else np.array([], int)
    z, t_out = _shape_solution(problem, Z, t)
    return LassoSolution(
        z=z,
        t=t_out,
        objective=_objective(problem, Z, t),
        dual_residual=certificate.max_violation,
        intercept_residual=certificate.intercept_residual,
        support=support,
        iterations=iterations,
        lambda_eff=problem.lambda_eff,
        converged=converged,
    )


def solve(problem: LassoProblem,
          config: SolverConfig | None = None,
          z0: np.ndarray | None = None,
          t0: float | np.ndarray | None = None) -> LassoSolution:
    config = config or SolverConfig()
    lam = problem.lambda_eff
    Z, t = _as_matrix(problem, z0, t0)
    if problem.intercept and t0 is None:
        # best constant model as the starting intercept
        t = _refine(problem, np.zeros_like(Z), t, config)[1]
    L = _lipschitz(problem, config.power_steps)
    F = _objective(problem, Z, t)
    Y_z, Y_t, theta = Z, t, 1.0
    stagnant = 0

    for iteration in range(1, config.max_iter + 1):
        P_y = _predict(problem, Y_z, Y_t)
        loss_y = loss_value(problem.loss, P_y, problem.Y)
        G = loss_gradient(problem.loss, P_y, problem.Y)
        grad_z = problem.K.T @ G
        grad_t = G.sum(axis=0) if problem.intercept else np.zeros_like(Y_t)
        for _ in range(64):
            Z_new = _prox(Y_z - grad_z / L, lam / L, problem.groups)
            t_new = Y_t - grad_t / L
            dz, dt = Z_new - Y_z, t_new - Y_t
            loss_new = loss_value(problem.loss, _predict(problem, Z_new, t_new), problem.Y)
            bound = loss_y + float(np.sum(grad_z * dz) + np.sum(grad_t * dt)) \
                + 0.5 * L * float(np.sum(dz ** 2) + np.sum(dt ** 2))
            if loss_new <= bound + 1e-12 * max(1.0, abs(loss_y)):
                break
            L *= 2.0
        else:
            raise NumericalError('Backtracking failed to find a step size.')
        F_new = loss_new + lam * float(np.sum(_group_norms(Z_new, problem.groups)))
        if not math.isfinite(F_new):
            raise NumericalError(f'Objective became {F_new} at iteration {iteration}.')

        if F_new > F:
            if theta == 1.0:
                stagnant += 1
            Y_z, Y_t, theta = Z, t, 1.0
        else:
            change = (F - F_new) / max(1.0, abs(F_new))
            theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta ** 2))
            momentum = (theta - 1.0) / theta_new
            Y_z = Z_new + momentum * (Z_new - Z)
            Y_t = t_new + momentum * (t_new - t)
            Z, t, F, theta = Z_new, t_new, F_new, theta_new
            stagnant = stagnant + 1 if change <= config.tol else 0

        if stagnant >= config.patience or iteration % config.refine_every == 0:
            Z_ref, t_ref = _refine(problem, Z, t, config)
            F_ref = _objective(problem, Z_ref, t_ref)
            if F_ref <= F + 1e-12 * max(1.0, abs(F)):
                Z, t, F = Z_ref, t_ref, F_ref
                Y_z, Y_t, theta = Z, t, 1.0
            if stagnant >= config.patience:
                if _converged(problem, _certificate(problem, Z, t), config):
                    solution = _solution(problem, Z, t, iteration, config, converged=True)
                    logger.info(f'Solver converged in {iteration} iterations, objective {solution.objective}, '
                                f'{solution.support.size} active features.')
                    return solution
                stagnant = 0

    solution = _solution(problem, Z, t, config.max_iter, config, converged=False)
    message = (f'Solver stopped at max_iter={config.max_iter} with dual residual {solution.dual_residual} '
               f'(tolerance {lam * config.dual_tol}).')
    if config.strict:
        raise NonConverged(message, solution=solution)
    logger.warning(message)
    return solution


@dataclass(frozen=True)
class InterpolationResult:
    solution: LassoSolution
    residual: float
    l1_norm: float
    lambdas: tuple[float, ...]


def solve_min_norm_interpolation(K: np.ndarray,
                                 y: np.ndarray,
                                 intercept: bool = False,
                                 config: SolverConfig | None = None,
                                 final_ratio: float = 1e-8,
                                 steps: int = 9) -> InterpolationResult:
    """ Minimum-l1 interpolant ``min |z|_1 s.t. K z + 1 t = y`` as the vanishing-lambda limit of the Lasso.

    Solves a decreasing geometric lambda path with warm starts; the residual of the last solve is reported.
    """
    config = replace(config or SolverConfig(), strict=False)
    base = LassoProblem(K, y, lam=1.0, penalty_scale=1.0, intercept=intercept)
    top = critical_lambda(base)
    if top == 0.0:
        solution = solve(base, config)
        return InterpolationResult(solution, 0.0, 0.0, (1.0,))
    lambdas = tuple(float(lam) for lam in np.geomspace(0.5 * top, final_ratio * top, steps))
    solution = None
    for lam in lambdas:
        problem = replace(base, lam=lam)
        solution = solve(problem, config,
                         z0=None if solution is None else solution.z,
                         t0=None if solution is None else solution.t)
    Z, T = _as_matrix(base, solution.z, solution.t)
    residual = float(np.abs(_predict(base, Z, T) - base.Y).max())
    l1_norm = float(np.sum(_group_norms(Z, None)))
    logger.info(f'Interpolation path ended at lambda={lambdas[-1]} with residual {residual} and l1 norm {l1_norm}.')
    return InterpolationResult(solution, residual, l1_norm, lambdas)


class ApproximationBounds(NamedTuple):
    lower: float
    upper: float


def approximation_bounds(p_hat: float, epsilon: float, reg_term: float, lam: float) -> ApproximationBounds:
    """ Interval for the non-convex optimum p* implied by a convex l2 value ``p_hat`` on eps-dispersed data:
    ``p_hat (1 - eps) <= p* <= p_hat`` and ``p* >= p_hat - eps / (1 - eps) * lam * reg_term``.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f'Dispersion epsilon should lie in [0, 1), got {epsilon}.')
    lower = max(p_hat * (1.0 - epsilon), p_hat - epsilon / (1.0 - epsilon) * lam * reg_term)
    return ApproximationBounds(lower=lower, upper=p_hat)


def problem_for(dictionary, y: np.ndarray, lam: float, loss: Loss = Loss.SQUARED,
                penalty_scale: float | None = None) -> LassoProblem:
    """ Lasso problem over a dictionary, with the intercept and penalty scale its construction calls for.

    Two-layer dictionaries use penalty 2*lambda (the balanced weight-decay cost of a unit neuron); three-layer
    dictionaries use lambda, the value that matches the cubic regularizer after balancing.
    """
    if penalty_scale is None:
        penalty_scale = 1.0 if dictionary.depth == 3 else 2.0
    return LassoProblem(dictionary.K, y, lam=lam, penalty_scale=penalty_scale, loss=loss,
                        intercept=dictionary.intercept)


def groups_from_labels(labels: Sequence[int]) -> tuple[tuple[int, ...], ...]:
    """ Column partition from a per-column group label. """
    groups: dict[int, list[int]] = {}
    for column, label in enumerate(labels):
        groups.setdefault(int(label), []).append(column)
    return tuple(tuple(columns) for _, columns in sorted(groups.items()))
