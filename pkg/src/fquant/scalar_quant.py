"""Optimal quadratic quantization of one-dimensional laws.

The standard normal quantizer is the unique stationary point of the
distortion (the density is log-concave), found here by a damped Newton
zero search on the gradient with closed-form cell integrals.  Cells are
midpoint intervals; the two outer cells extend to -inf / +inf.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr, ndtri

SQRT_2PI = np.sqrt(2.0 * np.pi)


class ConvergenceError(RuntimeError):
    """Raised when an iterative scheme stops before reaching its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class StdNormal:
    pass


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float


@dataclass(frozen=True, eq=False)
class ScalarQuantizer:
    """Sorted codewords of a 1-D law with their cell probabilities.

    ``distortion`` is the squared L2 quantization error.
    """

    points: np.ndarray
    weights: np.ndarray
    distortion: float
    law: StdNormal | Uniform = StdNormal()

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def boundaries(self) -> np.ndarray:
        """Cell endpoints, length M+1, outer ones at the support edges."""
        if isinstance(self.law, Uniform):
            lo, hi = self.law.a, self.law.b
        else:
            lo, hi = -np.inf, np.inf
        return np.concatenate(([lo], midpoints(self.points), [hi]))

    @property
    def error(self) -> float:
        return float(np.sqrt(self.distortion))

    def __eq__(self, other):
        if not isinstance(other, ScalarQuantizer):
            return NotImplemented
        return (
            self.law == other.law
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
            and self.distortion == other.distortion
        )


def midpoints(points: np.ndarray) -> np.ndarray:
    return 0.5 * (points[:-1] + points[1:])


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(np.isinf(x), 0.0, np.exp(-0.5 * x * x) / SQRT_2PI)


def gaussian_cell_moments(lo, hi):
    """Return ``(P(lo < Z < hi), E[Z; lo < Z < hi])`` for Z ~ N(0,1).

    Works elementwise on arrays; infinite endpoints are allowed.  The mass
    is evaluated on the tail side of zero to keep relative precision in
    far cells.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    right = lo >= 0.0
    left = hi <= 0.0
    mass = np.where(
        right,
        ndtr(-lo) - ndtr(-hi),
        np.where(left, ndtr(hi) - ndtr(lo), 1.0 - ndtr(lo) - ndtr(-hi)),
    )
    mean_part = normal_pdf(lo) - normal_pdf(hi)
    if mass.ndim == 0:
        return float(mass), float(mean_part)
    return mass, mean_part


def _cell_second_moment(lo, hi):
    """Return E[Z^2; lo < Z < hi] for Z ~ N(0,1)."""
    mass, _ = gaussian_cell_moments(lo, hi)
    with np.errstate(invalid="ignore"):
        lo_term = np.where(np.isinf(lo), 0.0, lo * normal_pdf(lo))
        hi_term = np.where(np.isinf(hi), 0.0, hi * normal_pdf(hi))
    return mass + lo_term - hi_term


def _normal_cells(points: np.ndarray):
    edges = np.concatenate(([-np.inf], midpoints(points), [np.inf]))
    return edges[:-1], edges[1:]


def normal_distortion(points: np.ndarray) -> float:
    """Closed-form quadratic distortion of a sorted grid for N(0,1)."""
    lo, hi = _normal_cells(points)
    mass, mean_part = gaussian_cell_moments(lo, hi)
    m2 = _cell_second_moment(lo, hi)
    return float(np.sum(m2 - 2.0 * points * mean_part + points * points * mass))


def normal_stationarity_residual(points: np.ndarray) -> np.ndarray:
    """Componentwise ``point_i - E[Z | Z in cell_i]``."""
    lo, hi = _normal_cells(points)
    mass, mean_part = gaussian_cell_moments(lo, hi)
    return points - mean_part / mass


def _symmetrize(x: np.ndarray) -> np.ndarray:
    x = 0.5 * (x - x[::-1])
    if len(x) % 2:
        x[len(x) // 2] = 0.0
    return x


def _newton_system(x: np.ndarray):
    """Half-gradient of the distortion and its tridiagonal Jacobian (banded)."""
    lo, hi = _normal_cells(x)
    mass, mean_part = gaussian_cell_moments(lo, hi)
    grad = x * mass - mean_part
    gaps = np.diff(x)
    phi_mid = normal_pdf(midpoints(x))
    coupling = -0.25 * phi_mid * gaps
    diag = mass.copy()
    diag[:-1] += coupling
    diag[1:] += coupling
    ab = np.zeros((3, len(x)))
    ab[0, 1:] = coupling
    ab[1] = diag
    ab[2, :-1] = coupling
    return grad, ab


def _from_points(points: np.ndarray) -> ScalarQuantizer:
    lo, hi = _normal_cells(points)
    mass, _ = gaussian_cell_moments(lo, hi)
    # mirror the masses exactly so that the weighted mean vanishes
    mass = 0.5 * (mass + mass[::-1])
    points.setflags(write=False)
    mass.setflags(write=False)
    return ScalarQuantizer(points, mass, normal_distortion(points), StdNormal())


def optimal_normal_quantizer(M: int, tol: float = 1e-12, max_iter: int = 200) -> ScalarQuantizer:
    """Unique stationary (hence optimal) M-quantizer of N(0,1).

    Newton-Raphson on the distortion gradient, seeded with the quantiles
    ``ndtri((2i-1)/(2M))``.  Stops when the sup-norm of the stationarity
    residual drops below ``tol``.
    """
    if M < 1 or int(M) != M:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = int(M)
    if M == 1:
        return _from_points(np.zeros(1))

    x = _symmetrize(ndtri((2.0 * np.arange(1, M + 1) - 1.0) / (2.0 * M)))
    res = np.max(np.abs(normal_stationarity_residual(x)))
    for it in range(1, max_iter + 1):
        if res < tol:
            break
        grad, ab = _newton_system(x)
        step = solve_banded((1, 1), ab, grad)
        t = 1.0
        while True:
            trial = _symmetrize(x - t * step)
            if np.all(np.diff(trial) > 0):
                trial_res = np.max(np.abs(normal_stationarity_residual(trial)))
                if trial_res < res or t < 1e-6:
                    break
            t *= 0.5
        x, res = trial, trial_res
    else:
        raise ConvergenceError(f"Newton search for M={M} did not converge", res, max_iter)
    if res >= tol:
        raise ConvergenceError(f"Newton search for M={M} did not converge", res, max_iter)
    return _from_points(x)


def lloyd_normal(init, tol: float = 1e-12, max_iter: int = 1_000_000) -> ScalarQuantizer:
    """Lloyd I fixed point ``x <- E[Z | cell(x)]`` for N(0,1) with exact cell moments."""
    x = np.sort(np.asarray(init, dtype=float))
    res = np.inf
    for it in range(max_iter):
        lo, hi = _normal_cells(x)
        mass, mean_part = gaussian_cell_moments(lo, hi)
        new = mean_part / mass
        res = np.max(np.abs(new - x))
        x = new
        if res < tol:
            break
    else:
        raise ConvergenceError("Lloyd fixed point did not converge", res, max_iter)
    x = np.array(x)
    lo, hi = _normal_cells(x)
    mass, _ = gaussian_cell_moments(lo, hi)
    return ScalarQuantizer(x, mass, normal_distortion(x), StdNormal())


def optimal_uniform_quantizer(a: float, b: float, M: int) -> ScalarQuantizer:
    """Closed-form optimal M-quantizer of U(a, b): the cell midpoints."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if M < 1 or int(M) != M:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    k = np.arange(1, M + 1)
    points = a + (2 * k - 1) * (b - a) / (2 * M)
    weights = np.full(M, 1.0 / M)
    return ScalarQuantizer(points, weights, (b - a) ** 2 / (12.0 * M * M), Uniform(float(a), float(b)))


@lru_cache(maxsize=None)
def _normal_quantizer_cached(M: int) -> ScalarQuantizer:
    return optimal_normal_quantizer(M)


def normal_quantizer_table(max_size: int = 64) -> dict[int, ScalarQuantizer]:
    """Optimal N(0,1) quantizers for M = 1..max_size (memoized)."""
    return {M: _normal_quantizer_cached(M) for M in range(1, max_size + 1)}


def normal_distortion_table(max_size: int = 64) -> np.ndarray:
    """Array ``e2`` with ``e2[M]`` the optimal squared error at size M (``e2[0]`` unused)."""
    table = normal_quantizer_table(max_size)
    e2 = np.full(max_size + 1, np.nan)
    for M, q in table.items():
        e2[M] = q.distortion
    return e2
