"""Quantized cubature, quantized conditional expectation and log-Romberg extrapolation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .kl_basis import FunctionalQuantizer, QuantizedPathEnsemble, synthesize_paths

DEFAULT_GRID = 256


class CubatureError(ValueError):
    def __init__(self, index: int, value):
        super().__init__(f"functional is not finite on path {index} (value {value!r})")
        self.index = index


def uniform_grid(T: float, n: int = DEFAULT_GRID) -> np.ndarray:
    return np.linspace(0.0, T, n + 1)


def simpson_weights(tgrid) -> np.ndarray:
    """Quadrature weights reproducing ``scipy.integrate.simpson`` on this grid."""
    tgrid = np.asarray(tgrid, dtype=float)
    return simpson(np.eye(tgrid.size), x=tgrid, axis=1)


@dataclass(frozen=True)
class Functional:
    """A path functional evaluated on discretized paths.

    ``evaluator(tgrid, values)`` receives values of shape (..., len(tgrid))
    and returns shape (...).  Set ``vectorized=False`` for evaluators that
    only accept a single path.  ``lipschitz_bound`` is w.r.t. the L2([0, T])
    norm; ``dlipschitz_bound`` bounds the Lipschitz constant of the
    differential.
    """

    evaluator: Callable
    lipschitz_bound: float | None = None
    dlipschitz_bound: float | None = None
    name: str = "custom"
    vectorized: bool = True

    def __call__(self, tgrid, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.vectorized:
            return np.asarray(self.evaluator(tgrid, values), dtype=float)
        flat = values.reshape(-1, values.shape[-1])
        out = np.array([float(self.evaluator(tgrid, row)) for row in flat])
        return out.reshape(values.shape[:-1])


@dataclass(frozen=True)
class CubatureResult:
    value: float
    error_bound: float | None = None


def integral_functional(T: float = 1.0) -> Functional:
    return Functional(lambda t, x: simpson(x, x=t, axis=-1), lipschitz_bound=math.sqrt(T), dlipschitz_bound=0.0, name="integral")


def squared_integral_functional() -> Functional:
    return Functional(lambda t, x: simpson(x * x, x=t, axis=-1), name="squared-integral")


def sup_functional() -> Functional:
    return Functional(lambda t, x: np.max(x, axis=-1), name="sup")


def asian_bs_functional(s0: float = 100.0, sigma: float = 0.2, r: float = 0.05, K: float = 100.0, T: float = 1.0) -> Functional:
    """Discounted Black-Scholes Asian call payoff as a functional of the Brownian path."""

    def payoff(t, w):
        s = s0 * np.exp(sigma * w + (r - 0.5 * sigma**2) * t)
        return math.exp(-r * T) * np.maximum(simpson(s, x=t, axis=-1) / T - K, 0.0)

    return Functional(payoff, name="asian-bs")


BUILTINS = {
    "integral": integral_functional,
    "squared-integral": squared_integral_functional,
    "sup": sup_functional,
    "asian-bs": asian_bs_functional,
}


def _as_ensemble(source, n_grid: int):
    if isinstance(source, FunctionalQuantizer):
        return synthesize_paths(source, uniform_grid(source.system.T, n_grid)), source.quant_error
    if isinstance(source, QuantizedPathEnsemble):
        return source, source.provenance.get("quant_error")
    raise TypeError(f"expected a FunctionalQuantizer or QuantizedPathEnsemble, got {type(source).__name__}")


def _check_finite(values):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise CubatureError(int(bad[0]), values.reshape(-1)[bad[0]])


def cubature(source, F: Functional, n_grid: int = DEFAULT_GRID, stationary: bool = False) -> CubatureResult:
    """``sum_i w_i F(x_i)`` with the available a priori error bound.

    With a Lipschitz bound the error bound is ``[F]_Lip * e``; when the
    quantizer is declared stationary and the differential bound is known,
    ``[DF]_Lip * e^2`` is used if smaller.
    """
    ens, qerr = _as_ensemble(source, n_grid)
    if not math.isclose(float(np.sum(ens.weights)), 1.0, abs_tol=1e-9):
        raise ValueError("weights are not normalized")
    values = F(ens.tgrid, ens.paths)
    _check_finite(values)
    value = float(ens.weights @ values)
    bounds = []
    if qerr is not None:
        if F.lipschitz_bound is not None:
            bounds.append(F.lipschitz_bound * qerr)
        if stationary and F.dlipschitz_bound is not None:
            bounds.append(F.dlipschitz_bound * qerr**2)
    return CubatureResult(value, min(bounds) if bounds else None)


@dataclass(frozen=True)
class ConditionalResult:
    values: np.ndarray  # one entry per Y-cell, nan where undefined
    masses: np.ndarray
    undefined: np.ndarray  # boolean mask of zero-mass Y-cells

    def expectation(self) -> float:
        ok = ~self.undefined
        return float(self.masses[ok] @ self.values[ok])


def conditional_from_values(values, x_weights, y_weights=None, joint_weights=None) -> ConditionalResult:
    """Per Y-cell ``sum_i v_ij w_ij / w_.j`` from a value matrix ``v`` of shape (N, M).

    Without ``joint_weights`` the cells are taken independent,
    ``w_ij = x_weights[i] * y_weights[j]``.
    """
    values = np.asarray(values, dtype=float)
    if joint_weights is None:
        if y_weights is None:
            raise ValueError("need y_weights or joint_weights")
        joint = np.outer(x_weights, y_weights)
    else:
        joint = np.asarray(joint_weights, dtype=float)
    if joint.shape != values.shape:
        raise ValueError("value and weight matrices differ in shape")
    mass = joint.sum(axis=0)
    undefined = mass <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(undefined, np.nan, (joint * values).sum(axis=0) / np.where(undefined, 1.0, mass))
    return ConditionalResult(cond, mass, undefined)


def conditional_cubature(X, Y, F: Callable, joint_weights=None, n_grid: int = DEFAULT_GRID) -> ConditionalResult:
    """Quantized ``E(F(X, Y) | Y)`` on the cells of Y.

    ``F(tgrid, x_paths, y_path)`` evaluates all X paths against one Y
    path and returns one value per X path.
    """
    ex, _ = _as_ensemble(X, n_grid)
    ey, _ = _as_ensemble(Y, n_grid)
    if not np.array_equal(ex.tgrid, ey.tgrid):
        raise ValueError("X and Y must share a time grid")
    values = np.column_stack([np.asarray(F(ex.tgrid, ex.paths, ey.paths[j]), dtype=float) for j in range(ey.size)])
    _check_finite(values)
    return conditional_from_values(values, ex.weights, ey.weights, joint_weights)


def romberg_log_extrapolate(values, weights_mode: str = "logN", quant_errors=None):
    """Two-point extrapolation in 1/log N.

    ``values`` is a pair ``[(N, V), (N', V')]``; V may be an array (e.g. one
    entry per strike).  In ``inv_sq_error`` mode log N is replaced by
    ``1 / e^2`` with ``quant_errors`` the matching quantization errors.
    The result is exact for inputs of the form ``a + c / x``.
    """
    if len(values) != 2:
        raise ValueError("log-Romberg extrapolation takes exactly two entries")
    (n1, v1), (n2, v2) = values
    if weights_mode == "logN":
        x1, x2 = math.log(n1), math.log(n2)
    elif weights_mode == "inv_sq_error":
        if quant_errors is None or len(quant_errors) != 2:
            raise ValueError("inv_sq_error mode needs the two quantization errors")
        x1, x2 = 1.0 / quant_errors[0] ** 2, 1.0 / quant_errors[1] ** 2
    else:
        raise ValueError(f"unknown weights_mode {weights_mode!r}")
    if x1 == x2:
        raise ValueError("extrapolation abscissae coincide")
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    # (x2 v2 - x1 v1) / (x2 - x1), written as a correction so equal inputs are returned unchanged
    out = v2 + x1 * (v2 - v1) / (x2 - x1)
    return float(out) if out.ndim == 0 else out
