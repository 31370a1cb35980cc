"""Quantized diffusions driven by functional quantizers of Brownian motion.

Each codeword path ``w_i`` is a finite sine sum, so the pathwise equation

    dx_i = (b - 1/2 theta theta') dt + theta dw_i

is an ordinary ODE with an exactly known ``w_i'``.  The ODEs are solved by
fixed-step RK4 for all codewords at once; the resulting ensemble keeps the
weights of the driving quantizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson

from .kl_basis import FunctionalQuantizer, KLSystem, Process, QuantizedPathEnsemble


class DiffusionError(ArithmeticError):
    def __init__(self, message: str, codeword: int | None = None, time: float | None = None):
        super().__init__(message)
        self.codeword = codeword
        self.time = time


@dataclass(frozen=True)
class ScalarDiffusionSpec:
    """``dX = b(t, X) dt + theta(t, X) dW`` with ``theta_x`` the x-derivative of theta.

    All three callables must accept numpy arrays for x.
    """

    drift: Callable
    diffusion: Callable
    diffusion_derivative: Callable
    x0: float


def time_grid(T: float, n: int) -> np.ndarray:
    return np.linspace(0.0, T, n + 1)


def _check_driver(fq: FunctionalQuantizer):
    if fq.system.process is not Process.BROWNIAN_MOTION:
        raise ValueError("the driving quantizer must be a Brownian motion quantizer")


def _rk4(rhs, x0, T: float, n: int, wprime_half: np.ndarray, check=None):
    """Integrate ``x' = rhs(t, x, w'(t))`` on ``n`` steps.

    ``wprime_half`` holds ``w'`` on the half-step grid (N, 2n+1) so the
    midpoint stages use exact derivative values.
    """
    h = T / n
    N = wprime_half.shape[0]
    out = np.empty((N, n + 1))
    x = np.full(N, float(x0)) if np.ndim(x0) == 0 else np.asarray(x0, dtype=float).copy()
    out[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(n):
            t = s * h
            w0, wm, w1 = wprime_half[:, 2 * s], wprime_half[:, 2 * s + 1], wprime_half[:, 2 * s + 2]
            k1 = rhs(t, x, w0)
            k2 = rhs(t + h / 2, x + h / 2 * k1, wm)
            k3 = rhs(t + h / 2, x + h / 2 * k2, wm)
            k4 = rhs(t + h, x + h * k3, w1)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = ~np.isfinite(x)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DiffusionError(f"solver diverged on codeword {i} at t={t + h:.6g}", i, t + h)
            if check is not None:
                check(x, t + h)
            out[:, s + 1] = x
    return out


def quantize_scalar_diffusion(spec: ScalarDiffusionSpec, fq: FunctionalQuantizer, n: int) -> QuantizedPathEnsemble:
    """Quantized diffusion built from the codeword paths of ``fq`` with RK4 on n steps."""
    _check_driver(fq)
    if n < 8:
        raise ValueError("need at least 8 time steps")
    T = fq.system.T
    wp = fq.derivatives(time_grid(T, 2 * n))
    b, th, dth = spec.drift, spec.diffusion, spec.diffusion_derivative

    def rhs(t, x, w):
        sig = th(t, x)
        return b(t, x) - 0.5 * sig * dth(t, x) + sig * w

    paths = _rk4(rhs, spec.x0, T, n, wp)
    prov = {"source": "diffusion", "N": fq.size, "steps": n, "solver": "rk4", "driver_quant_error": fq.quant_error}
    return QuantizedPathEnsemble(time_grid(T, n), paths, fq.weights.copy(), prov)


def ou_closed_form(k: float, theta: float, x0: float, coeffs_row, T: float, tgrid) -> np.ndarray:
    """Exact solution of ``x' = -k x + theta w'`` for one codeword.

    ``coeffs_row`` holds the normalized (unit-variance) K-L coordinates of
    the driving Brownian codeword.
    """
    if not k > 0:
        raise ValueError("mean reversion k must be positive")
    chi = np.asarray(coeffs_row, dtype=float).reshape(-1)
    t = np.asarray(tgrid, dtype=float)
    om = KLSystem(Process.BROWNIAN_MOTION, T).frequency(np.arange(1, chi.size + 1))[:, None]
    ct = 1.0 / (om**2 + k**2)
    phi = math.sqrt(2.0 / T) * (om * np.sin(om * t) + k * (np.cos(om * t) - np.exp(-k * t)))
    return np.exp(-k * t) * x0 + theta * (chi[:, None] * ct * phi).sum(axis=0)


def heston_vol_quantizer(
    k: float,
    a: float,
    theta: float,
    v0: float,
    fq: FunctionalQuantizer,
    n: int = 32,
    y_max: float | None = None,
    y_floor: float = -1e-6,
) -> QuantizedPathEnsemble:
    """Quantized squared-volatility paths of the square-root diffusion.

    Solves ``y' = k(a - y - theta^2/(4k)) + theta sqrt(max(y, 0)) w'`` per
    codeword.  Paths leaving ``[y_floor, y_max]`` raise :class:`DiffusionError`.
    The running integral of y is stored in ``extras['ybar']``.
    """
    _check_driver(fq)
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    if theta != 0 and not theta**2 / (4 * a * k) < 1:
        raise ValueError("parameters violate theta^2 / (4 a k) < 1")
    if n < 2 or n % 2:
        raise ValueError("steps must be a positive even number")
    if y_max is None:
        y_max = 100.0 * max(v0, a) + 1.0
    T = fq.system.T
    wp = fq.derivatives(time_grid(T, 2 * n))
    mean = a - theta**2 / (4 * k)

    def rhs(t, y, w):
        return k * (mean - y) + theta * np.sqrt(np.maximum(y, 0.0)) * w

    def check(y, t):
        out = (y < y_floor) | (y > y_max)
        if out.any():
            i = int(np.flatnonzero(out)[0])
            raise DiffusionError(f"variance path {i} left the band [{y_floor}, {y_max}] at t={t:.6g} (y={y[i]:.6g})", i, t)

    tgrid = time_grid(T, n)
    y = _rk4(rhs, v0, T, n, wp, check)
    ybar = cumulative_simpson(y, x=tgrid, axis=1, initial=0.0)
    prov = {
        "source": "heston-vol",
        "N": fq.size,
        "steps": n,
        "solver": "rk4",
        "params": {"k": k, "a": a, "theta": theta, "v0": v0},
        "driver_quant_error": fq.quant_error,
    }
    return QuantizedPathEnsemble(tgrid, y, fq.weights.copy(), prov, {"ybar": ybar})


def quantized_stochastic_integral(g: Callable, ypath, coeffs_row, tgrid, system: KLSystem = KLSystem()) -> np.ndarray:
    """Running integral ``int_0^t g(y(s)) w'(s) ds`` with w given by its K-L coefficients."""
    tgrid = np.asarray(tgrid, dtype=float)
    row = np.asarray(coeffs_row, dtype=float)
    wprime = row @ system.basis_derivative(row.shape[-1], tgrid)
    integrand = np.asarray(g(np.asarray(ypath, dtype=float)), dtype=float) * wprime
    integrand = np.broadcast_to(integrand, np.broadcast_shapes(integrand.shape, tgrid.shape))
    return cumulative_simpson(integrand, x=tgrid, axis=-1, initial=0.0)


def basis_stochastic_integrals(gvalues, d: int, tgrid, system: KLSystem = KLSystem()) -> np.ndarray:
    """``A[j, l, t] = int_0^t g_j(s) e_{l+1}'(s) ds`` for sampled integrands ``g_j``.

    Any codeword integral follows by linearity: ``int g_j dw_i = coeffs[i] @ A[j]``.
    """
    gvalues = np.atleast_2d(np.asarray(gvalues, dtype=float))
    tgrid = np.asarray(tgrid, dtype=float)
    ed = system.basis_derivative(d, tgrid)
    return cumulative_simpson(gvalues[:, None, :] * ed[None, :, :], x=tgrid, axis=-1, initial=0.0)
