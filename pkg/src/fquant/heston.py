"""Asian call pricing in the Heston model by two-factor functional quantization.

The asset is written in terms of the variance path y_j (driven by a
quantizer of W2) and an independent Brownian factor w_i (quantizer of the
orthogonal component of W1):

    log s_ij(t) = log s0 + t (r - rho a k / theta) + (rho k / theta - 1/2) ybar_j(t)
                  + (rho / theta) (y_j(t) - v0) + sqrt(1 - rho^2) int_0^t sqrt(y_j) dw_i

Product cells carry weight w_i * w_j.  A Monte Carlo Euler scheme provides
the reference prices.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np

from .cubature import romberg_log_extrapolate, simpson_weights
from .diffusion import basis_stochastic_integrals, heston_vol_quantizer
from .kl_basis import FunctionalQuantizer
from .rng import RngStream

METHODS = ("FQ", "FQ_Romberg", "FQ_Interpolated", "MC")


@dataclass(frozen=True)
class HestonParams:
    s0: float
    r: float
    k: float
    a: float
    theta: float
    rho: float
    v0: float
    T: float = 1.0

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")
        if not self.v0 >= 0:
            raise ValueError("v0 must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.theta < 0 or self.k < 0 or self.a < 0:
            raise ValueError("k, a and theta must be non-negative")
        if self.theta > 0 and not self.theta**2 / (4 * self.a * self.k) < 1:
            raise ValueError("parameters violate theta^2 / (4 a k) < 1")

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def discount(self) -> float:
        return math.exp(-self.r * self.T)

    @property
    def average_factor(self) -> float:
        """``(1 - exp(-rT)) / (rT)``, with its limit 1 at r = 0."""
        x = self.r * self.T
        return -math.expm1(-x) / x if x != 0 else 1.0

    @property
    def forward_moneyness(self) -> float:
        """``s0 exp(rT) (1 - exp(-rT)) / (rT)``, the forward of the time average."""
        return self.s0 * math.exp(self.r * self.T) * self.average_factor


PRESETS = {
    "paper-2007": {
        "params": HestonParams(s0=100.0, r=0.05, k=2.0, a=0.01, theta=0.2, rho=0.5, v0=0.1, T=1.0),
        "strikes": [float(K) for K in range(99, 112)],
    },
    "paper-2007-figures": {
        "params": HestonParams(s0=50.0, r=0.05, k=2.0, a=0.01, theta=0.1, rho=0.5, v0=0.1, T=1.0),
        "strikes": [float(K) for K in range(44, 57)],
    },
}


def preset(name: str):
    """``(HestonParams, strikes)`` of a named preset."""
    try:
        p = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
    return p["params"], list(p["strikes"])


@dataclass(frozen=True, eq=False)
class PriceVector:
    strikes: np.ndarray
    prices: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "strikes", np.asarray(self.strikes, dtype=float))
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=float))


def _check_strikes(strikes) -> np.ndarray:
    K = np.asarray(strikes, dtype=float).reshape(-1)
    if K.size == 0 or not np.all(np.isfinite(K)) or np.any(K < 0):
        raise ValueError("strikes must be finite, non-negative and non-empty")
    return K


# ---------------------------------------------------------------- quantized asset


def _log_drift(params: HestonParams, tgrid, y, ybar):
    """Part of log(s_ij / s0) that depends on j only, shape (M, n+1)."""
    p = params
    c = p.rho / p.theta
    return tgrid * (p.r - c * p.a * p.k) + (c * p.k - 0.5) * ybar + c * (y - p.v0)


def _variance_ensemble(params: HestonParams, fq2: FunctionalQuantizer, n: int):
    if not params.theta > 0:
        raise ValueError("the quantized asset formula needs theta > 0")
    return heston_vol_quantizer(params.k, params.a, params.theta, params.v0, fq2, n)


def _check_horizon(params, fq1, fq2):
    for name, fq in (("fq1", fq1), ("fq2", fq2)):
        if not math.isclose(fq.system.T, params.T):
            raise ValueError(f"{name} has horizon {fq.system.T}, the option has {params.T}")


def quantized_asset_paths(params: HestonParams, fq1: FunctionalQuantizer, fq2: FunctionalQuantizer, n: int = 32):
    """Asset paths on all product cells.

    Returns ``(tgrid, S, weights)`` with S of shape (N, M, n+1) indexed by
    (W1-codeword i, W2-codeword j) and ``weights[i, j] = w_i w_j``.
    """
    _check_horizon(params, fq1, fq2)
    vol = _variance_ensemble(params, fq2, n)
    tgrid = vol.tgrid
    drift = _log_drift(params, tgrid, vol.paths, vol.extras["ybar"])
    A = basis_stochastic_integrals(np.sqrt(np.maximum(vol.paths, 0.0)), fq1.dim, tgrid, fq1.system)
    I = np.einsum("il,jlt->ijt", fq1.coeffs, A)
    S = params.s0 * np.exp(drift[None, :, :] + math.sqrt(1.0 - params.rho**2) * I)
    return tgrid, S, np.outer(fq1.weights, fq2.weights)


def cell_averages(params: HestonParams, fq1: FunctionalQuantizer, fq2: FunctionalQuantizer, n: int = 32, block_size: int = 1 << 21):
    """Simpson time averages ``(1/T) int_0^T s_ij(t) dt`` of shape (N, M), computed in blocks of W2 cells."""
    _check_horizon(params, fq1, fq2)
    vol = _variance_ensemble(params, fq2, n)
    tgrid = vol.tgrid
    nt = tgrid.size
    drift = _log_drift(params, tgrid, vol.paths, vol.extras["ybar"])
    A = basis_stochastic_integrals(np.sqrt(np.maximum(vol.paths, 0.0)), fq1.dim, tgrid, fq1.system)
    sw = simpson_weights(tgrid) / params.T
    beta = math.sqrt(1.0 - params.rho**2) * fq1.coeffs
    N, M, d = fq1.size, fq2.size, fq1.dim
    out = np.empty((N, M))
    step = max(1, block_size // (N * nt))
    for j0 in range(0, M, step):
        j1 = min(M, j0 + step)
        Ab = A[j0:j1].transpose(1, 0, 2).reshape(d, -1)
        expo = (beta @ Ab).reshape(N, j1 - j0, nt) + drift[None, j0:j1, :]
        out[:, j0:j1] = np.exp(expo) @ sw
    return params.s0 * out, vol


def fq_call_put(params: HestonParams, strikes, fq1: FunctionalQuantizer, fq2: FunctionalQuantizer, n: int = 32):
    """Crude quantized Asian call and put prices on the shared product cells."""
    K = _check_strikes(strikes)
    avg, _ = cell_averages(params, fq1, fq2, n)
    w1, w2 = fq1.weights, fq2.weights
    disc = params.discount
    calls = np.array([w1 @ np.maximum(avg - k, 0.0) @ w2 for k in K]) * disc
    puts = np.array([w1 @ np.maximum(k - avg, 0.0) @ w2 for k in K]) * disc
    return calls, puts, float(w1 @ avg @ w2)


def price_asian_fq(params: HestonParams, strikes, fq1: FunctionalQuantizer, fq2: FunctionalQuantizer, n: int = 32) -> PriceVector:
    """``e^{-rT} sum_ij w_i w_j (average of s_ij - K)^+`` for every strike."""
    t0 = time.perf_counter()
    calls, puts, mean = fq_call_put(params, strikes, fq1, fq2, n)
    diag = {"N": fq1.size, "M": fq2.size, "n": n, "puts": puts, "fq_mean_average": mean, "runtime": time.perf_counter() - t0}
    return PriceVector(strikes, calls, "FQ", diag)


def _abscissa(fq1: FunctionalQuantizer, fq2: FunctionalQuantizer, mode: str) -> float:
    """Extrapolation abscissa of a two-factor budget.

    ``logN``: the leading bias is taken proportional to
    ``1/log N + 1/log M``; ``inv_sq_error``: proportional to ``e_N^2 + e_M^2``.
    Returned as the equivalent single-factor N (so ``log`` of it is the abscissa)
    or as the equivalent error.
    """
    if mode == "logN":
        logs = [math.log(fq.size) for fq in (fq1, fq2)]
        if min(logs) <= 0:
            raise ValueError("log-Romberg needs quantizer sizes >= 2")
        return math.exp(1.0 / (1.0 / logs[0] + 1.0 / logs[1]))
    return math.sqrt(fq1.quant_error**2 + fq2.quant_error**2)


def default_anchors(params: HestonParams, strikes) -> tuple[float, float]:
    """Smallest strike interval symmetric about the forward moneyness that contains all strikes.

    When the strikes are themselves centred on the forward this is just
    ``(min K, max K)``.
    """
    K = _check_strikes(strikes)
    F = params.forward_moneyness
    h = max(F - float(K.min()), float(K.max()) - F)
    if h <= 0:
        h = max(1e-8 * F, 1e-12)
    return F - h, F + h


def price_asian_interpolated(
    params: HestonParams,
    strikes,
    budgets,
    n: int = 32,
    anchors=None,
    weights_mode: str = "logN",
) -> PriceVector:
    """K-interpolated log-Romberg price from two budgets ``[(fq1, fq2), (fq1', fq2')]``.

    At the upper anchor the extrapolated call is used, at the lower anchor
    the extrapolated put converted by Asian call-put parity, and linear
    interpolation in K in between.  Anchors default to
    :func:`default_anchors`.
    """
    K = _check_strikes(strikes)
    kmin, kmax = default_anchors(params, K) if anchors is None else (float(anchors[0]), float(anchors[1]))
    if not kmin < kmax:
        raise ValueError("anchor strikes must satisfy K_min < K_max")
    if K.min() < kmin - 1e-12 or K.max() > kmax + 1e-12:
        raise ValueError(f"strikes must lie in the anchor interval [{kmin}, {kmax}]")
    if len(budgets) != 2:
        raise ValueError("need exactly two budgets")
    t0 = time.perf_counter()
    crude = [fq_call_put(params, K, f1, f2, n) for f1, f2 in budgets]
    runtime = time.perf_counter() - t0
    if weights_mode == "logN":
        xs = [_abscissa(f1, f2, "logN") for f1, f2 in budgets]
        extra = {}
    elif weights_mode == "inv_sq_error":
        xs = [f1.size * f2.size for f1, f2 in budgets]
        extra = {"quant_errors": [_abscissa(f1, f2, "inv_sq_error") for f1, f2 in budgets]}
    else:
        raise ValueError(f"unknown weights_mode {weights_mode!r}")
    call_r = romberg_log_extrapolate([(xs[0], crude[0][0]), (xs[1], crude[1][0])], weights_mode, **extra)
    put_r = romberg_log_extrapolate([(xs[0], crude[0][1]), (xs[1], crude[1][1])], weights_mode, **extra)
    parity = put_r + params.s0 * params.average_factor - K * params.discount
    lam = (K - kmin) / (kmax - kmin)
    prices = lam * call_r + (1.0 - lam) * parity
    diag = {
        "budgets": [(f1.size, f2.size) for f1, f2 in budgets],
        "n": n,
        "anchors": (kmin, kmax),
        "weights_mode": weights_mode,
        "crude_calls": [c[0] for c in crude],
        "crude_puts": [c[1] for c in crude],
        "romberg_calls": call_r,
        "romberg_puts": put_r,
        "parity_calls": parity,
        "runtime": runtime,
    }
    return PriceVector(K, prices, "FQ_Interpolated", diag)


def romberg_calls(pv: PriceVector) -> PriceVector:
    """The extrapolated (non-interpolated) call vector carried by an interpolated result."""
    return replace(pv, prices=pv.diagnostics["romberg_calls"], method="FQ_Romberg")


# ---------------------------------------------------------------- Monte Carlo


@numba.njit(cache=True, parallel=True)
def _euler_averages(z1, z2, s0, r, k, a, theta, rho, v0, T, out):
    """Time averages of S for a block of paths under the fine and the coupled coarse Euler scheme.

    ``z1, z2`` have shape (paths, n_fine); ``out[p, s, c]`` holds the
    average for sign s (antithetic pair) and scheme c (0 fine, 1 coarse).
    The average integrates the piecewise log-linear interpolation of S.
    """
    npth, nf = z1.shape
    rb = math.sqrt(1.0 - rho * rho)
    for p in numba.prange(npth):
        for s in range(2):
            sg = 1.0 if s == 0 else -1.0
            for c in range(2):
                m = nf if c == 0 else nf // 2
                h = T / m
                sh = math.sqrt(h)
                v = v0
                S = s0
                acc = 0.0
                for q in range(m):
                    if c == 0:
                        g1 = sg * z1[p, q]
                        g2 = sg * z2[p, q]
                    else:
                        g1 = sg * (z1[p, 2 * q] + z1[p, 2 * q + 1]) * 0.7071067811865476
                        g2 = sg * (z2[p, 2 * q] + z2[p, 2 * q + 1]) * 0.7071067811865476
                    vp = v if v > 0.0 else 0.0
                    sv = math.sqrt(vp)
                    dx = (r - 0.5 * vp) * h + sv * sh * (rho * g2 + rb * g1)
                    v = v + k * (a - vp) * h + theta * sv * sh * g2
                    em = math.expm1(dx)
                    if abs(dx) > 1e-12:
                        acc += S * em / dx
                    else:
                        acc += S * (1.0 + 0.5 * dx)
                    S = S + S * em
                out[p, s, c] = acc * h / T


def mc_reference(
    params: HestonParams,
    strikes,
    paths: int = 1_000_000,
    n_euler: int = 128,
    rng: RngStream | None = None,
    block: int = 1 << 13,
) -> PriceVector:
    """Monte Carlo Asian call prices with antithetic variates and time-Romberg.

    Each base path is simulated with ``2 n_euler`` Euler steps and, with the
    pairwise-summed increments, with ``n_euler`` steps; the estimator is
    ``2 P(2n) - P(n)`` averaged over the antithetic pair.  ``paths`` counts
    simulated paths including antithetic copies.  Block b draws from
    ``rng.advance(b)``, so results do not depend on the thread count.
    """
    K = _check_strikes(strikes)
    rng = rng or RngStream(0)
    if n_euler < 1:
        raise ValueError("n_euler must be >= 1")
    base = max(1, paths // 2)
    nf = 2 * n_euler
    p = params
    t0 = time.perf_counter()
    sums = np.zeros((3, K.size))  # romberg, fine, coarse
    sq = np.zeros(K.size)
    done = 0
    b = 0
    while done < base:
        nb = min(block, base - done)
        z = rng.advance(b).generator().standard_normal((2, nb, nf))
        out = np.empty((nb, 2, 2))
        _euler_averages(z[0], z[1], p.s0, p.r, p.k, p.a, p.theta, p.rho, p.v0, p.T, out)
        pay = np.maximum(out[:, :, :, None] - K, 0.0)  # (nb, sign, scheme, K)
        fine = pay[:, :, 0].mean(axis=1)
        coarse = pay[:, :, 1].mean(axis=1)
        rom = 2.0 * fine - coarse
        sums[0] += rom.sum(axis=0)
        sums[1] += fine.sum(axis=0)
        sums[2] += coarse.sum(axis=0)
        sq += (rom * rom).sum(axis=0)
        done += nb
        b += 1
    disc = p.discount
    mean = sums / base
    var = np.maximum(sq / base - mean[0] ** 2, 0.0)
    se = disc * np.sqrt(var / max(base - 1, 1))
    diag = {
        "paths": 2 * base,
        "n_euler": n_euler,
        "se": se,
        "fine": disc * mean[1],
        "coarse": disc * mean[2],
        "seed": rng.seed,
        "runtime": time.perf_counter() - t0,
    }
    return PriceVector(K, disc * mean[0], "MC", diag)
