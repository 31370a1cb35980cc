"""Karhunen-Loeve eigensystems and functional quantizers built on them.

A functional quantizer is a set of N paths ``x_i(t) = sum_l coeffs[i, l] e_l(t)``
with coefficients in K-L coordinates (variance ``lambda_l`` per axis), their
weights, and the full L2([0, T]) quantization error including the
eigenvalue tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import gamma

from .rng import RngStream
from .scalar_quant import ScalarQuantizer, normal_distortion_table, normal_quantizer_table
from .vq_core import CovNorm, OptSchedule, optimize_pipeline


class Process(str, Enum):
    BROWNIAN_MOTION = "bm"
    BROWNIAN_BRIDGE = "bridge"


@dataclass(frozen=True)
class KLSystem:
    process: Process = Process.BROWNIAN_MOTION
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "process", Process(self.process))
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    def _shift(self) -> float:
        return 0.5 if self.process is Process.BROWNIAN_MOTION else 0.0

    def frequency(self, n):
        """Angular frequency ``pi (n - 1/2) / T`` (BM) or ``pi n / T`` (bridge)."""
        n = np.asarray(n, dtype=float)
        if np.any(n < 1):
            raise ValueError("eigen index starts at 1")
        return np.pi * (n - self._shift()) / self.T

    def eigenvalue(self, n):
        return 1.0 / self.frequency(n) ** 2

    def eigenvalues(self, d: int) -> np.ndarray:
        return self.eigenvalue(np.arange(1, d + 1))

    def eigenfunction(self, n, t):
        return math.sqrt(2.0 / self.T) * np.sin(self.frequency(n) * np.asarray(t, dtype=float))

    def eigenfunction_derivative(self, n, t):
        w = self.frequency(n)
        return math.sqrt(2.0 / self.T) * w * np.cos(w * np.asarray(t, dtype=float))

    def basis(self, d: int, t) -> np.ndarray:
        """Matrix ``E[l, k] = e_{l+1}(t_k)`` of shape (d, len(t))."""
        n = np.arange(1, d + 1)[:, None]
        return self.eigenfunction(n, np.asarray(t, dtype=float)[None, :])

    def basis_derivative(self, d: int, t) -> np.ndarray:
        n = np.arange(1, d + 1)[:, None]
        return self.eigenfunction_derivative(n, np.asarray(t, dtype=float)[None, :])

    @property
    def total_variance(self) -> float:
        """``sum_n lambda_n = E int_0^T X_t^2 dt``."""
        if self.process is Process.BROWNIAN_MOTION:
            return self.T**2 / 2.0
        return self.T**2 / 6.0


def eigen(system: KLSystem, n: int):
    """Eigenvalue and eigenfunction (as a callable of t) of index n >= 1."""
    if n < 1:
        raise ValueError("eigen index starts at 1")
    return float(system.eigenvalue(n)), (lambda t: system.eigenfunction(n, t))


def eigen_tail(system: KLSystem, d: int) -> float:
    """``sum_{n > d} lambda_n`` from the closed-form total."""
    if d < 0:
        raise ValueError("d must be >= 0")
    head = float(np.sum(system.eigenvalues(d))) if d else 0.0
    return system.total_variance - head


def dimension_rule(N: int) -> int:
    """Working dimension ``d(N) = max(1, floor(log N))``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return max(1, int(math.floor(math.log(N))))


def fbm_rate_constant(H: float) -> float:
    """Sharp-rate constant c(H) of fractional Brownian motion with Hurst index H."""
    if not 0.0 < H < 1.0:
        raise ValueError("H must lie in (0, 1)")
    first = math.sqrt(gamma(2 * H) * math.sin(math.pi * H) * (1 + 2 * H) / math.pi)
    return first * ((1 + 2 * H) / (2 * math.pi)) ** H


@dataclass(frozen=True, eq=False)
class QuantizedPathEnsemble:
    """N weighted paths sampled on a time grid.

    ``extras`` holds companion arrays sharing the (N, len(tgrid)) layout,
    e.g. running integrals of the paths.
    """

    tgrid: np.ndarray
    paths: np.ndarray
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.paths.shape[0]

    def __eq__(self, other):
        if not isinstance(other, QuantizedPathEnsemble):
            return NotImplemented
        return (
            np.array_equal(self.tgrid, other.tgrid)
            and np.array_equal(self.paths, other.paths)
            and np.array_equal(self.weights, other.weights)
            and self.provenance == other.provenance
            and self.extras.keys() == other.extras.keys()
            and all(np.array_equal(self.extras[k], other.extras[k]) for k in self.extras)
        )


@dataclass(frozen=True, eq=False)
class FunctionalQuantizer:
    system: KLSystem
    coeffs: np.ndarray
    weights: np.ndarray
    quant_error: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.array(self.coeffs, dtype=float, ndmin=2))
        object.__setattr__(self, "weights", np.array(self.weights, dtype=float).reshape(-1))
        object.__setattr__(self, "quant_error", float(self.quant_error))
        if self.weights.size != self.coeffs.shape[0]:
            raise ValueError("one weight per path required")

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    def normalized_coords(self) -> np.ndarray:
        """Coefficients divided by ``sqrt(lambda_l)`` (unit-variance axes)."""
        return self.coeffs / np.sqrt(self.system.eigenvalues(self.dim))

    def paths(self, tgrid) -> np.ndarray:
        return self.coeffs @ self.system.basis(self.dim, tgrid)

    def derivatives(self, tgrid) -> np.ndarray:
        """Exact time derivatives of the paths (sine sums differentiate termwise)."""
        return self.coeffs @ self.system.basis_derivative(self.dim, tgrid)

    def __eq__(self, other):
        if not isinstance(other, FunctionalQuantizer):
            return NotImplemented
        return (
            self.system == other.system
            and np.array_equal(self.coeffs, other.coeffs)
            and np.array_equal(self.weights, other.weights)
            and self.quant_error == other.quant_error
            and self.meta == other.meta
        )


@dataclass(frozen=True)
class ProductAllocation:
    sizes: tuple[int, ...]
    N_rec: int
    quant_error: float

    @property
    def label(self) -> str:
        return "-".join(str(s) for s in self.sizes) if self.sizes else "1"


def synthesize_paths(fq: FunctionalQuantizer, tgrid) -> QuantizedPathEnsemble:
    tgrid = np.asarray(tgrid, dtype=float)
    if tgrid.size and (tgrid.min() < 0 or tgrid.max() > fq.system.T * (1 + 1e-12)):
        raise ValueError("time grid must lie in [0, T]")
    prov = {"source": "functional", "process": fq.system.process.value, "T": fq.system.T, "N": fq.size, "d": fq.dim}
    return QuantizedPathEnsemble(tgrid, fq.paths(tgrid), fq.weights.copy(), prov)


# ---------------------------------------------------------------- optimal


def build_optimal_fq(N: int, system: KLSystem = KLSystem(), schedule: OptSchedule | None = None, rng: RngStream | None = None) -> FunctionalQuantizer:
    """Optimized functional N-quantizer in dimension d(N)."""
    schedule = schedule or OptSchedule()
    rng = rng or RngStream(0)
    d = dimension_rule(N)
    cb = optimize_pipeline(N, CovNorm(system.eigenvalues(d)), schedule, rng)
    tail = eigen_tail(system, d)
    meta = {
        "mode": "optimal",
        "finite_distortion": cb.distortion,
        "tail": tail,
        **{k: v for k, v in cb.meta.items() if k != "level"},
    }
    return FunctionalQuantizer(system, cb.scaled(), cb.weights, math.sqrt(cb.distortion + tail), meta)


# ---------------------------------------------------------------- product


def product_error(sizes, system: KLSystem = KLSystem(), scalar_errors=None) -> float:
    """Squared L2 error ``sum_n lambda_n (e2[N_n] - 1) + sum_n lambda_n`` of a product quantizer."""
    sizes = tuple(int(s) for s in sizes)
    if scalar_errors is None:
        scalar_errors = normal_distortion_table(max(sizes, default=1))
    if not sizes:
        return system.total_variance
    lam = system.eigenvalues(len(sizes))
    e2 = np.asarray(scalar_errors)[list(sizes)]
    return float(np.sum(lam * (e2 - 1.0)) + system.total_variance)


def optimal_allocation(
    N_budget: int,
    system: KLSystem = KLSystem(),
    scalar_errors=None,
    max_size: int = 64,
    max_length: int = 12,
) -> ProductAllocation:
    """Optimal integral bit allocation by exhaustive depth-first search.

    Searches non-increasing size tuples with entries in [2, max_size],
    product <= N_budget and length <= max_length.  A branch is cut when
    even the most favourable completion (every remaining slot at the current
    cap) cannot beat the incumbent.
    """
    if N_budget < 1:
        raise ValueError("budget must be >= 1")
    if scalar_errors is None:
        scalar_errors = normal_distortion_table(max_size)
    gain = 1.0 - np.asarray(scalar_errors, dtype=float)  # gain[M] = 1 - e2[M]
    lam = system.eigenvalues(max_length)
    best = {"gain": 0.0, "sizes": ()}

    def search(pos, cap, budget, acc, sizes):
        if acc > best["gain"]:
            best["gain"], best["sizes"] = acc, sizes
        if pos >= max_length:
            return
        top = min(cap, budget, max_size)
        if top < 2:
            return
        slots = min(max_length - pos, int(math.log2(budget)))
        bound = acc + gain[top] * lam[pos : pos + slots].sum()
        if bound <= best["gain"]:
            return
        for M in range(top, 1, -1):
            search(pos + 1, M, budget // M, acc + lam[pos] * gain[M], sizes + (M,))

    search(0, max_size, int(N_budget), 0.0, ())
    sizes = best["sizes"]
    n_rec = int(np.prod(sizes)) if sizes else 1
    return ProductAllocation(sizes, n_rec, math.sqrt(product_error(sizes, system, scalar_errors)))


def build_product_fq(
    alloc: ProductAllocation | tuple,
    system: KLSystem = KLSystem(),
    scalar_quantizers: dict[int, ScalarQuantizer] | None = None,
) -> FunctionalQuantizer:
    """Product quantizer over the K-L coordinates with sizes ``alloc.sizes``.

    Rows enumerate the multi-index grid with the first axis varying slowest;
    weights are products of the scalar cell weights.
    """
    sizes = tuple(alloc.sizes if isinstance(alloc, ProductAllocation) else alloc)
    sizes = tuple(s for s in sizes if s > 1) or ()
    if scalar_quantizers is None:
        scalar_quantizers = normal_quantizer_table(max(sizes, default=1))
    if not sizes:
        fq_err = math.sqrt(system.total_variance)
        return FunctionalQuantizer(system, np.zeros((1, 1)), np.ones(1), fq_err, {"mode": "product", "allocation": []})
    axes = [scalar_quantizers[M] for M in sizes]
    lam = system.eigenvalues(len(sizes))
    grids = np.meshgrid(*[np.arange(M) for M in sizes], indexing="ij")
    idx = [g.reshape(-1) for g in grids]
    coeffs = np.column_stack([math.sqrt(lam[n]) * axes[n].points[idx[n]] for n in range(len(sizes))])
    weights = np.prod(np.column_stack([axes[n].weights[idx[n]] for n in range(len(sizes))]), axis=1)
    e2 = np.full(max(sizes) + 1, np.nan)
    for M in set(sizes):
        e2[M] = scalar_quantizers[M].distortion
    err = math.sqrt(product_error(sizes, system, e2))
    return FunctionalQuantizer(system, coeffs, weights, err, {"mode": "product", "allocation": list(sizes)})


def enumerate_allocations(N_budget: int, max_size: int = 64, max_length: int = 12):
    """All non-increasing tuples of sizes in [2, max_size] with product <= N_budget."""
    out = [()]

    def rec(prefix, cap, budget):
        for M in range(2, min(cap, budget, max_size) + 1):
            t = prefix + (M,)
            out.append(t)
            if len(t) < max_length:
                rec(t, M, budget // M)

    rec((), max_size, N_budget)
    return out


def allocation_table(N_max: int, system: KLSystem = KLSystem(), scalar_errors=None, max_size: int = 64, max_length: int = 12):
    """Breakpoints of the optimal allocation for every budget 1..N_max.

    Returns a list of ``(N, ProductAllocation)`` where the allocation is
    optimal for every budget from N up to the next breakpoint.
    """
    if scalar_errors is None:
        scalar_errors = normal_distortion_table(max_size)
    allocs = enumerate_allocations(N_max, max_size, max_length)
    prods = np.array([int(np.prod(a)) if a else 1 for a in allocs])
    errs = np.array([product_error(a, system, scalar_errors) for a in allocs])
    order = np.lexsort((errs, prods))
    rows = []
    best_err = np.inf
    for k in order:
        if errs[k] < best_err - 1e-15:
            best_err = errs[k]
            a = allocs[k]
            rows.append((int(prods[k]), ProductAllocation(a, int(prods[k]), math.sqrt(errs[k]))))
    return rows
