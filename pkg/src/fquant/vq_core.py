"""Codebook optimization for N(0, I_d) under a diagonal covariance norm.

Codewords are stored in normalized coordinates ``z`` (the law to quantize
is N(0, I_d)) and distances are ``sum_k lambda_k (z_k - x_k)^2``,
accumulated in increasing k by every kernel.

Nearest-neighbour search is an exact scan over codewords ordered by their
first coordinate: a candidate is skipped once its first-coordinate term
alone exceeds the best distance, and a distance accumulation stops as
soon as it exceeds the best.  Both are exact, so results coincide with a
plain linear scan (ties go to the smallest index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .rng import RngStream
from .scalar_quant import gaussian_cell_moments, normal_distortion

CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class CovNorm:
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).reshape(-1)
        if lam.size == 0:
            raise ValueError("CovNorm needs at least one eigenvalue")
        if np.any(lam <= 0):
            raise ValueError("eigenvalue weights must be positive")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalue weights must be non-increasing")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def dim(self) -> int:
        return self.lambdas.size

    @property
    def scale(self) -> np.ndarray:
        return np.sqrt(self.lambdas)

    @property
    def total(self) -> float:
        return float(self.lambdas.sum())

    def sqnorm(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return (z * z) @ self.lambdas

    def __eq__(self, other):
        return isinstance(other, CovNorm) and np.array_equal(self.lambdas, other.lambdas)


@dataclass(frozen=True, eq=False)
class Codebook:
    points: np.ndarray
    weights: np.ndarray
    distortion: float
    norm: CovNorm
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        if pts.shape[1] != self.norm.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, norm has {self.norm.dim}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != pts.shape[0]:
            raise ValueError("one weight per codeword required")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "distortion", float(self.distortion))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def scaled(self) -> np.ndarray:
        """Codewords in K-L coordinates ``sqrt(lambda) * z``."""
        return self.points * self.norm.scale

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (
            self.norm == other.norm
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
            and self.distortion == other.distortion
            and self.meta == other.meta
        )


def origin_codebook(norm: CovNorm) -> Codebook:
    """The optimal 1-quantizer: the mean, with distortion the total variance."""
    return Codebook(np.zeros((1, norm.dim)), np.ones(1), norm.total, norm, {"level": 1})


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _dist(z, C, i, lam, best):
    """``sum_k lam_k (z_k - C_ik)^2``, abandoned (returning a value > best) once it exceeds best."""
    acc = 0.0
    for k in range(C.shape[1]):
        t = z[k] - C[i, k]
        acc += lam[k] * (t * t)
        if acc > best:
            break
    return acc


@njit(cache=True)
def _scan(z, C, lam, order, key, lo_start, best, bi):
    N = C.shape[0]
    j = lo_start
    while j < N:
        g = key[j] - z[0]
        if lam[0] * (g * g) > best:
            break
        i = order[j]
        acc = _dist(z, C, i, lam, best)
        if acc < best or (acc == best and i < bi):
            best = acc
            bi = i
        j += 1
    j = lo_start - 1
    while j >= 0:
        g = z[0] - key[j]
        if lam[0] * (g * g) > best:
            break
        i = order[j]
        acc = _dist(z, C, i, lam, best)
        if acc < best or (acc == best and i < bi):
            best = acc
            bi = i
        j -= 1
    return best, bi


@njit(cache=True)
def _linear_scan(z, C, lam):
    best = np.inf
    bi = -1
    for i in range(C.shape[0]):
        acc = _dist(z, C, i, lam, best)
        if acc < best:
            best = acc
            bi = i
    return best, bi


@njit(cache=True)
def _nearest_batch(Z, C, lam, order, key, idx, dist):
    for s in range(Z.shape[0]):
        pos = np.searchsorted(key, Z[s, 0])
        best, bi = _scan(Z[s], C, lam, order, key, pos, np.inf, -1)
        idx[s] = bi
        dist[s] = best


@njit(cache=True)
def _lloyd_accumulate(Z, C, lam, order, key, counts, sums, moments):
    d = Z.shape[1]
    for s in range(Z.shape[0]):
        pos = np.searchsorted(key, Z[s, 0])
        best, bi = _scan(Z[s], C, lam, order, key, pos, np.inf, -1)
        counts[bi] += 1
        for k in range(d):
            sums[bi, k] += Z[s, k]
        moments[0] += best
        moments[1] += best * best


@njit(cache=True)
def _clvq_steps(C, Z, lam, c, k_first, k0, hits, moments):
    d = C.shape[1]
    for s in range(Z.shape[0]):
        best, bi = _linear_scan(Z[s], C, lam)
        gain = c / (k_first + s + k0)
        for k in range(d):
            C[bi, k] += gain * (Z[s, k] - C[bi, k])
        hits[bi] += 1
        moments[0] += best
        moments[1] += best * best


# ---------------------------------------------------------------- helpers


def _sorted_index(C: np.ndarray):
    order = np.argsort(C[:, 0], kind="stable").astype(np.int64)
    return order, np.ascontiguousarray(C[order, 0])


def _chunks(total: int, rng: RngStream, dim: int):
    """Yield N(0, I_d) samples block by block; block b comes from ``rng.advance(b)``."""
    done = 0
    block = 0
    while done < total:
        n = min(CHUNK, total - done)
        yield rng.advance(block).normal((n, dim))
        done += n
        block += 1


def assign(cb: Codebook, z: np.ndarray):
    """Nearest codeword index and squared norm distance for each row of ``z``."""
    z = np.ascontiguousarray(np.atleast_2d(np.asarray(z, dtype=float)))
    if z.shape[1] != cb.dim:
        raise ValueError("dimension mismatch")
    C = np.ascontiguousarray(cb.points)
    order, key = _sorted_index(C)
    idx = np.empty(len(z), dtype=np.int64)
    dist = np.empty(len(z))
    _nearest_batch(z, C, cb.norm.lambdas, order, key, idx, dist)
    return idx, dist


def nearest_index(cb: Codebook, z) -> int:
    """Index of the codeword closest to ``z`` (first index on ties)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != cb.dim:
        raise ValueError(f"expected a {cb.dim}-vector, got length {z.size}")
    return int(_linear_scan(np.ascontiguousarray(z), np.ascontiguousarray(cb.points), cb.norm.lambdas)[1])


def splitting_law_sample(norm: CovNorm, n: int, rng: RngStream) -> np.ndarray:
    """Draw n points from the law with density proportional to ``phi^(d/(d+2))``.

    That law is N(0, (1 + 2/d) I_d) in normalized coordinates, i.e.
    covariance ``(1 + 2/d) diag(lambda)`` in K-L coordinates.
    """
    d = norm.dim
    return math.sqrt(1.0 + 2.0 / d) * rng.normal((n, d))


def splitting_extend(cb: Codebook, nu: int, rng: RngStream) -> Codebook:
    if nu < 0:
        raise ValueError("nu must be non-negative")
    if nu == 0:
        return cb
    fresh = splitting_law_sample(cb.norm, nu, rng)
    points = np.vstack([cb.points, fresh])
    grown = cb.size + nu
    weights = np.full(grown, 1.0 / grown)
    meta = dict(cb.meta, level=grown, split_from=cb.size)
    return Codebook(points, weights, cb.distortion, cb.norm, meta)


def estimate_distortion_weights(cb: Codebook, samples: int, rng: RngStream) -> Codebook:
    """Monte Carlo companion parameters: cell hit frequencies and distortion.

    Also records standard errors, the Pythagoras check
    ``sum w |x|^2 + D`` against ``sum lambda`` with its standard error, and
    the stationarity residual ``max_i |E[Z | cell i] - x_i|`` in the norm.
    """
    if samples < cb.size:
        raise ValueError("need at least one sample per codeword")
    C = np.ascontiguousarray(cb.points)
    lam = cb.norm.lambdas
    order, key = _sorted_index(C)
    counts = np.zeros(cb.size, dtype=np.int64)
    sums = np.zeros_like(C)
    moments = np.zeros(2)
    sq_norms = (C**2) @ lam
    # per-sample q = |x_i|^2 + |z - x_i|^2, whose mean is sum(lambda) for a stationary book
    q_sum = 0.0
    q_sq = 0.0
    for Z in _chunks(samples, rng, cb.dim):
        idx = np.empty(len(Z), dtype=np.int64)
        dist = np.empty(len(Z))
        _nearest_batch(Z, C, lam, order, key, idx, dist)
        counts += np.bincount(idx, minlength=cb.size)
        for k in range(cb.dim):
            sums[:, k] += np.bincount(idx, weights=Z[:, k], minlength=cb.size)
        moments[0] += dist.sum()
        moments[1] += (dist * dist).sum()
        q = sq_norms[idx] + dist
        q_sum += q.sum()
        q_sq += (q * q).sum()
    return _finish_estimate(cb, samples, counts, sums, moments, q_sum, q_sq)


def _finish_estimate(cb, samples, counts, sums, moments, q_sum, q_sq):
    n = float(samples)
    weights = counts / n
    distortion = moments[0] / n
    var = max(moments[1] / n - distortion**2, 0.0)
    q_mean = q_sum / n
    q_var = max(q_sq / n - q_mean**2, 0.0)
    hit = counts > 0
    C = cb.points
    means = np.where(hit[:, None], sums / np.maximum(counts, 1)[:, None], C)
    residual = float(np.sqrt(((means - C) ** 2) @ cb.norm.lambdas).max())
    meta = dict(
        cb.meta,
        eval_samples=int(samples),
        distortion_se=math.sqrt(var / n),
        weights_se=np.sqrt(weights * (1 - weights) / n).max().item(),
        pythagoras=q_mean,
        pythagoras_se=math.sqrt(q_var / n),
        stationarity_residual=residual,
        empty_cells=int((~hit).sum()),
    )
    return Codebook(cb.points, weights, distortion, cb.norm, meta)


def clvq(init: Codebook, samples: int, c: float, rng: RngStream, k0: int = 100) -> Codebook:
    """Competitive learning vector quantization.

    At step k the winner of the fresh sample moves toward it by the factor
    ``c / (k + k0)``; every other codeword stays put.  Weights and
    distortion returned are the running hit frequencies and mean squared
    winner distance of the run.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not 0.0 <= c <= 1.0:
        raise ValueError("c must lie in [0, 1]")
    C = np.array(init.points, dtype=float, order="C")
    hits = np.zeros(init.size, dtype=np.int64)
    moments = np.zeros(2)
    k = 1
    for Z in _chunks(samples, rng, init.dim):
        _clvq_steps(C, Z, init.norm.lambdas, float(c), k, k0, hits, moments)
        k += len(Z)
    points = C
    meta = dict(init.meta, clvq_steps=int(samples), clvq_c=float(c), clvq_k0=int(k0))
    return Codebook(points, hits / samples, moments[0] / samples, init.norm, meta)


def lloyd_randomized(init: Codebook, samples_per_iter: int, iters: int, rng: RngStream) -> Codebook:
    """Randomized Lloyd I: replace every codeword by the MC mean of its cell.

    Each iteration uses a fresh block of samples.  A codeword whose cell
    received no sample is re-drawn from the splitting law.  A final
    evaluation pass on fresh samples re-estimates weights and distortion.
    """
    cb = init
    history = []
    reseeded = 0
    lam = cb.norm.lambdas
    for it in range(iters):
        stream = rng.child(("lloyd", it))
        C = np.ascontiguousarray(cb.points)
        order, key = _sorted_index(C)
        counts = np.zeros(cb.size, dtype=np.int64)
        sums = np.zeros_like(C)
        moments = np.zeros(2)
        for Z in _chunks(samples_per_iter, stream, cb.dim):
            _lloyd_accumulate(Z, C, lam, order, key, counts, sums, moments)
        history.append(moments[0] / samples_per_iter)
        empty = counts == 0
        new = np.empty_like(C)
        new[~empty] = sums[~empty] / counts[~empty, None]
        if empty.any():
            n_empty = int(empty.sum())
            new[empty] = splitting_law_sample(cb.norm, n_empty, stream.child("reseed"))
            reseeded += n_empty
        cb = Codebook(new, counts / samples_per_iter, history[-1], cb.norm, cb.meta)
    meta = dict(
        cb.meta,
        lloyd_iters=int(cb.meta.get("lloyd_iters", 0)) + iters,
        lloyd_samples=int(samples_per_iter),
        reseeded=int(cb.meta.get("reseeded", 0)) + reseeded,
        lloyd_history=[float(h) for h in history],
    )
    cb = replace(cb, meta=meta)
    return estimate_distortion_weights(cb, max(samples_per_iter, cb.size), rng.child("final"))


def lloyd_exact_1d(init: Codebook, iters: int | None = None, tol: float = 1e-13) -> Codebook:
    """Deterministic Lloyd I in dimension one using closed-form Gaussian cell moments."""
    if init.dim != 1:
        raise ValueError("exact Lloyd is only available in dimension 1")
    order = np.argsort(init.points[:, 0], kind="stable")
    x = init.points[order, 0].copy()
    max_iter = iters if iters is not None else 1_000_000
    done = 0
    for done in range(1, max_iter + 1):
        edges = np.concatenate(([-np.inf], 0.5 * (x[:-1] + x[1:]), [np.inf]))
        mass, mean_part = gaussian_cell_moments(edges[:-1], edges[1:])
        new = mean_part / mass
        step = np.max(np.abs(new - x))
        x = new
        if iters is None and step < tol:
            break
    edges = np.concatenate(([-np.inf], 0.5 * (x[:-1] + x[1:]), [np.inf]))
    mass, mean_part = gaussian_cell_moments(edges[:-1], edges[1:])
    lam = init.norm.lambdas[0]
    residual = float(np.max(np.abs(mean_part / mass - x)) * math.sqrt(lam))
    meta = dict(init.meta, exact_lloyd_iters=done, stationarity_residual=residual)
    return Codebook(x[:, None], mass, lam * normal_distortion(x), init.norm, meta)


# ---------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class OptSchedule:
    """Budget of the splitting / CLVQ / Lloyd pipeline.

    Sample counts are per codeword of the current level.  ``growth`` sets
    the splitting increments ``N -> N + max(1, floor(growth * N))``.
    """

    growth: float = 0.1
    clvq_steps_per_point: int = 20
    clvq_c: float = 1.0
    clvq_k0: int = 100
    lloyd_iters: int = 4
    lloyd_samples_per_point: int = 200
    final_iters: int = 12
    final_samples_per_point: int = 1000
    eval_samples_per_point: int = 2000

    def levels(self, N: int) -> list[int]:
        out = [1]
        while out[-1] < N:
            out.append(min(N, out[-1] + max(1, int(self.growth * out[-1]))))
        return out

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def optimize_pipeline(N: int, norm: CovNorm, schedule: OptSchedule | None = None, rng: RngStream | None = None) -> Codebook:
    """Optimized N-quantizer of N(0, I_d) under ``norm`` by splitting from N = 1.

    At every level the grown codebook is moved by CLVQ and polished by
    randomized Lloyd; the target level gets a longer, larger-sample polish
    and a final independent evaluation of weights and distortion.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    schedule = schedule or OptSchedule()
    rng = rng or RngStream(0)
    cb = origin_codebook(norm)
    trace = [(1, cb.distortion)]
    levels = schedule.levels(N)
    for prev, level in zip(levels[:-1], levels[1:]):
        stream = rng.child(("level", level))
        cb = splitting_extend(cb, level - prev, stream.child("split"))
        if schedule.clvq_steps_per_point > 0:
            cb = clvq(cb, schedule.clvq_steps_per_point * level, schedule.clvq_c, stream.child("clvq"), schedule.clvq_k0)
        if level < N:
            cb = lloyd_randomized(cb, schedule.lloyd_samples_per_point * level, schedule.lloyd_iters, stream.child("lloyd"))
        else:
            cb = lloyd_randomized(cb, schedule.final_samples_per_point * level, schedule.final_iters, stream.child("final"))
        trace.append((level, cb.distortion))
    if N > 1:
        cb = estimate_distortion_weights(cb, schedule.eval_samples_per_point * N, rng.child("evaluate"))
    meta = {
        k: v for k, v in cb.meta.items() if k not in ("lloyd_history", "split_from", "clvq_steps", "clvq_c", "clvq_k0")
    }
    meta.update(
        level=N,
        seed=rng.seed,
        rng_counter=rng.counter,
        schedule=schedule.as_dict(),
        level_distortions=[[int(a), float(b)] for a, b in trace],
    )
    return replace(cb, meta=meta)
