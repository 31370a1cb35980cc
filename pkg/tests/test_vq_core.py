import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fquant.kl_basis import KLSystem, eigen_tail
from fquant.rng import RngStream
from fquant.scalar_quant import optimal_normal_quantizer
from fquant.vq_core import (
    Codebook,
    CovNorm,
    OptSchedule,
    assign,
    clvq,
    estimate_distortion_weights,
    lloyd_exact_1d,
    lloyd_randomized,
    nearest_index,
    optimize_pipeline,
    origin_codebook,
    splitting_extend,
    splitting_law_sample,
)

A2 = math.sqrt(2 / math.pi)


def brute_force(points, lambdas, z):
    """Exhaustive scan, first index on ties, distance summed in coordinate order."""
    best, bi = np.inf, -1
    for i, x in enumerate(points):
        d = 0.0
        for lk, zk, xk in zip(lambdas, z, x):
            d += lk * ((zk - xk) * (zk - xk))
        if d < best:
            best, bi = d, i
    return bi, best


def book(points, lambdas):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    return Codebook(points, np.full(n, 1 / n), 0.0, CovNorm(lambdas))


def test_cov_norm_validation():
    with pytest.raises(ValueError):
        CovNorm([1.0, 2.0])
    with pytest.raises(ValueError):
        CovNorm([1.0, 0.0])
    n = CovNorm([2.0, 0.5])
    assert n.total == 2.5
    assert n.sqnorm([1.0, 2.0]) == pytest.approx(4.0)


def test_nearest_single_codeword():
    cb = book([[0.3, -1.0]], [1.0, 0.5])
    z = RngStream(1).normal((20, 2))
    assert all(nearest_index(cb, row) == 0 for row in z)
    assert np.all(assign(cb, z)[0] == 0)


def test_nearest_midpoint_rule():
    cb = book([[0.0], [1.0]], [1.0])
    assert nearest_index(cb, [0.2]) == 0
    assert nearest_index(cb, [0.7]) == 1


def test_nearest_ties_go_to_smallest_index():
    cb = book([[1.0], [-1.0], [1.0]], [1.0])
    assert nearest_index(cb, [0.0]) == 0
    assert assign(cb, [[0.0], [1.0]])[0].tolist() == [0, 0]


def test_nearest_random_five_points_vs_exhaustive():
    rng = np.random.default_rng(5)
    lam = np.array([0.4, 0.05, 0.01])
    cb = book(rng.normal(size=(5, 3)), lam)
    z = rng.normal(size=(20, 3))
    idx, dist = assign(cb, z)
    for row, i, d in zip(z, idx, dist):
        bi, bd = brute_force(cb.points, lam, row)
        assert nearest_index(cb, row) == bi == i
        assert d == pytest.approx(bd, rel=1e-12, abs=1e-15)


@given(
    N=st.integers(1, 16),
    d=st.integers(1, 5),
    seed=st.integers(0, 2**32 - 1),
    grid=st.booleans(),
)
@settings(max_examples=200, deadline=None)
def test_assignment_matches_exhaustive_scan(N, d, seed, grid):
    rng = np.random.default_rng(seed)
    lam = np.sort(rng.uniform(0.01, 1.0, d))[::-1]
    pts = rng.normal(size=(N, d))
    z = rng.normal(size=(12, d))
    if grid:  # coarse lattice values force exact ties
        pts, z = np.round(pts), np.round(z)
    cb = book(pts, lam)
    idx, _ = assign(cb, z)
    for row, i in zip(z, idx):
        assert i == brute_force(pts, lam, row)[0]


def test_clvq_zero_gain_is_identity():
    cb = book([[-2.0], [2.0]], [1.0])
    out = clvq(cb, 1000, 0.0, RngStream(1))
    assert np.array_equal(out.points, cb.points)


def test_clvq_single_point_moves_to_mean():
    cb = book([[1.5, -1.0]], [1.0, 0.3])
    out = clvq(cb, 1_000_000, 1.0, RngStream(2))
    assert np.abs(out.points).max() < 0.01


@pytest.mark.slow
def test_clvq_two_points_reach_scalar_optimum():
    out = clvq(book([[-2.0], [2.0]], [1.0]), 10_000_000, 1.0, RngStream(3))
    np.testing.assert_allclose(np.sort(out.points[:, 0]), [-A2, A2], atol=0.02)


def test_exact_lloyd_1d_two_points():
    out = lloyd_exact_1d(book([[-1.0], [3.0]], [1.0]))
    np.testing.assert_allclose(np.sort(out.points[:, 0]), [-A2, A2], atol=1e-10)


def test_exact_lloyd_1d_pythagoras():
    lam = 0.405
    out = lloyd_exact_1d(book(np.linspace(-2, 2, 7)[:, None], [lam]))
    second = lam * out.weights @ out.points[:, 0] ** 2
    assert second + out.distortion == pytest.approx(lam, abs=1e-8)
    ref = optimal_normal_quantizer(7)
    np.testing.assert_allclose(out.points[:, 0], ref.points, atol=1e-8)


def test_lloyd_single_point_goes_to_sample_mean():
    rng = RngStream(11)
    out = lloyd_randomized(book([[0.7, 0.2]], [1.0, 0.5]), 5000, 1, rng)
    # one iteration: the point becomes the mean of that iteration's draws,
    # which fit in the first sample block of the iteration stream
    mean = rng.child(("lloyd", 0)).advance(0).normal((5000, 2)).mean(axis=0)
    np.testing.assert_allclose(out.points[0], mean, atol=1e-12)


def test_lloyd_stationary_start_barely_moves():
    q = optimal_normal_quantizer(4)
    cb = Codebook(q.points[:, None], q.weights, q.distortion, CovNorm([1.0]))
    n = 400_000
    out = lloyd_randomized(cb, n, 1, RngStream(4))
    # standard error of a cell mean: sqrt(var_in_cell / (n * w))
    se = np.sqrt(1.0 / (n * q.weights))
    assert np.all(np.abs(out.points[:, 0] - q.points) < 3 * se + 1e-12)


def test_splitting_identity_and_preserves_points():
    cb = book([[0.1, 0.2], [-0.3, 0.4]], [1.0, 0.2])
    assert splitting_extend(cb, 0, RngStream(1)) is cb
    grown = splitting_extend(cb, 5, RngStream(1))
    assert grown.size == 7
    assert np.array_equal(grown.points[:2], cb.points)


@pytest.mark.parametrize("lam,factor", [([0.405], 3.0), ([0.405, 0.045], 2.0)])
def test_splitting_law_covariance(lam, factor):
    norm = CovNorm(lam)
    x = splitting_law_sample(norm, 100_000, RngStream(9)) * norm.scale
    np.testing.assert_allclose(x.var(axis=0), factor * np.asarray(lam), rtol=0.02)


def test_estimate_origin_gives_total_variance():
    lam = KLSystem().eigenvalues(3)
    cb = estimate_distortion_weights(origin_codebook(CovNorm(lam)), 200_000, RngStream(5))
    assert abs(cb.distortion - lam.sum()) < 3 * cb.meta["distortion_se"]
    assert cb.weights.tolist() == [1.0]


def test_estimate_symmetric_pair_weights():
    cb = estimate_distortion_weights(book([[-A2], [A2]], [1.0]), 200_000, RngStream(6))
    assert cb.weights.sum() == 1.0
    assert abs(cb.weights[0] - 0.5) < 3 * cb.meta["weights_se"]
    assert abs(cb.distortion - (1 - 2 / math.pi)) < 4 * cb.meta["distortion_se"]


def test_pipeline_single_point():
    lam = KLSystem().eigenvalues(2)
    cb = optimize_pipeline(1, CovNorm(lam), OptSchedule(), RngStream(1))
    assert cb.points.tolist() == [[0.0, 0.0]]
    assert cb.distortion == pytest.approx(lam.sum())


def test_pipeline_is_deterministic():
    lam = KLSystem().eigenvalues(2)
    a = optimize_pipeline(12, CovNorm(lam), OptSchedule(), RngStream(8))
    b = optimize_pipeline(12, CovNorm(lam), OptSchedule(), RngStream(8))
    assert a == b


def test_pipeline_n10_band_and_diagnostics():
    sysm = KLSystem()
    cb = optimize_pipeline(10, CovNorm(sysm.eigenvalues(2)), OptSchedule(), RngStream(2024))
    e2 = cb.distortion + eigen_tail(sysm, 2)
    assert 0.20 <= math.log(10) * e2 <= 0.26
    assert abs(cb.weights.sum() - 1) < 1e-9
    assert np.min(np.linalg.norm(cb.points[:, None] - cb.points[None], axis=2) + np.eye(10)) > 0
    # mean of |x_i|^2 + |z - x_i|^2 equals the total variance for a stationary book
    assert abs(cb.meta["pythagoras"] - sysm.eigenvalues(2).sum()) < 4 * cb.meta["pythagoras_se"]
    levels = cb.meta["level_distortions"]
    assert [n for n, _ in levels] == OptSchedule().levels(10)


def test_pipeline_levels_decrease():
    lam = KLSystem().eigenvalues(3)
    cb = optimize_pipeline(30, CovNorm(lam), OptSchedule(), RngStream(3))
    d = np.array([v for _, v in cb.meta["level_distortions"]])
    # each level's estimate from its polishing pass; allow a small MC slack
    assert np.all(np.diff(d) < 0.03 * d[:-1])
    assert d[-1] < d[0]
