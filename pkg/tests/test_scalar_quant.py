import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from fquant.scalar_quant import (
    ConvergenceError,
    Uniform,
    gaussian_cell_moments,
    lloyd_normal,
    normal_distortion,
    normal_distortion_table,
    normal_stationarity_residual,
    optimal_normal_quantizer,
    optimal_uniform_quantizer,
)


def quad_distortion(points):
    """Distortion of a normal quantizer by adaptive quadrature, cell by cell."""
    edges = np.concatenate(([-np.inf], (points[1:] + points[:-1]) / 2, [np.inf]))
    total = 0.0
    for lo, hi, x in zip(edges[:-1], edges[1:], points):
        total += integrate.quad(lambda u: (u - x) ** 2 * norm.pdf(u), lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
    return total


def quad_cell_means(points):
    edges = np.concatenate(([-np.inf], (points[1:] + points[:-1]) / 2, [np.inf]))
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = integrate.quad(norm.pdf, lo, hi, epsabs=1e-15)[0]
        s = integrate.quad(lambda u: u * norm.pdf(u), lo, hi, epsabs=1e-15)[0]
        out.append(s / m)
    return np.array(out)


def test_size_one_is_the_mean():
    q = optimal_normal_quantizer(1)
    assert q.points.tolist() == [0.0]
    assert q.weights.tolist() == [1.0]
    assert q.distortion == pytest.approx(1.0, abs=1e-15)


def test_size_two_closed_form():
    q = optimal_normal_quantizer(2)
    a = math.sqrt(2 / math.pi)
    np.testing.assert_allclose(q.points, [-a, a], atol=1e-13)
    assert q.points[0] == pytest.approx(-0.79788, abs=1e-5)
    assert q.distortion == pytest.approx(1 - 2 / math.pi, abs=1e-12)
    assert q.distortion == pytest.approx(0.36338, abs=1e-5)


def test_size_two_matches_lloyd_from_asymmetric_start():
    q = lloyd_normal(np.array([-1.0, 3.0]), tol=1e-13)
    a = math.sqrt(2 / math.pi)
    np.testing.assert_allclose(q.points, [-a, a], atol=1e-12)


@pytest.mark.parametrize("M", [3, 7, 20, 50])
def test_newton_and_lloyd_agree(M):
    newton = optimal_normal_quantizer(M)
    lloyd = lloyd_normal(norm.ppf((2 * np.arange(1, M + 1) - 1) / (2 * M)), tol=1e-13)
    np.testing.assert_allclose(newton.points, lloyd.points, atol=1e-9)


@pytest.mark.parametrize("M", [1, 2, 5, 12, 33])
def test_distortion_matches_quadrature(M):
    q = optimal_normal_quantizer(M)
    assert q.distortion == pytest.approx(quad_distortion(q.points), abs=1e-10)
    assert normal_distortion(q.points) == pytest.approx(q.distortion, abs=1e-14)


@pytest.mark.parametrize("M", [2, 9, 30])
def test_codewords_are_cell_means_by_quadrature(M):
    q = optimal_normal_quantizer(M)
    np.testing.assert_allclose(quad_cell_means(q.points), q.points, atol=1e-10)


def test_suite_up_to_100():
    prev = np.inf
    for M in range(1, 101):
        q = optimal_normal_quantizer(M)
        assert np.max(np.abs(normal_stationarity_residual(q.points))) < 1e-10
        assert np.all(np.diff(q.points) > 0)
        assert np.all(q.weights > 0)
        assert abs(q.weights.sum() - 1) < 1e-12
        assert abs(q.weights @ q.points) < 1e-12
        np.testing.assert_allclose(q.points, -q.points[::-1], atol=1e-13)
        assert q.weights @ q.points**2 + q.distortion == pytest.approx(1.0, abs=1e-10)
        assert q.distortion < prev
        prev = q.distortion


def test_distortion_table_is_indexed_by_size():
    e2 = normal_distortion_table(8)
    assert e2[1] == pytest.approx(1.0)
    assert e2[2] == pytest.approx(1 - 2 / math.pi, abs=1e-12)
    assert e2[5] == optimal_normal_quantizer(5).distortion


def test_non_convergence_reports_residual():
    with pytest.raises(ConvergenceError) as info:
        optimal_normal_quantizer(40, tol=1e-30, max_iter=2)
    assert info.value.residual > 0
    assert info.value.iterations == 2


@pytest.mark.parametrize("bad", [0, -3])
def test_rejects_bad_size(bad):
    with pytest.raises(ValueError):
        optimal_normal_quantizer(bad)


@pytest.mark.parametrize(
    "a,b,M,points,distortion",
    [
        (0, 1, 1, [0.5], 1 / 12),
        (0, 1, 4, [1 / 8, 3 / 8, 5 / 8, 7 / 8], 1 / 192),
        (-1, 1, 2, [-0.5, 0.5], 4 / 48),
    ],
)
def test_uniform_examples(a, b, M, points, distortion):
    q = optimal_uniform_quantizer(a, b, M)
    np.testing.assert_allclose(q.points, points, atol=1e-15)
    np.testing.assert_allclose(q.weights, 1 / M)
    assert q.distortion == pytest.approx(distortion, rel=1e-14)
    assert q.law == Uniform(a, b)


def test_uniform_is_a_lloyd_fixed_point():
    q = optimal_uniform_quantizer(0.0, 1.0, 4)
    edges = q.boundaries
    np.testing.assert_allclose((edges[1:] + edges[:-1]) / 2, q.points, atol=1e-15)


def test_uniform_rejects_empty_interval():
    with pytest.raises(ValueError):
        optimal_uniform_quantizer(1.0, 1.0, 3)


def test_cell_moments_examples():
    assert gaussian_cell_moments(-np.inf, np.inf) == pytest.approx((1.0, 0.0), abs=1e-16)
    m, s = gaussian_cell_moments(-np.inf, 0.0)
    assert m == pytest.approx(0.5, abs=1e-16)
    assert s == pytest.approx(-0.3989422804, abs=1e-10)
    assert s == pytest.approx(integrate.quad(lambda u: u * norm.pdf(u), -np.inf, 0)[0], abs=1e-12)
    m, s = gaussian_cell_moments(0.0, np.inf)
    assert (m, s) == pytest.approx((0.5, 0.3989422804), abs=1e-10)


@given(
    lo=st.floats(-8, 8, allow_nan=False),
    width=st.floats(1e-3, 8, allow_nan=False),
)
@settings(max_examples=60, deadline=None)
def test_cell_moments_match_quadrature(lo, width):
    hi = lo + width
    m, s = gaussian_cell_moments(lo, hi)
    assert m == pytest.approx(integrate.quad(norm.pdf, lo, hi, epsabs=1e-15)[0], abs=1e-13)
    assert s == pytest.approx(integrate.quad(lambda u: u * norm.pdf(u), lo, hi, epsabs=1e-15)[0], abs=1e-13)


@given(st.integers(1, 64))
@settings(max_examples=25, deadline=None)
def test_boundaries_are_midpoints_with_infinite_ends(M):
    q = optimal_normal_quantizer(M)
    b = q.boundaries
    assert b[0] == -np.inf and b[-1] == np.inf
    np.testing.assert_allclose(b[1:-1], (q.points[1:] + q.points[:-1]) / 2)
    masses = np.array([gaussian_cell_moments(lo, hi)[0] for lo, hi in zip(b[:-1], b[1:])])
    np.testing.assert_allclose(masses, q.weights, atol=1e-13)
