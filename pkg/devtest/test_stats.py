import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from ogfmap.stats import inv_mills, log_std_normal_cdf, std_normal_cdf, std_normal_pdf

# Φ(x) to 16+ significant digits
CDF_REFERENCE = [
    (0.0, 0.5),
    (1.0, 0.8413447460685429),
    (-1.0, 0.15865525393145707),
    (1.96, 0.9750021048517795),
    (-5.0, 2.866515718791939e-07),
    (-8.0, 6.22096057427178e-16),
]


def test_pdf_values():
    assert std_normal_pdf(0.0) == pytest.approx(0.3989422804014327, rel=1e-15)
    assert std_normal_pdf(1.0) == pytest.approx(0.24197072451914337, rel=1e-14)


@given(st.floats(min_value=-30, max_value=30))
def test_pdf_symmetric(x):
    assert std_normal_pdf(x) == std_normal_pdf(-x)


@pytest.mark.parametrize('x, expected', CDF_REFERENCE)
def test_cdf_reference(x, expected):
    assert std_normal_cdf(x) == pytest.approx(expected, rel=1e-12)


def test_cdf_complement():
    x = np.linspace(-8, 8, 1601)
    np.testing.assert_allclose(std_normal_cdf(x) + std_normal_cdf(-x), 1.0, rtol=0, atol=1e-14)
    assert np.all(np.diff(std_normal_cdf(x)) >= 0)


def test_cdf_derivative_is_pdf():
    x = np.linspace(-5, 5, 101)
    h = 1e-5
    slope = (std_normal_cdf(x + h) - std_normal_cdf(x - h)) / (2 * h)
    np.testing.assert_allclose(slope, std_normal_pdf(x), rtol=0, atol=1e-6)


def test_log_cdf_far_tail():
    assert np.isfinite(log_std_normal_cdf(-60.0))
    assert log_std_normal_cdf(-1.0) == pytest.approx(np.log(0.15865525393145707), rel=1e-14)


def test_inv_mills_values():
    assert inv_mills(0.0) == pytest.approx(0.7978845608028654, rel=1e-14)
    assert inv_mills(-10.0) == pytest.approx(10.098093233962511, rel=1e-10)
    assert inv_mills(10.0) == pytest.approx(7.694598626706419e-23, rel=1e-9)


def test_inv_mills_left_asymptote():
    assert 30.0 < inv_mills(-30.0) < 30.04
    assert np.isfinite(inv_mills(-1e4))


def test_inv_mills_matches_log_space_ratio():
    z = np.linspace(-40, 8, 4801)
    reference = np.exp(-0.5 * z * z - 0.5 * np.log(2 * np.pi) - special.log_ndtr(z))
    np.testing.assert_allclose(inv_mills(z), reference, rtol=1e-10)


@given(st.floats(min_value=-40, max_value=8), st.floats(min_value=1e-3, max_value=1.0))
def test_inv_mills_positive_decreasing(z, dz):
    assert inv_mills(z) > 0
    assert inv_mills(z + dz) < inv_mills(z)
