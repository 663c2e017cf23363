"""
Standard normal primitives used by every solver.

All functions accept Python floats or numpy arrays and evaluate elementwise.
"""

import numpy as np
from scipy import special

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_SQRT_HALF = np.sqrt(0.5)


def std_normal_pdf(x):
    """φ(x; 0, 1)."""
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def std_normal_cdf(x):
    """Φ(x; 0, 1) through erfc, accurate in both tails."""
    x = np.asarray(x, dtype=float)
    return 0.5 * special.erfc(-x * _SQRT_HALF)


def log_std_normal_cdf(x):
    """log Φ(x; 0, 1), finite far below the underflow point of Φ."""
    return special.log_ndtr(np.asarray(x, dtype=float))


def inv_mills(z):
    """
    Inverse Mills ratio φ(z)/Φ(z).

    With t = -z/√2, φ(z)/Φ(z) = √(2/π) / erfcx(t), where erfcx(t) = exp(t²)·erfc(t)
    is the scaled complementary error function. Both exponentials cancel
    analytically, so the ratio stays finite where Φ(z) underflows (z → -∞,
    ratio ≈ -z) and goes to 0 without a 0/0 for z → +∞.
    """
    z = np.asarray(z, dtype=float)
    return _SQRT_2_OVER_PI / special.erfcx(-z * _SQRT_HALF)
