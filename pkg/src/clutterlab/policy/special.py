"""Special functions for the distribution heads (vectorized over numpy arrays)."""

from __future__ import annotations

import math

import numba
import numpy as np

_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _lgamma_pos(x: np.ndarray) -> np.ndarray:
    """Lanczos series for x >= 0.5."""
    z = x - 1.0
    s = np.full_like(z, _LANCZOS_COEF[0])
    for k in range(1, 9):
        s = s + _LANCZOS_COEF[k] / (z + k)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(s)


def lgamma(x) -> np.ndarray:
    """log|Gamma(x)|; exact zero at 1 and 2, reflection below 0.5."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 0.5
    out[~small] = _lgamma_pos(x[~small])
    if np.any(small):
        xs = x[small]
        out[small] = np.log(np.pi / np.abs(np.sin(np.pi * xs))) - _lgamma_pos(1.0 - xs)
    out[(x == 1.0) | (x == 2.0)] = 0.0
    return out


def digamma(x) -> np.ndarray:
    """psi(x) for x > 0: shift up to x >= 6, then the asymptotic series."""
    x = np.array(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("digamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    while True:
        low = x < 6.0
        if not np.any(low):
            break
        acc[low] -= 1.0 / x[low]
        x[low] += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (1 / 240 - inv2 * (1 / 132)))))
    return acc + np.log(x) - 0.5 * inv - series


def trigamma(x) -> np.ndarray:
    """psi'(x) for x > 0, same shift-then-series scheme."""
    x = np.array(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("trigamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    while True:
        low = x < 10.0
        if not np.any(low):
            break
        acc[low] += 1.0 / (x[low] * x[low])
        x[low] += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv + 0.5 * inv2 + inv * inv2 * (
        1 / 6 - inv2 * (1 / 30 - inv2 * (1 / 42 - inv2 * (1 / 30 - inv2 * (5 / 66 - inv2 * (691 / 2730 - inv2 * 7 / 6)))))
    )
    return acc + series


def log_beta(a, b) -> np.ndarray:
    return lgamma(a) + lgamma(b) - lgamma(np.asarray(a) + np.asarray(b))


@numba.vectorize(["float64(float64)"], cache=True)
def _erf(x):
    return math.erf(x)


@numba.vectorize(["float64(float64)"], cache=True)
def _erfc(x):
    return math.erfc(x)


def erf(x) -> np.ndarray:
    return _erf(np.asarray(x, dtype=float))


def erf_derivative(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 2.0 / math.sqrt(math.pi) * np.exp(-x * x)


_SQRT2 = math.sqrt(2.0)


def norm_cdf(x) -> np.ndarray:
    """Phi via erfc, accurate deep in the lower tail."""
    return 0.5 * _erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_cdf_derivative(x) -> np.ndarray:
    return norm_pdf(x)


def norm_mass(a, b) -> np.ndarray:
    """Phi(b) - Phi(a) for a <= b, reflected into the lower tail to avoid cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    return np.where(upper, norm_cdf(-a) - norm_cdf(-b), norm_cdf(b) - norm_cdf(a))


def norm_pdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def softplus(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
