"""Bounded action heads over [-1, 1]^4.

Each head maps 8 raw network outputs per row to distribution parameters and
provides sampling, log-densities, entropies and their gradients with respect
to the raw outputs. Arrays are batched: ``raw`` has shape ``(B, 8)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from clutterlab.policy.special import (
    digamma,
    log_beta,
    norm_cdf_derivative,
    norm_mass,
    norm_pdf,
    sigmoid,
    softplus,
    trigamma,
)

ACTION_DIM = 4
LN2 = math.log(2.0)


def beta_log_prob(alpha, beta, u) -> np.ndarray:
    """Elementwise Beta log-density on (0, 1)."""
    alpha, beta, u = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (alpha, beta, u)))
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("Beta log-density is only defined on the open interval (0, 1)")
    # (a - 1) * log(u) is taken as 0 when a == 1 so Beta(1, 1) is exactly uniform.
    ta = np.where(alpha == 1.0, 0.0, (alpha - 1.0) * np.log(u))
    tb = np.where(beta == 1.0, 0.0, (beta - 1.0) * np.log1p(-u))
    return ta + tb - log_beta(alpha, beta)


def beta_entropy(alpha, beta) -> np.ndarray:
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))
    s = alpha + beta
    return (
        log_beta(alpha, beta)
        - (alpha - 1.0) * digamma(alpha)
        - (beta - 1.0) * digamma(beta)
        + (s - 2.0) * digamma(s)
    )


def beta_mean(alpha, beta) -> np.ndarray:
    return np.asarray(alpha) / (np.asarray(alpha) + np.asarray(beta))


def sample_beta(alpha: np.ndarray, beta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``X / (X + Y)`` with gamma variates; endpoints are redrawn."""
    u = np.empty(np.shape(alpha))
    todo = np.ones(u.shape, dtype=bool)
    while np.any(todo):
        x = rng.standard_gamma(alpha[todo])
        y = rng.standard_gamma(beta[todo])
        u[todo] = x / (x + y)
        todo = (u <= 0.0) | (u >= 1.0) | ~np.isfinite(u)
    return u


class BetaHead:
    """alpha, beta = 1 + softplus(raw); a = 2u - 1."""

    name = "beta"
    n_raw = 2 * ACTION_DIM

    @staticmethod
    def params(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw = np.asarray(raw, dtype=float)
        return 1.0 + softplus(raw[..., :ACTION_DIM]), 1.0 + softplus(raw[..., ACTION_DIM:])

    def sample(self, raw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        alpha, beta = self.params(raw)
        return 2.0 * sample_beta(alpha, beta, rng) - 1.0

    def mode(self, raw: np.ndarray) -> np.ndarray:
        alpha, beta = self.params(raw)
        den = alpha + beta - 2.0
        u = np.where(den > 0.0, (alpha - 1.0) / np.where(den > 0.0, den, 1.0), 0.5)
        return 2.0 * u - 1.0

    def log_prob(self, raw: np.ndarray, action: np.ndarray) -> np.ndarray:
        alpha, beta = self.params(raw)
        u = 0.5 * (np.asarray(action, dtype=float) + 1.0)
        return beta_log_prob(alpha, beta, u).sum(axis=-1) - ACTION_DIM * LN2

    def entropy(self, raw: np.ndarray) -> np.ndarray:
        alpha, beta = self.params(raw)
        return (beta_entropy(alpha, beta) + LN2).sum(axis=-1)

    def log_prob_grad(self, raw: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Log-prob and its gradient with respect to ``raw``."""
        raw = np.asarray(raw, dtype=float)
        alpha, beta = self.params(raw)
        u = 0.5 * (np.asarray(action, dtype=float) + 1.0)
        lp = beta_log_prob(alpha, beta, u).sum(axis=-1) - ACTION_DIM * LN2
        ps = digamma(alpha + beta)
        d_alpha = np.log(u) - digamma(alpha) + ps
        d_beta = np.log1p(-u) - digamma(beta) + ps
        grad = np.concatenate([d_alpha, d_beta], axis=-1) * sigmoid(raw)
        return lp, grad

    def entropy_grad(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw = np.asarray(raw, dtype=float)
        alpha, beta = self.params(raw)
        h = (beta_entropy(alpha, beta) + LN2).sum(axis=-1)
        ts = trigamma(alpha + beta) * (alpha + beta - 2.0)
        d_alpha = -(alpha - 1.0) * trigamma(alpha) + ts
        d_beta = -(beta - 1.0) * trigamma(beta) + ts
        grad = np.concatenate([d_alpha, d_beta], axis=-1) * sigmoid(raw)
        return h, grad


# -- truncated normal ------------------------------------------------------------------

SIGMA_FLOOR = 0.01
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass
class _TnTerms:
    mu: np.ndarray
    sigma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    z: np.ndarray  # normalizing mass Phi(b) - Phi(a)
    dz_dmu: np.ndarray
    dz_dsigma: np.ndarray


def _tn_terms(mu: np.ndarray, sigma: np.ndarray, low: float = -1.0, high: float = 1.0) -> _TnTerms:
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise ValueError("truncated normal needs a finite positive sigma")
    a = (low - mu) / sigma
    b = (high - mu) / sigma
    z = norm_mass(a, b)
    pa = norm_cdf_derivative(a)
    pb = norm_cdf_derivative(b)
    return _TnTerms(mu, sigma, a, b, z, (pa - pb) / sigma, (a * pa - b * pb) / sigma)


def trunc_normal_log_prob(mu, sigma, x, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    mu, sigma, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, sigma, x)))
    if np.any((x < low) | (x > high)):
        raise ValueError("value outside the truncation bounds")
    t = _tn_terms(mu, sigma, low, high)
    zz = (x - mu) / sigma
    return -0.5 * zz * zz - np.log(sigma) - _HALF_LOG_2PI - np.log(t.z)


def trunc_normal_entropy(mu, sigma, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    t = _tn_terms(mu, sigma, low, high)
    n = t.a * norm_pdf(t.a) - t.b * norm_pdf(t.b)
    return _HALF_LOG_2PIE + np.log(sigma) + np.log(t.z) + n / (2.0 * t.z)


def _std_trunc_sample(lo: np.ndarray, hi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard normal restricted to ``[lo, hi]``, where ``lo <= 0 <= hi`` or ``0 < lo``.

    Proposals are uniform for short intervals, normal for long ones containing 0, and a
    shifted exponential for one-sided tails; each keeps the acceptance rate bounded below.
    """
    out = np.empty(lo.shape)
    todo = np.ones(lo.shape, dtype=bool)
    tail = lo > 0
    short = np.where(tail, hi * hi - lo * lo <= 2.0, hi - lo <= 2.5)
    rate = 0.5 * (lo + np.sqrt(lo * lo + 4.0))
    while np.any(todo):
        idx = np.flatnonzero(todo)
        l, h, t, s, lam = lo.flat[idx], hi.flat[idx], tail.flat[idx], short.flat[idx], rate.flat[idx]
        u = rng.random(idx.shape)
        z = np.where(
            s,
            rng.uniform(l, h),
            np.where(t, l + rng.exponential(1.0, idx.shape) / lam, rng.standard_normal(idx.shape)),
        )
        peak = np.where(t, l, 0.0)
        accept = np.where(
            s,
            u < np.exp(-0.5 * (z * z - peak * peak)),
            np.where(t, u < np.exp(-0.5 * (z - lam) ** 2), True),
        )
        ok = accept & (z >= l) & (z <= h)
        out.flat[idx[ok]] = z[ok]
        todo.flat[idx[ok]] = False
    return out


def trunc_normal_sample(
    mu: np.ndarray, sigma: np.ndarray, rng: np.random.Generator, low: float = -1.0, high: float = 1.0
) -> np.ndarray:
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise ValueError("truncated normal needs a finite positive sigma")
    a = (low - mu) / sigma
    b = (high - mu) / sigma
    flip = b < 0  # mirror lower tails onto the upper side
    z = _std_trunc_sample(np.where(flip, -b, a), np.where(flip, -a, b), rng)
    return np.clip(mu + sigma * np.where(flip, -z, z), low, high)


class TruncNormalHead:
    """mu = tanh(raw), sigma = softplus(raw) + 0.01, truncated to [-1, 1]."""

    name = "trunc_normal"
    n_raw = 2 * ACTION_DIM

    @staticmethod
    def params(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw = np.asarray(raw, dtype=float)
        return np.tanh(raw[..., :ACTION_DIM]), softplus(raw[..., ACTION_DIM:]) + SIGMA_FLOOR

    def sample(self, raw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu, sigma = self.params(raw)
        return trunc_normal_sample(mu, sigma, rng)

    def mode(self, raw: np.ndarray) -> np.ndarray:
        return self.params(raw)[0]

    def log_prob(self, raw: np.ndarray, action: np.ndarray) -> np.ndarray:
        mu, sigma = self.params(raw)
        return trunc_normal_log_prob(mu, sigma, action).sum(axis=-1)

    def entropy(self, raw: np.ndarray) -> np.ndarray:
        mu, sigma = self.params(raw)
        return trunc_normal_entropy(mu, sigma).sum(axis=-1)

    def log_prob_grad(self, raw: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw = np.asarray(raw, dtype=float)
        mu, sigma = self.params(raw)
        x = np.asarray(action, dtype=float)
        t = _tn_terms(mu, sigma)
        zz = (x - mu) / sigma
        lp = (-0.5 * zz * zz - np.log(sigma) - _HALF_LOG_2PI - np.log(t.z)).sum(axis=-1)
        d_mu = zz / sigma - t.dz_dmu / t.z
        d_sigma = zz * zz / sigma - 1.0 / sigma - t.dz_dsigma / t.z
        grad = np.concatenate(
            [d_mu * (1.0 - mu * mu), d_sigma * sigmoid(raw[..., ACTION_DIM:])], axis=-1
        )
        return lp, grad

    def entropy_grad(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raw = np.asarray(raw, dtype=float)
        mu, sigma = self.params(raw)
        t = _tn_terms(mu, sigma)
        fa, fb = norm_pdf(t.a), norm_pdf(t.b)
        n = t.a * fa - t.b * fb
        h = (_HALF_LOG_2PIE + np.log(sigma) + np.log(t.z) + n / (2.0 * t.z)).sum(axis=-1)
        # d(x phi(x))/dx = phi(x) (1 - x^2); a and b move with mu and sigma.
        ga = fa * (1.0 - t.a * t.a)
        gb = fb * (1.0 - t.b * t.b)
        dn_dmu = (-ga + gb) / sigma
        dn_dsigma = (-t.a * ga + t.b * gb) / sigma

        def dh(dz, dn):
            return dz / t.z + dn / (2.0 * t.z) - n * dz / (2.0 * t.z * t.z)

        d_mu = dh(t.dz_dmu, dn_dmu)
        d_sigma = 1.0 / sigma + dh(t.dz_dsigma, dn_dsigma)
        grad = np.concatenate(
            [d_mu * (1.0 - mu * mu), d_sigma * sigmoid(raw[..., ACTION_DIM:])], axis=-1
        )
        return h, grad


HEADS = {"beta": BetaHead, "trunc_normal": TruncNormalHead}


def make_head(name: str):
    try:
        return HEADS[name]()
    except KeyError:
        raise ValueError(f"unknown action head {name!r}; choose from {sorted(HEADS)}") from None
