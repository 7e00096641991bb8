"""Independent oracles used by the test suite.

Each oracle deliberately avoids the code path it checks: the Renyi oracle
integrates the mixture densities by importance-sampled Monte Carlo (no
binomial series, no erfc), the edit-distance oracle is a memoized recursion
(the library uses iterative DP), and the brute-force eigen reconstruction
builds matrices from known spectra.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


def mc_renyi_sgm(q: float, sigma: float, alpha: float, n_samples: int, seed: int) -> float:
    """Monte-Carlo estimate of ``log(E_mu0[(mu/mu0)^alpha]) / (alpha - 1)``.

    mu0 = N(0, sigma^2), mu = (1-q) mu0 + q N(1, sigma^2).  Samples come from
    an equal mixture of N(c, sigma^2) for c = 0..ceil(alpha) (covering every
    bump of the integrand) with exact importance weights, and the control
    variate alpha*(mu/mu0 - 1) (whose expectation under mu0 is exactly zero)
    removes the first-order variance, which dominates when q is small.
    """
    rng = np.random.default_rng(seed)
    centers = np.arange(0.0, math.ceil(alpha) + 1.0)
    m = len(centers)
    log_norm = -math.log(sigma) - 0.5 * math.log(2.0 * math.pi)
    log_q = math.log(q) if q > 0 else -math.inf
    log_1mq = math.log(1.0 - q) if q < 1 else -math.inf
    total = 0.0
    done = 0
    chunk_size = 1_000_000
    while done < n_samples:
        n = min(chunk_size, n_samples - done)
        comp = rng.integers(0, m, n)
        z = rng.normal(centers[comp], sigma)
        l0 = -0.5 * (z / sigma) ** 2 + log_norm
        l1 = -0.5 * ((z - 1.0) / sigma) ** 2 + log_norm
        lmix = np.logaddexp(log_1mq + l0, log_q + l1)
        lprop = np.full(n, -np.inf)
        for c in centers:
            lprop = np.logaddexp(lprop, -0.5 * ((z - c) / sigma) ** 2 + log_norm)
        lprop -= math.log(m)
        ratio = np.exp(lmix - l0)
        integrand = np.exp(alpha * (lmix - l0))
        weight = np.exp(l0 - lprop)
        total += float(np.sum((integrand - 1.0 - alpha * (ratio - 1.0)) * weight))
        done += n
    a_alpha = 1.0 + total / n_samples  # + alpha * E[ratio - 1], which is 0
    return math.log(a_alpha) / (alpha - 1.0)


def recursive_levenshtein(a: str, b: str) -> int:
    """Memoized recursive edit distance (exponential formulation, cached)."""

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            rec(i - 1, j) + 1,
            rec(i, j - 1) + 1,
            rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return rec(len(a), len(b))


def random_spectrum_symmetric(n: int, eigenvalues: np.ndarray, seed: int) -> tuple:
    """Symmetric matrix with a known spectrum: Q diag(w) Q^T from a QR basis."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))  # deterministic orientation
    return (q * eigenvalues) @ q.T, q


def gaussian_tail_quadrature(x: float) -> float:
    """erfc(x) by adaptive quadrature of the Gaussian tail (scipy)."""
    from scipy import integrate

    val, _err = integrate.quad(lambda t: 2.0 / math.sqrt(math.pi) * math.exp(-t * t), x, np.inf)
    return val
