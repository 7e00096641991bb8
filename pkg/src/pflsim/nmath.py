"""Dense symmetric linear algebra and special functions.

Self-contained numerical kernels used by the privacy accountant and the
Kronecker-factored preconditioner: symmetric eigendecomposition, inverse
fourth roots of PSD matrices, log-binomial coefficients for a real upper
index, erfc in log space, and a signed log-sum-exp.

All matrices are 2-D float64 numpy arrays (row-major).  Everything here is
pure and reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotPSDError, ShapeError

Matrix = np.ndarray

NEG_INF = float("-inf")

# Absolute asymmetry tolerated by sym_eigen, relative to the matrix scale.
_SYM_TOL = 1e-9


def as_matrix(m) -> Matrix:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class SymEigen:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are ascending; ``eigenvectors`` holds orthonormal
    eigenvectors as columns, so ``Q @ diag(w) @ Q.T`` reconstructs the input.
    """

    eigenvalues: np.ndarray
    eigenvectors: Matrix

    def reconstruct(self) -> Matrix:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def sym_eigen(m) -> SymEigen:
    """Eigendecomposition of a symmetric matrix.

    Raises ShapeError if the input is not square or departs from symmetry
    by more than ``1e-9`` relative to its magnitude.
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if a.size and float(np.abs(a - a.T).max()) > _SYM_TOL * scale:
        raise ShapeError("matrix is not symmetric")
    sym = (a + a.T) / 2.0
    w, q = np.linalg.eigh(sym)
    return SymEigen(eigenvalues=w, eigenvectors=q)


def inv_fourth_root(m, ridge: float = 0.0) -> Matrix:
    """``(m + ridge*I)**(-1/4)`` for a symmetric PSD matrix.

    ``ridge`` must be positive whenever ``m`` may be singular.  Raises
    NotPSDError if any ridged eigenvalue is below ``-1e-9``, or is
    non-positive (so the inverse root does not exist).
    """
    if ridge < 0:
        raise DomainError(f"ridge must be >= 0, got {ridge}")
    eig = sym_eigen(m)
    lam = eig.eigenvalues + ridge
    lo = float(lam.min(initial=1.0))
    if lo < -1e-9:
        raise NotPSDError(f"eigenvalue {lo - ridge:.3e} below -1e-9 after ridge {ridge:.3e}")
    if lo <= 0.0:
        raise NotPSDError("matrix singular after ridge; pass ridge > 0")
    q = eig.eigenvectors
    root = (q * lam**-0.25) @ q.T
    return (root + root.T) / 2.0


def log_binom(n: float, k: int) -> float:
    """``log |C(n, k)|`` via log-gamma, for real ``n >= 0`` and integer ``k >= 0``.

    For integer ``n`` this reproduces Pascal's triangle exactly (``-inf`` for
    ``k > n``).  For non-integer ``n`` the generalized coefficient
    ``gamma(n+1) / (gamma(k+1) * gamma(n-k+1))`` may be negative once
    ``k > n``; only the log-magnitude is returned and the sign is the
    caller's concern.
    """
    if not float(k).is_integer() or k < 0:
        raise DomainError(f"k must be a non-negative integer, got {k}")
    if not math.isfinite(n) or n < 0:
        raise DomainError(f"n must be finite and >= 0, got {n}")
    k = int(k)
    if k == 0:
        return 0.0
    if float(n).is_integer():
        n_i = round(n)
        if k > n_i:
            return NEG_INF
        return math.lgamma(n_i + 1) - math.lgamma(k + 1) - math.lgamma(n_i - k + 1)
    # Non-integer n: n - k + 1 is never a pole; lgamma returns log|gamma|.
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def binom_sign(n: float, k: int) -> int:
    """Sign of the generalized binomial coefficient ``C(n, k)``."""
    if k <= n:
        return 1
    if float(n).is_integer():
        return 0  # C(n, k) == 0 for integer n < k
    negative_factors = k - math.ceil(n)
    return -1 if negative_factors % 2 else 1


def erfc(x: float) -> float:
    """Complementary error function (double precision)."""
    return math.erfc(x)


def log_erfc(x: float) -> float:
    """``log(erfc(x))``, accurate far into the tail.

    ``math.erfc`` underflows to zero near ``x = 26.5``; beyond that the
    Laurent expansion of ``log(erfc(x))`` at infinity is used, which is
    already accurate to ~1e-14 well before the switchover.
    """
    r = math.erfc(x)
    if r > 0.0:
        return math.log(r)
    return (
        -math.log(math.pi) / 2
        - math.log(x)
        - x * x
        - 0.5 * x**-2
        + 0.625 * x**-4
        - 37.0 / 24.0 * x**-6
        + 353.0 / 64.0 * x**-8
    )


def log_sum_exp(terms) -> tuple[int, float]:
    """Signed log-sum-exp: ``sum_i s_i * exp(m_i)`` as ``(sign, log|sum|)``.

    ``terms`` is a non-empty iterable of ``(sign, log_magnitude)`` pairs.
    Exact cancellation (and the empty-magnitude case) returns ``(0, -inf)``.
    The result is invariant to the order of the terms: the mantissa sum uses
    ``math.fsum``, which is exactly rounded.
    """
    pairs = [(s, lm) for s, lm in terms]
    if not pairs:
        raise ValueError("log_sum_exp of an empty sequence")
    m = max((lm for s, lm in pairs if s != 0), default=NEG_INF)
    if m == NEG_INF:
        return (0, NEG_INF)
    total = math.fsum(
        (1.0 if s > 0 else -1.0) * math.exp(lm - m) for s, lm in pairs if s != 0 and lm != NEG_INF
    )
    if total == 0.0:
        return (0, NEG_INF)
    return ((1 if total > 0 else -1), m + math.log(abs(total)))


def signed_log_add(a: tuple[int, float], b: tuple[int, float]) -> tuple[int, float]:
    """Accumulate one signed log-space term onto another."""
    return log_sum_exp((a, b))
