"""Group-level (epsilon, delta)-DP accounting for subsampled Gaussian mechanisms.

The accountant bounds the Renyi divergence of one sampled-Gaussian step by

    xi(alpha | q) = log(A_alpha) / (alpha - 1),
    A_alpha = E_{z ~ mu0} [ (mu(z) / mu0(z))**alpha ],

where ``mu0 = N(0, sigma^2)``, ``mu1 = N(1, sigma^2)`` and
``mu = (1-q) mu0 + q mu1`` is the sampling mixture, with the noise scale
``sigma`` expressed in units of the clipping norm (sensitivity 1).  RDP
composes additively over steps and converts to (epsilon, delta)-DP via

    eps(alpha) = T*xi + log((alpha-1)/alpha) - (log(delta) + log(alpha))/(alpha-1)

minimised over a grid of orders alpha > 1.

For integer alpha, A_alpha expands into a finite binomial sum with terms
``C(alpha,k) (1-q)^(alpha-k) q^k exp((k^2-k)/(2 sigma^2))``.  For fractional
alpha the binomial series is infinite and alternating past ``k > alpha``; it
is split at the crossover point ``z1`` of the mixture densities and each
half-line integral contributes an erfc factor.  Both branches are evaluated
in signed log space.

Group-level guarantees follow by feeding the group sampling rate
``q = client_prob * providers_per_round / min_group_count`` and one
composition step per federated round (rounds that sample zero clients still
add noise and still count).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from .errors import CalibrationError, ConfigError, ConvergenceError, DomainError
from .nmath import NEG_INF, binom_sign, log_binom, log_erfc, log_sum_exp, signed_log_add

_LOG_HALF = math.log(0.5)
_MAX_SERIES_TERMS = 10**6
_REL_TRUNCATION = math.log(1e-12)


@dataclass(frozen=True)
class SgmParams:
    """One iterated sampled-Gaussian mechanism: sampling rate, noise, steps."""

    q: float
    sigma: float
    steps: int

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ConfigError(f"sampling rate must be in [0, 1], got {self.q}")
        if not self.sigma > 0.0:
            raise ConfigError(f"noise multiplier must be > 0, got {self.sigma}")
        if self.steps < 1 or not float(self.steps).is_integer():
            raise ConfigError(f"steps must be an integer >= 1, got {self.steps}")


@dataclass(frozen=True)
class AlphaGrid:
    """Ascending Renyi orders, all > 1."""

    orders: tuple

    def __post_init__(self):
        if not self.orders:
            raise ConfigError("alpha grid must be non-empty")
        if any(a <= 1.0 for a in self.orders):
            raise ConfigError("all alpha orders must be > 1")
        if any(b <= a for a, b in zip(self.orders, self.orders[1:])):
            raise ConfigError("alpha orders must be strictly ascending")

    @classmethod
    def default(cls) -> "AlphaGrid":
        orders = sorted(
            {float(a) for a in range(2, 257)}
            | {1.25, 1.5, 1.75}
            | {a + 0.5 for a in range(2, 64)}
        )
        return cls(orders=tuple(orders))


@dataclass(frozen=True)
class PrivacySpend:
    """(epsilon, delta) spend with the grid order attaining the minimum."""

    epsilon: float
    delta: float
    best_alpha: float


def _xlogy(a: float, x: float) -> float:
    """``a * log(x)`` with the ``a == 0`` convention of 0 (for any x >= 0)."""
    if a == 0.0:
        return 0.0
    if x == 0.0:
        return NEG_INF if a > 0 else math.inf
    return a * math.log(x)


def _validate_q_sigma(q: float, sigma: float) -> None:
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"sampling rate must be in [0, 1], got {q}")
    if not sigma > 0.0:
        raise DomainError(f"sigma must be > 0, got {sigma}")


def xi_integer(alpha: int, q: float, sigma: float) -> float:
    """Renyi bound ``xi(alpha | q)`` for integer order ``alpha >= 2``.

    Uses the exact finite binomial expansion of ``A_alpha``; at ``q = 1`` it
    reduces to the pure Gaussian value ``alpha / (2 sigma^2)`` and at
    ``q = 0`` to zero.
    """
    if not float(alpha).is_integer() or alpha < 2:
        raise DomainError(f"integer branch needs integer alpha >= 2, got {alpha}")
    _validate_q_sigma(q, sigma)
    if q == 0.0:
        return 0.0
    alpha = int(alpha)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    terms = []
    for k in range(alpha + 1):
        lm = (
            log_binom(alpha, k)
            + _xlogy(k, q)
            + _xlogy(alpha - k, 1.0 - q)
            + (k * k - k) * inv2s2
        )
        terms.append((1, lm))
    _, log_a = log_sum_exp(terms)
    return max(0.0, log_a / (alpha - 1))


def xi_fractional(alpha: float, q: float, sigma: float) -> float:
    """Renyi bound ``xi(alpha | q)`` for non-integer order ``alpha > 1``.

    The integral defining ``A_alpha`` is split at the mixture crossover
    ``z1 = sigma^2 * log(1/q - 1) + 1/2`` (where ``(1-q) mu0 = q mu1``), each
    side expanded into a binomial series whose terms carry an erfc factor:

        sum_k C(a,k) (1-q)^(a-k) q^k     e^((k^2-k)/2s^2)  erfc((k-z1)/(s sqrt 2))/2
      + sum_k C(a,k) (1-q)^k     q^(a-k) e^((j^2-j)/2s^2)  erfc((z1-j)/(s sqrt 2))/2

    with ``j = alpha - k``.  Signs alternate once ``k > alpha``; the series is
    accumulated with signed log-sum-exp and truncated when a term has
    contributed less than 1e-12 of the running total three times in a row.
    """
    if float(alpha).is_integer() or alpha <= 1.0:
        raise DomainError(f"fractional branch needs non-integer alpha > 1, got {alpha}")
    _validate_q_sigma(q, sigma)
    if q == 0.0:
        return 0.0
    if q == 1.0:
        # No subsampling: plain Gaussian mechanism, closed form.
        return alpha / (2.0 * sigma * sigma)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    sqrt2_sigma = math.sqrt(2.0) * sigma
    z1 = sigma * sigma * math.log(1.0 / q - 1.0) + 0.5
    log_q = math.log(q)
    log_1mq = math.log(1.0 - q)

    a0 = (0, NEG_INF)  # integral over z < z1
    a1 = (0, NEG_INF)  # integral over z > z1
    quiet_terms = 0
    k = 0
    while k < _MAX_SERIES_TERMS:
        lb = log_binom(alpha, k)
        sign = binom_sign(alpha, k)
        j = alpha - k
        ls0 = lb + k * log_q + j * log_1mq + (k * k - k) * inv2s2
        ls0 += _LOG_HALF + log_erfc((k - z1) / sqrt2_sigma)
        ls1 = lb + j * log_q + k * log_1mq + (j * j - j) * inv2s2
        ls1 += _LOG_HALF + log_erfc((z1 - j) / sqrt2_sigma)
        a0 = signed_log_add(a0, (sign, ls0))
        a1 = signed_log_add(a1, (sign, ls1))
        total_sign, total_log = signed_log_add(a0, a1)
        if k > alpha and max(ls0, ls1) < total_log + _REL_TRUNCATION:
            quiet_terms += 1
            if quiet_terms >= 3:
                break
        else:
            quiet_terms = 0
        k += 1
    else:
        raise ConvergenceError(
            f"fractional-alpha series did not converge after {_MAX_SERIES_TERMS} terms"
        )
    if total_sign <= 0:
        # A_alpha >= 1 mathematically; a non-positive sum is cancellation noise.
        return 0.0
    return max(0.0, total_log / (alpha - 1.0))


def xi(alpha: float, q: float, sigma: float) -> float:
    """Renyi bound for one sampled-Gaussian step at any order ``alpha > 1``."""
    if float(alpha).is_integer():
        return xi_integer(int(alpha), q, sigma)
    return xi_fractional(alpha, q, sigma)


def compose_and_convert(
    params: SgmParams, delta: float, grid: AlphaGrid | None = None
) -> PrivacySpend:
    """Compose ``steps`` mechanism applications and convert RDP to (eps, delta)-DP.

    Returns the grid minimum of
    ``steps * xi(alpha) + log((alpha-1)/alpha) - (log(delta) + log(alpha)) / (alpha-1)``.
    """
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must be in (0, 1), got {delta}")
    grid = grid if grid is not None else AlphaGrid.default()
    log_delta = math.log(delta)
    best_eps = math.inf
    best_alpha = grid.orders[0]
    for alpha in grid.orders:
        rdp = params.steps * xi(alpha, params.q, params.sigma)
        eps = rdp + math.log((alpha - 1.0) / alpha) - (log_delta + math.log(alpha)) / (alpha - 1.0)
        if eps < best_eps:
            best_eps = eps
            best_alpha = alpha
    return PrivacySpend(epsilon=max(0.0, best_eps), delta=delta, best_alpha=best_alpha)


def calibrate_sigma(
    target_epsilon: float,
    delta: float = 1e-5,
    *,
    q: float,
    steps: int,
    grid: AlphaGrid | None = None,
    bracket: tuple = (0.1, 1000.0),
    max_iter: int = 200,
    tol: float = 1e-4,
) -> float:
    """Smallest noise multiplier (within ``tol``) meeting a target epsilon.

    Bisects ``sigma`` over ``bracket`` until ``eps(sigma) <= target_epsilon``
    while ``eps(sigma * (1 - tol)) > target_epsilon``.  Degenerate cases:
    ``q == 0`` spends no privacy at any noise level, so the bracket floor is
    returned; a target unreachable even at the bracket ceiling raises
    CalibrationError.
    """
    if not target_epsilon > 0.0:
        raise ConfigError(f"target epsilon must be > 0, got {target_epsilon}")
    lo, hi = bracket
    if not (0.0 < lo < hi):
        raise ConfigError(f"invalid bracket {bracket}")
    if q == 0.0:
        return lo

    def eps_at(sigma: float) -> float:
        return compose_and_convert(SgmParams(q=q, sigma=sigma, steps=steps), delta, grid).epsilon

    if eps_at(hi) > target_epsilon:
        raise CalibrationError(
            f"epsilon {target_epsilon} unreachable with sigma <= {hi} (q={q}, steps={steps})"
        )
    if eps_at(lo) <= target_epsilon:
        return lo
    for _ in range(max_iter):
        if hi - lo <= tol * hi:
            break
        mid = math.sqrt(lo * hi)
        if eps_at(mid) <= target_epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def group_sampling_rate(
    client_prob: float, providers_per_round: int, min_group_count: int
) -> float:
    """Per-round sampling probability of one provider group.

    A group is touched when its client is sampled (probability
    ``client_prob``) and the client's local batch of groups contains it
    (probability at most ``providers_per_round / min_group_count``); the
    product is clamped to [0, 1].
    """
    if min_group_count < 1:
        raise ConfigError(f"min_group_count must be >= 1, got {min_group_count}")
    if not 0.0 <= client_prob <= 1.0:
        raise ConfigError(f"client probability must be in [0, 1], got {client_prob}")
    if providers_per_round < 1:
        raise ConfigError(f"providers_per_round must be >= 1, got {providers_per_round}")
    return min(1.0, client_prob * providers_per_round / min_group_count)
