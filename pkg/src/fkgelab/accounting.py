"""Renyi-DP accounting for the private training loop.

Tracks two kinds of per-iteration events: a subsampled-Gaussian gradient
release and a subsampled private selection (Gumbel report-noisy-max plus a
Gaussian propose-test-release stage). Curves compose additively per order;
each selection event also contributes ``delta_t`` of approximation mass.

The gradient bound is implemented verbatim as 2 q^2 alpha / sigma. The
denominator looks like a typo for sigma^2 relative to the standard
subsampled-Gaussian bound, so a ``denominator`` switch offers both forms;
the verbatim one is the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np
from scipy.special import gammaln, logsumexp


class AccountingError(Exception):
    pass


DEFAULT_ALPHAS: tuple[float, ...] = tuple(
    [1.25, 1.5, 1.75, 2.0, 2.5]
    + [float(a) for a in range(3, 65)]
    + [128.0, 256.0, 512.0, 1024.0]
)


def gaussian_alpha_bound(q: float, sigma: float, alpha: float) -> float:
    """Largest admissible order for the subsampled-Gaussian bound at this
    (q, sigma, alpha): min of the two constraint branches."""
    L = math.log(1.0 + 1.0 / (q * (alpha - 1.0)))
    b1 = 0.5 * sigma**2 * L - 2.0 * math.log(sigma)
    denom = L + math.log(q * alpha) + 1.0 / (2.0 * sigma**2)
    if denom <= 0:
        return b1
    b2 = (0.5 * sigma**2 * L**2 - math.log(5.0) - 2.0 * math.log(sigma)) / denom
    return min(b1, b2)


def rdp_gaussian_subsampled(
    q: float, sigma: float, alpha: float, denominator: str = "sigma"
) -> tuple[float, bool]:
    """Subsampled-Gaussian RDP at order alpha, with a validity flag for the
    order constraint. Invalid orders must be dropped from curves."""
    if not (0.0 < q <= 1.0):
        raise ValueError("q must be in (0, 1]")
    if sigma <= 0 or alpha <= 1:
        raise ValueError("sigma must be positive and alpha > 1")
    denom = sigma if denominator == "sigma" else sigma**2
    eps = 2.0 * q**2 * alpha / denom
    valid = alpha <= gaussian_alpha_bound(q, sigma, alpha)
    return eps, valid


def rdp_selection_base(sigma_r: float, sigma_p: float, alpha: float) -> float:
    """Unsubsampled selection RDP: Gumbel bounded-range term plus Gaussian
    PTR term, composed additively."""
    if sigma_r <= 0 or sigma_p <= 0:
        raise ValueError("sigma_r and sigma_p must be positive")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    return alpha / (8.0 * sigma_r**2) + alpha / (2.0 * sigma_p**2)


def rdp_selection_subsampled(q: float, sigma_r: float, sigma_p: float, alpha: int) -> float:
    """Subsampling-amplified selection RDP at integer order alpha >= 2,
    evaluated in log space. The e^{eps(inf)} min-terms resolve to 2 because
    the mechanism's eps(inf) is unbounded."""
    if not float(alpha).is_integer() or alpha < 2:
        raise ValueError("alpha must be an integer >= 2")
    if not (0.0 <= q <= 1.0):
        raise ValueError("q must be in [0, 1]")
    alpha = int(alpha)
    if q == 0.0:
        return 0.0
    eps2 = rdp_selection_base(sigma_r, sigma_p, 2)
    # min{4(e^{eps(2)} - 1), 2 e^{eps(2)}} in log space
    log_min2 = min(math.log(4.0) + math.log(math.expm1(eps2)), math.log(2.0) + eps2)
    log_terms = [0.0]  # the +1
    lq = math.log(q)

    def log_binom(n: int, k: int) -> float:
        return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))

    log_terms.append(2.0 * lq + log_binom(alpha, 2) + log_min2)
    for j in range(3, alpha + 1):
        eps_j = rdp_selection_base(sigma_r, sigma_p, j)
        log_terms.append(j * lq + log_binom(alpha, j) + (j - 1) * eps_j + math.log(2.0))
    return float(logsumexp(log_terms)) / (alpha - 1.0)


@dataclass(frozen=True)
class GradientEvent:
    """One released noisy-gradient step."""

    q: float
    sigma: float
    denominator: str = "sigma"

    def eps_at(self, alpha: float) -> tuple[float, bool]:
        return rdp_gaussian_subsampled(self.q, self.sigma, alpha, self.denominator)

    @property
    def delta_cost(self) -> float:
        return 0.0


@dataclass(frozen=True)
class SelectionEvent:
    """One private-selection invocation (charged whether or not it released)."""

    q: float
    sigma_r: float
    sigma_p: float
    delta_t: float

    def eps_at(self, alpha: float) -> tuple[float, bool]:
        if not float(alpha).is_integer() or alpha < 2:
            return math.inf, False
        return rdp_selection_subsampled(self.q, self.sigma_r, self.sigma_p, int(alpha)), True

    @property
    def delta_cost(self) -> float:
        return self.delta_t


PrivacyEvent = Union[GradientEvent, SelectionEvent]


@dataclass(frozen=True)
class RdpCurve:
    alphas: tuple[float, ...]
    eps: tuple[float, ...]
    delta_hat: float = 0.0

    def __post_init__(self):
        if len(self.alphas) != len(self.eps):
            raise ValueError("alphas and eps must have equal length")
        if any(a <= 1 for a in self.alphas):
            raise ValueError("orders must exceed 1")
        if list(self.alphas) != sorted(set(self.alphas)):
            raise ValueError("orders must be strictly increasing")

    @classmethod
    def zero(cls, alphas: Sequence[float] = DEFAULT_ALPHAS) -> "RdpCurve":
        return cls(tuple(alphas), tuple(0.0 for _ in alphas), 0.0)


def compose_curve(curve: RdpCurve, event: PrivacyEvent) -> RdpCurve:
    """Pointwise-add the event's curve; orders where the event's bound is not
    defined are removed from the grid."""
    alphas, eps = [], []
    for a, e in zip(curve.alphas, curve.eps):
        contrib, valid = event.eps_at(a)
        if not valid:
            continue
        alphas.append(a)
        eps.append(e + contrib)
    if not alphas:
        raise AccountingError(
            "no valid RDP orders remain; increase sigma or decrease the sampling rate"
        )
    return RdpCurve(tuple(alphas), tuple(eps), curve.delta_hat + event.delta_cost)


def to_dp(curve: RdpCurve, delta_target: float) -> tuple[float, float]:
    """Convert to (epsilon, delta_total)-DP at the best order on the grid."""
    if not (0.0 < delta_target < 1.0):
        raise ValueError("delta_target must be in (0, 1)")
    if not curve.alphas:
        raise AccountingError("empty order grid")
    log_inv = math.log(1.0 / delta_target)
    eps = min(e + log_inv / (a - 1.0) for a, e in zip(curve.alphas, curve.eps))
    return eps, delta_target + curve.delta_hat


@dataclass(frozen=True)
class PrivacyLedger:
    """Immutable event log plus the running composed curve."""

    curve: RdpCurve
    n_events: int = 0

    @classmethod
    def empty(cls, alphas: Sequence[float] = DEFAULT_ALPHAS) -> "PrivacyLedger":
        return cls(RdpCurve.zero(alphas), 0)

    def record(self, event: PrivacyEvent) -> "PrivacyLedger":
        return PrivacyLedger(compose_curve(self.curve, event), self.n_events + 1)

    def converted(self, delta_target: float) -> tuple[float, float]:
        return to_dp(self.curve, delta_target)


def compose(ledger: PrivacyLedger, event: PrivacyEvent) -> PrivacyLedger:
    return ledger.record(event)


def check_budget(ledger: PrivacyLedger, epsilon_budget: float, delta_target: float) -> str:
    """'within' or 'exhausted'. An empty ledger is always within budget."""
    if ledger.n_events == 0:
        return "within"
    eps, delta_total = ledger.converted(delta_target)
    if eps >= epsilon_budget or delta_total >= 1.0:
        return "exhausted"
    return "within"


def export_ledger(ledger: PrivacyLedger, delta_target: float) -> str:
    """Structured-text export: one `alpha eps` row per order, then a summary."""
    lines = ["alpha\teps"]
    for a, e in zip(ledger.curve.alphas, ledger.curve.eps):
        lines.append(f"{a:g}\t{e:.12g}")
    if ledger.n_events:
        eps, delta_total = ledger.converted(delta_target)
    else:
        eps, delta_total = 0.0, delta_target
    lines.append(f"epsilon = {eps:.12g}")
    lines.append(f"delta_total = {delta_total:.12g}")
    lines.append(f"events = {ledger.n_events}")
    return "\n".join(lines) + "\n"
