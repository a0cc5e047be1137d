"""Pareto interpolation of top income shares from grouped data.

The estimator fits a local Pareto law at the tabulated bracket whose top
fraction is nearest the requested fractile, then reads the fractile threshold
and the income above it off the fitted law. At a tabulated fraction the
estimate reproduces the tabulated cumulative income exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FractileNotCoveredError, ParetoFitError
from .tabulation import CumulativeStats, Tabulation, cumulate

__all__ = [
    "ParetoBracketFit",
    "ShareEstimate",
    "select_bracket",
    "threshold_at",
    "top_income_at",
    "estimate_share_pi",
    "pi_share_from_stats",
]


@dataclass(frozen=True)
class ParetoBracketFit:
    """Local Pareto law anchored at one tabulated bracket.

    The implied upper-tail law is P(Y > y) = top_fraction * (y/threshold)^-exponent
    for y >= threshold. ``bracket`` is the 0-based position in descending
    threshold order.
    """

    bracket: int
    threshold: float
    top_fraction: float
    coefficient: float
    exponent: float


@dataclass(frozen=True)
class ShareEstimate:
    """A top-fractile estimate: threshold, income above it, and the share.

    ``method`` is "PI" or "ME". ``bracket`` is the reference bracket for PI,
    None for ME. ``extrapolated`` marks fractiles deeper in the tail than the
    top tabulated bracket.
    """

    fractile: float
    threshold: float
    top_income: float
    share: float
    method: str
    bracket: int | None = None
    extrapolated: bool = False


def select_bracket(stats: CumulativeStats, p: float) -> ParetoBracketFit:
    """Pick the bracket whose top fraction is nearest p (absolute distance).

    Ties go to the larger fraction, i.e. the lower threshold with more
    observations behind it. Raises FractileNotCoveredError when p exceeds the
    covered fraction, and ParetoFitError when the chosen bracket has no valid
    local Pareto law (zero threshold or coefficient <= 1).
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"fractile must be in (0, 1], got {p}")
    covered = stats.covered_fraction
    if p > covered:
        raise FractileNotCoveredError(p, covered)

    distance = np.abs(stats.top_fraction - p)
    best = np.flatnonzero(distance == distance.min())[-1]  # larger p_k wins ties

    coef = float(stats.pareto_coefficient[best])
    expo = float(stats.pareto_exponent[best])
    threshold = float(stats.thresholds[best])
    if threshold <= 0:
        raise ParetoFitError("no Pareto law at a zero threshold", bracket=int(best))
    if not np.isfinite(coef) or coef <= 1.0:
        raise ParetoFitError(
            f"local Pareto coefficient {coef} must exceed 1", bracket=int(best))
    return ParetoBracketFit(
        bracket=int(best),
        threshold=threshold,
        top_fraction=float(stats.top_fraction[best]),
        coefficient=coef,
        exponent=expo,
    )


def threshold_at(fit: ParetoBracketFit, p: float) -> float:
    """Income level where the top p fractile starts under the fitted law."""
    if p <= 0:
        raise ValueError(f"fractile must be positive, got {p}")
    return fit.threshold * (fit.top_fraction / p) ** (1.0 / fit.exponent)


def top_income_at(fit: ParetoBracketFit, p: float, population: float) -> float:
    """Total income of the top p fractile: returns times coefficient times
    the fractile threshold. Exact at p equal to the fitted fraction."""
    return population * p * fit.coefficient * threshold_at(fit, p)


def pi_share_from_stats(stats: CumulativeStats, p: float) -> ShareEstimate:
    """Pareto-interpolated share from precomputed cumulative statistics."""
    fit = select_bracket(stats, p)
    t_p = threshold_at(fit, p)
    s_p = top_income_at(fit, p, stats.population)
    return ShareEstimate(
        fractile=p,
        threshold=t_p,
        top_income=s_p,
        share=s_p / stats.total_income,
        method="PI",
        bracket=fit.bracket,
        extrapolated=p < float(stats.top_fraction[0]),
    )


def estimate_share_pi(tab: Tabulation, p: float) -> ShareEstimate:
    """Estimate the top p income share of a tabulation by Pareto interpolation."""
    return pi_share_from_stats(cumulate(tab), p)
