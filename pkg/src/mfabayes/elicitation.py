"""Cooke-style weighting and pooling of expert histogram responses.

Experts answer fixed-interval questions as histograms over equal-width bins.
Seeding questions with known reference answers yield a calibration score
(chi-square p-value of interquantile hit rates) and an information score
(mean KL divergence from uniform); the product, normalized across experts,
weights a linear or logarithmic opinion pool.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

log = logging.getLogger(__name__)

HIST_SUM_TOL = 1e-9
DEFAULT_INTERQUANTILE = (0.05, 0.45, 0.45, 0.05)


class ElicitationError(ValueError):
    pass


class SupportMismatch(ElicitationError):
    """P puts mass where Q has none: KL divergence is infinite."""


class DegeneratePool(ElicitationError):
    """Logarithmic pool in which every bin is zeroed by some expert."""


class TargetTooNarrow(ElicitationError):
    """Rebinning target support truncates nonzero mass."""


@dataclass(frozen=True)
class ElicitedHistogram:
    """One expert's answer to one question: probabilities over equal bins."""

    support: tuple[float, float]
    bin_probs: tuple[float, ...]

    def __post_init__(self):
        lo, hi = self.support
        if not lo < hi:
            raise ElicitationError(f"support ({lo}, {hi}) is not increasing")
        p = np.asarray(self.bin_probs)
        if np.any(p < 0):
            raise ElicitationError("negative bin probability")
        if abs(p.sum() - 1.0) > HIST_SUM_TOL:
            raise ElicitationError(f"bin probabilities sum to {p.sum()!r}, not 1")

    @property
    def n_bins(self) -> int:
        return len(self.bin_probs)

    def bin_edges(self) -> np.ndarray:
        return np.linspace(self.support[0], self.support[1], self.n_bins + 1)

    def cdf(self, x: float) -> float:
        """Piecewise-linear CDF (uniform density within each bin)."""
        edges = self.bin_edges()
        cum = np.concatenate([[0.0], np.cumsum(self.bin_probs)])
        return float(np.interp(x, edges, cum))

    def quantile(self, p: float) -> float:
        """Inverse of the piecewise-linear CDF.

        Zero-probability bins make the CDF flat; np.interp then returns the
        left edge of the flat stretch, which is a consistent convention.
        """
        edges = self.bin_edges()
        cum = np.concatenate([[0.0], np.cumsum(self.bin_probs)])
        cum[-1] = 1.0
        return float(np.interp(p, cum, edges))


@dataclass(frozen=True)
class SeedingResponse:
    question_id: str
    histogram: ElicitedHistogram
    interquantile_probs: tuple[float, ...] = DEFAULT_INTERQUANTILE

    def __post_init__(self):
        q = np.asarray(self.interquantile_probs)
        if abs(q.sum() - 1.0) > HIST_SUM_TOL or np.any(q <= 0):
            raise ElicitationError("interquantile probabilities must be positive and sum to 1")


@dataclass(frozen=True)
class ExpertResponseSet:
    expert_id: str
    seeding: tuple[SeedingResponse, ...]
    target: dict[str, ElicitedHistogram] = field(default_factory=dict)


@dataclass(frozen=True)
class ExpertWeight:
    expert_id: str
    calibration: float
    information: float
    weight: float


def kl_divergence(p, q) -> float:
    """Discrete KL divergence sum_i p_i ln(p_i / q_i), with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ElicitationError("P and Q must have the same length")
    mask = p > 0
    if np.any(q[mask] == 0):
        raise SupportMismatch("P has mass where Q is zero")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def information_score(expert: ExpertResponseSet) -> float:
    """Mean KL divergence of the seeding histograms from uniform."""
    if not expert.seeding:
        raise ElicitationError("expert has no seeding responses")
    scores = []
    for resp in expert.seeding:
        h = resp.histogram
        uniform = np.full(h.n_bins, 1.0 / h.n_bins)
        scores.append(kl_divergence(h.bin_probs, uniform))
    return float(np.mean(scores))


def chi2_sf(s: float, df: int) -> float:
    """Chi-square survival P(X > s) via the regularized upper incomplete gamma."""
    return float(special.gammaincc(df / 2.0, s / 2.0))


def _interval_fractions(expert: ExpertResponseSet,
                        observations: dict[str, float]) -> np.ndarray:
    """Fraction of seeding observations in each interquantile interval.

    Interval edges come from each response's CDF at the cumulative levels
    implied by its interquantile probabilities (0.05/0.50/0.95 by default).
    Observations outside the declared support land in the adjacent tail
    interval, maximally penalizing calibration.
    """
    n_int = len(expert.seeding[0].interquantile_probs)
    counts = np.zeros(n_int)
    for resp in expert.seeding:
        if resp.question_id not in observations:
            raise ElicitationError(f"no observation for seeding question {resp.question_id!r}")
        levels = np.cumsum(resp.interquantile_probs)[:-1]
        edges = [resp.histogram.quantile(p) for p in levels]
        obs = observations[resp.question_id]
        counts[np.searchsorted(edges, obs, side="right")] += 1
    return counts / counts.sum()


def calibration_score(expert: ExpertResponseSet,
                      observations: dict[str, float]) -> float:
    """Cooke calibration: p-value of the likelihood-ratio statistic.

    The statistic is 2 n D_KL(P_l || Q) over n seeding questions, referred
    to a chi-square with (#intervals - 1) degrees of freedom.
    """
    if not expert.seeding:
        raise ElicitationError("expert has no seeding responses")
    q = np.asarray(expert.seeding[0].interquantile_probs)
    p = _interval_fractions(expert, observations)
    n = len(expert.seeding)
    s = 2.0 * n * kl_divergence(p, q)
    return chi2_sf(s, df=len(q) - 1)


def cooke_weights(experts: list[ExpertResponseSet],
                  observations: dict[str, float]) -> list[ExpertWeight]:
    """Normalized weights w_l proportional to C_l * K_l.

    Falls back to equal weights (with a warning) if every product is zero,
    so the study still produces a proper prior.
    """
    if not experts:
        raise ElicitationError("no experts")
    cs = [calibration_score(e, observations) for e in experts]
    ks = [information_score(e) for e in experts]
    products = [c * k for c, k in zip(cs, ks)]
    total = sum(products)
    if total == 0.0:
        log.warning("all Cooke products are zero; falling back to equal weights")
        ws = [1.0 / len(experts)] * len(experts)
    else:
        ws = [p / total for p in products]
    return [
        ExpertWeight(e.expert_id, c, k, w)
        for e, c, k, w in zip(experts, cs, ks, ws)
    ]


def _check_common_grid(histograms: list[ElicitedHistogram]):
    first = histograms[0]
    for h in histograms[1:]:
        if h.support != first.support or h.n_bins != first.n_bins:
            raise ElicitationError("histograms must share a common support and bin grid")


def pool_linear(histograms: list[ElicitedHistogram], weights) -> ElicitedHistogram:
    """Weighted mixture: bin-wise sum of w_l p_l."""
    _check_common_grid(histograms)
    w = np.asarray(weights, dtype=float)
    probs = np.stack([h.bin_probs for h in histograms])
    pooled = w @ probs
    return ElicitedHistogram(histograms[0].support, tuple(pooled / pooled.sum()))


def pool_logarithmic(histograms: list[ElicitedHistogram], weights) -> ElicitedHistogram:
    """Weighted geometric mean, renormalized; zero bins propagate."""
    _check_common_grid(histograms)
    w = np.asarray(weights, dtype=float)
    probs = np.stack([h.bin_probs for h in histograms])
    with np.errstate(divide="ignore"):
        logp = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), -np.inf)
    pooled_log = w @ np.where(np.isneginf(logp), -1e300, logp)
    pooled = np.where(np.any((probs == 0) & (w[:, None] > 0), axis=0), 0.0,
                      np.exp(pooled_log - pooled_log.max()))
    total = pooled.sum()
    if total == 0.0:
        raise DegeneratePool("every bin is zeroed by some expert")
    return ElicitedHistogram(histograms[0].support, tuple(pooled / total))


def rebin(h: ElicitedHistogram, target_support: tuple[float, float],
          target_bins: int) -> ElicitedHistogram:
    """Reassign mass to a new equal-width grid by bin overlap.

    Assumes uniform density within each source bin. The target support must
    cover all of the source's nonzero mass.
    """
    src_edges = h.bin_edges()
    tgt_edges = np.linspace(target_support[0], target_support[1], target_bins + 1)
    out = np.zeros(target_bins)
    for k, p in enumerate(h.bin_probs):
        if p == 0.0:
            continue
        lo, hi = src_edges[k], src_edges[k + 1]
        if lo < tgt_edges[0] - 1e-12 or hi > tgt_edges[-1] + 1e-12:
            raise TargetTooNarrow(
                f"source bin [{lo}, {hi}] extends beyond target support {target_support}"
            )
        overlap_lo = np.maximum(tgt_edges[:-1], lo)
        overlap_hi = np.minimum(tgt_edges[1:], hi)
        frac = np.clip(overlap_hi - overlap_lo, 0.0, None) / (hi - lo)
        out += p * frac
    # guard tiny float drift; total mass is preserved by construction
    out = out / out.sum()
    return ElicitedHistogram(tuple(target_support), tuple(out))
