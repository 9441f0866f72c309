"""Prior families, histogram-to-distribution fitting, and the flattened
parameter assembly used by the sampler.

Allocation rows get Dirichlet priors fitted to pooled expert histograms by
least squares on the Beta-marginal bin probabilities; inflows and noise
magnitudes get truncated-normal, uniform or half-Cauchy priors, optionally
fitted to quantile constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .elicitation import ElicitedHistogram


class PriorError(ValueError):
    pass


class FitDiverged(PriorError):
    """Dirichlet fit objective stayed above the acceptance threshold."""


class Infeasible(PriorError):
    """Quantile constraints cannot be met by the requested family."""


# --- scalar prior families --------------------------------------------------

@dataclass(frozen=True)
class TruncatedNormal:
    mu: float
    s: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if self.s <= 0:
            raise PriorError("truncated normal scale must be positive")
        if not self.lower < self.upper:
            raise PriorError("truncation bounds must be ordered")

    def _frozen(self):
        a = (self.lower - self.mu) / self.s
        b = (self.upper - self.mu) / self.s
        return stats.truncnorm(a, b, loc=self.mu, scale=self.s)

    def logpdf(self, x):
        return self._frozen().logpdf(x)

    def cdf(self, x):
        return self._frozen().cdf(x)

    def sample(self, rng, n):
        return self._frozen().rvs(size=n, random_state=rng)


@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise PriorError("uniform bounds must be ordered")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where((x >= self.lower) & (x <= self.upper),
                       -math.log(self.upper - self.lower), -np.inf)
        return out if out.ndim else float(out)

    def cdf(self, x):
        return np.clip((x - self.lower) / (self.upper - self.lower), 0.0, 1.0)

    def sample(self, rng, n):
        return rng.uniform(self.lower, self.upper, size=n)


@dataclass(frozen=True)
class HalfCauchy:
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise PriorError("half-Cauchy scale must be positive")

    def logpdf(self, x):
        return stats.halfcauchy(scale=self.scale).logpdf(x)

    def cdf(self, x):
        return stats.halfcauchy(scale=self.scale).cdf(x)

    def sample(self, rng, n):
        return stats.halfcauchy(scale=self.scale).rvs(size=n, random_state=rng)


ScalarPrior = TruncatedNormal | Uniform | HalfCauchy


@dataclass(frozen=True)
class Dirichlet:
    """Dirichlet prior over one source node's allocation row."""

    alpha: tuple[float, ...]

    def __post_init__(self):
        if len(self.alpha) < 2:
            raise PriorError("Dirichlet needs at least 2 components")
        if any(a <= 0 for a in self.alpha):
            raise PriorError("Dirichlet alpha must be strictly positive")

    @property
    def dim(self) -> int:
        return len(self.alpha)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
            return -np.inf
        a = np.asarray(self.alpha)
        # guard log(0) for alpha < 1 components at the boundary
        if np.any((x == 0) & (a < 1)):
            return -np.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where((a == 1.0), 0.0, (a - 1.0) * np.log(np.clip(x, 1e-300, None)))
        return float(special.gammaln(a.sum()) - special.gammaln(a).sum() + terms.sum())

    def logpdf_batch(self, x: np.ndarray) -> np.ndarray:
        """Vectorized logpdf over an (n, dim) batch; -inf off the simplex."""
        x = np.atleast_2d(x)
        a = np.asarray(self.alpha)
        const = float(special.gammaln(a.sum()) - special.gammaln(a).sum())
        bad = (np.any(x < 0, axis=1)
               | (np.abs(x.sum(axis=1) - 1.0) > 1e-9)
               | np.any((x == 0) & (a < 1), axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a == 1.0, 0.0,
                             (a - 1.0) * np.log(np.clip(x, 1e-300, None)))
        out = const + terms.sum(axis=1)
        out[bad] = -np.inf
        return out

    def sample(self, rng, n):
        x = rng.dirichlet(self.alpha, size=n)
        return x / x.sum(axis=1, keepdims=True)


def beta_marginal_cdf(alpha, i: int, x: float) -> float:
    """CDF of component i's Beta marginal of a Dirichlet(alpha)."""
    a = np.asarray(alpha, dtype=float)
    return float(special.betainc(a[i], a.sum() - a[i], np.clip(x, 0.0, 1.0)))


# --- histogram fitting ------------------------------------------------------

def _dirichlet_objective(alpha, histograms: list[ElicitedHistogram]) -> float:
    total = 0.0
    for i, h in enumerate(histograms):
        edges = h.bin_edges()
        cdf_vals = np.array([beta_marginal_cdf(alpha, i, x) for x in edges])
        probs = np.diff(cdf_vals)
        total += float(np.sum((probs - np.asarray(h.bin_probs)) ** 2))
    return total


def _moment_matched_alpha(histograms: list[ElicitedHistogram]) -> np.ndarray:
    """Initial alpha from bin-midpoint means/variances of each marginal."""
    means, concs = [], []
    for h in histograms:
        edges = h.bin_edges()
        mids = (edges[:-1] + edges[1:]) / 2
        p = np.asarray(h.bin_probs)
        m = float(p @ mids)
        v = float(p @ (mids - m) ** 2) + 1e-6
        means.append(max(m, 1e-3))
        concs.append(max(m * (1 - m) / v - 1.0, 1.0))
    a0 = np.asarray(means) * float(np.mean(concs))
    return np.clip(a0, 1e-2, None)


def fit_dirichlet(histograms: list[ElicitedHistogram], *, n_starts: int = 5,
                  max_objective: float = 0.5, seed: int = 0) -> tuple[np.ndarray, float]:
    """Least-squares fit of Dirichlet hyperparameters to marginal histograms.

    Minimizes the squared difference between each Beta-marginal bin
    probability and the pooled histogram, summed over all outgoing edges of
    the source node. Nelder-Mead in log(alpha) space with multi-start.
    Returns (alpha, objective value).
    """
    if len(histograms) < 2:
        raise PriorError("need >= 2 marginals; single-edge rows are fixed at phi = 1")
    for h in histograms:
        if h.support != (0.0, 1.0):
            raise PriorError("allocation histograms must have support [0, 1]")
    rng = np.random.default_rng(seed)
    a0 = _moment_matched_alpha(histograms)
    best_alpha, best_obj = a0, _dirichlet_objective(a0, histograms)
    for k in range(n_starts):
        start = np.log(a0) + (rng.normal(0, 0.5, size=len(a0)) if k else 0.0)
        res = optimize.minimize(
            lambda u: _dirichlet_objective(np.exp(u), histograms),
            start, method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 2000},
        )
        if res.fun < best_obj:
            best_obj = float(res.fun)
            best_alpha = np.exp(res.x)
    if best_obj > max_objective:
        raise FitDiverged(f"Dirichlet fit objective {best_obj} exceeds {max_objective}")
    return best_alpha, best_obj


def fit_truncnormal_quantiles(constraints: list[tuple[float, float]],
                              lower: float, upper: float,
                              *, max_residual: float = 1e-3) -> TruncatedNormal:
    """Find (mu, s) matching CDF constraints [(x, target prob), ...]."""
    if len(constraints) < 2:
        raise PriorError("need at least 2 quantile constraints")
    xs = [x for x, _ in constraints]
    ps = [p for _, p in constraints]
    if any(not 0 < p < 1 for p in ps):
        raise PriorError("target CDF values must be in (0, 1)")
    order = np.argsort(xs)
    if np.any(np.diff(np.asarray(ps)[order]) <= 0):
        raise Infeasible("target CDF values must increase with x")

    def residuals(params):
        mu, log_s = params
        tn = TruncatedNormal(mu, math.exp(log_s), lower, upper)
        return [tn.cdf(x) - p for x, p in constraints]

    finite = [b for b in (lower, upper) if math.isfinite(b)]
    center = np.mean(xs)
    span = max(np.ptp(xs), 1e-3) if len(finite) < 2 else (upper - lower) / 2
    best = None
    for mu0, s0 in [(center, span), (center, span / 4), (center - span, span),
                    (center + span, span), (center, 4 * span)]:
        res = optimize.least_squares(residuals, [mu0, math.log(s0)], method="lm")
        if best is None or res.cost < best.cost:
            best = res
    resid = float(np.max(np.abs(best.fun)))
    if resid > max_residual:
        raise Infeasible(f"quantile constraints unmet; max residual {resid} in CDF units")
    return TruncatedNormal(float(best.x[0]), float(math.exp(best.x[1])), lower, upper)


def fit_scalar_histogram(h: ElicitedHistogram, lower: float, upper: float,
                         *, max_objective: float = 0.5) -> TruncatedNormal:
    """Fit a truncated normal to a pooled histogram (1-D analogue of the
    Dirichlet bin-probability least squares)."""
    edges = h.bin_edges()
    target = np.asarray(h.bin_probs)

    def objective(params):
        mu, log_s = params
        tn = TruncatedNormal(mu, math.exp(log_s), lower, upper)
        return float(np.sum((np.diff(tn.cdf(edges)) - target) ** 2))

    mids = (edges[:-1] + edges[1:]) / 2
    m = float(target @ mids)
    v = max(float(target @ (mids - m) ** 2), 1e-8)
    res = optimize.minimize(objective, [m, 0.5 * math.log(v)], method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-14, "maxiter": 2000})
    if res.fun > max_objective:
        raise FitDiverged(f"truncated-normal fit objective {res.fun} exceeds {max_objective}")
    return TruncatedNormal(float(res.x[0]), float(math.exp(res.x[1])), lower, upper)


# --- assembly ---------------------------------------------------------------

@dataclass(frozen=True)
class ParamBlock:
    """One contiguous slice of the flattened parameter vector theta."""

    name: str
    dist: Dirichlet | ScalarPrior
    offset: int

    @property
    def size(self) -> int:
        return self.dist.dim if isinstance(self.dist, Dirichlet) else 1


class PriorAssembly:
    """Deterministically ordered priors for every sampled component of theta.

    Blocks appear in the order they were added; the flattened layout is
    documented by `labels()`. Parameters excluded from inference are carried
    as fixed values.
    """

    def __init__(self):
        self.blocks: list[ParamBlock] = []
        self.fixed: dict[str, float] = {}
        self._names: set[str] = set()

    def add(self, name: str, dist: Dirichlet | ScalarPrior) -> ParamBlock:
        if name in self._names:
            raise PriorError(f"duplicate parameter block {name!r}")
        block = ParamBlock(name, dist, self.dim)
        self.blocks.append(block)
        self._names.add(name)
        return block

    def add_fixed(self, name: str, value: float):
        if name in self._names:
            raise PriorError(f"duplicate parameter block {name!r}")
        self.fixed[name] = float(value)
        self._names.add(name)

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    def labels(self) -> list[str]:
        out = []
        for b in self.blocks:
            if b.size == 1:
                out.append(b.name)
            else:
                out.extend(f"{b.name}[{k}]" for k in range(b.size))
        return out

    def block(self, name: str) -> ParamBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise PriorError(f"no parameter block {name!r}")

    def slice(self, name: str) -> slice:
        b = self.block(name)
        return slice(b.offset, b.offset + b.size)

    def logpdf(self, theta: np.ndarray) -> float:
        """Sum of component log densities; -inf off support."""
        total = 0.0
        for b in self.blocks:
            x = theta[b.offset:b.offset + b.size]
            lp = b.dist.logpdf(x if b.size > 1 else float(x[0]))
            if not np.isfinite(lp):
                return -np.inf
            total += float(lp)
        return total

    def logpdf_batch(self, thetas: np.ndarray) -> np.ndarray:
        """Vectorized logpdf over an (n, dim) batch."""
        thetas = np.atleast_2d(thetas)
        total = np.zeros(thetas.shape[0])
        for b in self.blocks:
            x = thetas[:, b.offset:b.offset + b.size]
            if isinstance(b.dist, Dirichlet):
                lp = b.dist.logpdf_batch(x)
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    lp = np.asarray(b.dist.logpdf(x[:, 0]))
            total = total + np.where(np.isfinite(lp), lp, -np.inf)
        return total

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """(n, dim) array of i.i.d. prior draws."""
        out = np.empty((n, self.dim))
        for b in self.blocks:
            draw = b.dist.sample(rng, n)
            out[:, b.offset:b.offset + b.size] = np.asarray(draw).reshape(n, b.size)
        return out
