"""Sequential Monte Carlo sampler with adaptive likelihood tempering.

Particles start as prior draws at temperature beta = 0. Each stage raises
beta by the largest increment keeping the relative effective sample size at
a target, reweights, resamples systematically when the ESS falls below a
threshold, and perturbs every particle with a few Metropolis-Hastings steps
targeting p(theta) L(theta)^beta. Proposals walk in unconstrained
coordinates: additive-log-ratio space for allocation rows, shifted-log
space for bounded scalars, so they never leave the support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .likelihood import LikelihoodModel, ObservationRecord
from .network import FlowNetwork
from .priors import Dirichlet, PriorAssembly

MIN_BETA_STEP = 1e-6


class SmcError(RuntimeError):
    pass


class Degenerate(SmcError):
    """ESS collapsed below 2: the prior and data are incompatible."""


@dataclass
class SmcConfig:
    n_particles: int = 10_000
    n_mh_steps: int = 10
    ess_threshold_frac: float = 0.5   # resample when ESS < frac * N
    target_rel_ess: float = 0.5       # adaptive beta keeps rel ESS at this
    seed: int | None = None
    initial_scale: float = 0.5
    target_acceptance: float = 0.25
    max_stages: int = 1000
    backend: str = "auto"

    def __post_init__(self):
        if not 0 < self.ess_threshold_frac <= 1:
            raise ValueError("ess_threshold_frac must be in (0, 1]")
        if self.n_mh_steps < 1:
            raise ValueError("n_mh_steps must be >= 1")


@dataclass
class ParticlePopulation:
    particles: np.ndarray          # (N, dim)
    log_weights: np.ndarray        # normalized: logsumexp = 0
    beta: float
    stage: int


@dataclass
class StageDiagnostics:
    beta: float
    ess: float
    acceptance: float
    scale: float
    resampled: bool


@dataclass
class SmcResult:
    population: ParticlePopulation
    stages: list[StageDiagnostics] = field(default_factory=list)

    @property
    def beta_schedule(self) -> list[float]:
        return [s.beta for s in self.stages]


def effective_sample_size(log_weights: np.ndarray) -> float:
    """ESS = 1 / sum w~_i^2 for normalized weights.

    Cross-checked against the equivalent N / (N * sum w~^2) form.
    """
    w = np.exp(log_weights - _logsumexp(log_weights))
    ess = 1.0 / np.sum(w ** 2)
    n = len(w)
    alt = n / (n * np.sum(w ** 2))
    assert abs(ess - alt) <= 1e-12 * max(ess, 1.0)
    return float(ess)


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    if np.isneginf(m):
        return -math.inf
    return float(m + np.log(np.sum(np.exp(x - m))))


def adapt_beta(log_weights: np.ndarray, log_lik: np.ndarray, beta: float,
               target_rel_ess: float) -> float:
    """Largest beta' in (beta, 1] keeping relative ESS >= target.

    Bisection on the incremental reweighting (beta' - beta) * log L; returns
    1 when even the full step satisfies the target. A minimum step guards
    against vanishing increments when the target is unattainable.
    """
    n = len(log_lik)
    finite = np.isfinite(log_lik)

    def rel_ess(b):
        lw = log_weights + (b - beta) * np.where(finite, log_lik, 0.0)
        lw = np.where(finite, lw, -np.inf)
        if not np.any(np.isfinite(lw)):
            return 0.0
        return effective_sample_size(lw) / n

    if rel_ess(1.0) >= target_rel_ess:
        return 1.0
    lo, hi = beta, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if rel_ess(mid) >= target_rel_ess:
            lo = mid
        else:
            hi = mid
    return min(max(lo, beta + MIN_BETA_STEP), 1.0)


def systematic_resample(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices of N systematic draws; expected copy count of i is N * w_i."""
    n = len(log_weights)
    w = np.exp(log_weights - _logsumexp(log_weights))
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(w), positions).clip(max=n - 1)


# --- reparameterization -----------------------------------------------------

class Reparameterization:
    """Bijection between theta and unconstrained proposal coordinates.

    Dirichlet rows use additive log ratios against the last component;
    scalars with a finite lower bound use log(x - lower); unbounded scalars
    pass through. The log Jacobian |d theta / d u| enters the MH target.
    """

    _EPS = 1e-12

    def __init__(self, assembly: PriorAssembly):
        self.assembly = assembly
        self.plan = []  # (kind, theta_slice, u_offset, extra)
        u_off = 0
        for b in assembly.blocks:
            sl = slice(b.offset, b.offset + b.size)
            if isinstance(b.dist, Dirichlet):
                self.plan.append(("alr", sl, u_off, b.size))
                u_off += b.size - 1
            else:
                lower = getattr(b.dist, "lower", -math.inf)
                if math.isfinite(lower):
                    self.plan.append(("log", sl, u_off, lower))
                else:
                    self.plan.append(("id", sl, u_off, None))
                u_off += 1
        self.u_dim = u_off

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        u = np.empty((theta.shape[0], self.u_dim))
        for kind, sl, off, extra in self.plan:
            x = theta[:, sl]
            if kind == "alr":
                xc = np.clip(x, self._EPS, None)
                u[:, off:off + extra - 1] = np.log(xc[:, :-1]) - np.log(xc[:, -1:])
            elif kind == "log":
                u[:, off] = np.log(np.clip(x[:, 0] - extra, self._EPS, None))
            else:
                u[:, off] = x[:, 0]
        return u

    def to_theta(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        theta = np.empty((u.shape[0], self.assembly.dim))
        for kind, sl, off, extra in self.plan:
            if kind == "alr":
                v = u[:, off:off + extra - 1]
                m = np.maximum(np.max(v, axis=1, keepdims=True), 0.0)
                ev = np.exp(v - m)
                denom = np.exp(-m) + ev.sum(axis=1, keepdims=True)
                theta[:, sl][:, :-1] = ev / denom
                theta[:, sl.stop - 1] = (np.exp(-m) / denom)[:, 0]
            elif kind == "log":
                theta[:, sl.start] = np.exp(u[:, off]) + extra
            else:
                theta[:, sl.start] = u[:, off]
        return theta

    def log_jacobian(self, theta: np.ndarray) -> np.ndarray:
        """log |d theta / d u| evaluated at theta."""
        theta = np.atleast_2d(theta)
        lj = np.zeros(theta.shape[0])
        for kind, sl, off, extra in self.plan:
            x = theta[:, sl]
            if kind == "alr":
                lj += np.log(np.clip(x, self._EPS, None)).sum(axis=1)
            elif kind == "log":
                lj += np.log(np.clip(x[:, 0] - extra, self._EPS, None))
        return lj


# --- sampler ----------------------------------------------------------------

def mh_perturb(particles: np.ndarray, log_lik: np.ndarray, beta: float,
               model: LikelihoodModel, repar: Reparameterization,
               n_steps: int, scale: float, rng: np.random.Generator):
    """n_steps of random-walk MH per particle at fixed beta.

    Targets p(theta) L(theta)^beta expressed in unconstrained coordinates
    (prior + tempered likelihood + Jacobian). Steps alternate between global
    moves (all coordinates, width = cloud std * adapted `scale`) and
    single-block moves (each particle perturbs one randomly chosen parameter
    block at a dimension-free 2.4/sqrt(d_block) scale), which keeps mixing
    alive in high dimension where global moves must stay tiny.
    Returns (particles, log_lik, global-move acceptance rate).
    """
    assembly = repar.assembly
    u = repar.to_unconstrained(particles)
    widths = np.std(u, axis=0)
    widths[~np.isfinite(widths) | (widths == 0)] = 1e-3

    # map each unconstrained coordinate to its parameter block
    block_of = np.empty(repar.u_dim, dtype=np.int64)
    block_dim = []
    for k, (kind, _, off, extra) in enumerate(repar.plan):
        d = extra - 1 if kind == "alr" else 1
        block_of[off:off + d] = k
        block_dim.append(d)
    block_dim = np.asarray(block_dim, dtype=float)
    n_blocks = len(repar.plan)

    log_prior = assembly.logpdf_batch(particles)
    tempered = np.where(np.isfinite(log_lik), beta * log_lik, -np.inf)
    log_post = log_prior + tempered + repar.log_jacobian(particles)

    n = len(particles)
    accepts_global = steps_global = 0
    for step in range(n_steps):
        noise = rng.standard_normal(u.shape)
        if step % 2 == 0 or n_blocks == 1:
            u_prop = u + scale * widths * noise
        else:
            chosen = rng.integers(n_blocks, size=n)
            mask = block_of[None, :] == chosen[:, None]
            jump = 2.4 / np.sqrt(block_dim[chosen])
            u_prop = u + np.where(mask, jump[:, None] * widths * noise, 0.0)
        theta_prop = repar.to_theta(u_prop)
        lp_prop = assembly.logpdf_batch(theta_prop)
        ll_prop = model.loglik_batch(theta_prop)
        tempered_prop = np.where(np.isfinite(ll_prop), beta * ll_prop, -np.inf)
        post_prop = lp_prop + tempered_prop + repar.log_jacobian(theta_prop)
        with np.errstate(invalid="ignore"):
            accept = np.log(rng.random(n)) < post_prop - log_post
        accept &= np.isfinite(post_prop)
        u[accept] = u_prop[accept]
        particles = np.where(accept[:, None], theta_prop, particles)
        log_lik = np.where(accept, ll_prop, log_lik)
        log_post = np.where(accept, post_prop, log_post)
        if step % 2 == 0 or n_blocks == 1:
            accepts_global += int(accept.sum())
            steps_global += 1
    return particles, log_lik, accepts_global / (n * max(steps_global, 1))


def run_smc(assembly: PriorAssembly, data: list[ObservationRecord],
            net: FlowNetwork, config: SmcConfig, *, model=None) -> SmcResult:
    """Evolve N prior particles to the posterior (SMC with tempering).

    The returned population sits at beta = 1 with uniform weights after a
    final systematic resample. Diagnostics record the beta schedule, ESS and
    MH acceptance per stage. An explicit `model` (anything with a
    loglik_batch method) overrides the network likelihood.
    """
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = LikelihoodModel(net, assembly, data, backend=config.backend)
    repar = Reparameterization(assembly)

    n = config.n_particles
    particles = assembly.sample(rng, n)
    log_weights = np.full(n, -math.log(n))
    log_lik = model.loglik_batch(particles)
    beta = 0.0
    scale = config.initial_scale
    stages: list[StageDiagnostics] = []

    for stage in range(1, config.max_stages + 1):
        if beta >= 1.0:
            break
        new_beta = adapt_beta(log_weights, log_lik, beta, config.target_rel_ess)
        delta = new_beta - beta
        incr = np.where(np.isfinite(log_lik), delta * log_lik, -np.inf)
        log_weights = log_weights + incr
        norm = _logsumexp(log_weights)
        if np.isneginf(norm):
            raise Degenerate("all particles have zero weight")
        log_weights = log_weights - norm
        beta = new_beta

        ess = effective_sample_size(log_weights)
        if ess < 2.0:
            raise Degenerate(f"ESS collapsed to {ess:.3f} at beta = {beta:.4g}")
        resampled = ess < config.ess_threshold_frac * n
        if resampled:
            idx = systematic_resample(log_weights, rng)
            particles = particles[idx]
            log_lik = log_lik[idx]
            log_weights = np.full(n, -math.log(n))

        particles, log_lik, acc = mh_perturb(
            particles, log_lik, beta, model, repar,
            config.n_mh_steps, scale, rng)
        stages.append(StageDiagnostics(beta, ess, acc, scale, resampled))
        # steer acceptance toward the target for the next stage
        scale = float(np.clip(scale * math.exp(acc - config.target_acceptance),
                              1e-4, 10.0))
    else:
        raise SmcError(f"beta did not reach 1 within {config.max_stages} stages")

    idx = systematic_resample(log_weights, rng)
    pop = ParticlePopulation(
        particles=particles[idx],
        log_weights=np.full(n, -math.log(n)),
        beta=1.0,
        stage=len(stages),
    )
    return SmcResult(population=pop, stages=stages)
