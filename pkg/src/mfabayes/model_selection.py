"""Model evidence by prior Monte Carlo and Bayes factors across year-tying
hypotheses.

Four hypotheses arise from tying allocation fractions and/or noise
magnitudes across years: M1 ties both, M2 ties phi only, M3 ties sigma
only, M4 ties neither. All four are built from the same year-stamped
observation tables, so they see identical data. Evidence is estimated as
logsumexp(log L over prior draws) - log N, which stays finite for the
astronomically small likelihood values this produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .likelihood import (LikelihoodModel, ObservationRecord, build_assembly,
                         phi_block_name, q_block_name, sigma_block_name,
                         default_sigma_prior, sigma_groups)
from .network import FlowNetwork
from .priors import Dirichlet, PriorAssembly, Uniform


class ModelSelectionError(RuntimeError):
    pass


class AllInvalid(ModelSelectionError):
    """Every prior draw had -inf log likelihood."""


@dataclass(frozen=True)
class ModelHypothesis:
    id: str
    phi_time_invariant: bool
    sigma_time_invariant: bool

    @classmethod
    def standard(cls) -> list["ModelHypothesis"]:
        return [
            cls("M1", True, True),
            cls("M2", True, False),
            cls("M3", False, True),
            cls("M4", False, False),
        ]


@dataclass(frozen=True)
class EvidenceEstimate:
    log_evidence: float
    mc_std_err: float
    n_samples: int


class MultiYearModel:
    """One joint model over several years with optional parameter tying.

    The global theta concatenates tied blocks (shared across years) and
    per-year blocks (suffixed with @year). Each year evaluates a standard
    single-year likelihood on its own view of theta.
    """

    def __init__(self, net: FlowNetwork,
                 observations_by_year: dict[int, list[ObservationRecord]],
                 hypothesis: ModelHypothesis, *,
                 dirichlet=None, q_priors=None, sigma_priors=None,
                 q_cap: float = 200.0, backend: str = "auto"):
        self.net = net
        self.hypothesis = hypothesis
        self.years = sorted(observations_by_year)
        dirichlet = dirichlet or {}
        q_priors = q_priors or {}
        sigma_priors = sigma_priors or {}

        asm = PriorAssembly()
        terminals = net.terminal_nodes()
        default_sigma = None

        def phi_dist(name, k):
            d = dirichlet.get(name, Dirichlet(tuple([1.0] * k)))
            return d

        def sigma_dist(group):
            nonlocal default_sigma
            if group in sigma_priors:
                return sigma_priors[group]
            if default_sigma is None:
                default_sigma = default_sigma_prior()
            return default_sigma

        # tied phi blocks come first, then per-year sections
        if hypothesis.phi_time_invariant:
            for i, name in enumerate(net.node_names):
                if i in terminals:
                    continue
                k = len(net.out_edges(i))
                if k == 1:
                    asm.add_fixed(phi_block_name(name), 1.0)
                else:
                    asm.add(phi_block_name(name), phi_dist(name, k))
        if hypothesis.sigma_time_invariant:
            shared_groups: list[str] = []
            for year in self.years:
                for g in sigma_groups(observations_by_year[year]):
                    if g not in shared_groups:
                        shared_groups.append(g)
            for g in shared_groups:
                asm.add(sigma_block_name(g), sigma_dist(g))

        self._year_views: list[tuple[np.ndarray, LikelihoodModel]] = []
        self._local_assemblies: dict[int, PriorAssembly] = {}
        for year in self.years:
            obs = observations_by_year[year]
            local = PriorAssembly()
            idx: list[int] = []

            def bind(name, global_name, dist):
                local.add(name, dist)
                if global_name not in {b.name for b in asm.blocks}:
                    asm.add(global_name, dist)
                sl = asm.slice(global_name)
                idx.extend(range(sl.start, sl.stop))

            for i, name in enumerate(net.node_names):
                if i in terminals:
                    continue
                k = len(net.out_edges(i))
                key = phi_block_name(name)
                if k == 1:
                    local.add_fixed(key, 1.0)
                    continue
                gkey = key if hypothesis.phi_time_invariant else f"{key}@{year}"
                bind(key, gkey, phi_dist(name, k))
            for i in net.inflow_nodes:
                name = net.node_names[i]
                key = q_block_name(name)
                bind(key, f"{key}@{year}",
                     q_priors.get(name, Uniform(0.0, q_cap)))
            for g in sigma_groups(obs):
                key = sigma_block_name(g)
                gkey = key if hypothesis.sigma_time_invariant else f"{key}@{year}"
                bind(key, gkey, sigma_dist(g))

            model = LikelihoodModel(net, local, obs, backend=backend)
            self._year_views.append((np.asarray(idx, dtype=np.int64), model))
            self._local_assemblies[year] = local
        self.assembly = asm

    def loglik_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        total = np.zeros(thetas.shape[0])
        for idx, model in self._year_views:
            total = total + model.loglik_batch(np.ascontiguousarray(thetas[:, idx]))
        return total


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    if np.isneginf(m):
        return -math.inf
    return float(m + np.log(np.sum(np.exp(x - m))))


def estimate_log_evidence(model, n_samples: int,
                          rng: np.random.Generator,
                          batch_size: int = 20_000) -> EvidenceEstimate:
    """Prior Monte Carlo estimate of log p(y | M).

    `model` needs .assembly (prior) and .loglik_batch. Invalid draws
    contribute exp(-inf) = 0. The standard error of the log evidence comes
    from the delta method on the mean of the exponentiated weights.
    """
    if n_samples < 2:
        raise ModelSelectionError("need n_samples >= 2")
    log_l = np.empty(n_samples)
    done = 0
    while done < n_samples:
        m = min(batch_size, n_samples - done)
        thetas = model.assembly.sample(rng, m)
        log_l[done:done + m] = model.loglik_batch(thetas)
        done += m
    if not np.any(np.isfinite(log_l)):
        raise AllInvalid("every prior draw has zero likelihood")
    log_ev = _logsumexp(log_l) - math.log(n_samples)
    shift = np.max(log_l[np.isfinite(log_l)])
    w = np.exp(np.where(np.isfinite(log_l), log_l - shift, -np.inf))
    mean_w = w.mean()
    se = float(w.std(ddof=1) / math.sqrt(n_samples) / mean_w) if n_samples > 1 else math.inf
    return EvidenceEstimate(log_evidence=log_ev, mc_std_err=se, n_samples=n_samples)


_JEFFREYS = [
    (math.log(100.0), "extreme evidence"),
    (math.log(30.0), "very strong evidence"),
    (math.log(10.0), "strong evidence"),
    (math.log(3.0), "moderate evidence"),
    (0.0, "anecdotal evidence"),
]


def jeffreys_label(log_bf: float, name_1: str = "M1", name_2: str = "M2") -> str:
    """Graded reading of a log Bayes factor on the Jeffreys scale."""
    if log_bf == 0.0:
        return "no evidence either way"
    favored = name_1 if log_bf > 0 else name_2
    mag = abs(log_bf)
    for threshold, label in _JEFFREYS:
        if mag > threshold:
            return f"{label} for {favored}"
    return f"anecdotal evidence for {favored}"


def bayes_factor(log_ev_1: float, log_ev_2: float,
                 name_1: str = "M1", name_2: str = "M2") -> tuple[float, str]:
    """log BF(M1:M2) = log_ev_1 - log_ev_2, with a Jeffreys-scale label."""
    if not (math.isfinite(log_ev_1) and math.isfinite(log_ev_2)):
        raise ModelSelectionError("log evidences must be finite")
    log_bf = log_ev_1 - log_ev_2
    return log_bf, jeffreys_label(log_bf, name_1, name_2)


def model_posterior_probs(log_evidences: dict[str, float]) -> dict[str, float]:
    """Posterior model probabilities under a uniform model prior."""
    names = list(log_evidences)
    vals = np.array([log_evidences[n] for n in names])
    vals = vals - vals.max()
    p = np.exp(vals)
    p /= p.sum()
    return dict(zip(names, p.tolist()))
