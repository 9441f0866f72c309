import math

import numpy as np
import pytest

from conftest import mini_steel_network, mini_steel_observations
from mfabayes.likelihood import LikelihoodModel, build_assembly
from mfabayes.model_selection import (AllInvalid, EvidenceEstimate,
                                      ModelHypothesis, ModelSelectionError,
                                      MultiYearModel, bayes_factor,
                                      estimate_log_evidence, jeffreys_label,
                                      model_posterior_probs)
from mfabayes.priors import PriorAssembly, TruncatedNormal


class GaussianModel:
    def __init__(self, y=2.0, sigma=1.0):
        self.assembly = PriorAssembly()
        self.assembly.add("mu", TruncatedNormal(0.0, 1.0))
        self.y, self.sigma = y, sigma

    def loglik_batch(self, thetas):
        t = np.atleast_2d(thetas)[:, 0]
        return (-0.5 * math.log(2 * math.pi) - math.log(self.sigma)
                - (self.y - t) ** 2 / (2 * self.sigma ** 2))


# analytic: integral of N(y; mu, 1) N(mu; 0, 1) dmu = N(y; 0, sqrt(2))
ANALYTIC_LOG_EV = -0.5 * math.log(2 * math.pi * 2.0) - 2.0 ** 2 / (2 * 2.0)


def test_evidence_gaussian_conjugate():
    est = estimate_log_evidence(GaussianModel(), 100_000,
                                np.random.default_rng(0))
    assert est.log_evidence == pytest.approx(ANALYTIC_LOG_EV, abs=0.05)
    assert est.n_samples == 100_000
    assert 0 < est.mc_std_err < 0.05


def test_evidence_identical_seeds_give_exact_bf_one():
    e1 = estimate_log_evidence(GaussianModel(), 5000, np.random.default_rng(7))
    e2 = estimate_log_evidence(GaussianModel(), 5000, np.random.default_rng(7))
    log_bf, label = bayes_factor(e1.log_evidence, e2.log_evidence)
    assert log_bf == 0.0
    assert label == "no evidence either way"


def test_evidence_all_invalid():
    class Impossible(GaussianModel):
        def loglik_batch(self, thetas):
            return np.full(len(np.atleast_2d(thetas)), -np.inf)

    with pytest.raises(AllInvalid):
        estimate_log_evidence(Impossible(), 100, np.random.default_rng(1))
    with pytest.raises(ModelSelectionError):
        estimate_log_evidence(GaussianModel(), 1, np.random.default_rng(1))


def test_jeffreys_labels():
    assert jeffreys_label(math.log(150)) == "extreme evidence for M1"
    assert jeffreys_label(math.log(40)) == "very strong evidence for M1"
    assert jeffreys_label(math.log(15)) == "strong evidence for M1"
    assert jeffreys_label(math.log(5)) == "moderate evidence for M1"
    assert jeffreys_label(math.log(2)) == "anecdotal evidence for M1"
    assert jeffreys_label(-math.log(15), "A", "B") == "strong evidence for B"
    assert jeffreys_label(0.0) == "no evidence either way"


def test_bayes_factor_requires_finite():
    with pytest.raises(ModelSelectionError):
        bayes_factor(-np.inf, 0.0)


def test_model_posterior_probs():
    probs = model_posterior_probs({"M1": -10.0, "M2": -12.0})
    assert probs["M1"] + probs["M2"] == pytest.approx(1.0)
    assert probs["M1"] / probs["M2"] == pytest.approx(math.exp(2.0), rel=1e-9)


def test_standard_hypotheses():
    hyps = {h.id: h for h in ModelHypothesis.standard()}
    assert hyps["M1"].phi_time_invariant and hyps["M1"].sigma_time_invariant
    assert hyps["M2"].phi_time_invariant and not hyps["M2"].sigma_time_invariant
    assert not hyps["M4"].phi_time_invariant


@pytest.fixture
def two_year_obs(rng):
    net = mini_steel_network()
    return net, {y: mini_steel_observations(net, rng, y) for y in (2011, 2012)}


def test_multiyear_dimensions(two_year_obs):
    net, obs = two_year_obs
    dims = {}
    for hyp in ModelHypothesis.standard():
        dims[hyp.id] = MultiYearModel(net, obs, hyp).assembly.dim
    # 15 phi components, 2 inflows, 1 sigma group; tying shares across years
    assert dims["M1"] == 15 + 2 * 2 + 1
    assert dims["M2"] == 15 + 2 * 2 + 2
    assert dims["M3"] == 2 * 15 + 2 * 2 + 1
    assert dims["M4"] == 2 * 15 + 2 * 2 + 2
    assert dims["M1"] < dims["M2"] < dims["M3"] < dims["M4"]


def test_multiyear_m4_equals_independent_years(two_year_obs):
    """With nothing tied, the joint likelihood is the sum of single-year
    likelihoods evaluated on each year's own parameter block."""
    net, obs = two_year_obs
    model = MultiYearModel(net, obs, ModelHypothesis("M4", False, False))
    rng = np.random.default_rng(5)
    thetas = model.assembly.sample(rng, 40)
    joint = model.loglik_batch(thetas)
    total = np.zeros(40)
    for (idx, year_model) in model._year_views:
        total += year_model.loglik_batch(np.ascontiguousarray(thetas[:, idx]))
    np.testing.assert_allclose(joint, total, rtol=1e-12)
    # and each per-year view matches a freshly built single-year model
    for year, (idx, _) in zip(sorted(obs), model._year_views):
        single_asm = build_assembly(net, obs[year])
        single = LikelihoodModel(net, single_asm, obs[year])
        np.testing.assert_allclose(
            single.loglik_batch(np.ascontiguousarray(thetas[:, idx])),
            LikelihoodModel(net, model._local_assemblies[year],
                            obs[year]).loglik_batch(
                np.ascontiguousarray(thetas[:, idx])), rtol=1e-12)


def test_multiyear_m1_shares_parameters(two_year_obs):
    net, obs = two_year_obs
    model = MultiYearModel(net, obs, ModelHypothesis("M1", True, True))
    (idx1, _), (idx2, _) = model._year_views
    # phi and sigma views coincide; only the q views differ
    labels = model.assembly.labels()
    shared1 = [labels[i] for i in idx1 if not labels[i].startswith("q:")]
    shared2 = [labels[i] for i in idx2 if not labels[i].startswith("q:")]
    assert shared1 == shared2
    q1 = [labels[i] for i in idx1 if labels[i].startswith("q:")]
    q2 = [labels[i] for i in idx2 if labels[i].startswith("q:")]
    assert q1 != q2 and all("@2011" in l for l in q1)
