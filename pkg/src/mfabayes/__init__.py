"""Bayesian material-flow analysis with expert-elicited priors.

Solves mass-balance flow networks, builds priors from Cooke-weighted expert
histograms, and samples posteriors over allocation fractions, external
inflows and noise magnitudes with an adaptive tempered SMC sampler.
"""

from .ingest import load_steel2012, load_study
from .elicitation import (ElicitedHistogram, ExpertResponseSet, cooke_weights,
                          pool_linear, pool_logarithmic)
from .likelihood import (LikelihoodModel, ObservationRecord, build_assembly,
                         log_likelihood)
from .network import (AllocationMatrix, FlowNetwork, InflowVector,
                      evaluate_qoi, solve_flows)
from .priors import (Dirichlet, HalfCauchy, PriorAssembly, TruncatedNormal,
                     Uniform, fit_dirichlet)
from .smc import SmcConfig, run_smc

__version__ = "0.1.0"

__all__ = [
    "AllocationMatrix", "Dirichlet", "ElicitedHistogram", "ExpertResponseSet",
    "FlowNetwork", "HalfCauchy", "InflowVector", "LikelihoodModel",
    "ObservationRecord", "PriorAssembly", "SmcConfig", "TruncatedNormal",
    "Uniform", "build_assembly", "cooke_weights", "evaluate_qoi",
    "fit_dirichlet", "load_steel2012", "load_study", "log_likelihood",
    "pool_linear", "pool_logarithmic",
    "run_smc", "solve_flows",
]
