"""Gaussian observation model linking solved flows to published data.

Each observation record binds a network quantity (external input, edge flow
or allocation ratio) to a published value with either relative noise,
y = G (1 + eps), or additive noise, y = G + eps, eps ~ Normal(0, sigma^2).
The noise magnitudes are themselves parameters, shared across records
through named sigma groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import (AllocationMatrix, EdgeFlow, EdgeRatio, ExternalInput,
                      FlowNetwork, InflowVector, NetworkError, NodalThroughput,
                      QoIQuery, SumOfEdgeFlows, UnknownEdge, UnknownNode,
                      evaluate_qoi)
from .priors import (Dirichlet, PriorAssembly, PriorError, TruncatedNormal,
                     Uniform, fit_truncnormal_quantiles)

LOG_2PI = math.log(2.0 * math.pi)

KIND_EXTERNAL_INPUT = "external_input"
KIND_FLOW = "flow"
KIND_RATIO = "ratio"


class LikelihoodError(ValueError):
    pass


@dataclass(frozen=True)
class ObservationRecord:
    """One published datum bound to a network quantity."""

    id: str
    description: str
    kind: str
    query: QoIQuery
    value: float
    year: int
    source: str = ""
    noise_model: str = "relative"
    sigma_group: str | float = ""

    def __post_init__(self):
        if self.kind not in (KIND_EXTERNAL_INPUT, KIND_FLOW, KIND_RATIO):
            raise LikelihoodError(f"unknown observation kind {self.kind!r}")
        if self.noise_model not in ("relative", "additive"):
            raise LikelihoodError(f"unknown noise model {self.noise_model!r}")
        if self.noise_model == "relative" and self.value <= 0:
            raise LikelihoodError(
                f"observation {self.id!r}: relative noise requires value > 0")
        if self.kind == KIND_RATIO and not 0.0 <= self.value <= 1.0:
            raise LikelihoodError(f"ratio observation {self.id!r} outside [0,1]")
        if self.sigma_group == "":
            object.__setattr__(self, "sigma_group", self.id)


class NoiseParams:
    """Per-group noise standard deviations, all strictly positive."""

    def __init__(self, sigma: dict[str, float]):
        for g, s in sigma.items():
            if s <= 0:
                raise LikelihoodError(f"sigma[{g!r}] = {s} must be positive")
        self.sigma = dict(sigma)

    def resolve(self, ref: str | float) -> float:
        if isinstance(ref, str):
            try:
                return self.sigma[ref]
            except KeyError:
                raise LikelihoodError(f"no sigma group {ref!r}") from None
        return float(ref)


def _datum_logpdf(y: float, g: float, sigma: float, noise_model: str) -> float:
    if noise_model == "relative":
        if g <= 0:
            return -np.inf
        resid = y / g - 1.0
    else:
        resid = y - g
    return -0.5 * LOG_2PI - math.log(sigma) - resid * resid / (2.0 * sigma * sigma)


def log_likelihood(net: FlowNetwork, phi: AllocationMatrix, q: InflowVector,
                   sigma: NoiseParams, data: list[ObservationRecord]) -> float:
    """Reference (unvectorized) log likelihood over independent records.

    Returns -inf for structurally invalid samples: singular solve, negative
    throughput, or G <= 0 under relative noise.
    """
    total = 0.0
    for rec in data:
        try:
            g = evaluate_qoi(net, phi, q, rec.query)
        except (UnknownNode, UnknownEdge):
            raise
        except NetworkError:
            return -np.inf
        term = _datum_logpdf(rec.value, g, sigma.resolve(rec.sigma_group),
                             rec.noise_model)
        if not np.isfinite(term):
            return -np.inf
        total += term
    return total


def tempered_log_likelihood(net, phi, q, sigma, data, beta: float) -> float:
    """beta * log L; -inf stays -inf so invalid samples die at any temperature."""
    if not 0.0 <= beta <= 1.0:
        raise LikelihoodError("beta must lie in [0, 1]")
    ll = log_likelihood(net, phi, q, sigma, data)
    if np.isneginf(ll):
        return -np.inf
    return beta * ll


# --- parameter assembly bound to a network ----------------------------------

def phi_block_name(node_name: str) -> str:
    return f"phi:{node_name}"


def q_block_name(node_name: str) -> str:
    return f"q:{node_name}"


def sigma_block_name(group: str) -> str:
    return f"sigma:{group}"


def default_sigma_prior() -> TruncatedNormal:
    """Weakly-informative relative-noise prior: truncated normal on [0, 0.5]
    with P(sigma <= 0.1) = 0.5 and P(sigma <= 0.3) = 0.95."""
    return fit_truncnormal_quantiles([(0.1, 0.5), (0.3, 0.95)], 0.0, 0.5)


def sigma_groups(observations: list[ObservationRecord]) -> list[str]:
    """Named sigma groups in first-appearance order."""
    seen: list[str] = []
    for rec in observations:
        if isinstance(rec.sigma_group, str) and rec.sigma_group not in seen:
            seen.append(rec.sigma_group)
    return seen


def build_assembly(net: FlowNetwork, observations: list[ObservationRecord], *,
                   dirichlet: dict[str, Dirichlet] | None = None,
                   q_priors: dict[str, object] | None = None,
                   sigma_priors: dict[str, object] | None = None,
                   q_cap: float = 200.0) -> PriorAssembly:
    """Assemble priors for every theta component the model samples.

    Layout (deterministic): Dirichlet rows for multi-edge source nodes in
    node-index order (components follow the network's declared edge order),
    then inflows in declared order, then sigma groups in first-appearance
    order. Single-edge rows are fixed at phi = 1. Unspecified rows default
    to flat Dirichlet, unspecified inflows to Uniform(0, q_cap), and
    unspecified sigma groups to the default truncated normal.
    """
    dirichlet = dirichlet or {}
    q_priors = q_priors or {}
    sigma_priors = sigma_priors or {}
    asm = PriorAssembly()
    terminals = net.terminal_nodes()
    for i, name in enumerate(net.node_names):
        if i in terminals:
            continue
        k = len(net.out_edges(i))
        if k == 1:
            asm.add_fixed(phi_block_name(name), 1.0)
        else:
            dist = dirichlet.get(name, Dirichlet(tuple([1.0] * k)))
            if dist.dim != k:
                raise PriorError(
                    f"Dirichlet for {name!r} has {dist.dim} components, node has {k} edges")
            asm.add(phi_block_name(name), dist)
    for i in net.inflow_nodes:
        name = net.node_names[i]
        asm.add(q_block_name(name), q_priors.get(name, Uniform(0.0, q_cap)))
    default_sigma = None
    for group in sigma_groups(observations):
        if group in sigma_priors:
            dist = sigma_priors[group]
        else:
            if default_sigma is None:
                default_sigma = default_sigma_prior()
            dist = default_sigma
        asm.add(sigma_block_name(group), dist)
    return asm


def unpack_theta(net: FlowNetwork, asm: PriorAssembly, theta: np.ndarray):
    """Split a flattened theta into (AllocationMatrix, InflowVector, NoiseParams)."""
    phi: dict[tuple[int, int], float] = {}
    terminals = net.terminal_nodes()
    for i, name in enumerate(net.node_names):
        if i in terminals:
            continue
        out = net.out_edges(i)
        key = phi_block_name(name)
        if key in asm.fixed:
            phi[out[0]] = asm.fixed[key]
        else:
            row = theta[asm.slice(key)]
            for e, v in zip(out, row):
                phi[e] = float(v)
    q = {}
    for i in net.inflow_nodes:
        key = q_block_name(net.node_names[i])
        if key in asm.fixed:
            q[i] = asm.fixed[key]
        else:
            q[i] = float(theta[asm.slice(key)][0])
    sigma = {}
    for b in asm.blocks:
        if b.name.startswith("sigma:"):
            sigma[b.name.split(":", 1)[1]] = float(theta[b.offset])
    for name, v in asm.fixed.items():
        if name.startswith("sigma:"):
            sigma[name.split(":", 1)[1]] = v
    return (AllocationMatrix(net, phi), InflowVector(net, q),
            NoiseParams(sigma) if sigma else NoiseParams({}))


# --- compiled likelihood model ----------------------------------------------

# query kind codes shared with the kernels
_Q_EXTERNAL = 0
_Q_EDGE_FLOW = 1
_Q_RATIO = 2
_Q_NODAL = 3
_Q_SUM = 4


@dataclass
class ModelArrays:
    """Flat integer/float arrays describing one likelihood evaluation."""

    n_nodes: int
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_param: np.ndarray   # index into theta, or -1 with edge_fixed value
    edge_fixed: np.ndarray
    q_node: np.ndarray
    q_param: np.ndarray
    q_fixed: np.ndarray
    obs_kind: np.ndarray
    obs_a: np.ndarray        # q-slot, edge index, node index, or sum offset
    obs_len: np.ndarray      # number of edges for sum queries
    sum_edges: np.ndarray
    obs_value: np.ndarray
    obs_sigma_param: np.ndarray
    obs_sigma_fixed: np.ndarray
    obs_noise: np.ndarray    # 0 relative, 1 additive


class LikelihoodModel:
    """Network + assembly + observations compiled for batched evaluation.

    The hot loop (assemble (I - Phi^T), solve, accumulate Gaussian terms per
    particle) runs in the compiled Cython kernel when available, otherwise
    in a vectorized NumPy fallback. `backend` is "auto", "compiled" or
    "python".
    """

    def __init__(self, net: FlowNetwork, assembly: PriorAssembly,
                 observations: list[ObservationRecord], backend: str = "auto"):
        self.net = net
        self.assembly = assembly
        self.observations = list(observations)
        self.arrays = self._compile()
        from . import kernels
        self.kernel = kernels.get_kernel(backend)
        self.backend = kernels.kernel_name(self.kernel)

    def _compile(self) -> ModelArrays:
        net, asm = self.net, self.assembly
        terminals = net.terminal_nodes()
        edge_index = {e: k for k, e in enumerate(net.edges)}
        e_param = np.full(len(net.edges), -1, dtype=np.int64)
        e_fixed = np.zeros(len(net.edges))
        for i, name in enumerate(net.node_names):
            if i in terminals:
                continue
            out = net.out_edges(i)
            key = phi_block_name(name)
            if key in asm.fixed:
                e_fixed[edge_index[out[0]]] = asm.fixed[key]
            else:
                sl = asm.slice(key)
                for k, e in enumerate(out):
                    e_param[edge_index[e]] = sl.start + k
        q_node = np.asarray(net.inflow_nodes, dtype=np.int64)
        q_param = np.full(len(q_node), -1, dtype=np.int64)
        q_fixed = np.zeros(len(q_node))
        q_slot = {}
        for s, i in enumerate(q_node):
            q_slot[int(i)] = s
            key = q_block_name(net.node_names[i])
            if key in asm.fixed:
                q_fixed[s] = asm.fixed[key]
            else:
                q_param[s] = asm.slice(key).start

        kinds, a, lens, values, sp, sf, noise = [], [], [], [], [], [], []
        sum_edges: list[int] = []
        for rec in self.observations:
            qr = rec.query
            if isinstance(qr, ExternalInput):
                if qr.node not in q_slot:
                    raise UnknownNode(
                        f"observation {rec.id!r}: node {qr.node} is not an inflow node")
                kinds.append(_Q_EXTERNAL)
                a.append(q_slot[qr.node])
                lens.append(0)
            elif isinstance(qr, (EdgeFlow, EdgeRatio)):
                e = (qr.source, qr.dest)
                if e not in edge_index:
                    raise UnknownEdge(f"observation {rec.id!r}: edge {e} not in network")
                kinds.append(_Q_EDGE_FLOW if isinstance(qr, EdgeFlow) else _Q_RATIO)
                a.append(edge_index[e])
                lens.append(0)
            elif isinstance(qr, NodalThroughput):
                if not 0 <= qr.node < net.n_nodes:
                    raise UnknownNode(f"observation {rec.id!r}: node {qr.node} not in network")
                kinds.append(_Q_NODAL)
                a.append(qr.node)
                lens.append(0)
            elif isinstance(qr, SumOfEdgeFlows):
                kinds.append(_Q_SUM)
                a.append(len(sum_edges))
                lens.append(len(qr.edges))
                for e in qr.edges:
                    if e not in edge_index:
                        raise UnknownEdge(f"observation {rec.id!r}: edge {e} not in network")
                    sum_edges.append(edge_index[e])
            else:
                raise LikelihoodError(f"unsupported query {qr!r}")
            values.append(rec.value)
            if isinstance(rec.sigma_group, str):
                sp.append(asm.slice(sigma_block_name(rec.sigma_group)).start)
                sf.append(0.0)
            else:
                sp.append(-1)
                sf.append(float(rec.sigma_group))
            noise.append(0 if rec.noise_model == "relative" else 1)

        return ModelArrays(
            n_nodes=net.n_nodes,
            edge_src=np.asarray([e[0] for e in net.edges], dtype=np.int64),
            edge_dst=np.asarray([e[1] for e in net.edges], dtype=np.int64),
            edge_param=e_param, edge_fixed=e_fixed,
            q_node=q_node, q_param=q_param, q_fixed=q_fixed,
            obs_kind=np.asarray(kinds, dtype=np.int64),
            obs_a=np.asarray(a, dtype=np.int64),
            obs_len=np.asarray(lens, dtype=np.int64),
            sum_edges=np.asarray(sum_edges, dtype=np.int64),
            obs_value=np.asarray(values),
            obs_sigma_param=np.asarray(sp, dtype=np.int64),
            obs_sigma_fixed=np.asarray(sf),
            obs_noise=np.asarray(noise, dtype=np.int64),
        )

    def loglik_batch(self, thetas: np.ndarray) -> np.ndarray:
        """Log likelihood for a (N, dim) batch; -inf for invalid samples."""
        thetas = np.ascontiguousarray(np.atleast_2d(thetas))
        return self.kernel.loglik_batch(self.arrays, thetas)

    def loglik(self, theta: np.ndarray) -> float:
        return float(self.loglik_batch(theta[None, :])[0])

    def solve_batch(self, thetas: np.ndarray):
        """(z, edge_flows, valid) for a batch; used by posterior summaries."""
        from . import _flowkern_py
        thetas = np.ascontiguousarray(np.atleast_2d(thetas))
        return _flowkern_py.solve_batch(self.arrays, thetas)
