"""Directed material-flow network and mass-balance solve.

A network is a directed graph of processes. Each non-terminal node splits
its total throughput z_i among its outgoing edges according to allocation
fractions phi_ij that sum to one; nodes may additionally receive external
inflows q_i. Mass balance at every node j reads

    sum_i phi_ij * z_i + q_j = z_j

which assembles into the linear system (I - Phi^T) z = q.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12
CONDITION_CAP = 1e12
NEGATIVE_Z_TOL = 1e-9


class NetworkError(ValueError):
    """Base class for network construction/solve errors."""


class UnknownNode(NetworkError):
    pass


class UnknownEdge(NetworkError):
    pass


class SingularSystem(NetworkError):
    """(I - Phi^T) is singular or ill-conditioned for this Phi."""


class NegativeThroughput(NetworkError):
    """The solve produced z < 0: structurally invalid (Phi, q) sample."""


@dataclass(frozen=True)
class FlowNetwork:
    """Process graph: node names, directed edges, and inflow nodes."""

    node_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    inflow_nodes: tuple[int, ...]
    display_names: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.node_names)
        if len(set(self.node_names)) != n:
            raise NetworkError("duplicate node names")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise UnknownNode(f"edge ({i},{j}) references node outside [0,{n})")
            if i == j:
                raise NetworkError(f"self-edge at node {i} is not allowed")
            if (i, j) in seen:
                raise NetworkError(f"duplicate edge ({i},{j})")
            seen.add((i, j))
        for i in self.inflow_nodes:
            if not 0 <= i < n:
                raise UnknownNode(f"inflow node {i} outside [0,{n})")

    @classmethod
    def from_names(cls, nodes, edges, inflow_nodes, display_names=None):
        """Build from node names and (source name, dest name) edge pairs."""
        idx = {name: k for k, name in enumerate(nodes)}
        try:
            e = tuple((idx[a], idx[b]) for a, b in edges)
            q = tuple(idx[a] for a in inflow_nodes)
        except KeyError as err:
            raise UnknownNode(f"unknown node name {err.args[0]!r}") from err
        return cls(tuple(nodes), e, q, dict(display_names or {}))

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    def node_index(self, name: str) -> int:
        try:
            return self.node_names.index(name)
        except ValueError:
            raise UnknownNode(f"unknown node {name!r}") from None

    def out_edges(self, i: int) -> list[tuple[int, int]]:
        return [e for e in self.edges if e[0] == i]

    def terminal_nodes(self) -> set[int]:
        """Sink nodes with no outgoing edges; exempt from the sum-to-one rule."""
        sources = {i for i, _ in self.edges}
        return {i for i in range(self.n_nodes) if i not in sources}


class AllocationMatrix:
    """Sparse allocation fractions phi_ij on a network's declared edge set.

    Non-terminal rows must sum to one; edges absent from the network carry a
    hard zero and are not parameters.
    """

    def __init__(self, net: FlowNetwork, phi: dict[tuple[int, int], float]):
        edge_set = set(net.edges)
        for e, v in phi.items():
            if e not in edge_set:
                raise UnknownEdge(f"edge {e} not in network")
            if not 0.0 <= v <= 1.0:
                raise NetworkError(f"phi{e} = {v} outside [0,1]")
        terminals = net.terminal_nodes()
        for i in range(net.n_nodes):
            if i in terminals:
                continue
            row = sum(phi.get(e, 0.0) for e in net.out_edges(i))
            if abs(row - 1.0) > ROW_SUM_TOL:
                raise NetworkError(
                    f"outgoing fractions of node {net.node_names[i]!r} sum to "
                    f"{row!r}, expected 1"
                )
        self.net = net
        self.phi = {e: float(phi.get(e, 0.0)) for e in net.edges}

    def __getitem__(self, edge: tuple[int, int]) -> float:
        try:
            return self.phi[edge]
        except KeyError:
            raise UnknownEdge(f"edge {edge} not in network") from None

    def dense(self) -> np.ndarray:
        m = np.zeros((self.net.n_nodes, self.net.n_nodes))
        for (i, j), v in self.phi.items():
            m[i, j] = v
        return m


class InflowVector:
    """External inflows q_i >= 0 keyed to the network's inflow nodes."""

    def __init__(self, net: FlowNetwork, q: dict[int, float]):
        allowed = set(net.inflow_nodes)
        for i, v in q.items():
            if i not in allowed:
                raise UnknownNode(f"node {i} is not an inflow node")
            if v < 0:
                raise NetworkError(f"inflow q[{i}] = {v} is negative")
        self.net = net
        self.q = {i: float(q.get(i, 0.0)) for i in net.inflow_nodes}

    def dense(self) -> np.ndarray:
        v = np.zeros(self.net.n_nodes)
        for i, x in self.q.items():
            v[i] = x
        return v


@dataclass(frozen=True)
class FlowSolution:
    """Solved nodal throughputs and per-edge mass flows (Mt)."""

    z: np.ndarray
    edge_flows: dict[tuple[int, int], float]


def solve_flows(net: FlowNetwork, phi: AllocationMatrix, q: InflowVector) -> FlowSolution:
    """Solve (I - Phi^T) z = q via LU with partial pivoting.

    Raises SingularSystem if the system's condition number exceeds the cap
    (e.g. a recycling loop returning 100% of mass) and NegativeThroughput if
    any z_i < 0, which marks a structurally invalid (Phi, q) combination.
    """
    a = np.eye(net.n_nodes) - phi.dense().T
    b = q.dense()
    if np.linalg.cond(a, 1) > CONDITION_CAP:
        raise SingularSystem("(I - Phi^T) is singular or ill-conditioned")
    z = np.linalg.solve(a, b)
    scale = max(np.abs(b).max(), 1.0)
    if np.any(z < -NEGATIVE_Z_TOL * scale):
        raise NegativeThroughput(f"negative throughput in solve: min z = {z.min()}")
    z = np.maximum(z, 0.0)
    flows = {(i, j): phi[(i, j)] * z[i] for i, j in net.edges}
    return FlowSolution(z=z, edge_flows=flows)


# --- quantities of interest -------------------------------------------------

@dataclass(frozen=True)
class NodalThroughput:
    node: int


@dataclass(frozen=True)
class EdgeFlow:
    source: int
    dest: int


@dataclass(frozen=True)
class EdgeRatio:
    source: int
    dest: int


@dataclass(frozen=True)
class ExternalInput:
    node: int


@dataclass(frozen=True)
class SumOfEdgeFlows:
    edges: tuple[tuple[int, int], ...]


QoIQuery = NodalThroughput | EdgeFlow | EdgeRatio | ExternalInput | SumOfEdgeFlows


def evaluate_qoi(net: FlowNetwork, phi: AllocationMatrix, q: InflowVector,
                 query: QoIQuery) -> float:
    """Model prediction G(phi, q) for a single observable quantity."""
    if isinstance(query, EdgeRatio):
        return phi[(query.source, query.dest)]
    if isinstance(query, ExternalInput):
        if query.node not in set(net.inflow_nodes):
            raise UnknownNode(f"node {query.node} is not an inflow node")
        return q.q[query.node]
    sol = solve_flows(net, phi, q)
    if isinstance(query, NodalThroughput):
        if not 0 <= query.node < net.n_nodes:
            raise UnknownNode(f"node {query.node} not in network")
        return float(sol.z[query.node])
    if isinstance(query, EdgeFlow):
        e = (query.source, query.dest)
        if e not in sol.edge_flows:
            raise UnknownEdge(f"edge {e} not in network")
        return sol.edge_flows[e]
    if isinstance(query, SumOfEdgeFlows):
        total = 0.0
        for e in query.edges:
            if e not in sol.edge_flows:
                raise UnknownEdge(f"edge {e} not in network")
            total += sol.edge_flows[e]
        return total
    raise TypeError(f"unsupported query {query!r}")
