"""Shared generators: random layered flow networks and synthetic studies."""

import numpy as np
import pytest

from mfabayes.likelihood import ObservationRecord
from mfabayes.network import (AllocationMatrix, EdgeFlow, EdgeRatio,
                              ExternalInput, FlowNetwork, InflowVector)


def random_network(rng, max_layers=4, max_width=4):
    """Random layered DAG with edges only flowing to later layers.

    Layered construction guarantees the mass-balance system is solvable and
    every non-terminal node has at least one outgoing edge.
    """
    n_layers = int(rng.integers(2, max_layers + 1))
    layers = [list(range(sum_prev, sum_prev + w)) for sum_prev, w in _widths(rng, n_layers, max_width)]
    n = layers[-1][-1] + 1
    edges = []
    for li, layer in enumerate(layers[:-1]):
        later = [j for lay in layers[li + 1:] for j in lay]
        for i in layer:
            k = int(rng.integers(1, min(len(later), 4) + 1))
            dests = rng.choice(later, size=k, replace=False)
            edges.extend((i, int(j)) for j in sorted(dests))
    names = [f"n{k}" for k in range(n)]
    inflows = [names[i] for i in layers[0]]
    extra = [names[i] for lay in layers[1:] for i in lay if rng.random() < 0.2]
    return FlowNetwork.from_names(
        names, [(names[i], names[j]) for i, j in edges], inflows + extra)


def _widths(rng, n_layers, max_width):
    start = 0
    out = []
    for _ in range(n_layers):
        w = int(rng.integers(1, max_width + 1))
        out.append((start, w))
        start += w
    return out


def random_instance(rng, **kw):
    """(net, phi, q) with valid allocation rows and nonnegative inflows."""
    net = random_network(rng, **kw)
    phi = {}
    for i in range(net.n_nodes):
        out = net.out_edges(i)
        if not out:
            continue
        row = rng.dirichlet(np.ones(len(out)))
        for e, v in zip(out, row):
            phi[e] = float(v)
    q = {i: float(rng.uniform(0.0, 100.0)) for i in net.inflow_nodes}
    return net, AllocationMatrix(net, phi), InflowVector(net, q)


# --- synthetic steel-shaped study -------------------------------------------

MINI_NODES = {
    "Ore": ["Furnace", "Export"],
    "Scrap": ["Furnace", "Export"],
    "Furnace": ["Casting", "Losses"],
    "Casting": ["Sheet", "Bar", "Losses"],
    "Sheet": ["Construction", "Automotive", "Other"],
    "Bar": ["Construction", "Machinery", "Other"],
}
MINI_SINKS = ["Export", "Losses", "Construction", "Automotive", "Machinery", "Other"]

MINI_TRUE_PHI = {
    "Ore": [0.85, 0.15],
    "Scrap": [0.7, 0.3],
    "Furnace": [0.9, 0.1],
    "Casting": [0.55, 0.4, 0.05],
    "Sheet": [0.5, 0.3, 0.2],
    "Bar": [0.6, 0.25, 0.15],
}
MINI_TRUE_Q = {"Ore": 50.0, "Scrap": 30.0}
MINI_TRUE_SIGMA = 0.1


def mini_steel_network() -> FlowNetwork:
    nodes = list(MINI_NODES) + MINI_SINKS
    edges = [(a, b) for a, dsts in MINI_NODES.items() for b in dsts]
    return FlowNetwork.from_names(nodes, edges, list(MINI_TRUE_Q))


def mini_steel_truth(net):
    phi = {}
    for node, row in MINI_TRUE_PHI.items():
        for e, v in zip(net.out_edges(net.node_index(node)), row):
            phi[e] = v
    q = {net.node_index(k): v for k, v in MINI_TRUE_Q.items()}
    return AllocationMatrix(net, phi), InflowVector(net, q)


def mini_steel_observations(net, rng, year, sigma=MINI_TRUE_SIGMA):
    """Noisy synthetic observations of the mini study at the true parameters."""
    from mfabayes.network import evaluate_qoi

    phi, q = mini_steel_truth(net)
    idx = net.node_index
    queries = [
        ("external_input", ExternalInput(idx("Ore"))),
        ("external_input", ExternalInput(idx("Scrap"))),
        ("flow", EdgeFlow(idx("Ore"), idx("Furnace"))),
        ("flow", EdgeFlow(idx("Scrap"), idx("Furnace"))),
        ("flow", EdgeFlow(idx("Furnace"), idx("Casting"))),
        ("flow", EdgeFlow(idx("Casting"), idx("Sheet"))),
        ("flow", EdgeFlow(idx("Casting"), idx("Bar"))),
        ("ratio", EdgeRatio(idx("Sheet"), idx("Construction"))),
        ("ratio", EdgeRatio(idx("Sheet"), idx("Automotive"))),
        ("ratio", EdgeRatio(idx("Bar"), idx("Construction"))),
        ("ratio", EdgeRatio(idx("Bar"), idx("Machinery"))),
    ]
    records = []
    for k, (kind, query) in enumerate(queries):
        g = evaluate_qoi(net, phi, q, query)
        y = g * (1.0 + sigma * rng.standard_normal())
        while y <= 0 or (kind == "ratio" and y >= 1):
            y = g * (1.0 + sigma * rng.standard_normal())
        records.append(ObservationRecord(
            id=f"syn-{year}-{k:02d}", description="synthetic", kind=kind,
            query=query, value=float(y), year=year, source="synthetic",
            noise_model="relative", sigma_group="syn"))
    return records


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)
