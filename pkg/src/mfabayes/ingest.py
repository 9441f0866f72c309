"""Parsing, validation and export of all study artifacts.

File formats (all JSON or CSV, schemas versioned by a `schema` tag):

network.json          nodes, edges (by name), inflow nodes, display names
observations.csv      id, description, kind, query, value, year, source,
                      noise_model, sigma_group
responses/*.json      one expert's histograms (seeding + target questions)
seeding_key.json      question_id -> observed value + source tag
priors.json           per-node Dirichlet alphas, inflow/sigma families
pooled.json           weighted pooled histograms per quantity
posterior.csv         one theta per row, named columns
sankey.json           node list + links with mean/std/uncertainty percent

Query binding syntax in observations.csv:
    input:NODE        external inflow q at NODE
    edge:SRC->DST     mass flow on an edge
    ratio:SRC->DST    allocation fraction on an edge
    node:NODE         nodal throughput
    sum:A->B|C->D     sum of several edge flows
Target quantity ids in expert files follow `phi:SRC->DST` and `q:NODE`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elicitation import (ElicitationError, ElicitedHistogram,
                          ExpertResponseSet, SeedingResponse)
from .likelihood import (LikelihoodModel, ObservationRecord, build_assembly,
                         phi_block_name)
from .network import (EdgeFlow, EdgeRatio, ExternalInput, FlowNetwork,
                      NetworkError, NodalThroughput, SumOfEdgeFlows)
from .priors import (Dirichlet, HalfCauchy, PriorAssembly, PriorError,
                     TruncatedNormal, Uniform)

NETWORK_SCHEMA = "mfabayes/network/v1"
RESPONSES_SCHEMA = "mfabayes/expert-responses/v1"
SEEDING_KEY_SCHEMA = "mfabayes/seeding-key/v1"
PRIORS_SCHEMA = "mfabayes/priors/v1"
POOLED_SCHEMA = "mfabayes/pooled-histograms/v1"
SANKEY_SCHEMA = "mfabayes/sankey/v1"


class IngestError(ValueError):
    """Schema violation, with file context in the message."""


class DanglingBinding(IngestError):
    """An observation or quantity id references a missing node or edge."""


def _load_json(path, expected_schema):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise IngestError(f"{path}: invalid JSON ({err})") from err
    if doc.get("schema") != expected_schema:
        raise IngestError(
            f"{path}: expected schema {expected_schema!r}, got {doc.get('schema')!r}")
    return doc


# --- network ----------------------------------------------------------------

def load_network(path) -> FlowNetwork:
    doc = _load_json(path, NETWORK_SCHEMA)
    try:
        return FlowNetwork.from_names(
            doc["nodes"], [tuple(e) for e in doc["edges"]],
            doc["inflow_nodes"], doc.get("display_names"))
    except (KeyError, NetworkError) as err:
        raise IngestError(f"{path}: {err}") from err


def save_network(net: FlowNetwork, path):
    doc = {
        "schema": NETWORK_SCHEMA,
        "nodes": list(net.node_names),
        "edges": [[net.node_names[i], net.node_names[j]] for i, j in net.edges],
        "inflow_nodes": [net.node_names[i] for i in net.inflow_nodes],
        "display_names": net.display_names,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# --- observations -----------------------------------------------------------

def parse_query(spec: str, net: FlowNetwork):
    """Parse a query binding string against the network."""
    try:
        prefix, rest = spec.split(":", 1)
    except ValueError:
        raise IngestError(f"malformed query {spec!r}") from None

    def edge(text):
        try:
            a, b = text.split("->")
        except ValueError:
            raise IngestError(f"malformed edge in query {spec!r}") from None
        e = (net.node_index(a.strip()), net.node_index(b.strip()))
        if e not in set(net.edges):
            raise DanglingBinding(f"query {spec!r}: edge {a.strip()}->{b.strip()} not in network")
        return e

    try:
        if prefix == "input":
            i = net.node_index(rest.strip())
            if i not in set(net.inflow_nodes):
                raise DanglingBinding(f"query {spec!r}: {rest.strip()!r} is not an inflow node")
            return ExternalInput(i)
        if prefix == "edge":
            return EdgeFlow(*edge(rest))
        if prefix == "ratio":
            return EdgeRatio(*edge(rest))
        if prefix == "node":
            return NodalThroughput(net.node_index(rest.strip()))
        if prefix == "sum":
            return SumOfEdgeFlows(tuple(edge(part) for part in rest.split("|")))
    except NetworkError as err:
        raise DanglingBinding(f"query {spec!r}: {err}") from err
    raise IngestError(f"unknown query prefix {prefix!r} in {spec!r}")


OBS_COLUMNS = ["id", "description", "kind", "query", "value", "year",
               "source", "noise_model", "sigma_group"]


def load_observations(path, net: FlowNetwork) -> list[ObservationRecord]:
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(OBS_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise IngestError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                sigma_group = row["sigma_group"].strip()
                try:
                    sigma_group = float(sigma_group)
                except ValueError:
                    pass
                records.append(ObservationRecord(
                    id=row["id"].strip(),
                    description=row["description"].strip(),
                    kind=row["kind"].strip(),
                    query=parse_query(row["query"].strip(), net),
                    value=float(row["value"]),
                    year=int(row["year"]),
                    source=row["source"].strip(),
                    noise_model=row["noise_model"].strip(),
                    sigma_group=sigma_group,
                ))
            except (ValueError, IngestError) as err:
                if isinstance(err, DanglingBinding):
                    raise DanglingBinding(f"{path}:{lineno}: {err}") from err
                raise IngestError(f"{path}:{lineno}: {err}") from err
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise IngestError(f"{path}: duplicate observation ids")
    return records


def save_observations(records: list[ObservationRecord], net: FlowNetwork, path):
    def fmt_query(q):
        name = net.node_names
        if isinstance(q, ExternalInput):
            return f"input:{name[q.node]}"
        if isinstance(q, EdgeFlow):
            return f"edge:{name[q.source]}->{name[q.dest]}"
        if isinstance(q, EdgeRatio):
            return f"ratio:{name[q.source]}->{name[q.dest]}"
        if isinstance(q, NodalThroughput):
            return f"node:{name[q.node]}"
        return "sum:" + "|".join(f"{name[i]}->{name[j]}" for i, j in q.edges)

    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBS_COLUMNS)
        for r in records:
            writer.writerow([r.id, r.description, r.kind, fmt_query(r.query),
                             r.value, r.year, r.source, r.noise_model,
                             r.sigma_group])


# --- expert responses and seeding key ---------------------------------------

def _parse_histogram(doc, ctx) -> ElicitedHistogram:
    try:
        return ElicitedHistogram(tuple(doc["support"]), tuple(doc["bin_probs"]))
    except (KeyError, ElicitationError, TypeError) as err:
        raise IngestError(f"{ctx}: {err}") from err


def load_expert_responses(path) -> ExpertResponseSet:
    doc = _load_json(path, RESPONSES_SCHEMA)
    seeding = tuple(
        SeedingResponse(
            question_id=s["question_id"],
            histogram=_parse_histogram(s, f"{path} seeding {s.get('question_id')}"),
            interquantile_probs=tuple(s.get("interquantile_probs",
                                            (0.05, 0.45, 0.45, 0.05))),
        )
        for s in doc.get("seeding", [])
    )
    target = {
        qid: _parse_histogram(h, f"{path} target {qid}")
        for qid, h in doc.get("target", {}).items()
    }
    return ExpertResponseSet(doc["expert_id"], seeding, target)


def save_expert_responses(expert: ExpertResponseSet, path):
    doc = {
        "schema": RESPONSES_SCHEMA,
        "expert_id": expert.expert_id,
        "seeding": [
            {"question_id": s.question_id,
             "support": list(s.histogram.support),
             "bin_probs": list(s.histogram.bin_probs),
             "interquantile_probs": list(s.interquantile_probs)}
            for s in expert.seeding
        ],
        "target": {
            qid: {"support": list(h.support), "bin_probs": list(h.bin_probs)}
            for qid, h in expert.target.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_seeding_key(path) -> dict[str, float]:
    doc = _load_json(path, SEEDING_KEY_SCHEMA)
    try:
        return {qid: float(ans["value"]) for qid, ans in doc["answers"].items()}
    except (KeyError, TypeError, ValueError) as err:
        raise IngestError(f"{path}: {err}") from err


# --- priors file ------------------------------------------------------------

_FAMILIES = {
    "uniform": lambda d: Uniform(d["lower"], d["upper"]),
    "truncated_normal": lambda d: TruncatedNormal(
        d["mu"], d["s"], d.get("lower", -math.inf), d.get("upper", math.inf)),
    "half_cauchy": lambda d: HalfCauchy(d["scale"]),
}


def _parse_scalar_prior(doc, ctx):
    try:
        return _FAMILIES[doc["family"]](doc)
    except KeyError as err:
        raise IngestError(f"{ctx}: unknown or incomplete prior family ({err})") from err
    except PriorError as err:
        raise IngestError(f"{ctx}: {err}") from err


def load_priors(path):
    """Returns (dirichlet by node, q priors by node, sigma priors by group)."""
    doc = _load_json(path, PRIORS_SCHEMA)
    try:
        dirichlet = {node: Dirichlet(tuple(a))
                     for node, a in doc.get("dirichlet", {}).items()}
    except PriorError as err:
        raise IngestError(f"{path}: {err}") from err
    q_priors = {node: _parse_scalar_prior(d, f"{path} inflow {node}")
                for node, d in doc.get("inflows", {}).items()}
    sigma_priors = {grp: _parse_scalar_prior(d, f"{path} sigma {grp}")
                    for grp, d in doc.get("sigma", {}).items()}
    return dirichlet, q_priors, sigma_priors


def save_priors(path, dirichlet=None, q_priors=None, sigma_priors=None):
    def scalar_doc(dist):
        if isinstance(dist, Uniform):
            return {"family": "uniform", "lower": dist.lower, "upper": dist.upper}
        if isinstance(dist, TruncatedNormal):
            return {"family": "truncated_normal", "mu": dist.mu, "s": dist.s,
                    "lower": dist.lower, "upper": dist.upper}
        if isinstance(dist, HalfCauchy):
            return {"family": "half_cauchy", "scale": dist.scale}
        raise PriorError(f"cannot serialize {dist!r}")

    doc = {
        "schema": PRIORS_SCHEMA,
        "dirichlet": {node: list(d.alpha) for node, d in (dirichlet or {}).items()},
        "inflows": {node: scalar_doc(d) for node, d in (q_priors or {}).items()},
        "sigma": {grp: scalar_doc(d) for grp, d in (sigma_priors or {}).items()},
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# --- pooled histograms ------------------------------------------------------

def load_pooled(path) -> dict[str, ElicitedHistogram]:
    doc = _load_json(path, POOLED_SCHEMA)
    return {qid: _parse_histogram(h, f"{path} quantity {qid}")
            for qid, h in doc["quantities"].items()}


def save_pooled(pooled: dict[str, ElicitedHistogram], path):
    doc = {
        "schema": POOLED_SCHEMA,
        "quantities": {
            qid: {"support": list(h.support), "bin_probs": list(h.bin_probs)}
            for qid, h in pooled.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# --- study bundle -----------------------------------------------------------

@dataclass
class StudyBundle:
    network: FlowNetwork
    observations_by_year: dict[int, list[ObservationRecord]]
    experts: list[ExpertResponseSet] = field(default_factory=list)
    seeding_key: dict[str, float] = field(default_factory=dict)
    dirichlet: dict[str, Dirichlet] = field(default_factory=dict)
    q_priors: dict = field(default_factory=dict)
    sigma_priors: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def observations(self) -> list[ObservationRecord]:
        return [r for year in sorted(self.observations_by_year)
                for r in self.observations_by_year[year]]

    def assembly(self, q_cap: float = 200.0) -> PriorAssembly:
        return build_assembly(self.network, self.observations,
                              dirichlet=self.dirichlet, q_priors=self.q_priors,
                              sigma_priors=self.sigma_priors, q_cap=q_cap)


def _target_binding_warnings(experts, net: FlowNetwork) -> list[str]:
    """Cross-validate target quantity ids; flag allocation rows whose
    effective elicited upper bounds cannot reach a sum of one."""
    warnings = []
    per_row_upper: dict[tuple[str, str], dict[str, float]] = {}
    edge_set = set(net.edges)
    for expert in experts:
        for qid, hist in expert.target.items():
            if qid.startswith("phi:"):
                a, b = qid[4:].split("->")
                if (net.node_index(a), net.node_index(b)) not in edge_set:
                    raise DanglingBinding(
                        f"expert {expert.expert_id!r}: target {qid!r} not an edge")
                # effective upper bound: right edge of the last nonzero bin
                probs = np.asarray(hist.bin_probs)
                nonzero = np.nonzero(probs)[0]
                upper = hist.bin_edges()[nonzero[-1] + 1] if len(nonzero) else 0.0
                per_row_upper.setdefault((expert.expert_id, a), {})[qid] = upper
            elif qid.startswith("q:"):
                net.node_index(qid[2:])
            else:
                warnings.append(
                    f"expert {expert.expert_id!r}: unrecognized target id {qid!r}")
    for (expert_id, node), uppers in per_row_upper.items():
        i = net.node_index(node)
        if len(uppers) == len(net.out_edges(i)) and sum(uppers.values()) < 1.0:
            warnings.append(
                f"expert {expert_id!r}: elicited upper bounds for allocation "
                f"row {node!r} sum to {sum(uppers.values()):.3f} < 1")
    return warnings


def load_study(network_path, observation_paths, *, response_paths=(),
               seeding_key_path=None, priors_path=None) -> StudyBundle:
    """Load and cross-validate a full study.

    Raises IngestError/DanglingBinding with file context on schema
    violations; collects non-fatal validation warnings on the bundle.
    """
    net = load_network(network_path)
    obs_by_year: dict[int, list[ObservationRecord]] = {}
    for path in observation_paths:
        for rec in load_observations(path, net):
            obs_by_year.setdefault(rec.year, []).append(rec)
    experts = [load_expert_responses(p) for p in response_paths]
    seeding_key = load_seeding_key(seeding_key_path) if seeding_key_path else {}
    for expert in experts:
        for s in expert.seeding:
            if seeding_key and s.question_id not in seeding_key:
                raise IngestError(
                    f"expert {expert.expert_id!r}: seeding question "
                    f"{s.question_id!r} missing from the answer key")
    dirichlet, q_priors, sigma_priors = ({}, {}, {})
    if priors_path:
        dirichlet, q_priors, sigma_priors = load_priors(priors_path)
        terminals = net.terminal_nodes()
        for node, d in dirichlet.items():
            i = net.node_index(node)
            if i in terminals:
                raise IngestError(f"Dirichlet prior for terminal node {node!r}")
            if d.dim != len(net.out_edges(i)):
                raise IngestError(
                    f"Dirichlet for {node!r} has {d.dim} components, node has "
                    f"{len(net.out_edges(i))} outgoing edges")
        for node in q_priors:
            if net.node_index(node) not in set(net.inflow_nodes):
                raise IngestError(f"inflow prior for non-inflow node {node!r}")
        groups = {g for recs in obs_by_year.values()
                  for r in recs if isinstance(r.sigma_group, str)
                  for g in [r.sigma_group]}
        for grp in sigma_priors:
            if grp not in groups:
                raise IngestError(f"sigma prior for unreferenced group {grp!r}")
    bundle = StudyBundle(net, obs_by_year, experts, seeding_key,
                         dirichlet, q_priors, sigma_priors)
    bundle.warnings.extend(_target_binding_warnings(experts, net))
    return bundle


def steel2012_paths() -> tuple[Path, Path]:
    """Paths of the shipped 2012 U.S. steel bundle (network, observations)."""
    from importlib.resources import files
    root = files("mfabayes") / "data" / "steel2012"
    return Path(str(root / "network.json")), Path(str(root / "observations_2012.csv"))


def load_steel2012() -> StudyBundle:
    net_path, obs_path = steel2012_paths()
    return load_study(net_path, [obs_path])


# --- posterior summaries and exports ----------------------------------------

@dataclass
class PosteriorSummary:
    parameter_stats: dict[str, dict[str, float]]
    edge_stats: dict[tuple[str, str], dict[str, float]]
    node_throughput: dict[str, dict[str, float]]
    dropped_particles: int
    sankey: dict


def summarize_posterior(particles: np.ndarray, net: FlowNetwork,
                        assembly: PriorAssembly) -> PosteriorSummary:
    """Summarize an equal-weight population: per-parameter and per-edge
    mean, std, central 90% interval, and Sankey export data.

    Particles whose flow solve fails are dropped and counted; a valid
    posterior must drop none.
    """
    model = LikelihoodModel(net, assembly, [])
    z, edge_flows, valid = model.solve_batch(particles)
    dropped = int((~valid).sum())
    z, edge_flows = z[valid], edge_flows[valid]
    particles = particles[valid]

    def stats(x):
        lo, hi = np.percentile(x, [5.0, 95.0])
        mean = float(np.mean(x))
        std = float(np.std(x))
        return {"mean": mean, "std": std, "q05": float(lo), "q95": float(hi),
                "uncertainty_pct": (std / mean * 100.0) if mean > 0 else math.inf}

    labels = assembly.labels()
    param_stats = {lab: stats(particles[:, k]) for k, lab in enumerate(labels)}
    names = net.node_names
    edge_stats = {
        (names[i], names[j]): stats(edge_flows[:, k])
        for k, (i, j) in enumerate(net.edges)
    }
    node_stats = {names[i]: stats(z[:, i]) for i in range(net.n_nodes)}
    sankey = {
        "schema": SANKEY_SCHEMA,
        "nodes": [{"name": n, "display": net.display_names.get(n, n)}
                  for n in names],
        "links": [
            {"source": names[i], "target": names[j],
             "mean": edge_stats[(names[i], names[j])]["mean"],
             "std": edge_stats[(names[i], names[j])]["std"],
             "uncertainty_pct": edge_stats[(names[i], names[j])]["uncertainty_pct"]}
            for i, j in net.edges
        ],
    }
    return PosteriorSummary(param_stats, edge_stats, node_stats, dropped, sankey)


def save_posterior(particles: np.ndarray, assembly: PriorAssembly, path):
    labels = assembly.labels()
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(labels)
        for row in particles:
            writer.writerow([repr(float(v)) for v in row])


def load_posterior(path, assembly: PriorAssembly) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != assembly.labels():
            raise IngestError(f"{path}: posterior columns do not match the assembly")
        return np.array([[float(v) for v in row] for row in reader])
