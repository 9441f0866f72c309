"""Command-line pipeline: validate -> weight-experts -> aggregate-priors ->
fit-priors -> infer -> bayes-factor.

Stages communicate only through documented files, so any stage can be rerun
or swapped for hand-edited inputs. Exit codes: 0 success, 2 validation or
usage failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import ingest
from .elicitation import (ElicitationError, cooke_weights, pool_linear,
                          pool_logarithmic, rebin)
from .likelihood import default_sigma_prior, sigma_groups
from .model_selection import (ModelHypothesis, MultiYearModel, bayes_factor,
                              estimate_log_evidence, model_posterior_probs)
from .priors import PriorError, fit_dirichlet, fit_scalar_histogram
from .smc import SmcConfig, SmcError, run_smc

log = logging.getLogger("mfabayes")

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

WEIGHTS_SCHEMA = "mfabayes/expert-weights/v1"


class UsageError(ValueError):
    pass


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _load_bundle(args, *, need_observations=True):
    obs_paths = list(getattr(args, "observations", []) or [])
    if need_observations and not obs_paths:
        raise UsageError("at least one --observations file is required")
    return ingest.load_study(
        args.network, obs_paths,
        response_paths=getattr(args, "responses", []) or [],
        seeding_key_path=getattr(args, "seeding_key", None),
        priors_path=getattr(args, "priors", None),
    )


# --- commands ---------------------------------------------------------------

def cmd_validate(args):
    bundle = _load_bundle(args, need_observations=False)
    for w in bundle.warnings:
        print(f"warning: {w}")
    n_obs = sum(len(v) for v in bundle.observations_by_year.values())
    print(f"ok: {bundle.network.n_nodes} nodes, {len(bundle.network.edges)} edges, "
          f"{n_obs} observations, {len(bundle.experts)} experts")
    return 0


def cmd_weight_experts(args):
    if not args.responses:
        raise UsageError("--responses is required")
    if not args.seeding_key:
        raise UsageError("--seeding-key is required")
    experts = [ingest.load_expert_responses(p) for p in args.responses]
    key = ingest.load_seeding_key(args.seeding_key)
    if not key:
        raise UsageError("seeding key is empty")
    weights = cooke_weights(experts, key)
    doc = {
        "schema": WEIGHTS_SCHEMA,
        "weights": [
            {"expert_id": w.expert_id, "calibration": w.calibration,
             "information": w.information, "weight": w.weight}
            for w in weights
        ],
    }
    _write_json(args.out, doc)
    for w in weights:
        print(f"{w.expert_id}\tC={w.calibration:.6f}\tK={w.information:.6f}\t"
              f"w={w.weight:.6f}")
    return 0


def _load_weights(path) -> dict[str, float]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != WEIGHTS_SCHEMA:
        raise ingest.IngestError(f"{path}: not an expert-weights file")
    return {w["expert_id"]: w["weight"] for w in doc["weights"]}


def cmd_aggregate_priors(args):
    if not args.responses:
        raise UsageError("--responses is required")
    experts = [ingest.load_expert_responses(p) for p in args.responses]
    weights = _load_weights(args.weights)
    pool = pool_linear if args.pooling == "linear" else pool_logarithmic
    quantities: dict[str, list] = {}
    for expert in experts:
        if expert.expert_id not in weights:
            raise UsageError(f"no weight for expert {expert.expert_id!r}")
        for qid, hist in expert.target.items():
            quantities.setdefault(qid, []).append((weights[expert.expert_id], hist))

    pooled = {}
    for qid, answered in sorted(quantities.items()):
        ws = np.array([w for w, _ in answered])
        if ws.sum() == 0:
            ws = np.full(len(ws), 1.0 / len(ws))
        else:
            ws = ws / ws.sum()
        hists = [h for _, h in answered]
        lo = min(h.support[0] for h in hists)
        hi = max(h.support[1] for h in hists)
        n_bins = max(h.n_bins for h in hists)
        hists = [rebin(h, (lo, hi), n_bins) for h in hists]
        pooled[qid] = pool(hists, ws)
    ingest.save_pooled(pooled, args.out)
    print(f"pooled {len(pooled)} quantities ({args.pooling}) -> {args.out}")
    return 0


def cmd_fit_priors(args):
    net = ingest.load_network(args.network)
    pooled = ingest.load_pooled(args.pooled)
    terminals = net.terminal_nodes()
    names = net.node_names

    by_node: dict[str, dict[tuple[int, int], object]] = {}
    q_hists: dict[str, object] = {}
    for qid, hist in pooled.items():
        if qid.startswith("phi:"):
            a, b = qid[4:].split("->")
            e = (net.node_index(a), net.node_index(b))
            if e not in set(net.edges):
                raise ingest.DanglingBinding(f"pooled quantity {qid!r} is not an edge")
            by_node.setdefault(a, {})[e] = hist
        elif qid.startswith("q:"):
            q_hists[qid[2:]] = hist
        else:
            raise ingest.IngestError(f"unrecognized pooled quantity id {qid!r}")

    dirichlet = {}
    for node, hists in sorted(by_node.items()):
        i = net.node_index(node)
        out = net.out_edges(i)
        if len(out) == 1:
            log.info("node %r has a single outgoing edge: phi fixed at 1", node)
            continue
        missing = [e for e in out if e not in hists]
        if missing:
            raise ingest.IngestError(
                f"node {node!r}: missing pooled histograms for edges "
                f"{[(names[a], names[b]) for a, b in missing]}")
        ordered = [rebin(hists[e], (0.0, 1.0), 10) for e in out]
        alpha, obj = fit_dirichlet(ordered)
        dirichlet[node] = __import__("mfabayes.priors", fromlist=["Dirichlet"]).Dirichlet(tuple(alpha))
        print(f"{node}: alpha = {np.round(alpha, 4).tolist()} (objective {obj:.3e})")

    q_priors = {}
    for node, hist in sorted(q_hists.items()):
        if net.node_index(node) not in set(net.inflow_nodes):
            raise ingest.DanglingBinding(f"pooled inflow {node!r} is not an inflow node")
        q_priors[node] = fit_scalar_histogram(hist, 0.0, math.inf)
        print(f"q {node}: truncated normal mu={q_priors[node].mu:.4g} "
              f"s={q_priors[node].s:.4g}")

    sigma_priors = {}
    if args.observations:
        obs = []
        for p in args.observations:
            obs.extend(ingest.load_observations(p, net))
        default = default_sigma_prior()
        sigma_priors = {g: default for g in sigma_groups(obs)}
    ingest.save_priors(args.out, dirichlet, q_priors, sigma_priors)
    print(f"wrote {args.out}")
    return 0


def cmd_infer(args):
    bundle = _load_bundle(args)
    for w in bundle.warnings:
        print(f"warning: {w}")
    assembly = bundle.assembly(q_cap=args.q_cap)
    config = SmcConfig(
        n_particles=args.particles,
        n_mh_steps=args.mh_steps,
        ess_threshold_frac=args.ess_threshold,
        seed=args.seed,
        backend=args.backend,
    )
    result = run_smc(assembly, bundle.observations, bundle.network, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ingest.save_posterior(result.population.particles, assembly, out / "posterior.csv")
    with (out / "diagnostics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "beta", "ess", "acceptance", "scale", "resampled"])
        for k, s in enumerate(result.stages, start=1):
            writer.writerow([k, s.beta, s.ess, s.acceptance, s.scale, s.resampled])

    summary = ingest.summarize_posterior(result.population.particles,
                                         bundle.network, assembly)
    _write_json(out / "sankey.json", summary.sankey)
    _write_json(out / "summary.json", {
        "parameters": summary.parameter_stats,
        "edges": {f"{a}->{b}": v for (a, b), v in summary.edge_stats.items()},
        "node_throughput": summary.node_throughput,
        "dropped_particles": summary.dropped_particles,
        "stages": len(result.stages),
        "beta_schedule": result.beta_schedule,
    })
    print(f"completed {len(result.stages)} stages; "
          f"{summary.dropped_particles} dropped particles; results in {out}")
    return 0 if summary.dropped_particles == 0 else EXIT_RUNTIME


def cmd_bayes_factor(args):
    bundle = _load_bundle(args)
    if len(bundle.observations_by_year) < 2:
        raise UsageError("bayes-factor needs observations from at least two years")
    hypotheses = ModelHypothesis.standard()
    if args.models:
        wanted = {m.strip() for m in args.models.split(",")}
        hypotheses = [h for h in hypotheses if h.id in wanted]
        if not hypotheses:
            raise UsageError(f"no known models in {args.models!r}")
    rng = np.random.default_rng(args.seed)
    estimates = {}
    for hyp in hypotheses:
        model = MultiYearModel(
            bundle.network, bundle.observations_by_year, hyp,
            dirichlet=bundle.dirichlet, q_priors=bundle.q_priors,
            sigma_priors=bundle.sigma_priors, q_cap=args.q_cap,
            backend=args.backend)
        est = estimate_log_evidence(model, args.samples, rng)
        estimates[hyp.id] = est
        print(f"{hyp.id}: log evidence = {est.log_evidence:.4f} "
              f"(MC s.e. {est.mc_std_err:.3g}, n = {est.n_samples})")

    rows = []
    ids = [h.id for h in hypotheses]
    for a in ids:
        for b in ids:
            if a >= b:
                continue
            log_bf, label = bayes_factor(estimates[a].log_evidence,
                                         estimates[b].log_evidence, a, b)
            rows.append({"pair": f"{a}:{b}", "log_bf": log_bf, "label": label})
            print(f"BF({a}:{b}): log BF = {log_bf:.4f} -> {label}")
    probs = model_posterior_probs({m: e.log_evidence for m, e in estimates.items()})
    if args.out:
        _write_json(args.out, {
            "schema": "mfabayes/bayes-factors/v1",
            "evidence": {m: {"log_evidence": e.log_evidence,
                             "mc_std_err": e.mc_std_err,
                             "n_samples": e.n_samples}
                         for m, e in estimates.items()},
            "bayes_factors": rows,
            "model_posterior": probs,
        })
    return 0


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfabayes",
        description="Bayesian material-flow analysis with expert-elicited priors")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_network(p):
        p.add_argument("--network", required=True)

    def add_obs(p):
        p.add_argument("--observations", action="append", default=[],
                       help="observation table CSV; repeat per year")

    p = sub.add_parser("validate", help="parse and cross-check all inputs")
    add_network(p)
    add_obs(p)
    p.add_argument("--responses", action="append", default=[])
    p.add_argument("--seeding-key", dest="seeding_key")
    p.add_argument("--priors")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("weight-experts", help="Cooke calibration/information weights")
    p.add_argument("--responses", action="append", default=[], required=True)
    p.add_argument("--seeding-key", dest="seeding_key", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weight_experts)

    p = sub.add_parser("aggregate-priors", help="pool expert histograms")
    p.add_argument("--responses", action="append", default=[], required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--pooling", choices=["linear", "logarithmic"], default="linear")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate_priors)

    p = sub.add_parser("fit-priors", help="fit prior families to pooled histograms")
    add_network(p)
    p.add_argument("--pooled", required=True)
    add_obs(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_priors)

    p = sub.add_parser("infer", help="run the SMC sampler")
    add_network(p)
    add_obs(p)
    p.add_argument("--responses", action="append", default=[])
    p.add_argument("--seeding-key", dest="seeding_key")
    p.add_argument("--priors")
    p.add_argument("--particles", type=int, default=10_000)
    p.add_argument("--mh-steps", type=int, default=10)
    p.add_argument("--ess-threshold", type=float, default=0.5,
                   help="resample when ESS falls below this fraction of N")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--q-cap", type=float, default=200.0,
                   help="upper bound for default uniform inflow priors (Mt)")
    p.add_argument("--backend", choices=["auto", "compiled", "python"],
                   default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bayes-factor", help="compare year-tying model hypotheses")
    add_network(p)
    add_obs(p)
    p.add_argument("--priors")
    p.add_argument("--models", help="comma-separated subset of M1,M2,M3,M4")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--q-cap", type=float, default=200.0)
    p.add_argument("--backend", choices=["auto", "compiled", "python"],
                   default="auto")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bayes_factor)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ingest.IngestError, ElicitationError, PriorError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SmcError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
