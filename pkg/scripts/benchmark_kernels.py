#!/usr/bin/env python3
"""Benchmark the compiled flow kernel against the NumPy fallback.

Times the batched likelihood evaluation (the hot loop of the sampler) on the
shipped 2012 steel bundle and on a small synthetic network, and checks that
both backends agree bitwise on valid particles.

Usage: python3 scripts/benchmark_kernels.py [--particles N] [--repeats R]
"""

import argparse
import time

import numpy as np

from mfabayes.ingest import load_steel2012
from mfabayes.kernels import HAVE_COMPILED
from mfabayes.likelihood import LikelihoodModel, ObservationRecord, build_assembly
from mfabayes.network import EdgeRatio, ExternalInput, FlowNetwork


def time_backend(net, asm, obs, backend, thetas, repeats):
    model = LikelihoodModel(net, asm, obs, backend=backend)
    model.loglik_batch(thetas[:16])  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = model.loglik_batch(thetas)
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_case(name, net, obs, n_particles, repeats):
    asm = build_assembly(net, obs)
    rng = np.random.default_rng(0)
    thetas = asm.sample(rng, n_particles)
    t_py, out_py = time_backend(net, asm, obs, "python", thetas, repeats)
    print(f"{name}: dim={asm.dim}, {n_particles} particles, "
          f"{len(obs)} observations")
    print(f"  python   {t_py * 1e3:8.2f} ms  "
          f"({n_particles / t_py:,.0f} particles/s)")
    if HAVE_COMPILED:
        t_c, out_c = time_backend(net, asm, obs, "compiled", thetas, repeats)
        match = np.array_equal(out_py, out_c, equal_nan=True)
        print(f"  compiled {t_c * 1e3:8.2f} ms  "
              f"({n_particles / t_c:,.0f} particles/s)  "
              f"speedup x{t_py / t_c:.2f}  bitwise match: {match}")
    else:
        print("  compiled kernel not available in this install")
    print()


def toy_case():
    net = FlowNetwork.from_names(["A", "B", "C"], [("A", "B"), ("A", "C")],
                                 ["A"])
    obs = [
        ObservationRecord("q", "", "external_input", ExternalInput(0), 8.0,
                          2012, sigma_group="g"),
        ObservationRecord("r", "", "ratio", EdgeRatio(0, 1), 0.3, 2012,
                          sigma_group="g"),
    ]
    return net, obs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=4000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    net, obs = toy_case()
    run_case("toy 3-node", net, obs, args.particles, args.repeats)

    bundle = load_steel2012()
    run_case("steel 2012 (43 nodes)", bundle.network, bundle.observations,
             args.particles, args.repeats)


if __name__ == "__main__":
    main()
