"""Deterministic discrete-time fluid simulation of a transfer plan.

Volume is chunked at the source; every tick each plan edge moves up to
rate*tick bytes of chunk data toward the destination.  Chunks are
store-and-forward at region granularity: a relay queues a chunk until fully
received, and an edge claims the next chunk only when the downstream queue
has a free slot (reserved at claim time), which is what bounds every queue.
A chunk claimed for transmission no longer occupies its region's queue, so a
two-hop pipeline runs at the minimum of the hop rates rather than their
serialization.

Rates derive from the planned edge flows, optionally scaled by mean-one
log-normal noise per edge per tick, and never exceed the connection-scaled
grid capacity or the endpoint VM limits.  Everything is ordered and the RNG
is seeded, so identical inputs give identical results.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import SimStallError
from .plan import TransferPlan
from .regions import RegionGraph, RegionId

BYTES_PER_GBIT = 1e9 / 8.0
STALL_TICK_LIMIT = 1000


@dataclass(frozen=True)
class NoiseSpec:
    seed: int
    relative_stddev: float

    def __post_init__(self):
        if not 0.0 <= self.relative_stddev <= 0.5:
            raise ValueError("relative_stddev must be in [0, 0.5]")


@dataclass(frozen=True)
class SimConfig:
    tick_s: float = 0.1
    chunk_mb: float = 64.0
    queue_cap_chunks: int = 128
    noise: NoiseSpec | None = None
    dispatch_policy: str = "dynamic"

    def __post_init__(self):
        if not self.tick_s > 0:
            raise ValueError("tick_s must be > 0")
        if not self.chunk_mb > 0:
            raise ValueError("chunk_mb must be > 0")
        if self.queue_cap_chunks < 1:
            raise ValueError("queue_cap_chunks must be >= 1")
        if self.dispatch_policy not in ("dynamic", "round_robin"):
            raise ValueError("dispatch_policy must be 'dynamic' or 'round_robin'")


@dataclass
class SimResult:
    achieved_throughput_gbps: float
    completion_time_s: float
    ticks: int
    edge_delivered_gb: dict[str, float]
    path_delivered_gb: dict[str, float]
    max_queue_depth: dict[str, int]

    def to_text(self) -> str:
        import json

        doc = {
            "version": 1,
            "achieved": {"gbps": self.achieved_throughput_gbps,
                         "seconds": self.completion_time_s, "ticks": self.ticks},
            "edges": [{"edge": k, "gb": v} for k, v in sorted(self.edge_delivered_gb.items())],
            "paths": [{"path": k, "gb": v} for k, v in sorted(self.path_delivered_gb.items())],
            "max_queue": dict(sorted(self.max_queue_depth.items())),
        }
        return json.dumps(doc, indent=2) + "\n"


class _Chunk:
    __slots__ = ("chunk_id", "size", "route")

    def __init__(self, chunk_id: int, size: float, origin: RegionId):
        self.chunk_id = chunk_id
        self.size = size
        self.route = [origin]


class _EdgeState:
    __slots__ = ("src", "dst", "rate_bps", "cap_bps", "budget", "current", "sent_bytes",
                 "delivered_bytes")

    def __init__(self, src: RegionId, dst: RegionId, rate_bps: float, cap_bps: float):
        self.src = src
        self.dst = dst
        self.rate_bps = rate_bps          # planned rate in bytes/s
        self.cap_bps = cap_bps            # hard ceiling in bytes/s
        self.budget = 0.0
        self.current: _Chunk | None = None
        self.sent_bytes = 0.0             # progress on the current chunk
        self.delivered_bytes = 0.0


class _RegionState:
    __slots__ = ("region", "cap", "count", "unassigned", "per_edge", "rr_next", "max_depth")

    def __init__(self, region: RegionId, cap: int, n_edges: int):
        self.region = region
        self.cap = cap
        self.count = 0               # resident chunks + inbound reservations
        self.unassigned: deque[_Chunk] = deque()
        self.per_edge: list[deque[_Chunk]] = [deque() for _ in range(n_edges)]
        self.rr_next = 0
        self.max_depth = 0


def simulate(plan: TransferPlan, graph: RegionGraph, cfg: SimConfig) -> SimResult:
    """Run the plan to completion and report the achieved performance."""
    job = plan.job
    chunk_bytes = cfg.chunk_mb * 1e6
    volume_bytes = job.volume_gb * 1e9
    n_chunks = max(1, math.ceil(volume_bytes / chunk_bytes))

    regions = sorted(set(plan.vm_counts) | {job.src, job.dst})
    edges_of: dict[RegionId, list[_EdgeState]] = {r: [] for r in regions}
    edge_states: list[_EdgeState] = []
    for (u, v) in sorted(plan.edge_flows):
        flow = plan.edge_flows[(u, v)]
        conns = plan.edge_conns[(u, v)]
        n_u = plan.vm_counts.get(u, 0)
        n_v = plan.vm_counts.get(v, 0)
        cap_gbps = min(
            graph.throughput_gbps(u, v) * conns / graph.spec(u).conn_limit,
            graph.spec(u).egress_limit_gbps * n_u,
            graph.spec(v).ingress_limit_gbps * n_v)
        state = _EdgeState(u, v, flow * BYTES_PER_GBIT, cap_gbps * BYTES_PER_GBIT)
        edge_states.append(state)
        edges_of[u].append(state)

    node: dict[RegionId, _RegionState] = {}
    for r in regions:
        cap = cfg.queue_cap_chunks * max(1, plan.vm_counts.get(r, 0))
        node[r] = _RegionState(r, cap, len(edges_of[r]))

    rng = np.random.default_rng(cfg.noise.seed) if cfg.noise is not None else None
    sigma = (math.sqrt(math.log(1.0 + cfg.noise.relative_stddev ** 2))
             if cfg.noise is not None else 0.0)

    round_robin = cfg.dispatch_policy == "round_robin"

    def place(region_state: _RegionState, chunk: _Chunk):
        # reservation became residency; route the chunk to an outgoing lane
        if round_robin and edges_of[region_state.region]:
            lane = region_state.rr_next % len(region_state.per_edge)
            region_state.rr_next += 1
            region_state.per_edge[lane].append(chunk)
        else:
            region_state.unassigned.append(chunk)

    path_delivered: dict[str, float] = {}
    delivered_chunks = 0
    delivered_bytes = 0.0
    injected_chunks = 0
    injected_bytes = 0.0
    src_state = node[job.src]
    dst = job.dst

    def next_chunk_size(index: int) -> float:
        if index < n_chunks - 1:
            return chunk_bytes
        return volume_bytes - chunk_bytes * (n_chunks - 1)

    ticks = 0
    stall_ticks = 0
    while delivered_chunks < n_chunks:
        ticks += 1
        moved_total = 0.0

        # source reads more chunks whenever its queue has room
        while injected_chunks < n_chunks and src_state.count < src_state.cap:
            chunk = _Chunk(injected_chunks, next_chunk_size(injected_chunks), job.src)
            src_state.count += 1
            injected_bytes += chunk.size
            injected_chunks += 1
            place(src_state, chunk)

        for e in edge_states:
            rate = e.rate_bps
            if rng is not None:
                rate *= rng.lognormal(mean=-0.5 * sigma * sigma, sigma=sigma)
            e.budget = min(rate, e.cap_bps) * cfg.tick_s

        for r in regions:
            state = node[r]
            lanes = edges_of[r]
            if not lanes:
                continue
            while True:
                progress = False
                for li, e in enumerate(lanes):
                    if e.current is None or e.budget <= 1e-9:
                        continue
                    remaining = e.current.size - e.sent_bytes
                    step = min(e.budget, remaining)
                    e.budget -= step
                    e.sent_bytes += step
                    moved_total += step
                    if step > 0:
                        progress = True
                    if e.sent_bytes >= e.current.size - 1e-6:
                        chunk = e.current
                        e.current = None
                        e.sent_bytes = 0.0
                        e.delivered_bytes += chunk.size
                        chunk.route.append(e.dst)
                        down = node[e.dst]
                        if e.dst == dst:
                            down.count -= 1
                            delivered_chunks += 1
                            delivered_bytes += chunk.size
                            key = ">".join(x.canonical() for x in chunk.route)
                            path_delivered[key] = path_delivered.get(key, 0.0) + chunk.size
                        else:
                            place(down, chunk)
                for li, e in enumerate(lanes):
                    if e.current is not None or e.budget <= 1e-9:
                        continue
                    down = node[e.dst]
                    if down.count >= down.cap:
                        continue
                    if round_robin:
                        lane_queue = state.per_edge[li]
                        if not lane_queue:
                            continue
                        chunk = lane_queue.popleft()
                    else:
                        if not state.unassigned:
                            continue
                        # dynamic dispatch: the freest eligible lane claims first
                        best = max(
                            (x for x in lanes
                             if x.current is None and x.budget > 1e-9
                             and node[x.dst].count < node[x.dst].cap),
                            key=lambda x: x.budget)
                        if best is not e:
                            continue
                        chunk = state.unassigned.popleft()
                    state.count -= 1
                    down.count += 1     # reserve the downstream slot now
                    e.current = chunk
                    e.sent_bytes = 0.0
                    progress = True
                if not progress:
                    break

        in_system = sum(1 for e in edge_states if e.current is not None)
        for r in regions:
            state = node[r]
            if state.count > state.cap:
                raise SimStallError(f"queue cap exceeded at {r}: {state.count} > {state.cap}")
            state.max_depth = max(state.max_depth, state.count)
            in_system += len(state.unassigned) + sum(len(q) for q in state.per_edge)
        if injected_chunks != delivered_chunks + in_system:
            raise SimStallError("chunk conservation violated: "
                                f"{injected_chunks} != {delivered_chunks} + {in_system}")

        if moved_total <= 0.0 and delivered_chunks < n_chunks:
            stall_ticks += 1
            if stall_ticks >= STALL_TICK_LIMIT:
                raise SimStallError(
                    f"no progress for {STALL_TICK_LIMIT} ticks "
                    f"({delivered_chunks}/{n_chunks} chunks delivered)")
        else:
            stall_ticks = 0

    completion = ticks * cfg.tick_s
    return SimResult(
        achieved_throughput_gbps=volume_bytes / BYTES_PER_GBIT / completion,
        completion_time_s=completion,
        ticks=ticks,
        edge_delivered_gb={
            f"{e.src}>{e.dst}": e.delivered_bytes / 1e9 for e in edge_states},
        path_delivered_gb={k: v / 1e9 for k, v in sorted(path_delivered.items())},
        max_queue_depth={r.canonical(): node[r].max_depth for r in regions},
    )
