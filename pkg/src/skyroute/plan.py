"""Transfer jobs, concrete transfer plans, accounting and serialization.

A plan is the full resource recipe for one transfer: VMs per region, flow
rate and TCP connection count per ordered region pair, plus the predicted
throughput / cost / time.  Cost always re-derives from the recipe: egress is
volume priced per edge, VMs are billed for the predicted transfer duration.

Plans are immutable once built and serialize to a versioned JSON document
(see PLAN_SCHEMA_VERSION); parsing rejects unknown or missing fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import PlanSchemaError
from .regions import RegionGraph, RegionId

PLAN_SCHEMA_VERSION = 1
MONEY_TOL = 1e-6
GBIT_PER_GB = 8.0
BOTTLENECK_THRESHOLD = 0.99

Edge = tuple[RegionId, RegionId]


@dataclass(frozen=True)
class TransferJob:
    """A transfer request: src, dst, volume and exactly one constraint."""

    src: RegionId
    dst: RegionId
    volume_gb: float
    throughput_floor_gbps: float | None = None
    cost_ceiling_usd: float | None = None
    vm_cap_override: int | None = None

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("src and dst must differ")
        if not self.volume_gb > 0:
            raise ValueError("volume_gb must be > 0")
        have_floor = self.throughput_floor_gbps is not None
        have_ceiling = self.cost_ceiling_usd is not None
        if have_floor == have_ceiling:
            raise ValueError("exactly one of throughput floor / cost ceiling required")
        if have_floor and not self.throughput_floor_gbps > 0:
            raise ValueError("throughput floor must be > 0")
        if have_ceiling and not self.cost_ceiling_usd > 0:
            raise ValueError("cost ceiling must be > 0")
        if self.vm_cap_override is not None and self.vm_cap_override < 1:
            raise ValueError("vm_cap_override must be >= 1")

    @property
    def has_floor(self) -> bool:
        return self.throughput_floor_gbps is not None

    def with_constraint(self, floor: float | None = None,
                        ceiling: float | None = None) -> "TransferJob":
        return TransferJob(self.src, self.dst, self.volume_gb,
                           throughput_floor_gbps=floor, cost_ceiling_usd=ceiling,
                           vm_cap_override=self.vm_cap_override)


@dataclass(frozen=True)
class TransferPlan:
    job: TransferJob
    vm_counts: dict[RegionId, int]
    edge_flows: dict[Edge, float]
    edge_conns: dict[Edge, int]
    predicted_throughput_gbps: float
    predicted_cost_usd: float
    predicted_time_s: float

    def regions_used(self) -> list[RegionId]:
        return sorted(self.vm_counts)


def make_plan(job: TransferJob, graph: RegionGraph, vm_counts: dict[RegionId, int],
              edge_flows: dict[Edge, float], edge_conns: dict[Edge, int]) -> TransferPlan:
    """Assemble a plan, deriving throughput, time and cost from the fields."""
    throughput = sum(f for (u, _), f in edge_flows.items() if u == job.src)
    if throughput <= 0:
        raise ValueError("plan carries no flow out of the source")
    time_s = job.volume_gb * GBIT_PER_GB / throughput
    vm_counts = {r: int(c) for r, c in sorted(vm_counts.items()) if c > 0}
    edge_flows = {e: float(f) for e, f in sorted(edge_flows.items()) if f > 0}
    edge_conns = {e: int(edge_conns[e]) for e in edge_flows}
    plan = TransferPlan(job, vm_counts, edge_flows, edge_conns,
                        float(throughput), 0.0, float(time_s))
    egress, vms = account_cost(plan, graph)
    return TransferPlan(job, vm_counts, edge_flows, edge_conns,
                        float(throughput), float(egress + vms), float(time_s))


def account_cost(plan: TransferPlan, graph: RegionGraph) -> tuple[float, float]:
    """Split the plan's cost into (egress USD, VM USD).

    Egress: each edge moves flow/8 GB per second for the whole transfer and
    is billed per GB.  VMs: every allocated VM runs for the whole transfer.
    """
    time_s = plan.predicted_time_s
    egress = sum(
        flow / GBIT_PER_GB * graph.price_usd_per_gb(u, v) * time_s
        for (u, v), flow in plan.edge_flows.items())
    vms = sum(
        count * graph.spec(region).cost_per_second * time_s
        for region, count in plan.vm_counts.items())
    return float(egress), float(vms)


@dataclass(frozen=True)
class BottleneckEntry:
    kind: str       # "vm" | "link"
    role: str       # "source" | "overlay" | "destination"
    key: str        # region id, or "u>v" for links
    utilization: float
    flagged: bool


@dataclass
class BottleneckReport:
    entries: list[BottleneckEntry] = field(default_factory=list)

    def flagged(self) -> list[BottleneckEntry]:
        return [e for e in self.entries if e.flagged]

    def has_flag(self, kind: str, role: str | None = None) -> bool:
        return any(e.kind == kind and (role is None or e.role == role)
                   for e in self.flagged())

    def to_text(self) -> str:
        lines = ["kind,role,location,utilization,flagged"]
        for e in self.entries:
            lines.append(f"{e.kind},{e.role},{e.key},{e.utilization:.6f},{int(e.flagged)}")
        return "\n".join(lines) + "\n"


def _ratio(used: float, limit: float) -> float:
    if limit <= 0:
        return 0.0
    return min(1.0, used / limit)


def find_bottlenecks(plan: TransferPlan, graph: RegionGraph) -> BottleneckReport:
    """Per-VM and per-link utilizations with the >0.99 locations flagged.

    VM utilization per region is the worse of its ingress and egress loads
    against the aggregate per-VM limits; link utilization compares the edge
    flow against the connection-scaled grid capacity.  Several locations may
    be flagged at once.
    """
    job = plan.job
    inflow: dict[RegionId, float] = {}
    outflow: dict[RegionId, float] = {}
    for (u, v), f in plan.edge_flows.items():
        outflow[u] = outflow.get(u, 0.0) + f
        inflow[v] = inflow.get(v, 0.0) + f

    def role_of(region: RegionId) -> str:
        if region == job.src:
            return "source"
        if region == job.dst:
            return "destination"
        return "overlay"

    report = BottleneckReport()
    for region in sorted(plan.vm_counts):
        n = plan.vm_counts[region]
        spec = graph.spec(region)
        util = max(
            _ratio(inflow.get(region, 0.0), spec.ingress_limit_gbps * n),
            _ratio(outflow.get(region, 0.0), spec.egress_limit_gbps * n))
        report.entries.append(BottleneckEntry(
            "vm", role_of(region), region.canonical(), util,
            util > BOTTLENECK_THRESHOLD))
    for (u, v) in sorted(plan.edge_flows):
        flow = plan.edge_flows[(u, v)]
        conns = plan.edge_conns[(u, v)]
        cap = graph.throughput_gbps(u, v) * conns / graph.spec(u).conn_limit
        util = _ratio(flow, cap)
        link_role = "source" if u == job.src else "overlay"
        report.entries.append(BottleneckEntry(
            "link", link_role, f"{u}>{v}", util, util > BOTTLENECK_THRESHOLD))
    return report


def check_plan_invariants(plan: TransferPlan, graph: RegionGraph) -> list[str]:
    """Internal consistency checks; returns a list of violation messages."""
    problems = []
    expect_time = plan.job.volume_gb * GBIT_PER_GB / plan.predicted_throughput_gbps
    if abs(expect_time - plan.predicted_time_s) > 1e-6 * max(1.0, expect_time):
        problems.append(f"time {plan.predicted_time_s} != volume*8/throughput {expect_time}")
    egress, vms = account_cost(plan, graph)
    if abs(egress + vms - plan.predicted_cost_usd) > MONEY_TOL:
        problems.append(f"cost {plan.predicted_cost_usd} != egress {egress} + vm {vms}")
    for (u, v), f in plan.edge_flows.items():
        if f <= 0:
            problems.append(f"non-positive flow on {u}>{v}")
        if plan.edge_conns.get((u, v), 0) <= 0:
            problems.append(f"flow without connections on {u}>{v}")
        for endpoint in (u, v):
            if plan.vm_counts.get(endpoint, 0) <= 0:
                problems.append(f"flow on {u}>{v} but no VMs in {endpoint}")
    return problems


# ---------------------------------------------------------------- plan files

_JOB_FIELDS = {"src", "dst", "volume_gb", "constraint"}
_TOP_FIELDS = {"version", "job", "vms", "edges", "predicted"}
_EDGE_FIELDS = {"src", "dst", "gbps", "conns"}
_PREDICTED_FIELDS = {"gbps", "usd", "seconds"}
_CONSTRAINT_FIELDS = {"throughput_floor_gbps", "cost_ceiling_usd"}


def serialize_plan(plan: TransferPlan) -> str:
    constraint = (
        {"throughput_floor_gbps": plan.job.throughput_floor_gbps}
        if plan.job.has_floor else
        {"cost_ceiling_usd": plan.job.cost_ceiling_usd})
    doc = {
        "version": PLAN_SCHEMA_VERSION,
        "job": {
            "src": plan.job.src.canonical(),
            "dst": plan.job.dst.canonical(),
            "volume_gb": plan.job.volume_gb,
            "constraint": constraint,
        },
        "vms": {r.canonical(): c for r, c in sorted(plan.vm_counts.items())},
        "edges": [
            {"src": u.canonical(), "dst": v.canonical(),
             "gbps": plan.edge_flows[(u, v)], "conns": plan.edge_conns[(u, v)]}
            for (u, v) in sorted(plan.edge_flows)
        ],
        "predicted": {
            "gbps": plan.predicted_throughput_gbps,
            "usd": plan.predicted_cost_usd,
            "seconds": plan.predicted_time_s,
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def _require(mapping: dict, allowed: set[str], where: str):
    for key in mapping:
        if key not in allowed:
            raise PlanSchemaError(f"unknown field {key!r} in {where}")
    for key in allowed:
        if key not in mapping:
            raise PlanSchemaError(f"missing field {key!r} in {where}")


def _number(value, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        raise PlanSchemaError(f"{where} must be a finite number, got {value!r}")
    return float(value)


def parse_plan(text: str) -> TransferPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanSchemaError(f"plan is not valid JSON: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise PlanSchemaError("plan document must be an object")
    _require(doc, _TOP_FIELDS, "plan")
    if doc["version"] != PLAN_SCHEMA_VERSION:
        raise PlanSchemaError(f"unsupported plan version {doc['version']!r}")

    jobdoc = doc["job"]
    if not isinstance(jobdoc, dict):
        raise PlanSchemaError("job must be an object")
    _require(jobdoc, _JOB_FIELDS, "job")
    constraint = jobdoc["constraint"]
    if not isinstance(constraint, dict) or len(constraint) != 1:
        raise PlanSchemaError("job.constraint must hold exactly one entry")
    (ckey, cval), = constraint.items()
    if ckey not in _CONSTRAINT_FIELDS:
        raise PlanSchemaError(f"unknown field {ckey!r} in job.constraint")
    try:
        job = TransferJob(
            RegionId.parse(jobdoc["src"]),
            RegionId.parse(jobdoc["dst"]),
            _number(jobdoc["volume_gb"], "job.volume_gb"),
            throughput_floor_gbps=_number(cval, ckey) if ckey == "throughput_floor_gbps" else None,
            cost_ceiling_usd=_number(cval, ckey) if ckey == "cost_ceiling_usd" else None,
        )
    except ValueError as exc:
        raise PlanSchemaError(str(exc)) from None

    vmsdoc = doc["vms"]
    if not isinstance(vmsdoc, dict):
        raise PlanSchemaError("vms must be an object")
    vm_counts: dict[RegionId, int] = {}
    for key, count in vmsdoc.items():
        if not isinstance(count, int) or count < 1:
            raise PlanSchemaError(f"vms[{key!r}] must be a positive integer")
        try:
            vm_counts[RegionId.parse(key)] = count
        except ValueError as exc:
            raise PlanSchemaError(str(exc)) from None

    edgesdoc = doc["edges"]
    if not isinstance(edgesdoc, list):
        raise PlanSchemaError("edges must be a list")
    edge_flows: dict[Edge, float] = {}
    edge_conns: dict[Edge, int] = {}
    for k, entry in enumerate(edgesdoc):
        if not isinstance(entry, dict):
            raise PlanSchemaError(f"edges[{k}] must be an object")
        _require(entry, _EDGE_FIELDS, f"edges[{k}]")
        try:
            edge = (RegionId.parse(entry["src"]), RegionId.parse(entry["dst"]))
        except ValueError as exc:
            raise PlanSchemaError(str(exc)) from None
        if edge in edge_flows:
            raise PlanSchemaError(f"duplicate edge in edges[{k}]")
        gbps = _number(entry["gbps"], f"edges[{k}].gbps")
        if gbps <= 0:
            raise PlanSchemaError(f"edges[{k}].gbps must be > 0")
        if not isinstance(entry["conns"], int) or entry["conns"] < 1:
            raise PlanSchemaError(f"edges[{k}].conns must be a positive integer")
        edge_flows[edge] = gbps
        edge_conns[edge] = entry["conns"]

    predicted = doc["predicted"]
    if not isinstance(predicted, dict):
        raise PlanSchemaError("predicted must be an object")
    _require(predicted, _PREDICTED_FIELDS, "predicted")
    return TransferPlan(
        job,
        dict(sorted(vm_counts.items())),
        dict(sorted(edge_flows.items())),
        {e: edge_conns[e] for e in sorted(edge_conns)},
        _number(predicted["gbps"], "predicted.gbps"),
        _number(predicted["usd"], "predicted.usd"),
        _number(predicted["seconds"], "predicted.seconds"),
    )
