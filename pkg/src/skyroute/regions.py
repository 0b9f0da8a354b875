"""Region model: throughput grid, price grid and per-provider service limits.

The three input files are line-oriented CSV:

* throughput grid: ``src,dst,gbps`` -- achievable goodput in Gbit/s between
  one VM pair at full connection parallelism,
* price grid: ``src,dst,usd_per_gb`` -- egress price for the ordered pair,
* VM specs: ``region,cost_per_hour,nic_gbps,egress_limit_gbps,
  ingress_limit_gbps,conn_limit,vm_cap``.

Region ids are ``provider:region`` everywhere.  Lines starting with ``#`` are
comments.  Ordered pairs absent from the throughput grid default to capacity
zero (the edge is unusable); a usable edge without a price is a load error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridParseError, UnknownPairError, UnknownRegionError


@dataclass(frozen=True, order=True)
class RegionId:
    """A cloud region, e.g. ``RegionId("azure", "westus2")``."""

    provider: str
    region: str

    @classmethod
    def parse(cls, text: str) -> "RegionId":
        provider, sep, region = text.strip().partition(":")
        if not sep or not provider or not region:
            raise ValueError(f"region id must look like 'provider:region', got {text!r}")
        return cls(provider, region)

    def canonical(self) -> str:
        return f"{self.provider}:{self.region}"

    def __str__(self) -> str:
        return self.canonical()


@dataclass(frozen=True)
class VmSpec:
    """Per-VM price and service limits for one region."""

    cost_per_hour: float
    nic_gbps: float
    egress_limit_gbps: float
    ingress_limit_gbps: float
    conn_limit: int

    def __post_init__(self):
        for name in ("cost_per_hour", "nic_gbps", "egress_limit_gbps", "ingress_limit_gbps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VmSpec.{name} must be strictly positive")
        if self.conn_limit < 1:
            raise ValueError("VmSpec.conn_limit must be >= 1")
        if self.egress_limit_gbps > self.nic_gbps or self.ingress_limit_gbps > self.nic_gbps:
            raise ValueError("per-direction limits cannot exceed NIC capacity")

    @property
    def cost_per_second(self) -> float:
        return self.cost_per_hour / 3600.0


class RegionGraph:
    """Immutable container for regions, capacities, prices and limits.

    ``throughput[i, j]`` is the per-VM-pair goodput of the ordered edge in
    Gbit/s (0 means the edge is unusable).  ``price[i, j]`` is USD/GB, NaN
    where no price is known.  Safe to share read-only between threads.
    """

    def __init__(
        self,
        regions: list[RegionId],
        specs: list[VmSpec],
        vm_caps: list[int],
        throughput: np.ndarray,
        price: np.ndarray,
    ):
        if len({r for r in regions}) != len(regions):
            raise ValueError("duplicate region in graph")
        if any(c < 1 for c in vm_caps):
            raise ValueError("vm_cap must be >= 1 for every region")
        n = len(regions)
        if throughput.shape != (n, n) or price.shape != (n, n):
            raise ValueError("matrix shape does not match region count")
        self.regions = list(regions)
        self.specs = list(specs)
        self.vm_caps = list(vm_caps)
        self.throughput = throughput
        self.price = price
        self._index = {r: i for i, r in enumerate(regions)}
        self.throughput.setflags(write=False)
        self.price.setflags(write=False)

    def __len__(self) -> int:
        return len(self.regions)

    def index(self, region: RegionId) -> int:
        try:
            return self._index[region]
        except KeyError:
            raise UnknownRegionError(f"unknown region {region}") from None

    def __contains__(self, region: RegionId) -> bool:
        return region in self._index

    def spec(self, region: RegionId) -> VmSpec:
        return self.specs[self.index(region)]

    def vm_cap(self, region: RegionId) -> int:
        return self.vm_caps[self.index(region)]

    def throughput_gbps(self, src: RegionId, dst: RegionId) -> float:
        return float(self.throughput[self.index(src), self.index(dst)])

    def has_edge(self, src: RegionId, dst: RegionId) -> bool:
        return src != dst and self.throughput_gbps(src, dst) > 0.0

    def price_usd_per_gb(self, src: RegionId, dst: RegionId) -> float:
        p = float(self.price[self.index(src), self.index(dst)])
        if math.isnan(p):
            raise UnknownPairError(f"no egress price for {src} -> {dst}")
        return p

    def edges(self) -> list[tuple[RegionId, RegionId]]:
        """Ordered pairs with positive capacity, in row-major region order."""
        out = []
        for i, u in enumerate(self.regions):
            for j, v in enumerate(self.regions):
                if i != j and self.throughput[i, j] > 0.0:
                    out.append((u, v))
        return out

    def restricted_to_edge(self, src: RegionId, dst: RegionId) -> "RegionGraph":
        """Copy of the graph where every edge except (src, dst) is removed."""
        i, j = self.index(src), self.index(dst)
        thr = np.zeros_like(self.throughput)
        thr[i, j] = self.throughput[i, j]
        return RegionGraph(self.regions, self.specs, self.vm_caps, thr, self.price.copy())

    def restricted_to_path(self, path: list[RegionId]) -> "RegionGraph":
        """Copy of the graph keeping only the consecutive edges of ``path``."""
        thr = np.zeros_like(self.throughput)
        for u, v in zip(path, path[1:]):
            i, j = self.index(u), self.index(v)
            thr[i, j] = self.throughput[i, j]
        return RegionGraph(self.regions, self.specs, self.vm_caps, thr, self.price.copy())


def egress_bill(graph: RegionGraph, src: RegionId, dst: RegionId, volume_gb: float) -> float:
    """Egress charge in USD for moving ``volume_gb`` over one edge.

    Billing is by volume only; the transfer rate never appears.
    """
    if volume_gb < 0:
        raise ValueError("volume_gb must be >= 0")
    return volume_gb * graph.price_usd_per_gb(src, dst)


def vm_bill(graph: RegionGraph, region: RegionId, vm_count: int, duration_s: float) -> float:
    """VM rental charge in USD for ``vm_count`` VMs running ``duration_s`` seconds."""
    if vm_count < 0 or duration_s < 0:
        raise ValueError("vm_count and duration_s must be >= 0")
    return vm_count * graph.spec(region).cost_per_second * duration_s


def _data_lines(path: str) -> list[tuple[int, list[str]]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            out.append((lineno, [f.strip() for f in line.split(",")]))
    return out


def _parse_nonneg(path: str, lineno: int, field: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise GridParseError(path, lineno, f"bad number for {field}: {text!r}") from None
    if math.isnan(value) or math.isinf(value) or value < 0:
        raise GridParseError(path, lineno, f"{field} must be a finite non-negative number, got {text}")
    return value


def _parse_region(path: str, lineno: int, text: str) -> RegionId:
    try:
        return RegionId.parse(text)
    except ValueError as exc:
        raise GridParseError(path, lineno, str(exc)) from None


def load_region_graph(grid_path: str, price_path: str, vmspec_path: str) -> RegionGraph:
    """Load and cross-validate the three grid files into a RegionGraph."""
    regions: list[RegionId] = []
    specs: list[VmSpec] = []
    caps: list[int] = []
    for lineno, fields in _data_lines(vmspec_path):
        if len(fields) != 7:
            raise GridParseError(vmspec_path, lineno, f"expected 7 fields, got {len(fields)}")
        rid = _parse_region(vmspec_path, lineno, fields[0])
        if rid in regions:
            raise GridParseError(vmspec_path, lineno, f"duplicate region {rid}")
        nums = [_parse_nonneg(vmspec_path, lineno, name, text) for name, text in
                zip(("cost_per_hour", "nic_gbps", "egress_limit_gbps", "ingress_limit_gbps"), fields[1:5])]
        conn_limit = _parse_nonneg(vmspec_path, lineno, "conn_limit", fields[5])
        vm_cap = _parse_nonneg(vmspec_path, lineno, "vm_cap", fields[6])
        if conn_limit != int(conn_limit) or vm_cap != int(vm_cap):
            raise GridParseError(vmspec_path, lineno, "conn_limit and vm_cap must be integers")
        try:
            specs.append(VmSpec(nums[0], nums[1], nums[2], nums[3], int(conn_limit)))
        except ValueError as exc:
            raise GridParseError(vmspec_path, lineno, str(exc)) from None
        if vm_cap < 1:
            raise GridParseError(vmspec_path, lineno, "vm_cap must be >= 1")
        regions.append(rid)
        caps.append(int(vm_cap))

    index = {r: i for i, r in enumerate(regions)}
    n = len(regions)
    throughput = np.zeros((n, n))
    price = np.full((n, n), math.nan)

    def pair(path: str, lineno: int, fields: list[str]) -> tuple[int, int]:
        src = _parse_region(path, lineno, fields[0])
        dst = _parse_region(path, lineno, fields[1])
        for r in (src, dst):
            if r not in index:
                raise GridParseError(path, lineno, f"pair references unknown region {r}")
        if src == dst:
            raise GridParseError(path, lineno, f"self-loop {src} -> {dst} is not allowed")
        return index[src], index[dst]

    seen: set[tuple[int, int]] = set()
    for lineno, fields in _data_lines(grid_path):
        if len(fields) != 3:
            raise GridParseError(grid_path, lineno, f"expected 3 fields, got {len(fields)}")
        i, j = pair(grid_path, lineno, fields)
        if (i, j) in seen:
            raise GridParseError(grid_path, lineno, f"duplicate pair {fields[0]} -> {fields[1]}")
        seen.add((i, j))
        throughput[i, j] = _parse_nonneg(grid_path, lineno, "gbps", fields[2])

    seen.clear()
    for lineno, fields in _data_lines(price_path):
        if len(fields) != 3:
            raise GridParseError(price_path, lineno, f"expected 3 fields, got {len(fields)}")
        i, j = pair(price_path, lineno, fields)
        if (i, j) in seen:
            raise GridParseError(price_path, lineno, f"duplicate pair {fields[0]} -> {fields[1]}")
        seen.add((i, j))
        price[i, j] = _parse_nonneg(price_path, lineno, "usd_per_gb", fields[2])

    for i in range(n):
        for j in range(n):
            if i != j and throughput[i, j] > 0 and math.isnan(price[i, j]):
                raise GridParseError(
                    price_path, 0,
                    f"missing price for usable edge {regions[i]} -> {regions[j]}")

    return RegionGraph(regions, specs, caps, throughput, price)


def dump_grid(graph: RegionGraph) -> str:
    lines = ["# src,dst,gbps"]
    for u, v in graph.edges():
        lines.append(f"{u},{v},{graph.throughput_gbps(u, v)!r}")
    return "\n".join(lines) + "\n"


def dump_prices(graph: RegionGraph) -> str:
    lines = ["# src,dst,usd_per_gb"]
    n = len(graph)
    for i in range(n):
        for j in range(n):
            if i != j and not math.isnan(graph.price[i, j]):
                lines.append(f"{graph.regions[i]},{graph.regions[j]},{float(graph.price[i, j])!r}")
    return "\n".join(lines) + "\n"


def dump_vmspecs(graph: RegionGraph) -> str:
    lines = ["# region,cost_per_hour,nic_gbps,egress_limit_gbps,ingress_limit_gbps,conn_limit,vm_cap"]
    for r, s, cap in zip(graph.regions, graph.specs, graph.vm_caps):
        lines.append(f"{r},{s.cost_per_hour!r},{s.nic_gbps!r},{s.egress_limit_gbps!r},"
                     f"{s.ingress_limit_gbps!r},{s.conn_limit},{cap}")
    return "\n".join(lines) + "\n"
