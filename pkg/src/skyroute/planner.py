"""Transfer planner: formulate the job as a MILP, solve it, emit plans.

Decision variables per job:

* ``F[u][v]`` -- continuous flow in Gbit/s on each usable ordered edge,
* ``N[r]``   -- integer VM count per region, bounded by the region's VM cap,
* ``M[u][v]`` -- integer TCP connection count per ordered edge.

The objective charges egress per unit of flow and VM rent per allocated VM
for a transfer time fixed to volume/goal, which keeps the program linear.
Edges into the source and out of the destination are dropped outright, so
no flow cycles through the endpoints.

``plan_min_cost`` first solves the continuous relaxation and repairs it by
flooring the integer variables and re-solving the flows; only when that is
infeasible or loses more than 1% against the relaxation bound does it fall
back to full branch and bound.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

from .errors import CeilingTooLowError, InfeasibleJobError, NodeBudgetExceededError, NoPathError
from .lp import LinearProgram, LpSolution, round_down, solve_lp, solve_milp
from .plan import GBIT_PER_GB, MONEY_TOL, TransferJob, TransferPlan, make_plan
from .regions import RegionGraph, RegionId

ROUNDING_GAP_LIMIT = 0.01   # fall back to branch & bound beyond this
FLOW_DUST = 1e-9            # flows below this are numerical noise
SWEEP_EPSILON_FRACTION = 1e-3
# per-sample branch-and-bound limits inside sweeps: fractional VM counts let
# the relaxation blend relay capacity, leaving an inherent integrality gap of
# a couple percent at mid-sweep goals, so proving exact optimality per sample
# costs orders of magnitude more than the frontier's resolution is worth.
# The 2% gap matches the order of the rounding scheme's own tolerance.
SWEEP_NODE_BUDGET = 150
SWEEP_REL_GAP = 0.02


def _effective_vm_cap(graph: RegionGraph, job: TransferJob, region: RegionId) -> int:
    cap = graph.vm_cap(region)
    if job.vm_cap_override is not None:
        cap = min(cap, job.vm_cap_override)
    return cap


def _usable_edges(graph: RegionGraph, job: TransferJob) -> list[tuple[RegionId, RegionId]]:
    # flow may not re-enter the source nor leave the destination
    return [(u, v) for (u, v) in graph.edges() if v != job.src and u != job.dst]


class _PlannerLp:
    """A planner LP plus the index maps needed to read its solution back."""

    def __init__(self, graph: RegionGraph, job: TransferJob, tput_goal_gbps: float | None,
                 maximize_flow: bool = False, fixed_vms: dict[RegionId, int] | None = None):
        self.graph = graph
        self.job = job
        self.edges = _usable_edges(graph, job)
        self.lp = LinearProgram()
        lp = self.lp

        self.f_idx: dict[tuple[RegionId, RegionId], int] = {}
        self.n_idx: dict[RegionId, int] = {}
        self.m_idx: dict[tuple[RegionId, RegionId], int] = {}
        for (u, v) in self.edges:
            self.f_idx[(u, v)] = lp.add_variable(f"F[{u}][{v}]")
        for r in graph.regions:
            cap = _effective_vm_cap(graph, job, r)
            if fixed_vms is not None and r in fixed_vms:
                pinned = fixed_vms[r]
                self.n_idx[r] = lp.add_variable(f"N[{r}]", lower=pinned, upper=pinned,
                                                integral=True)
            else:
                self.n_idx[r] = lp.add_variable(f"N[{r}]", upper=cap, integral=True)
        for (u, v) in self.edges:
            self.m_idx[(u, v)] = lp.add_variable(f"M[{u}][{v}]", integral=True)

        if maximize_flow:
            for (u, v) in self.edges:
                if u == job.src:
                    lp.set_objective_coeff(self.f_idx[(u, v)], -1.0)
        else:
            time_const = job.volume_gb * GBIT_PER_GB / tput_goal_gbps
            for (u, v) in self.edges:
                price = graph.price_usd_per_gb(u, v)
                lp.set_objective_coeff(self.f_idx[(u, v)], price / GBIT_PER_GB * time_const)
            for r in graph.regions:
                lp.set_objective_coeff(self.n_idx[r], graph.spec(r).cost_per_second * time_const)

        # flow capped by connection-scaled link capacity (source side's limit)
        for (u, v) in self.edges:
            rate = graph.throughput_gbps(u, v) / graph.spec(u).conn_limit
            lp.add_constraint({self.f_idx[(u, v)]: 1.0, self.m_idx[(u, v)]: -rate}, "<=", 0.0)

        if tput_goal_gbps is not None:
            out_src = {self.f_idx[(u, v)]: 1.0 for (u, v) in self.edges if u == job.src}
            into_dst = {self.f_idx[(u, v)]: 1.0 for (u, v) in self.edges if v == job.dst}
            # empty sums make the row plainly unsatisfiable, which the solver reports
            lp.add_constraint(out_src, ">=", tput_goal_gbps)
            lp.add_constraint(into_dst, ">=", tput_goal_gbps)

        for r in graph.regions:
            if r in (job.src, job.dst):
                continue
            balance: dict[int, float] = {}
            for (u, v) in self.edges:
                if v == r:
                    balance[self.f_idx[(u, v)]] = balance.get(self.f_idx[(u, v)], 0.0) + 1.0
                if u == r:
                    balance[self.f_idx[(u, v)]] = balance.get(self.f_idx[(u, v)], 0.0) - 1.0
            if balance:
                lp.add_constraint(balance, "=", 0.0)

        for r in graph.regions:
            spec = graph.spec(r)
            ingress = {self.f_idx[(u, v)]: 1.0 for (u, v) in self.edges if v == r}
            if ingress:
                ingress[self.n_idx[r]] = -spec.ingress_limit_gbps
                lp.add_constraint(ingress, "<=", 0.0)
            egress = {self.f_idx[(u, v)]: 1.0 for (u, v) in self.edges if u == r}
            if egress:
                egress[self.n_idx[r]] = -spec.egress_limit_gbps
                lp.add_constraint(egress, "<=", 0.0)
            conns_out = {self.m_idx[(u, v)]: 1.0 for (u, v) in self.edges if u == r}
            if conns_out:
                conns_out[self.n_idx[r]] = -float(spec.conn_limit)
                lp.add_constraint(conns_out, "<=", 0.0)
            conns_in = {self.m_idx[(u, v)]: 1.0 for (u, v) in self.edges if v == r}
            if conns_in:
                conns_in[self.n_idx[r]] = -float(spec.conn_limit)
                lp.add_constraint(conns_in, "<=", 0.0)

    def flows_of(self, sol: LpSolution) -> dict[tuple[RegionId, RegionId], float]:
        out = {}
        for edge, idx in self.f_idx.items():
            value = sol.values[self.lp.variables[idx].name]
            if value > FLOW_DUST:
                out[edge] = value
        return out

    def plan_of(self, sol: LpSolution) -> TransferPlan:
        flows = self.flows_of(sol)
        vm_counts = {}
        for r, idx in self.n_idx.items():
            count = int(round(sol.values[self.lp.variables[idx].name]))
            if count > 0:
                vm_counts[r] = count
        conns = {}
        for edge, flow in flows.items():
            u, _ = edge
            cl = self.graph.spec(u).conn_limit
            rate = self.graph.throughput_gbps(*edge)
            conns[edge] = max(1, math.ceil(flow * cl / rate - 1e-9))
        return make_plan(self.job, self.graph, vm_counts, flows, conns)


def build_milp(graph: RegionGraph, job: TransferJob, tput_goal_gbps: float) -> LinearProgram:
    """The cost-minimizing MILP for one throughput goal."""
    if not tput_goal_gbps > 0:
        raise ValueError("tput_goal_gbps must be > 0")
    return _PlannerLp(graph, job, tput_goal_gbps).lp


def max_flow_bound(graph: RegionGraph, job: TransferJob) -> float:
    """Upper bound on achievable throughput (continuous relaxation)."""
    model = _PlannerLp(graph, job, None, maximize_flow=True)
    sol = solve_lp(model.lp)
    if not sol.is_optimal:
        return 0.0
    return max(0.0, -sol.objective_value)


def _solve_goal_full(graph: RegionGraph, job: TransferJob, goal: float,
                     node_budget: int = 100_000, rel_gap: float = 0.0,
                     seed_values: dict[str, float] | None = None,
                     ) -> tuple[TransferPlan | None, dict[str, float] | None]:
    """Min-cost (plan, solution values) at one goal; (None, None) if infeasible.

    On node-budget exhaustion the best incumbent stands in for the exact
    optimum (feasible, certified by re-check, but possibly not minimal).
    """
    model = _PlannerLp(graph, job, goal)
    relaxed = solve_lp(model.lp)
    if not relaxed.is_optimal:
        return None, None
    rounded = round_down(relaxed, model.lp)
    gap_ok = (
        rounded.is_optimal
        and rounded.objective_value - relaxed.objective_value
        <= ROUNDING_GAP_LIMIT * max(abs(relaxed.objective_value), 1e-9))
    if gap_ok:
        sol = rounded
    else:
        try:
            sol = solve_milp(model.lp, node_budget=node_budget, rel_gap=rel_gap,
                             seed_values=seed_values)
        except NodeBudgetExceededError as err:
            sol = err.best
            if sol is None:
                return None, None
        if not sol.is_optimal:
            return None, None
    return model.plan_of(sol), sol.values


def _solve_goal(graph: RegionGraph, job: TransferJob, goal: float,
                node_budget: int = 100_000, rel_gap: float = 0.0) -> TransferPlan | None:
    return _solve_goal_full(graph, job, goal, node_budget, rel_gap)[0]


def plan_min_cost(graph: RegionGraph, job: TransferJob) -> TransferPlan:
    """Cheapest plan meeting the job's throughput floor."""
    if not job.has_floor:
        raise ValueError("plan_min_cost requires a throughput-floor job")
    plan = _solve_goal(graph, job, job.throughput_floor_gbps)
    if plan is None:
        raise InfeasibleJobError(
            f"throughput floor {job.throughput_floor_gbps} Gbit/s is not achievable")
    return plan


def pareto_sweep(graph: RegionGraph, job: TransferJob, samples: int,
                 max_workers: int | None = None) -> list[tuple[float, TransferPlan]]:
    """Min-cost plans at equally spaced goals, filtered to the Pareto frontier.

    Entries whose cost is matched or beaten by a higher-throughput entry are
    dropped, so the returned costs are strictly increasing with the goal.
    Individual solves are independent; ``max_workers`` > 1 runs them in a
    thread pool, merged back in goal order.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    bound = max_flow_bound(graph, job)
    if bound <= FLOW_DUST:
        return []
    eps = bound * SWEEP_EPSILON_FRACTION
    goals = [eps + i * (bound - eps) / (samples - 1) for i in range(samples)]
    if max_workers is None:
        max_workers = 1
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            plans = list(pool.map(
                lambda g: _solve_goal(graph, job, g, node_budget=SWEEP_NODE_BUDGET,
                                      rel_gap=SWEEP_REL_GAP), goals))
    else:
        # descend so each sample can seed branch and bound with the previous
        # (higher-goal) integer assignment, which stays feasible as the goal
        # shrinks and usually prunes the tree at the root
        plans = [None] * samples
        seed: dict[str, float] | None = None
        for i in range(samples - 1, -1, -1):
            plan, values = _solve_goal_full(
                graph, job, goals[i], node_budget=SWEEP_NODE_BUDGET,
                rel_gap=SWEEP_REL_GAP, seed_values=seed)
            plans[i] = plan
            if values is not None:
                seed = values

    entries = [(g, p) for g, p in zip(goals, plans) if p is not None]
    frontier: list[tuple[float, TransferPlan]] = []
    best_cost = math.inf
    for g, p in reversed(entries):
        if p.predicted_cost_usd < best_cost - 1e-12:
            frontier.append((g, p))
            best_cost = p.predicted_cost_usd
    frontier.reverse()
    return frontier


def sweep_workers_from_env() -> int:
    """Worker count for sweep parallelism, capped by SKYROUTE_THREADS."""
    limit = os.environ.get("SKYROUTE_THREADS")
    if limit is not None:
        try:
            return max(1, int(limit))
        except ValueError:
            return 1
    return max(1, os.cpu_count() or 1)


def plan_max_throughput(graph: RegionGraph, job: TransferJob,
                        samples: int = 100) -> TransferPlan:
    """Highest-throughput plan within the job's cost ceiling.

    Extracted from the Pareto frontier, then tightened by bisecting goals
    between the best affordable entry and the next one.
    """
    if job.has_floor:
        raise ValueError("plan_max_throughput requires a cost-ceiling job")
    ceiling = job.cost_ceiling_usd
    entries = pareto_sweep(graph, job, samples)
    if not entries:
        raise InfeasibleJobError("no feasible throughput goal at all")
    affordable = [(g, p) for g, p in entries if p.predicted_cost_usd <= ceiling + MONEY_TOL]
    if not affordable:
        raise CeilingTooLowError(
            f"cheapest feasible plan costs {entries[0][1].predicted_cost_usd:.6f} USD, "
            f"above the ceiling {ceiling}")
    best_goal, best_plan = affordable[-1]
    position = next(i for i, (g, _) in enumerate(entries) if g == best_goal)
    if position + 1 < len(entries):
        lo, hi = best_goal, entries[position + 1][0]
        for _ in range(10):
            mid = 0.5 * (lo + hi)
            candidate = _solve_goal(graph, job, mid)
            if candidate is not None and candidate.predicted_cost_usd <= ceiling + MONEY_TOL:
                if candidate.predicted_throughput_gbps >= best_plan.predicted_throughput_gbps:
                    best_plan = candidate
                lo = mid
            else:
                hi = mid
    return best_plan


def plan_direct(graph: RegionGraph, job: TransferJob) -> TransferPlan:
    """Planner restricted to the direct edge (the ablation baseline)."""
    if not graph.has_edge(job.src, job.dst):
        raise InfeasibleJobError(f"no direct edge {job.src} -> {job.dst}")
    direct = graph.restricted_to_edge(job.src, job.dst)
    if job.has_floor:
        return plan_min_cost(direct, job)
    return plan_max_throughput(direct, job, samples=50)


def plan_ron_heuristic(graph: RegionGraph, job: TransferJob) -> TransferPlan:
    """Bottleneck-bandwidth path choice, blind to price.

    Scores the direct path and every single-relay path by their per-VM-pair
    bottleneck throughput, picks the best (relay ties broken by id), then
    packs every region on the chosen path with the full VM cap.
    """
    src, dst = job.src, job.dst
    direct_score = graph.throughput_gbps(src, dst) if src != dst else 0.0
    best_relay: RegionId | None = None
    best_score = 0.0
    for relay in sorted(graph.regions):
        if relay in (src, dst):
            continue
        score = min(graph.throughput_gbps(src, relay), graph.throughput_gbps(relay, dst))
        if score > best_score:
            best_relay, best_score = relay, score
    if direct_score <= 0.0 and best_relay is None:
        raise NoPathError(f"no direct or single-relay path {src} -> {dst}")
    if best_score > direct_score:
        path = [src, best_relay, dst]
    else:
        path = [src, dst]

    restricted = graph.restricted_to_path(path)
    pinned = {r: _effective_vm_cap(graph, job, r) for r in path}
    model = _PlannerLp(restricted, job, None, maximize_flow=True, fixed_vms=pinned)
    sol = solve_milp(model.lp)
    if not sol.is_optimal or -sol.objective_value <= FLOW_DUST:
        raise NoPathError(f"chosen path {'>'.join(map(str, path))} carries no flow")
    return model.plan_of(sol)


def check_plan_constraints(plan: TransferPlan, graph: RegionGraph,
                           tput_goal: float | None = None, tol: float = 1e-6) -> list[str]:
    """Re-evaluate the planner constraints directly against the graph.

    Independent of the LP solver: plain arithmetic over the plan fields.
    """
    job = plan.job
    problems = []
    inflow: dict[RegionId, float] = {}
    outflow: dict[RegionId, float] = {}
    conns_out: dict[RegionId, float] = {}
    conns_in: dict[RegionId, float] = {}
    for (u, v), f in plan.edge_flows.items():
        if v == job.src or u == job.dst:
            problems.append(f"flow enters src or leaves dst on {u}>{v}")
        cap = graph.throughput_gbps(u, v)
        if cap <= 0:
            problems.append(f"flow on absent edge {u}>{v}")
            continue
        m = plan.edge_conns[(u, v)]
        if f > cap * m / graph.spec(u).conn_limit + tol:
            problems.append(f"link capacity violated on {u}>{v}")
        inflow[v] = inflow.get(v, 0.0) + f
        outflow[u] = outflow.get(u, 0.0) + f
        conns_out[u] = conns_out.get(u, 0.0) + m
        conns_in[v] = conns_in.get(v, 0.0) + m
    if tput_goal is not None:
        if outflow.get(job.src, 0.0) < tput_goal - tol:
            problems.append("source outflow below goal")
        if inflow.get(job.dst, 0.0) < tput_goal - tol:
            problems.append("destination inflow below goal")
    for r in graph.regions:
        if r in (job.src, job.dst):
            continue
        if abs(inflow.get(r, 0.0) - outflow.get(r, 0.0)) > tol:
            problems.append(f"flow conservation violated at {r}")
    for r in graph.regions:
        n = plan.vm_counts.get(r, 0)
        spec = graph.spec(r)
        if inflow.get(r, 0.0) > spec.ingress_limit_gbps * n + tol:
            problems.append(f"ingress limit violated at {r}")
        if outflow.get(r, 0.0) > spec.egress_limit_gbps * n + tol:
            problems.append(f"egress limit violated at {r}")
        if conns_out.get(r, 0.0) > spec.conn_limit * n + tol:
            problems.append(f"egress connection budget violated at {r}")
        if conns_in.get(r, 0.0) > spec.conn_limit * n + tol:
            problems.append(f"ingress connection budget violated at {r}")
        if n > _effective_vm_cap(graph, job, r):
            problems.append(f"VM cap violated at {r}")
    return problems
