"""Self-contained exact LP/MILP engine.

Model: minimize ``c.x`` subject to sparse rows ``a.x {<=,=,>=} b`` and box
bounds ``lower <= x <= upper`` (upper may be +inf, lower must be finite).
Variables may be flagged integral; :func:`solve_lp` ignores the flags
(continuous relaxation), :func:`solve_milp` enforces them by depth-first
branch and bound on the relaxation, and :func:`round_down` floors them and
re-solves the continuous rest.

The solver is a two-phase revised simplex over the standard form obtained by
shifting each variable by its lower bound, adding one row per finite upper
bound, and one slack/surplus column per row.  Entering column: most negative
reduced cost, ties broken by lowest column index; after a run of degenerate
pivots the rule switches to Bland's (lowest eligible index) which guarantees
termination.  All tie-breaking is index-based, so identical inputs produce
bit-identical solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LpNumericError, NodeBudgetExceededError

FEAS_TOL = 1e-7   # absolute feasibility tolerance on normalized rows
OPT_TOL = 1e-6    # optimality / duality-gap tolerance
INT_TOL = 1e-7    # integrality tolerance

_PIVOT_TOL = 1e-7
_REFACTOR_EVERY = 50
_DEGENERATE_RUN = 60


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float = 0.0
    upper: float = math.inf
    integral: bool = False


@dataclass(frozen=True)
class Constraint:
    coeffs: tuple[tuple[int, float], ...]
    relation: str            # one of "<=", "=", ">="
    rhs: float


class LinearProgram:
    """Standard-form LP/MILP with named variables; sense is always minimize."""

    def __init__(self):
        self.variables: list[Variable] = []
        self.objective: dict[int, float] = {}
        self.constraints: list[Constraint] = []
        self._names: set[str] = set()

    def add_variable(self, name: str, lower: float = 0.0, upper: float = math.inf,
                     integral: bool = False) -> int:
        if name in self._names:
            raise ValueError(f"duplicate variable name {name!r}")
        if not math.isfinite(lower):
            raise ValueError(f"{name}: lower bound must be finite")
        if upper < lower:
            raise ValueError(f"{name}: upper bound below lower bound")
        self._names.add(name)
        self.variables.append(Variable(name, float(lower), float(upper), integral))
        return len(self.variables) - 1

    def set_objective_coeff(self, index: int, coeff: float):
        self._check_index(index)
        if coeff != 0.0:
            self.objective[index] = self.objective.get(index, 0.0) + coeff
        return self

    def add_constraint(self, coeffs: dict[int, float], relation: str, rhs: float):
        if relation not in ("<=", "=", ">="):
            raise ValueError(f"bad relation {relation!r}")
        if not math.isfinite(rhs):
            raise ValueError("constraint rhs must be finite")
        items = []
        for index, coeff in coeffs.items():
            self._check_index(index)
            if not math.isfinite(coeff):
                raise ValueError("constraint coefficient must be finite")
            if coeff != 0.0:
                items.append((index, float(coeff)))
        items.sort()
        self.constraints.append(Constraint(tuple(items), relation, float(rhs)))
        return self

    def _check_index(self, index: int):
        if not 0 <= index < len(self.variables):
            raise ValueError(f"variable index {index} out of range")

    @property
    def integer_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.integral]


@dataclass
class LpSolution:
    status: str                       # "optimal" | "infeasible" | "unbounded"
    values: dict[str, float] = field(default_factory=dict)
    objective_value: float = math.nan
    dual_objective: float = math.nan  # certified dual bound (optimal only)

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


def check_solution(lp: LinearProgram, values: dict[str, float],
                   tol: float = FEAS_TOL, int_tol: float = INT_TOL,
                   enforce_integrality: bool = False) -> list[str]:
    """Return human-readable descriptions of every violated constraint/bound.

    Rows are normalized by max(1, max |coeff|) before comparing to ``tol``.
    """
    violations = []
    x = np.array([values[v.name] for v in lp.variables])
    for i, var in enumerate(lp.variables):
        if x[i] < var.lower - tol or x[i] > var.upper + tol:
            violations.append(f"{var.name}={x[i]!r} outside [{var.lower}, {var.upper}]")
        if enforce_integrality and var.integral and abs(x[i] - round(x[i])) > int_tol:
            violations.append(f"{var.name}={x[i]!r} not integral")
    for k, con in enumerate(lp.constraints):
        lhs = sum(c * x[j] for j, c in con.coeffs)
        scale = max(1.0, max((abs(c) for _, c in con.coeffs), default=1.0))
        slack = (lhs - con.rhs) / scale
        if con.relation == "<=" and slack > tol:
            violations.append(f"row {k}: {lhs} <= {con.rhs} violated")
        elif con.relation == ">=" and slack < -tol:
            violations.append(f"row {k}: {lhs} >= {con.rhs} violated")
        elif con.relation == "=" and abs(slack) > tol:
            violations.append(f"row {k}: {lhs} = {con.rhs} violated")
    return violations


class _Simplex:
    """Revised simplex on ``min c.y  s.t.  A y = b, y >= 0`` (b >= 0)."""

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: list[int], careful: bool = False):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.basis = list(basis)
        self.B_inv = np.eye(self.m)
        self.xB = b.copy()
        self.careful = careful  # safe mode: Bland from the start, frequent refactor
        self._refactor()

    def _refactor(self):
        if self.m == 0:
            return
        B = self.A[:, self.basis]
        try:
            self.B_inv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise LpNumericError("singular basis during refactorization") from None
        self.xB = self.B_inv @ self.b

    def minimize(self, c: np.ndarray, barred: np.ndarray) -> str:
        """Run pivots until optimal ("optimal") or unbounded ("unbounded").

        ``barred`` marks columns that may never enter the basis (used to keep
        phase-1 artificials out during phase 2).
        """
        bland = self.careful
        degenerate_run = 0
        max_iter = 2000 + 200 * (self.m + self.n)
        refactor_every = 20 if self.careful else _REFACTOR_EVERY
        in_basis = np.zeros(self.n, dtype=bool)
        in_basis[self.basis] = True
        for it in range(max_iter):
            if it and it % refactor_every == 0:
                self._refactor()
            y = c[self.basis] @ self.B_inv if self.m else np.zeros(0)
            reduced = c - y @ self.A
            reduced[in_basis] = 0.0
            reduced[barred] = 0.0
            if bland:
                eligible = np.flatnonzero(reduced < -OPT_TOL)
                if eligible.size == 0:
                    return "optimal"
                enter = int(eligible[0])
            else:
                enter = int(np.argmin(reduced))
                if reduced[enter] >= -OPT_TOL:
                    return "optimal"
            d = self.B_inv @ self.A[:, enter] if self.m else np.zeros(0)
            pos = d > _PIVOT_TOL
            if not pos.any():
                return "unbounded"
            ratios = np.where(pos, np.maximum(self.xB, 0.0) / np.where(pos, d, 1.0), math.inf)
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-9 * (1.0 + theta))
            # stability filter: among tied rows keep healthy pivot magnitudes,
            # then break the remaining tie by lowest basis variable index
            strongest = float(d[ties].max())
            safe = [int(r) for r in ties if d[r] >= 0.05 * strongest]
            leave_row = min(safe, key=lambda r: self.basis[r])
            if theta <= 1e-10:
                degenerate_run += 1
                if degenerate_run >= _DEGENERATE_RUN:
                    bland = True
            else:
                degenerate_run = 0
            left = self._pivot(enter, leave_row, d)
            in_basis[left] = False
            in_basis[enter] = True
        raise LpNumericError("simplex pivoting stalled (iteration budget exhausted)")

    def _pivot(self, enter: int, leave_row: int, d: np.ndarray):
        pivot = d[leave_row]
        row = self.B_inv[leave_row] / pivot
        self.B_inv -= np.outer(d, row)
        self.B_inv[leave_row] = row
        theta = self.xB[leave_row] / pivot
        self.xB -= d * theta
        self.xB[leave_row] = theta
        old = self.basis[leave_row]
        self.basis[leave_row] = enter
        return old


def _standard_form(lp: LinearProgram, bounds: dict[int, tuple[float, float]]):
    """Build standard-form arrays.

    Returns (free_idx, lower, fixed_mask, fixed_val, A, b, nstruct, row_kind)
    where columns of A are the shifted free variables followed by one
    slack/surplus column per row (sign-normalized so b >= 0), or None when a
    variable's effective box is empty (infeasible).
    """
    nvars = len(lp.variables)
    lower = np.empty(nvars)
    upper = np.empty(nvars)
    for i, var in enumerate(lp.variables):
        lo, hi = bounds.get(i, (var.lower, var.upper))
        lower[i], upper[i] = lo, hi
        if hi < lo - 1e-12:
            return None
    fixed = (upper - lower) <= 1e-12
    free_idx = np.flatnonzero(~fixed)
    col_of = {int(j): k for k, j in enumerate(free_idx)}
    nstruct = len(free_idx)

    rows = []
    for con in lp.constraints:
        dense = np.zeros(nstruct)
        rhs = con.rhs
        for j, coeff in con.coeffs:
            rhs -= coeff * lower[j]  # shift by lower bound (fixed vars fully)
            if not fixed[j]:
                dense[col_of[j]] += coeff
        if con.relation == "=":
            # split into a slack-feasible pair; only the side whose rhs ends
            # up positive after sign normalization needs an artificial, which
            # keeps phase 1 small and skips the degenerate zero-rhs walking
            rows.append((dense, "<=", rhs))
            rows.append((-dense, "<=", -rhs))
        else:
            rows.append((dense, con.relation, rhs))
    for k, j in enumerate(free_idx):
        if math.isfinite(upper[j]):
            dense = np.zeros(nstruct)
            dense[k] = 1.0
            rows.append((dense, "<=", upper[j] - lower[j]))

    m = len(rows)
    A = np.zeros((m, nstruct + m))
    b = np.empty(m)
    row_kind = []  # "slack" rows start feasible; others need an artificial
    for r, (dense, rel, rhs) in enumerate(rows):
        sign = 1.0
        if rhs < 0:
            sign, rhs = -1.0, -rhs
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        A[r, :nstruct] = sign * dense
        b[r] = rhs
        A[r, nstruct + r] = 1.0 if rel == "<=" else -1.0 if rel == ">=" else 0.0
        row_kind.append("slack" if rel == "<=" else "artificial")
    return free_idx, col_of, lower, fixed, A, b, nstruct, row_kind


def _solve_relax(lp: LinearProgram, bounds: dict[int, tuple[float, float]]) -> LpSolution:
    try:
        return _solve_relax_mode(lp, bounds, careful=False)
    except LpNumericError:
        # deterministic second attempt: Bland's rule throughout plus frequent
        # refactorization trades speed for stability
        return _solve_relax_mode(lp, bounds, careful=True)


def _solve_relax_mode(lp: LinearProgram, bounds: dict[int, tuple[float, float]],
                      careful: bool) -> LpSolution:
    built = _standard_form(lp, bounds)
    if built is None:
        return LpSolution("infeasible")
    free_idx, col_of, lower, fixed, A, b, nstruct, row_kind = built
    m, ncols = A.shape

    art_rows = [r for r, kind in enumerate(row_kind) if kind == "artificial"]
    nart = len(art_rows)
    if nart:
        A = np.hstack([A, np.zeros((m, nart))])
        for k, r in enumerate(art_rows):
            A[r, ncols + k] = 1.0
    total = A.shape[1]

    art_pos = {r: ncols + k for k, r in enumerate(art_rows)}
    basis = [nstruct + r if kind == "slack" else art_pos[r]
             for r, kind in enumerate(row_kind)]

    simplex = _Simplex(A, b, basis, careful=careful)
    barred = np.zeros(total, dtype=bool)

    if nart:
        c1 = np.zeros(total)
        c1[ncols:] = 1.0
        status = simplex.minimize(c1, barred)
        if status != "optimal":
            raise LpNumericError("phase 1 terminated unbounded")  # cannot happen: objective >= 0
        phase1 = float(c1[simplex.basis] @ simplex.xB)
        if phase1 > FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpSolution("infeasible")
        _drive_out_artificials(simplex, ncols)
        barred[ncols:] = True

    c = np.zeros(total)
    for j, coeff in lp.objective.items():
        if not fixed[j]:
            c[col_of[j]] += coeff
    status = simplex.minimize(c, barred)
    if status == "unbounded":
        return LpSolution("unbounded")

    simplex._refactor()
    x_std = np.zeros(total)
    x_std[simplex.basis] = simplex.xB
    if simplex.xB.size and float(simplex.xB.min(initial=0.0)) < -1e-6:
        raise LpNumericError("basic solution lost feasibility")

    values = {var.name: float(lower[i]) for i, var in enumerate(lp.variables)}
    for k, j in enumerate(free_idx):
        values[lp.variables[j].name] = float(lower[j] + x_std[k])
    objective = sum(coeff * values[lp.variables[j].name] for j, coeff in lp.objective.items())

    # duality certificate: y = c_B B^-1, gap |c.x - y.b| within OPT_TOL
    shift_const = sum(coeff * lower[j] for j, coeff in lp.objective.items())
    y = c[simplex.basis] @ simplex.B_inv if m else np.zeros(0)
    dual = float(y @ b) + shift_const if m else shift_const
    scale = max(1.0, abs(objective))
    if abs(objective - dual) > OPT_TOL * scale:
        raise LpNumericError(
            f"duality gap {objective - dual!r} exceeds tolerance; solution not certified")
    return LpSolution("optimal", values, float(objective), float(dual))


def _drive_out_artificials(simplex: _Simplex, ncols: int):
    """Pivot basic artificials out on any nonzero non-artificial entry.

    Rows where no such entry exists are redundant; their artificial stays
    basic at zero and can never change value.
    """
    for row in range(simplex.m):
        if simplex.basis[row] < ncols:
            continue
        tab_row = simplex.B_inv[row] @ simplex.A[:, :ncols]
        candidates = np.flatnonzero(np.abs(tab_row) > 1e-9)
        candidates = [int(j) for j in candidates if j not in simplex.basis]
        if not candidates:
            continue
        enter = candidates[0]
        d = simplex.B_inv @ simplex.A[:, enter]
        simplex._pivot(enter, row, d)


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve the continuous relaxation (integrality flags ignored)."""
    return _solve_relax(lp, {})


def round_down(relaxed: LpSolution, lp: LinearProgram) -> LpSolution:
    """Floor every integral variable, fix it, and re-solve the rest.

    The flow re-solve keeps all original rows, so the result is feasible for
    the full program or the status is "infeasible" (callers then fall back to
    :func:`solve_milp`).
    """
    if not relaxed.is_optimal:
        raise ValueError("round_down requires an optimal relaxation")
    bounds: dict[int, tuple[float, float]] = {}
    for i in lp.integer_indices:
        var = lp.variables[i]
        floored = math.floor(relaxed.values[var.name] + INT_TOL)
        floored = max(floored, math.ceil(var.lower - INT_TOL))
        if floored > var.upper + INT_TOL:
            return LpSolution("infeasible")
        bounds[i] = (float(floored), float(floored))
    return _solve_relax(lp, bounds)


def _round_up_seed(relaxed: LpSolution, lp: LinearProgram) -> LpSolution:
    """Ceil every integral variable (clamped to its box) and re-solve.

    In capacity-style programs the relaxation sits just below the integer
    resource levels, so ceiling usually lands feasible and gives branch and
    bound a strong starting incumbent.
    """
    bounds: dict[int, tuple[float, float]] = {}
    for i in lp.integer_indices:
        var = lp.variables[i]
        ceiled = math.ceil(relaxed.values[var.name] - INT_TOL)
        if math.isfinite(var.upper):
            ceiled = min(ceiled, math.floor(var.upper + INT_TOL))
        if ceiled < var.lower - INT_TOL:
            return LpSolution("infeasible")
        bounds[i] = (float(ceiled), float(ceiled))
    return _solve_relax(lp, bounds)


_PRUNE_TOL = 1e-7  # relative; must sit above LP noise or tied subtrees never prune


def _most_fractional(lp: LinearProgram, sol: LpSolution) -> int | None:
    branch = None
    worst = INT_TOL
    for i in lp.integer_indices:
        v = sol.values[lp.variables[i].name]
        dist = abs(v - round(v))
        if dist > worst:
            worst, branch = dist, i
    return branch


def solve_milp(lp: LinearProgram, node_budget: int = 100_000,
               rel_gap: float = 0.0,
               seed_values: dict[str, float] | None = None) -> LpSolution:
    """Depth-first branch and bound on the simplex relaxation.

    Branches on the most fractional integer variable (ties: lowest index),
    explores the ceil side first, and prunes nodes whose relaxation bound
    cannot improve on the incumbent.  When the node budget runs out the
    raised :class:`NodeBudgetExceededError` carries the best incumbent found
    so far in its ``best`` attribute (or None).

    ``rel_gap`` > 0 accepts any incumbent within that relative gap of the
    optimum by widening the pruning margin (the default keeps the search
    exact up to solver tolerances).  ``seed_values`` optionally maps integer
    variable names to a candidate assignment tried as an extra starting
    incumbent.
    """
    int_idx = lp.integer_indices
    root = _solve_relax(lp, {})
    if not root.is_optimal or not int_idx:
        return root

    seeds = [round_down(root, lp), _round_up_seed(root, lp)]
    if seed_values is not None:
        seed_bounds: dict[int, tuple[float, float]] = {}
        for i in int_idx:
            var = lp.variables[i]
            v = seed_values.get(var.name)
            if v is None:
                break
            v = float(round(v))
            if v < var.lower - INT_TOL or v > var.upper + INT_TOL:
                break
            seed_bounds[i] = (v, v)
        else:
            seeds.append(_solve_relax(lp, seed_bounds))

    incumbent: LpSolution | None = None
    for seeded in seeds:
        if seeded.is_optimal and _integral(seeded, lp):
            if incumbent is None or seeded.objective_value < incumbent.objective_value:
                incumbent = seeded

    def bound_of(node: dict[int, tuple[float, float]], i: int) -> tuple[float, float]:
        if i in node:
            return node[i]
        var = lp.variables[i]
        return (var.lower, var.upper)

    stack: list[dict[int, tuple[float, float]]] = [{}]
    nodes = 0
    while stack:
        nodes += 1
        if nodes > node_budget:
            err = NodeBudgetExceededError(f"branch-and-bound exceeded {node_budget} nodes")
            err.best = incumbent
            raise err
        node = stack.pop()
        sol = _solve_relax(lp, node)
        if not sol.is_optimal:
            continue
        if incumbent is not None:
            margin = max(_PRUNE_TOL, rel_gap) * max(1.0, abs(incumbent.objective_value))
            if sol.objective_value >= incumbent.objective_value - margin:
                continue
        branch = _most_fractional(lp, sol)
        if branch is None:
            fixed = dict(node)
            for i in int_idx:
                v = float(round(sol.values[lp.variables[i].name]))
                fixed[i] = (v, v)
            clean = _solve_relax(lp, fixed)
            cand = clean if clean.is_optimal else sol
            if incumbent is None or cand.objective_value < incumbent.objective_value:
                incumbent = cand
            continue
        v = sol.values[lp.variables[branch].name]
        lo, hi = bound_of(node, branch)
        up = dict(node)
        up[branch] = (float(math.ceil(v)), hi)
        down = dict(node)
        down[branch] = (lo, float(math.floor(v)))
        stack.append(down)
        stack.append(up)  # popped first: ceil side explored first

    if incumbent is None:
        return LpSolution("infeasible")
    return incumbent


def _integral(sol: LpSolution, lp: LinearProgram) -> bool:
    return all(abs(sol.values[lp.variables[i].name] - round(sol.values[lp.variables[i].name]))
               <= INT_TOL for i in lp.integer_indices)


def format_lp(lp: LinearProgram) -> str:
    """Render the program in LP text format for eyeballing or external solvers."""

    def term(coeff: float, name: str, first: bool) -> str:
        sign = "-" if coeff < 0 else ("" if first else "+")
        mag = abs(coeff)
        return f"{sign} {mag!r} {name}".strip() if not first else f"{sign}{mag!r} {name}"

    def expr(coeffs) -> str:
        parts = []
        for k, (j, c) in enumerate(coeffs):
            parts.append(term(c, lp.variables[j].name, k == 0))
        return " ".join(parts) if parts else "0"

    lines = ["minimize", f" obj: {expr(sorted(lp.objective.items()))}", "subject to"]
    for k, con in enumerate(lp.constraints):
        lines.append(f" c{k}: {expr(con.coeffs)} {con.relation} {con.rhs!r}")
    lines.append("bounds")
    for var in lp.variables:
        hi = "+inf" if math.isinf(var.upper) else repr(var.upper)
        lines.append(f" {var.lower!r} <= {var.name} <= {hi}")
    integers = [v.name for v in lp.variables if v.integral]
    if integers:
        lines.append("general")
        lines.extend(f" {name}" for name in integers)
    lines.append("end")
    return "\n".join(lines) + "\n"
