"""Worst-case expected second-stage problems, solved exactly by column generation.

For a fixed first-stage plan and one climate cluster, the adversary picks a
demand distribution over the cluster's support box, subject to first-moment
bounds, maximizing expected recourse cost (optimality mode) or expected
constraint violation (feasibility mode).  The master LP optimizes over a finite
scenario set; the pricing MILP searches the whole box for the scenario of
maximum reduced cost.  Pricing optima always sit at box corners, which is what
makes the binary-image codec downstream possible.

Pricing formulations: feasibility mode linearizes the bilinear scenario-dual
products exactly (the feasibility duals live in [0, 1]); optimality mode uses a
big-M linearization of the recourse KKT system, with slack bounds computed by
interval arithmetic over the box and documented caps on the dual multipliers.
Both are cross-validated against corner enumeration in the test suite, and the
returned reduced cost is always re-evaluated exactly with an LP solve at the
returned corner.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import solver
from .climate import ClusterSpec
from .instance import FirstStageDecision, Instance
from .recourse import RecourseModel

log = logging.getLogger("greencap.wesp")

OPTIMALITY = "optimality"
FEASIBILITY = "feasibility"

PROB_TOL = 1e-9          # probabilities below this are treated as zero
DEFAULT_CG_EPS = 1e-6    # relative reduced-cost tolerance
ENUM_GUARD = 20          # oracle refuses boxes with more than 2^20 corners


class MasterInfeasibleError(Exception):
    """No distribution over the given columns satisfies the moment window."""


class CgIterationLimitError(Exception):
    pass


class TooLargeError(ValueError):
    pass


class PricingUnboundedError(Exception):
    """Backend reported an unbounded pricing problem; formulation bug."""


def scenario_key(xi: np.ndarray) -> bytes:
    return np.ascontiguousarray(xi, dtype=float).tobytes()


@dataclass
class DiscreteDistribution:
    """Finite scenario set with probabilities (and, when known, recourse values)."""

    scenarios: list[np.ndarray]
    probs: np.ndarray
    values: np.ndarray | None = None

    def validate(self, cluster: ClusterSpec) -> list[str]:
        out = []
        if abs(self.probs.sum() - 1.0) > 1e-9:
            out.append(f"probabilities sum to {self.probs.sum()!r}")
        if (self.probs < -PROB_TOL).any():
            out.append("negative probability")
        if self.scenarios:
            mean = sum(p * xi for p, xi in zip(self.probs, self.scenarios))
            if (mean < cluster.gamma_lo - 1e-6).any() or (mean > cluster.gamma_hi + 1e-6).any():
                out.append("mean outside the moment window")
        return out

    def mean(self) -> np.ndarray:
        return sum(p * xi for p, xi in zip(self.probs, self.scenarios))


@dataclass
class CgReport:
    mode: str
    value: float
    distribution: DiscreteDistribution
    shadow_prices: tuple  # (alpha, beta_up, beta_lo)
    iterations: int
    reduced_costs: list[float]
    master_seconds: float
    pricing_seconds: float
    columns: list[np.ndarray] = field(default_factory=list)
    column_values: np.ndarray | None = None
    seed_count: int = 0  # leading entries of ``columns`` that were initial


def staircase_corners(point: np.ndarray, cluster: ClusterSpec) -> list[np.ndarray]:
    """Corners of an exact convex decomposition of a box point.

    Sorting the per-cell fractions descending yields the classic staircase:
    corner k puts the k largest-fraction cells at their upper bounds, and the
    weights (1 - f(1), f(1) - f(2), ..., f(n)) reproduce ``point`` as the mean.
    At most n + 1 corners, so seeding with them keeps the master feasible
    while every column stays a box corner (which the image codec requires).
    """
    lo = cluster.xi_lo.ravel()
    hi = cluster.xi_hi.ravel()
    span = hi - lo
    frac = np.zeros_like(span)
    nz = span > 0
    p = np.clip(np.asarray(point, dtype=float).ravel(), lo, hi)
    frac[nz] = (p[nz] - lo[nz]) / span[nz]
    order = np.argsort(-frac, kind="stable")
    corners = [cluster.xi_lo.copy()]
    bits = np.zeros(lo.size, dtype=bool)
    for idx in order:
        if frac[idx] <= 0.0:
            break
        bits[idx] = True
        corners.append(np.where(bits, hi, lo).reshape(cluster.xi_lo.shape))
    return corners


def default_seed_columns(cluster: ClusterSpec) -> list[np.ndarray]:
    """All-lower and all-upper corners plus the staircase decomposition of the
    moment-window midpoint; a distribution over these hits the window exactly,
    so the master is always feasible, and every seed is a corner."""
    mid = 0.5 * (cluster.gamma_lo + cluster.gamma_hi)
    mid = np.clip(mid, cluster.xi_lo, cluster.xi_hi)
    seeds = [cluster.xi_lo.copy(), cluster.xi_hi.copy()]
    seen = {scenario_key(s) for s in seeds}
    for corner in staircase_corners(mid, cluster):
        key = scenario_key(corner)
        if key not in seen:
            seen.add(key)
            seeds.append(corner)
    return seeds


class WespSolver:
    """CG engine for one (instance, cluster) pair; reuses recourse matrices."""

    def __init__(self, inst: Instance, cluster: ClusterSpec,
                 recourse_model: RecourseModel | None = None,
                 eps: float = DEFAULT_CG_EPS,
                 mip_gap: float = solver.PRICING_MIP_GAP,
                 pi_cap: float | None = None,
                 lex_tiebreak: bool = True):
        self.instance = inst
        self.cluster = cluster
        self.model = recourse_model or RecourseModel(inst, cluster)
        self.eps = eps
        self.mip_gap = mip_gap
        self.lex_tiebreak = lex_tiebreak
        # Cap on recourse dual multipliers in the pricing linearization: far
        # above observed shadow prices (cost-scale magnitudes) while keeping
        # the big-M coefficient range tractable.  Validated against corner
        # enumeration in the test suite.
        cmax = float(np.max(self.model.c)) if self.model.c.size else 1.0
        self.pi_cap = pi_cap if pi_cap is not None else 1e4 * max(1.0, cmax)

    # -- column evaluation ---------------------------------------------------

    def column_value(self, x: FirstStageDecision, xi: np.ndarray, mode: str) -> float:
        if mode == OPTIMALITY:
            return self.model.solve(x, xi).objective
        return self.model.solve_feasibility(x, xi).violation

    # -- master --------------------------------------------------------------

    def solve_master(self, columns: list[np.ndarray], values: np.ndarray, mode: str):
        """Maximize expected value over the probability simplex within the
        moment window.  Returns (eta, DiscreteDistribution, (alpha, bU, bL))."""
        cl = self.cluster
        n = len(columns)
        if n == 0:
            raise ValueError("master needs at least one column")
        m = solver.ModelHandle(name="cg-master", sense="max")
        p = m.add_vars("P", n, lb=0.0)
        m.set_objective({p[c]: float(values[c]) for c in range(n)})
        m.add_constr("prob", {p[c]: 1.0 for c in range(n)}, "==", 1.0)
        K, T = cl.xi_lo.shape
        flat = [np.asarray(columns[c], dtype=float).ravel() for c in range(n)]
        for cell in range(K * T):
            coefs = {p[c]: flat[c][cell] for c in range(n)}
            m.add_constr(f"up[{cell}]", coefs, "<=", float(cl.gamma_hi.ravel()[cell]))
            m.add_constr(f"lo[{cell}]", coefs, ">=", float(cl.gamma_lo.ravel()[cell]))
        res = solver.solve(m, phase=f"cg-master-{mode}")
        if res.status == solver.INFEASIBLE:
            raise MasterInfeasibleError(
                "no distribution over the given columns meets the moment window")
        if res.status != solver.OPTIMAL:
            raise solver.NumericalFailureError(f"master LP status {res.status}")
        probs = np.array([res.x[p[c]] for c in range(n)])
        alpha = res.dual("prob")
        beta_up = np.array([res.dual(f"up[{cell}]") for cell in range(K * T)]).reshape(K, T)
        beta_lo = -np.array([res.dual(f"lo[{cell}]") for cell in range(K * T)]).reshape(K, T)
        dist = DiscreteDistribution(scenarios=[c.copy() for c in columns],
                                    probs=probs, values=np.asarray(values, dtype=float))
        return float(res.objective), dist, (alpha, beta_up, beta_lo)

    # -- pricing ---------------------------------------------------------------

    def solve_pricing(self, shadow_prices, x: FirstStageDecision, mode: str):
        """Globally maximize the reduced cost over the scenario box.

        Returns (reduced cost, scenario); the scenario has every cell at one of
        its two box bounds, and the reduced cost is re-evaluated exactly at it.
        """
        alpha, beta_up, beta_lo = shadow_prices
        cl = self.cluster
        coef_cell = (np.asarray(beta_lo) - np.asarray(beta_up)).ravel()
        lo = cl.xi_lo.ravel()
        delta = cl.xi_hi.ravel() - lo
        build = (self._build_pricing_feasibility if mode == FEASIBILITY
                 else self._build_pricing_optimality)
        model, z_ids, obj_coefs, const = build(coef_cell, delta, x)
        model.set_objective(obj_coefs)
        res = solver.solve(model, mip_gap=self.mip_gap, phase=f"pricing-{mode}")
        if res.status == solver.UNBOUNDED:
            raise PricingUnboundedError("pricing reported unbounded; dual bounds violated")
        if res.status != solver.OPTIMAL:
            raise solver.NumericalFailureError(f"pricing MILP status {res.status}")
        z = np.rint(res.x[z_ids]).astype(int)
        if self.lex_tiebreak and len(z_ids) <= 40:
            z_lex = self._lex_phase(build, coef_cell, delta, x, obj_coefs,
                                    float(res.objective), mode)
            if z_lex is not None:
                z = z_lex
        xi = (lo + delta * z).reshape(cl.xi_lo.shape)
        value = self.column_value(x, xi, mode)
        reduced = float(coef_cell @ xi.ravel()) - alpha + value
        return reduced, xi

    def _lex_phase(self, build, coef_cell, delta, x, obj_coefs, r1, mode):
        """Among optimal corners, pick the lexicographically smallest bit vector."""
        model, z_ids, _, _ = build(coef_cell, delta, x)
        # Loose enough to absorb phase-1 gap slop; still far below the CG
        # tolerance, so tie-breaking never costs measurable objective.
        tie_tol = 1e-7 * max(1.0, abs(r1))
        model.add_constr("retain-optimum",
                         {j: c for j, c in obj_coefs.items()}, ">=", r1 - tie_tol)
        n = len(z_ids)
        # Maximizing negative powers of two minimizes the bit-integer value.
        model.set_objective({z_ids[i]: -float(2 ** (n - 1 - i)) for i in range(n)})
        res = solver.solve(model, mip_gap=self.mip_gap, phase=f"pricing-lex-{mode}")
        if res.status != solver.OPTIMAL:
            log.warning("lexicographic tie-break solve returned %s; keeping phase-1 corner",
                        res.status)
            return None
        return np.rint(res.x[z_ids]).astype(int)

    def _build_pricing_feasibility(self, coef_cell, delta, x):
        """Dual-side model: violation duals live in [0, 1], so the scenario-dual
        products linearize exactly."""
        rm = self.model
        rhs0 = rm.rhs(x, self.cluster.xi_lo)
        m = solver.ModelHandle(name="pricing-feas", sense="max")
        n = len(coef_cell)
        z = m.add_vars("z", n, kind=solver.BINARY)
        pi = m.add_vars("pi", rm.n_rows, lb=0.0, ub=1.0)
        # Dual feasibility for the violation LP: B_Y^T pi <= 0.
        byc = rm.B_Y.tocoo()
        m.add_block("dualfeas", list(byc.col), [pi[r] for r in byc.row],
                    list(byc.data), "<=", np.zeros(rm.n_vars))
        obj = {z[i]: float(delta[i] * coef_cell[i]) for i in range(n)}
        for r in range(rm.n_rows):
            if rhs0[r] != 0.0:
                obj[pi[r]] = obj.get(pi[r], 0.0) + float(rhs0[r])
        bxi = rm.B_xi.tocoo()
        wrows, wcols, wvals, wrhs, wsenses = [], [], [], [], []
        ridx = 0
        for r, cell, v in zip(bxi.row, bxi.col, bxi.data):
            if delta[cell] == 0.0:
                continue
            w = m.add_var(f"w[{ridx}]", lb=0.0, ub=1.0)
            # w = z[cell] * pi[r] via McCormick (exact for binary z)
            wrows += [ridx * 3, ridx * 3, ridx * 3 + 1, ridx * 3 + 1,
                      ridx * 3 + 2, ridx * 3 + 2, ridx * 3 + 2]
            wcols += [w, pi[r], w, z[cell], w, pi[r], z[cell]]
            wvals += [1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0]
            wrhs += [0.0, 0.0, 1.0]
            wsenses += ["<=", "<=", "<="]
            obj[w] = obj.get(w, 0.0) - float(delta[cell] * v)
            ridx += 1
        if wrows:
            m.add_block("mccormick", wrows, wcols, wvals, wsenses, wrhs)
        const = 0.0  # linear part in z covers coef @ xi_lo via caller
        return m, z, obj, const

    def _build_pricing_optimality(self, coef_cell, delta, x):
        """Primal-side KKT big-M model; the embedded recourse copy is tied to
        optimality through complementarity."""
        rm = self.model
        cl = self.cluster
        rhs0 = rm.rhs(x, cl.xi_lo)
        btil = (rm.B_xi @ _diag(delta)).tocsr()
        my = self._primal_bounds(x)
        # Interval bound on row slack over 0 <= y <= my and z in {0,1}^n.
        by = rm.B_Y.tocsr()
        pos = by.maximum(0)
        m_slack = np.asarray(pos @ my).ravel() + np.asarray(btil.maximum(0).sum(axis=1)).ravel() - rhs0
        m_slack = np.maximum(m_slack, 0.0)
        neg_colsum = np.asarray((-by).maximum(0).sum(axis=0)).ravel()
        m_rc = rm.c + self.pi_cap * neg_colsum

        m = solver.ModelHandle(name="pricing-opt", sense="max")
        n = len(coef_cell)
        z = m.add_vars("z", n, kind=solver.BINARY)
        y = m.add_vars("y", rm.n_vars, lb=0.0, ub=my)
        pi = m.add_vars("pi", rm.n_rows, lb=0.0, ub=self.pi_cap)
        u = m.add_vars("u", rm.n_rows, kind=solver.BINARY)
        w = m.add_vars("w", rm.n_vars, kind=solver.BINARY)

        byc = by.tocoo()
        btc = btil.tocoo()
        # Primal feasibility: B_Y y + Btil z >= rhs0.
        rows = list(byc.row) + list(btc.row)
        cols = [y[c_] for c_ in byc.col] + [z[c_] for c_ in btc.col]
        vals = list(byc.data) + list(btc.data)
        m.add_block("primal", rows, cols, vals, ">=", rhs0)
        # Dual feasibility: B_Y^T pi <= c.
        m.add_block("dualfeas", list(byc.col), [pi[r] for r in byc.row], list(byc.data),
                    "<=", rm.c)
        # Row complementarity: pi_r <= cap * u_r and slack_r <= M(1-u_r).
        m.add_block("pibound", list(range(rm.n_rows)) * 2,
                    [pi[r] for r in range(rm.n_rows)] + [u[r] for r in range(rm.n_rows)],
                    [1.0] * rm.n_rows + [-self.pi_cap] * rm.n_rows,
                    "<=", np.zeros(rm.n_rows))
        rows2 = list(byc.row) + list(btc.row) + list(range(rm.n_rows))
        cols2 = [y[c_] for c_ in byc.col] + [z[c_] for c_ in btc.col] + [u[r] for r in range(rm.n_rows)]
        vals2 = list(byc.data) + list(btc.data) + list(m_slack)
        m.add_block("rowcomp", rows2, cols2, vals2, "<=", rhs0 + m_slack)
        # Column complementarity: y_v <= MY w_v and rc_v <= Mrc (1 - w_v).
        m.add_block("ybound", list(range(rm.n_vars)) * 2,
                    [y[v] for v in range(rm.n_vars)] + [w[v] for v in range(rm.n_vars)],
                    [1.0] * rm.n_vars + list(-my), "<=", np.zeros(rm.n_vars))
        rows3 = list(byc.col) + list(range(rm.n_vars))
        cols3 = [pi[r] for r in byc.row] + [w[v] for v in range(rm.n_vars)]
        vals3 = list(-np.asarray(byc.data)) + list(m_rc)
        m.add_block("colcomp", rows3, cols3, vals3, "<=", m_rc - rm.c)

        obj = {z[i]: float(delta[i] * coef_cell[i]) for i in range(n)}
        for v in range(rm.n_vars):
            if rm.c[v] != 0.0:
                obj[y[v]] = obj.get(y[v], 0.0) + float(rm.c[v])
        return m, z, obj, 0.0

    def _primal_bounds(self, x: FirstStageDecision) -> np.ndarray:
        """Valid upper bounds on recourse variables given the fixed plan."""
        rm = self.model
        inst = self.instance
        b = inst.eligibility_bound()
        my = np.zeros(rm.n_vars)
        hi = self.cluster.xi_hi
        for v, meta in enumerate(rm.var_meta):
            if meta[0] == "ot":
                _, i, j, k, t = meta
                my[v] = b[j, k] * x.old_lines[i, j, t]
            elif meta[0] in ("nt", "ng"):
                _, i, j, k, t = meta
                my[v] = b[j, k] * x.green_lines[i, j, t]
            else:
                _, k, t = meta
                my[v] = (1.0 - inst.service_level) * hi[k, t]
        return my

    # -- the full CG loop ------------------------------------------------------

    def run_cg(self, x: FirstStageDecision, mode: str,
               initial_columns=None, eps: float | None = None,
               iter_limit: int | None = None, trace_path=None) -> CgReport:
        """Algorithm: solve master, price, add the maximizing corner, repeat
        until the reduced cost drops to the (relative) tolerance."""
        cl = self.cluster
        eps = self.eps if eps is None else eps
        n_cells = cl.xi_lo.size
        if iter_limit is None:
            iter_limit = min(2 ** int(n_cells), 10 ** 6) + 10
        columns: list[np.ndarray] = []
        values: list[float] = []
        keys = set()

        def add_column(xi) -> bool:
            xi = np.asarray(xi, dtype=float)
            key = scenario_key(xi)
            if key in keys:
                return False
            keys.add(key)
            columns.append(xi)
            values.append(self.column_value(x, xi, mode))
            return True

        seeds = initial_columns if initial_columns is not None else default_seed_columns(cl)
        for xi in seeds:
            add_column(xi)
        if not columns:
            raise ValueError("no initial columns")
        seed_count = len(columns)

        reduced_costs: list[float] = []
        master_s = pricing_s = 0.0
        trace_rows = []
        iteration = 0
        while True:
            iteration += 1
            if iteration > iter_limit:
                raise CgIterationLimitError(f"no convergence within {iter_limit} iterations")
            t0 = time.perf_counter()
            eta, dist, shadows = self.solve_master(columns, np.asarray(values), mode)
            t1 = time.perf_counter()
            r_star, xi_star = self.solve_pricing(shadows, x, mode)
            t2 = time.perf_counter()
            master_s += t1 - t0
            pricing_s += t2 - t1
            reduced_costs.append(r_star)
            trace_rows.append((iteration, eta, r_star, t2 - t1, t1 - t0))
            if r_star <= eps * max(1.0, abs(eta)):
                break
            if not add_column(xi_star):
                log.warning("pricing returned an existing column with reduced cost %.3g; "
                            "treating as converged", r_star)
                break
        if trace_path is not None:
            with open(trace_path, "w", newline="") as fh:
                wtr = csv.writer(fh)
                wtr.writerow(["iteration", "master_value", "reduced_cost",
                              "pricing_seconds", "master_seconds"])
                wtr.writerows(trace_rows)
        keep = dist.probs > PROB_TOL
        support = DiscreteDistribution(
            scenarios=[s for s, k in zip(dist.scenarios, keep) if k],
            probs=dist.probs[keep] / dist.probs[keep].sum(),
            values=dist.values[keep])
        return CgReport(mode=mode, value=eta, distribution=support,
                        shadow_prices=shadows, iterations=iteration,
                        reduced_costs=reduced_costs, master_seconds=master_s,
                        pricing_seconds=pricing_s, columns=columns,
                        column_values=np.asarray(values), seed_count=seed_count)


def _diag(v):
    import scipy.sparse as sp

    return sp.diags(v)


# ---------------------------------------------------------------------------
# Spec-level functions


def solve_master(columns_with_values, cluster, mode, instance=None, x=None):
    """Columns as (scenario, value) pairs; see WespSolver.solve_master."""
    scenarios = [c for c, _ in columns_with_values]
    values = np.array([v for _, v in columns_with_values], dtype=float)
    # Master only needs the cluster; a lightweight shell avoids recourse assembly.
    shell = WespSolver.__new__(WespSolver)
    shell.cluster = cluster
    return WespSolver.solve_master(shell, scenarios, values, mode)


def solve_pricing(shadow_prices, instance, cluster, x, mode, **kw):
    return WespSolver(instance, cluster, **kw).solve_pricing(shadow_prices, x, mode)


def run_cg(instance, cluster, x, mode, initial_columns=None, eps=DEFAULT_CG_EPS,
           iter_limit=None, trace_path=None, **kw) -> CgReport:
    return WespSolver(instance, cluster, eps=eps, **kw).run_cg(
        x, mode, initial_columns=initial_columns, iter_limit=iter_limit,
        trace_path=trace_path)


def corner_scenarios(cluster: ClusterSpec):
    """All 2^(K*T) box corners, in increasing bit-integer order (first cell is
    the most significant bit)."""
    n = cluster.xi_lo.size
    lo = cluster.xi_lo.ravel()
    hi = cluster.xi_hi.ravel()
    for code in range(2 ** n):
        bits = np.array([(code >> (n - 1 - i)) & 1 for i in range(n)], dtype=float)
        yield (lo + (hi - lo) * bits).reshape(cluster.xi_lo.shape)


def oracle_wesp(instance, cluster, x, mode, recourse_model=None) -> float:
    """Enumeration oracle: recourse value at every box corner, then one LP over
    the full corner set.  Independent of the CG path; testing only at scale."""
    n = cluster.xi_lo.size
    if n > ENUM_GUARD:
        raise TooLargeError(f"{n} cells means 2^{n} corners; oracle guard is {ENUM_GUARD}")
    rm = recourse_model or RecourseModel(instance, cluster)
    corners, vals = [], []
    for xi in corner_scenarios(cluster):
        corners.append(xi)
        if mode == OPTIMALITY:
            vals.append(rm.solve(x, xi).objective)
        else:
            vals.append(rm.solve_feasibility(x, xi).violation)
    # Single master LP over all corners, assembled independently of solve_master.
    m = solver.ModelHandle(name="oracle-master", sense="max")
    flat = [c.ravel() for c in corners]
    pvars = [m.add_var(f"q[{i}]", lb=0.0) for i in range(len(corners))]
    m.set_objective({pvars[i]: vals[i] for i in range(len(corners))})
    m.add_constr("simplex", [(pvars[i], 1.0) for i in range(len(corners))], "==", 1.0)
    glo, ghi = cluster.gamma_lo.ravel(), cluster.gamma_hi.ravel()
    for cell in range(n):
        pairs = [(pvars[i], float(flat[i][cell])) for i in range(len(corners))]
        m.add_constr(f"cell_hi[{cell}]", pairs, "<=", float(ghi[cell]))
        m.add_constr(f"cell_lo[{cell}]", pairs, ">=", float(glo[cell]))
    res = solver.solve(m, phase=f"oracle-{mode}")
    if res.status != solver.OPTIMAL:
        raise solver.NumericalFailureError(f"oracle master LP status {res.status}")
    return float(res.objective)


def check_tightness(distribution: DiscreteDistribution, cluster: ClusterSpec,
                    tol: float = 1e-6):
    """Find a cell whose mean demand can reach its upper moment bound without
    giving up master optimality; returns (k, t) or None.

    Solves a secondary LP over the converged columns: maximize the total mean
    subject to the simplex, the moment window, and value retention.
    """
    if distribution.values is None:
        raise ValueError("distribution must carry recourse values")
    n = len(distribution.scenarios)
    eta = float(distribution.probs @ distribution.values)
    m = solver.ModelHandle(name="tightness", sense="max")
    p = m.add_vars("P", n, lb=0.0)
    flat = [s.ravel() for s in distribution.scenarios]
    cells = cluster.xi_lo.size
    m.set_objective({p[c]: float(flat[c].sum()) for c in range(n)})
    m.add_constr("prob", {p[c]: 1.0 for c in range(n)}, "==", 1.0)
    glo, ghi = cluster.gamma_lo.ravel(), cluster.gamma_hi.ravel()
    for cell in range(cells):
        coefs = {p[c]: float(flat[c][cell]) for c in range(n)}
        m.add_constr(f"up[{cell}]", coefs, "<=", float(ghi[cell]))
        m.add_constr(f"lo[{cell}]", coefs, ">=", float(glo[cell]))
    m.add_constr("retain", {p[c]: float(distribution.values[c]) for c in range(n)},
                 ">=", eta - 1e-9 * max(1.0, abs(eta)))
    res = solver.solve(m, phase="tightness")
    if res.status != solver.OPTIMAL:
        return None
    means = np.zeros(cells)
    for c in range(n):
        means += float(res.x[p[c]]) * flat[c]
    K, T = cluster.xi_lo.shape
    for cell in range(cells):
        if means[cell] >= ghi[cell] - tol:
            return (cell // T, cell % T)
    return None
