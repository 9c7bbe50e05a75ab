"""Second-stage (operational) LP and its feasibility relaxation.

For a fixed plan and demand scenario the model chooses production quantities on
conventional lines (``ot``), traditional output on green lines (``nt``), green
output on green lines (``ng``), and unmet demand (``yu``), minimizing production
plus shortage cost.  Everything is assembled once per (instance, cluster) into
the standard form

    B_X @ x + B_Y @ y + B_xi @ xi >= d,   y >= 0,

whose matrices feed the pricing problems and the outer master cuts.  Row order:
eligibility caps (ot, nt, ng), line-capacity caps (conventional, green), the
single horizon-aggregate green-share row, demand balance as paired inequalities,
service-level caps, and PV energy budgets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import solver
from .climate import ClusterSpec
from .instance import DEMAND_UNIT, FirstStageDecision, Instance, XLayout


class InfeasibleRecourseError(Exception):
    """The operational LP admits no feasible production plan for this scenario."""


@dataclass
class RecourseSolution:
    objective: float
    ot: np.ndarray          # (I, J, K, T)
    nt: np.ndarray
    ng: np.ndarray
    yu: np.ndarray          # (K, T)
    duals: np.ndarray       # one multiplier per standard-form row, >= 0

    @property
    def total_production(self) -> float:
        return float(self.ot.sum() + self.nt.sum() + self.ng.sum())

    @property
    def green_production(self) -> float:
        return float(self.ng.sum())


@dataclass
class FeasibilityRelaxSolution(RecourseSolution):
    slack: np.ndarray = None
    violation: float = 0.0


class RecourseModel:
    """Cached standard-form matrices for one (instance, cluster) pair."""

    def __init__(self, inst: Instance, cluster: ClusterSpec):
        self.instance = inst
        self.cluster = cluster
        self.xlayout = XLayout(inst)
        I, J, K, T = inst.n_factories, inst.n_capacity, inst.n_products, inst.periods
        self.I, self.J, self.K, self.T = I, J, K, T
        b = inst.eligibility_bound()

        # Variables: ot/nt/ng per eligible (i, j, k) and t, then yu per (k, t).
        self.var_meta: list[tuple] = []
        self.var_index: dict[tuple, int] = {}
        for kind in ("ot", "nt", "ng"):
            for i in range(I):
                for j in range(J):
                    for k in range(K):
                        if not inst.eligible[j, k]:
                            continue
                        for t in range(T):
                            self.var_index[(kind, i, j, k, t)] = len(self.var_meta)
                            self.var_meta.append((kind, i, j, k, t))
        for k in range(K):
            for t in range(T):
                self.var_index[("yu", k, t)] = len(self.var_meta)
                self.var_meta.append(("yu", k, t))
        self.n_vars = len(self.var_meta)

        c_old, c_new = inst.prod_cost_old, inst.prod_cost_new
        c_u = inst.shortage_penalty
        self.c = np.zeros(self.n_vars)
        for v, meta in enumerate(self.var_meta):
            if meta[0] == "ot":
                _, i, j, k, t = meta
                self.c[v] = c_old[i, j, k]
            elif meta[0] in ("nt", "ng"):
                _, i, j, k, t = meta
                self.c[v] = c_new[i, j, k]
            else:
                _, k, t = meta
                self.c[v] = c_u[k]

        rows_y = []   # (row, var, coef)
        rows_x = []   # (row, xflat, coef)
        rows_xi = []  # (row, k*T + t, coef)
        self.row_kind: list[tuple] = []
        xl = self.xlayout

        def new_row(kind, *idx):
            self.row_kind.append((kind,) + idx)
            return len(self.row_kind) - 1

        # Eligibility caps: b[j,k] * X^O (or X^N) - Y >= 0.
        for kind, xblock in (("ot", "XO"), ("nt", "XN"), ("ng", "XN")):
            for i in range(I):
                for j in range(J):
                    for k in range(K):
                        if not inst.eligible[j, k]:
                            continue
                        for t in range(T):
                            r = new_row("elig_" + kind, i, j, k, t)
                            rows_x.append((r, xl.index(xblock, i, j, t), b[j, k]))
                            rows_y.append((r, self.var_index[(kind, i, j, k, t)], -1.0))
        # Line capacity: n_j * X - sum_k a_jk * Y >= 0.
        for i in range(I):
            for j in range(J):
                for t in range(T):
                    r = new_row("cap_old", i, j, t)
                    rows_x.append((r, xl.index("XO", i, j, t), inst.lines_output_old[j]))
                    for k in range(K):
                        if inst.eligible[j, k]:
                            rows_y.append((r, self.var_index[("ot", i, j, k, t)],
                                           -inst.use_rate_old[j, k]))
        for i in range(I):
            for j in range(J):
                for t in range(T):
                    r = new_row("cap_new", i, j, t)
                    rows_x.append((r, xl.index("XN", i, j, t), inst.lines_output_new[j]))
                    for k in range(K):
                        if inst.eligible[j, k]:
                            a = inst.use_rate_new[j, k]
                            rows_y.append((r, self.var_index[("nt", i, j, k, t)], -a))
                            rows_y.append((r, self.var_index[("ng", i, j, k, t)], -a))
        # Green-penetration share over the whole horizon (single row):
        # (1 - tau) * sum ng - tau * sum (ot + nt) >= 0.
        r = new_row("green_share")
        tau = inst.tau
        for v, meta in enumerate(self.var_meta):
            if meta[0] == "ng":
                rows_y.append((r, v, 1.0 - tau))
            elif meta[0] in ("ot", "nt"):
                rows_y.append((r, v, -tau))
        # Demand balance, paired: production + yu - xi >= 0 and xi - ... >= 0.
        for k in range(K):
            for t in range(T):
                r = new_row("demand_lo", k, t)
                for v, meta in enumerate(self.var_meta):
                    if meta[0] in ("ot", "nt", "ng") and meta[3] == k and meta[4] == t:
                        rows_y.append((r, v, 1.0))
                rows_y.append((r, self.var_index[("yu", k, t)], 1.0))
                rows_xi.append((r, k * T + t, -1.0))
        for k in range(K):
            for t in range(T):
                r = new_row("demand_hi", k, t)
                for v, meta in enumerate(self.var_meta):
                    if meta[0] in ("ot", "nt", "ng") and meta[3] == k and meta[4] == t:
                        rows_y.append((r, v, -1.0))
                rows_y.append((r, self.var_index[("yu", k, t)], -1.0))
                rows_xi.append((r, k * T + t, 1.0))
        # Service level: (1 - lambda) * xi - yu >= 0.
        for k in range(K):
            for t in range(T):
                r = new_row("service", k, t)
                rows_y.append((r, self.var_index[("yu", k, t)], -1.0))
                rows_xi.append((r, k * T + t, 1.0 - inst.service_level))
        # PV energy budget: E_i * omega_it / DEMAND_UNIT * X^BR - sum e_jk ng >= 0.
        for i in range(I):
            for t in range(T):
                r = new_row("pv", i, t)
                rows_x.append((r, xl.index("XBR", i),
                               inst.pv_kw[i] * cluster.omega[i, t] / DEMAND_UNIT))
                for j in range(J):
                    for k in range(K):
                        if inst.eligible[j, k]:
                            rows_y.append((r, self.var_index[("ng", i, j, k, t)],
                                           -inst.energy_per_unit[j, k]))
        self.n_rows = len(self.row_kind)
        self.B_Y = _to_csr(rows_y, self.n_rows, self.n_vars)
        self.B_X = _to_csr(rows_x, self.n_rows, xl.size)
        self.B_xi = _to_csr(rows_xi, self.n_rows, K * T)
        self.d = np.zeros(self.n_rows)
        # Repeated-solve fast paths: fixed matrices, per-scenario rhs.
        self._lp = solver.RepeatedGeLp(self.c, self.B_Y)
        self._lp_feas = solver.RepeatedGeLp(
            np.concatenate([np.zeros(self.n_vars), np.ones(self.n_rows)]),
            sp.hstack([self.B_Y, sp.identity(self.n_rows, format="csr")], format="csr"))

    # -- rhs and solves ------------------------------------------------------

    def rhs(self, x: FirstStageDecision, xi: np.ndarray) -> np.ndarray:
        """Right-hand side for the Y-only system: B_Y y >= d - B_X x - B_xi xi."""
        xv = self.xlayout.to_vector(x)
        return self.d - self.B_X @ xv - self.B_xi @ np.asarray(xi, dtype=float).ravel()

    def solve(self, x: FirstStageDecision, xi: np.ndarray) -> RecourseSolution:
        res = self._lp.solve(self.rhs(x, xi), phase="recourse")
        if res.status == solver.INFEASIBLE:
            raise InfeasibleRecourseError("operational stage infeasible for this scenario")
        if res.status != solver.OPTIMAL:
            raise solver.NumericalFailureError(f"recourse LP ended with status {res.status}")
        return self._package(res.x, res.duals, float(res.objective))

    def solve_feasibility(self, x: FirstStageDecision, xi: np.ndarray) -> FeasibilityRelaxSolution:
        """Minimum total constraint violation; always feasible."""
        res = self._lp_feas.solve(self.rhs(x, xi), phase="recourse-feas")
        if res.status != solver.OPTIMAL:
            raise solver.NumericalFailureError(f"feasibility LP ended with status {res.status}")
        sol = self._package(res.x[:self.n_vars], res.duals, float(res.objective))
        return FeasibilityRelaxSolution(
            objective=sol.objective, ot=sol.ot, nt=sol.nt, ng=sol.ng, yu=sol.yu,
            duals=sol.duals, slack=res.x[self.n_vars:].copy(),
            violation=float(res.objective))

    def _package(self, y, duals, objective):
        I, J, K, T = self.I, self.J, self.K, self.T
        blocks = {kind: np.zeros((I, J, K, T)) for kind in ("ot", "nt", "ng")}
        yu = np.zeros((K, T))
        for v, meta in enumerate(self.var_meta):
            if meta[0] == "yu":
                yu[meta[1], meta[2]] = y[v]
            else:
                blocks[meta[0]][meta[1], meta[2], meta[3], meta[4]] = y[v]
        return RecourseSolution(objective=objective, ot=blocks["ot"], nt=blocks["nt"],
                                ng=blocks["ng"], yu=yu, duals=duals)

    def dump_standard_form(self, path) -> None:
        """Sparse triplet text dump of (B_X | B_Y | B_xi | d) for debugging."""
        with open(path, "w") as fh:
            fh.write(f"# rows={self.n_rows} yvars={self.n_vars} "
                     f"xvars={self.xlayout.size} xicells={self.K * self.T}\n")
            for label, mat in (("BX", self.B_X), ("BY", self.B_Y), ("BXI", self.B_xi)):
                coo = mat.tocoo()
                for r, c_, v in zip(coo.row, coo.col, coo.data):
                    fh.write(f"{label} {r} {c_} {v!r}\n")
            for r, v in enumerate(self.d):
                fh.write(f"D {r} {v!r}\n")


def _to_csr(triplets, nrows, ncols):
    if not triplets:
        return sp.csr_matrix((nrows, ncols))
    r, c, v = zip(*triplets)
    return sp.csr_matrix((v, (r, c)), shape=(nrows, ncols))


# -- spec-level convenience wrappers ----------------------------------------


def assemble_standard_form(inst: Instance, cluster: ClusterSpec):
    """(B_X, B_Y, B_xi, d) such that y is feasible iff B_X x + B_Y y + B_xi xi >= d."""
    m = RecourseModel(inst, cluster)
    return m.B_X, m.B_Y, m.B_xi, m.d


def solve_recourse(inst, cluster, x, xi) -> RecourseSolution:
    return RecourseModel(inst, cluster).solve(x, xi)


def solve_feasibility(inst, cluster, x, xi) -> FeasibilityRelaxSolution:
    return RecourseModel(inst, cluster).solve_feasibility(x, xi)
