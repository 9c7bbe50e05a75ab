"""Outer decomposition: master MILP with dual-reformulated cut sets, bounds,
and the scenario-wise baseline.

Each iteration solves the master (a relaxation whose optimum is the lower
bound), then per cluster checks worst-case feasibility and, when clean, the
worst-case expected cost.  Scenario supports of those worst-case distributions
become feasibility / optimality cut sets: per cluster, one free multiplier and
two nonnegative multiplier vectors tie the cluster's epigraph variable to the
best distribution supported on the accumulated scenarios, with one embedded
recourse block per scenario.  The upper bound is min-updated from incumbent
plans.  The baseline variant grows each cut set by a single scenario per
iteration instead of the whole support, which is what makes it slow.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import solver
from .climate import ClusterSpec
from .instance import FirstStageDecision, Instance, XLayout, strategic_cost
from .recourse import RecourseModel
from .wesp import (FEASIBILITY, OPTIMALITY, WespSolver, default_seed_columns,
                   scenario_key)

log = logging.getLogger("greencap.ccg")

STATUS_OPTIMAL = "optimal"
STATUS_DRO_INFEASIBLE = "dro-infeasible"
STATUS_ITERATION_LIMIT = "iteration-limit"
STATUS_TIME_LIMIT = "time-limit"

DEFAULT_TOL = 1e-5
FEAS_TOL = 1e-6  # worst-case violation above this counts as infeasible


@dataclass
class CutSet:
    cluster_id: int
    kind: str  # "optimality" | "feasibility"
    scenarios: list[np.ndarray] = field(default_factory=list)
    _keys: set = field(default_factory=set)

    def add(self, xi: np.ndarray) -> bool:
        key = scenario_key(xi)
        if key in self._keys:
            return False
        self._keys.add(key)
        self.scenarios.append(np.asarray(xi, dtype=float).copy())
        return True

    def __len__(self):
        return len(self.scenarios)


@dataclass
class SolveOutcome:
    status: str
    x: FirstStageDecision | None
    objective: float | None
    lower_bound: float
    upper_bound: float
    iterations: int
    bound_trace: list[dict]
    master_seconds: float
    subproblem_seconds: float
    cut_counts: dict
    per_cluster_values: dict | None = None

    @property
    def total_cut_scenarios(self) -> int:
        return sum(self.cut_counts.values())


def add_first_stage(model: solver.ModelHandle, inst: Instance) -> np.ndarray:
    """Create the integer capacity-plan block; returns var ids in XLayout order."""
    xl = XLayout(inst)
    I, J, T = xl.I, xl.J, xl.T
    m0 = inst.big_m
    ids = np.empty(xl.size, dtype=int)
    for block in ("X", "XP", "XM", "XO", "XN", "XNP"):
        for i in range(I):
            for j in range(J):
                for t in range(T):
                    if block == "X" and t == 0:
                        lb = ub = int(inst.initial_lines[i, j])
                    elif block == "XN" and t == 0:
                        lb = ub = int(inst.initial_green_lines[i, j])
                    elif block == "XP":
                        lb, ub = 0, int(inst.adjust_up[i, j])
                    elif block == "XM":
                        lb, ub = 0, int(inst.adjust_down[i, j])
                    else:
                        lb, ub = 0, m0
                    ids[xl.index(block, i, j, t)] = model.add_var(
                        f"{block}[{i},{j},{t}]", lb=lb, ub=ub, kind=solver.INTEGER)
    for i in range(I):
        ids[xl.index("XBR", i)] = model.add_var(f"XBR[{i}]", kind=solver.BINARY)
    # Capacity balance and technology split.
    for i in range(I):
        for j in range(J):
            for t in range(T - 1):
                model.add_constr(
                    f"balance[{i},{j},{t}]",
                    {ids[xl.index("X", i, j, t + 1)]: 1.0,
                     ids[xl.index("X", i, j, t)]: -1.0,
                     ids[xl.index("XP", i, j, t)]: -1.0,
                     ids[xl.index("XM", i, j, t)]: 1.0}, "==", 0.0)
                model.add_constr(
                    f"green_balance[{i},{j},{t}]",
                    {ids[xl.index("XN", i, j, t + 1)]: 1.0,
                     ids[xl.index("XN", i, j, t)]: -1.0,
                     ids[xl.index("XNP", i, j, t)]: -1.0}, "==", 0.0)
            for t in range(T):
                model.add_constr(
                    f"split[{i},{j},{t}]",
                    {ids[xl.index("XO", i, j, t)]: 1.0,
                     ids[xl.index("XN", i, j, t)]: 1.0,
                     ids[xl.index("X", i, j, t)]: -1.0}, "==", 0.0)
                model.add_constr(
                    f"upgrade_link[{i},{j},{t}]",
                    {ids[xl.index("XNP", i, j, t)]: 1.0,
                     ids[xl.index("XBR", i)]: -float(m0)}, "<=", 0.0)
    for i in range(I):
        coefs = {ids[xl.index("XBR", i)]: 1.0}
        for j in range(J):
            for t in range(T):
                coefs[ids[xl.index("XNP", i, j, t)]] = -1.0
        model.add_constr(f"pv_requires_upgrade[{i}]", coefs, "<=", 0.0)
    return ids


def first_stage_objective(inst: Instance, ids: np.ndarray) -> dict:
    xl = XLayout(inst)
    obj = {}
    for i in range(xl.I):
        for j in range(xl.J):
            for t in range(xl.T):
                obj[ids[xl.index("XP", i, j, t)]] = float(inst.expand_cost[i, j])
                obj[ids[xl.index("XM", i, j, t)]] = float(inst.terminate_cost[i, j])
                obj[ids[xl.index("XNP", i, j, t)]] = float(inst.upgrade_cost[i, j])
        obj[ids[xl.index("XBR", i)]] = float(inst.pv_invest_cost[i])
    return obj


def _add_recourse_block(model, rm: RecourseModel, x_ids, xi, tag, with_slack):
    """Rows B_X x + B_Y y (+ s) >= d - B_xi xi, fresh y (and slack) variables."""
    y = model.add_vars(f"y{tag}", rm.n_vars, lb=0.0)
    rhs = rm.d - rm.B_xi @ np.asarray(xi, dtype=float).ravel()
    byc = rm.B_Y.tocoo()
    bxc = rm.B_X.tocoo()
    rows = list(byc.row) + list(bxc.row)
    cols = [y[c] for c in byc.col] + [x_ids[c] for c in bxc.col]
    vals = list(byc.data) + list(bxc.data)
    s = None
    if with_slack:
        s = model.add_vars(f"s{tag}", rm.n_rows, lb=0.0)
        rows += list(range(rm.n_rows))
        cols += list(s)
        vals += [1.0] * rm.n_rows
    model.add_block(f"blk{tag}", rows, cols, vals, ">=", rhs)
    return y, s


def build_master(inst: Instance, clusters: list[ClusterSpec], cuts: list[CutSet],
                 eta_lb: float = 0.0, recourse_models: dict | None = None,
                 zero_objective: bool = False):
    """The relaxed capacity-planning MILP with the accumulated cut sets.

    With no cuts this is plain strategic-cost minimization over the balance
    system, with each cluster's epigraph variable floored at ``eta_lb``
    (recourse costs are nonnegative under the validated cost ordering).
    """
    model = solver.ModelHandle(name="mp", sense="min")
    x_ids = add_first_stage(model, inst)
    obj = {} if zero_objective else first_stage_objective(inst, x_ids)
    eta_ids = {}
    rms = recourse_models or {}
    for cl in clusters:
        eta_ids[cl.cluster_id] = model.add_var(f"eta[{cl.cluster_id}]", lb=eta_lb)
        if not zero_objective:
            obj[eta_ids[cl.cluster_id]] = obj.get(eta_ids[cl.cluster_id], 0.0) + cl.probability
    by_cluster = {cl.cluster_id: cl for cl in clusters}
    for cut in cuts:
        if not cut.scenarios:
            continue
        cl = by_cluster[cut.cluster_id]
        if cl.cluster_id not in rms:
            rms[cl.cluster_id] = RecourseModel(inst, cl)
        rm = rms[cl.cluster_id]
        s = cl.cluster_id
        kind = "o" if cut.kind == "optimality" else "f"
        cells = cl.xi_lo.size
        alpha = model.add_var(f"alpha_{kind}[{s}]", lb=-np.inf)
        b_up = model.add_vars(f"betaU_{kind}[{s}]", cells, lb=0.0)
        b_lo = model.add_vars(f"betaL_{kind}[{s}]", cells, lb=0.0)
        ghi, glo = cl.gamma_hi.ravel(), cl.gamma_lo.ravel()
        # Cut head: eta_s (or 0) >= alpha + gammaU' betaU - gammaL' betaL.
        head = {alpha: -1.0}
        for cell in range(cells):
            head[b_up[cell]] = -float(ghi[cell])
            head[b_lo[cell]] = float(glo[cell])
        if cut.kind == "optimality":
            head[eta_ids[s]] = 1.0
            model.add_constr(f"cut_head_o[{s}]", head, ">=", 0.0)
        else:
            model.add_constr(f"cut_head_f[{s}]", head, ">=", 0.0)
        for ci, xi in enumerate(cut.scenarios):
            tag = f"_{kind}{s}_{ci}"
            y, slack = _add_recourse_block(model, rm, x_ids, xi, tag,
                                           with_slack=(cut.kind == "feasibility"))
            # alpha + xi'(betaU - betaL) >= value of this scenario's block.
            row = {alpha: 1.0}
            flat = np.asarray(xi, dtype=float).ravel()
            for cell in range(cells):
                row[b_up[cell]] = float(flat[cell])
                row[b_lo[cell]] = -float(flat[cell])
            if cut.kind == "optimality":
                for v in range(rm.n_vars):
                    if rm.c[v] != 0.0:
                        row[y[v]] = row.get(y[v], 0.0) - float(rm.c[v])
            else:
                for sv in slack:
                    row[sv] = -1.0
            model.add_constr(f"cut_val{tag}", row, ">=", 0.0)
    model.set_objective(obj)
    return model, {"x_ids": x_ids, "eta_ids": eta_ids}


# ---------------------------------------------------------------------------
# The decomposition loop


def _cluster_step(wsolver: WespSolver, x, cut_cols, provider, feas_tol, cg_eps):
    """Feasibility check first; on violation return its support, else the
    worst-case expected cost and its support.

    Generated columns seed only the optimality-mode CG (and are requested only
    when it runs): the feasibility check usually terminates in one round, so
    every extra column there buys nothing and costs one violation-LP solve.
    """
    cl = wsolver.cluster
    seeds = default_seed_columns(cl) + list(cut_cols or [])
    rep_f = wsolver.run_cg(x, FEASIBILITY, initial_columns=seeds, eps=cg_eps)
    if rep_f.value > feas_tol:
        return {"feasible": False, "w": np.inf, "report": rep_f,
                "support": rep_f.distribution}
    provider_cols = list(provider(cl, x)) if provider is not None else []
    rep_o = wsolver.run_cg(x, OPTIMALITY,
                           initial_columns=seeds + provider_cols, eps=cg_eps)
    return {"feasible": True, "w": rep_o.value, "report": rep_o,
            "support": rep_o.distribution}


def _pick_new_scenario(support, cut: CutSet):
    """Baseline policy: highest-probability support scenario not yet cut,
    ties broken by scenario bytes for determinism."""
    order = sorted(range(len(support.scenarios)),
                   key=lambda c: (-support.probs[c], scenario_key(support.scenarios[c])))
    for c in order:
        if scenario_key(support.scenarios[c]) not in cut._keys:
            return support.scenarios[c]
    return None


def run_ccg_dro(inst: Instance, clusters: list[ClusterSpec],
                warmstart_provider=None, tol: float = DEFAULT_TOL,
                iter_limit: int = 100, time_limit: float | None = None,
                mp_gap: float = solver.MASTER_MIP_GAP, cg_eps: float = 1e-6,
                feas_tol: float = FEAS_TOL, max_workers: int = 1,
                trace_path=None, scenario_policy: str = "support",
                surrogate_only: bool = False,
                pricing_kwargs: dict | None = None) -> SolveOutcome:
    """Full decomposition until the bound gap closes below ``tol``.

    ``scenario_policy``: "support" appends each worst-case distribution's whole
    support (the fast variant); "single" appends one scenario per cluster per
    iteration (the baseline).

    ``surrogate_only`` (experimental, needs a warm-start provider): while the
    gap is wide, generated scenarios augment the master directly instead of
    running the exact subproblems, skipping the bound update for those
    iterations; exact passes are forced once the gap closes to 10x the
    tolerance (or when a surrogate pass adds nothing new), so the convergence
    guarantee is untouched.
    """
    probs = np.array([c.probability for c in clusters])
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"cluster probabilities sum to {probs.sum()!r}")
    t_start = time.perf_counter()
    rms = {cl.cluster_id: RecourseModel(inst, cl) for cl in clusters}
    wsolvers = {cl.cluster_id: WespSolver(inst, cl, recourse_model=rms[cl.cluster_id],
                                          **(pricing_kwargs or {}))
                for cl in clusters}
    cuts = {(cl.cluster_id, kind): CutSet(cl.cluster_id, kind)
            for cl in clusters for kind in ("optimality", "feasibility")}
    lb, ub = -np.inf, np.inf
    incumbent = None
    trace: list[dict] = []
    master_s = sub_s = 0.0
    xl = XLayout(inst)
    status = STATUS_ITERATION_LIMIT
    iterations = 0
    per_cluster_last = None

    for it in range(1, iter_limit + 1):
        iterations = it
        if time_limit is not None and time.perf_counter() - t_start > time_limit:
            status = STATUS_TIME_LIMIT
            break
        t0 = time.perf_counter()
        model, info = build_master(inst, clusters, list(cuts.values()),
                                   recourse_models=rms)
        res = solver.solve(model, mip_gap=mp_gap,
                           time_limit=_remaining(time_limit, t_start), phase=f"mp[{it}]")
        master_s += time.perf_counter() - t0
        if res.status == solver.INFEASIBLE:
            status = STATUS_DRO_INFEASIBLE
            break
        if res.status == solver.UNBOUNDED:
            # Degenerate relaxation: recover any feasible plan and keep going.
            feas_model, feas_info = build_master(inst, clusters, list(cuts.values()),
                                                 recourse_models=rms, zero_objective=True)
            res = solver.solve(feas_model, mip_gap=mp_gap, phase=f"mp-feas[{it}]")
            if res.status != solver.OPTIMAL:
                raise solver.NumericalFailureError(
                    f"feasibility recovery solve returned {res.status}")
            info = feas_info
        elif res.status == solver.TIME_LIMIT:
            status = STATUS_TIME_LIMIT
            break
        else:
            lb = max(lb, float(res.bound))
        x = xl.from_vector(res.x[info["x_ids"]])

        t1 = time.perf_counter()
        use_surrogate = (surrogate_only and warmstart_provider is not None
                         and it > 1 and ub - lb > 10.0 * tol)
        if use_surrogate:
            added = 0
            for cl in clusters:
                cols = list(warmstart_provider(cl, x))
                cut = cuts[(cl.cluster_id, "optimality")]
                for xi in cols:
                    if cut.add(xi):
                        added += 1
            sub_s += time.perf_counter() - t1
            if added:
                trace.append({"iteration": it, "lb": lb, "ub": ub,
                              "master_seconds": master_s, "subproblem_seconds": sub_s,
                              "new_cut_scenarios": added, "surrogate": True,
                              "cluster_values": {}})
                log.info("ccg it=%d surrogate pass, %d generated cut scenarios", it, added)
                continue
            # Nothing new to learn from the generator: fall through to exact.
        cut_cols = {}
        for cl in clusters:
            cut_cols[cl.cluster_id] = (
                list(cuts[(cl.cluster_id, "optimality")].scenarios)
                + list(cuts[(cl.cluster_id, "feasibility")].scenarios))
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                futures = {cl.cluster_id: pool.submit(
                    _cluster_step, wsolvers[cl.cluster_id], x,
                    cut_cols[cl.cluster_id], warmstart_provider,
                    feas_tol, cg_eps) for cl in clusters}
                results = {cid: f.result() for cid, f in futures.items()}
        else:
            results = {cl.cluster_id: _cluster_step(
                wsolvers[cl.cluster_id], x, cut_cols[cl.cluster_id],
                warmstart_provider, feas_tol, cg_eps)
                for cl in clusters}
        sub_s += time.perf_counter() - t1
        per_cluster_last = {cid: r["w"] for cid, r in results.items()}

        new_cuts = 0
        for cl in clusters:  # deterministic merge order
            r = results[cl.cluster_id]
            kind = "optimality" if r["feasible"] else "feasibility"
            cut = cuts[(cl.cluster_id, kind)]
            if scenario_policy == "single":
                xi = _pick_new_scenario(r["support"], cut)
                if xi is not None and cut.add(xi):
                    new_cuts += 1
            else:
                for xi in r["support"].scenarios:
                    if cut.add(xi):
                        new_cuts += 1
        ws = np.array([results[cl.cluster_id]["w"] for cl in clusters])
        if np.isfinite(ws).all():
            cand = strategic_cost(inst, x) + float(probs @ ws)
            if cand < ub:
                ub = cand
                incumbent = x
        trace.append({"iteration": it, "lb": lb, "ub": ub,
                      "master_seconds": master_s, "subproblem_seconds": sub_s,
                      "new_cut_scenarios": new_cuts,
                      "cluster_values": {int(c): float(v) for c, v in per_cluster_last.items()}})
        log.info("ccg it=%d lb=%.6f ub=%.6f new_cuts=%d", it, lb, ub, new_cuts)
        if ub - lb <= tol:
            status = STATUS_OPTIMAL
            break

    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "lb", "ub", "master_seconds",
                        "subproblem_seconds", "new_cut_scenarios"])
            for row in trace:
                w.writerow([row["iteration"], row["lb"], row["ub"],
                            row["master_seconds"], row["subproblem_seconds"],
                            row["new_cut_scenarios"]])
    cut_counts = {f"{k[1]}[{k[0]}]": len(c) for k, c in cuts.items()}
    return SolveOutcome(
        status=status, x=incumbent, objective=ub if np.isfinite(ub) else None,
        lower_bound=lb, upper_bound=ub, iterations=iterations, bound_trace=trace,
        master_seconds=master_s, subproblem_seconds=sub_s, cut_counts=cut_counts,
        per_cluster_values=per_cluster_last)


def run_basic_ccg(inst, clusters, tol: float = DEFAULT_TOL, **kw) -> SolveOutcome:
    """Baseline: identical master structure, one scenario per cluster per
    iteration, hence typically many more iterations."""
    kw.setdefault("iter_limit", 400)
    return run_ccg_dro(inst, clusters, tol=tol, scenario_policy="single", **kw)


def _remaining(time_limit, t_start):
    if time_limit is None:
        return None
    left = time_limit - (time.perf_counter() - t_start)
    return max(left, 0.01)
