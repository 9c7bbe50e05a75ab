"""Fixed-plan evaluation and cross-validation reporting.

A plan is scored under either the worst-case distribution of each cluster's
ambiguity set (feasibility check first, then the worst-case expectation, as in
the decomposition's subproblem phase) or under an explicit sample set.  Reports
carry the strategic split, the expected recourse cost, the probability-averaged
green-penetration rate, and the service level computed as a ratio of expected
unmet demand to expected demand.  Infeasibility is a verdict, not an error.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .instance import (FirstStageDecision, Instance, strategic_cost_breakdown)
from .recourse import InfeasibleRecourseError, RecourseModel
from .spbaseline import SampleSet
from .wesp import FEASIBILITY, OPTIMALITY, WespSolver, default_seed_columns

PRODUCTION_EPS = 1e-9


@dataclass
class EvaluationReport:
    label: str
    distribution: str           # "worstcase" or a sample-set descriptor
    feasible: bool
    strategic_cost: float
    strategic_split: dict
    tactical_cost: float        # +inf when any cluster/scenario is infeasible
    total_cost: float
    avg_green_penetration_pct: float | None
    avg_service_level_pct: float | None
    cluster_verdicts: dict = field(default_factory=dict)
    infeasible_scenarios: int = 0
    scenario_count: int = 0

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        return {
            "label": self.label,
            "distribution": self.distribution,
            "feasible": self.feasible,
            "strategic_cost": self.strategic_cost,
            "strategic_split": self.strategic_split,
            "tactical_cost": clean(self.tactical_cost),
            "total_cost": clean(self.total_cost),
            "avg_green_penetration_pct": clean(self.avg_green_penetration_pct),
            "avg_service_level_pct": clean(self.avg_service_level_pct),
            "cluster_verdicts": {str(k): v for k, v in self.cluster_verdicts.items()},
            "infeasible_scenarios": self.infeasible_scenarios,
            "scenario_count": self.scenario_count,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def _metrics_from_weighted(solutions):
    """solutions: list of (weight, RecourseSolution, demand_total).

    Green penetration is averaged per scenario (scenarios without production
    are excluded and weights renormalized); service level is the ratio of
    expected unmet demand to expected demand.
    """
    green_w = green_sum = 0.0
    unmet = demand = 0.0
    for w, sol, dem in solutions:
        total = sol.total_production
        if total > PRODUCTION_EPS:
            green_w += w
            green_sum += w * (100.0 * sol.green_production / total)
        unmet += w * float(sol.yu.sum())
        demand += w * dem
    green = green_sum / green_w if green_w > 0 else None
    service = 100.0 * (1.0 - unmet / demand) if demand > 0 else None
    return green, service


def evaluate_worstcase(inst: Instance, clusters, x: FirstStageDecision,
                       label: str = "plan", cg_eps: float = 1e-6,
                       feas_tol: float = 1e-6) -> EvaluationReport:
    """Score ``x`` against each cluster's worst-case distribution."""
    split = strategic_cost_breakdown(inst, x)
    verdicts = {}
    tactical = 0.0
    weighted = []
    feasible = True
    for cl in clusters:
        ws = WespSolver(inst, cl)
        seeds = default_seed_columns(cl)
        rep_f = ws.run_cg(x, FEASIBILITY, initial_columns=seeds, eps=cg_eps)
        if rep_f.value > feas_tol:
            verdicts[cl.cluster_id] = "infeasible"
            feasible = False
            tactical = math.inf
            continue
        rep_o = ws.run_cg(x, OPTIMALITY, initial_columns=seeds, eps=cg_eps)
        verdicts[cl.cluster_id] = "feasible"
        if math.isfinite(tactical):
            tactical += cl.probability * rep_o.value
        for xi, p in zip(rep_o.distribution.scenarios, rep_o.distribution.probs):
            sol = ws.model.solve(x, xi)
            weighted.append((cl.probability * p, sol, float(np.sum(xi))))
    green, service = _metrics_from_weighted(weighted) if weighted else (None, None)
    total = split["total"] + tactical
    return EvaluationReport(
        label=label, distribution="worstcase", feasible=feasible,
        strategic_cost=split["total"], strategic_split=split,
        tactical_cost=tactical, total_cost=total,
        avg_green_penetration_pct=green, avg_service_level_pct=service,
        cluster_verdicts=verdicts, scenario_count=len(weighted))


def evaluate_sampled(inst: Instance, clusters, x: FirstStageDecision,
                     samples: SampleSet, label: str = "plan") -> EvaluationReport:
    """Score ``x`` under an explicit sample set (expected cost, not worst case)."""
    split = strategic_cost_breakdown(inst, x)
    by_id = {c.cluster_id: c for c in clusters}
    weights = samples.weights(clusters)
    tactical = 0.0
    weighted = []
    bad = 0
    n = 0
    verdicts = {}
    for cid, scens in sorted(samples.per_cluster.items()):
        rm = RecourseModel(inst, by_id[cid])
        w = weights[cid]
        cluster_bad = 0
        for xi in scens:
            n += 1
            try:
                sol = rm.solve(x, xi)
            except InfeasibleRecourseError:
                bad += 1
                cluster_bad += 1
                continue
            tactical += w * sol.objective
            weighted.append((w, sol, float(np.sum(xi))))
        verdicts[cid] = "feasible" if cluster_bad == 0 else "infeasible"
    feasible = bad == 0
    if not feasible:
        tactical = math.inf
    green, service = _metrics_from_weighted(weighted) if weighted else (None, None)
    return EvaluationReport(
        label=label, distribution=f"sampled:{samples.descriptor}", feasible=feasible,
        strategic_cost=split["total"], strategic_split=split,
        tactical_cost=tactical, total_cost=split["total"] + tactical,
        avg_green_penetration_pct=green, avg_service_level_pct=service,
        cluster_verdicts=verdicts, infeasible_scenarios=bad, scenario_count=n)


_METRICS = ("total_cost", "strategic_cost", "tactical_cost",
            "avg_green_penetration_pct", "avg_service_level_pct")


def compare(groups, reference: str | None = None) -> dict:
    """Aligned comparison of report groups.

    ``groups``: mapping label -> list of EvaluationReport (same instance order
    across groups).  Feasible counts are per group; metric averages follow the
    convention of averaging over the reference group's feasible instances
    (reference defaults to the first label).
    """
    if isinstance(groups, (list, tuple)):
        groups = {r.label or f"report{i}": [r] for i, r in enumerate(groups)}
    labels = list(groups)
    if len(labels) < 2:
        raise ValueError("compare needs at least two reports")
    if reference is None:
        reference = labels[0]
    ref_mask = [r.feasible for r in groups[reference]]
    table = {"reference": reference, "groups": {}}
    for lab in labels:
        reps = groups[lab]
        entry = {"n": len(reps), "feasible_count": sum(r.feasible for r in reps)}
        for metric in _METRICS:
            vals = [getattr(r, metric) for r, keep in zip(reps, ref_mask)
                    if keep and getattr(r, metric) is not None
                    and math.isfinite(getattr(r, metric) or math.inf)]
            entry[f"avg_{metric}"] = float(np.mean(vals)) if vals else None
        table["groups"][lab] = entry
    ref_entry = table["groups"][reference]
    for lab in labels:
        deltas = {}
        for metric in _METRICS:
            a = table["groups"][lab].get(f"avg_{metric}")
            b = ref_entry.get(f"avg_{metric}")
            deltas[metric] = (a - b) if (a is not None and b is not None) else None
        table["groups"][lab]["delta_vs_reference"] = deltas
    return table


def write_comparison_csv(table: dict, path) -> None:
    labels = list(table["groups"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + labels)
        w.writerow(["n"] + [table["groups"][g]["n"] for g in labels])
        w.writerow(["feasible_count"] + [table["groups"][g]["feasible_count"] for g in labels])
        for metric in _METRICS:
            w.writerow([f"avg_{metric}"] +
                       [table["groups"][g].get(f"avg_{metric}") for g in labels])
