"""Sample-average-approximation baseline: scenario samplers over the cluster
boxes and the extensive-form two-stage MILP (one recourse block per sample,
weighted by cluster probability over sample count)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import solver
from .ccg import add_first_stage, first_stage_objective
from .climate import ClusterSpec
from .instance import Instance, XLayout
from .recourse import RecourseModel

UNIFORM = "uniform"
TRUNCATED_GAUSSIAN = "truncated_gaussian"


@dataclass
class SampleSet:
    """Equal-weight scenarios per cluster; weight of one scenario in cluster s
    is q_s / |M_s|."""

    per_cluster: dict  # cluster_id -> list of (K, T) arrays
    descriptor: dict   # kind, seed, count

    def weights(self, clusters) -> dict:
        q = {c.cluster_id: c.probability for c in clusters}
        return {cid: q[cid] / len(scens) for cid, scens in self.per_cluster.items()}

    def to_json(self) -> dict:
        return {"descriptor": self.descriptor,
                "scenarios": {str(cid): [s.tolist() for s in scens]
                              for cid, scens in self.per_cluster.items()}}

    @staticmethod
    def from_json(doc: dict) -> "SampleSet":
        return SampleSet(
            per_cluster={int(cid): [np.asarray(s, dtype=float) for s in scens]
                         for cid, scens in doc["scenarios"].items()},
            descriptor=dict(doc["descriptor"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @staticmethod
    def load(path):
        with open(path) as fh:
            return SampleSet.from_json(json.load(fh))


def sample(cluster: ClusterSpec, kind: str, count: int, seed) -> list[np.ndarray]:
    """i.i.d. scenarios inside the cluster box; deterministic in seed.

    Uniform draws over the box; truncated Gaussian centers at the box midpoint
    with sigma = width/6, rejection-resampled into the box (the +-3 sigma
    construction keeps the rejection rate negligible).  Degenerate cells come
    out constant.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = cluster.xi_lo, cluster.xi_hi
    out = []
    if kind == UNIFORM:
        for _ in range(count):
            out.append(rng.uniform(lo, np.maximum(hi, lo + 1e-300)))
    elif kind == TRUNCATED_GAUSSIAN:
        mid = 0.5 * (lo + hi)
        sigma = (hi - lo) / 6.0
        for _ in range(count):
            xi = rng.normal(mid, np.maximum(sigma, 1e-300))
            for _ in range(64):
                bad = (xi < lo) | (xi > hi)
                if not bad.any():
                    break
                xi = np.where(bad, rng.normal(mid, np.maximum(sigma, 1e-300)), xi)
            out.append(np.clip(xi, lo, hi))
    else:
        raise ValueError(f"unknown sampler kind {kind!r}")
    return [np.where(hi > lo, s, lo) for s in out]


def make_sample_set(clusters, kind: str, count: int, seed) -> SampleSet:
    ss = np.random.SeedSequence(seed).spawn(len(clusters))
    per = {c.cluster_id: sample(c, kind, count, ss[i]) for i, c in enumerate(clusters)}
    return SampleSet(per_cluster=per,
                     descriptor={"kind": kind, "seed": seed, "count": count})


@dataclass
class SaaOutcome:
    status: str
    x: object | None
    objective: float | None
    per_scenario: dict  # (cluster_id, index) -> recourse cost
    wall_time: float


def solve_saa(inst: Instance, clusters, samples: SampleSet,
              time_limit: float | None = None,
              mip_gap: float = solver.MASTER_MIP_GAP) -> SaaOutcome:
    """Extensive-form MILP over all sampled scenarios."""
    if not samples.per_cluster or all(len(v) == 0 for v in samples.per_cluster.values()):
        raise ValueError("sample set is empty")
    model = solver.ModelHandle(name="saa", sense="min")
    x_ids = add_first_stage(model, inst)
    obj = first_stage_objective(inst, x_ids)
    by_id = {c.cluster_id: c for c in clusters}
    weights = samples.weights(clusters)
    y_blocks = {}
    for cid, scens in sorted(samples.per_cluster.items()):
        rm = RecourseModel(inst, by_id[cid])
        w = weights[cid]
        byc = rm.B_Y.tocoo()
        bxc = rm.B_X.tocoo()
        for mi, xi in enumerate(scens):
            y = model.add_vars(f"y[{cid},{mi}]", rm.n_vars, lb=0.0)
            rhs = rm.d - rm.B_xi @ np.asarray(xi, dtype=float).ravel()
            rows = list(byc.row) + list(bxc.row)
            cols = [y[c] for c in byc.col] + [x_ids[c] for c in bxc.col]
            vals = list(byc.data) + list(bxc.data)
            model.add_block(f"blk[{cid},{mi}]", rows, cols, vals, ">=", rhs)
            for v in range(rm.n_vars):
                if rm.c[v] != 0.0:
                    obj[y[v]] = obj.get(y[v], 0.0) + w * float(rm.c[v])
            y_blocks[(cid, mi)] = (y, rm)
    model.set_objective(obj)
    res = solver.solve(model, time_limit=time_limit, mip_gap=mip_gap, phase="saa")
    if res.status != solver.OPTIMAL:
        return SaaOutcome(status=res.status, x=None, objective=res.objective,
                          per_scenario={}, wall_time=res.wall_time)
    xl = XLayout(inst)
    x = xl.from_vector(res.x[x_ids])
    per = {}
    for (cid, mi), (y, rm) in y_blocks.items():
        per[(cid, mi)] = float(rm.c @ res.x[y])
    return SaaOutcome(status="optimal", x=x, objective=float(res.objective),
                      per_scenario=per, wall_time=res.wall_time)
