"""Climate ingestion, clustering, and per-cluster ambiguity sets.

Historical quarterly peak-sunshine records are augmented with cross-region mean
and range features, partitioned by k-means into climate regimes, and each regime
is turned into a :class:`ClusterSpec`: an empirical probability, a sunshine
centroid mapped onto factories, a demand support box (per-cluster min/max of
demand samples), and a first-moment window (10th/90th percentiles).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np


class MissingRegionError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class ClimateRecord:
    year: int
    quarter: int
    region: str
    hours: float


def load_climate_csv(path) -> list[ClimateRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = ClimateRecord(int(row["year"]), int(row["quarter"]),
                                row["region"], float(row["hours"]))
            if rec.hours <= 0:
                raise ValueError(f"non-positive sunshine hours in record {rec}")
            out.append(rec)
    return out


def save_climate_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "quarter", "region", "hours"])
        for r in records:
            w.writerow([r.year, r.quarter, r.region, repr(r.hours)])


def make_synthetic_climate(seed=2022, years=range(1992, 2023), regions=("region1", "region2", "region3")):
    """Synthetic quarterly sunshine series standing in for unpublished data.

    Qualitative structure: region3 enjoys the highest irradiance and region2
    the weakest seasonal swing.  Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    # Levels cycle for region counts other than three; the last region is the
    # sunniest and the middle one the least seasonal.
    base_levels = [330.0, 290.0, 430.0]
    amp_levels = [75.0, 22.0, 95.0]
    base = {r: base_levels[i % 3] for i, r in enumerate(regions)}
    amp = {r: amp_levels[i % 3] for i, r in enumerate(regions)}
    out = []
    for year in years:
        drift = rng.normal(0.0, 12.0, size=len(regions))
        for q in range(1, 5):
            season = np.sin(np.pi * (q - 1) / 3.0)  # peaks in Q2/Q3
            for ri, r in enumerate(regions):
                hours = base[r] + amp[r] * season + drift[ri] + rng.normal(0.0, 8.0)
                out.append(ClimateRecord(year, q, r, float(max(hours, 40.0))))
    return out


# ---------------------------------------------------------------------------
# Feature augmentation and clustering


def augment_features(records) -> tuple[np.ndarray, list[tuple[int, int]], list[str]]:
    """One row per historical period: per-region hours, cross-region mean, range.

    Returns (features, period keys, region order).  Raises if any period is
    missing a region.
    """
    regions = sorted({r.region for r in records})
    by_period: dict[tuple[int, int], dict[str, float]] = {}
    for r in records:
        by_period.setdefault((r.year, r.quarter), {})[r.region] = r.hours
    periods = sorted(by_period)
    rows = []
    for p in periods:
        vals = by_period[p]
        missing = [r for r in regions if r not in vals]
        if missing:
            raise MissingRegionError(f"period {p} missing regions {missing}")
        v = np.array([vals[r] for r in regions])
        rows.append(np.concatenate([v, [v.mean(), v.max() - v.min()]]))
    return np.asarray(rows), periods, regions


def _kmeans_pp_init(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = X[rng.integers(n)]
            continue
        centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(X, centers, max_iter=300):
    """Lloyd iterations until assignments stabilize; returns per-iteration WCSS."""
    n, k = X.shape[0], centers.shape[0]
    assign = np.full(n, -1)
    wcss_trace = []
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        # Empty-cluster repair: reseed at the point farthest from its centroid.
        for c in range(k):
            if not (new_assign == c).any():
                worst = np.argmax(d2[np.arange(n), new_assign])
                centers[c] = X[worst]
                d2[:, c] = ((X - centers[c]) ** 2).sum(axis=1)
                new_assign = np.argmin(d2, axis=1)
        wcss_trace.append(float(d2[np.arange(n), new_assign].sum()))
        if (new_assign == assign).all():
            break
        assign = new_assign
        for c in range(k):
            centers[c] = X[assign == c].mean(axis=0)
    return assign, centers, wcss_trace


def kmeans(features: np.ndarray, n_clusters: int, seed, restarts: int = 10,
           max_iter: int = 300):
    """Deterministic k-means (k-means++ seeding, Lloyd, best of ``restarts``).

    Returns (assignments, centroids, wcss_trace of the winning restart).
    """
    X = np.asarray(features, dtype=float)
    if n_clusters > X.shape[0]:
        raise DegenerateInputError(
            f"{n_clusters} clusters requested but only {X.shape[0]} rows")
    if n_clusters > np.unique(X, axis=0).shape[0]:
        raise DegenerateInputError("fewer distinct rows than clusters")
    restarts = min(max(restarts, 1), 100)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _kmeans_pp_init(X, n_clusters, rng)
        assign, centers, trace = _lloyd(X, centers.copy(), max_iter)
        if best is None or trace[-1] < best[2][-1] - 1e-12:
            best = (assign, centers, trace)
    return best


# ---------------------------------------------------------------------------
# Ambiguity sets


@dataclass
class ClusterSpec:
    """One climate regime: probability, sunshine centroid, demand boxes.

    ``omega`` has shape (I, T): peak sunshine hours per factory and period.
    The demand boxes are (K, T) with xi_lo <= gamma_lo <= gamma_hi <= xi_hi.
    """

    cluster_id: int
    probability: float
    omega: np.ndarray
    xi_lo: np.ndarray
    xi_hi: np.ndarray
    gamma_lo: np.ndarray
    gamma_hi: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.xi_lo.size)

    def validate(self) -> list[str]:
        out = []
        if not (0.0 < self.probability <= 1.0):
            out.append(f"probability {self.probability} outside (0, 1]")
        for nm, lo, hi in (("xi", self.xi_lo, self.xi_hi),
                           ("gamma", self.gamma_lo, self.gamma_hi)):
            if (lo > hi + 1e-12).any():
                out.append(f"{nm} box has lo > hi")
        if (self.xi_lo > self.gamma_lo + 1e-12).any() or (self.gamma_hi > self.xi_hi + 1e-12).any():
            out.append("moment window not contained in support box")
        return out

    def to_json(self) -> dict:
        return {
            "cluster_id": int(self.cluster_id),
            "probability": float(self.probability),
            "omega": self.omega.tolist(),
            "xi_lo": self.xi_lo.tolist(),
            "xi_hi": self.xi_hi.tolist(),
            "gamma_lo": self.gamma_lo.tolist(),
            "gamma_hi": self.gamma_hi.tolist(),
        }

    @staticmethod
    def from_json(doc: dict) -> "ClusterSpec":
        return ClusterSpec(
            cluster_id=int(doc["cluster_id"]),
            probability=float(doc["probability"]),
            omega=np.asarray(doc["omega"], dtype=float),
            xi_lo=np.asarray(doc["xi_lo"], dtype=float),
            xi_hi=np.asarray(doc["xi_hi"], dtype=float),
            gamma_lo=np.asarray(doc["gamma_lo"], dtype=float),
            gamma_hi=np.asarray(doc["gamma_hi"], dtype=float),
        )


def save_clusters(clusters, path) -> None:
    with open(path, "w") as fh:
        json.dump({"clusters": [c.to_json() for c in clusters]}, fh, indent=1)


def load_clusters(path) -> list[ClusterSpec]:
    with open(path) as fh:
        doc = json.load(fh)
    return [ClusterSpec.from_json(c) for c in doc["clusters"]]


def _percentile_linear(sorted_vals: np.ndarray, q: float) -> float:
    """Linear interpolation between order statistics (q in [0, 100])."""
    n = len(sorted_vals)
    if n == 1:
        return float(sorted_vals[0])
    pos = (q / 100.0) * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(sorted_vals[lo] * (1 - frac) + sorted_vals[hi] * frac)


def _scale_box(lo, hi, scale):
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * scale
    return mid - half, mid + half


def build_ambiguity(assignments, demand_samples_per_cluster, scale: float = 1.0,
                    omega_per_cluster=None, n_periods: int | None = None) -> list["ClusterSpec"]:
    """Construct one ClusterSpec per cluster from demand samples.

    ``demand_samples_per_cluster``: mapping cluster id -> array (n_s, K, T) with
    n_s >= 2.  Support box = per-cell sample min/max, moment window = 10th/90th
    percentiles; both widths scaled about their midpoints by ``scale`` and
    clamped to keep xi_lo <= gamma_lo <= gamma_hi <= xi_hi and demand >= 0.
    Probabilities are exact cardinality ratios.
    """
    assignments = np.asarray(assignments)
    ids = sorted(demand_samples_per_cluster)
    total = len(assignments)
    counts = {s: int((assignments == s).sum()) for s in ids}
    out = []
    for s in ids:
        samples = np.asarray(demand_samples_per_cluster[s], dtype=float)
        if samples.shape[0] < 2:
            raise InsufficientSamplesError(f"cluster {s} has {samples.shape[0]} samples; need >= 2")
        xi_lo = samples.min(axis=0)
        xi_hi = samples.max(axis=0)
        srt = np.sort(samples, axis=0)
        K, T = samples.shape[1], samples.shape[2]
        g_lo = np.empty((K, T))
        g_hi = np.empty((K, T))
        for k in range(K):
            for t in range(T):
                g_lo[k, t] = _percentile_linear(srt[:, k, t], 10.0)
                g_hi[k, t] = _percentile_linear(srt[:, k, t], 90.0)
        if scale != 1.0:
            xi_lo, xi_hi = _scale_box(xi_lo, xi_hi, scale)
            g_lo, g_hi = _scale_box(g_lo, g_hi, scale)
        xi_lo = np.maximum(xi_lo, 0.0)
        g_lo = np.clip(g_lo, xi_lo, xi_hi)
        g_hi = np.clip(g_hi, g_lo, xi_hi)
        if omega_per_cluster is not None:
            omega = np.asarray(omega_per_cluster[s], dtype=float)
            if omega.ndim == 1:
                if n_periods is None:
                    n_periods = T
                omega = np.repeat(omega[:, None], n_periods, axis=1)
        else:
            omega = np.ones((1, T))
        out.append(ClusterSpec(
            cluster_id=s,
            probability=counts.get(s, 0) / total if total else 1.0 / len(ids),
            omega=omega, xi_lo=xi_lo, xi_hi=xi_hi, gamma_lo=g_lo, gamma_hi=g_hi))
    return out


def clusters_from_climate(instance, records, n_clusters: int, seed,
                          samples_override: int | None = None) -> list[ClusterSpec]:
    """Full pipeline: features -> k-means -> per-cluster demand sampling ->
    ambiguity sets, with the instance's nominal demand and ambiguity scale."""
    if instance.nominal_demand is None:
        raise ValueError("instance carries no nominal demand profile")
    feats, periods, regions = augment_features(records)
    if len(regions) != instance.n_factories:
        raise MissingRegionError(
            f"{len(regions)} climate regions but {instance.n_factories} factories "
            "(regions map to factories one-to-one)")
    assign, centroids, _ = kmeans(feats, n_clusters, seed)
    from .instance import sample_demand

    rng = np.random.default_rng(seed)
    samples = {}
    omegas = {}
    for s in range(n_clusters):
        members = int((assign == s).sum())
        count = samples_override or max(members, 2)
        samples[s] = sample_demand(instance.nominal_demand, count,
                                   rng.integers(0, 2**63 - 1))
        omegas[s] = centroids[s][:len(regions)]  # per-region hours, mean/range dropped
    return build_ambiguity(assign, samples, scale=instance.ambiguity_scale,
                           omega_per_cluster=omegas, n_periods=instance.periods)


def shipped_climate_records() -> list[ClimateRecord]:
    from importlib import resources

    with resources.files("greencap.data").joinpath("climate_synthetic.csv").open() as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append(ClimateRecord(int(row["year"]), int(row["quarter"]),
                                     row["region"], float(row["hours"])))
        return out
