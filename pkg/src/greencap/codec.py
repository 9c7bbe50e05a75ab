"""Scenario <-> binary image codec and feature-vector assembly.

Worst-case distributions live on box corners, so a scenario reduces to one bit
per demand cell (0 = lower bound, 1 = upper bound) in a fixed cell order:
product-major, then period, with the first cell as the most significant bit of
the row's integer reading.  Sampling a converged distribution and sorting the
sampled bit rows by that integer yields a reproducible binary image; images
decode back to scenario sets against the cluster's box.

Conditioning features concatenate the flattened plan with the model's cost,
capacity, policy, and box blocks (block order documented in the dataset
manifest), are z-scored with corpus statistics, PCA-projected to 99% variance,
and truncated or zero-padded to exactly 50 entries.  The emitted dataset
directory (features.csv, images/*.pbm + sidecars, manifest.json) is the
bit-exact contract consumed by the generative warm-start component.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.decomposition import PCA

from .climate import ClusterSpec
from .instance import FirstStageDecision, Instance, XLayout

log = logging.getLogger("greencap.codec")

BOUNDARY_TOL = 1e-9
FEATURE_LEN = 50
DEFAULT_IMAGE_ROWS = 50
PCA_VARIANCE = 0.99

FEATURE_BLOCKS = [
    "plan(XLayout)", "expand_cost", "terminate_cost", "upgrade_cost",
    "pv_invest_cost", "prod_cost_old", "prod_cost_new", "shortage_penalty",
    "use_rate_old", "use_rate_new", "lines_output_old", "lines_output_new",
    "energy_per_unit", "pv_kw", "tau", "service_level",
    "omega", "xi_lo", "xi_hi", "gamma_lo", "gamma_hi", "probability",
]


class NonBoundaryScenarioError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class UnfittedPcaError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Label vectors


def encode_scenario(xi: np.ndarray, cluster: ClusterSpec) -> np.ndarray:
    """Scenario at box bounds -> bit vector; degenerate cells encode as 0."""
    xi = np.asarray(xi, dtype=float).ravel()
    lo, hi = cluster.xi_lo.ravel(), cluster.xi_hi.ravel()
    if xi.size != lo.size:
        raise DimensionMismatchError(f"{xi.size} cells vs cluster's {lo.size}")
    bits = np.zeros(xi.size, dtype=np.uint8)
    for c in range(xi.size):
        if hi[c] - lo[c] <= BOUNDARY_TOL:
            bits[c] = 0
        elif abs(xi[c] - hi[c]) <= BOUNDARY_TOL:
            bits[c] = 1
        elif abs(xi[c] - lo[c]) <= BOUNDARY_TOL:
            bits[c] = 0
        else:
            raise NonBoundaryScenarioError(
                f"cell {c} value {xi[c]!r} is at neither bound [{lo[c]!r}, {hi[c]!r}]")
    return bits


def decode_bits(bits: np.ndarray, cluster: ClusterSpec) -> np.ndarray:
    bits = np.asarray(bits).ravel()
    if bits.size != cluster.xi_lo.size:
        raise DimensionMismatchError(f"{bits.size} bits vs cluster's {cluster.xi_lo.size} cells")
    lo, hi = cluster.xi_lo.ravel(), cluster.xi_hi.ravel()
    return np.where(bits > 0, hi, lo).reshape(cluster.xi_lo.shape)


def bits_to_int(bits: np.ndarray) -> int:
    """Integer reading of a row, first cell = most significant bit."""
    out = 0
    for b in np.asarray(bits).ravel():
        out = (out << 1) | int(b)
    return out


# ---------------------------------------------------------------------------
# Images


@dataclass
class ScenarioImage:
    """Sorted binary matrix; rows are sampled boundary scenarios."""

    bits: np.ndarray  # (R, C) uint8, rows ascending by integer reading
    cluster_id: int | None = None

    @property
    def rows(self):
        return self.bits.shape[0]

    @property
    def columns(self):
        return self.bits.shape[1]

    def is_sorted(self) -> bool:
        rows = [tuple(r) for r in self.bits]
        return rows == sorted(rows)


def sample_image(distribution, rows: int = DEFAULT_IMAGE_ROWS,
                 weighting: str = "uniform", seed=0,
                 cluster: ClusterSpec | None = None) -> ScenarioImage:
    """Draw ``rows`` support scenarios with replacement and sort their bit rows.

    ``weighting='uniform'`` ignores the distribution's probabilities (diversity
    mode); ``'probability'`` preserves them.  Deterministic in ``seed``.
    """
    if cluster is None:
        raise ValueError("cluster is required to encode support scenarios")
    support = distribution.scenarios
    if not support:
        raise ValueError("distribution support is empty")
    encoded = np.stack([encode_scenario(s, cluster) for s in support])
    if weighting == "uniform":
        weights = np.full(len(support), 1.0 / len(support))
    elif weighting == "probability":
        weights = np.asarray(distribution.probs, dtype=float)
        weights = weights / weights.sum()
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(support), size=rows, p=weights)
    mat = encoded[picks]
    order = sorted(range(rows), key=lambda r: tuple(mat[r]))
    img = ScenarioImage(bits=mat[order], cluster_id=cluster.cluster_id)
    assert img.is_sorted()
    return img


def decode_image(image: ScenarioImage, cluster: ClusterSpec) -> list[np.ndarray]:
    """Distinct rows -> box corners, in first-appearance row order."""
    if image.columns != cluster.xi_lo.size:
        raise DimensionMismatchError(
            f"image has {image.columns} columns, cluster has {cluster.xi_lo.size} cells")
    seen = set()
    out = []
    for row in image.bits:
        key = bytes(row)
        if key in seen:
            continue
        seen.add(key)
        out.append(decode_bits(row, cluster))
    return out


def write_pbm(image: ScenarioImage, path, sidecar: dict | None = None) -> None:
    path = Path(path)
    lines = [f"P1", f"{image.columns} {image.rows}"]
    for row in image.bits:
        lines.append(" ".join(str(int(b)) for b in row))
    path.write_text("\n".join(lines) + "\n")
    if sidecar is not None:
        meta = {"cluster_id": image.cluster_id,
                "bit_order": "product-major, period-minor, first cell is MSB",
                "sort_order": "ascending"}
        meta.update(sidecar)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1))


def read_pbm(path) -> ScenarioImage:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise ValueError(f"{path}: not an ASCII PBM (P1) file")
    width, height = int(tokens[1]), int(tokens[2])
    bits = np.array([int(t) for t in tokens[3:3 + width * height]], dtype=np.uint8)
    if bits.size != width * height or not np.isin(bits, (0, 1)).all():
        raise ValueError(f"{path}: bad pixel payload")
    cluster_id = None
    side = Path(path).with_suffix(".json")
    if side.exists():
        cluster_id = json.loads(side.read_text()).get("cluster_id")
    return ScenarioImage(bits=bits.reshape(height, width), cluster_id=cluster_id)


# ---------------------------------------------------------------------------
# Features


@dataclass
class FeatureVector:
    raw: np.ndarray
    normalized: np.ndarray
    projected: np.ndarray  # exactly FEATURE_LEN entries


def raw_feature(x: FirstStageDecision, inst: Instance, cluster: ClusterSpec) -> np.ndarray:
    """Concatenation of plan and model-parameter blocks in FEATURE_BLOCKS order."""
    xl = XLayout(inst)
    parts = [
        xl.to_vector(x),
        inst.expand_cost.ravel(), inst.terminate_cost.ravel(), inst.upgrade_cost.ravel(),
        inst.pv_invest_cost.ravel(),
        inst.prod_cost_old.ravel(), inst.prod_cost_new.ravel(), inst.shortage_penalty.ravel(),
        inst.use_rate_old.ravel(), inst.use_rate_new.ravel(),
        inst.lines_output_old.ravel(), inst.lines_output_new.ravel(),
        inst.energy_per_unit.ravel(), inst.pv_kw.ravel(),
        np.array([inst.tau]), np.array([inst.service_level]),
        cluster.omega.ravel(), cluster.xi_lo.ravel(), cluster.xi_hi.ravel(),
        cluster.gamma_lo.ravel(), cluster.gamma_hi.ravel(),
        np.array([cluster.probability]),
    ]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _manual_pca(components: np.ndarray, mean: np.ndarray) -> PCA:
    pca = PCA(n_components=components.shape[0])
    pca.components_ = components
    pca.mean_ = mean
    pca.n_components_ = components.shape[0]
    pca.n_features_in_ = components.shape[1]
    pca.explained_variance_ = np.ones(components.shape[0])
    pca.explained_variance_ratio_ = np.full(components.shape[0],
                                            1.0 / max(components.shape[0], 1))
    pca.singular_values_ = np.ones(components.shape[0])
    pca.whiten = False
    return pca


class FeatureCodec:
    """z-score + PCA(99% variance) + resize-to-50 transform, fit on a corpus."""

    def __init__(self):
        self.mean_ = None
        self.std_ = None
        self.constant_ = None
        self.pca_ = None

    @property
    def fitted(self) -> bool:
        return self.mean_ is not None

    def fit(self, raw_matrix: np.ndarray) -> "FeatureCodec":
        X = np.asarray(raw_matrix, dtype=float)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        # Constant coordinates (up to float noise) map to 0 after z-scoring.
        tiny = std <= 1e-12 * np.maximum(1.0, np.abs(self.mean_))
        self.std_ = np.where(tiny, 1.0, std)
        self.constant_ = tiny
        Z = (X - self.mean_) / self.std_
        Z[:, tiny] = 0.0
        if X.shape[0] < 2 or not Z.any():
            # Degenerate corpus: identity projection onto the leading coordinates.
            pca = _manual_pca(np.eye(X.shape[1])[:min(X.shape[1], FEATURE_LEN)],
                              np.zeros(X.shape[1]))
        else:
            pca = PCA(n_components=PCA_VARIANCE, svd_solver="full", random_state=0)
            try:
                pca.fit(Z)
            except ValueError:
                pca = PCA(n_components=min(X.shape), svd_solver="full",
                          random_state=0).fit(Z)
        self.pca_ = pca
        if pca.n_components_ > FEATURE_LEN:
            log.warning("99%% variance needs %d components; projection truncates to %d "
                        "(information loss recorded in manifest)",
                        pca.n_components_, FEATURE_LEN)
        return self

    def transform(self, raw: np.ndarray) -> FeatureVector:
        if not self.fitted:
            raise UnfittedPcaError("feature codec is not fitted")
        raw = np.asarray(raw, dtype=float)
        z = (raw - self.mean_) / self.std_
        if self.constant_ is not None:
            z = np.where(self.constant_, 0.0, z)
        proj = self.pca_.transform(z[None, :])[0]
        out = np.zeros(FEATURE_LEN)
        n = min(FEATURE_LEN, proj.size)
        out[:n] = proj[:n]
        return FeatureVector(raw=raw, normalized=z, projected=out)

    def save(self, path) -> None:
        np.savez(path, mean=self.mean_, std=self.std_, constant=self.constant_,
                 components=self.pca_.components_, pca_mean=self.pca_.mean_)

    @staticmethod
    def load(path) -> "FeatureCodec":
        data = np.load(path)
        fc = FeatureCodec()
        fc.mean_ = data["mean"]
        fc.std_ = data["std"]
        fc.constant_ = data["constant"] if "constant" in data else None
        fc.pca_ = _manual_pca(data["components"], data["pca_mean"])
        return fc


def build_feature(x: FirstStageDecision, inst: Instance, cluster: ClusterSpec,
                  pca_model: FeatureCodec) -> FeatureVector:
    if pca_model is None or not pca_model.fitted:
        raise UnfittedPcaError("feature codec is not fitted")
    return pca_model.transform(raw_feature(x, inst, cluster))


# ---------------------------------------------------------------------------
# Dataset emission


def emit_dataset(artifacts, out_dir, images_per_item: int = 12,
                 rows: int = DEFAULT_IMAGE_ROWS, weighting: str = "uniform",
                 seed=0) -> dict:
    """Write the (feature, image) training corpus.

    ``artifacts``: iterable of (x, instance, cluster, distribution).  Each
    artifact yields ``images_per_item`` images under distinct derived seeds,
    all paired with the artifact's feature vector.  Returns the manifest.
    """
    artifacts = list(artifacts)
    if not artifacts:
        raise ValueError("no artifacts")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    usable = []
    for a in artifacts:
        x, inst, cluster, dist = a
        if not dist.scenarios:
            log.warning("artifact for cluster %s has empty support; skipped",
                        cluster.cluster_id)
            continue
        usable.append(a)
    codec = FeatureCodec().fit(np.stack([
        raw_feature(x, inst, cluster) for x, inst, cluster, _ in usable]))
    codec.save(out / "feature_codec.npz")
    seeds = np.random.SeedSequence(seed).spawn(len(usable))
    items = []
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"f{c:02d}" for c in range(FEATURE_LEN)])
        for ai, (x, inst, cluster, dist) in enumerate(usable):
            feat = codec.transform(raw_feature(x, inst, cluster))
            child_seeds = seeds[ai].spawn(images_per_item)
            for ii in range(images_per_item):
                item_id = f"{ai:05d}_{ii:03d}"
                img = sample_image(dist, rows=rows, weighting=weighting,
                                   seed=child_seeds[ii], cluster=cluster)
                pbm = out / "images" / f"{item_id}.pbm"
                write_pbm(img, pbm, sidecar={
                    "id": item_id, "feature": feat.projected.tolist(),
                    "cells": int(cluster.xi_lo.size)})
                digest = hashlib.sha256(pbm.read_bytes()).hexdigest()
                items.append({"id": item_id, "cluster_id": int(cluster.cluster_id),
                              "image": f"images/{item_id}.pbm",
                              "sidecar": f"images/{item_id}.json",
                              "sha256": digest,
                              "seed_spawn_key": [int(v) for v in child_seeds[ii].spawn_key]})
                w.writerow([item_id] + [repr(float(v)) for v in feat.projected])
    manifest = {
        "schema": "greencap-dataset-v1",
        "bit_order": "product-major, period-minor, first cell is MSB",
        "sort_order": "ascending",
        "image_rows": rows,
        "feature_length": FEATURE_LEN,
        "feature_blocks": FEATURE_BLOCKS,
        "weighting": weighting,
        "master_seed": seed,
        "items": items,
        "item_count": len(items),
        "pca_components": int(codec.pca_.n_components_),
        "pca_truncated": bool(codec.pca_.n_components_ > FEATURE_LEN),
    }
    manifest["corpus_sha256"] = hashlib.sha256(
        "".join(i["sha256"] for i in items).encode()).hexdigest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest
