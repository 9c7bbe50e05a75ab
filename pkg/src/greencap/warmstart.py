"""Bridge from generated scenario images to the column-generation engine.

Batches arrive either from a file-drop directory (the codec dataset layout) or
a local HTTP endpoint; rows decode to box corners, get the safe seed columns
appended, and feed CG as initial columns.  Correctness never depends on batch
quality: warm starts change iteration counts, not converged values.  The quick
surrogate check solves the restricted master over the supplied columns only,
yielding a lower bound on the worst-case expectation and a tightness flag that
qualifies the batch as a strong surrogate.
"""

from __future__ import annotations

import json
import logging
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .climate import ClusterSpec
from .codec import DimensionMismatchError, ScenarioImage, read_pbm
from .instance import FirstStageDecision, Instance
from .recourse import InfeasibleRecourseError, RecourseModel
from .wesp import (MasterInfeasibleError, WespSolver, check_tightness,
                   default_seed_columns, scenario_key)

log = logging.getLogger("greencap.warmstart")


class NoValidImagesError(ValueError):
    pass


@dataclass
class GeneratedBatch:
    cluster_id: int
    images: list[ScenarioImage]
    feature: np.ndarray | None = None
    provenance: str = "file"


def load_batch(source, cluster: ClusterSpec) -> GeneratedBatch:
    """Load and validate a batch from a directory of PBMs (or a provider callable).

    Images whose width disagrees with the cluster's cell count are dropped with
    a warning; an empty result is an error.
    """
    if callable(source):
        images = list(source(cluster))
        provenance = getattr(source, "provenance", "provider")
    else:
        root = Path(source)
        image_dir = root / "images" if (root / "images").is_dir() else root
        images = []
        provenance = str(root)
        for pbm in sorted(image_dir.glob("*.pbm")):
            try:
                img = read_pbm(pbm)
            except ValueError as exc:
                log.warning("dropping malformed image %s: %s", pbm, exc)
                continue
            if img.cluster_id is not None and img.cluster_id != cluster.cluster_id:
                continue
            images.append(img)
    valid = []
    for img in images:
        if img.columns != cluster.xi_lo.size:
            log.warning("dropping image with %d columns (cluster has %d cells)",
                        img.columns, cluster.xi_lo.size)
            continue
        valid.append(img)
    if not valid:
        raise NoValidImagesError(f"no valid images for cluster {cluster.cluster_id}")
    return GeneratedBatch(cluster_id=cluster.cluster_id, images=valid,
                          provenance=provenance)


def to_initial_columns(batch: GeneratedBatch, cluster: ClusterSpec,
                       max_columns: int | None = None) -> list[np.ndarray]:
    """Decoded, deduplicated corners plus the default seed columns, so the
    master stays feasible no matter what the generator produced.

    With ``max_columns``, decoded rows are ranked by how often they occur
    across the batch (the generator's implicit probability weighting) and only
    the top ones are kept; every evaluated column costs one recourse solve, so
    capping keeps cheap subproblems cheap.
    """
    from collections import Counter

    counts = Counter()
    order = {}
    for img in batch.images:
        for row in img.bits:
            key = bytes(row)
            counts[key] += 1
            order.setdefault(key, (len(order), row.copy()))
    ranked = sorted(counts, key=lambda k: (-counts[k], order[k][0]))
    if max_columns is not None:
        ranked = ranked[:max_columns]
    columns = []
    keys = set()

    def push(xi):
        key = scenario_key(xi)
        if key not in keys:
            keys.add(key)
            columns.append(xi)

    from .codec import decode_bits

    for key in ranked:
        push(decode_bits(order[key][1], cluster))
    for xi in default_seed_columns(cluster):
        push(xi)
    return columns


def surrogate_bound(inst: Instance, cluster: ClusterSpec, x: FirstStageDecision,
                    columns, recourse_model: RecourseModel | None = None):
    """Restricted-master lower bound on the worst-case expectation.

    Returns (bound, tight): the master LP value over the given columns only
    (a valid lower bound by ambiguity-set inclusion) and whether a moment
    tightness witness exists on the restricted problem.  Columns that cannot
    meet the moment window (or an infeasible recourse) yield (-inf, False).
    """
    ws = WespSolver(inst, cluster, recourse_model=recourse_model)
    try:
        values = np.array([ws.column_value(x, xi, "optimality") for xi in columns])
        eta, dist, _ = ws.solve_master(list(columns), values, "optimality")
    except (MasterInfeasibleError, InfeasibleRecourseError):
        return -np.inf, False
    keep = dist.probs > 1e-12
    support = type(dist)(scenarios=[s for s, k in zip(dist.scenarios, keep) if k],
                         probs=dist.probs[keep] / dist.probs[keep].sum(),
                         values=dist.values[keep])
    witness = check_tightness(support, cluster)
    return eta, witness is not None


# ---------------------------------------------------------------------------
# Providers (the callable the decomposition loop polls per cluster)


@dataclass
class FileDropProvider:
    """Polls a directory laid out per the codec dataset contract."""

    root: Path
    max_columns: int | None = 12
    provenance: str = field(init=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self.provenance = str(self.root)

    def __call__(self, cluster: ClusterSpec, x=None) -> list[np.ndarray]:
        try:
            batch = load_batch(self.root, cluster)
        except NoValidImagesError:
            return []
        return to_initial_columns(batch, cluster, max_columns=self.max_columns)


class HttpProvider:
    """POSTs {cluster_id, feature: [50 floats]} and decodes the PBM response.

    The endpoint must reply with JSON {"pbm": <P1 text>, ...metadata}.  The
    feature comes from the fitted feature codec; responses are stateless and
    safe to request concurrently.
    """

    def __init__(self, url: str, inst: Instance, feature_codec, timeout: float = 10.0,
                 max_columns: int | None = 12):
        self.url = url
        self.instance = inst
        self.codec = feature_codec
        self.timeout = timeout
        self.max_columns = max_columns
        self.provenance = url

    def __call__(self, cluster: ClusterSpec, x: FirstStageDecision) -> list[np.ndarray]:
        from .codec import build_feature

        feat = build_feature(x, self.instance, cluster, self.codec)
        payload = json.dumps({"cluster_id": int(cluster.cluster_id),
                              "feature": feat.projected.tolist()}).encode()
        req = urllib.request.Request(self.url, data=payload,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                doc = json.loads(resp.read().decode())
        except Exception as exc:
            log.warning("warm-start endpoint %s failed: %s", self.url, exc)
            return []
        text = doc.get("pbm", "")
        try:
            img = _pbm_from_text(text)
            batch = GeneratedBatch(cluster_id=cluster.cluster_id, images=[img],
                                   provenance=self.url)
            return to_initial_columns(batch, cluster, max_columns=self.max_columns)
        except (ValueError, DimensionMismatchError) as exc:
            log.warning("warm-start endpoint %s returned a bad image: %s", self.url, exc)
            return []


def _pbm_from_text(text: str) -> ScenarioImage:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise ValueError("payload is not an ASCII PBM")
    width, height = int(tokens[1]), int(tokens[2])
    bits = np.array([int(t) for t in tokens[3:3 + width * height]], dtype=np.uint8)
    if bits.size != width * height or not np.isin(bits, (0, 1)).all():
        raise ValueError("bad pixel payload")
    return ScenarioImage(bits=bits.reshape(height, width))
