"""Reader for the optimizer's (feature, image) training corpus.

The contract is file-based: a directory holding ``manifest.json`` (schema
``greencap-dataset-v1``), ``features.csv`` with one 50-entry feature row per
item, and ``images/<id>.pbm`` ASCII bitmaps whose rows are sorted binary
scenario encodings.  Nothing here imports the optimizer package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA = "greencap-dataset-v1"
FEATURE_LEN = 50


class DatasetSchemaError(ValueError):
    pass


def parse_pbm_text(text: str) -> np.ndarray:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise ValueError("not an ASCII PBM (P1) payload")
    width, height = int(tokens[1]), int(tokens[2])
    bits = np.array([int(t) for t in tokens[3:3 + width * height]], dtype=np.uint8)
    if bits.size != width * height or not np.isin(bits, (0, 1)).all():
        raise ValueError("bad pixel payload")
    return bits.reshape(height, width)


def render_pbm(bits: np.ndarray) -> str:
    rows, cols = bits.shape
    lines = ["P1", f"{cols} {rows}"]
    for row in bits:
        lines.append(" ".join(str(int(b)) for b in row))
    return "\n".join(lines) + "\n"


@dataclass
class ScenarioImageDataset:
    features: np.ndarray  # (N, 50) float32
    images: np.ndarray    # (N, R, C) float32 in {0, 1}
    ids: list[str]
    manifest: dict

    @property
    def rows(self) -> int:
        return self.images.shape[1]

    @property
    def columns(self) -> int:
        return self.images.shape[2]

    def __len__(self):
        return len(self.ids)


def load_dataset(root) -> ScenarioImageDataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetSchemaError(f"{root}: no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema") != SCHEMA:
        raise DatasetSchemaError(
            f"unsupported dataset schema {manifest.get('schema')!r}; expected {SCHEMA}")
    features = {}
    with open(root / "features.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != FEATURE_LEN + 1:
            raise DatasetSchemaError(
                f"features.csv has {len(header) - 1} feature columns, expected {FEATURE_LEN}")
        for row in reader:
            features[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float32)
    ids, feats, imgs = [], [], []
    shape = None
    for item in manifest["items"]:
        if item["id"] not in features:
            raise DatasetSchemaError(f"item {item['id']} missing from features.csv")
        bits = parse_pbm_text((root / item["image"]).read_text())
        if shape is None:
            shape = bits.shape
        elif bits.shape != shape:
            raise DatasetSchemaError(
                f"inhomogeneous image shapes: {bits.shape} vs {shape}")
        ids.append(item["id"])
        feats.append(features[item["id"]])
        imgs.append(bits.astype(np.float32))
    if not ids:
        raise DatasetSchemaError("dataset has no items")
    return ScenarioImageDataset(features=np.stack(feats), images=np.stack(imgs),
                                ids=ids, manifest=manifest)
