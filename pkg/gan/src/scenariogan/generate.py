"""Inference: conditionally generate binarized scenario images as PBM text.

Rows of each emitted image are sorted ascending by their bit-integer reading,
matching the optimizer's image contract, and generation is deterministic in
(checkpoint, feature, seed).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .dataset import render_pbm
from .models import Generator
from .train import load_generator


def generate_images(gen: Generator, feature, count: int, seed: int = 0) -> list[np.ndarray]:
    if count < 0:
        raise ValueError("count must be nonnegative")
    if len(feature) != gen.feature_len:
        raise ValueError(f"feature length {len(feature)} != {gen.feature_len}")
    if count == 0:
        return []
    rng = torch.Generator().manual_seed(seed)
    feat = torch.tensor(np.asarray(feature, dtype=np.float32)).repeat(count, 1)
    noise = torch.randn(count, gen.noise_len, generator=rng)
    with torch.no_grad():
        out = gen(noise, feat, binarize=True).numpy().astype(np.uint8)
    images = []
    for i in range(count):
        bits = out[i]
        order = sorted(range(bits.shape[0]), key=lambda r: tuple(bits[r]))
        images.append(bits[order])
    return images


def generate_to_files(checkpoint, feature, count: int, out_dir, seed: int = 0,
                      cluster_id: int | None = None) -> list[Path]:
    gen = load_generator(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, bits in enumerate(generate_images(gen, feature, count, seed=seed)):
        path = out / f"generated_{seed}_{i:04d}.pbm"
        path.write_text(render_pbm(bits))
        sidecar = {"cluster_id": cluster_id, "seed": seed, "index": i,
                   "bit_order": "product-major, period-minor, first cell is MSB",
                   "sort_order": "ascending"}
        import json

        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))
        paths.append(path)
    return paths
