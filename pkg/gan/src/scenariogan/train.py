"""WGAN-GP training loop with periodic checkpoints and an FID trace.

Defaults: 300 epochs, batch 512, learning
rate 1e-5 for both networks, Adam momentum pairs (0.0, 0.999) for the
generator and (0.5, 0.999) for the critic, four critic updates per generator
update, gradient-penalty coefficient 10.  All of them are overridable for toy
runs.  Training uses the sigmoid output; binarization happens at inference.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .dataset import ScenarioImageDataset, load_dataset
from .fid import PcaFeatureExtractor, fid_score
from .models import Critic, Generator, gradient_penalty


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 512
    lr: float = 1e-5
    gen_betas: tuple = (0.0, 0.999)
    critic_betas: tuple = (0.5, 0.999)
    critic_updates: int = 4
    gp_coefficient: float = 10.0
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = auto (~6 total)
    fid_samples: int = 64

    def validate(self):
        for name in ("epochs", "batch_size", "lr", "critic_updates", "gp_coefficient"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _sample_batch(ds: ScenarioImageDataset, size, rng):
    idx = rng.integers(0, len(ds), size=size)
    real = torch.from_numpy(ds.images[idx])
    feat = torch.from_numpy(ds.features[idx])
    return real, feat


def save_checkpoint(path, gen: Generator, critic: Critic, config: TrainConfig,
                    epoch: int):
    torch.save({"generator": gen.state_dict(), "critic": critic.state_dict(),
                "rows": gen.rows, "columns": gen.columns, "epoch": epoch,
                "config": asdict(config)}, path)


def load_generator(path) -> Generator:
    ck = torch.load(path, map_location="cpu", weights_only=False)
    gen = Generator(ck["rows"], ck["columns"])
    gen.load_state_dict(ck["generator"])
    gen.eval()
    return gen


def train(dataset_path, out_dir, config: TrainConfig | None = None,
          seed: int = 0) -> dict:
    """Train on a codec-emitted corpus; returns a summary with checkpoint
    paths and the FID trace."""
    config = config or TrainConfig()
    config.validate()
    ds = load_dataset(dataset_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    torch_rng = torch.Generator().manual_seed(seed)

    gen = Generator(ds.rows, ds.columns)
    critic = Critic(ds.rows, ds.columns)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=config.gen_betas)
    opt_c = torch.optim.Adam(critic.parameters(), lr=config.lr,
                             betas=config.critic_betas)

    extractor = PcaFeatureExtractor().fit(ds.images)
    holdout = ds.images[rng.integers(0, len(ds), size=min(len(ds), config.fid_samples))]

    batch = min(config.batch_size, len(ds))
    every = config.checkpoint_every or max(1, config.epochs // 6)
    steps_per_epoch = max(1, len(ds) // batch)
    metrics_path = out / "metrics.csv"
    checkpoints = []
    fid_trace = []
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "critic_loss", "generator_loss",
                         "gradient_penalty", "fid"])
        for epoch in range(1, config.epochs + 1):
            c_losses, g_losses, gps = [], [], []
            for _ in range(steps_per_epoch):
                for _ in range(config.critic_updates):
                    real, feat = _sample_batch(ds, batch, rng)
                    noise = torch.randn(batch, gen.noise_len, generator=torch_rng)
                    with torch.no_grad():
                        fake = gen(noise, feat)
                    gp = gradient_penalty(critic, real, fake, feat, rng=torch_rng)
                    loss_c = (critic(fake, feat).mean() - critic(real, feat).mean()
                              + config.gp_coefficient * gp)
                    opt_c.zero_grad()
                    loss_c.backward()
                    opt_c.step()
                    c_losses.append(float(loss_c.detach()))
                    gps.append(float(gp.detach()))
                _, feat = _sample_batch(ds, batch, rng)
                noise = torch.randn(batch, gen.noise_len, generator=torch_rng)
                loss_g = -critic(gen(noise, feat), feat).mean()
                opt_g.zero_grad()
                loss_g.backward()
                opt_g.step()
                g_losses.append(float(loss_g.detach()))
            fid = None
            if epoch % every == 0 or epoch == config.epochs:
                with torch.no_grad():
                    idx = rng.integers(0, len(ds), size=holdout.shape[0])
                    feat = torch.from_numpy(ds.features[idx])
                    noise = torch.randn(holdout.shape[0], gen.noise_len,
                                        generator=torch_rng)
                    fake = gen(noise, feat, binarize=True).numpy()
                fid = fid_score(extractor, holdout, fake)
                fid_trace.append({"epoch": epoch, "fid": fid})
                ck_path = out / f"checkpoint_{epoch:05d}.pt"
                save_checkpoint(ck_path, gen, critic, config, epoch)
                checkpoints.append(str(ck_path))
            writer.writerow([epoch, np.mean(c_losses), np.mean(g_losses),
                             np.mean(gps), "" if fid is None else fid])
    summary = {"checkpoints": checkpoints, "fid_trace": fid_trace,
               "rows": ds.rows, "columns": ds.columns,
               "items": len(ds), "seed": seed}
    (out / "training_summary.json").write_text(json.dumps(summary, indent=1))
    return summary
