"""Command line: train a model, generate images, or serve the HTTP endpoint."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .train import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scenariogan",
                                 description="Conditional WGAN-GP over scenario images")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train")
    t.add_argument("--dataset", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--batch-size", type=int, default=512)
    t.add_argument("--lr", type=float, default=1e-5)
    t.add_argument("--critic-updates", type=int, default=4)
    t.add_argument("--gp-coefficient", type=float, default=10.0)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("generate")
    g.add_argument("--checkpoint", type=Path, required=True)
    g.add_argument("--feature", type=Path, required=True,
                   help="JSON file holding a list of 50 numbers")
    g.add_argument("--count", type=int, default=12)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cluster-id", type=int, default=None)
    g.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("serve")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--port", type=int, default=8787)
    s.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                             lr=args.lr, critic_updates=args.critic_updates,
                             gp_coefficient=args.gp_coefficient,
                             checkpoint_every=args.checkpoint_every)
        summary = train(args.dataset, args.out, config, seed=args.seed)
        print(f"trained on {summary['items']} items; "
              f"{len(summary['checkpoints'])} checkpoints in {args.out}")
        return 0
    if args.command == "generate":
        from .generate import generate_to_files

        feature = json.loads(Path(args.feature).read_text())
        paths = generate_to_files(args.checkpoint, feature, args.count,
                                  args.out, seed=args.seed,
                                  cluster_id=args.cluster_id)
        print(f"wrote {len(paths)} images to {args.out}")
        return 0
    if args.command == "serve":
        from .serve import serve

        serve(args.checkpoint, args.port, default_seed=args.seed)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
