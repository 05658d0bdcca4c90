"""Command line: train the two toy models, then serve the wire protocol."""

from __future__ import annotations

import argparse
import sys

from .server import serve
from .training import (
    DetectorConfig,
    TrainingConfig,
    TrainingDiverged,
    train_detector,
    train_reconstructor,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vissyn-backend", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-mae", help="train the masked autoencoder on correct scenes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-detector", help="train the patch-grid part detector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--mae",
        default=None,
        help="reconstructor checkpoint; adds reconstructed counterparts to training",
    )

    p = sub.add_parser("serve", help="speak the backend protocol on stdin/stdout")
    p.add_argument("--mae", required=True, help="reconstructor checkpoint path")
    p.add_argument("--detector", required=True, help="detector checkpoint path")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train-mae":
            cfg = TrainingConfig(
                mask_ratio=args.mask_ratio,
                epochs=args.epochs,
                batch_size=args.batch_size,
                learning_rate=args.learning_rate,
                seed=args.seed,
            )
            path, history = train_reconstructor(args.corpus, cfg, args.out)
            for epoch, mse in history:
                print(f"epoch {epoch:>3}: held-out masked MSE {mse:.6f}", file=sys.stderr)
            print(path)
            return 0
        if args.command == "train-detector":
            cfg = DetectorConfig(
                epochs=args.epochs,
                batch_size=args.batch_size,
                learning_rate=args.learning_rate,
                seed=args.seed,
                reconstructor_path=args.mae,
            )
            print(train_detector(args.corpus, cfg, args.out))
            return 0
        if args.command == "serve":
            serve(args.mae, args.detector)
            return 0
        raise AssertionError(args.command)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
