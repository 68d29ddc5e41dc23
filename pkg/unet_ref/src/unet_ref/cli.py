"""unet-ref: train the reference U-net on a .uhsd dataset and export
prediction files for external scoring."""
from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from .predict import ref_predict
from .training import RefTrainSpec, ref_train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="unet-ref", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--mode", choices=("static", "auto"), required=True)
    p.add_argument("--target", choices=("saturation", "pressure"), required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--l2", type=float, default=None,
                   help="L2 coefficient (default 1e-5 static, 0 auto)")
    p.add_argument("--val-cadence", type=int, default=10)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("predict")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--sims", default=None,
                   help="comma-separated sim ids (default: validation sims)")
    p.add_argument("--steps", default=None, help="step range A..B (default full)")

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            l2 = args.l2 if args.l2 is not None else (1e-5 if args.mode == "static" else 0.0)
            spec = RefTrainSpec(base_width=args.width, batch_size=args.batch,
                                lr=args.lr, max_epochs=args.epochs, l2=l2,
                                val_cadence=args.val_cadence,
                                patience=args.patience, seed=args.seed)
            ckpt, hist = ref_train(args.data, args.mode, args.target, spec, args.out)
            print(f"train: checkpoint {ckpt}, history {hist}")
            return 0
        if args.command == "predict":
            sims = None
            if args.sims:
                sims = [int(s) for s in args.sims.split(",")]
            steps = None
            if args.steps:
                m = re.fullmatch(r"(\d+)\.\.(\d+)", args.steps)
                if not m:
                    raise ValueError(f"--steps expects A..B, got {args.steps!r}")
                steps = list(range(int(m.group(1)), int(m.group(2)) + 1))
            paths = ref_predict(args.checkpoint, args.data, sims, steps, args.out)
            print(f"predict: wrote {len(paths)} file(s) to {args.out}")
            return 0
        raise ValueError(f"unknown command {args.command}")
    except Exception as exc:
        print(f"unet-ref {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
