"""Command-line entry points.

    sgcvq run      --config cfg.json --out dir [--seed N] [--variant name]
    sgcvq compare  --config cfg.json --out dir [--seed N]
    sgcvq quantize --snapshot snap.bin --features feats.bin --out idx.bin

Exit codes: 0 success, 2 invalid config or data format, 3 I/O failure,
4 numerical failure (the failing step index is reported).
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import NumericalError
from .harness import (compare_experiment, load_experiment_config,
                      override_config, quantize_features, run_experiment)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgcvq",
        description="semantic-guided vector quantization experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train one engine variant")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--variant", default=None)

    cmp_p = sub.add_parser("compare", help="train every configured variant on one stream")
    cmp_p.add_argument("--config", required=True)
    cmp_p.add_argument("--out", required=True)
    cmp_p.add_argument("--seed", type=int, default=None)

    q_p = sub.add_parser("quantize", help="tokenize a feature dump with a snapshot")
    q_p.add_argument("--snapshot", required=True)
    q_p.add_argument("--features", required=True)
    q_p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_experiment_config(args.config)
            cfg = override_config(cfg, seed=args.seed, variant=args.variant)
            run = run_experiment(cfg, args.out)
            print(f"run complete: variant={cfg.engine.variant} steps={cfg.steps} "
                  f"active={run.final.active_fraction}")
        elif args.command == "compare":
            cfg = load_experiment_config(args.config)
            cfg = override_config(cfg, seed=args.seed)
            runs = compare_experiment(cfg, args.out)
            for variant in cfg.variants:
                final = runs[variant].final
                print(f"{variant}: active={final.active_fraction} "
                      f"ss={final.silhouette} dbi={final.dbi}")
        else:
            summary = quantize_features(args.snapshot, args.features, args.out)
            print(json.dumps(summary, sort_keys=True))
    except NumericalError as exc:
        print(f"numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"invalid config or data: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
