"""Command-line interface.

    titan run <config-file> [--override key=value]...
    titan report <checkpoint> [--out FILE]
    titan sweep <config-file> [--override key=value]... [--workers N]

Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
The TITAN_OUTDIR environment variable overrides the configured output
directory.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .runs import DivergenceError, run_experiment, run_lipschitz_sweep, regenerate_metrics

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="titan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment described by a config file")
    run_p.add_argument("config")
    run_p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    rep_p = sub.add_parser("report", help="regenerate metrics from a checkpoint")
    rep_p.add_argument("checkpoint")
    rep_p.add_argument("--out", default=None, help="write the report here instead of stdout")

    sweep_p = sub.add_parser("sweep", help="run the Lipschitz-vs-sparsity sweep")
    sweep_p.add_argument("config")
    sweep_p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    sweep_p.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.override)
            result = run_experiment(cfg, log=print)
            if isinstance(result, tuple):
                print(f"sweep outputs in {cfg.outdir}")
            else:
                print(
                    f"psnr_db={result.psnr_db:.4f} ssim={result.ssim:.4f} "
                    f"dense={result.dense_params} nonzero={result.nonzero_params} "
                    f"wall_clock={result.wall_clock:.1f}s"
                )
                print(f"outputs in {cfg.outdir}")
            return EXIT_OK
        if args.command == "report":
            text = regenerate_metrics(args.checkpoint)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        # sweep
        cfg = load_config(args.config, args.override, force_task="lipschitz_sweep")
        if args.workers is not None:
            cfg = replace(cfg, workers=args.workers)
        run_lipschitz_sweep(cfg, log=print)
        print(f"sweep outputs in {cfg.outdir}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
