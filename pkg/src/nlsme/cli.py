"""Command line entry point: ``gradinv {simulate,attack,sweep,ablate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness

log = logging.getLogger("nlsme")


def _parser():
    parser = argparse.ArgumentParser(prog="gradinv", description="Gradient inversion experiments on simulated FedAVG clients.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run client training only and report update statistics",
        "attack": "attack the first sweep point of the config",
        "sweep": "attack every sweep point of the config",
        "ablate": "run the four surrogate ablation variants on every client setting",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="flat YAML experiment file")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="base seed (falls back to config, then GRADINV_SEED)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config, seed=args.seed)
        out = args.out if args.out is not None else Path(cfg.output_dir)
        if args.jobs < 1:
            raise harness.ConfigError("--jobs must be >= 1")
    except (harness.ConfigError, OSError, ValueError) as exc:
        print(f"gradinv: {exc}", file=sys.stderr)
        return 2

    if args.command == "simulate":
        rows = harness.simulate_points(cfg)
        out.mkdir(parents=True, exist_ok=True)
        columns = tuple(rows[0]) if rows else ()
        (out / "simulate.csv").write_text(harness.records_to_csv(rows, columns))
        print(out / "simulate.csv")
        return 0

    variants = harness.ABLATION_VARIANTS if args.command == "ablate" else None
    if args.command == "attack":
        cfg.E, cfg.N, cfg.B, cfg.R, cfg.variant = ([v] for v in cfg.points()[0])
        cfg.trials = 1
    outcomes = harness.run_experiment(cfg, jobs=args.jobs, variants=variants)
    path = harness.emit_outputs(outcomes, out)
    failed = [o.run_id for o in outcomes if o.error]
    for o in outcomes:
        r = o.record
        print(f"{o.run_id} {r['variant']:8s} E={r['E']} N={r['N']} B={r['B']} R={r['R']} trial={r['trial']} "
              f"lsim={r['lsim']:.4g} psnr={r['psnr']:.2f} ssim={r['ssim']:.3f}")
    print(path)
    if failed:
        print(f"gradinv: {len(failed)} run(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
