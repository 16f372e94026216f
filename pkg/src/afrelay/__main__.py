"""Command-line entry point: ``python -m afrelay`` or ``afrelay``."""

from __future__ import annotations

import argparse
import sys

from . import harness


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="afrelay",
        description="Monte Carlo sweeps of joint channel/CFO/PN estimation and detection "
                    "over an amplify-and-forward OFDM relay link.",
    )
    p.add_argument("--config", help="JSON file with optional 'sim', 'estimator' and 'sweep' sections")
    p.add_argument("--mode", choices=harness.MODES)
    p.add_argument("--snr", type=float, nargs="+", metavar="DB", help="SNR points in dB")
    p.add_argument("--pn-var", type=float, nargs="+", metavar="VAR",
                   help="PN increment variances (applied to both hops)")
    p.add_argument("--m", type=int, nargs="+", help="PN subspace dimensions")
    p.add_argument("--trials", type=int, help="trials per grid point")
    p.add_argument("--seed", type=int, help=f"master seed (overrides ${harness.SEED_ENV})")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--bound-mc", type=int, help="PN draws per trial for the bound")
    p.add_argument("--data-symbols", type=int, help="comb symbols per detection frame")
    p.add_argument("--cfo-sd", type=float, help="fix the source-destination CFO instead of sampling it")
    p.add_argument("--cfo-rd", type=float, help="fix the relay-destination CFO instead of sampling it")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = harness.load_config(args.config) if args.config else harness.SweepSpec()
        spec = harness.apply_overrides(spec, args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"afrelay: configuration error: {exc}", file=sys.stderr)
        return 2
    rows = harness.run_sweep(spec)
    if spec.out:
        try:
            harness.emit_csv(rows, spec.out)
        except OSError as exc:
            print(f"afrelay: {exc}", file=sys.stderr)
            return 1
    else:
        sys.stdout.write(harness.format_csv(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
