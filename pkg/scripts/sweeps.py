"""Timing sweep over K and accuracy sweep over width, written as CSV.

Usage: python scripts/sweeps.py [--preset n4] [--widths 2 4 8 16 32] [--out runs]
"""

import argparse
from dataclasses import replace

import numpy as np

from stmh.cli import cmd_bench
from stmh.config import load_preset


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--preset", default="n4")
    parser.add_argument("--widths", type=int, nargs="*", default=[2, 4, 8, 16, 32])
    parser.add_argument("--out", default="runs")
    args = parser.parse_args()
    cfg = load_preset(args.preset).with_overrides(out=args.out)
    cfg = replace(cfg, bench=replace(cfg.bench, h_list=args.widths))

    rows = cmd_bench(cfg, "K")
    for mode in ("ST-MH", "MT-MH"):
        ks = np.array([r[2] for r in rows if r[1] == mode], dtype=float)
        secs = np.array([float(r[6]) for r in rows if r[1] == mode])
        print(f"{mode}: {np.polyfit(ks, secs, 1)[0] * 1e3:.3f} ms per extra head")

    for row in cmd_bench(cfg, "h"):
        print(f"{row[1]} h={row[3]:>3} params={row[4]:>6} max|E-E0|={float(row[7]):.2e}")


if __name__ == "__main__":
    main()
