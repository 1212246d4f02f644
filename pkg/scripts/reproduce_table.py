"""Train the shipped presets and print one ground-space summary row each.

Usage: python scripts/reproduce_table.py [--out runs] [n4 n6 ...]
"""

import argparse

from stmh.cli import cmd_train
from stmh.config import PRESETS, load_preset


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("presets", nargs="*", default=["n4", "n6"], choices=PRESETS)
    parser.add_argument("--out", default="runs")
    args = parser.parse_args()
    header = f"{'preset':>6} {'E0':>8} {'Ebar':>10} {'maxVar':>9} {'F_mean':>9} {'F_min':>9} rank d_eff {'frob':>7}"
    print(header)
    for name in args.presets:
        s = cmd_train(load_preset(name).with_overrides(out=args.out))
        print(
            f"{name:>6} {s['E0']:8.4f} {s['Ebar']:10.6f} {s['maxVar']:9.2e} {s['F_mean']:9.6f} "
            f"{s['F_min']:9.6f} {s['min_rank']:>4} {s['min_d_eff']:>5} {s['max_frob_dev']:7.4f}"
        )


if __name__ == "__main__":
    main()
