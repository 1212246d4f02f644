"""Print the break-even single-trunk width over a grid of K and multi-trunk widths."""

import argparse

from stmh.costmodel import slowdown, threshold_width


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--sites", type=int, default=4)
    parser.add_argument("--heads", type=int, nargs="*", default=[1, 2, 4, 8])
    parser.add_argument("--widths", type=int, nargs="*", default=[8, 16, 32, 64])
    args = parser.parse_args()
    print("K  h_m  h_s*     R(h_s=h_m)")
    for k in args.heads:
        for hm in args.widths:
            print(f"{k:<2} {hm:<4} {threshold_width(args.sites, k, hm):8.3f} {slowdown(hm, args.sites, k, hm):.4f}")


if __name__ == "__main__":
    main()
