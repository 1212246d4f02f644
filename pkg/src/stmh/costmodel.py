"""Polynomial FLOP model for single-trunk versus multi-trunk ensembles.

A trunk forward pass costs ``F_T(h) = N h + h^2`` and a backward pass twice
that; a head costs ``2h`` forward. Per optimisation step, with ``N_MC``
samples,

    C_ST = N_MC (3 F_T(h_s) + 6 K h_s)
    C_MT = N_MC K (3 F_T(h_m) + 6 h_m)

The break-even width compares the per-update costs
``N h_s + h_s^2 + 2K h_s`` and ``K (N h_m + h_m^2 + 2 h_m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class CostInputs:
    n_sites: int
    n_heads: int
    width_st: int
    width_mt: int
    n_samples: int = 1

    def __post_init__(self):
        for name in ("n_sites", "n_heads", "width_st", "width_mt", "n_samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class Flops:
    stmh: float
    mtmh: float
    penalty: float


def trunk_forward_flops(n_sites: float, width: float) -> float:
    return n_sites * width + width * width


def flops(inputs: CostInputs, penalty_const: float = 1.0) -> Flops:
    n, k, s = inputs.n_sites, inputs.n_heads, inputs.n_samples
    hs, hm = inputs.width_st, inputs.width_mt
    c_st = s * (3 * trunk_forward_flops(n, hs) + 6 * k * hs)
    c_mt = s * k * (3 * trunk_forward_flops(n, hm) + 6 * hm)
    c_pen = penalty_const * s * k * (k - 1)
    return Flops(float(c_st), float(c_mt), float(c_pen))


def update_cost_st(width_st: float, n_sites: float, n_heads: float) -> float:
    return n_sites * width_st + width_st**2 + 2 * n_heads * width_st


def update_cost_mt(width_mt: float, n_sites: float, n_heads: float) -> float:
    return n_heads * (n_sites * width_mt + width_mt**2 + 2 * width_mt)


def threshold_width(n_sites: float, n_heads: float, width_mt: float) -> float:
    """Single-trunk width at which both ensembles cost the same per update."""
    b = n_sites + 2 * n_heads
    c = n_heads * (n_sites * width_mt + width_mt**2 + 2 * width_mt)
    return (-b + math.sqrt(b * b + 4 * c)) / 2


def slowdown(width_st: float, n_sites: float, n_heads: float, width_mt: float) -> float:
    """R = C_ST(h_s) / C_MT(h_m); below one the single trunk is cheaper."""
    return update_cost_st(width_st, n_sites, n_heads) / update_cost_mt(width_mt, n_sites, n_heads)


def trunk_dominated(n_sites: int, n_heads: int, width: int) -> bool:
    """Regime flag 2K < N + h, under which head terms are subdominant."""
    return 2 * n_heads < n_sites + width


def trunk_only_slowdown(width_st: float, n_sites: float, n_heads: float, width_mt: float) -> float:
    """Slowdown with head terms dropped: F_T(h_s) / (K F_T(h_m))."""
    return trunk_forward_flops(n_sites, width_st) / (n_heads * trunk_forward_flops(n_sites, width_mt))


def trunk_only_threshold(n_sites: float, n_heads: float, width_mt: float) -> float:
    c = n_heads * trunk_forward_flops(n_sites, width_mt)
    return (-n_sites + math.sqrt(n_sites * n_sites + 4 * c)) / 2


def slowdown_sweep(
    widths_st: list[int], n_sites: int, n_heads: int, width_mt: int
) -> list[tuple[int, float]]:
    return [(h, slowdown(h, n_sites, n_heads, width_mt)) for h in widths_st]
