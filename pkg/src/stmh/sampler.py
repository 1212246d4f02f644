"""Metropolis-Hastings sampling in the S^z_tot = 0 sector.

Moves swap one uniformly chosen up spin with one uniformly chosen down
spin, so the proposal is symmetric and never leaves the sector. Targets
are tabulated over the enumerated sector before a chain runs, which makes
every acceptance test a table lookup.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numba
import numpy as np
from scipy.special import logsumexp

from .model import SectorBasis, popcount

INIT_RETRIES = 100


class SamplingMode(str, Enum):
    PER_HEAD = "per-head"
    MIXTURE = "mixture"


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 512
    n_chains: int = 8
    sweeps: int = 5
    burn_in: int = 100
    seed: int = 0
    mode: SamplingMode = SamplingMode.MIXTURE

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplingMode(self.mode))
        for name in ("n_samples", "n_chains", "sweeps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.n_samples % self.n_chains:
            raise ValueError(
                f"n_samples={self.n_samples} is not divisible by n_chains={self.n_chains}"
            )

    @property
    def samples_per_chain(self) -> int:
        return self.n_samples // self.n_chains


@dataclass
class SampleBatch:
    """Sampled configurations and per-head self-normalised weights.

    ``weights[k]`` sums to one. In per-head mode the batch is the
    concatenation of the heads' own chains and head ``k`` weights only its
    own block.
    """

    configs: np.ndarray  # (S,) bitmasks
    weights: np.ndarray  # (K, S)
    ess: np.ndarray  # (K,)
    log_mix: np.ndarray | None = None
    acceptance: float = float("nan")

    @property
    def size(self) -> int:
        return len(self.configs)

    def check(self, atol: float = 1e-12) -> None:
        sums = self.weights.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > atol):
            raise SamplerError(f"weight rows do not sum to one: {sums}")
        if np.any(self.ess < 1.0 - 1e-9) or np.any(self.ess > self.size + 1e-9):
            raise SamplerError(f"ESS outside [1, S]: {self.ess}")


def ess(weights_row: np.ndarray, atol: float = 1e-10) -> float:
    w = np.asarray(weights_row, dtype=np.float64)
    if np.any(w < 0) or abs(w.sum() - 1.0) > atol:
        raise ValueError("weights must be non-negative and sum to one")
    return float(1.0 / np.sum(w * w))


def normalized_weights(log_w: np.ndarray) -> np.ndarray:
    """Normalise rows of unnormalised log-weights; -inf entries get zero."""
    log_w = np.atleast_2d(log_w)
    shift = np.max(log_w, axis=1, keepdims=True)
    w = np.exp(log_w - shift)
    return w / w.sum(axis=1, keepdims=True)


# proposals and chains -------------------------------------------------------


def propose_exchange(x: int, n_sites: int, rng: np.random.Generator) -> int:
    half = n_sites // 2
    return int(_swap(np.int64(x), n_sites, rng.integers(half), rng.integers(half)))


@numba.njit(cache=True)
def _swap(x, n_sites, r_up, r_down):
    """Exchange the r_up-th up spin with the r_down-th down spin."""
    seen_up = 0
    seen_down = 0
    up_site = -1
    down_site = -1
    for j in range(n_sites):
        if (x >> j) & 1:
            if seen_up == r_up:
                up_site = j
            seen_up += 1
        else:
            if seen_down == r_down:
                down_site = j
            seen_down += 1
    return x ^ ((1 << up_site) | (1 << down_site))


@numba.njit(cache=True)
def _run_chain(table, x0, n_sites, n_record, steps_between, burn_steps, r_up, r_down, u):
    out = np.empty(n_record, dtype=np.int64)
    x = x0
    lp = table[x]
    accepted = 0
    t = 0
    for _ in range(burn_steps):
        y = _swap(x, n_sites, r_up[t], r_down[t])
        lq = table[y]
        if np.log(u[t]) < lq - lp:
            x = y
            lp = lq
            accepted += 1
        t += 1
    for i in range(n_record):
        for _ in range(steps_between):
            y = _swap(x, n_sites, r_up[t], r_down[t])
            lq = table[y]
            if np.log(u[t]) < lq - lp:
                x = y
                lp = lq
                accepted += 1
            t += 1
        out[i] = x
    return out, accepted


def tabulate(log_prob: Callable[[np.ndarray], np.ndarray], basis: SectorBasis) -> np.ndarray:
    """Dense table over all 2^N bitmasks; -inf outside the sector."""
    table = np.full(1 << basis.n_sites, -np.inf)
    table[basis.configs] = np.asarray(log_prob(basis.configs), dtype=np.float64)
    if np.any(np.isnan(table)):
        raise SamplerError("log_prob returned NaN")
    return table


def metropolis_chain(
    table: np.ndarray,
    basis: SectorBasis,
    n_record: int,
    sweeps: int,
    burn_in: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """One chain on a tabulated log-target; returns (samples, acceptance rate).

    A sweep is N proposals. One sample is kept after every ``sweeps`` sweeps
    following ``burn_in`` discarded sweeps.
    """
    n = basis.n_sites
    for _ in range(INIT_RETRIES):
        x0 = int(basis.configs[rng.integers(len(basis))])
        if np.isfinite(table[x0]):
            break
    else:
        raise SamplerError(f"no supported initial state after {INIT_RETRIES} draws")
    burn_steps = burn_in * n
    between = sweeps * n
    total = burn_steps + n_record * between
    half = n // 2
    r_up = rng.integers(half, size=total)
    r_down = rng.integers(half, size=total)
    u = rng.random(total)
    samples, accepted = _run_chain(
        table, np.int64(x0), n, n_record, between, burn_steps, r_up, r_down, u
    )
    return samples, accepted / max(total, 1)


def seed_sequence(seed: int | np.random.SeedSequence) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def chain_generators(seed: int | np.random.SeedSequence, n_chains: int) -> list[np.random.Generator]:
    return [np.random.default_rng(child) for child in seed_sequence(seed).spawn(n_chains)]


def run_chains(
    log_prob: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    basis: SectorBasis,
    config: SamplerConfig,
    seed: int | np.random.SeedSequence | None = None,
) -> tuple[np.ndarray, float]:
    """All chains of ``config``; samples merged round-robin by chain index."""
    table = log_prob if isinstance(log_prob, np.ndarray) else tabulate(log_prob, basis)
    gens = chain_generators(config.seed if seed is None else seed, config.n_chains)
    per_chain, rates = [], []
    for g in gens:
        s, a = metropolis_chain(
            table, basis, config.samples_per_chain, config.sweeps, config.burn_in, g
        )
        per_chain.append(s)
        rates.append(a)
    merged = np.stack(per_chain, axis=1).ravel()
    return merged, float(np.mean(rates))


# ensemble batches -----------------------------------------------------------


def _table_over(log_re2: np.ndarray, basis: SectorBasis) -> np.ndarray:
    table = np.full(1 << basis.n_sites, -np.inf)
    table[basis.configs] = log_re2
    return table


def sample_per_head(
    log_amps: np.ndarray,
    basis: SectorBasis,
    config: SamplerConfig,
    seed: int | np.random.SeedSequence | None = None,
    heads: list[int] | None = None,
) -> SampleBatch:
    """Independent chains per head targeting |psi_k|^2.

    ``log_amps`` is the (K, D) table of head log-amplitudes over ``basis``.
    Each head gets ``config.n_samples`` samples with uniform weights.
    """
    n_heads = log_amps.shape[0]
    heads = list(range(n_heads)) if heads is None else heads
    head_seeds = seed_sequence(config.seed if seed is None else seed).spawn(n_heads)
    configs, rates = [], []
    for k in heads:
        table = _table_over(2.0 * log_amps[k].real, basis)
        s, a = run_chains(table, basis, config, head_seeds[k])
        configs.append(s)
        rates.append(a)
    s_head = config.n_samples
    weights = np.zeros((len(heads), s_head * len(heads)))
    for row in range(len(heads)):
        weights[row, row * s_head : (row + 1) * s_head] = 1.0 / s_head
    batch = SampleBatch(
        np.concatenate(configs),
        weights,
        np.full(len(heads), float(s_head)),
        acceptance=float(np.mean(rates)),
    )
    return batch


def log_mixture(log_amps: np.ndarray) -> np.ndarray:
    """log q_mix = log((1/K) sum_m |psi_m|^2) per configuration."""
    return logsumexp(2.0 * log_amps.real, axis=0) - np.log(log_amps.shape[0])


def mixture_weights(log_amps_at_samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """SNIS weights |psi_k|^2 / q_mix normalised per head, and log q_mix."""
    log_q = log_mixture(log_amps_at_samples)
    weights = normalized_weights(2.0 * log_amps_at_samples.real - log_q)
    return weights, log_q


def sample_mixture(
    log_amps: np.ndarray,
    basis: SectorBasis,
    config: SamplerConfig,
    seed: int | np.random.SeedSequence | None = None,
) -> SampleBatch:
    """One set of chains targeting the uniform mixture of all heads."""
    log_q = log_mixture(log_amps)
    configs, rate = run_chains(_table_over(log_q, basis), basis, config, seed)
    idx = basis.lookup[configs]
    weights, log_q_s = mixture_weights(log_amps[:, idx])
    ess_k = 1.0 / np.sum(weights**2, axis=1)
    return SampleBatch(configs, weights, ess_k, log_mix=log_q_s, acceptance=rate)


def full_sum_batch(log_amps: np.ndarray, basis: SectorBasis) -> SampleBatch:
    """Every sector configuration weighted by each head's exact Born probability."""
    weights = normalized_weights(2.0 * log_amps.real)
    ess_k = 1.0 / np.sum(weights**2, axis=1)
    return SampleBatch(basis.configs.copy(), weights, ess_k)


def sample(log_amps: np.ndarray, basis: SectorBasis, config: SamplerConfig, seed=None) -> SampleBatch:
    if config.mode is SamplingMode.PER_HEAD:
        return sample_per_head(log_amps, basis, config, seed)
    return sample_mixture(log_amps, basis, config, seed)


def in_sector(configs: np.ndarray, n_sites: int) -> bool:
    return all(popcount(int(x)) == n_sites // 2 for x in configs)
