"""Monte Carlo estimators, the penalised ensemble cost and its gradient, Adam.

The gradient is assembled from per-sample coefficients ``a[k, i]`` and
``b[k, i]`` such that

    grad C = sum_{k,i} a[k,i] grad Re l_k(x_i) + b[k,i] grad Im l_k(x_i),

so the trunk sees one vector-Jacobian product per trunk regardless of how
many heads read it.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .model import Problem, connected_elements
from .nqs import Ensemble, Heads, Mode, TabularEnsemble, Trunk, trunk_vjp
from .sampler import SampleBatch, SamplerConfig, full_sum_batch, sample

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Estimator(str, Enum):
    MONTE_CARLO = "monte-carlo"
    FULL_SUM = "full-sum"


class PenaltyForm(str, Enum):
    FROBENIUS = "frobenius"
    OFF_DIAGONAL = "off-diagonal"


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, ensemble: Ensemble, trace: "TrainTrace"):
        super().__init__(message)
        self.ensemble = ensemble
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 1000
    lambda_start: float = 1e-3
    lambda_final: float = 0.5
    anneal_steps: int = 200
    head_weights: tuple[float, ...] | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    estimator: Estimator = Estimator.MONTE_CARLO
    penalty: PenaltyForm = PenaltyForm.FROBENIUS
    clamp: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        object.__setattr__(self, "penalty", PenaltyForm(self.penalty))
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0 or self.anneal_steps < 0:
            raise ValueError("steps and anneal_steps must be non-negative")
        if self.lambda_start <= 0:
            raise ValueError("lambda_start must be positive")
        if self.lambda_final < 0:
            raise ValueError("lambda_final must be non-negative")
        if self.head_weights is not None:
            w = np.asarray(self.head_weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"head_weights must lie on the simplex, got {w}")

    def weights_for(self, n_heads: int) -> np.ndarray:
        if self.head_weights is None:
            return np.full(n_heads, 1.0 / n_heads)
        if len(self.head_weights) != n_heads:
            raise ValueError(f"{len(self.head_weights)} head weights for K={n_heads}")
        return np.asarray(self.head_weights, dtype=float)


def lambda_schedule(step: int, cfg: TrainConfig) -> float:
    if cfg.anneal_steps == 0 or step >= cfg.anneal_steps:
        return cfg.lambda_final
    frac = step / cfg.anneal_steps
    return cfg.lambda_start + (cfg.lambda_final - cfg.lambda_start) * frac


# forward pass over the sector -------------------------------------------------


@dataclass
class Forward:
    log_amps: np.ndarray  # (K, D)
    features: list[np.ndarray]
    caches: list


def forward(ens: Ensemble | TabularEnsemble, problem: Problem) -> Forward:
    if isinstance(ens, TabularEnsemble):
        return Forward(ens.log_table(), [ens.features], [])
    feats, caches = ens.features(problem.basis.spins)
    return Forward(ens.log_psi_from_features(feats), feats, caches)


def local_energies(
    log_amps: np.ndarray,
    idx: np.ndarray,
    problem: Problem,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """E_loc^(k)(x_i) for every head and sample; (K, S) complex.

    ``idx`` holds basis indices of the samples. Entries where ``mask`` is
    False are returned as zero without being evaluated.
    """
    table = problem.table
    lx = log_amps[:, idx]
    nb = table.neighbors[idx]
    vals = table.values[idx]
    valid = nb >= 0
    ly = log_amps[:, np.where(valid, nb, 0)]
    if mask is None:
        mask = np.isfinite(lx.real)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        ratio = np.exp(ly - lx[..., None])
    ratio = np.where(valid[None] & mask[..., None], ratio, 0.0)
    e = table.diagonal[idx][None, :] + np.einsum("sm,ksm->ks", vals, ratio)
    return np.where(mask, e, 0.0)


def local_energy(ens: Ensemble | TabularEnsemble, k: int, x: int, problem: Problem) -> complex:
    """Single-configuration local energy, evaluated from connected elements."""
    logs = forward(ens, problem).log_amps[k]
    lx = logs[problem.basis.index(x)]
    total = 0j
    for y, hxy in connected_elements(x, problem.spec):
        total += hxy * np.exp(logs[problem.basis.index(y)] - lx)
    return complex(total)


def estimate_energy(e_loc: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted real energies and the imaginary residuals."""
    return np.sum(weights * e_loc.real, axis=1), np.sum(weights * e_loc.imag, axis=1)


@dataclass
class OverlapEstimate:
    sigma: np.ndarray  # (K, K) complex
    ratios: np.ndarray  # (K, K, S) complex, r_kl(x_i); zero where w_k,i = 0
    clamp_events: int


def estimate_overlaps(
    log_at_samples: np.ndarray, weights: np.ndarray, clamp: float = 50.0
) -> OverlapEstimate:
    """sigma_kl = sum_i w_k,i exp(l_l(x_i) - l_k(x_i)); unit diagonal."""
    n_heads = log_at_samples.shape[0]
    live = weights > 0.0
    with np.errstate(invalid="ignore"):
        diff = log_at_samples[None, :, :] - log_at_samples[:, None, :]
    re = diff.real
    over = live[:, None, :] & np.isfinite(re) & (np.abs(re) > clamp)
    offd = ~np.eye(n_heads, dtype=bool)
    clamp_events = int(np.sum(over & offd[:, :, None]))
    if clamp_events:
        log.debug("clamped %d overlap log-ratios at +-%g", clamp_events, clamp)
    re = np.clip(re, -clamp, clamp)
    with np.errstate(invalid="ignore", under="ignore"):
        ratios = np.exp(re) * np.exp(1j * np.where(np.isfinite(diff.imag), diff.imag, 0.0))
    ratios = np.where(live[:, None, :] & np.isfinite(diff.real), ratios, 0.0)
    ratios[np.arange(n_heads), np.arange(n_heads)] = np.where(live, 1.0, 0.0)
    sigma = np.einsum("ki,kli->kl", weights, ratios)
    sigma[np.diag_indices(n_heads)] = 1.0
    return OverlapEstimate(sigma, ratios, clamp_events)


def penalty(sigma: np.ndarray, form: PenaltyForm | str = PenaltyForm.FROBENIUS) -> float:
    form = PenaltyForm(form)
    dev = sigma - np.eye(sigma.shape[0])
    if form is PenaltyForm.FROBENIUS:
        return float(np.sum(np.abs(dev) ** 2))
    off = ~np.eye(sigma.shape[0], dtype=bool)
    return 0.5 * float(np.sum(np.abs(sigma[off]) ** 2))


def tolerance_band(weights: np.ndarray, ess: np.ndarray, ov: OverlapEstimate) -> float:
    """tau = sqrt(sum_{k != l} s2_kl / ESS_k) with weighted within-sample spreads."""
    n_heads = weights.shape[0]
    spread = np.abs(ov.ratios - ov.sigma[:, :, None]) ** 2
    s2 = np.einsum("ki,kli->kl", weights, spread)
    off = ~np.eye(n_heads, dtype=bool)
    return float(np.sqrt(np.sum((s2 / ess[:, None])[off])))


# gradient ---------------------------------------------------------------------


@dataclass
class StepResult:
    cost: float
    energies: np.ndarray
    energies_imag: np.ndarray
    eloc_variance: np.ndarray
    sigma: np.ndarray
    penalty: float
    frob_dev: float
    tau: float
    ess: np.ndarray
    grad: np.ndarray
    clamp_events: int = 0
    underflow_events: int = 0


def _aggregate(weights: np.ndarray, inv: np.ndarray, n_unique: int) -> np.ndarray:
    return np.stack([np.bincount(inv, weights=row, minlength=n_unique) for row in weights])


def assemble_gradient(
    ens: Ensemble | TabularEnsemble,
    batch: SampleBatch,
    problem: Problem,
    lam: float,
    head_weights: np.ndarray,
    form: PenaltyForm | str = PenaltyForm.FROBENIUS,
    clamp: float = 50.0,
    fwd: Forward | None = None,
) -> StepResult:
    """Estimators, cost and flat gradient for one batch.

    Local energies and overlap ratios depend only on the configuration, so
    they are evaluated once per distinct sampled configuration against
    weights summed over repeats. The per-sample coefficients then drive one
    trunk forward and reverse pass over the batch. For a
    :class:`TabularEnsemble` only head parameters are differentiated.
    """
    form = PenaltyForm(form)
    mu = 1.0 if form is PenaltyForm.FROBENIUS else 0.5
    fwd = forward(ens, problem) if fwd is None else fwd
    idx = problem.basis.lookup[batch.configs]
    omega = batch.weights
    n_heads = fwd.log_amps.shape[0]
    uniq, inv = np.unique(idx, return_inverse=True)
    agg = _aggregate(omega, inv, len(uniq))
    live = agg > 0.0
    underflow = int(np.sum(omega == 0.0)) if batch.log_mix is not None else 0
    if underflow:
        log.debug("%d head/sample pairs carry zero weight", underflow)

    e_loc = local_energies(fwd.log_amps, uniq, problem, live)
    e_re, e_im = estimate_energy(e_loc, agg)
    centred = e_loc - (e_re + 1j * e_im)[:, None]
    variance = np.sum(agg * np.abs(centred) ** 2, axis=1)

    ov = estimate_overlaps(fwd.log_amps[:, uniq], agg, clamp)
    sig = ov.sigma
    pen = penalty(sig, form)
    off = ~np.eye(n_heads, dtype=bool)
    tau = tolerance_band(agg, batch.ess, ov)

    a = 2.0 * head_weights[:, None] * omega * centred.real[:, inv]
    b = 2.0 * head_weights[:, None] * omega * centred.imag[:, inv]
    if lam != 0.0 and n_heads > 1:
        w_ = np.conj(sig)[:, :, None] * ov.ratios * off[:, :, None]
        c = lam * mu
        a += 2.0 * c * np.einsum("ki,kli->li", omega, w_.real[:, :, inv])
        b -= 2.0 * c * np.einsum("ki,kli->li", omega, w_.imag[:, :, inv])
        sq = np.sum(np.abs(sig) ** 2 * off, axis=1)
        a += c * omega * (2.0 * w_.real.sum(axis=1)[:, inv] - 4.0 * sq[:, None])
        b += 2.0 * c * omega * w_.imag.sum(axis=1)[:, inv]

    grad = _flat_gradient(ens, problem, idx, a, b)
    cost = float(np.dot(head_weights, e_re) + lam * pen)
    return StepResult(
        cost=cost,
        energies=e_re,
        energies_imag=e_im,
        eloc_variance=variance,
        sigma=sig,
        penalty=pen,
        frob_dev=float(np.linalg.norm(sig - np.eye(n_heads))),
        tau=tau,
        ess=batch.ess.copy(),
        grad=grad,
        clamp_events=ov.clamp_events,
        underflow_events=underflow,
    )


def _flat_gradient(ens, problem: Problem, idx: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Chain per-sample coefficients through heads and trunks."""
    heads = ens.heads
    g_heads = Heads.zeros(heads.count, heads.alpha.shape[1])
    if isinstance(ens, TabularEnsemble):
        free = ~ens.pinned[idx]
        a, b = a * free, b * free
        f = ens.features[idx]
        g_heads.alpha[:] = a @ f
        g_heads.phi[:] = b @ f
        g_heads.beta[:] = a.sum(axis=1)
        g_heads.gamma[:] = b.sum(axis=1)
        parts = []
        for k in range(heads.count):
            parts += [g_heads.alpha[k], g_heads.phi[k], g_heads.beta[k : k + 1], g_heads.gamma[k : k + 1]]
        return np.concatenate(parts)
    sigma = problem.basis.spins[idx]
    feats, caches = ens.features(sigma)
    g_trunks = []
    for t, trunk in enumerate(ens.trunks):
        hs = ens.heads_of(t)
        f = feats[t]
        ga, gb = a[hs], b[hs]
        g_heads.alpha[hs] = ga @ f
        g_heads.phi[hs] = gb @ f
        g_heads.beta[hs] = ga.sum(axis=1)
        g_heads.gamma[hs] = gb.sum(axis=1)
        u = ga.T @ heads.alpha[hs] + gb.T @ heads.phi[hs]
        g_trunks.append(trunk_vjp(trunk, sigma, caches[t], u))
    return Ensemble(ens.mode, g_trunks, g_heads).flatten()


def exact_cost(
    ens: Ensemble | TabularEnsemble,
    problem: Problem,
    lam: float,
    head_weights: np.ndarray,
    form: PenaltyForm | str = PenaltyForm.FROBENIUS,
) -> float:
    """Penalised cost with Born-weighted full sums over the sector."""
    fwd = forward(ens, problem)
    batch = full_sum_batch(fwd.log_amps, problem.basis)
    idx = problem.basis.lookup[batch.configs]
    e_loc = local_energies(fwd.log_amps, idx, problem, batch.weights > 0)
    e_re, _ = estimate_energy(e_loc, batch.weights)
    ov = estimate_overlaps(fwd.log_amps[:, idx], batch.weights)
    return float(np.dot(head_weights, e_re) + lam * penalty(ov.sigma, form))


# optimiser --------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


def adam_update(
    state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float
) -> tuple[AdamState, np.ndarray]:
    if not (state.m.shape == params.shape == grad.shape):
        raise ValueError("optimizer state, parameters and gradient shapes differ")
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grad * grad
    m_hat = m / (1 - ADAM_BETA1**t)
    v_hat = v / (1 - ADAM_BETA2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return AdamState(m, v, t), new


# training loop ----------------------------------------------------------------


@dataclass
class TraceRecord:
    step: int
    energies: np.ndarray
    frob_dev: float
    lam: float
    ess: np.ndarray
    seconds: float
    tau: float = 0.0
    energies_imag: np.ndarray | None = None
    cost: float = 0.0

    @property
    def band_exceeded(self) -> bool:
        return self.frob_dev > 2.0 * self.tau


@dataclass
class TrainTrace:
    n_heads: int
    records: list[TraceRecord] = field(default_factory=list)
    clamp_events: int = 0
    underflow_events: int = 0
    low_ess_steps: int = 0

    def columns(self) -> list[str]:
        k = range(1, self.n_heads + 1)
        return (
            ["step"]
            + [f"E_{i}" for i in k]
            + ["frob_dev", "lambda"]
            + [f"ess_{i}" for i in k]
            + ["seconds"]
        )

    def rows(self, with_time: bool = True) -> list[list]:
        out = []
        for r in self.records:
            out.append(
                [r.step]
                + [repr(float(e)) for e in r.energies]
                + [repr(r.frob_dev), repr(r.lam)]
                + [repr(float(e)) for e in r.ess]
                + [repr(r.seconds) if with_time else ""]
            )
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            writer.writerows(self.rows())

    @property
    def flagged_steps(self) -> list[int]:
        return [r.step for r in self.records if r.band_exceeded]

    def final_energies(self) -> np.ndarray:
        return self.records[-1].energies if self.records else np.array([])


@dataclass
class TrainResult:
    ensemble: Ensemble
    trace: TrainTrace


def step_seed(base: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(base, spawn_key=(step,))


def train_step(
    ens: Ensemble,
    problem: Problem,
    cfg: TrainConfig,
    step: int,
    head_weights: np.ndarray,
) -> StepResult:
    lam = lambda_schedule(step, cfg)
    fwd = forward(ens, problem)
    if cfg.estimator is Estimator.FULL_SUM:
        batch = full_sum_batch(fwd.log_amps, problem.basis)
    else:
        batch = sample(fwd.log_amps, problem.basis, cfg.sampler, step_seed(cfg.sampler.seed, step))
    return assemble_gradient(ens, batch, problem, lam, head_weights, cfg.penalty, cfg.clamp, fwd)


def train(
    problem: Problem,
    ens: Ensemble,
    cfg: TrainConfig,
    on_step=None,
) -> TrainResult:
    """Adam on the penalised ensemble cost for ``cfg.steps`` steps.

    Raises :class:`TrainingAborted` (carrying the last finite parameters and
    the partial trace) when the cost or gradient becomes non-finite.
    """
    weights = cfg.weights_for(ens.n_heads)
    params = ens.flatten()
    state = AdamState.fresh(params.size)
    trace = TrainTrace(ens.n_heads)
    current = ens.copy()
    for step in range(cfg.steps):
        start = time.perf_counter()
        res = train_step(current, problem, cfg, step, weights)
        if not (np.isfinite(res.cost) and np.all(np.isfinite(res.grad))):
            raise TrainingAborted(f"non-finite cost or gradient at step {step}", current, trace)
        state, params = adam_update(state, params, res.grad, cfg.learning_rate)
        current = current.unflatten(params)
        elapsed = time.perf_counter() - start
        trace.clamp_events += res.clamp_events
        trace.underflow_events += res.underflow_events
        if np.any(res.ess < 2.0):
            trace.low_ess_steps += 1
        rec = TraceRecord(
            step=step,
            energies=res.energies,
            frob_dev=res.frob_dev,
            lam=lambda_schedule(step, cfg),
            ess=res.ess,
            seconds=elapsed,
            tau=res.tau,
            energies_imag=res.energies_imag,
            cost=res.cost,
        )
        trace.records.append(rec)
        if on_step is not None:
            on_step(rec)
    return TrainResult(current, trace)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, sampler=replace(cfg.sampler, seed=seed))
