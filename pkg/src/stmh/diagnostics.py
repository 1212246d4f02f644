"""Exact post-training evaluation and representability analysis.

Everything here works on fully enumerated state vectors over the sector,
so it is exact up to floating point and only practical for small rings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EDResult, Problem, SectorBasis, exact_diagonalize
from .nqs import Ensemble, Heads, TabularEnsemble
from .sampler import SampleBatch
from .trainer import estimate_overlaps, forward
from .trainer import tolerance_band as _band_from_ratios

SUPPORT_TOL = 1e-10
RANK_TOL = 1e-8
D_EFF_THRESHOLD = 0.99
NULL_PROJECTION = 1e-12


class RepresentabilityError(ValueError):
    pass


class DiagnosticsError(ValueError):
    pass


def numerical_rank(mat: np.ndarray, rel_tol: float = RANK_TOL) -> int:
    """Singular values below ``rel_tol * sigma_max`` count as zero."""
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def normalize_log_amplitudes(log_amps: np.ndarray) -> np.ndarray:
    """Rows of exp(log_amps) with max-log subtraction, L2-normalised."""
    log_amps = np.atleast_2d(log_amps)
    shift = np.max(log_amps.real, axis=1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise DiagnosticsError("a head has no non-vanishing amplitude")
    with np.errstate(under="ignore"):
        psi = np.exp(log_amps - shift)
    norms = np.linalg.norm(psi, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DiagnosticsError("all amplitudes of a head underflow")
    return psi / norms


def enumerate_states(ens: Ensemble | TabularEnsemble, problem: Problem) -> np.ndarray:
    """(K, D) normalised head states over the sector."""
    return normalize_log_amplitudes(forward(ens, problem).log_amps)


def enumerate_state(ens: Ensemble | TabularEnsemble, k: int, problem: Problem) -> np.ndarray:
    return enumerate_states(ens, problem)[k]


def align_global_phase(vec: np.ndarray, anchor: int | None = None) -> np.ndarray:
    """Rotate so the amplitude at ``anchor`` is real and positive.

    The anchor defaults to the largest-modulus entry. When comparing two
    states pass the same anchor to both, since ties in modulus are common.
    """
    vec = np.asarray(vec, dtype=np.complex128)
    j = int(np.argmax(np.abs(vec))) if anchor is None else anchor
    if vec[j] == 0:
        return vec.copy()
    return vec * (np.abs(vec[j]) / vec[j])


def phase_aligned_error(state: np.ndarray, reference: np.ndarray) -> float:
    """Max-norm difference after anchoring both at the reference's largest entry."""
    j = int(np.argmax(np.abs(reference)))
    return float(np.max(np.abs(align_global_phase(state, j) - align_global_phase(reference, j))))


def energy_and_variance(state: np.ndarray, h: np.ndarray) -> tuple[float, float]:
    hpsi = h @ state
    energy = float(np.vdot(state, hpsi).real)
    second = float(np.vdot(hpsi, hpsi).real)
    return energy, second - energy**2


def exact_overlap_matrix(states: np.ndarray) -> tuple[np.ndarray, float]:
    """sigma_kl = <psi_k|psi_l> for rows of ``states`` and ||sigma - 1||_F."""
    sigma = states.conj() @ states.T
    return sigma, float(np.linalg.norm(sigma - np.eye(len(states))))


@dataclass
class ProjectionMetrics:
    fidelities: np.ndarray
    singular_values: np.ndarray
    rank: int
    g: int
    sigma_min: float
    kappa: float
    d_eff: int


def projection_metrics(
    v0: np.ndarray, psi: np.ndarray, rank_tol: float = RANK_TOL
) -> ProjectionMetrics:
    """Fidelities and SVD readouts of C = V0^dagger Psi.

    Args:
        v0: (D, g) orthonormal ground vectors as columns.
        psi: (K, D) normalised head states as rows.
        rank_tol: relative singular-value cutoff for rank(C).
    """
    if v0.ndim != 2 or v0.shape[1] == 0:
        raise DiagnosticsError("ground space is empty")
    c = v0.conj().T @ psi.T
    fid = np.sum(np.abs(c) ** 2, axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    smax = s[0] if s.size else 0.0
    # C has unit-bounded entries, so a projection at round-off level is zero
    rank = 0 if smax <= NULL_PROJECTION else int(np.sum(s > rank_tol * smax))
    n_sv = min(c.shape)
    sigma_min = float(s[n_sv - 1]) if n_sv else 0.0
    kappa = float(smax / sigma_min) if sigma_min > 0 else float("inf")
    d_eff = int(np.sum(s >= D_EFF_THRESHOLD))
    return ProjectionMetrics(fid, s, rank, v0.shape[1], sigma_min, kappa, d_eff)


@dataclass
class GroundSpaceReport:
    e0: float
    energies: np.ndarray
    variances: np.ndarray
    fidelities: np.ndarray
    overlap: np.ndarray
    frob_dev: float
    singular_values: np.ndarray
    rank: int
    g: int
    sigma_min: float
    kappa: float
    d_eff: int

    @property
    def e_bar(self) -> float:
        return float(np.mean(self.energies))

    @property
    def max_var(self) -> float:
        return float(np.max(self.variances))

    @property
    def f_mean(self) -> float:
        return float(np.mean(self.fidelities))

    @property
    def f_std(self) -> float:
        return float(np.std(self.fidelities))

    @property
    def f_min(self) -> float:
        return float(np.min(self.fidelities))

    def to_json(self) -> dict:
        return {
            "E0": self.e0,
            "Ebar": self.e_bar,
            "maxVar": self.max_var,
            "F_mean": self.f_mean,
            "F_std": self.f_std,
            "F_min": self.f_min,
            "rank": self.rank,
            "g": self.g,
            "sigma_min": self.sigma_min,
            "kappa": self.kappa,
            "frob_dev": self.frob_dev,
            "d_eff": self.d_eff,
            "fidelities": self.fidelities.tolist(),
            "energies": self.energies.tolist(),
            "variances": self.variances.tolist(),
            "singular_values": self.singular_values.tolist(),
        }


def ground_space_report(
    ens: Ensemble | TabularEnsemble, problem: Problem, ed: EDResult | None = None
) -> GroundSpaceReport:
    ed = exact_diagonalize(problem.hamiltonian) if ed is None else ed
    states = enumerate_states(ens, problem)
    ev = [energy_and_variance(s, problem.hamiltonian) for s in states]
    overlap, frob = exact_overlap_matrix(states)
    pm = projection_metrics(ed.ground_vectors, states)
    return GroundSpaceReport(
        e0=ed.ground_energy,
        energies=np.array([e for e, _ in ev]),
        variances=np.array([v for _, v in ev]),
        fidelities=pm.fidelities,
        overlap=overlap,
        frob_dev=frob,
        singular_values=pm.singular_values,
        rank=pm.rank,
        g=pm.g,
        sigma_min=pm.sigma_min,
        kappa=pm.kappa,
        d_eff=pm.d_eff,
    )


# representability --------------------------------------------------------------


@dataclass
class RankReport:
    support: np.ndarray  # basis indices of the common support
    r_g: int
    r_omega: int
    r_both: int
    rank_tol: float = RANK_TOL
    support_tol: float = SUPPORT_TOL
    configs: np.ndarray | None = field(default=None, repr=False)

    @property
    def h_star(self) -> int:
        return self.r_both - 1

    @property
    def support_size(self) -> int:
        return len(self.support)

    def to_json(self) -> dict:
        out = {
            "r_G": self.r_g,
            "r_Omega": self.r_omega,
            "r_both": self.r_both,
            "h_star": self.h_star,
            "support_size": self.support_size,
            "rank_tol": self.rank_tol,
            "support_tol": self.support_tol,
        }
        if self.configs is not None:
            out["support_configs"] = [int(x) for x in self.configs]
        return out


def common_support(targets: np.ndarray, support_tol: float = SUPPORT_TOL) -> np.ndarray:
    mod = np.abs(np.atleast_2d(targets))
    keep = np.all(mod > support_tol * mod.max(axis=1, keepdims=True), axis=0)
    return np.flatnonzero(keep)


def log_modulus_and_phase(targets: np.ndarray, support: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(|S|, D) log-moduli and principal-branch phases in (-pi, pi]."""
    vals = np.atleast_2d(targets)[:, support].T
    phase = np.angle(vals)
    phase = np.where(phase <= -np.pi, phase + 2 * np.pi, phase)
    return np.log(np.abs(vals)), phase


def rank_analysis(
    targets: np.ndarray,
    basis: SectorBasis | None = None,
    rank_tol: float = RANK_TOL,
    support_tol: float = SUPPORT_TOL,
) -> RankReport:
    """Linear modulus, phase and joint ranks of target states on their common support.

    Args:
        targets: (D, dim) complex amplitude vectors, one target per row.
        basis: optional basis, only used to report support configurations.
        rank_tol: relative singular-value cutoff.
        support_tol: amplitudes below this fraction of a row's maximum count as zero.
    """
    targets = np.atleast_2d(targets)
    support = common_support(targets, support_tol)
    if support.size == 0:
        raise RepresentabilityError("target states share no common support")
    g, om = log_modulus_and_phase(targets, support)
    ones = np.ones((support.size, 1))
    r_g = numerical_rank(np.hstack([ones, g]), rank_tol)
    r_o = numerical_rank(np.hstack([ones, om]), rank_tol)
    r_b = numerical_rank(np.hstack([ones, g, om]), rank_tol)
    configs = basis.configs[support] if basis is not None else None
    return RankReport(support, r_g, r_o, r_b, rank_tol, support_tol, configs)


def construct_representing_ensemble(
    targets: np.ndarray,
    width: int,
    rank_tol: float = RANK_TOL,
    support_tol: float = SUPPORT_TOL,
) -> TabularEnsemble:
    """Tabular single-trunk ensemble reproducing every target on its common support.

    The trunk features on the support are an orthonormal basis of the joint
    span of log-moduli and phases with the constant direction removed; the
    constant is carried by the head offsets. Unused feature columns are zero.
    Configurations off the support are pinned to the target values.

    Raises:
        RepresentabilityError: if ``width`` is below the minimal width r_both - 1.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.complex128))
    report = rank_analysis(targets, None, rank_tol, support_tol)
    if width < report.h_star:
        raise RepresentabilityError(
            f"width {width} cannot represent these targets: r_both = {report.r_both} "
            f"needs width >= {report.h_star}"
        )
    n_targets, dim = targets.shape
    support = report.support
    g, om = log_modulus_and_phase(targets, support)
    cols = np.hstack([g, om])
    centred = cols - cols.mean(axis=0, keepdims=True)
    u, s, _ = np.linalg.svd(centred, full_matrices=False)
    keep = report.h_star
    feats_s = u[:, :keep]

    features = np.zeros((dim, width))
    features[support, :keep] = feats_s
    design = np.hstack([feats_s, np.ones((support.size, 1))])
    coef_g, *_ = np.linalg.lstsq(design, g, rcond=None)
    coef_o, *_ = np.linalg.lstsq(design, om, rcond=None)

    heads = Heads.zeros(n_targets, width)
    heads.alpha[:, :keep] = coef_g[:keep].T
    heads.beta[:] = coef_g[keep]
    heads.phi[:, :keep] = coef_o[:keep].T
    heads.gamma[:] = coef_o[keep]

    pinned = np.ones(dim, dtype=bool)
    pinned[support] = False
    with np.errstate(divide="ignore"):
        values = np.where(pinned[None, :], np.log(np.where(pinned[None, :], targets, 1.0)), 0.0)
    return TabularEnsemble(features, heads, pinned, values)


@dataclass
class AffineRankResult:
    rank: int
    bound: int

    @property
    def holds(self) -> bool:
        return self.rank <= self.bound


def affine_rank_bound_check(
    ens: Ensemble | TabularEnsemble,
    problem: Problem,
    support: np.ndarray | None = None,
    rank_tol: float = RANK_TOL,
) -> AffineRankResult:
    """Rank of realised log-modulus and phase differences against head 0.

    For a single trunk of width h every difference lies in the span of the
    h feature columns and the constant, so the rank is at most h + 1.
    """
    if ens.n_heads < 2:
        raise ValueError("need at least two heads")
    if isinstance(ens, Ensemble) and len(ens.trunks) != 1:
        raise ValueError("the bound concerns a single shared trunk")
    logs = forward(ens, problem).log_amps
    if support is not None:
        logs = logs[:, support]
    diff = (logs[1:] - logs[0]).T
    stacked = np.hstack([diff.real, diff.imag])
    return AffineRankResult(numerical_rank(stacked, rank_tol), ens.width + 1)


def tolerance_band(batch: SampleBatch, log_at_samples: np.ndarray, clamp: float = 50.0) -> float:
    """ESS-scaled spread of the overlap ratios around their estimate.

    Args:
        batch: weights and ESS of the current batch.
        log_at_samples: (K, S) head log-amplitudes at the batch samples.
    """
    ov = estimate_overlaps(log_at_samples, batch.weights, clamp)
    return _band_from_ratios(batch.weights, batch.ess, ov)
