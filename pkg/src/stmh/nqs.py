"""Shared-trunk multi-head neural quantum states.

Head ``k`` produces the complex log-amplitude

    l_k(x) = (alpha_k + i phi_k) . f(x) + (beta_k + i gamma_k)

where ``f`` is a two-layer ReLU MLP trunk of width ``h``. In ST-MH mode all
heads read one trunk; in MT-MH mode head ``k`` owns trunk ``k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np


class Mode(str, Enum):
    ST_MH = "ST-MH"
    MT_MH = "MT-MH"


@dataclass
class Trunk:
    w1: np.ndarray  # (h, N)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, h)
    b2: np.ndarray  # (h,)

    @property
    def width(self) -> int:
        return self.b1.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    @classmethod
    def zeros(cls, n_inputs: int, width: int) -> "Trunk":
        return cls(
            np.zeros((width, n_inputs)),
            np.zeros(width),
            np.zeros((width, width)),
            np.zeros(width),
        )


@dataclass
class Heads:
    """Stacked linear read-outs; row ``k`` belongs to head ``k``."""

    alpha: np.ndarray  # (K, h)
    phi: np.ndarray  # (K, h)
    beta: np.ndarray  # (K,)
    gamma: np.ndarray  # (K,)

    @property
    def count(self) -> int:
        return self.beta.shape[0]

    @property
    def chi(self) -> np.ndarray:
        return self.alpha + 1j * self.phi

    @property
    def offset(self) -> np.ndarray:
        return self.beta + 1j * self.gamma

    @classmethod
    def zeros(cls, count: int, width: int) -> "Heads":
        return cls(
            np.zeros((count, width)),
            np.zeros((count, width)),
            np.zeros(count),
            np.zeros(count),
        )


@dataclass
class TrunkCache:
    pre1: np.ndarray
    act1: np.ndarray
    features: np.ndarray


def trunk_forward(trunk: Trunk, sigma: np.ndarray) -> tuple[np.ndarray, TrunkCache]:
    """Features ``W2 relu(W1 sigma + b1) + b2`` for a batch of +-1 rows.

    Accepts a single configuration of shape (N,) or a batch (M, N).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    single = sigma.ndim == 1
    if single:
        sigma = sigma[None, :]
    pre1 = sigma @ trunk.w1.T + trunk.b1
    act1 = np.maximum(pre1, 0.0)
    features = act1 @ trunk.w2.T + trunk.b2
    cache = TrunkCache(pre1, act1, features)
    if single:
        return features[0], cache
    return features, cache


def trunk_vjp(trunk: Trunk, sigma: np.ndarray, cache: TrunkCache, u: np.ndarray) -> Trunk:
    """Gradient of ``sum_m u[m] . f(sigma[m])`` with respect to the trunk.

    The ReLU subgradient at exactly zero is taken as zero.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    g_w2 = u.T @ cache.act1
    g_b2 = u.sum(axis=0)
    g_pre1 = (u @ trunk.w2) * (cache.pre1 > 0.0)
    g_w1 = g_pre1.T @ sigma
    g_b1 = g_pre1.sum(axis=0)
    return Trunk(g_w1, g_b1, g_w2, g_b2)


@dataclass
class Ensemble:
    """ST-MH (one trunk) or MT-MH (one trunk per head) ensemble."""

    mode: Mode
    trunks: list[Trunk]
    heads: Heads

    def __post_init__(self):
        self.mode = Mode(self.mode)
        expected = 1 if self.mode is Mode.ST_MH else self.heads.count
        if len(self.trunks) != expected:
            raise ValueError(
                f"{self.mode.value} with K={self.heads.count} needs {expected} "
                f"trunk(s), got {len(self.trunks)}"
            )

    @property
    def n_heads(self) -> int:
        return self.heads.count

    @property
    def width(self) -> int:
        return self.heads.alpha.shape[1]

    @property
    def n_sites(self) -> int:
        return self.trunks[0].n_inputs

    def trunk_of(self, k: int) -> int:
        return 0 if self.mode is Mode.ST_MH else k

    def heads_of(self, t: int) -> list[int]:
        if self.mode is Mode.ST_MH:
            return list(range(self.n_heads))
        return [t]

    def features(self, sigma: np.ndarray) -> tuple[list[np.ndarray], list[TrunkCache]]:
        feats, caches = [], []
        for trunk in self.trunks:
            f, c = trunk_forward(trunk, np.atleast_2d(sigma))
            feats.append(f)
            caches.append(c)
        return feats, caches

    def log_psi_from_features(self, feats: list[np.ndarray]) -> np.ndarray:
        """(K, M) complex log-amplitudes given per-trunk features."""
        chi, off = self.heads.chi, self.heads.offset
        if self.mode is Mode.ST_MH:
            return chi @ feats[0].T + off[:, None]
        return np.concatenate(
            [chi[k : k + 1] @ feats[k].T + off[k : k + 1, None] for k in range(self.n_heads)]
        )

    def log_psi_all(self, sigma: np.ndarray) -> np.ndarray:
        feats, _ = self.features(sigma)
        return self.log_psi_from_features(feats)

    def log_table(self, basis) -> np.ndarray:
        """(K, D) log-amplitudes over every configuration of ``basis``."""
        return self.log_psi_all(basis.spins)

    # flat parameter vector -------------------------------------------------

    def flatten(self) -> np.ndarray:
        parts = [a.ravel() for t in self.trunks for a in t.arrays()]
        h = self.heads
        for k in range(self.n_heads):
            parts += [h.alpha[k], h.phi[k], h.beta[k : k + 1], h.gamma[k : k + 1]]
        return np.concatenate(parts)

    def unflatten(self, flat: np.ndarray) -> "Ensemble":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        n, w, k_heads = self.n_sites, self.width, self.n_heads
        pos = 0

        def take(*shape):
            nonlocal pos
            size = int(np.prod(shape))
            out = flat[pos : pos + size].reshape(shape).copy()
            pos += size
            return out

        trunks = [Trunk(take(w, n), take(w), take(w, w), take(w)) for _ in self.trunks]
        heads = Heads.zeros(k_heads, w)
        for k in range(k_heads):
            heads.alpha[k] = take(w)
            heads.phi[k] = take(w)
            heads.beta[k] = take(1)[0]
            heads.gamma[k] = take(1)[0]
        return Ensemble(self.mode, trunks, heads)

    @property
    def n_params(self) -> int:
        return exact_param_count(self.n_sites, self.width, self.n_heads, self.mode).exact

    def copy(self) -> "Ensemble":
        return self.unflatten(self.flatten())


def log_psi(ens: Ensemble, k: int, sigma: np.ndarray) -> complex:
    """Complex log-amplitude of head ``k`` (0-based) at one configuration."""
    f, _ = trunk_forward(ens.trunks[ens.trunk_of(k)], sigma)
    return complex(ens.heads.chi[k] @ f + ens.heads.offset[k])


def head_log_derivatives(ens: Ensemble, k: int, sigma: np.ndarray) -> np.ndarray:
    """d l_k / d(alpha_k, phi_k, beta_k, gamma_k), length 2h + 2."""
    f, _ = trunk_forward(ens.trunks[ens.trunk_of(k)], sigma)
    return np.concatenate([f, 1j * f, [1.0], [1j]]).astype(np.complex128)


@dataclass(frozen=True)
class ParamCount:
    exact: int
    theory: int


def exact_param_count(n_sites: int, width: int, n_heads: int, mode: Mode | str) -> ParamCount:
    """Exact count including all biases, plus the proportional theory value.

    The theory value is (N+1)h + h^2 + 2Kh for ST-MH and
    K((N+1)h + h^2 + 2h) for MT-MH.
    """
    mode = Mode(mode)
    n, h, k = n_sites, width, n_heads
    trunk = (n * h + h) + (h * h + h)
    head = 2 * h + 2
    if mode is Mode.ST_MH:
        return ParamCount(trunk + k * head, (n + 1) * h + h * h + 2 * k * h)
    return ParamCount(k * (trunk + head), k * ((n + 1) * h + h * h + 2 * h))


def init_ensemble(
    n_sites: int,
    width: int,
    n_heads: int,
    mode: Mode | str,
    rng: np.random.Generator,
    head_scale: float = 0.01,
) -> Ensemble:
    """Random ensemble: trunk weights N(0, 1/fan_in), zero biases, small heads.

    All trunks are drawn before any head so that K=1 gives the same draws
    in both modes.
    """
    mode = Mode(mode)
    n_trunks = 1 if mode is Mode.ST_MH else n_heads
    trunks = []
    for _ in range(n_trunks):
        w1 = rng.normal(0.0, 1.0 / np.sqrt(n_sites), size=(width, n_sites))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, width))
        trunks.append(Trunk(w1, np.zeros(width), w2, np.zeros(width)))
    heads = Heads(
        rng.normal(0.0, head_scale, size=(n_heads, width)),
        rng.normal(0.0, head_scale, size=(n_heads, width)),
        np.zeros(n_heads),
        np.zeros(n_heads),
    )
    return Ensemble(mode, trunks, heads)


@dataclass
class TabularEnsemble:
    """ST-MH ensemble whose trunk is a lookup table over the sector.

    ``features[i]`` is the feature vector of basis configuration ``i``.
    Where ``pinned[i]`` is set the log-amplitudes are taken from
    ``pinned_values[:, i]`` instead of the heads; this carries target
    values (including exact zeros, stored as -inf log-modulus) at
    configurations outside the common support.
    """

    features: np.ndarray  # (D, h)
    heads: Heads
    pinned: np.ndarray  # (D,) bool
    pinned_values: np.ndarray  # (K, D) complex log-amplitudes

    mode = Mode.ST_MH

    @property
    def n_heads(self) -> int:
        return self.heads.count

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def log_table(self, basis=None) -> np.ndarray:
        out = self.heads.chi @ self.features.T + self.heads.offset[:, None]
        out[:, self.pinned] = self.pinned_values[:, self.pinned]
        return out


TABULAR_KIND = "stmh-tabular"


def tabular_dict(ens: TabularEnsemble) -> dict:
    amp = np.exp(ens.pinned_values)
    return {
        "kind": TABULAR_KIND,
        "n_heads": ens.n_heads,
        "width": ens.width,
        "features": ens.features.tolist(),
        "alpha": ens.heads.alpha.tolist(),
        "phi": ens.heads.phi.tolist(),
        "beta": ens.heads.beta.tolist(),
        "gamma": ens.heads.gamma.tolist(),
        "pinned": ens.pinned.tolist(),
        "pinned_re": np.where(ens.pinned, amp.real, 0.0).tolist(),
        "pinned_im": np.where(ens.pinned, amp.imag, 0.0).tolist(),
    }


def tabular_from_dict(data: dict) -> TabularEnsemble:
    k, w = int(data["n_heads"]), int(data["width"])
    heads = Heads(
        np.array(data["alpha"], dtype=float).reshape(k, w),
        np.array(data["phi"], dtype=float).reshape(k, w),
        np.array(data["beta"], dtype=float),
        np.array(data["gamma"], dtype=float),
    )
    features = np.array(data["features"], dtype=float).reshape(-1, w)
    pinned = np.array(data["pinned"], dtype=bool)
    amp = np.array(data["pinned_re"]) + 1j * np.array(data["pinned_im"])
    with np.errstate(divide="ignore"):
        values = np.where(pinned, np.log(np.where(pinned, amp, 1.0)), 0.0)
    return TabularEnsemble(features, heads, pinned, values)


# checkpoints --------------------------------------------------------------

CHECKPOINT_KIND = "stmh-ensemble"


def checkpoint_dict(ens: Ensemble) -> dict:
    return {
        "kind": CHECKPOINT_KIND,
        "mode": ens.mode.value,
        "n_sites": ens.n_sites,
        "width": ens.width,
        "n_heads": ens.n_heads,
        "params": ens.flatten().tolist(),
    }


def ensemble_from_dict(data: dict) -> Ensemble:
    if data.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"not an ensemble checkpoint (kind={data.get('kind')!r})")
    mode = Mode(data["mode"])
    n, w, k = int(data["n_sites"]), int(data["width"]), int(data["n_heads"])
    n_trunks = 1 if mode is Mode.ST_MH else k
    template = Ensemble(mode, [Trunk.zeros(n, w) for _ in range(n_trunks)], Heads.zeros(k, w))
    return template.unflatten(np.array(data["params"], dtype=np.float64))


def save_checkpoint(ens: Ensemble, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(ens)))


def load_checkpoint(path: str | Path) -> Ensemble | TabularEnsemble:
    data = json.loads(Path(path).read_text())
    if data.get("kind") == TABULAR_KIND:
        return tabular_from_dict(data)
    return ensemble_from_dict(data)
