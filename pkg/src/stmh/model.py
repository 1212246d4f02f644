"""J1-J2 Heisenberg ring in the S^z_tot = 0 sector.

Configurations are stored as integer bitmasks: bit ``j`` set means site ``j``
carries spin up (sigma_j = +1). Sites are indexed modulo ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

MAX_SITES = 16


class ConfigurationError(ValueError):
    """Raised for invalid model dimensions or configurations."""


def check_sites(n_sites: int) -> None:
    if n_sites % 2 or not 4 <= n_sites <= MAX_SITES:
        raise ConfigurationError(
            f"N must be even with 4 <= N <= {MAX_SITES}, got {n_sites}"
        )


def popcount(x: int) -> int:
    return bin(x).count("1")


def bits_to_string(x: int, n_sites: int) -> str:
    """Arrow string with site 0 first, e.g. ``5, 4 -> '↑↓↑↓'``."""
    return "".join("↑" if (x >> j) & 1 else "↓" for j in range(n_sites))


def string_to_bits(s: str) -> int:
    x = 0
    for j, ch in enumerate(s):
        if ch in "↑u1+":
            x |= 1 << j
        elif ch not in "↓d0-":
            raise ConfigurationError(f"bad spin symbol {ch!r}")
    return x


def spins(configs: np.ndarray, n_sites: int) -> np.ndarray:
    """Map bitmasks of shape (M,) to a (M, N) array of +-1.0."""
    configs = np.asarray(configs, dtype=np.int64)
    bits = (configs[:, None] >> np.arange(n_sites)) & 1
    return (2 * bits - 1).astype(np.float64)


def translate(x: int, n_sites: int) -> int:
    """Shift every spin one site forward: the spin on site j moves to j+1."""
    mask = (1 << n_sites) - 1
    return ((x << 1) | (x >> (n_sites - 1))) & mask


def neel_configs(n_sites: int) -> tuple[int, int]:
    """The two Néel strings ↑↓↑↓... and ↓↑↓↑..."""
    up_even = sum(1 << j for j in range(0, n_sites, 2))
    return up_even, up_even << 1


@dataclass(frozen=True)
class SectorBasis:
    """All N-site configurations with N/2 up spins, in ascending order."""

    n_sites: int
    configs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.configs.setflags(write=False)

    def __len__(self) -> int:
        return len(self.configs)

    @cached_property
    def lookup(self) -> np.ndarray:
        """Dense map bitmask -> position, -1 outside the sector."""
        table = np.full(1 << self.n_sites, -1, dtype=np.int64)
        table[self.configs] = np.arange(len(self.configs))
        table.setflags(write=False)
        return table

    @cached_property
    def spins(self) -> np.ndarray:
        out = spins(self.configs, self.n_sites)
        out.setflags(write=False)
        return out

    def index(self, x: int) -> int:
        i = int(self.lookup[x]) if 0 <= x < len(self.lookup) else -1
        if i < 0:
            raise ConfigurationError(
                f"{bits_to_string(x, self.n_sites)} is outside the S^z=0 sector"
            )
        return i

    def indices(self, configs: np.ndarray) -> np.ndarray:
        idx = self.lookup[np.asarray(configs, dtype=np.int64)]
        if np.any(idx < 0):
            raise ConfigurationError("configuration outside the S^z=0 sector")
        return idx


def build_sector_basis(n_sites: int) -> SectorBasis:
    check_sites(n_sites)
    allx = np.arange(1 << n_sites, dtype=np.int64)
    counts = np.zeros_like(allx)
    for j in range(n_sites):
        counts += (allx >> j) & 1
    configs = allx[counts == n_sites // 2]
    assert len(configs) == comb(n_sites, n_sites // 2)
    return SectorBasis(n_sites, configs)


@dataclass(frozen=True)
class HamiltonianSpec:
    n_sites: int
    j1: float = 1.0
    j2: float = 0.5

    def __post_init__(self):
        check_sites(self.n_sites)

    @property
    def is_mg_point(self) -> bool:
        return self.j2 == self.j1 / 2

    @property
    def mg_energy(self) -> float:
        return -3.0 * self.j1 * self.n_sites / 8.0

    def bonds(self) -> list[tuple[int, int, float]]:
        """(i, j, J) for every term of the periodic sum, repeats included.

        For N=4 the J2 sum visits each next-nearest pair twice; those
        repeats are kept so the operator matches the ring sum literally.
        """
        n = self.n_sites
        out = []
        for r, coupling in ((1, self.j1), (2, self.j2)):
            for j in range(n):
                out.append((j, (j + r) % n, coupling))
        return out


def connected_elements(x: int, spec: HamiltonianSpec) -> list[tuple[int, float]]:
    """Nonzero row ``x`` of H as ``[(x, H_xx), (y, H_xy), ...]``.

    The diagonal comes first (also when it is zero); off-diagonal entries
    for coincident flips are merged.
    """
    n = spec.n_sites
    if x < 0 or x >> n or popcount(x) != n // 2:
        raise ConfigurationError(f"configuration {x} is outside the S^z=0 sector")
    diag = 0.0
    off: dict[int, float] = {}
    for i, j, coupling in spec.bonds():
        if coupling == 0.0:
            continue
        si = (x >> i) & 1
        sj = (x >> j) & 1
        if si == sj:
            diag += coupling / 4
        else:
            diag -= coupling / 4
            y = x ^ ((1 << i) | (1 << j))
            off[y] = off.get(y, 0.0) + coupling / 2
    return [(x, diag)] + [(y, v) for y, v in off.items() if v != 0.0]


@dataclass(frozen=True)
class ConnectionTable:
    """Padded sparse rows of H over a sector basis.

    ``neighbors[i, m]`` is a basis index (or -1 for padding) and
    ``values[i, m]`` the matching off-diagonal element.
    """

    diagonal: np.ndarray
    neighbors: np.ndarray
    values: np.ndarray


def connection_table(spec: HamiltonianSpec, basis: SectorBasis) -> ConnectionTable:
    if spec.n_sites != basis.n_sites:
        raise ConfigurationError(
            f"Hamiltonian has N={spec.n_sites}, basis has N={basis.n_sites}"
        )
    rows = [connected_elements(int(x), spec) for x in basis.configs]
    width = max(1, max(len(r) - 1 for r in rows))
    diagonal = np.array([r[0][1] for r in rows])
    neighbors = np.full((len(rows), width), -1, dtype=np.int64)
    values = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        for m, (y, v) in enumerate(r[1:]):
            neighbors[i, m] = basis.lookup[y]
            values[i, m] = v
    return ConnectionTable(diagonal, neighbors, values)


def dense_hamiltonian(spec: HamiltonianSpec, basis: SectorBasis) -> np.ndarray:
    table = connection_table(spec, basis)
    dim = len(basis)
    h = np.diag(table.diagonal)
    rows = np.repeat(np.arange(dim), table.neighbors.shape[1])
    cols = table.neighbors.ravel()
    keep = cols >= 0
    np.add.at(h, (rows[keep], cols[keep]), table.values.ravel()[keep])
    return h


def spin_exchange_matrix(basis: SectorBasis, i: int, j: int) -> np.ndarray:
    """Matrix of S_i . S_j restricted to the sector."""
    dim = len(basis)
    out = np.zeros((dim, dim))
    if i == j:
        np.fill_diagonal(out, 0.75)
        return out
    for a, x in enumerate(basis.configs):
        x = int(x)
        si, sj = (x >> i) & 1, (x >> j) & 1
        if si == sj:
            out[a, a] += 0.25
        else:
            out[a, a] -= 0.25
            out[basis.lookup[x ^ ((1 << i) | (1 << j))], a] += 0.5
    return out


@dataclass(frozen=True)
class EDResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degeneracy: int

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_vectors(self) -> np.ndarray:
        return self.eigenvectors[:, : self.degeneracy]

    def to_json(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "degeneracy": self.degeneracy,
            "E0": self.ground_energy,
        }


def exact_diagonalize(h: np.ndarray, degeneracy_tol: float = 1e-8) -> EDResult:
    """Dense symmetric eigensolve.

    Eigenvalues within ``degeneracy_tol`` times the spectral range of the
    minimum are counted as ground-degenerate.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    if not np.allclose(h, h.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max())):
        raise ValueError("Hamiltonian is not symmetric")
    evals, evecs = np.linalg.eigh(h)
    spread = evals[-1] - evals[0]
    tol = degeneracy_tol * (spread if spread > 0 else 1.0)
    g = int(np.sum(evals - evals[0] <= tol))
    return EDResult(evals, evecs, g)


def build_dimer_states(basis: SectorBasis) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour singlet coverings on bonds (0,1),(2,3),... and (1,2),(3,4),...

    Each singlet is (|↑_i ↓_{i+1}> - |↓_i ↑_{i+1}>)/sqrt(2).
    """
    n = basis.n_sites
    check_sites(n)

    def covering(first_sites):
        vec = np.zeros(len(basis))
        for choice in range(1 << (n // 2)):
            x, sign = 0, 1.0
            for m, i in enumerate(first_sites):
                j = (i + 1) % n
                if (choice >> m) & 1:
                    x |= 1 << j
                    sign = -sign
                else:
                    x |= 1 << i
            vec[basis.lookup[x]] = sign * 2.0 ** (-n / 4)
        return vec

    phi_a = covering(range(0, n, 2))
    phi_b = covering(range(1, n, 2))
    return phi_a, phi_b


def dimer_overlap(n_sites: int) -> float:
    """<Phi_B|Phi_A> = (-1)^(N/2) 2^(1 - N/2)."""
    return (-1) ** (n_sites // 2) * 2.0 ** (1 - n_sites // 2)


def build_momentum_states(basis: SectorBasis) -> tuple[np.ndarray, np.ndarray]:
    """Translation eigenstates with eigenvalues +1 (k=0) and -1 (k=pi)."""
    phi_a, phi_b = build_dimer_states(basis)
    ov = dimer_overlap(basis.n_sites)
    plus = (phi_a + phi_b) / np.sqrt(2 * (1 + ov))
    minus = (phi_a - phi_b) / np.sqrt(2 * (1 - ov))
    return plus, minus


def translate_vector(vec: np.ndarray, basis: SectorBasis) -> np.ndarray:
    """Apply T to an amplitude vector: (T psi)(T x) = psi(x)."""
    out = np.zeros_like(vec)
    shifted = np.array([translate(int(x), basis.n_sites) for x in basis.configs])
    out[basis.lookup[shifted]] = vec
    return out


@dataclass(frozen=True)
class ExactGroundData:
    phi_a: np.ndarray
    phi_b: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    e0: float


def exact_ground_data(spec: HamiltonianSpec, basis: SectorBasis) -> ExactGroundData:
    if not spec.is_mg_point:
        raise ConfigurationError("dimer ground states exist only at J2 = J1/2")
    phi_a, phi_b = build_dimer_states(basis)
    plus, minus = build_momentum_states(basis)
    return ExactGroundData(phi_a, phi_b, plus, minus, spec.mg_energy)


@dataclass(frozen=True)
class Problem:
    """Hamiltonian plus the sector tables the estimators need."""

    spec: HamiltonianSpec
    basis: SectorBasis
    table: ConnectionTable

    @classmethod
    def build(cls, n_sites: int, j1: float = 1.0, j2: float = 0.5) -> "Problem":
        spec = HamiltonianSpec(n_sites, j1, j2)
        basis = build_sector_basis(n_sites)
        return cls(spec, basis, connection_table(spec, basis))

    @property
    def n_sites(self) -> int:
        return self.spec.n_sites

    @cached_property
    def hamiltonian(self) -> np.ndarray:
        return dense_hamiltonian(self.spec, self.basis)
