"""Exact quantum treatment of N bosons on the ring.

Works in the number-conserving Fock sector: the basis is every occupation
vector (n_0, ..., n_{L-1}) with sum N, enumerated in descending
lexicographic order, of dimension D = C(N+L-1, L-1).  The Hamiltonian

    H = sum_k [ -(delta/2)(b+_{k+1} b_k + b+_{k-1} b_k)
                + (kappa/2) n_k (n_k - 1) ]

is assembled sparse and symmetric; for L=2 the two directed neighbor terms
coincide, doubling the hop to -delta*sqrt(n(N-n+1)) as a literal reading
of the periodic sum requires.

Number statistics: P(n) is either the equal mixture over the (near-)
degenerate ground states or the exact thermal diagonal ensemble
P(n) = <n|exp(-beta H)|n> / Tr exp(-beta H), available for dimensions
small enough to diagonalize fully.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import LatticeConfig, energy_scale, validate

DENSE_DIMENSION_LIMIT = 2000     # full/dense diagonalization allowed below this
BASIS_DIMENSION_LIMIT = 10_000_000
DEFAULT_DEGENERACY_TOL = 1e-6    # relative to max(delta, |kappa|*N)


class BasisSizeError(ValueError):
    """Fock dimension exceeds the machine budget."""


class EigensolverError(RuntimeError):
    """The iterative eigensolver failed to converge."""


def fock_dimension(L: int, N: int) -> int:
    """Stars-and-bars count C(N+L-1, L-1) of number states."""
    return comb(N + L - 1, L - 1)


class FockBasis:
    """All number states of (L, N), descending lexicographic, with O(L*N) ranking."""

    def __init__(self, config: LatticeConfig):
        validate(config)
        self.config = config
        self.dimension = fock_dimension(config.L, config.N)
        if self.dimension > BASIS_DIMENSION_LIMIT:
            raise BasisSizeError(
                f"Fock dimension {self.dimension} exceeds budget {BASIS_DIMENSION_LIMIT}"
            )
        self.states = self._enumerate(config.L, config.N)

    @staticmethod
    def _enumerate(L: int, N: int) -> np.ndarray:
        # Descending lexicographic order: first occupation runs N..0, recursively.
        out = np.empty((fock_dimension(L, N), L), dtype=np.int64)
        state = np.zeros(L, dtype=np.int64)

        def fill(pos: int, remaining: int, row: int) -> int:
            if pos == L - 1:
                state[pos] = remaining
                out[row] = state
                return row + 1
            for v in range(remaining, -1, -1):
                state[pos] = v
                row = fill(pos + 1, remaining - v, row)
            return row

        fill(0, N, 0)
        return out

    def index(self, n: Sequence[int]) -> int:
        """Rank of a number state in the descending-lex order."""
        L, N = self.config.L, self.config.N
        rank = 0
        remaining = N
        for k in range(L - 1):
            v = int(n[k])
            parts = L - k
            # states whose k-th occupation exceeds v all come first
            if remaining - v - 1 >= 0:
                rank += comb(remaining - v - 1 + parts - 1, parts - 1)
            remaining -= v
        return rank

    def __len__(self) -> int:
        return self.dimension


@dataclass(frozen=True)
class HamiltonianMatrix:
    """Sparse symmetric Hamiltonian in the Fock basis (frequency units)."""

    matrix: sp.csr_matrix
    config: LatticeConfig
    dimension: int


@dataclass(frozen=True)
class SpectralResult:
    """Lowest eigenpairs, ascending, with ground-degeneracy flags."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray     # orthonormal columns
    degenerate: np.ndarray       # True where E - E0 <= degeneracy window
    degeneracy_tol: float


@dataclass(frozen=True)
class NumberDistribution:
    """Probabilities over the basis states of ``basis``."""

    probabilities: np.ndarray
    basis: FockBasis
    source: str                  # "zero-temperature-mixture" or "thermal(beta=...)"


def build_hamiltonian(basis: FockBasis) -> HamiltonianMatrix:
    """Assemble the number-conserving Bose-Hubbard matrix over ``basis``.

    Hops use exact integer products under the square root, so the two
    entries of every symmetric pair are bit-identical.
    """
    config = basis.config
    L, delta, kappa = config.L, config.delta, config.kappa
    D = basis.dimension
    states = basis.states

    diag = 0.5 * kappa * np.sum(states * (states - 1), axis=1).astype(float)

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    target = np.empty(L, dtype=np.int64)
    for i in range(D):
        n = states[i]
        for k in range(L):
            if n[k] == 0:
                continue
            for step in (1, -1):
                j_site = (k + step) % L
                np.copyto(target, n)
                target[k] -= 1
                target[j_site] += 1
                j = basis.index(target)
                amp = -0.5 * delta * np.sqrt(n[k] * (n[j_site] + 1))
                rows.append(j)
                cols.append(i)
                vals.append(amp)

    H = sp.coo_matrix((vals, (rows, cols)), shape=(D, D)).tocsr()
    H = H + sp.diags(diag).tocsr()
    return HamiltonianMatrix(matrix=H, config=config, dimension=D)


def ground_states(
    H: HamiltonianMatrix,
    k: int = 2,
    degeneracy_tol: float = DEFAULT_DEGENERACY_TOL,
) -> SpectralResult:
    """k lowest eigenpairs; dense below DENSE_DIMENSION_LIMIT, Lanczos above.

    States within degeneracy_tol * max(delta, |kappa|*N) of the ground
    energy are flagged degenerate.
    """
    if k < 1:
        raise ValueError("need k >= 1 eigenpairs")
    D = H.dimension
    k = min(k, D)
    if D <= DENSE_DIMENSION_LIMIT:
        w, v = np.linalg.eigh(H.matrix.toarray())
        w, v = w[:k], v[:, :k]
    else:
        # deterministic start vector keeps eigenvalues bit-stable per platform
        v0 = np.full(D, 1.0 / np.sqrt(D))
        try:
            w, v = spla.eigsh(H.matrix, k=k, which="SA", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise EigensolverError(f"Lanczos failed to converge: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    window = degeneracy_tol * energy_scale(H.config)
    flags = (w - w[0]) <= window
    return SpectralResult(eigenvalues=w, eigenvectors=v, degenerate=flags, degeneracy_tol=degeneracy_tol)


def zero_temp_distribution(spectral: SpectralResult, basis: FockBasis) -> NumberDistribution:
    """Equal mixture of the flagged-degenerate ground states.

    P(n) = (1/g) sum_a |<n|psi_a>|^2 over the g degenerate lowest states.
    """
    mask = spectral.degenerate
    g = int(mask.sum())
    if g == 0:
        raise ValueError("no states flagged degenerate with the ground energy")
    vecs = spectral.eigenvectors[:, mask]
    probs = np.sum(np.abs(vecs) ** 2, axis=1) / g
    probs /= probs.sum()
    return NumberDistribution(probabilities=probs, basis=basis, source="zero-temperature-mixture")


def thermal_distribution(H: HamiltonianMatrix, basis: FockBasis, beta: float) -> NumberDistribution:
    """Exact thermal diagonal ensemble from the full spectrum.

    Requires D <= DENSE_DIMENSION_LIMIT.  Weights are computed relative to
    the ground energy so large beta cannot underflow the whole ensemble.
    """
    if beta < 0:
        raise ValueError("inverse temperature must be nonnegative")
    D = H.dimension
    if D > DENSE_DIMENSION_LIMIT:
        raise BasisSizeError(
            f"thermal distribution needs the full spectrum; D={D} exceeds {DENSE_DIMENSION_LIMIT}"
        )
    w, v = np.linalg.eigh(H.matrix.toarray())
    boltz = np.exp(-beta * (w - w[0]))
    probs = (np.abs(v) ** 2) @ boltz
    probs /= probs.sum()
    return NumberDistribution(probabilities=probs, basis=basis, source=f"thermal(beta={beta:g})")


def expectation(f: Callable[[np.ndarray], float], dist: NumberDistribution) -> float:
    """Distribution average sum_n P(n) f(n) over the basis states."""
    probs = dist.probabilities
    states = dist.basis.states
    values = np.fromiter((f(states[i]) for i in range(len(probs))), dtype=float, count=len(probs))
    return float(probs @ values)


def sample_states(dist: NumberDistribution, rng: np.random.Generator, m: int) -> np.ndarray:
    """Draw m number states from P(n) by inverse transform sampling."""
    cdf = np.cumsum(dist.probabilities)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(m), side="right")
    return dist.basis.states[idx]


def two_site_mixture(N: int, Lambda: float, delta: float = 1.0) -> np.ndarray:
    """Two-site probabilities P_n of finding n atoms in site 0.

    Builds the dimer Hamiltonian at kappa = Lambda*delta/N and mixes the two
    lowest eigenstates 50/50: in the large-N limit at fixed Lambda they
    become degenerate, and the equal mixture is the translation-invariant
    low-temperature state.
    """
    config = validate(LatticeConfig(L=2, N=N, delta=delta, kappa=Lambda * delta / N))
    basis = FockBasis(config)
    H = build_hamiltonian(basis)
    spectral = ground_states(H, k=2)
    vecs = spectral.eigenvectors[:, :2]
    probs = 0.5 * np.sum(np.abs(vecs) ** 2, axis=1)
    probs /= probs.sum()
    # basis is descending-lex: index i holds (N-i, i), so P_n = probs[N-n]
    return probs[::-1].copy()


def two_site_scan(
    N_list: Sequence[int],
    Lambda: float,
    delta: float = 1.0,
) -> list[tuple[int, np.ndarray, np.ndarray, np.ndarray]]:
    """Scaled dimer number distributions at fixed N*kappa/delta.

    Returns one row (N, n/N, P_n, sqrt(N)*P_n) per atom number, with the
    interaction rescaled as kappa = Lambda*delta/N so every N sees the same
    dimensionless coupling.
    """
    if len(N_list) == 0:
        raise ValueError("need at least one atom number to scan")
    rows = []
    for N in N_list:
        P = two_site_mixture(int(N), Lambda, delta)
        n = np.arange(N + 1)
        rows.append((int(N), n / N, P, np.sqrt(N) * P))
    return rows
