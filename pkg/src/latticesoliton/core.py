"""Shared domain types for a ring of L sites holding N bosons.

Units: hbar = k_B = 1 throughout, so the tunneling amplitude delta and the
on-site interaction kappa are both frequencies, and inverse temperatures
are inverse frequencies.  Site indices always live on a ring and are
reduced mod L in one place (:func:`mod_site`) so the periodic boundary
cannot be implemented inconsistently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_RTOL = 1e-12  # relative slack on |sum |b_k|^2 - N| after normalization


class ConfigError(ValueError):
    """A lattice or sampler parameter violates its contract."""


class LatticeSizeError(ConfigError):
    """Site count L below the two-site minimum."""


class AtomNumberError(ConfigError):
    """Total atom number N below one."""


class TunnelingError(ConfigError):
    """Tunneling amplitude delta is not positive."""


@dataclass(frozen=True)
class LatticeConfig:
    """Physical parameters of the ring lattice.

    L      -- number of sites (>= 2)
    N      -- total number of atoms (>= 1)
    delta  -- site-to-nearest-site tunneling amplitude (> 0, frequency units)
    kappa  -- on-site atom-atom interaction (frequency units, < 0 attractive)
    """

    L: int
    N: int
    delta: float = 1.0
    kappa: float = 0.0


def validate(config: LatticeConfig) -> LatticeConfig:
    """Return ``config`` unchanged if its invariants hold, else raise.

    Each violated invariant raises a distinct ConfigError subclass.
    """
    if config.L < 2:
        raise LatticeSizeError(f"need at least 2 sites, got L={config.L}")
    if config.N < 1:
        raise AtomNumberError(f"need at least 1 atom, got N={config.N}")
    if config.delta <= 0:
        raise TunnelingError(f"tunneling amplitude must be positive, got delta={config.delta}")
    return config


def coupling(config: LatticeConfig) -> float:
    """Dimensionless interaction parameter N*kappa/delta.

    For a fixed site count this is the only combination of (N, kappa, delta)
    the physics depends on, up to an overall frequency scale.
    """
    return config.N * config.kappa / config.delta


def mod_site(k: int, L: int) -> int:
    """Reduce a site index onto the ring."""
    return k % L


def neighbors(k: int, L: int) -> tuple[int, int]:
    """Ring neighbors (k+1, k-1) of site k.  For L=2 both are the other site."""
    return (k + 1) % L, (k - 1) % L


def energy_scale(config: LatticeConfig) -> float:
    """max(delta, |kappa|*N): the coarse frequency scale used in tolerances."""
    return max(config.delta, abs(config.kappa) * config.N)


# ---------------------------------------------------------------------------
# Number states and classical fields are plain numpy arrays; the helpers
# below enforce their invariants where modules hand them across boundaries.
# ---------------------------------------------------------------------------

def check_number_state(n: np.ndarray, config: LatticeConfig) -> np.ndarray:
    """Assert ``n`` is a valid number state: L nonnegative ints summing to N."""
    n = np.asarray(n)
    if n.shape != (config.L,):
        raise ValueError(f"number state has length {n.shape}, lattice has L={config.L}")
    if not np.issubdtype(n.dtype, np.integer):
        raise ValueError("number state must have an integer dtype")
    if (n < 0).any():
        raise ValueError("number state has a negative occupation")
    total = int(n.sum())
    if total != config.N:
        raise ValueError(f"number state sums to {total}, expected N={config.N}")
    return n


def field_norm(b: np.ndarray) -> float:
    """Total atom number sum_k |b_k|^2 carried by a classical field."""
    return float(np.sum(np.abs(b) ** 2))


def normalize_field(b: np.ndarray, N: int) -> np.ndarray:
    """Rescale a classical field to carry exactly N atoms."""
    norm = field_norm(b)
    if norm <= 0.0:
        raise ValueError("cannot normalize a zero field")
    return b * np.sqrt(N / norm)


def check_field(b: np.ndarray, config: LatticeConfig) -> np.ndarray:
    """Assert a classical field lives on the lattice and carries N atoms."""
    b = np.asarray(b, dtype=complex)
    if b.shape != (config.L,):
        raise ValueError(f"field has shape {b.shape}, lattice has L={config.L}")
    if abs(field_norm(b) - config.N) > NORM_RTOL * config.N:
        raise ValueError("field norm deviates from N beyond tolerance")
    return b


@dataclass(frozen=True)
class RngStream:
    """Seed plus stream id; one stream per Markov chain.

    Identical (seed, stream_id) pairs reproduce bit-identical trajectories:
    the numpy generator and the kernel state below are both derived purely
    from these two integers.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def kernel_state(self) -> np.ndarray:
        """Four nonzero 64-bit words seeding the compiled sampler's RNG."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, 0x51C0))
        state = ss.generate_state(4, dtype=np.uint64)
        if not state.any():  # all-zero state would lock the xoshiro generator
            state[0] = np.uint64(0x9E3779B97F4A7C15)
        return state
