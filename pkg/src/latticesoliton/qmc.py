"""World-line quantum Monte Carlo with the checkerboard decomposition.

The Hamiltonian splits into commuting even and odd bond sets,
H = H_even + H_odd, where each ring bond (i, i+1) carries

    h_bond = -(delta/2)(b+_i b_j + b+_j b_i)
             + (kappa/4)[n_i(n_i-1) + n_j(n_j-1)]

so the half-and-half interaction split reassembles H exactly for even
L >= 4.  L = 2 is a single double bond (hopping -delta, interaction
share kappa/2) covering the whole Hamiltonian; odd L has no two-color
bond partition and is rejected.  Each inverse-temperature step of size
dtau = beta/n_beta factorizes into exact two-site propagators
exp(-dtau*h_bond), with all matrix entries positive for delta > 0, so
there is no sign problem.

Configurations live on an L x 2*n_beta occupancy grid, periodic in both
directions.  Local corner moves shift one atom across a bond on a pair
of adjacent slices with Metropolis acceptance; after relaxation, any
fixed slice of the grid is a number state drawn with frequency
proportional to its thermal weight, so retained slices double as
simulated occupation-number measurements.

Corner moves alone preserve the net winding of world lines around the
ring, which leaves a small but resolvable bias on short-range
correlators (the chain stays in the winding sector it was seeded in).
Sweeps on small rings therefore mix in spiral moves that reroute one
atom all the way around the ring, stepping between winding sectors.  On
long rings a full circuit has vanishing acceptance and the spiral
attempts are skipped; there the winding restriction sits far below the
statistical resolution of the targeted runs (both regimes are checked
against flux-resolved transfer-matrix references in the test suite).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .core import ConfigError, LatticeConfig, RngStream, validate

PROPAGATOR_ENTRY_BUDGET = 40_000_000
MIN_ACCEPTANCE = 1e-4
MIN_ACCEPTANCE_ATTEMPTS = 20_000  # below this the rate is too noisy to judge
THERMALIZATION_CAP_FACTOR = 20
PLATEAU_WINDOW = 100  # sweeps per window in the relaxation plateau check
WINDING_MAX_SITES = 8  # beyond this a full ring circuit is hopeless to accept


class OddLatticeError(ConfigError):
    """Checkerboard decomposition needs an even number of sites (or L=2)."""

class SeedingError(ConfigError):
    """Invalid narrow-seeding parameters."""

class PathologicalAcceptance(RuntimeError):
    """Acceptance rate collapsed; dtau or parameters are pathological."""


@dataclass(frozen=True)
class Uniform:
    """Seed every slice with atoms spread as evenly as integers allow."""


@dataclass(frozen=True)
class Narrow:
    """Seed every slice with a discretized Gaussian bump of atoms."""

    center: int
    width: float = 2.0


@dataclass(frozen=True)
class SamplerConfig:
    """Monte Carlo run parameters.

    n_beta=None resolves to ceil(20*beta*max(delta, |kappa|*N/L)), which
    keeps the Trotter step within the accuracy guard at the couplings this
    package targets.  One sweep is L*2*n_beta attempted corner moves
    followed by ``winding_per_sweep`` spiral attempts (None resolves to 4L
    on rings of up to WINDING_MAX_SITES sites, 0 beyond; always 0 for the
    dimer, which has no winding).  ``winding_gap_mean`` sets the mean time
    gap between a spiral's successive bond crossings; compact spirals are
    accepted far more often than long meanders, so the default is 1.0.
    """

    beta: float
    n_samples: int
    rng: RngStream
    n_beta: int | None = None
    thermalization_sweeps: int = 1000
    stride: int = 10
    seeding: Uniform | Narrow = field(default_factory=Uniform)
    winding_per_sweep: int | None = None
    winding_gap_mean: float | None = None


@dataclass
class QmcRunResult:
    """Retained number-state samples plus chain diagnostics."""

    samples: np.ndarray            # (M, L) int64, each row summing to N
    acceptance_rate: float         # sampling phase
    config: LatticeConfig
    beta: float
    n_beta: int
    dtau: float
    diagnostics: dict


def default_n_beta(config: LatticeConfig, beta: float) -> int:
    return max(1, math.ceil(20.0 * beta * max(config.delta, abs(config.kappa) * config.N / config.L)))


def check_step_accuracy(config: LatticeConfig, dtau: float) -> None:
    """Warn when dtau leaves the accuracy guard zone (it is a guideline,
    not a hard error: Trotter-bias studies deliberately exceed it)."""
    z = dtau * max(config.delta, abs(config.kappa) * config.N)
    if z > 0.1:
        warnings.warn(f"dtau*max(delta,|kappa|N) = {z:.3g} exceeds 0.1; expect visible Trotter bias",
                      stacklevel=3)
    elif z > 0.05:
        warnings.warn(f"dtau*max(delta,|kappa|N) = {z:.3g} above the 0.05 comfort zone", stacklevel=3)


def _validate_even_ring(config: LatticeConfig) -> None:
    validate(config)
    if config.L != 2 and config.L % 2 != 0:
        raise OddLatticeError(f"checkerboard bond partition needs even L, got L={config.L}")


def bond_hamiltonian(config: LatticeConfig, m: int) -> np.ndarray:
    """Two-site bond block for bond total m, in the basis n_i = 0..m.

    For L >= 4 the bond carries half the hop pair (-delta/2) and a quarter
    of each site's interaction; the single L=2 bond carries the full -delta
    hop and interaction share kappa/2.
    """
    if m < 0 or m > config.N:
        raise ValueError(f"bond total must lie in [0, N], got {m}")
    if config.L == 2:
        hop, share = config.delta, 0.5 * config.kappa
    else:
        hop, share = 0.5 * config.delta, 0.25 * config.kappa
    ni = np.arange(m + 1)
    nj = m - ni
    h = np.diag(share * (ni * (ni - 1) + nj * (nj - 1)).astype(float))
    for a in range(m):
        v = -hop * math.sqrt((a + 1) * (m - a))
        h[a + 1, a] = v
        h[a, a + 1] = v
    return h


class BondPropagatorTable:
    """Cache of exp(-dtau*h_bond) blocks, grown lazily in the bond total m.

    Also caches h*G blocks (same eigenbasis) for the energy estimator.
    """

    def __init__(self, config: LatticeConfig, dtau: float):
        if dtau <= 0:
            raise ValueError("dtau must be positive")
        _validate_even_ring(config)
        self.config = config
        self.dtau = dtau
        self._g: list[np.ndarray] = []
        self._hg: list[np.ndarray] = []

    @property
    def max_total(self) -> int:
        return len(self._g) - 1

    def ensure(self, m: int) -> None:
        budget = sum((mm + 1) ** 2 for mm in range(m + 1))
        if budget > PROPAGATOR_ENTRY_BUDGET:
            raise ConfigError(
                f"propagator table to bond total {m} needs {budget} entries, over budget"
            )
        for mm in range(len(self._g), m + 1):
            h = bond_hamiltonian(self.config, mm)
            w, u = np.linalg.eigh(h)
            g = (u * np.exp(-self.dtau * w)) @ u.T
            hg = (u * (w * np.exp(-self.dtau * w))) @ u.T
            g = 0.5 * (g + g.T)
            hg = 0.5 * (hg + hg.T)
            # entries are positive by Perron-Frobenius; clip roundoff dust
            np.maximum(g, 0.0, out=g)
            self._g.append(g)
            self._hg.append(hg)

    def g(self, m: int) -> np.ndarray:
        self.ensure(m)
        return self._g[m]

    def hg(self, m: int) -> np.ndarray:
        self.ensure(m)
        return self._hg[m]

    def packed(self, m_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat (gflat, hgflat, offsets) arrays for the compiled kernels."""
        self.ensure(m_max)
        offsets = np.zeros(m_max + 2, dtype=np.int64)
        for m in range(m_max + 1):
            offsets[m + 1] = offsets[m] + (m + 1) ** 2
        gflat = np.empty(offsets[-1], dtype=np.float64)
        hgflat = np.empty(offsets[-1], dtype=np.float64)
        for m in range(m_max + 1):
            gflat[offsets[m]:offsets[m + 1]] = self._g[m].ravel()
            hgflat[offsets[m]:offsets[m + 1]] = self._hg[m].ravel()
        return gflat, hgflat, offsets


def build_propagator_table(config: LatticeConfig, dtau: float) -> BondPropagatorTable:
    return BondPropagatorTable(config, dtau)


def uniform_state(config: LatticeConfig) -> np.ndarray:
    """Most even integer occupation: base N//L plus the remainder on sites 0.."""
    base, rem = divmod(config.N, config.L)
    n = np.full(config.L, base, dtype=np.int64)
    n[:rem] += 1
    return n


def narrow_state(config: LatticeConfig, center: int, width: float) -> np.ndarray:
    """Discretized Gaussian bump summing exactly to N (remainder to the center)."""
    if width <= 0:
        raise SeedingError(f"narrow seeding needs positive width, got {width}")
    if not 0 <= center < config.L:
        raise SeedingError(f"narrow seeding center {center} outside [0, {config.L})")
    k = np.arange(config.L)
    dist = np.minimum((k - center) % config.L, (center - k) % config.L)
    weights = np.exp(-0.5 * (dist / width) ** 2)
    n = np.rint(config.N * weights / weights.sum()).astype(np.int64)
    n[center] += config.N - n.sum()
    if n[center] < 0:
        raise SeedingError("rounded bump overshoots N; widen the seeding bump")
    return n


def seed_grid(config: LatticeConfig, sampler: SamplerConfig) -> np.ndarray:
    """Occupancy grid with the same seed number state at every slice."""
    _validate_even_ring(config)
    n_beta = sampler.n_beta if sampler.n_beta is not None else default_n_beta(config, sampler.beta)
    if isinstance(sampler.seeding, Narrow):
        column = narrow_state(config, sampler.seeding.center, sampler.seeding.width)
    else:
        column = uniform_state(config)
    return np.repeat(column[:, None], 2 * n_beta, axis=1).copy()


def check_grid(grid: np.ndarray, config: LatticeConfig) -> None:
    """Assert shape, nonnegativity and the per-slice particle sum."""
    L, S = grid.shape
    if L != config.L or S % 2 != 0 or S < 2:
        raise ValueError(f"grid shape {grid.shape} invalid for L={config.L}")
    if (grid < 0).any():
        raise ValueError("grid has a negative occupancy")
    sums = grid.sum(axis=0)
    if not (sums == config.N).all():
        raise ValueError("a time slice does not sum to N")


def check_grid_consistency(grid: np.ndarray, config: LatticeConfig) -> None:
    """Assert the per-step constraints: active bonds conserve their totals
    and (for L=2) occupancies do not change across identity steps."""
    check_grid(grid, config)
    L, S = grid.shape
    for t in range(S):
        tp = (t + 1) % S
        parity = t % 2
        if L == 2:
            if parity == 1 and not (grid[:, t] == grid[:, tp]).all():
                raise ValueError(f"L=2 identity step {t} changes occupancies")
            continue
        for b in range(parity, L, 2):
            i, j = b, (b + 1) % L
            if grid[i, t] + grid[j, t] != grid[i, tp] + grid[j, tp]:
                raise ValueError(f"bond ({i},{j}) total not conserved across step {t}")


def dump_grid(grid: np.ndarray, path) -> None:
    """Plain-text snapshot: header 'L n_slices', then one line of L
    occupancies per inverse-temperature slice."""
    L, S = grid.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{L} {S}\n")
        for t in range(S):
            fh.write(" ".join(str(int(grid[k, t])) for k in range(L)) + "\n")


def load_grid(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        L, S = (int(x) for x in fh.readline().split())
        grid = np.empty((L, S), dtype=np.int64)
        for t in range(S):
            row = [int(x) for x in fh.readline().split()]
            if len(row) != L:
                raise ValueError(f"slice {t} has {len(row)} entries, expected {L}")
            grid[:, t] = row
    return grid


def propose_and_apply_move(
    grid: np.ndarray,
    table: BondPropagatorTable,
    rng: np.random.Generator,
) -> bool:
    """Attempt a single corner move at a random vertex and direction.

    Python-level entry point for tests and stepping experiments; bulk runs
    go through the compiled kernels with their own random stream.
    """
    L, S = grid.shape
    gflat, _hg, goff = table.packed(table.config.N)
    k = int(rng.integers(L))
    t = int(rng.integers(S))
    dr = 1 if rng.integers(2) == 0 else -1
    u = float(rng.random())
    accepted, _ratio = _kernels.corner_move(grid, gflat, goff, k, t, dr, u)
    return bool(accepted)


def corner_move_ratio(
    grid: np.ndarray,
    table: BondPropagatorTable,
    k: int,
    t: int,
    dr: int,
    accept: bool = False,
) -> tuple[bool, float]:
    """Deterministic probe of one move's weight ratio (u=1 rejects unless
    forced); used to verify detailed balance in tests."""
    gflat, _hg, goff = table.packed(table.config.N)
    u = 0.0 if accept else 1.0
    accepted, ratio = _kernels.corner_move(grid, gflat, goff, k, t, dr, u)
    return bool(accepted), float(ratio)


def run(
    config: LatticeConfig,
    sampler: SamplerConfig,
    debug_conservation: bool = False,
) -> QmcRunResult:
    """Seed, thermalize, and importance-sample M number states.

    Thermalization runs at least ``thermalization_sweeps`` full sweeps and
    then continues until the sliding-window mean of the energy estimator
    stabilizes within one combined standard error (capped at 20x the
    minimum, with a warning).  One sample is the occupancies of slice 0,
    retained every ``stride`` sweeps.
    """
    _validate_even_ring(config)
    if sampler.n_samples < 1:
        raise ConfigError("need at least one sample")
    if sampler.stride < 1 or sampler.thermalization_sweeps < 0:
        raise ConfigError("stride must be >= 1 and thermalization_sweeps >= 0")
    n_beta = sampler.n_beta if sampler.n_beta is not None else default_n_beta(config, sampler.beta)
    if n_beta < 1:
        raise ConfigError("n_beta must be >= 1")
    dtau = sampler.beta / n_beta
    check_step_accuracy(config, dtau)

    table = build_propagator_table(config, dtau)
    gflat, hgflat, goff = table.packed(config.N)
    grid = seed_grid(config, sampler)
    state = sampler.rng.kernel_state()

    S = 2 * n_beta
    if sampler.winding_per_sweep is not None:
        n_winding = sampler.winding_per_sweep if config.L >= 4 else 0
    else:
        n_winding = 4 * config.L if 4 <= config.L <= WINDING_MAX_SITES else 0
    gap_mean = sampler.winding_gap_mean
    if gap_mean is None:
        gap_mean = 1.0
    # spiral-move scratch buffers, reused across kernel calls
    tau = np.empty(config.L, dtype=np.int64)
    site_of = np.empty(S + 2, dtype=np.int64)
    psteps = np.empty(3 * (S + 1), dtype=np.int64)
    pbonds = np.empty(3 * (S + 1), dtype=np.int64)
    wold = np.empty(3 * (S + 1), dtype=np.float64)

    # thermalization with plateau detection on the energy estimator
    energy_trace = []
    therm_acc = therm_att = 0
    wind_acc = wind_att = 0
    min_sweeps = sampler.thermalization_sweeps
    cap = max(min_sweeps, 1) * THERMALIZATION_CAP_FACTOR
    sweeps_done = 0
    window = PLATEAU_WINDOW
    while True:
        acc, att, wacc, watt, status = _kernels.sweep_kernel(
            grid, gflat, goff, state, 1, n_winding, gap_mean,
            tau, site_of, psteps, pbonds, wold, debug_conservation, config.N,
        )
        if status != 0:
            raise AssertionError("particle conservation violated during thermalization")
        therm_acc += acc
        therm_att += att
        wind_acc += wacc
        wind_att += watt
        sweeps_done += 1
        energy_trace.append(_kernels.grid_energy(grid, gflat, goff, hgflat))
        if sweeps_done >= min_sweeps and sweeps_done >= 2 * window:
            recent = np.array(energy_trace[-window:])
            previous = np.array(energy_trace[-2 * window:-window])
            sem = math.sqrt(recent.var(ddof=1) / window + previous.var(ddof=1) / window)
            if abs(recent.mean() - previous.mean()) <= max(sem, 1e-12):
                break
        if sweeps_done >= cap:
            warnings.warn(f"energy plateau not reached within {cap} sweeps; proceeding", stacklevel=2)
            break

    samples = np.empty((sampler.n_samples, config.L), dtype=np.int64)
    sample_energy = np.empty(sampler.n_samples, dtype=np.float64)
    acc, att, wacc, watt, status = _kernels.sample_kernel(
        grid, gflat, goff, hgflat, state, sampler.stride, samples, sample_energy,
        n_winding, gap_mean, tau, site_of, psteps, pbonds, wold,
        debug_conservation, config.N,
    )
    if status != 0:
        raise AssertionError("particle conservation violated during sampling")
    wind_acc += wacc
    wind_att += watt
    acceptance = acc / att if att else 0.0
    if att >= MIN_ACCEPTANCE_ATTEMPTS and acceptance < MIN_ACCEPTANCE:
        raise PathologicalAcceptance(
            f"acceptance rate {acceptance:.2e} below {MIN_ACCEPTANCE}; check dtau and couplings"
        )
    if not (samples.sum(axis=1) == config.N).all():
        raise AssertionError("a retained sample does not sum to N")

    diagnostics = {
        "energy_trace": np.array(energy_trace),
        "sample_energy": sample_energy,
        "thermalization_sweeps_used": sweeps_done,
        "thermalization_acceptance": therm_acc / therm_att if therm_att else 0.0,
        "autocorrelation_time": integrated_autocorrelation(sample_energy),
        "winding_attempts_per_sweep": n_winding,
        "winding_acceptance": wind_acc / wind_att if wind_att else 0.0,
        "final_grid": grid,
    }
    return QmcRunResult(
        samples=samples,
        acceptance_rate=acceptance,
        config=config,
        beta=sampler.beta,
        n_beta=n_beta,
        dtau=dtau,
        diagnostics=diagnostics,
    )


def integrated_autocorrelation(x: np.ndarray, c: float = 6.0) -> float:
    """Integrated autocorrelation time with the standard self-consistent
    window (sum rho(t) while the window is below c*tau)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 8:
        return 1.0
    y = x - x.mean()
    var = float(y @ y) / n
    if var == 0.0:
        return 1.0
    tau = 1.0
    for t in range(1, n // 2):
        rho = float(y[:-t] @ y[t:]) / ((n - t) * var)
        tau += 2.0 * rho
        if t >= c * tau:
            break
    return max(tau, 1.0)


def binned_error(x: np.ndarray) -> float:
    """Standard error from a binning ladder (bin sizes 1, 2, 4, ... until
    fewer than 8 bins remain), taking the plateau as the largest estimate."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return float("inf")
    best = 0.0
    size = 1
    while n // size >= 8 or size == 1:
        nb = n // size
        if nb < 2:
            break
        means = x[: nb * size].reshape(nb, size).mean(axis=1)
        err = float(means.std(ddof=1) / math.sqrt(nb))
        best = max(best, err)
        size *= 2
    return best


@dataclass(frozen=True)
class ObservableStats:
    mean: float
    variance: float
    stderr: float


def estimate_observables(
    result: QmcRunResult,
    observables: dict[str, Callable[[np.ndarray], float]],
) -> dict[str, ObservableStats]:
    """Sample means with binning-analysis error bars for each named f(n)."""
    if result.samples.shape[0] < 2:
        raise ValueError("need at least two samples for error bars")
    out = {}
    for name, f in observables.items():
        series = np.array([f(s) for s in result.samples], dtype=float)
        out[name] = ObservableStats(
            mean=float(series.mean()),
            variance=float(series.var(ddof=1)),
            stderr=binned_error(series),
        )
    return out


def site_occupation_stats(result: QmcRunResult) -> dict[int, ObservableStats]:
    """Per-site mean occupation with binning error bars."""
    stats = {}
    for k in range(result.config.L):
        series = result.samples[:, k].astype(float)
        stats[k] = ObservableStats(
            mean=float(series.mean()),
            variance=float(series.var(ddof=1)),
            stderr=binned_error(series),
        )
    return stats
