"""Classical limit of the lattice: discrete nonlinear Schrodinger equation.

The classical Hamiltonian per hbar is

    H = sum_k [ -(delta/2)(b*_{k+1} b_k + b*_{k-1} b_k) + (kappa/2)|b_k|^4 ]

with complex site amplitudes b_k on the ring and |b_k|^2 counting atoms.
Hamilton's equations give the equation of motion

    i db_k/dt = -(delta/2)(b_{k+1} + b_{k-1}) + kappa |b_k|^2 b_k .

Note the ring convention: for L=2 the k+1 and k-1 neighbors are the same
site, so the two-site problem carries an effective double bond -delta.
Both formulas above implement that automatically by summing both neighbor
terms literally.

Real-time propagation uses classical fourth-order Runge-Kutta.  The ground
state comes from propagating in imaginary time t -> -i*tau with the field
renormalized to N atoms after every step; for attractive interactions
strong enough this relaxes to a soliton, whose phase then rotates in real
time as b_k(t) = exp(-i*mu*t) b_k(0) with chemical potential mu.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import LatticeConfig, check_field, energy_scale, field_norm, normalize_field, validate

DEFAULT_STEP_FACTOR = 0.02
DEFAULT_TOL = 1e-12
DEFAULT_RESIDUAL_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000_000


class PropagationError(RuntimeError):
    """Hard numerical failure (NaN/overflow) during propagation."""


@dataclass(frozen=True)
class SolitonResult:
    """Converged imaginary-time relaxation output."""

    field: np.ndarray          # complex amplitudes, norm N
    mu: float                  # chemical potential (frequency units)
    energy: float              # classical energy (frequency units)
    iterations: int
    converged: bool = True


def gp_operator(b: np.ndarray, config: LatticeConfig) -> np.ndarray:
    """Apply -(delta/2)(b_{k+1}+b_{k-1}) + kappa|b_k|^2 b_k site by site."""
    hop = np.roll(b, -1) + np.roll(b, 1)
    return -0.5 * config.delta * hop + config.kappa * np.abs(b) ** 2 * b


def classical_energy(b: np.ndarray, config: LatticeConfig) -> float:
    """Classical energy of a field configuration (frequency units)."""
    b = np.asarray(b, dtype=complex)
    if b.shape != (config.L,):
        raise ValueError(f"field has shape {b.shape}, lattice has L={config.L}")
    hop = np.conj(np.roll(b, -1)) * b + np.conj(np.roll(b, 1)) * b
    dens2 = np.abs(b) ** 4
    return float(np.sum(-0.5 * config.delta * hop + 0.5 * config.kappa * dens2).real)


def chemical_potential(b: np.ndarray, config: LatticeConfig) -> float:
    """Rayleigh quotient mu = (1/N) sum_k b*_k [gp_operator(b)]_k."""
    return float(np.vdot(b, gp_operator(b, config)).real / field_norm(b))


def stationarity_residual(b: np.ndarray, mu: float, config: LatticeConfig) -> float:
    """l2 norm of gp_operator(b) - mu*b; zero for an exact stationary state."""
    return float(np.linalg.norm(gp_operator(b, config) - mu * b))


def _rk4_step(b: np.ndarray, dt: float, deriv) -> np.ndarray:
    k1 = deriv(b)
    k2 = deriv(b + 0.5 * dt * k1)
    k3 = deriv(b + 0.5 * dt * k2)
    k4 = deriv(b + dt * k3)
    return b + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def real_time_evolve(
    b: np.ndarray,
    config: LatticeConfig,
    t: float,
    dt: float | None = None,
) -> np.ndarray:
    """Integrate the equation of motion for duration t and return the field.

    The step obeys the stability guideline dt*max(delta, |kappa|*max|b|^2)
    <= 0.1; violating it only warns, NaNs raise.
    """
    validate(config)
    b = check_field(b, config)
    if t == 0.0:
        return b.copy()
    scale = max(config.delta, abs(config.kappa) * float(np.max(np.abs(b) ** 2)))
    if dt is None:
        dt = DEFAULT_STEP_FACTOR / scale
    if dt * scale > 0.1:
        warnings.warn(
            f"time step dt={dt:g} exceeds the stability guideline 0.1/{scale:g}",
            stacklevel=2,
        )
    n_steps = max(1, int(np.ceil(abs(t) / dt)))
    h = t / n_steps

    def deriv(field):
        return -1j * gp_operator(field, config)

    out = b.astype(complex, copy=True)
    for _ in range(n_steps):
        out = _rk4_step(out, h, deriv)
        if not np.all(np.isfinite(out.view(float))):
            raise PropagationError("non-finite amplitude during real-time evolution")
    return out


def gaussian_bump_seed(
    config: LatticeConfig,
    center: int | None = None,
    width: float = 2.0,
) -> np.ndarray:
    """Deterministic localized seed: a Gaussian bump of the given width.

    Centering at floor(L/2) pins the relaxed soliton there, lifting the
    translation degeneracy of the ground state in a reproducible way.
    """
    if center is None:
        center = config.L // 2
    k = np.arange(config.L)
    dist = np.minimum((k - center) % config.L, (center - k) % config.L)
    b = np.exp(-0.5 * (dist / width) ** 2).astype(complex)
    return normalize_field(b, config.N)


def uniform_noise_seed(
    config: LatticeConfig,
    noise: float = 1e-3,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Uniform field plus small complex noise, for spontaneous localization runs."""
    b = np.full(config.L, 1.0 + 0.0j)
    if noise > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        b = b + noise * (rng.standard_normal(config.L) + 1j * rng.standard_normal(config.L))
    return normalize_field(b, config.N)


def imaginary_time_ground_state(
    config: LatticeConfig,
    seed_field: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    dtau: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    residual_tol: float = DEFAULT_RESIDUAL_TOL,
) -> SolitonResult:
    """Relax to the classical ground state by imaginary-time propagation.

    Integrates the norm-preserving (tangential) form of the imaginary-time
    flow, db/dtau = -(gp_operator(b) - mu(b) b), and renormalizes to N
    atoms after every RK4 step.  Restricted to the constant-norm manifold
    this is the same gradient flow as plain imaginary time, but stationary
    states are exact fixed points of the discrete stepper, so the
    relaxation is not limited by an O(dtau^2) fixed-point offset (which
    matters near the delocalization threshold where the landscape is
    flat).

    Iteration stops once the relative energy change per unit tau drops
    below ``tol`` AND the stationarity residual drops below
    ``residual_tol * ||b|| * max(delta, |kappa|N)``.  The second condition
    matters because the energy change scales as the residual squared:
    the energy criterion alone certifies only a ~1e-5 residual, too loose
    for the state to hold still in real time.  On hitting ``max_iter``
    the state so far is returned flagged unconverged.
    """
    validate(config)
    if seed_field is None:
        seed_field = gaussian_bump_seed(config)
    b = normalize_field(np.asarray(seed_field, dtype=complex), config.N)

    if dtau is None:
        dtau = DEFAULT_STEP_FACTOR / max(config.delta, abs(config.kappa) * config.N / config.L)

    def deriv(field):
        grad = gp_operator(field, config)
        mu_f = np.vdot(field, grad).real / field_norm(field)
        return -(grad - mu_f * field)

    residual_limit = residual_tol * np.sqrt(config.N) * energy_scale(config)
    energy = classical_energy(b, config)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        b = _rk4_step(b, dtau, deriv)
        if not np.all(np.isfinite(b.view(float))):
            raise PropagationError("non-finite amplitude during imaginary-time relaxation")
        b = normalize_field(b, config.N)
        new_energy = classical_energy(b, config)
        rel_change = abs(new_energy - energy) / max(abs(new_energy), 1e-300)
        energy = new_energy
        if rel_change / dtau < tol:
            # the residual (= ||deriv||) is only checked once the energy has
            # flattened; ||b|| = sqrt(N) after renormalization
            if float(np.linalg.norm(deriv(b))) <= residual_limit:
                converged = True
                break

    mu = chemical_potential(b, config)
    if not converged:
        warnings.warn(
            f"imaginary-time relaxation did not converge in {max_iter} steps",
            stacklevel=2,
        )
    return SolitonResult(field=b, mu=mu, energy=energy, iterations=iterations, converged=converged)
