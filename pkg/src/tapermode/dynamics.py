"""Driven, damped time-domain dynamics and steady-state spectra.

The equation of motion integrated here is

    m r_i'' = -dV/dr_i - m Gamma r_i' + w_i F0 sin(w_d t) e_d

with per-ion drive weights ``w_i`` along one Cartesian direction ``e_d``.
The weights come from a :class:`BeamSpec`: a broad beam drives every ion
equally, a focused beam drives with a Gaussian profile of its waist.
Integration uses velocity Verlet with the damping applied half explicitly,
half implicitly, which stays second-order accurate and reduces exactly to
standard velocity Verlet at Gamma = 0.

A frequency scan is integrated in lockstep: every drive frequency uses the
same number of steps per drive period, so all scan points share one drive
phase table and the demodulation

    Z = (2 / M) sum_k x(t_k) exp(-i w_d t_k)

over an integer number of periods is exact by discrete orthogonality. The
steady state follows the convention  x(t) ~ A sin(w_d t + phi), so
``A = |Z|`` and ``phi = arg Z + pi/2``. A resonantly driven ion therefore
shows ``phi = -pi/2`` and ions moving against the reference ion differ by
``pi`` in phase.

:func:`linear_response_spectrum` solves the same linearized steady state in
closed form, ``(K/m - w_d^2 I + i Gamma w_d I) X = (F0/m) w``; it is the
reference the integrator is validated against.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import TrapConfig, axis_index, gradient, hessian_axis_block, potential_energy
from .equilibrium import equilibrium_positions
from .errors import ConfigError, SimulationError
from .modes import compute_modes

TWO_PI = 2.0 * math.pi

#: Hard floor on temporal resolution: the fastest period in the system
#: (drive or mode) must be covered by at least this many steps.
MIN_STEPS_PER_FASTEST_PERIOD = 20

#: Steps per drive period used when no integrator step is requested.
DEFAULT_STEPS_PER_PERIOD = 96

#: Integration aborts when any ion strays this many chain length units
#: from its equilibrium position.
BLOWUP_LENGTH_UNITS = 1e3

#: Settle windows shorter than this many damping times trigger a warning.
MIN_SETTLE_DAMPING_TIMES = 5.0

MODELS = ("full", "linearized")

BEAM_KINDS = ("broad", "focused")


@dataclass(frozen=True)
class BeamSpec:
    """Spatial profile, strength, and polarization of the excitation beam.

    Parameters
    ----------
    kind:
        'broad' illuminates every ion equally; 'focused' weighs ions by a
        Gaussian of the beam's waist centred at ``center_z``.
    force_amplitude:
        Peak modulated force F0 [N] on a fully illuminated ion.
    direction:
        Cartesian direction the force acts along ('x' or 'y' for radial
        spectroscopy; 'z' for axial calibration scans).
    waist_radius:
        Gaussian 1/e^2 intensity radius [m]; required for a focused beam.
    center_z:
        Axial position of the focused beam's centre [m].
    """

    kind: str
    force_amplitude: float
    direction: str = "x"
    waist_radius: float | None = None
    center_z: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in BEAM_KINDS:
            raise ConfigError(f"beam kind must be one of {BEAM_KINDS}, got {self.kind!r}")
        if not (np.isfinite(self.force_amplitude) and self.force_amplitude >= 0):
            raise ConfigError("force_amplitude must be finite and non-negative")
        axis_index(self.direction)
        if self.kind == "focused":
            if self.waist_radius is None or not self.waist_radius > 0:
                raise ConfigError("a focused beam needs a positive waist_radius")
        if not np.isfinite(self.center_z):
            raise ConfigError("center_z must be finite")


def beam_weights(beam: BeamSpec, positions: np.ndarray) -> np.ndarray:
    """Per-ion drive weights in [0, 1] for a chain at ``positions`` [N, 3].

    A broad beam weighs every ion 1; a focused beam weighs ion i by
    ``exp(-2 (z_i - center_z)^2 / waist^2)``, the Gaussian intensity profile
    sampled at the ion's axial position.
    """
    z = np.asarray(positions, dtype=float)[:, 2]
    if beam.kind == "broad":
        return np.ones(z.size)
    return np.exp(-2.0 * (z - beam.center_z) ** 2 / beam.waist_radius**2)


@dataclass(frozen=True)
class DriveScan:
    """A steady-state frequency scan of the driven chain.

    Parameters
    ----------
    drive_frequencies:
        Drive angular frequencies [rad/s] to scan.
    damping_rate:
        Velocity damping rate Gamma [1/s] (> 0; the steady state needs it).
    settle_cycles, measure_cycles:
        Drive periods integrated before / during demodulation.
    integrator_step:
        Requested time step [s]. The actual step is snapped down to an
        integer number per drive period (per scan point) so demodulation
        windows close exactly; ``None`` uses ``DEFAULT_STEPS_PER_PERIOD``.
    steps_per_period:
        Pin the shared per-period step count directly instead (mutually
        exclusive with ``integrator_step``).
    """

    drive_frequencies: np.ndarray
    damping_rate: float
    settle_cycles: int = 30
    measure_cycles: int = 20
    integrator_step: float | None = None
    steps_per_period: int | None = None

    def __post_init__(self) -> None:
        freqs = np.atleast_1d(np.asarray(self.drive_frequencies, dtype=float))
        if freqs.ndim != 1 or freqs.size == 0 or not np.all(freqs > 0):
            raise ConfigError("drive_frequencies must be positive angular frequencies")
        freqs = freqs.copy()
        freqs.setflags(write=False)
        object.__setattr__(self, "drive_frequencies", freqs)
        if not self.damping_rate > 0:
            raise ConfigError("damping_rate must be positive")
        if self.settle_cycles < 0 or self.measure_cycles < 1:
            raise ConfigError("need settle_cycles >= 0 and measure_cycles >= 1")
        if self.integrator_step is not None and self.steps_per_period is not None:
            raise ConfigError("give integrator_step or steps_per_period, not both")
        if self.integrator_step is not None and not self.integrator_step > 0:
            raise ConfigError("integrator_step must be positive or None")
        if self.steps_per_period is not None and self.steps_per_period < 1:
            raise ConfigError("steps_per_period must be a positive count or None")


@dataclass(frozen=True)
class SpectrumResult:
    """Amplitude and phase of every ion at every scanned drive frequency."""

    drive_frequencies: np.ndarray   #: [M] rad/s
    amplitude: np.ndarray           #: [M, N] m
    phase: np.ndarray               #: [M, N] rad in (-pi, pi]
    direction: str
    damping_rate: float
    model: str
    steps_per_period: int | None
    settle_cycles: int
    measure_cycles: int

    @property
    def n_ions(self) -> int:
        return self.amplitude.shape[1]

    def summed_amplitude(self) -> np.ndarray:
        """Total response per drive frequency (the chain-level spectrum)."""
        return self.amplitude.sum(axis=1)


def wrap_phase(phi: np.ndarray | float) -> np.ndarray | float:
    """Wrap angles into (-pi, pi]."""
    out = (np.asarray(phi, dtype=float) + np.pi) % TWO_PI - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if np.ndim(phi) == 0 else out


def _steps_per_period(scan: DriveScan, omega_fast: float) -> int:
    """Shared step count per drive period satisfying the resolution floor."""
    w_min = float(np.min(scan.drive_frequencies))
    needed = math.ceil(MIN_STEPS_PER_FASTEST_PERIOD * omega_fast / w_min)
    if scan.steps_per_period is not None:
        if scan.steps_per_period < needed:
            raise ConfigError(
                f"steps_per_period {scan.steps_per_period} gives fewer than "
                f"{MIN_STEPS_PER_FASTEST_PERIOD} steps per fastest period; "
                f"need at least {needed}"
            )
        return scan.steps_per_period
    if scan.integrator_step is None:
        return max(DEFAULT_STEPS_PER_PERIOD, needed)
    spp = math.ceil(TWO_PI / (w_min * scan.integrator_step))
    if spp < needed:
        max_step = TWO_PI / (MIN_STEPS_PER_FASTEST_PERIOD * omega_fast)
        raise ConfigError(
            f"integrator_step {scan.integrator_step:.3e} s gives fewer than "
            f"{MIN_STEPS_PER_FASTEST_PERIOD} steps per fastest period; "
            f"use a step <= {max_step:.3e} s"
        )
    return spp


def _warn_short_settle(scan: DriveScan) -> None:
    shortest = scan.settle_cycles * TWO_PI / float(np.max(scan.drive_frequencies))
    if shortest * scan.damping_rate < MIN_SETTLE_DAMPING_TIMES:
        warnings.warn(
            f"settle window ({shortest:.3e} s) is shorter than "
            f"{MIN_SETTLE_DAMPING_TIMES:g} damping times; transients may bias "
            "the demodulated steady state",
            stacklevel=3,
        )


def _batched_gradient(config: TrapConfig, positions: np.ndarray) -> np.ndarray:
    """:func:`tapermode.core.gradient` over a leading batch axis [B, N, 3]."""
    r = positions
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    m = config.mass
    wx2, wy2, wz2 = config.omega_x**2, config.omega_y**2, config.omega_z**2
    inv_l = 0.0 if math.isinf(config.funnel_length) else 1.0 / config.funnel_length
    fz = 1.0 + 2.0 * inv_l * z

    grad = np.empty_like(r)
    grad[..., 0] = m * fz * wx2 * x
    grad[..., 1] = m * fz * wy2 * y
    grad[..., 2] = m * wz2 * z + m * inv_l * (wx2 * x**2 + wy2 * y**2)

    diff = r[..., :, None, :] - r[..., None, :, :]
    dist2 = np.sum(diff**2, axis=-1)
    idx = np.arange(config.n_ions)
    dist2[..., idx, idx] = np.inf
    grad -= config.coulomb_coupling * np.sum(
        diff * dist2[..., None] ** -1.5, axis=-2
    )
    return grad


def simulate_spectrum(
    config: TrapConfig,
    scan: DriveScan,
    beam: BeamSpec,
    model: str = "full",
) -> SpectrumResult:
    """Integrate the driven chain from rest and demodulate each scan point.

    ``model='full'`` integrates the complete nonlinear forces in 3-D;
    ``model='linearized'`` integrates the Hessian dynamics of the driven
    direction only (the other directions stay zero at linear order for an
    on-axis chain). Raises :class:`SimulationError` if any ion moves more
    than ``BLOWUP_LENGTH_UNITS`` chain length units away from equilibrium.
    """
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; expected one of {MODELS}")
    r0 = equilibrium_positions(config)
    weights = beam_weights(beam, r0)
    table = compute_modes(config)
    omega_fast = max(
        float(np.max([m.frequency for m in table.modes])),
        float(np.max(scan.drive_frequencies)),
    )
    spp = _steps_per_period(scan, omega_fast)
    _warn_short_settle(scan)

    wd = scan.drive_frequencies
    n_points = wd.size
    n = config.n_ions
    dt = (TWO_PI / wd) / spp                      # per-point step [M]
    gamma = scan.damping_rate
    f0_over_m = beam.force_amplitude / config.mass
    axis = axis_index(beam.direction)
    blowup = BLOWUP_LENGTH_UNITS * config.length_scale

    sin_tab = np.sin(TWO_PI * np.arange(spp) / spp)
    exp_tab = np.exp(-1j * TWO_PI * np.arange(spp) / spp)
    n_steps = (scan.settle_cycles + scan.measure_cycles) * spp
    demod_start = scan.settle_cycles * spp
    n_samples = scan.measure_cycles * spp
    accum = np.zeros((n_points, n), dtype=complex)

    if model == "linearized":
        stiffness = hessian_axis_block(config, r0, beam.direction) / config.mass
        x = np.zeros((n_points, n))
        v = np.zeros((n_points, n))
        dt_col = dt[:, None]
        force = -x @ stiffness.T + (f0_over_m * sin_tab[0]) * weights
        for step in range(n_steps):
            v_half = v + 0.5 * dt_col * (force - gamma * v)
            x += dt_col * v_half
            phase_idx = (step + 1) % spp
            force = -x @ stiffness.T + (f0_over_m * sin_tab[phase_idx]) * weights
            v = (v_half + 0.5 * dt_col * force) / (1.0 + 0.5 * gamma * dt_col)
            if step + 1 > demod_start:
                accum += x * exp_tab[phase_idx]
            if phase_idx == 0 and np.max(np.abs(x)) > blowup:
                raise SimulationError(
                    f"trajectory diverged after {step + 1} steps "
                    f"(displacement exceeded {BLOWUP_LENGTH_UNITS:g} length units)"
                )
    else:
        r = np.broadcast_to(r0, (n_points, n, 3)).copy()
        v = np.zeros((n_points, n, 3))
        dt_col = dt[:, None, None]

        def total_force(positions: np.ndarray, phase_idx: int) -> np.ndarray:
            f = -_batched_gradient(config, positions) / config.mass
            f[..., axis] += (f0_over_m * sin_tab[phase_idx]) * weights
            return f

        force = total_force(r, 0)
        for step in range(n_steps):
            v_half = v + 0.5 * dt_col * (force - gamma * v)
            r += dt_col * v_half
            phase_idx = (step + 1) % spp
            force = total_force(r, phase_idx)
            v = (v_half + 0.5 * dt_col * force) / (1.0 + 0.5 * gamma * dt_col)
            if step + 1 > demod_start:
                accum += (r[..., axis] - r0[None, :, axis]) * exp_tab[phase_idx]
            if phase_idx == 0 and np.max(np.abs(r - r0)) > blowup:
                raise SimulationError(
                    f"trajectory diverged after {step + 1} steps "
                    f"(displacement exceeded {BLOWUP_LENGTH_UNITS:g} length units)"
                )

    z = accum * (2.0 / n_samples)
    return SpectrumResult(
        drive_frequencies=wd.copy(),
        amplitude=np.abs(z),
        phase=wrap_phase(np.angle(z) + np.pi / 2),
        direction=beam.direction,
        damping_rate=gamma,
        model=model,
        steps_per_period=spp,
        settle_cycles=scan.settle_cycles,
        measure_cycles=scan.measure_cycles,
    )


def linear_response_spectrum(
    config: TrapConfig,
    scan: DriveScan,
    beam: BeamSpec,
) -> SpectrumResult:
    """Closed-form linearized steady state of the same scan."""
    r0 = equilibrium_positions(config)
    weights = beam_weights(beam, r0)
    stiffness = hessian_axis_block(config, r0, beam.direction) / config.mass
    gamma = scan.damping_rate
    f_over_m = beam.force_amplitude / config.mass
    identity = np.eye(config.n_ions)

    wd = scan.drive_frequencies
    solution = np.empty((wd.size, config.n_ions), dtype=complex)
    rhs = f_over_m * weights
    for k, w in enumerate(wd):
        solution[k] = np.linalg.solve(
            stiffness - w**2 * identity + 1j * gamma * w * identity, rhs
        )
    return SpectrumResult(
        drive_frequencies=wd.copy(),
        amplitude=np.abs(solution),
        phase=wrap_phase(np.angle(solution)),
        direction=beam.direction,
        damping_rate=gamma,
        model="response",
        steps_per_period=None,
        settle_cycles=scan.settle_cycles,
        measure_cycles=scan.measure_cycles,
    )


@dataclass(frozen=True)
class RingDown:
    """Free relaxation of a displaced chain under damping."""

    times: np.ndarray         #: [S] s
    energies: np.ndarray      #: [S] J above the equilibrium energy
    positions: np.ndarray     #: [S, N, 3] m
    velocities: np.ndarray    #: [S, N, 3] m/s


def ring_down(
    config: TrapConfig,
    displacement: np.ndarray,
    damping_rate: float,
    duration: float,
    integrator_step: float | None = None,
) -> RingDown:
    """Relax the chain from ``equilibrium + displacement`` with no drive.

    Samples positions, velocities, and the energy above equilibrium once per
    fastest mode period. Uses the full nonlinear forces.
    """
    if not damping_rate >= 0:
        raise ConfigError("damping_rate must be non-negative")
    if not duration > 0:
        raise ConfigError("duration must be positive")
    table = compute_modes(config)
    omega_fast = float(np.max([m.frequency for m in table.modes]))
    t_fast = TWO_PI / omega_fast
    dt = t_fast / 48.0 if integrator_step is None else float(integrator_step)
    if dt > t_fast / MIN_STEPS_PER_FASTEST_PERIOD:
        raise ConfigError(
            f"integrator_step {dt:.3e} s gives fewer than "
            f"{MIN_STEPS_PER_FASTEST_PERIOD} steps per fastest period "
            f"({t_fast:.3e} s)"
        )
    r0 = equilibrium_positions(config)
    disp = np.asarray(displacement, dtype=float)
    if disp.shape != r0.shape:
        raise ConfigError(f"displacement must have shape {r0.shape}, got {disp.shape}")
    e0 = potential_energy(config, r0)
    r = r0 + disp
    v = np.zeros_like(r)
    n_steps = math.ceil(duration / dt)
    sample_every = max(1, round(t_fast / dt))

    times = [0.0]
    energies = [potential_energy(config, r) - e0]
    positions = [r.copy()]
    velocities = [v.copy()]
    force = -gradient(config, r) / config.mass
    for step in range(n_steps):
        v_half = v + 0.5 * dt * (force - damping_rate * v)
        r += dt * v_half
        force = -gradient(config, r) / config.mass
        v = (v_half + 0.5 * dt * force) / (1.0 + 0.5 * damping_rate * dt)
        if (step + 1) % sample_every == 0 or step + 1 == n_steps:
            times.append((step + 1) * dt)
            energies.append(
                potential_energy(config, r) - e0
                + 0.5 * config.mass * float(np.sum(v**2))
            )
            positions.append(r.copy())
            velocities.append(v.copy())
    return RingDown(
        times=np.array(times),
        energies=np.array(energies),
        positions=np.array(positions),
        velocities=np.array(velocities),
    )


def total_energy(config: TrapConfig, positions: np.ndarray, velocities: np.ndarray) -> float:
    """Kinetic plus potential energy [J] of a chain state."""
    v = np.asarray(velocities, dtype=float)
    return potential_energy(config, positions) + 0.5 * config.mass * float(np.sum(v**2))
