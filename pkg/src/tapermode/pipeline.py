"""Closed-loop emulation: plan a frequency sweep, synthesize spectra, refit.

:func:`run_experiment` walks a grid of axial confinements. At every grid
point it computes the mode table, picks an excitation beam (a broad uniform
drive at low confinement, a focused Gaussian profile centred on the middle
ion once the chain's modes delocalize), synthesizes the driven response of
every ion across a scan window bracketing the predicted resonances,
optionally adds seeded measurement noise, and then runs the full analysis
chain — locate peaks, refit per ion with frozen centers, reconstruct signed
eigenvectors — exactly as one would on measured data. Fitted frequencies
and eigenvectors are matched to the predictions by largest overlap
(Hungarian assignment) so the report quantifies how well the measurement
side reproduces the model side.

Failures at individual grid points (a fit that does not converge, an
unstable configuration) are isolated: the point is reported with its reason
and the loop continues. Only when more than half the points fail does the
run abort. Cooling stays on during focused-beam points; its only modeled
effect is the damping term, optionally scaled by ``focused_damping_scale``
to emulate extra damping from the always-on broad beam.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .analysis import analyze_spectrum, fit_lorentzian_sum
from .core import TWO_PI, TrapConfig
from .dynamics import (
    BeamSpec,
    DriveScan,
    SpectrumResult,
    beam_weights,
    linear_response_spectrum,
    simulate_spectrum,
    wrap_phase,
)
from .equilibrium import equilibrium_positions
from .errors import ConfigError, SolverError, TapermodeError
from .modes import compute_modes

#: Grid used when a plan does not specify one: 12 points, 47-205 kHz.
DEFAULT_OMEGA_Z_GRID = TWO_PI * np.linspace(47e3, 205e3, 12)

#: Components smaller than this in the prediction are excluded from the
#: sign comparison (their fitted sign carries no information).
SIGN_CHECK_THRESHOLD = 0.1

#: Spectrum synthesis backends.
SPECTRUM_SOURCES = ("response", "linearized", "full")


@dataclass(frozen=True)
class ExperimentPlan:
    """Sweep grid plus every knob of the emulated measurement."""

    omega_z_values: np.ndarray = None  #: axial frequencies [rad/s]
    direction: str = "x"
    damping_rate: float = TWO_PI * 400.0      #: [rad/s]
    force_amplitude: float = 1e-23            #: [N]
    scan_points: int = 800
    beam_crossover: float = TWO_PI * 135e3    #: focused beam at/above this [rad/s]
    beam_waist: float = 17e-6                 #: Gaussian 1/e^2 radius [m]
    settle_cycles: int = 30
    measure_cycles: int = 20
    integrator_step: float | None = None
    steps_per_period: int | None = None
    spectrum_source: str = "response"
    noise_fraction: float = 0.0
    focused_damping_scale: float = 1.0

    def __post_init__(self) -> None:
        grid = DEFAULT_OMEGA_Z_GRID if self.omega_z_values is None else self.omega_z_values
        grid = np.atleast_1d(np.asarray(grid, dtype=float))
        if grid.size < 1 or np.any(grid <= 0):
            raise ConfigError("omega_z_values must contain positive frequencies")
        grid = np.sort(grid)
        grid.flags.writeable = False
        object.__setattr__(self, "omega_z_values", grid)
        if self.direction not in ("x", "y"):
            raise ConfigError("plan direction must be 'x' or 'y'")
        if self.spectrum_source not in SPECTRUM_SOURCES:
            raise ConfigError(
                f"spectrum_source must be one of {SPECTRUM_SOURCES}, "
                f"got {self.spectrum_source!r}"
            )
        for name in ("damping_rate", "force_amplitude", "beam_crossover", "beam_waist",
                     "focused_damping_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.scan_points < 16:
            raise ConfigError("scan_points must be at least 16")
        if self.noise_fraction < 0:
            raise ConfigError("noise_fraction must be non-negative")

    def to_mapping(self) -> dict:
        """JSON-sendable mapping of the plan (frequencies in Hz)."""
        return {
            "omega_z_hz": [float(w / TWO_PI) for w in self.omega_z_values],
            "direction": self.direction,
            "damping_hz": self.damping_rate / TWO_PI,
            "force_newton": self.force_amplitude,
            "scan_points": self.scan_points,
            "beam_crossover_hz": self.beam_crossover / TWO_PI,
            "beam_waist_m": self.beam_waist,
            "settle_cycles": self.settle_cycles,
            "measure_cycles": self.measure_cycles,
            "integrator_step_s": self.integrator_step,
            "steps_per_period": self.steps_per_period,
            "spectrum_source": self.spectrum_source,
            "noise_fraction": self.noise_fraction,
            "focused_damping_scale": self.focused_damping_scale,
        }


@dataclass(frozen=True)
class PointResult:
    """Prediction-vs-refit comparison at one axial confinement.

    ``failure`` is ``None`` for a successful point; otherwise it holds the
    reason and the fitted arrays are NaN.
    """

    omega_z: float
    beam: str                       #: "broad" or "focused"
    drive_weights: np.ndarray       #: [N]
    theory_frequencies: np.ndarray  #: [K] ascending [rad/s]
    theory_components: np.ndarray   #: [N, K]
    fitted_frequencies: np.ndarray  #: [K], matched to prediction order
    fitted_hwhms: np.ndarray        #: [K] [rad/s]
    fitted_components: np.ndarray   #: [N, K], sign-aligned to prediction
    frequency_errors: np.ndarray    #: [K] |fitted - predicted| [rad/s]
    component_errors: np.ndarray    #: [N, K] |fitted - predicted|
    sign_matches: np.ndarray        #: [K] bool over components > threshold
    spectrum: SpectrumResult | None
    notes: tuple[str, ...]
    failure: str | None = None


@dataclass(frozen=True)
class ReproductionReport:
    """Everything :func:`run_experiment` measured, plus a summary."""

    config: TrapConfig
    plan: ExperimentPlan
    seed: int | None
    points: tuple[PointResult, ...]

    @property
    def succeeded(self) -> tuple[PointResult, ...]:
        return tuple(p for p in self.points if p.failure is None)

    @property
    def summary(self) -> dict:
        good = self.succeeded
        n_ions = self.config.n_ions
        n_modes = self.points[0].theory_frequencies.size
        result = {
            "n_points": len(self.points),
            "n_failed": len(self.points) - len(good),
            "n_modes": n_modes,
            "components_compared": len(good) * n_ions * n_modes,
            "beams": {
                "broad": sum(1 for p in self.points if p.beam == "broad"),
                "focused": sum(1 for p in self.points if p.beam == "focused"),
            },
        }
        if good:
            result.update(
                max_frequency_error_hz=max(
                    float(np.max(p.frequency_errors)) for p in good
                ) / TWO_PI,
                max_frequency_error_hwhm=max(
                    float(np.max(p.frequency_errors / p.fitted_hwhms)) for p in good
                ),
                max_component_error=max(
                    float(np.max(p.component_errors)) for p in good
                ),
                signs_all_match=all(bool(np.all(p.sign_matches)) for p in good),
            )
        return result

    def to_json_dict(self) -> dict:
        """Deterministic plain-Python structure (frequencies in Hz)."""
        return {
            "config": self.config.to_mapping(),
            "plan": self.plan.to_mapping(),
            "seed": self.seed,
            "summary": self.summary,
            "points": [
                {
                    "omega_z_hz": p.omega_z / TWO_PI,
                    "beam": p.beam,
                    "failure": p.failure,
                    "drive_weights": p.drive_weights.tolist(),
                    "theory_frequencies_hz": (p.theory_frequencies / TWO_PI).tolist(),
                    "fitted_frequencies_hz": (p.fitted_frequencies / TWO_PI).tolist(),
                    "fitted_hwhms_hz": (p.fitted_hwhms / TWO_PI).tolist(),
                    "frequency_errors_hz": (p.frequency_errors / TWO_PI).tolist(),
                    "theory_components": p.theory_components.tolist(),
                    "fitted_components": p.fitted_components.tolist(),
                    "component_errors": p.component_errors.tolist(),
                    "sign_matches": [bool(s) for s in p.sign_matches],
                    "notes": list(p.notes),
                }
                for p in self.points
            ],
        }


def select_beam(config: TrapConfig, plan: ExperimentPlan, omega_z: float) -> BeamSpec:
    """Excitation beam for one grid point.

    Below the crossover the whole chain is driven by a broad beam; at and
    above it a focused beam of the plan's waist is centred on the middle
    ion, whose modes the drive must address individually.
    """
    if omega_z < plan.beam_crossover:
        return BeamSpec(
            kind="broad",
            force_amplitude=plan.force_amplitude,
            direction=plan.direction,
        )
    point_config = config.replace(omega_z=omega_z)
    z = equilibrium_positions(point_config)[:, 2]
    return BeamSpec(
        kind="focused",
        force_amplitude=plan.force_amplitude,
        direction=plan.direction,
        waist_radius=plan.beam_waist,
        center_z=float(z[(config.n_ions - 1) // 2]),
    )


def _synthesize(config, plan, beam, drive_frequencies, damping_rate) -> SpectrumResult:
    scan = DriveScan(
        drive_frequencies=drive_frequencies,
        damping_rate=damping_rate,
        settle_cycles=plan.settle_cycles,
        measure_cycles=plan.measure_cycles,
        integrator_step=plan.integrator_step,
        steps_per_period=plan.steps_per_period,
    )
    if plan.spectrum_source == "response":
        return linear_response_spectrum(config, scan, beam)
    return simulate_spectrum(config, scan, beam, model=plan.spectrum_source)


def _add_noise(spectrum: SpectrumResult, fraction: float, rng) -> SpectrumResult:
    if fraction == 0.0:
        return spectrum
    amp = spectrum.amplitude + fraction * spectrum.amplitude.max() * rng.standard_normal(
        spectrum.amplitude.shape
    )
    phase = wrap_phase(spectrum.phase + fraction * rng.standard_normal(spectrum.phase.shape))
    return SpectrumResult(
        drive_frequencies=spectrum.drive_frequencies,
        amplitude=np.clip(amp, 0.0, None),
        phase=phase,
        direction=spectrum.direction,
        damping_rate=spectrum.damping_rate,
        model=spectrum.model,
        steps_per_period=spectrum.steps_per_period,
        settle_cycles=spectrum.settle_cycles,
        measure_cycles=spectrum.measure_cycles,
    )


def _match_to_theory(fitted: np.ndarray, theory: np.ndarray):
    """Pair fitted columns with predicted columns by largest |overlap|.

    Returns (order, signs, overlaps): fitted column ``order[j]`` times
    ``signs[j]`` corresponds to predicted column ``j``.
    """
    overlap = fitted.T @ theory
    rows, cols = linear_sum_assignment(-np.abs(overlap))
    order = np.empty(theory.shape[1], dtype=int)
    signs = np.empty(theory.shape[1])
    strengths = np.empty(theory.shape[1])
    for r, c in zip(rows, cols):
        order[c] = r
        s = np.sign(overlap[r, c])
        signs[c] = s if s != 0 else 1.0
        strengths[c] = abs(overlap[r, c])
    return order, signs, strengths


def _failed_point(config, plan, omega_z: float, reason: str) -> PointResult:
    n = config.n_ions
    nan_k = np.full(n, np.nan)
    nan_nk = np.full((n, n), np.nan)
    return PointResult(
        omega_z=omega_z,
        beam="broad" if omega_z < plan.beam_crossover else "focused",
        drive_weights=np.full(n, np.nan),
        theory_frequencies=nan_k,
        theory_components=nan_nk,
        fitted_frequencies=nan_k.copy(),
        fitted_hwhms=nan_k.copy(),
        fitted_components=nan_nk.copy(),
        frequency_errors=nan_k.copy(),
        component_errors=nan_nk.copy(),
        sign_matches=np.zeros(n, dtype=bool),
        spectrum=None,
        notes=(),
        failure=reason,
    )


def _run_point(config: TrapConfig, plan: ExperimentPlan, omega_z: float, seed_child) -> PointResult:
    point_config = config.replace(omega_z=omega_z)
    table = compute_modes(point_config, directions=(plan.direction,))
    modes = table.by_direction(plan.direction)
    theory_freqs = np.array([m.frequency for m in modes])
    theory_matrix = np.column_stack([m.vector for m in modes])

    beam = select_beam(config, plan, omega_z)
    weights = beam_weights(beam, equilibrium_positions(point_config))
    damping = plan.damping_rate * (
        plan.focused_damping_scale if beam.kind == "focused" else 1.0
    )
    drive = np.linspace(0.9 * theory_freqs.min(), 1.1 * theory_freqs.max(), plan.scan_points)
    spectrum = _synthesize(point_config, plan, beam, drive, damping)
    spectrum = _add_noise(spectrum, plan.noise_fraction, np.random.default_rng(seed_child))

    result = analyze_spectrum(spectrum, n_modes=theory_freqs.size)
    order, signs, strengths = _match_to_theory(result.vectors.components, theory_matrix)

    fitted_freqs = result.lorentzians.centers[order]
    fitted_hwhms = result.lorentzians.hwhms[order]
    fitted_matrix = result.vectors.components[:, order] * signs

    component_errors = np.abs(fitted_matrix - theory_matrix)
    checked = np.abs(theory_matrix) > SIGN_CHECK_THRESHOLD
    sign_ok = (np.sign(fitted_matrix) == np.sign(theory_matrix)) | ~checked
    notes = list(result.vectors.ambiguity_notes)
    for j, s in enumerate(strengths):
        if s < 0.8:
            notes.append(f"mode {j}: fitted/predicted overlap only {s:.3f}")

    return PointResult(
        omega_z=omega_z,
        beam=beam.kind,
        drive_weights=weights,
        theory_frequencies=theory_freqs,
        theory_components=theory_matrix,
        fitted_frequencies=fitted_freqs,
        fitted_hwhms=fitted_hwhms,
        fitted_components=fitted_matrix,
        frequency_errors=np.abs(fitted_freqs - theory_freqs),
        component_errors=component_errors,
        sign_matches=np.array([bool(np.all(sign_ok[:, j])) for j in range(len(modes))]),
        spectrum=spectrum,
        notes=tuple(notes),
    )


def run_experiment(
    config: TrapConfig,
    plan: ExperimentPlan,
    seed: int | None = None,
    threads: int = 1,
) -> ReproductionReport:
    """Run the closed loop over the plan's grid and score the round trip.

    ``seed`` makes the synthetic measurement noise reproducible (each grid
    point draws from an independently spawned child stream, so results do
    not depend on evaluation order or thread count). ``threads``
    parallelizes over grid points. Raises :class:`SolverError` only when
    more than half the points fail; individual failures are recorded in
    their :class:`PointResult`.
    """
    grid = plan.omega_z_values
    children = np.random.SeedSequence(seed).spawn(grid.size)

    def solve(i: int) -> PointResult:
        omega_z = float(grid[i])
        try:
            return _run_point(config, plan, omega_z, children[i])
        except TapermodeError as exc:
            return _failed_point(config, plan, omega_z, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = tuple(pool.map(solve, range(grid.size)))
    else:
        points = tuple(solve(i) for i in range(grid.size))

    failures = [p for p in points if p.failure is not None]
    if 2 * len(failures) > len(points):
        detail = "; ".join(
            f"{p.omega_z / TWO_PI:.4g} Hz: {p.failure}" for p in failures[:5]
        )
        raise SolverError(
            f"{len(failures)} of {len(points)} sweep points failed ({detail})"
        )
    return ReproductionReport(config=config, plan=plan, seed=seed, points=points)


@dataclass(frozen=True)
class AxialComCheck:
    """Fitted axial centre-of-mass resonance against its exact value."""

    nominal_frequency: float  #: [rad/s] — the axial confinement itself
    fitted_frequency: float   #: [rad/s]
    relative_error: float


def axial_com_check(
    config: TrapConfig,
    damping_rate: float = TWO_PI * 200.0,
    force_amplitude: float = 1e-23,
    scan_points: int = 201,
) -> AxialComCheck:
    """Drive the chain uniformly along z and refit the centre-of-mass peak.

    Uniform drive couples only to the centre-of-mass mode, whose frequency
    equals the axial confinement exactly for any ion number and taper, so
    this is an end-to-end calibration of the synthesis-plus-fit loop.
    """
    nominal = config.omega_z
    scan = DriveScan(
        drive_frequencies=np.linspace(0.9 * nominal, 1.1 * nominal, scan_points),
        damping_rate=damping_rate,
    )
    beam = BeamSpec(kind="broad", force_amplitude=force_amplitude, direction="z")
    spectrum = linear_response_spectrum(config, scan, beam)
    fit = fit_lorentzian_sum(spectrum.drive_frequencies, spectrum.summed_amplitude(), 1)
    fitted = float(fit.centers[0])
    return AxialComCheck(
        nominal_frequency=nominal,
        fitted_frequency=fitted,
        relative_error=abs(fitted - nominal) / nominal,
    )
