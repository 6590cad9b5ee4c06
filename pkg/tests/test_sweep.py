"""Mode tracking across an axial-frequency sweep."""
import math

import numpy as np
import pytest

from tapermode.core import TWO_PI, TrapConfig
from tapermode.errors import ConfigError, SolverError
from tapermode.sweep import (
    THREE_ION_LABELS,
    TRACKING_OVERLAP_MIN,
    match_columns,
    run_sweep,
)

GRID = TWO_PI * np.linspace(47e3, 205e3, 24)


class TestMatchColumns:
    def test_recovers_permutation_and_signs(self):
        rng = np.random.default_rng(7)
        previous, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        perm = rng.permutation(5)
        flips = rng.choice([-1.0, 1.0], size=5)
        current = previous[:, perm] * flips
        order, signs = match_columns(previous, current)
        assert np.allclose(current[:, order] * signs, previous, atol=1e-12)

    def test_identity_for_small_rotation(self):
        theta = 0.05
        previous = np.eye(2)
        current = np.array([
            [math.cos(theta), -math.sin(theta)],
            [math.sin(theta), math.cos(theta)],
        ])
        order, signs = match_columns(previous, current)
        assert list(order) == [0, 1]
        assert list(signs) == [1.0, 1.0]

    def test_weak_overlap_raises(self):
        previous = np.eye(3)
        current = 0.1 * np.eye(3)  # columns too short to identify confidently
        with pytest.raises(SolverError, match="refine"):
            match_columns(previous, current)
        # and all assignments of a maximally mixed non-orthogonal frame fail
        mixed = np.full((3, 3), 1.0 / 3.0)
        with pytest.raises(SolverError):
            match_columns(previous, mixed)

    def test_threshold_is_documented_value(self):
        assert TRACKING_OVERLAP_MIN == 0.5


class TestRunSweep:
    def test_labels_follow_linear_order(self):
        result = run_sweep(TrapConfig(), GRID)
        assert result.labels == THREE_ION_LABELS
        assert result.direction == "x"
        # at the collective end the tracked frequencies sit in label order
        last = result.points[-1].modes
        assert last[0].frequency < last[1].frequency < last[2].frequency

    def test_points_sorted_even_for_unsorted_input(self):
        result = run_sweep(TrapConfig(), GRID[::-1])
        omegas = [p.omega_z for p in result.points]
        assert omegas == sorted(omegas)
        assert omegas == pytest.approx(list(GRID))

    def test_tracks_are_continuous(self):
        result = run_sweep(TrapConfig(), GRID)
        for k in range(len(result.points) - 1):
            for a, b in zip(result.points[k].modes, result.points[k + 1].modes):
                assert a.label == b.label
                assert float(a.vector @ b.vector) > 0.8

    def test_localized_to_collective_transition(self):
        result = run_sweep(TrapConfig(), GRID)
        first, last = result.points[0], result.points[-1]
        assert all(m.participation < 1.05 for m in first.modes)
        assert all(m.participation > 2.0 for m in last.modes)

    def test_linear_reference_matches_closed_forms(self):
        result = run_sweep(TrapConfig(), GRID[::6])
        gamma_of = {"com": 0.0, "rocking": 1.0, "zigzag": 12.0 / 5.0}
        for point in result.points:
            cfg = TrapConfig().replace(omega_z=point.omega_z)
            beta = cfg.beta("x")
            for mode in point.modes:
                expected = cfg.omega_x * math.sqrt(1.0 - gamma_of[mode.label] * beta**2)
                assert mode.linear_frequency == pytest.approx(expected, rel=1e-9)

    def test_threads_do_not_change_results(self):
        serial = run_sweep(TrapConfig(), GRID, threads=1)
        parallel = run_sweep(TrapConfig(), GRID, threads=4)
        for p1, p2 in zip(serial.points, parallel.points):
            assert p1.omega_z == p2.omega_z
            for m1, m2 in zip(p1.modes, p2.modes):
                assert m1.label == m2.label
                assert m1.frequency == m2.frequency
                assert np.array_equal(m1.vector, m2.vector)

    def test_generic_labels_for_other_chain_sizes(self):
        config = TrapConfig().replace(n_ions=4)
        result = run_sweep(config, GRID)
        assert sorted(result.labels) == ["m1", "m2", "m3", "m4"]

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            run_sweep(TrapConfig(), [])
