import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import riccati_slope_series
from stochburgers.characteristics import (
    REASON_BLOWUP,
    CharacteristicEnsemble,
    advection_residual,
    exact_linear_solution,
    first_crossing,
    integrate_ensemble,
    negative_line,
    sine_wave,
    steepest_negative_slope,
    step_ito,
    step_stratonovich_heun,
    step_wong_zakai,
    write_trajectory_csv,
)
from stochburgers.noise import (
    FourierCosMode,
    FourierSinMode,
    Line,
    LinearMode,
    NoiseBasis,
    Torus,
    correction_fields,
)
from stochburgers.paths import (
    TimeGrid,
    coarsen_increments,
    hitting_times,
    integrated_exponential,
    sample_increment_block,
    sample_path,
)

EMPTY = NoiseBasis([], Line(-10, 10))
EMPTY_FIELDS = correction_fields(EMPTY, np.linspace(-1, 1, 8))


def run_deterministic(ens, dt, n_steps, stepper="ito"):
    dW = np.zeros((ens.n_paths, 0))
    for _ in range(n_steps):
        if stepper == "ito":
            step_ito(ens, EMPTY, EMPTY_FIELDS, dW, dt)
        else:
            step_stratonovich_heun(ens, EMPTY, dW, dt)
    return ens


def _linear_basis(alpha, beta=0.0):
    return NoiseBasis([LinearMode(alpha, beta)], Line(-1e6, 1e6))


class TestProfiles:
    def test_negative_line(self):
        prof = negative_line(2.0, offset=1.0)
        assert prof.u0(0.5) == pytest.approx(0.0)
        assert prof.du0(3.0) == pytest.approx(-2.0)
        assert prof.derivative_residual(np.linspace(-1, 1, 9)) < 1e-8

    def test_sine_wave_derivative(self):
        prof = sine_wave(1.0, 1, 1.0)
        assert prof.derivative_residual(np.linspace(0, 1, 33)) < 1e-8
        assert prof.min_value(np.linspace(0, 1, 4096)) == pytest.approx(-1.0, abs=1e-5)


class TestDeterministicLimits:
    def test_riccati_blowup_noise_free(self):
        # dY = -Y^2 dt with Y0 = -sigma has Y(t) = -sigma/(1 - sigma t)
        sigma, dt = 2.0, 1e-4
        ens = CharacteristicEnsemble.from_profile(negative_line(sigma, 5.0), [0.0])
        run_deterministic(ens, dt, int(0.3 / dt))
        expected = -sigma / (1 - sigma * 0.3)
        assert ens.Y[0, 0] == pytest.approx(expected, rel=5e-3)
        run_deterministic(ens, dt, int(0.3 / dt))  # past t* = 0.5: must be dead
        assert not ens.alive[0, 0]
        assert ens.dead_reason[0, 0] == REASON_BLOWUP
        assert ens.blowup_time[0, 0] == pytest.approx(1 / sigma, abs=2e-3)

    def test_flat_slope_straight_lines(self):
        prof = negative_line(0.0, offset=1.5)
        ens = CharacteristicEnsemble.from_profile(prof, [0.0, 1.0])
        run_deterministic(ens, 1e-2, 100)
        np.testing.assert_allclose(ens.Y, 0.0, atol=0)
        np.testing.assert_allclose(ens.X, [[1.5, 2.5]], rtol=1e-12)

    def test_heun_equals_ito_bitwise_without_noise(self):
        prof = sine_wave(1.0, 1, 1.0, offset=2.0)
        a = CharacteristicEnsemble.from_profile(prof, [0.1, 0.4, 0.7])
        b = CharacteristicEnsemble.from_profile(prof, [0.1, 0.4, 0.7])
        run_deterministic(a, 1e-3, 50, stepper="ito")
        run_deterministic(b, 1e-3, 50, stepper="heun")
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)


class TestStrongConvergence:
    def test_em_strong_order_half_against_exact_solution(self):
        # RMS error vs the closed form should scale ~ sqrt(dt)
        alpha, n_paths, gamma = 1.0, 60, 0.2
        profile = negative_line(1.0, offset=2.0)
        basis = _linear_basis(alpha)
        fields = correction_fields(basis, np.linspace(-2, 2, 64))
        grid = TimeGrid(0.0, 0.5, 5000)
        block = sample_increment_block(2024, range(n_paths), grid, 1)
        exact = np.array(
            [
                exact_linear_solution(gamma, profile, alpha, 0.0, sample_path(2024, i, grid, 1))[-1]
                for i in range(n_paths)
            ]
        )
        dts, errs = [], []
        for factor in (100, 10, 1):
            inc = coarsen_increments(block, factor) if factor > 1 else block
            dt = grid.dt * factor
            ens = CharacteristicEnsemble.from_profile(profile, [gamma], n_paths=n_paths)
            integrate_ensemble(ens, basis, inc, dt, "ito", fields, record_every=inc.shape[1])
            dts.append(dt)
            errs.append(float(np.sqrt(np.mean((ens.X[:, 0] - exact) ** 2))))
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert 0.35 <= slope <= 0.65

    def test_heun_approaches_ito_pathwise(self):
        profile = negative_line(1.0, offset=2.0)
        basis = _linear_basis(0.8)
        fields = correction_fields(basis, np.linspace(-2, 2, 64))
        grid = TimeGrid(0.0, 1.0, 10_000)
        block = sample_increment_block(7, range(30), grid, 1)
        diffs = []
        for factor in (100, 10, 1):
            inc = coarsen_increments(block, factor) if factor > 1 else block
            dt = grid.dt * factor
            ito = CharacteristicEnsemble.from_profile(profile, [0.0], n_paths=30)
            heun = CharacteristicEnsemble.from_profile(profile, [0.0], n_paths=30)
            integrate_ensemble(ito, basis, inc, dt, "ito", fields, record_every=inc.shape[1])
            integrate_ensemble(heun, basis, inc, dt, "heun", record_every=inc.shape[1])
            diffs.append(float(np.sqrt(np.mean((ito.X - heun.X) ** 2))))
        rate = np.polyfit(np.log([1e-2, 1e-3, 1e-4]), np.log(diffs), 1)[0]
        assert rate >= 0.5 - 0.1

    def test_positive_slope_survives_fourier_noise(self):
        basis = NoiseBasis([FourierSinMode(1, 1.0)], Torus(2 * math.pi))
        prof = sine_wave(1.0, 1, 2 * math.pi, offset=2.0)
        ens = CharacteristicEnsemble.from_profile(prof, [0.0])  # du0(0) = +1
        path = sample_path(5, 0, TimeGrid(0, 5.0, 5000), 1)
        integrate_ensemble(ens, basis, path, path.grid.dt, "heun", record_every=5000)
        assert ens.alive[0, 0]
        assert np.isfinite(ens.Y[0, 0])


class TestExactLinearSolution:
    def test_deterministic_limit(self):
        prof = negative_line(1.0, offset=2.0)
        path = sample_path(1, 0, TimeGrid(0, 1, 100), 1)
        series = exact_linear_solution(0.3, prof, 0.0, 0.0, path)
        np.testing.assert_allclose(series, 0.3 + prof.u0(0.3) * path.grid.times(), rtol=1e-12)

    def test_additive_noise_limit(self):
        prof = negative_line(1.0, offset=2.0)
        path = sample_path(2, 0, TimeGrid(0, 1, 100), 1)
        w = path.cumulative()[:, 0]
        series = exact_linear_solution(0.3, prof, 0.0, 1.0, path)
        np.testing.assert_allclose(series, 0.3 + prof.u0(0.3) * path.grid.times() + w, rtol=1e-12)

    def test_cross_validates_heun_for_general_alpha_beta(self):
        alpha, beta, n_paths = 1.0, 1.0, 100
        prof = negative_line(1.0, offset=2.0)
        basis = _linear_basis(alpha, beta)
        grid = TimeGrid(0.0, 0.5, 5000)
        block = sample_increment_block(31, range(n_paths), grid, 1)
        closed = np.array(
            [
                exact_linear_solution(0.2, prof, alpha, beta, sample_path(31, i, grid, 1))[-1]
                for i in range(n_paths)
            ]
        )
        ens = CharacteristicEnsemble.from_profile(prof, [0.2], n_paths=n_paths)
        integrate_ensemble(ens, basis, block, grid.dt, "heun", record_every=grid.n_steps)
        assert float(np.max(np.abs(ens.X[:, 0] - closed))) < 5e-2


class TestRiccatiOracle:
    def test_matches_em_away_from_pole_and_at_blowup(self):
        alpha, y0, n_paths = 1.0, -2.0, 40
        basis = _linear_basis(alpha)
        fields = correction_fields(basis, np.linspace(-2, 2, 64))
        grid = TimeGrid(0.0, 1.2, 12_000)
        prof = negative_line(2.0, offset=5.0)
        block = sample_increment_block(101, range(n_paths), grid, 1)
        ens = CharacteristicEnsemble.from_profile(prof, [0.0], n_paths=n_paths)
        traj = integrate_ensemble(ens, basis, block, grid.dt, "ito", fields, record_every=60)
        rec = (traj.times / grid.dt + 0.5).astype(int)
        t_hits = hitting_times(grid.times(), integrated_exponential(block[:, :, 0], grid.dt, alpha), -1.0 / y0)
        worst = 0.0
        for p in range(n_paths):
            oracle = riccati_slope_series(sample_path(101, p, grid, 1), alpha, y0)[rec]
            usable = traj.alive[:, p, 0] & np.isfinite(oracle) & (np.abs(oracle) <= 10.0)
            gap = np.abs(traj.Y[usable, p, 0] - oracle[usable]) / (1.0 + np.abs(oracle[usable]))
            worst = max(worst, float(np.max(gap)))
            if not ens.alive[p, 0] and not math.isnan(t_hits[p]):
                # numerical blow-up instant tracks the oracle's hitting time
                assert abs(ens.blowup_time[p, 0] - t_hits[p]) < 0.05
        assert worst < 0.1  # relative strong-error scale at dt=1e-4 away from the pole
        assert np.count_nonzero(~ens.alive[:, 0]) >= 10  # blow-ups did occur


class TestCrossing:
    def test_straight_fan_crosses_at_inverse_slope(self):
        sigma = 2.0
        prof = negative_line(sigma, offset=5.0)
        ens = CharacteristicEnsemble.from_profile(prof, [-0.1, 0.0, 0.1])
        path = sample_path(3, 0, TimeGrid(0, 1.0, 1000), 0)
        tau = first_crossing(ens, EMPTY, path, path.grid.dt)
        assert tau == pytest.approx(1 / sigma, abs=1e-12)

    def test_ordered_profile_never_crosses(self):
        prof = rising_profile()
        ens = CharacteristicEnsemble.from_profile(prof, [-0.5, 0.0, 0.5])
        path = sample_path(3, 0, TimeGrid(0, 4.0, 400), 0)
        tau = first_crossing(ens, EMPTY, path, path.grid.dt)
        assert math.isnan(tau)

    def test_crossing_matches_hitting_time_linear_noise(self):
        alpha, sigma, n_paths = 1.0, 1.0, 60
        basis = _linear_basis(alpha)
        prof = negative_line(sigma, offset=2.0)
        grid = TimeGrid(0.0, 6.0, 6000)
        block = sample_increment_block(17, range(n_paths), grid, 1)
        tau_hit = hitting_times(grid.times(), integrated_exponential(block[:, :, 0], grid.dt, alpha), 1.0 / sigma)
        ens = CharacteristicEnsemble.from_profile(prof, [-0.05, 0.05], n_paths=n_paths)
        tau_cross = first_crossing(ens, basis, block, grid.dt)
        both = ~np.isnan(tau_hit) & ~np.isnan(tau_cross)
        assert np.array_equal(np.isnan(tau_hit), np.isnan(tau_cross))
        assert np.count_nonzero(both) >= 50
        assert np.max(np.abs(tau_cross[both] - tau_hit[both])) <= 2 * grid.dt

    def test_beta_does_not_move_crossing(self):
        grid = TimeGrid(0.0, 6.0, 3000)
        prof = negative_line(1.0, offset=2.0)
        block = sample_increment_block(23, range(20), grid, 1)
        taus = []
        for beta in (0.0, 5.0):
            ens = CharacteristicEnsemble.from_profile(prof, [-0.05, 0.05], n_paths=20)
            taus.append(first_crossing(ens, _linear_basis(1.0, beta), block, grid.dt))
        nan0, nan1 = np.isnan(taus[0]), np.isnan(taus[1])
        assert np.array_equal(nan0, nan1)
        assert np.all(np.abs(taus[0][~nan0] - taus[1][~nan0]) <= 2 * grid.dt)

    def test_monotone_order_preserved_before_crossing(self):
        basis = _linear_basis(1.0)
        prof = negative_line(1.0, offset=2.0)
        path = sample_path(11, 4, TimeGrid(0, 2.0, 500), 1)
        ens = CharacteristicEnsemble.from_profile(prof, [-0.2, -0.1, 0.0, 0.1])
        for j in range(500):
            gaps_before = np.diff(ens.X, axis=1)
            step_wong_zakai(ens, basis, path.increments[None, j], path.grid.dt)
            gaps_after = np.diff(ens.X, axis=1)
            if np.any(gaps_after <= 0):
                break
            assert np.all(gaps_before > 0)

    def test_requires_increasing_fan(self):
        prof = negative_line(1.0, offset=2.0)
        ens = CharacteristicEnsemble.from_profile(prof, [0.1, 0.0])
        path = sample_path(3, 0, TimeGrid(0, 1.0, 10), 0)
        with pytest.raises(ValueError):
            first_crossing(ens, EMPTY, path, path.grid.dt)


def rising_profile():
    return negative_line(-1.0, offset=2.0)  # u0 = 2 + x, nondecreasing


class TestSteepestSlope:
    def test_linear(self):
        prof = negative_line(3.0, offset=1.0)
        assert steepest_negative_slope(prof, np.linspace(-1, 1, 2000)) == pytest.approx(3.0, rel=1e-6)

    def test_sine(self):
        prof = sine_wave(1.0, 1, 1.0)
        theta = steepest_negative_slope(prof, np.linspace(0, 1, 8192, endpoint=False))
        assert theta == pytest.approx(2 * math.pi, rel=1e-5)

    def test_nondecreasing_clamps_to_zero(self):
        assert steepest_negative_slope(rising_profile(), np.linspace(-1, 1, 100)) == 0.0


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    y0=st.floats(min_value=-3.0, max_value=3.0),
)
def test_sign_barrier_property(seed, y0):
    # while alive, the slope never crosses zero for any stepper
    basis = NoiseBasis([FourierSinMode(1, 0.7), FourierCosMode(2, 0.25)], Torus(2 * math.pi))
    fields = correction_fields(basis, basis.domain.probe_grid(128))
    path = sample_path(seed, 0, TimeGrid(0, 1.0, 400), 2)
    sign0 = np.sign(y0)
    for stepper in ("ito", "heun", "wong_zakai"):
        ens = CharacteristicEnsemble.from_profile(negative_line(-y0, offset=3.0), [0.0])
        traj = integrate_ensemble(ens, basis, path, path.grid.dt, stepper, fields, record_every=1)
        ys = traj.Y[traj.alive[:, 0, 0], 0, 0]
        assert np.all(sign0 * ys >= 0)


def test_advection_residual_time_zero():
    times = [0.0]
    positions = [np.array([0.1, 0.2])]
    u_init = np.array([1.0, 2.0])
    sampler = lambda i, x: u_init
    assert advection_residual(times, positions, u_init, sampler) == 0.0


def test_trajectory_csv_shape(tmp_path):
    prof = negative_line(1.0, offset=2.0)
    ens = CharacteristicEnsemble.from_profile(prof, [0.0, 0.5])
    path = sample_path(1, 0, TimeGrid(0, 0.1, 10), 0)
    traj = integrate_ensemble(ens, EMPTY, path, path.grid.dt, "heun", record_every=5)
    out = tmp_path / "traj.csv"
    with open(out, "w") as fh:
        write_trajectory_csv(fh, traj)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,path_index,char_index,X,Y,u_val,alive"
    assert len(lines) == 1 + len(traj.times) * 2
