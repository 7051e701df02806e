import numpy as np
import pytest
from dataclasses import replace

from sagtwin import plant
from sagtwin.errors import ConfigError
from sagtwin.fuzzy import YLim, default_membership_spec, default_rule_base
from sagtwin.plant import (Disturbance, DisturbanceKind, ExcitationConfig, PlantConfig,
                           combined_factors, disturbance_factors, init_state,
                           run_real_system, step_plant)

QUIET = PlantConfig(noise_std=(0.0, 0.0), actuation_noise_std=0.0,
                    cv_drift_std=(0.0, 0.0), cv_walk_std=(0.0, 0.0))


class TestDisturbanceFactors:
    def test_liner_wear_five_months_full_ramp(self):
        d = Disturbance(DisturbanceKind.LINER_WEAR, magnitude=5.0, onset=0.0, ramp=100.0)
        f1, f2 = disturbance_factors(d, t=1000.0, u3=9.5, u3_nom=9.5)
        assert f1 == pytest.approx(1.10)
        assert f2 == pytest.approx(1.10)

    def test_hardness_ten_percent(self):
        d = Disturbance(DisturbanceKind.ORE_HARDNESS, magnitude=0.10, onset=0.0, ramp=0.0)
        assert disturbance_factors(d, 50.0, 9.5, 9.5) == (pytest.approx(1.10), pytest.approx(1.10))

    def test_zero_magnitude_identity(self):
        for kind in DisturbanceKind:
            d = Disturbance(kind, magnitude=0.0)
            assert disturbance_factors(d, 1e6, 9.5, 9.5) == (1.0, 1.0)

    def test_wear_speed_weighting(self):
        d = Disturbance(DisturbanceKind.LINER_WEAR, magnitude=5.0, onset=0.0, ramp=0.0)
        f1, f2 = disturbance_factors(d, 10.0, u3=4.75, u3_nom=9.5)
        assert f1 == pytest.approx(1.10)
        assert f2 == pytest.approx(1.05)

    def test_ramp_continuity(self):
        d = Disturbance(DisturbanceKind.ORE_HARDNESS, magnitude=0.1, onset=100.0, ramp=50.0)
        ts = np.linspace(0, 250, 2001)
        f1 = np.array([disturbance_factors(d, t, 9.5, 9.5)[0] for t in ts])
        assert np.max(np.abs(np.diff(f1))) < 1e-3  # no jumps with a finite ramp

    def test_factors_multiply(self):
        ds = [Disturbance(DisturbanceKind.ORE_HARDNESS, 0.1),
              Disturbance(DisturbanceKind.LINER_WEAR, 5.0)]
        f1, f2 = combined_factors(ds, 10.0, 9.5, 9.5)
        assert f1 == pytest.approx(1.1 * 1.1)

    def test_negative_magnitude_rejected(self):
        with pytest.raises(ConfigError):
            Disturbance(DisturbanceKind.LINER_WEAR, magnitude=-1.0)


class TestStepPlant:
    def test_fixed_point_noiseless(self):
        state = init_state(QUIET)
        usp = np.array(QUIET.u_nom)
        for _ in range(10):
            u, y, _ = step_plant(QUIET, state, usp)
        assert np.allclose(u, QUIET.u_nom)
        assert np.allclose(y, QUIET.y_nom)

    def test_step_response_monotone(self):
        state = init_state(QUIET)
        usp = np.array(QUIET.u_nom)
        for _ in range(5):
            step_plant(QUIET, state, usp)
        usp378 = usp.copy()
        usp378[0] *= 1.10
        ys = []
        for _ in range(620):
            _, y, _ = step_plant(QUIET, state, usp378)
            ys.append(y[0])
        ys = np.array(ys)
        assert np.all(np.diff(ys) >= -1e-9)
        expected = QUIET.y_nom[0] + QUIET.gains[0][0] * (usp378[0] - QUIET.u_nom[0])
        assert ys[-1] == pytest.approx(expected, rel=1e-3)

    def test_hardness_scales_steady_output(self):
        base_state = init_state(QUIET)
        usp = np.array(QUIET.u_nom)
        for _ in range(50):
            _, y_base, _ = step_plant(QUIET, base_state, usp)
        dist = Disturbance(DisturbanceKind.ORE_HARDNESS, 0.10, onset=0.0, ramp=0.0)
        state = init_state(QUIET, [dist])
        for _ in range(50):
            _, y_dist, _ = step_plant(QUIET, state, usp)
        assert np.allclose(y_dist, 1.10 * y_base, rtol=1e-9)

    def test_outputs_clamped_nonnegative_and_bounded_u(self):
        cfg = replace(QUIET, noise_std=(0.5, 0.5))
        state = init_state(cfg)
        usp = np.array([1e9, -1e9, 0.0])
        for _ in range(20):
            u, y, _ = step_plant(cfg, state, usp)
            assert np.all(y >= 0.0)
            assert np.all(u >= np.array(cfg.u_lo) - 1e-9)
            assert np.all(u <= np.array(cfg.u_hi) + 1e-9)


class TestRunRealSystem:
    def _run(self, seed=123, horizon=40, disturbances=None):
        cfg = replace(QUIET, seed=seed, noise_std=(0.002, 0.002))
        return run_real_system(
            cfg, default_rule_base(), default_membership_spec(),
            YLim(5500.0, 13300.0), horizon=horizon, disturbances=disturbances,
            excitation=ExcitationConfig(enabled=True),
        )

    def test_seeded_reproducibility(self):
        t1 = self._run()
        t2 = self._run()
        assert np.array_equal(t1.values, t2.values)
        assert np.array_equal(t1.ts, t2.ts)

    def test_different_seeds_differ(self):
        assert not np.array_equal(self._run(seed=1).values, self._run(seed=2).values)

    def test_raw_rate_and_flags(self):
        table = self._run(horizon=10)
        assert len(table) == 60
        assert np.all(np.diff(table.ts) == 5)
        assert table.sag_on.all() and table.expert_online.all()

    def test_no_disturbance_keeps_unit_factors(self):
        cfg = replace(QUIET, seed=5)
        state = init_state(cfg, [])
        for _ in range(10):
            step_plant(cfg, state, np.array(cfg.u_nom))
        assert state.factors == (1.0, 1.0)

    def test_horizon_validated(self):
        with pytest.raises(ValueError):
            self._run(horizon=0)
