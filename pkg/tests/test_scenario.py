"""Scenario data tests: CSV contract, synthetic weather, occupancy,
forecast slicing and config round trips."""

import json
import math

import numpy as np
import pytest

from hvacloop.errors import (FormatError, ParameterError, RangeError,
                             ValidationError)
from hvacloop.scenario import (DisturbanceSeries, OccupancySchedule,
                               ScenarioConfig, ambient_profile,
                               default_scenario, forecast_slice,
                               load_timeseries_csv, occupancy_profile,
                               solar_profile, synth_weather,
                               write_timeseries_csv)


def write_csv(path, rows, n_occ=1):
    header = "time,T_amb,eta_sol," + ",".join(
        f"Qocc_{i + 1}" for i in range(n_occ))
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


class TestCsvLoad:
    def test_three_row_file(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, ["0,30,500,100", "300,30.5,520,100",
                      "600,31,540,110"])
        s = load_timeseries_csv(p)
        assert len(s) == 3 and s.dt == 300.0
        np.testing.assert_allclose(s.t_amb, [30, 30.5, 31])
        assert s.source == "file"

    def test_iso_times(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, ["2022-06-01T00:00:00,30,0,0",
                      "2022-06-01T00:05:00,30,0,0"])
        s = load_timeseries_csv(p)
        assert s.dt == 300.0

    def test_single_gap_interpolated_and_flagged(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, ["0,30,500,100", "300,32,520,100", "900,34,560,120"])
        s = load_timeseries_csv(p)
        assert len(s) == 4
        assert s.repairs == (2,)
        assert s.t_amb[2] == pytest.approx(33.0)
        assert s.q_occ[2, 0] == pytest.approx(110.0)

    def test_double_gap_rejected_with_row(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, ["0,30,500,100", "300,32,520,100", "1200,34,560,100"])
        with pytest.raises(FormatError, match="row 4"):
            load_timeseries_csv(p)

    def test_negative_irradiance_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(p, ["0,30,-5,100", "300,30,0,100"])
        with pytest.raises(ValidationError):
            load_timeseries_csv(p)

    def test_roundtrip_bit_exact(self, tmp_path):
        s = synth_weather("hot-humid-summer", days=1, seed=3, n_zones=2)
        sched = OccupancySchedule()
        s = s.with_occupancy(occupancy_profile(sched, 120.0, [5, 6], 1.0))
        p = tmp_path / "out.csv"
        write_timeseries_csv(s, p)
        s2 = load_timeseries_csv(p)
        assert np.array_equal(s.t_amb, s2.t_amb)
        assert np.array_equal(s.eta_sol, s2.eta_sol)
        assert np.array_equal(s.q_occ, s2.q_occ)
        assert s2.time(0) == s.t0 and s2.dt == s.dt


class TestSynthWeather:
    def test_exact_profile_without_noise(self):
        s = synth_weather("hot-humid-summer", days=1, seed=0,
                          noise_amp=0.0)
        hours = np.arange(len(s)) * 300.0 / 3600.0
        # peak 33 at 15:00, trough 24 at 05:00
        k15 = int(15 * 12)
        k05 = int(5 * 12)
        assert s.t_amb[k15] == pytest.approx(33.0, abs=1e-6)
        assert s.t_amb[k05] == pytest.approx(24.0, abs=1e-6)
        # midnight value reproducible analytically
        ref = 24.0 + 4.5 * (1.0 + math.cos(math.pi * 9.0 / 14.0))
        assert s.t_amb[0] == pytest.approx(ref, abs=1e-6)

    def test_irradiance_zero_at_midnight(self):
        s = synth_weather("hot-humid-summer", days=2, seed=1)
        assert s.eta_sol[0] == 0.0
        assert s.eta_sol[288] == 0.0  # next midnight

    def test_deterministic_per_seed(self):
        a = synth_weather("hot-humid-summer", days=1, seed=9)
        b = synth_weather("hot-humid-summer", days=1, seed=9)
        assert np.array_equal(a.t_amb, b.t_amb)
        c = synth_weather("hot-humid-summer", days=1, seed=10)
        assert not np.array_equal(a.t_amb, c.t_amb)

    def test_unknown_profile(self):
        with pytest.raises(ParameterError):
            synth_weather("arctic", days=1, seed=0)

    def test_profile_continuity(self):
        h = np.linspace(0, 48, 2000)
        t = ambient_profile(h)
        assert np.abs(np.diff(t)).max() < 0.1
        assert solar_profile(np.array([3.0]))[0] == 0.0


class TestOccupancy:
    def test_empty_schedule_zero(self):
        sched = OccupancySchedule(())
        q = occupancy_profile(sched, 100.0, [5], days=1.0)
        assert np.all(q == 0.0)

    def test_rectangular_load(self):
        sched = OccupancySchedule(((8.0, 18.0),))
        q = occupancy_profile(sched, 100.0, [5], days=1.0)
        k_noon = 12 * 12
        assert q[k_noon, 0] == 500.0
        assert q[4 * 12, 0] == 0.0

    def test_end_exclusive_boundary(self):
        sched = OccupancySchedule(((8.0, 18.0),))
        q = occupancy_profile(sched, 100.0, [5], days=1.0)
        assert q[18 * 12, 0] == 0.0      # 18:00 sharp: unoccupied
        assert q[8 * 12, 0] == 500.0     # 08:00 sharp: occupied

    def test_overlapping_windows_rejected(self):
        with pytest.raises(ValidationError):
            OccupancySchedule(((8.0, 12.0), (11.0, 14.0)))


class TestForecast:
    def series(self):
        return synth_weather("hot-humid-summer", days=1, seed=2, n_zones=1)

    def test_single_step(self):
        s = self.series()
        f = forecast_slice(s, 10, 1)
        np.testing.assert_array_equal(f[0], s.row(11))

    def test_slice_concatenation_matches(self):
        s = self.series()
        f1 = forecast_slice(s, 0, 5)
        f2 = forecast_slice(s, 5, 5)
        both = forecast_slice(s, 0, 10)
        np.testing.assert_array_equal(np.vstack((f1, f2)), both)

    def test_perturbed_zero_sigma_equals_perfect(self):
        s = self.series()
        np.testing.assert_array_equal(
            forecast_slice(s, 3, 8, noise_sigma=0.0, seed=5),
            forecast_slice(s, 3, 8))

    def test_perturbation_deterministic_and_nonnegative(self):
        s = self.series()
        a = forecast_slice(s, 3, 8, noise_sigma=1.0, seed=5)
        b = forecast_slice(s, 3, 8, noise_sigma=1.0, seed=5)
        np.testing.assert_array_equal(a, b)
        assert np.all(a[:, 1] >= 0.0)

    def test_out_of_range(self):
        s = self.series()
        with pytest.raises(RangeError):
            forecast_slice(s, len(s) - 3, 5)


class TestConfig:
    def test_json_roundtrip(self, tmp_path):
        cfg = default_scenario(n_zones=3, seed=4)
        p = tmp_path / "sc.json"
        cfg.to_json(p)
        cfg2 = ScenarioConfig.from_json(p)
        assert cfg2.to_json() == cfg.to_json()
        assert cfg2.n_zones == 3 and cfg2.seed == 4

    def test_zone_count_propagation_checked(self):
        cfg = default_scenario(n_zones=3)
        with pytest.raises(ValidationError):
            ScenarioConfig.from_dict({**json.loads(cfg.to_json()),
                                      "n_zones": 4})

    def test_default_scenario_consistency(self):
        cfg = default_scenario(n_zones=5, seed=0)
        assert len(cfg.plant.capacitances) == 5
        assert len(cfg.model.mass_flow_zone) == 5
        assert len(cfg.plant.resistances) == 10  # 5 ambient + 5 ring edges
