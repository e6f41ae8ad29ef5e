"""Platform model unit tests: config validation, power, thermal RC, DTM."""

import dataclasses

import numpy as np
import pytest

from thermsched.platform import (
    BIG,
    LITTLE,
    N_CORES,
    PKG_NODE,
    ClusterSpec,
    ConfigError,
    InvalidFrequencyError,
    Platform,
    PowerModelParams,
    ThermalModelParams,
)


def make_cluster(cid=LITTLE, cores=(0, 1, 2, 3), levels=(0.5, 1.0, 1.5),
                 volts=(0.7, 0.8, 0.9)):
    return ClusterSpec(id=cid, core_ids=tuple(cores), freq_levels=tuple(levels),
                       voltage_of=dict(zip(levels, volts)))


class TestClusterSpec:
    def test_levels_must_ascend(self):
        with pytest.raises(ConfigError):
            make_cluster(levels=(0.5, 1.5, 1.0), volts=(0.7, 0.8, 0.9))

    def test_needs_three_levels(self):
        with pytest.raises(ConfigError):
            make_cluster(levels=(0.5, 1.0), volts=(0.7, 0.8))

    def test_voltage_must_not_decrease(self):
        with pytest.raises(ConfigError):
            make_cluster(volts=(0.9, 0.8, 0.7))

    def test_needs_four_cores(self):
        with pytest.raises(ConfigError):
            make_cluster(cores=(0, 1, 2))

    def test_level_index_rejects_non_level(self):
        spec = make_cluster()
        with pytest.raises(InvalidFrequencyError):
            spec.level_index(0.75)

    def test_step_toward_moves_one_level(self):
        spec = make_cluster()
        assert spec.step_toward(0.5, 1.5) == 1.0
        assert spec.step_toward(1.5, 0.5) == 1.0
        assert spec.step_toward(1.0, 1.0) == 1.0


class TestParamValidation:
    def test_big_cdyn_must_exceed_little(self):
        with pytest.raises(ConfigError):
            PowerModelParams(c_dyn={LITTLE: 1.0, BIG: 0.5},
                             p_leak0={LITTLE: 0.1, BIG: 0.1},
                             k_leak=0.01, idle_activity=0.0,
                             uncore={LITTLE: 0.1, BIG: 0.1})

    def test_negative_power_coefficient(self):
        with pytest.raises(ConfigError):
            PowerModelParams(c_dyn={LITTLE: 0.5, BIG: 1.0},
                             p_leak0={LITTLE: -0.1, BIG: 0.1},
                             k_leak=0.01, idle_activity=0.0,
                             uncore={LITTLE: 0.1, BIG: 0.1})

    def test_fan_must_beat_no_fan(self):
        with pytest.raises(ConfigError):
            ThermalModelParams(capacity_core=0.3, capacity_pkg=2.0,
                               g_lateral=0.3, g_core_pkg=0.4,
                               g_pkg_amb={"fan": 0.5, "no_fan": 0.6},
                               ambient=25.0, dtm_threshold=85.0,
                               dtm_release=80.0)

    def test_dtm_release_below_threshold(self):
        with pytest.raises(ConfigError):
            ThermalModelParams(capacity_core=0.3, capacity_pkg=2.0,
                               g_lateral=0.3, g_core_pkg=0.4,
                               g_pkg_amb={"fan": 1.2, "no_fan": 0.6},
                               ambient=25.0, dtm_threshold=80.0,
                               dtm_release=85.0)


class TestConstruction:
    def test_unknown_cooling(self, config):
        with pytest.raises(ConfigError):
            Platform(config, cooling="water")

    def test_dt_range(self, config):
        with pytest.raises(ConfigError):
            Platform(config, dt=0.02)
        with pytest.raises(ConfigError):
            Platform(config, dt=0.0)

    def test_euler_stability_bound(self, config):
        # shrinking the node capacity pushes the stability bound below dt
        thermal = dataclasses.replace(config.thermal, capacity_core=0.001)
        tiny = dataclasses.replace(config, thermal=thermal)
        with pytest.raises(ConfigError, match="stability"):
            Platform(tiny, dt=0.005)

    def test_initial_state(self, config):
        p = Platform(config)
        assert p.time == 0.0
        assert np.all(p.temperatures == config.thermal.ambient)
        for cid, spec in config.clusters.items():
            assert p.freqs[cid] == spec.min_freq
        assert p.mapping == [None] * N_CORES


class TestPower:
    def test_busy_power_formula(self, config):
        p = Platform(config)
        cid = p.cluster_of_core(5)
        f = config.clusters[cid].max_freq
        p.set_cluster_freq(cid, f)
        v = config.clusters[cid].voltage_of[f]
        pw = config.power
        expect = 0.5 * 0.9 * pw.c_dyn[cid] * f * v * v + pw.p_leak0[cid]
        assert p.core_power(5, 0.5, 0.9) == pytest.approx(expect, rel=1e-12)

    def test_leakage_grows_with_temperature(self, config):
        p = Platform(config)
        base = p.core_power(0, 1.0, 1.0)
        p.temperatures[0] += 30.0
        assert p.core_power(0, 1.0, 1.0) > base

    def test_idle_core_power_gated(self, config):
        # shipped calibration treats idle cores as fully gated
        p = Platform(config)
        assert p.core_power(0, 0.0, 0.0) == pytest.approx(
            config.power.idle_activity * config.power.c_dyn[LITTLE]
            * p.freqs[LITTLE] * config.clusters[LITTLE].voltage_of[p.freqs[LITTLE]] ** 2)


def run_idle(platform, seconds):
    steps = int(round(seconds / platform.dt))
    loads = [(0.0, 0.0)] * N_CORES
    for _ in range(steps):
        platform.step(loads)


class TestThermal:
    def test_idle_equilibrium_is_uncore_over_conductance(self, config):
        # zero core power: at steady state all nodes sit at the package
        # temperature, ambient + total uncore / g_pkg_amb
        p = Platform(config, cooling="fan")
        run_idle(p, 120.0)
        uncore = sum(config.power.uncore.values())
        expect = config.thermal.ambient + uncore / config.thermal.g_pkg_amb["fan"]
        assert p.temperatures[PKG_NODE] == pytest.approx(expect, abs=0.05)
        assert np.allclose(p.temperatures[:N_CORES], p.temperatures[PKG_NODE],
                           atol=0.05)

    def test_uniform_offset_decays_through_package_only(self, config):
        p = Platform(config)
        p.temperatures[:] = config.thermal.ambient + 10.0
        t_before = p.temperatures.copy()
        p.step([(0.0, 0.0)] * N_CORES)
        # no gradients between cores and package: core nodes only gain the
        # (tiny) idle power; the package node sheds heat to ambient
        assert np.allclose(p.temperatures[:N_CORES], t_before[:N_CORES], atol=1e-9)
        assert p.temperatures[PKG_NODE] < t_before[PKG_NODE]

    def test_loaded_core_is_hottest(self, config):
        p = Platform(config)
        p.set_cluster_freq(BIG, config.clusters[BIG].max_freq)
        loads = [(0.0, 0.0)] * N_CORES
        loads[5] = (1.0, 1.0)
        for _ in range(4000):
            p.step(loads)
        assert int(np.argmax(p.temperatures[:N_CORES])) == 5
        assert p.peak_temperature() > config.thermal.ambient + 5.0

    def test_fan_runs_cooler_than_no_fan(self, config):
        peaks = {}
        for cooling in ("fan", "no_fan"):
            p = Platform(config, cooling=cooling)
            p.set_cluster_freq(BIG, config.clusters[BIG].max_freq)
            loads = [(0.0, 0.0)] * N_CORES
            for c in config.clusters[BIG].core_ids:
                loads[c] = (1.0, 1.0)
            for _ in range(8000):
                p.step(loads)
            peaks[cooling] = p.peak_temperature()
        assert peaks["fan"] < peaks["no_fan"] - 3.0

    def test_peak_temperature_ignores_package_node(self, config):
        p = Platform(config)
        p.temperatures[PKG_NODE] = 99.0
        p.temperatures[2] = 50.0
        assert p.peak_temperature() == 50.0


class TestSnapshots:
    def test_restore_replays_identically(self, config):
        p = Platform(config)
        p.set_cluster_freq(LITTLE, config.clusters[LITTLE].freq_levels[1])
        loads = [(0.5, 0.8)] * N_CORES
        for _ in range(100):
            p.step(loads)
        snap = p.snapshot()
        for _ in range(100):
            p.step(loads)
        after_a = p.temperatures.copy()
        p.restore(snap)
        for _ in range(100):
            p.step(loads)
        assert np.array_equal(p.temperatures, after_a)

    def test_snapshot_is_decoupled(self, config):
        p = Platform(config)
        snap = p.snapshot()
        p.temperatures[0] = 99.0
        p.mapping[0] = 7
        assert snap.temperatures[0] == config.thermal.ambient
        assert snap.mapping[0] is None


class TestUtilization:
    def test_epoch_accumulation(self, config):
        p = Platform(config)
        loads_half = [(0.5, 1.0)] * N_CORES
        for _ in range(10):
            p.step(loads_half)
        p.finish_epoch()
        assert np.allclose(p.utilization, 0.5)
        # a second, idle epoch overwrites the vector
        for _ in range(10):
            p.step([(0.0, 0.0)] * N_CORES)
        p.finish_epoch()
        assert np.allclose(p.utilization, 0.0)


class TestDtm:
    def test_throttles_hotter_cluster_one_level(self, config):
        p = Platform(config)
        for cid in (LITTLE, BIG):
            p.set_cluster_freq(cid, config.clusters[cid].max_freq)
        p.temperatures[:N_CORES] = config.thermal.dtm_threshold + 2.0
        p.temperatures[5] += 1.0   # big cluster hottest
        spec = config.clusters[BIG]
        p.apply_dtm()
        assert p.dtm_active[BIG] is True
        assert p.freqs[BIG] == spec.freq_levels[-2]
        assert p.freqs[LITTLE] == config.clusters[LITTLE].max_freq

    def test_hysteresis_band_keeps_flag(self, config):
        p = Platform(config)
        p.temperatures[:N_CORES] = config.thermal.dtm_threshold + 1.0
        p.apply_dtm()
        hot = max((LITTLE, BIG), key=p.cluster_peak)
        f_after_trip = p.freqs[hot]
        # between release and threshold: no further throttling, flag stays
        p.temperatures[:N_CORES] = (config.thermal.dtm_threshold
                                    + config.thermal.dtm_release) / 2.0
        p.apply_dtm()
        assert p.dtm_active[hot] is True
        assert p.freqs[hot] == f_after_trip
        # below release: flags clear
        p.temperatures[:N_CORES] = config.thermal.dtm_release - 1.0
        p.apply_dtm()
        assert not any(p.dtm_active.values())
