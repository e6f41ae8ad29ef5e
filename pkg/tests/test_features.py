"""Feature extraction unit tests: requirement estimates and the 21-vector."""

import numpy as np
import pytest

from thermsched.engine import AppObs
from thermsched.features import (
    FEATURE_NAMES,
    N_FEATURES,
    FeatureVector,
    Normalizers,
    compute_normalizers,
    estimate_min_freq,
    extract_features,
    required_freq_without_aoi,
)
from thermsched.platform import BIG, LITTLE
from thermsched.workload import mean_rate

LEVELS = (0.5, 1.0, 1.5, 2.0)


def obs(app_id, core, cluster, q, target):
    return AppObs(app_id=app_id, name=f"a{app_id}", core=core, cluster=cluster,
                  q=q, l2d=0.0, qos_target=target)


class TestEstimateMinFreq:
    def test_zero_target_needs_lowest_level(self):
        assert estimate_min_freq(1e9, 0.0, 1.0, LEVELS) == (0.5, False)

    def test_unmeasured_app_flags_infeasible_at_max(self):
        assert estimate_min_freq(0.0, 1e9, 1.0, LEVELS) == (2.0, True)

    def test_linear_scaling_picks_lowest_sufficient(self):
        # q=1e9 at 1.0 GHz scales to 1.5e9 at 1.5 GHz
        assert estimate_min_freq(1e9, 1.4e9, 1.0, LEVELS) == (1.5, False)

    def test_exact_boundary_is_sufficient(self):
        assert estimate_min_freq(1e9, 1.5e9, 1.0, LEVELS) == (1.5, False)

    def test_unreachable_target_flags_max(self):
        assert estimate_min_freq(1e9, 3e9, 1.0, LEVELS) == (2.0, True)

    def test_brute_force_equivalence_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(3, 9))
            levels = tuple(sorted(rng.uniform(0.2, 3.0, size=n)))
            f_cur = levels[int(rng.integers(n))]
            q = float(rng.uniform(0.0, 2e9))
            target = float(rng.uniform(0.0, 2.5e9))
            got = estimate_min_freq(q, target, f_cur, levels)
            if target <= 0:
                expect = (levels[0], False)
            elif q <= 0:
                expect = (levels[-1], True)
            else:
                ok = [f for f in levels if q * f / f_cur >= target]
                expect = (min(ok), False) if ok else (levels[-1], True)
            assert got == expect


class TestRequiredWithoutAoi:
    def make_specs(self, config):
        return config.clusters

    def test_empty_cluster_idles_at_min(self, config):
        specs = config.clusters
        apps = [obs(0, 0, LITTLE, 1e9, 5e8)]
        req = required_freq_without_aoi(apps, 0, LITTLE,
                                        {LITTLE: 1.0, BIG: 1.0}, specs)
        assert req == specs[LITTLE].min_freq

    def test_max_over_other_apps(self, config):
        specs = config.clusters
        f_l = specs[LITTLE].freq_levels[1]
        freqs = {LITTLE: f_l, BIG: specs[BIG].min_freq}
        apps = [
            obs(0, 0, LITTLE, 1e9, 0.0),        # the AoI itself, ignored
            obs(1, 1, LITTLE, 4e8, 1e8),        # content at a low level
            obs(2, 2, LITTLE, 4e8, 4e8),        # needs the current level
            obs(3, 4, BIG, 1e8, 9e9),           # other cluster, ignored
        ]
        req = required_freq_without_aoi(apps, 0, LITTLE, freqs, specs)
        lo, _ = estimate_min_freq(4e8, 1e8, f_l, specs[LITTLE].freq_levels)
        hi, _ = estimate_min_freq(4e8, 4e8, f_l, specs[LITTLE].freq_levels)
        assert req == max(lo, hi) == hi


class TestFeatureVector:
    def test_layout_matches_names(self):
        assert N_FEATURES == 21
        assert FEATURE_NAMES[0] == "aoi_qos"
        assert FEATURE_NAMES[2] == "aoi_map_0"
        assert FEATURE_NAMES[10] == "aoi_qos_target"
        assert FEATURE_NAMES[13] == "util_0"

    def test_to_array_layout(self):
        norm = Normalizers(ref_ips=2e9, ref_l2d=1e7)
        fv = FeatureVector(aoi_qos=1e9, aoi_l2d=5e6, aoi_core=6,
                           aoi_qos_target=5e8, f_ratio_l=0.7, f_ratio_b=1.2,
                           core_utils=tuple(0.1 * i for i in range(8)))
        v = fv.to_array(norm)
        assert v.shape == (21,)
        assert v[0] == pytest.approx(0.5)
        assert v[1] == pytest.approx(0.5)
        onehot = v[2:10]
        assert onehot[6] == 1.0 and onehot.sum() == 1.0
        assert v[10] == pytest.approx(0.25)
        assert v[11] == pytest.approx(0.7)
        assert v[12] == pytest.approx(1.2)
        assert np.allclose(v[13:21], [0.1 * i for i in range(8)])

    def test_validation(self):
        with pytest.raises(ValueError):
            FeatureVector(aoi_qos=1.0, aoi_l2d=0.0, aoi_core=8,
                          aoi_qos_target=1.0, f_ratio_l=1.0, f_ratio_b=1.0,
                          core_utils=(0.0,) * 8)
        with pytest.raises(ValueError):
            FeatureVector(aoi_qos=1.0, aoi_l2d=0.0, aoi_core=0,
                          aoi_qos_target=1.0, f_ratio_l=0.0, f_ratio_b=1.0,
                          core_utils=(0.0,) * 8)
        with pytest.raises(ValueError):
            FeatureVector(aoi_qos=1.0, aoi_l2d=0.0, aoi_core=0,
                          aoi_qos_target=1.0, f_ratio_l=1.0, f_ratio_b=1.0,
                          core_utils=(0.0,) * 7)

    def test_normalizers_must_be_positive(self):
        with pytest.raises(ValueError):
            Normalizers(ref_ips=0.0, ref_l2d=1.0)


class TestExtractFeatures:
    def test_excludes_aoi_utilization(self, config):
        specs = config.clusters
        freqs = {LITTLE: specs[LITTLE].min_freq, BIG: specs[BIG].min_freq}
        util = np.array([0.9, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        apps = [obs(0, 0, LITTLE, 1e9, 5e8), obs(1, 1, LITTLE, 5e8, 1e8)]
        fv = extract_features(freqs, util, apps, 0, specs)
        assert fv.aoi_core == 0
        assert fv.core_utils[0] == 0.0      # own contribution removed
        assert fv.core_utils[1] == pytest.approx(0.4)

    def test_ratios_from_requirements(self, config):
        specs = config.clusters
        f_l = specs[LITTLE].freq_levels[1]
        f_b = specs[BIG].freq_levels[1]
        freqs = {LITTLE: f_l, BIG: f_b}
        util = np.zeros(8)
        apps = [obs(0, 2, LITTLE, 1e9, 5e8)]
        fv = extract_features(freqs, util, apps, 0, specs)
        # alone on the chip: both requirements fall to the cluster minimum
        assert fv.f_ratio_l == pytest.approx(specs[LITTLE].min_freq / f_l)
        assert fv.f_ratio_b == pytest.approx(specs[BIG].min_freq / f_b)


class TestNormalizers:
    def test_ref_ips_is_best_big_rate(self, config, library):
        norm = compute_normalizers(library, config)
        f_b = config.clusters[BIG].max_freq
        best = max(mean_rate(m, BIG, f_b, library.f_sat)
                   for m in library.models.values())
        assert norm.ref_ips == pytest.approx(best, rel=1e-12)
        assert norm.ref_l2d > 0
