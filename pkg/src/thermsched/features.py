"""Frequency-requirement estimates and the 21-value feature vector.

The migration policy's model input describes one application of interest
(AoI) in the context of the current system state: its measured performance
and memory traffic, its QoS target, where it runs, how much slack each
cluster would have without it, and how busy every core is.  All performance
numbers are normalized by constants frozen from the shipped app library so
training and inference always agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .platform import BIG, LITTLE, N_CORES
from .workload import ips, mean_rate

FEATURE_NAMES = (
    ["aoi_qos", "aoi_l2d"]
    + [f"aoi_map_{j}" for j in range(N_CORES)]
    + ["aoi_qos_target", "f_ratio_l", "f_ratio_b"]
    + [f"util_{j}" for j in range(N_CORES)]
)
N_FEATURES = len(FEATURE_NAMES)   # 21


def estimate_min_freq(q, qos_target, f_current, freq_levels):
    """Minimum level predicted to meet the QoS target by linear scaling.

    Returns (level, infeasible).  Scaling from the current operating point:
    a level f is sufficient when q * f / f_current >= Q.  If even the top
    level fails, or nothing has been measured yet (q = 0 with Q > 0), the top
    level is returned flagged infeasible.
    """
    if qos_target <= 0:
        return freq_levels[0], False
    if q <= 0:
        return freq_levels[-1], True
    for f in freq_levels:
        if q * f / f_current >= qos_target:
            return f, False
    return freq_levels[-1], True


def required_freq_without_aoi(apps, aoi_id, cluster, freqs, cluster_specs):
    """Max of the other apps' minimum levels on `cluster` (Eq. 2 shape).

    apps: AppObs-like records with app_id, cluster, q, qos_target.
    With no other app mapped there, the cluster could idle at its lowest level.
    """
    spec = cluster_specs[cluster]
    best = None
    for a in apps:
        if a.app_id == aoi_id or a.cluster != cluster:
            continue
        f, _ = estimate_min_freq(a.q, a.qos_target, freqs[cluster], spec.freq_levels)
        if best is None or f > best:
            best = f
    return spec.min_freq if best is None else best


@dataclass(frozen=True)
class Normalizers:
    ref_ips: float       # IPS scale (max big-cluster rate among shipped models)
    ref_l2d: float       # L2D/s scale (upper percentile among shipped models)

    def __post_init__(self):
        if self.ref_ips <= 0 or self.ref_l2d <= 0:
            raise ValueError("normalizers must be > 0")


def compute_normalizers(library, platform_config) -> Normalizers:
    f_b = platform_config.clusters[BIG].max_freq
    rates = [mean_rate(m, BIG, f_b, library.f_sat) for m in library.models.values()]
    l2d_peaks = []
    for m in library.models.values():
        l2d_peaks.append(max(
            p.l2d_per_ginst * ips(p, BIG, f_b, library.f_sat) / 1e9
            for p in m.phases
        ))
    return Normalizers(
        ref_ips=float(max(rates)),
        ref_l2d=float(np.percentile(l2d_peaks, 95)),
    )


@dataclass(frozen=True)
class FeatureVector:
    """Raw feature fields; `to_array` applies normalization for the model."""

    aoi_qos: float            # measured IPS
    aoi_l2d: float            # measured L2D accesses/s
    aoi_core: int
    aoi_qos_target: float     # IPS
    f_ratio_l: float          # required-without-AoI / current, LITTLE
    f_ratio_b: float
    core_utils: tuple         # 8 values, AoI's own contribution excluded

    def __post_init__(self):
        if not 0 <= self.aoi_core < N_CORES:
            raise ValueError("aoi_core out of range")
        if self.f_ratio_l <= 0 or self.f_ratio_b <= 0:
            raise ValueError("frequency ratios must be > 0")
        if len(self.core_utils) != N_CORES:
            raise ValueError("need 8 core utilizations")

    def to_array(self, norm: Normalizers) -> np.ndarray:
        v = np.zeros(N_FEATURES)
        v[0] = self.aoi_qos / norm.ref_ips
        v[1] = self.aoi_l2d / norm.ref_l2d
        v[2 + self.aoi_core] = 1.0
        v[10] = self.aoi_qos_target / norm.ref_ips
        v[11] = self.f_ratio_l
        v[12] = self.f_ratio_b
        v[13:21] = self.core_utils
        return v


def extract_features(freqs, utilization, apps, aoi_id, cluster_specs) -> FeatureVector:
    """Assemble the feature fields for one AoI from live state.

    freqs: cluster -> current level; utilization: 8-vector over the last
    epoch; apps: AppObs list (the AoI must be among them).  Core utilizations
    exclude the AoI: one app per core, so its own core reads 0.
    """
    aoi = next(a for a in apps if a.app_id == aoi_id)
    req_l = required_freq_without_aoi(apps, aoi_id, LITTLE, freqs, cluster_specs)
    req_b = required_freq_without_aoi(apps, aoi_id, BIG, freqs, cluster_specs)
    utils = np.asarray(utilization, dtype=float).clip(0.0, 1.0).copy()
    utils[aoi.core] = 0.0
    return FeatureVector(
        aoi_qos=aoi.q,
        aoi_l2d=aoi.l2d,
        aoi_core=aoi.core,
        aoi_qos_target=aoi.qos_target,
        f_ratio_l=req_l / freqs[LITTLE],
        f_ratio_b=req_b / freqs[BIG],
        core_utils=tuple(utils),
    )
