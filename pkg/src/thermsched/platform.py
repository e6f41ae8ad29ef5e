"""Two-cluster multi-core platform model.

Deterministic discrete-time model of a 4+4 LITTLE/big processor with
per-cluster DVFS, a simple activity-based power model, a 9-node lumped
RC thermal network (8 cores + package), and emergency thermal throttling
(DTM).  All state advances in fixed explicit-Euler steps.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

LITTLE = "LITTLE"
BIG = "big"
CLUSTERS = (LITTLE, BIG)
N_CORES = 8
PKG_NODE = 8  # index of the package node in the temperature vector


class InvalidFrequencyError(ValueError):
    """Requested frequency is not one of the cluster's levels."""


class ConfigError(ValueError):
    """Platform configuration violates an invariant."""


@dataclass(frozen=True)
class ClusterSpec:
    """One DVFS domain: four cores sharing a frequency/voltage level."""

    id: str
    core_ids: tuple
    freq_levels: tuple        # GHz, strictly ascending
    voltage_of: dict          # GHz -> V, monotonically non-decreasing

    def __post_init__(self):
        if self.id not in CLUSTERS:
            raise ConfigError(f"unknown cluster id {self.id!r}")
        if len(self.core_ids) != 4:
            raise ConfigError(f"cluster {self.id} must have 4 cores")
        if len(self.freq_levels) < 3:
            raise ConfigError(f"cluster {self.id} needs >= 3 frequency levels")
        if any(b <= a for a, b in zip(self.freq_levels, self.freq_levels[1:])):
            raise ConfigError(f"cluster {self.id} levels must be strictly ascending")
        volts = [self.voltage_of[f] for f in self.freq_levels]
        if any(b < a for a, b in zip(volts, volts[1:])):
            raise ConfigError(f"cluster {self.id} voltage must be non-decreasing")

    @property
    def min_freq(self):
        return self.freq_levels[0]

    @property
    def max_freq(self):
        return self.freq_levels[-1]

    def level_index(self, f):
        try:
            return self.freq_levels.index(f)
        except ValueError:
            raise InvalidFrequencyError(
                f"{f} GHz is not a level of cluster {self.id} {self.freq_levels}"
            ) from None

    def step_toward(self, current, target):
        """Move one level from `current` toward `target` (both must be levels)."""
        i, j = self.level_index(current), self.level_index(target)
        if i < j:
            return self.freq_levels[i + 1]
        if i > j:
            return self.freq_levels[i - 1]
        return current


@dataclass(frozen=True)
class PowerModelParams:
    """Activity-based power model.

    Per-core dynamic power is activity * c_dyn * f * V^2; occupied cores add
    leakage p_leak0 * (1 + k_leak * (T - ambient)).  Idle cores are treated
    as power-gated apart from the idle activity floor.  Uncore power is
    attributed to the package node.
    """

    c_dyn: dict               # cluster id -> W / (GHz * V^2)
    p_leak0: dict             # cluster id -> W
    k_leak: float             # 1/degC
    idle_activity: float      # 0..1
    uncore: dict              # cluster id -> W

    def __post_init__(self):
        vals = list(self.c_dyn.values()) + list(self.p_leak0.values()) + \
            [self.k_leak, self.idle_activity] + list(self.uncore.values())
        if any(v < 0 for v in vals):
            raise ConfigError("power coefficients must be >= 0")
        if self.c_dyn[BIG] <= self.c_dyn[LITTLE]:
            raise ConfigError("big-cluster c_dyn must exceed LITTLE-cluster c_dyn")


@dataclass(frozen=True)
class ThermalModelParams:
    """Lumped RC network parameters for 8 core nodes plus one package node."""

    capacity_core: float      # J/degC per core node
    capacity_pkg: float       # J/degC
    g_lateral: float          # W/degC between adjacent cores in a cluster
    g_core_pkg: float         # W/degC core -> package
    g_pkg_amb: dict           # cooling variant ("fan"|"no_fan") -> W/degC
    ambient: float            # degC
    dtm_threshold: float      # degC
    dtm_release: float        # degC

    def __post_init__(self):
        if min(self.capacity_core, self.capacity_pkg, self.g_lateral,
               self.g_core_pkg, *self.g_pkg_amb.values()) <= 0:
            raise ConfigError("capacities and conductances must be > 0")
        if self.g_pkg_amb["fan"] <= self.g_pkg_amb["no_fan"]:
            raise ConfigError("fan conductance must exceed no_fan conductance")
        if self.dtm_release >= self.dtm_threshold:
            raise ConfigError("dtm_release must be below dtm_threshold")


@dataclass(frozen=True)
class PlatformConfig:
    clusters: dict            # cluster id -> ClusterSpec
    power: PowerModelParams
    thermal: ThermalModelParams

    def __post_init__(self):
        if set(self.clusters) != set(CLUSTERS):
            raise ConfigError("exactly the LITTLE and big clusters must exist")
        cores = sorted(c for spec in self.clusters.values() for c in spec.core_ids)
        if cores != list(range(N_CORES)):
            raise ConfigError("core ids must partition 0..7")

    def cluster_of_core(self, core):
        for spec in self.clusters.values():
            if core in spec.core_ids:
                return spec.id
        raise ValueError(f"no cluster owns core {core}")


@dataclass
class PlatformState:
    """Snapshot of the instantaneous simulator state."""

    time: float
    temperatures: np.ndarray      # 9-vector, degC
    freqs: dict                   # cluster id -> GHz
    mapping: list                 # per-core app id or None
    utilization: np.ndarray       # per-core busy fraction over the last epoch
    dtm_active: dict              # cluster id -> bool

    def copy(self):
        return PlatformState(
            time=self.time,
            temperatures=self.temperatures.copy(),
            freqs=dict(self.freqs),
            mapping=list(self.mapping),
            utilization=self.utilization.copy(),
            dtm_active=dict(self.dtm_active),
        )


def _conductance_matrix(cfg: PlatformConfig, cooling: str) -> np.ndarray:
    """K such that heat flow out of the nodes is K @ (T - ambient)."""
    th = cfg.thermal
    g = np.zeros((9, 9))

    def couple(i, j, cond):
        g[i, i] += cond
        g[j, j] += cond
        g[i, j] -= cond
        g[j, i] -= cond

    for spec in cfg.clusters.values():
        ids = sorted(spec.core_ids)
        for a, b in zip(ids, ids[1:]):
            couple(a, b, th.g_lateral)
        for c in ids:
            couple(c, PKG_NODE, th.g_core_pkg)
    g[PKG_NODE, PKG_NODE] += th.g_pkg_amb[cooling]
    return g


class Platform:
    """Mutable simulator for the two-cluster processor.

    Owns only the physical state (temperatures, frequencies, mapping,
    utilization accounting).  Workload progress is advanced by the caller
    handing in per-core power activity; see `engine.Engine` for the full
    application-aware loop.
    """

    def __init__(self, config: PlatformConfig, cooling="fan", dt=0.005):
        if cooling not in config.thermal.g_pkg_amb:
            raise ConfigError(f"unknown cooling variant {cooling!r}")
        if not 0 < dt <= 0.010:
            raise ConfigError("dt must be in (0, 10 ms]")
        self.config = config
        self.cooling = cooling
        self.dt = dt
        self._k = _conductance_matrix(config, cooling)
        # Explicit-Euler stability margin: dt below C_i / (total conductance at i).
        caps = np.array([config.thermal.capacity_core] * 8 + [config.thermal.capacity_pkg])
        bound = float(np.min(caps / np.diag(self._k)))
        if dt >= bound:
            raise ConfigError(
                f"dt={dt}s violates the Euler stability bound {bound:.4f}s"
            )
        self._caps = caps
        self._core_cluster = [config.cluster_of_core(c) for c in range(N_CORES)]
        self.reset()

    def reset(self):
        th = self.config.thermal
        self.time = 0.0
        self.temperatures = np.full(9, th.ambient, dtype=float)
        self.freqs = {cid: spec.min_freq for cid, spec in self.config.clusters.items()}
        self.mapping = [None] * N_CORES
        self.utilization = np.zeros(N_CORES)
        self.dtm_active = {cid: False for cid in CLUSTERS}
        self._busy_accum = np.zeros(N_CORES)
        self._busy_window = 0.0

    # -- state snapshots -------------------------------------------------

    def snapshot(self) -> PlatformState:
        return PlatformState(
            time=self.time,
            temperatures=self.temperatures.copy(),
            freqs=dict(self.freqs),
            mapping=list(self.mapping),
            utilization=self.utilization.copy(),
            dtm_active=dict(self.dtm_active),
        )

    def restore(self, state: PlatformState):
        self.time = state.time
        self.temperatures = state.temperatures.copy()
        self.freqs = dict(state.freqs)
        self.mapping = list(state.mapping)
        self.utilization = state.utilization.copy()
        self.dtm_active = dict(state.dtm_active)
        self._busy_accum = np.zeros(N_CORES)
        self._busy_window = 0.0

    # -- control knobs -----------------------------------------------------

    def set_cluster_freq(self, cluster, f):
        """Set a cluster's level; takes effect from the next step."""
        spec = self.config.clusters[cluster]
        spec.level_index(f)   # raises InvalidFrequencyError if not a level
        self.freqs[cluster] = f

    def core_power(self, core, busy_frac, activity):
        """Power drawn by one core this step (W)."""
        cid = self._core_cluster[core]
        f = self.freqs[cid]
        v = self.config.clusters[cid].voltage_of[f]
        p = self.config.power
        if busy_frac > 0.0:
            dyn = busy_frac * activity * p.c_dyn[cid] * f * v * v
            leak = p.p_leak0[cid] * (
                1.0 + p.k_leak * (self.temperatures[core] - self.config.thermal.ambient)
            )
            return dyn + leak
        return p.idle_activity * p.c_dyn[cid] * f * v * v

    def step(self, core_loads, dt=None):
        """Advance the thermal state one Euler step.

        core_loads: list of 8 (busy_frac, activity) pairs for this step.
        """
        dt = self.dt if dt is None else dt
        power = np.zeros(9)
        for core, (busy, act) in enumerate(core_loads):
            power[core] = self.core_power(core, busy, act)
            self._busy_accum[core] += busy * dt
        power[PKG_NODE] = sum(self.config.power.uncore.values())
        delta = self.temperatures - self.config.thermal.ambient
        self.temperatures = self.temperatures + (dt / self._caps) * (power - self._k @ delta)
        self.time += dt
        self._busy_window += dt

    def finish_epoch(self):
        """Fold accumulated busy time into the utilization vector and reset."""
        if self._busy_window > 0:
            self.utilization = self._busy_accum / self._busy_window
        self._busy_accum = np.zeros(N_CORES)
        self._busy_window = 0.0

    # -- observations ------------------------------------------------------

    def peak_temperature(self):
        """Hottest of the 8 core nodes (package node excluded)."""
        return float(np.max(self.temperatures[:N_CORES]))

    def cluster_peak(self, cluster):
        ids = list(self.config.clusters[cluster].core_ids)
        return float(np.max(self.temperatures[ids]))

    def free_cores(self):
        return [c for c in range(N_CORES) if self.mapping[c] is None]

    def cluster_of_core(self, core):
        return self._core_cluster[core]

    # -- thermal throttling --------------------------------------------------

    def apply_dtm(self):
        """Emergency throttling; call once per DVFS epoch.  Overrides policies.

        Above dtm_threshold the hotter cluster steps down one level per call;
        flags stay set until the peak drops below dtm_release.
        """
        th = self.config.thermal
        peak = self.peak_temperature()
        if peak > th.dtm_threshold:
            hot = max(CLUSTERS, key=self.cluster_peak)
            spec = self.config.clusters[hot]
            self.dtm_active[hot] = True
            self.freqs[hot] = spec.step_toward(self.freqs[hot], spec.min_freq)
        elif peak < th.dtm_release:
            for cid in CLUSTERS:
                self.dtm_active[cid] = False


# -- calibration file ---------------------------------------------------------

def _cluster_from_dict(cid, d):
    levels = tuple(float(f) for f in d["freq_levels_ghz"])
    voltage = {float(f): float(v) for f, v in zip(levels, d["voltage_v"])}
    return ClusterSpec(
        id=cid,
        core_ids=tuple(int(c) for c in d["core_ids"]),
        freq_levels=levels,
        voltage_of=voltage,
    )


def config_from_dict(raw) -> PlatformConfig:
    clusters = {cid: _cluster_from_dict(cid, raw["clusters"][cid]) for cid in CLUSTERS}
    p = raw["power"]
    power = PowerModelParams(
        c_dyn={cid: float(p["c_dyn"][cid]) for cid in CLUSTERS},
        p_leak0={cid: float(p["p_leak0"][cid]) for cid in CLUSTERS},
        k_leak=float(p["k_leak"]),
        idle_activity=float(p["idle_activity"]),
        uncore={cid: float(p["uncore"][cid]) for cid in CLUSTERS},
    )
    t = raw["thermal"]
    thermal = ThermalModelParams(
        capacity_core=float(t["capacity_core"]),
        capacity_pkg=float(t["capacity_pkg"]),
        g_lateral=float(t["g_lateral"]),
        g_core_pkg=float(t["g_core_pkg"]),
        g_pkg_amb={k: float(v) for k, v in t["g_pkg_amb"].items()},
        ambient=float(t["ambient"]),
        dtm_threshold=float(t["dtm_threshold"]),
        dtm_release=float(t["dtm_release"]),
    )
    return PlatformConfig(clusters=clusters, power=power, thermal=thermal)


def load_platform_config(path=None) -> PlatformConfig:
    """Load a calibration file; with no path, the shipped default."""
    if path is None:
        ref = importlib.resources.files("thermsched.data") / "platform.yaml"
        raw = yaml.safe_load(ref.read_text())
    else:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    return config_from_dict(raw)
