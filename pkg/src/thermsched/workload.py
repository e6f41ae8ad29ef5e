"""Synthetic application models, QoS targets, and scenario generation.

An application is a fixed instruction budget split into ordered phases; each
phase has per-cluster base IPC, a memory-intensity scalar, an L2D access rate,
and a power-activity factor.  Performance follows a saturating-roofline form,
so compute-bound apps scale linearly with frequency while memory-bound apps
flatten out.  Scenarios draw apps, QoS targets, and Poisson arrivals from a
seeded generator for exact replay.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from .platform import BIG, LITTLE


@dataclass(frozen=True)
class PhaseSpec:
    fraction: float           # share of total instructions
    ipc_little: float         # instructions/cycle at the roofline origin
    ipc_big: float
    mem_intensity: float      # mu >= 0; 0 = pure compute
    l2d_per_ginst: float      # L2D accesses per 1e9 instructions
    activity: float           # power-activity factor, 0..1

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValueError("phase fraction must be in (0, 1]")
        if min(self.ipc_little, self.ipc_big, self.mem_intensity,
               self.l2d_per_ginst) < 0:
            raise ValueError("phase parameters must be >= 0")
        if not 0 <= self.activity <= 1:
            raise ValueError("activity must be in [0, 1]")
        if self.ipc_big < 0.5 * self.ipc_little:
            raise ValueError("big IPC must be >= half the LITTLE IPC")


@dataclass(frozen=True)
class AppModel:
    name: str
    total_instructions: float
    phases: tuple

    def __post_init__(self):
        if self.total_instructions <= 0:
            raise ValueError("total_instructions must be > 0")
        if abs(sum(p.fraction for p in self.phases) - 1.0) > 1e-9:
            raise ValueError(f"{self.name}: phase fractions must sum to 1")

    def phase_at(self, executed_fraction):
        """Phase active at the given executed-instruction fraction."""
        acc = 0.0
        for p in self.phases:
            acc += p.fraction
            if executed_fraction < acc - 1e-12:
                return p
        return self.phases[-1]


def ips(phase: PhaseSpec, cluster: str, f: float, f_sat: float) -> float:
    """Instructions/s of one phase on `cluster` at frequency f (GHz)."""
    ipc = phase.ipc_big if cluster == BIG else phase.ipc_little
    return ipc * f * 1e9 / (1.0 + phase.mem_intensity * f / f_sat)


def mean_rate(model: AppModel, cluster: str, f: float, f_sat: float) -> float:
    """Whole-execution average IPS at a fixed level (instruction-weighted)."""
    seconds_per_inst = sum(
        p.fraction / ips(p, cluster, f, f_sat) for p in model.phases
    )
    return 1.0 / seconds_per_inst


@dataclass
class AppInstance:
    """One running (or queued) application with its live counters."""

    app_id: int
    model: AppModel
    qos_target: float         # IPS
    arrival_time: float       # s
    total_instructions: float # scaled budget for this instance
    executed: float = 0.0
    l2d_count: float = 0.0
    current_core: int | None = None
    start_time: float | None = None
    finish_time: float | None = None
    history: list = field(default_factory=list)   # (t, executed, l2d) samples

    @property
    def done(self):
        return self.executed >= self.total_instructions - 1e-6

    def current_phase(self):
        return self.model.phase_at(self.executed / self.total_instructions)

    def advance(self, cluster, f, f_sat, dt, rate_factor=1.0, loop=False):
        """Run for up to dt seconds; returns (instructions, busy_seconds).

        Handles phase boundaries and completion inside the step.  With
        loop=True the instance restarts instead of finishing (steady-state
        trace collection).
        """
        remaining_t = dt
        busy = 0.0
        while remaining_t > 1e-12:
            frac = (self.executed % self.total_instructions) / self.total_instructions \
                if loop else self.executed / self.total_instructions
            if not loop and self.done:
                break
            phase = self.model.phase_at(frac)
            rate = ips(phase, cluster, f, f_sat) * rate_factor
            # instructions left in this phase (or to completion)
            acc = 0.0
            for p in self.model.phases:
                acc += p.fraction
                if p is phase:
                    break
            base = self.executed - (self.executed % self.total_instructions) \
                if loop else 0.0
            phase_end = base + acc * self.total_instructions
            to_boundary = phase_end - self.executed
            t_needed = to_boundary / rate
            t_run = min(remaining_t, t_needed)
            inst = rate * t_run
            self.executed += inst
            self.l2d_count += inst * phase.l2d_per_ginst / 1e9
            busy += t_run
            remaining_t -= t_run
        return busy

    def record(self, t):
        self.history.append((t, self.executed, self.l2d_count))

    def measure(self, t, window):
        """Windowed mean IPS and L2D/s ending at time t.

        The effective window never exceeds the time since the app started, so
        freshly started apps report their short-horizon rate instead of 0.
        """
        if self.start_time is None or t <= self.start_time:
            return 0.0, 0.0
        horizon = min(window, t - self.start_time)
        cutoff = t - horizon
        past_ex, past_l2d = 0.0, 0.0
        for (ts, ex, l2) in reversed(self.history):
            if ts <= cutoff + 1e-9:
                past_ex, past_l2d = ex, l2
                break
        return ((self.executed - past_ex) / horizon,
                (self.l2d_count - past_l2d) / horizon)

    def prune_history(self, cutoff):
        h = self.history
        keep = 0
        for i, (ts, _, _) in enumerate(h):
            if ts <= cutoff:
                keep = i
        if keep > 0:
            del h[:keep]

    def mean_ips(self):
        """Whole-execution mean IPS (the QoS-violation statistic)."""
        if self.start_time is None or self.finish_time is None:
            return 0.0
        span = self.finish_time - self.start_time
        return self.executed / span if span > 0 else 0.0


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    app_pool: tuple
    count: int
    arrival_rate: float       # apps/s, Poisson process
    qos_range: tuple = (0.2, 0.8)   # fraction of max-big-level mean IPS
    cooling: str = "fan"
    instr_scale: float = 50.0       # stretches instruction budgets

    def __post_init__(self):
        if self.arrival_rate <= 0:
            raise ValueError("arrival rate must be > 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.app_pool:
            raise ValueError("app pool must not be empty")


@dataclass(frozen=True)
class AppLibrary:
    models: dict              # name -> AppModel
    training_pool: tuple
    evaluation_pool: tuple
    f_sat: float              # GHz, global memory-saturation constant

    def __getitem__(self, name):
        return self.models[name]


def generate_scenario(spec: ScenarioSpec, library: AppLibrary, platform_config):
    """Reproducible (AppInstance, arrival) list: apps, QoS targets, Poisson arrivals."""
    rng = np.random.default_rng(spec.seed)
    names = [str(n) for n in rng.choice(list(spec.app_pool), size=spec.count)]
    gaps = rng.exponential(1.0 / spec.arrival_rate, size=spec.count)
    arrivals = np.cumsum(gaps)
    f_b_max = platform_config.clusters[BIG].max_freq
    lo, hi = spec.qos_range
    instances = []
    for i, (name, t) in enumerate(zip(names, arrivals)):
        model = library[name]
        ref = mean_rate(model, BIG, f_b_max, library.f_sat)
        q = float(rng.uniform(lo, hi) * ref)
        instances.append(AppInstance(
            app_id=i,
            model=model,
            qos_target=q,
            arrival_time=float(t),
            total_instructions=model.total_instructions * spec.instr_scale,
        ))
    return instances


def save_scenario(instances, spec, path):
    doc = {
        "seed": spec.seed,
        "cooling": spec.cooling,
        "instr_scale": spec.instr_scale,
        "entries": [
            {
                "app": inst.model.name,
                "qos_ips": float(inst.qos_target),
                "arrival_s": float(inst.arrival_time),
            }
            for inst in instances
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_scenario(path, library):
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    scale = float(doc.get("instr_scale", 1.0))
    instances = [
        AppInstance(
            app_id=i,
            model=library[e["app"]],
            qos_target=float(e["qos_ips"]),
            arrival_time=float(e["arrival_s"]),
            total_instructions=library[e["app"]].total_instructions * scale,
        )
        for i, e in enumerate(doc["entries"])
    ]
    return instances, doc.get("cooling", "fan")


def _model_from_dict(name, d):
    phases = tuple(
        PhaseSpec(
            fraction=float(p["fraction"]),
            ipc_little=float(p["ipc_little"]),
            ipc_big=float(p["ipc_big"]),
            mem_intensity=float(p["mem_intensity"]),
            l2d_per_ginst=float(p["l2d_per_ginst"]),
            activity=float(p["activity"]),
        )
        for p in d["phases"]
    )
    return AppModel(
        name=name,
        total_instructions=float(d.get("total_instructions", 1e8)),
        phases=phases,
    )


def load_app_library(path=None) -> AppLibrary:
    if path is None:
        ref = importlib.resources.files("thermsched.data") / "apps.yaml"
        raw = yaml.safe_load(ref.read_text())
    else:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    models = {}
    for section in ("training", "evaluation"):
        for name, d in raw[section].items():
            models[name] = _model_from_dict(name, d)
    return AppLibrary(
        models=models,
        training_pool=tuple(raw["training"].keys()),
        evaluation_pool=tuple(raw["evaluation"].keys()),
        f_sat=float(raw["f_sat_ghz"]),
    )
