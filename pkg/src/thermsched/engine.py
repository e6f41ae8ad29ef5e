"""Simulation engine: advances apps on the platform under a policy.

Time structure: physics steps of dt (5 ms default) grouped into DVFS epochs
(10 steps = 50 ms); every 10th epoch (500 ms) is additionally a migration
epoch.  Policies are invoked at epoch boundaries only; the engine applies
their requested frequency/migration changes, enforces DTM overrides, applies
migration penalties, and keeps the decision log and temperature trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .platform import BIG, CLUSTERS, LITTLE, N_CORES, Platform


@dataclass(frozen=True)
class EngineConfig:
    steps_per_epoch: int = 10          # dt steps per DVFS epoch
    epochs_per_migration: int = 10     # DVFS epochs per migration epoch
    qos_window: float = 0.5            # s, measurement horizon for q_k
    migration_stall: float = 0.005     # s of no progress after a migration
    migration_slow_factor: float = 0.8 # IPS factor during the recovery epoch
    migration_slow_time: float = 0.05  # s of slowed progress after the stall
    max_sim_time: float = 7200.0       # s, runaway guard
    history_keep: float = 1.5          # s of per-app counter history


@dataclass(frozen=True)
class AppObs:
    """Per-app observation handed to policies and feature extraction."""

    app_id: int
    name: str
    core: int
    cluster: str
    q: float            # windowed IPS
    l2d: float          # windowed L2D accesses/s
    qos_target: float


class Engine:
    """Owns one Platform, one app list, and one policy for a full run."""

    def __init__(self, platform: Platform, instances, library, policy,
                 config: EngineConfig = EngineConfig(), log=True):
        self.platform = platform
        self.library = library
        self.policy = policy
        self.cfg = config
        self.pending = sorted(instances, key=lambda a: (a.arrival_time, a.app_id))
        self.queue = []                 # arrived but no free core (FIFO)
        self.running = {}               # app_id -> AppInstance
        self.finished = []
        self.by_id = {a.app_id: a for a in instances}
        self.log = log
        self.decision_log = []          # dicts per CSV schema
        self.temp_trace = []            # rows per DVFS epoch
        self.migration_count = 0
        self.cpu_time_hist = {}         # (cluster, level_idx) -> executing s
        self._step_count = 0
        self._epoch_count = 0
        self._migrated_last_epoch = False
        # penalty windows per app id
        self._stall_until = {}
        self._slow_until = {}

    # -- views for policies ------------------------------------------------

    def observations(self):
        obs = []
        t = self.platform.time
        for app_id in sorted(self.running):
            inst = self.running[app_id]
            q, l2d = inst.measure(t, self.cfg.qos_window)
            core = inst.current_core
            obs.append(AppObs(
                app_id=app_id,
                name=inst.model.name,
                core=core,
                cluster=self.platform.cluster_of_core(core),
                q=q,
                l2d=l2d,
                qos_target=inst.qos_target,
            ))
        return obs

    @property
    def is_migration_epoch(self):
        return self._epoch_count % self.cfg.epochs_per_migration == 0

    @property
    def migrated_last_epoch(self):
        return self._migrated_last_epoch

    # -- logging -----------------------------------------------------------

    def _log(self, event, app="", from_core="", to_core="", reason=""):
        if not self.log:
            return
        self.decision_log.append({
            "time": round(self.platform.time, 6),
            "event": event,
            "app": app,
            "from_core": from_core,
            "to_core": to_core,
            "f_l": self.platform.freqs[LITTLE],
            "f_b": self.platform.freqs[BIG],
            "reason": reason,
        })

    # -- placement / migration ----------------------------------------------

    def _place(self, inst):
        """Cold-start placement: lowest free LITTLE core, else big, else queue."""
        for cid in (LITTLE, BIG):
            for core in self.platform.config.clusters[cid].core_ids:
                if self.platform.mapping[core] is None:
                    self.platform.mapping[core] = inst.app_id
                    inst.current_core = core
                    inst.start_time = self.platform.time
                    self.running[inst.app_id] = inst
                    self._log("start", inst.model.name, to_core=core,
                              reason="cold_start")
                    self.policy.on_app_arrival(self, inst.app_id)
                    return True
        return False

    def migrate(self, app_id, target, reason):
        inst = self.running[app_id]
        src = inst.current_core
        if self.platform.mapping[target] is not None:
            return False
        self.platform.mapping[src] = None
        self.platform.mapping[target] = app_id
        inst.current_core = target
        t = self.platform.time
        self._stall_until[app_id] = t + self.cfg.migration_stall
        self._slow_until[app_id] = (t + self.cfg.migration_stall
                                    + self.cfg.migration_slow_time)
        self.migration_count += 1
        self._log("migration", inst.model.name, src, target, reason)
        return True

    # -- main loop ---------------------------------------------------------

    def _process_arrivals(self):
        t = self.platform.time
        while self.pending and self.pending[0].arrival_time <= t + 1e-12:
            inst = self.pending.pop(0)
            self._log("arrival", inst.model.name, reason="poisson")
            self.queue.append(inst)
        while self.queue:
            if not self._place(self.queue[0]):
                break
            self.queue.pop(0)

    def _advance_apps(self, dt):
        t = self.platform.time
        core_loads = [(0.0, 0.0)] * N_CORES
        done = []
        for app_id, inst in self.running.items():
            core = inst.current_core
            cluster = self.platform.cluster_of_core(core)
            f = self.platform.freqs[cluster]
            stall_until = self._stall_until.get(app_id, 0.0)
            stall = min(max(stall_until - t, 0.0), dt)
            # 1e-9 guard: accumulated step-time drift must not stretch the
            # slow window by an extra step
            rate_factor = (self.cfg.migration_slow_factor
                           if t < self._slow_until.get(app_id, 0.0) - 1e-9
                           else 1.0)
            busy_exec = inst.advance(cluster, f, self.library.f_sat,
                                     dt - stall, rate_factor)
            if busy_exec > 0:
                key = (cluster, self.platform.config.clusters[cluster].level_index(f))
                self.cpu_time_hist[key] = self.cpu_time_hist.get(key, 0.0) + busy_exec
            busy_frac = (stall + busy_exec) / dt
            core_loads[core] = (busy_frac, inst.current_phase().activity)
            if inst.done:
                inst.finish_time = t + stall + busy_exec
                done.append(app_id)
        self.platform.step(core_loads, dt)
        for app_id in done:
            inst = self.running.pop(app_id)
            self.platform.mapping[inst.current_core] = None
            self.finished.append(inst)
            self._log("completion", inst.model.name,
                      from_core=inst.current_core, reason="done")
            self.policy.on_app_exit(self, app_id)
        t = self.platform.time
        for inst in self.running.values():
            inst.record(t)
            inst.prune_history(t - self.cfg.history_keep)

    def _epoch_boundary(self):
        self.platform.finish_epoch()
        self._epoch_count += 1
        migration_epoch = self.is_migration_epoch
        migrated = False
        if migration_epoch and self.running:
            decision = self.policy.on_migration_tick(self)
            if decision is not None:
                app_id, target = decision
                migrated = self.migrate(app_id, target, type(self.policy).__name__)
        targets = self.policy.on_dvfs_tick(self)
        if targets:
            for cid, f in targets.items():
                if self.platform.dtm_active[cid]:
                    continue   # DTM overrides policy control
                if f != self.platform.freqs[cid]:
                    self.platform.set_cluster_freq(cid, f)
                    self._log("dvfs", reason=f"{cid}->{f}")
        before = dict(self.platform.freqs)
        self.platform.apply_dtm()
        if self.platform.freqs != before:
            self._log("dtm", reason="throttle")
        self._migrated_last_epoch = migrated
        row = [round(self.platform.time, 6)]
        row += [float(x) for x in self.platform.temperatures]
        row += [self.platform.freqs[LITTLE], self.platform.freqs[BIG]]
        self.temp_trace.append(row)

    def run(self):
        """Run to workload completion; returns self for chaining."""
        cfg = self.cfg
        while self.pending or self.queue or self.running:
            if self.platform.time > cfg.max_sim_time:
                raise RuntimeError(
                    f"workload did not terminate within {cfg.max_sim_time} simulated s"
                )
            self._process_arrivals()
            self._advance_apps(self.platform.dt)
            self._step_count += 1
            if self._step_count % cfg.steps_per_epoch == 0:
                self._epoch_boundary()
        return self


class NullPolicy:
    """Keeps whatever frequencies/mapping exist; useful for pinned runs."""

    def on_dvfs_tick(self, engine):
        return None

    def on_migration_tick(self, engine):
        return None

    def on_app_arrival(self, engine, app_id):
        pass

    def on_app_exit(self, engine, app_id):
        pass
