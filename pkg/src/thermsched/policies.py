"""Runtime resource managers.

Every policy pairs a migration rule with a DVFS governor behind the engine's
tick interface: the learned imitation policy and the Q-learning baseline both
use the requirement-tracking governor, the heterogeneity-aware baseline pairs
with either the utilization governor or the frequency floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import estimate_min_freq, extract_features
from .mlp import infer_batch
from .platform import BIG, CLUSTERS, LITTLE, N_CORES


class BasePolicy:
    def on_dvfs_tick(self, engine):
        return None

    def on_migration_tick(self, engine):
        return None

    def on_app_arrival(self, engine, app_id):
        pass

    def on_app_exit(self, engine, app_id):
        pass


class Eq7Governor:
    """Track each cluster's max required level, one step per epoch.

    Skips the migration epoch itself and, after an actual migration, the
    following epoch as well, so measurements re-settle before reacting.
    Idle clusters fall toward the lowest level.
    """

    def targets(self, engine):
        if engine.is_migration_epoch or engine.migrated_last_epoch:
            return None
        obs = engine.observations()
        out = {}
        for cid, spec in engine.platform.config.clusters.items():
            current = engine.platform.freqs[cid]
            required = spec.min_freq
            for a in obs:
                if a.cluster != cid:
                    continue
                f, _ = estimate_min_freq(a.q, a.qos_target, current,
                                         spec.freq_levels)
                required = max(required, f)
            out[cid] = spec.step_toward(current, required)
        return out


class OndemandGovernor:
    """Utilization-threshold rule: jump to max above 0.8, step down below 0.3."""

    def __init__(self, up=0.8, down=0.3):
        self.up = up
        self.down = down

    def targets(self, engine):
        util = engine.platform.utilization
        out = {}
        for cid, spec in engine.platform.config.clusters.items():
            u = max(util[c] for c in spec.core_ids)
            current = engine.platform.freqs[cid]
            if u > self.up:
                out[cid] = spec.max_freq
            elif u < self.down:
                out[cid] = spec.step_toward(current, spec.min_freq)
            else:
                out[cid] = current
        return out


class PowersaveGovernor:
    def targets(self, engine):
        return {cid: spec.min_freq
                for cid, spec in engine.platform.config.clusters.items()}


class TopilPolicy(BasePolicy):
    """Learned migration ratings + requirement-tracking DVFS."""

    def __init__(self, model):
        self.model = model
        self.norm = _normalizers_of(model)
        self.governor = Eq7Governor()

    def on_dvfs_tick(self, engine):
        return self.governor.targets(engine)

    def on_migration_tick(self, engine):
        obs = engine.observations()
        if not obs:
            return None
        specs = engine.platform.config.clusters
        freqs = engine.platform.freqs
        util = engine.platform.utilization
        try:
            rows = [extract_features(freqs, util, obs, a.app_id, specs)
                    .to_array(self.norm) for a in obs]
            ratings = infer_batch(self.model, rows)
        except Exception as exc:   # inference failure -> no-op tick
            engine._log("policy_error", reason=str(exc)[:80])
            return None
        free = engine.platform.free_cores()
        best = None   # (improvement, core, app_id)
        for k, a in enumerate(obs):
            own = ratings[k, a.core]
            for c in sorted(free + [a.core]):
                gain = ratings[k, c] - own
                if best is None or gain > best[0] + 1e-12 or (
                        abs(gain - best[0]) <= 1e-12 and c < best[1]):
                    best = (gain, c, a.app_id)
        if best is None or best[0] <= 1e-12 or best[1] == self._core_of(obs, best[2]):
            return None
        return best[2], best[1]

    @staticmethod
    def _core_of(obs, app_id):
        return next(a.core for a in obs if a.app_id == app_id)


def _normalizers_of(model):
    from .features import Normalizers
    n = model.normalizers
    return Normalizers(ref_ips=float(n["ref_ips"]), ref_l2d=float(n["ref_l2d"]))


@dataclass(frozen=True)
class RLConfig:
    epsilon: float = 0.1
    gamma: float = 0.8
    alpha: float = 0.05
    reward_base: float = 80.0      # degC offset of the thermal reward
    violation_penalty: float = -200.0
    l2d_split: float = 2.0e7       # accesses/s boundary for the L2D bit
    init_q: float = 0.0

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


N_RL_STATES = 2 * 2 * N_CORES * 3 * 3   # 288
N_RL_ACTIONS = N_CORES                  # one action per target core


def new_qtable(config: RLConfig = RLConfig()):
    return np.full((N_RL_STATES, N_RL_ACTIONS), config.init_q, dtype=np.float64)


def quantize_state(app_obs, freqs, cluster_specs, config: RLConfig):
    """(QoS met, L2D band, core, f_l tercile, f_b tercile) -> 0..287."""
    qos_met = 1 if app_obs.q >= app_obs.qos_target else 0
    l2d_high = 1 if app_obs.l2d > config.l2d_split else 0
    terciles = []
    for cid in (LITTLE, BIG):
        spec = cluster_specs[cid]
        idx = spec.level_index(freqs[cid])
        terciles.append(idx * 3 // len(spec.freq_levels))
    tl, tb = terciles
    return (((qos_met * 2 + l2d_high) * N_CORES + app_obs.core) * 3 + tl) * 3 + tb


class RlPolicy(BasePolicy):
    """Per-app tabular agents over a shared Q-table with a mediator.

    Each migration tick the previous pick is rewarded (80 - peak T when every
    app meets QoS, -200 otherwise), then every agent proposes an action
    epsilon-greedily and the proposal with the highest Q-value executes.
    Learning stays on during evaluation.
    """

    def __init__(self, qtable, config: RLConfig = RLConfig(), seed=0,
                 learn=True):
        self.q = qtable
        self.cfg = config
        self.rng = np.random.default_rng(seed)
        self.learn = learn
        self.agents = set()
        self._prev = None          # (app_id, state, action)
        self.governor = Eq7Governor()
        self.updates = 0

    def on_dvfs_tick(self, engine):
        return self.governor.targets(engine)

    def on_app_arrival(self, engine, app_id):
        self.agents.add(app_id)

    def on_app_exit(self, engine, app_id):
        self.agents.discard(app_id)
        if self._prev is not None and self._prev[0] == app_id:
            self._prev = None   # its successor state no longer exists

    def _reward(self, engine, obs):
        if all(a.q >= a.qos_target for a in obs):
            return self.cfg.reward_base - engine.platform.peak_temperature()
        return self.cfg.violation_penalty

    def on_migration_tick(self, engine):
        obs = engine.observations()
        if not obs:
            self._prev = None
            return None
        specs = engine.platform.config.clusters
        freqs = engine.platform.freqs
        states = {a.app_id: quantize_state(a, freqs, specs, self.cfg)
                  for a in obs}
        if self.learn and self._prev is not None:
            app_id, s, a = self._prev
            if app_id in states:
                r = self._reward(engine, obs)
                s2 = states[app_id]
                td = r + self.cfg.gamma * float(self.q[s2].max()) - self.q[s, a]
                self.q[s, a] += self.cfg.alpha * td
                self.updates += 1
        proposals = []
        for ob in obs:
            s = states[ob.app_id]
            if self.rng.random() < self.cfg.epsilon:
                action = int(self.rng.integers(N_RL_ACTIONS))
            else:
                action = int(np.argmax(self.q[s]))
            proposals.append((float(self.q[s, action]), ob.app_id, action, s,
                              ob.core))
        # mediator: highest proposal Q-value wins; ties toward lower app id
        proposals.sort(key=lambda p: (-p[0], p[1]))
        _, app_id, action, s, own = proposals[0]
        self._prev = (app_id, s, action)
        occupied = engine.platform.mapping[action] is not None
        if action == own or occupied:
            return None   # no-op action still receives the realized reward
        return app_id, action


class GtsPolicy(BasePolicy):
    """Demand thresholds route apps between clusters; governor is pluggable.

    Demand = QoS target over measured throughput at the current level (the
    fraction of the core's current capacity the app needs).
    """

    def __init__(self, governor, down=0.3, up=0.7):
        self.governor = governor
        self.down = down
        self.up = up

    def on_dvfs_tick(self, engine):
        return self.governor.targets(engine)

    def on_migration_tick(self, engine):
        free = engine.platform.free_cores()
        for a in engine.observations():
            demand = np.inf if a.q <= 0 else a.qos_target / a.q
            want = None
            if a.cluster == LITTLE and demand > self.up:
                want = BIG
            elif a.cluster == BIG and demand < self.down:
                want = LITTLE
            if want is None:
                continue
            spec = engine.platform.config.clusters[want]
            targets = [c for c in spec.core_ids if c in free]
            if targets:
                return a.app_id, min(targets)
        return None


def save_qtable(q, path):
    np.save(path, q, allow_pickle=False)


def load_qtable(path):
    q = np.load(path, allow_pickle=False)
    if q.shape != (N_RL_STATES, N_RL_ACTIONS):
        raise ValueError(f"{path}: Q-table shape {q.shape}, "
                         f"expected {(N_RL_STATES, N_RL_ACTIONS)}")
    return q


def make_policy(name, model=None, qtable=None, rl_config=None, seed=0):
    """CLI-facing factory; learned policies need their artifacts loaded."""
    if name == "topil":
        if model is None:
            raise ValueError("topil needs a trained model")
        return TopilPolicy(model)
    if name == "rl":
        if qtable is None:
            qtable = new_qtable(rl_config or RLConfig())
        return RlPolicy(qtable, rl_config or RLConfig(), seed=seed)
    if name == "gts-ondemand":
        return GtsPolicy(OndemandGovernor())
    if name == "gts-powersave":
        return GtsPolicy(PowersaveGovernor())
    raise ValueError(f"unknown policy {name!r}")


POLICY_NAMES = ("topil", "rl", "gts-ondemand", "gts-powersave")
