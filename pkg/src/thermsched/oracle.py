"""Design-time training-data generation.

Pipeline: (1) sweep (background, AoI, free core, VF point) tuples on the
simulator to collect steady-state traces of AoI performance and chip peak
temperature; (2) for swept QoS targets and background frequency requirements,
pick per candidate core the coolest VF point that satisfies everything,
convert the resulting temperatures into soft labels, and emit one training
example per free core as the AoI's hypothetical current mapping.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .features import FeatureVector
from .platform import BIG, LITTLE, N_CORES, Platform
from .workload import AppInstance, mean_rate

INFEASIBLE = None   # select_vf's "no grid point satisfies the constraints"


@dataclass(frozen=True)
class ComboSpec:
    """One (background placement, AoI model) trace-collection unit."""

    combo_id: str
    aoi: str                  # model name
    background: tuple         # ((model name, core), ...)

    @property
    def occupied(self):
        return tuple(sorted(core for _, core in self.background))

    @property
    def free_cores(self):
        occ = set(self.occupied)
        return tuple(c for c in range(N_CORES) if c not in occ)


@dataclass(frozen=True)
class TraceRecord:
    aoi: str
    core_j: int
    f_l: float
    f_b: float
    q_mips: float
    l2d: float                # accesses/s
    peak_t: float             # degC, max over the AoI run


def make_combos(seed, pool, n_combos, library, bg_range=(2, 5), prefix="c"):
    """Seeded random (background, AoI) combinations with >= 2 free cores."""
    rng = np.random.default_rng(seed)
    combos = []
    for i in range(n_combos):
        n_bg = int(rng.integers(bg_range[0], bg_range[1] + 1))
        n_bg = min(n_bg, N_CORES - 2)
        cores = rng.choice(N_CORES, size=n_bg, replace=False)
        names = rng.choice(list(pool), size=n_bg)
        aoi = str(rng.choice(list(pool)))
        background = tuple(
            (str(n), int(c)) for n, c in sorted(zip(names, cores), key=lambda x: x[1])
        )
        combos.append(ComboSpec(combo_id=f"{prefix}{i:03d}", aoi=aoi,
                                background=background))
    return combos


def reduced_levels(freq_levels, n=4):
    """Evenly spaced subset including both endpoints ({min, interior, max})."""
    idx = np.linspace(0, len(freq_levels) - 1, n).round().astype(int)
    return tuple(freq_levels[i] for i in sorted(set(idx)))


class TraceCollector:
    """Runs the pinned trace simulations for combos, with memoization.

    Warm-up states per (combo, VF) are cached and re-used across the free
    cores; a (combo, core, VF) tuple is never simulated twice.
    """

    def __init__(self, platform_config, library, cooling="fan",
                 warmup_s=10.0, aoi_run_s=6.0, qos_window=0.5, seed=0):
        self.config = platform_config
        self.library = library
        self.cooling = cooling
        self.warmup_s = warmup_s
        self.aoi_run_s = aoi_run_s
        self.qos_window = qos_window
        self.seed = seed
        self.sim_runs = 0          # AoI runs actually simulated
        self._warm_cache = {}
        self._memo = {}

    def grid(self, platform):
        return (reduced_levels(platform.config.clusters[LITTLE].freq_levels),
                reduced_levels(platform.config.clusters[BIG].freq_levels))

    def _instances(self, combo):
        insts = []
        for i, (name, core) in enumerate(combo.background):
            model = self.library[name]
            inst = AppInstance(
                app_id=i, model=model, qos_target=0.0, arrival_time=0.0,
                total_instructions=model.total_instructions,
            )
            inst.current_core = core
            insts.append(inst)
        return insts

    def _run_pinned(self, platform, insts, duration, record_peak=False,
                    aoi=None):
        """Advance looping apps pinned at the current mapping/frequencies."""
        steps = int(round(duration / platform.dt))
        f_sat = self.library.f_sat
        peak = platform.peak_temperature()
        for _ in range(steps):
            loads = [(0.0, 0.0)] * N_CORES
            for inst in insts:
                cluster = platform.cluster_of_core(inst.current_core)
                f = platform.freqs[cluster]
                inst.advance(cluster, f, f_sat, platform.dt, loop=True)
                loads[inst.current_core] = (1.0, inst.current_phase().activity)
            platform.step(loads)
            if aoi is not None:
                aoi.record(platform.time)
            if record_peak:
                peak = max(peak, platform.peak_temperature())
        return peak

    def _warm_state(self, combo, f_l, f_b):
        key = (combo.combo_id, f_l, f_b)
        cached = self._warm_cache.get(key)
        if cached is not None:
            return cached
        platform = Platform(self.config, cooling=self.cooling)
        platform.set_cluster_freq(LITTLE, f_l)
        platform.set_cluster_freq(BIG, f_b)
        insts = self._instances(combo)
        for inst in insts:
            platform.mapping[inst.current_core] = inst.app_id
        self._run_pinned(platform, insts, self.warmup_s)
        state = platform.snapshot()
        self._warm_cache[key] = (state, insts)
        return state, insts

    def trace(self, combo, core_j, f_l, f_b) -> TraceRecord:
        key = (combo.combo_id, core_j, f_l, f_b)
        if key in self._memo:
            return self._memo[key]
        state, bg_insts = self._warm_state(combo, f_l, f_b)
        platform = Platform(self.config, cooling=self.cooling)
        platform.restore(state)
        model = self.library[combo.aoi]
        aoi = AppInstance(app_id=999, model=model, qos_target=0.0,
                          arrival_time=platform.time,
                          total_instructions=model.total_instructions)
        aoi.current_core = core_j
        aoi.start_time = platform.time
        platform.mapping[core_j] = aoi.app_id
        # background counters restart from the warm state; rates are steady
        insts = [inst for inst in bg_insts] + [aoi]
        peak = self._run_pinned(platform, insts, self.aoi_run_s,
                                record_peak=True, aoi=aoi)
        q, l2d = aoi.measure(platform.time, self.qos_window)
        rec = TraceRecord(aoi=combo.aoi, core_j=core_j, f_l=f_l, f_b=f_b,
                          q_mips=q / 1e6, l2d=l2d, peak_t=peak)
        self._memo[key] = rec
        self.sim_runs += 1
        return rec

    def collect(self, combo) -> list:
        """All records for one combo; execution order is seed-shuffled."""
        platform = Platform(self.config, cooling=self.cooling)
        lvl_l, lvl_b = self.grid(platform)
        tasks = [(j, f_l, f_b)
                 for f_l in lvl_l for f_b in lvl_b for j in combo.free_cores]
        rng = np.random.default_rng((self.seed, hash(combo.combo_id) & 0xFFFF))
        rng.shuffle(tasks)
        records = [self.trace(combo, j, f_l, f_b) for (j, f_l, f_b) in tasks]
        records.sort(key=lambda r: (r.core_j, r.f_l, r.f_b))
        return records


TRACE_COLUMNS = ["aoi", "core_j", "f_l", "f_b", "q_mips", "l2d", "peak_t"]


def save_traces(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([r.aoi, r.core_j, repr(r.f_l), repr(r.f_b),
                        f"{r.q_mips:.6f}", f"{r.l2d:.6f}", f"{r.peak_t:.6f}"])


def load_traces(path) -> list:
    records = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            records.append(TraceRecord(
                aoi=row["aoi"], core_j=int(row["core_j"]),
                f_l=float(row["f_l"]), f_b=float(row["f_b"]),
                q_mips=float(row["q_mips"]), l2d=float(row["l2d"]),
                peak_t=float(row["peak_t"]),
            ))
    return records


def trace_grids(records):
    """records -> (per-core grid {(f_l, f_b) -> record}, level sets, aoi name).

    The reduced level sets are inferred from the store itself, so extraction
    runs on any complete trace file without extra metadata.
    """
    grids = {}
    for r in records:
        grids.setdefault(r.core_j, {})[(r.f_l, r.f_b)] = r
    lvl_l = tuple(sorted({r.f_l for r in records}))
    lvl_b = tuple(sorted({r.f_b for r in records}))
    for j, g in grids.items():
        if len(g) != len(lvl_l) * len(lvl_b):
            raise ValueError(f"trace grid incomplete for core {j}")
    return grids, lvl_l, lvl_b, records[0].aoi


def select_vf(grid, qos_target_mips, req_l, req_b):
    """Coolest grid point satisfying the three constraints (Eq.-3 shape).

    grid: {(f_l, f_b) -> TraceRecord}.  Constraints: f_l/f_b at least the
    background requirements, AoI performance at least the target.  Ties on
    temperature break toward lower (f_l + f_b), then lower f_b.  Returns the
    chosen record or INFEASIBLE.
    """
    best = None
    for (f_l, f_b), rec in grid.items():
        if f_l < req_l - 1e-12 or f_b < req_b - 1e-12:
            continue
        if rec.q_mips < qos_target_mips - 1e-9:
            continue
        key = (rec.peak_t, f_l + f_b, f_b)
        if best is None or key < best[0]:
            best = (key, rec)
    return INFEASIBLE if best is None else best[1]


def compute_labels(selection, occupied, alpha=1.0):
    """Soft 8-vector from per-free-core selections.

    selection: {core -> TraceRecord or INFEASIBLE}.  Occupied cores rate 0,
    infeasible cores -1, feasible cores exp(-alpha * (T - T_min)).  Returns
    None when every free core is infeasible (the row carries no signal).
    """
    feasible = {j: r.peak_t for j, r in selection.items() if r is not INFEASIBLE}
    if not feasible:
        return None
    t_min = min(feasible.values())
    labels = np.zeros(N_CORES)
    for j in selection:
        if j in feasible:
            labels[j] = np.exp(-alpha * (feasible[j] - t_min))
        else:
            labels[j] = -1.0
    for j in occupied:
        labels[j] = 0.0
    return labels


@dataclass(frozen=True)
class TrainingExample:
    combo_id: str
    features: FeatureVector
    labels: np.ndarray


def _source_vf(selection_j, src_cluster, req_l, req_b, lvl_l, lvl_b):
    """VF levels describing the AoI's current execution at source core.

    A feasible source uses its own selected point.  An infeasible source is
    described at the highest level of its own cluster (it would be running
    flat out, still missing QoS) and the lowest level of the other cluster
    that still covers the background requirement.
    """
    if selection_j is not INFEASIBLE:
        return selection_j.f_l, selection_j.f_b
    if src_cluster == LITTLE:
        f_l = lvl_l[-1]
        f_b = next(f for f in lvl_b if f >= req_b - 1e-12)
    else:
        f_b = lvl_b[-1]
        f_l = next(f for f in lvl_l if f >= req_l - 1e-12)
    return f_l, f_b


def examples_for_sweep_point(grids, occupied, qos_target_mips, req_l, req_b,
                             lvl_l, lvl_b, combo_id="", alpha=1.0):
    """Labels plus one TrainingExample per free core for one sweep point."""
    free = sorted(grids)
    selection = {j: select_vf(grids[j], qos_target_mips, req_l, req_b)
                 for j in free}
    labels = compute_labels(selection, occupied, alpha=alpha)
    if labels is None:
        return None, []
    utils = tuple(1.0 if c in occupied else 0.0 for c in range(N_CORES))
    examples = []
    for src in free:
        cluster = LITTLE if src <= 3 else BIG
        f_l, f_b = _source_vf(selection[src], cluster, req_l, req_b,
                              lvl_l, lvl_b)
        rec = grids[src][(f_l, f_b)]
        fv = FeatureVector(
            aoi_qos=rec.q_mips * 1e6,
            aoi_l2d=rec.l2d,
            aoi_core=src,
            aoi_qos_target=qos_target_mips * 1e6,
            f_ratio_l=req_l / f_l,
            f_ratio_b=req_b / f_b,
            core_utils=utils,
        )
        examples.append(TrainingExample(combo_id=combo_id, features=fv,
                                        labels=labels.copy()))
    return labels, examples


def qos_grid(ref_ips, n=12, span=(0.1, 0.9)):
    """QoS grid in MIPS: evenly spaced shares of a reference rate in IPS."""
    return [float(s) * ref_ips / 1e6 for s in np.linspace(span[0], span[1], n)]


def extract_training_data(records, combo_id, occupied, ref_ips,
                          qos_points=12, qos_span=(0.1, 0.9), alpha=1.0):
    """Full sweep for one combo's trace store -> TrainingExample list."""
    grids, lvl_l, lvl_b, _aoi = trace_grids(records)
    examples = []
    for q_mips in qos_grid(ref_ips, qos_points, qos_span):
        for req_l in lvl_l:
            for req_b in lvl_b:
                _, exs = examples_for_sweep_point(
                    grids, occupied, q_mips, req_l, req_b, lvl_l, lvl_b,
                    combo_id=combo_id, alpha=alpha)
                examples.extend(exs)
    return examples


def oracle_best_core(grids, qos_target_mips, req_l, req_b):
    """Brute-force optimum: (core, peak T) of the coolest feasible mapping."""
    best = None
    for j, grid in grids.items():
        rec = select_vf(grid, qos_target_mips, req_l, req_b)
        if rec is INFEASIBLE:
            continue
        if best is None or (rec.peak_t, j) < (best[1], best[0]):
            best = (j, rec.peak_t)
    return best


def save_training_set(examples, normalizers, path):
    """Normalized 21-feature + 8-label CSV, combo id first for split control."""
    from .features import FEATURE_NAMES
    with open(path, "w", newline="") as fh:
        fh.write(f"# ref_ips={normalizers.ref_ips!r} ref_l2d={normalizers.ref_l2d!r}\n")
        w = csv.writer(fh)
        w.writerow(["combo"] + FEATURE_NAMES + [f"label_{j}" for j in range(N_CORES)])
        for ex in examples:
            vec = ex.features.to_array(normalizers)
            w.writerow([ex.combo_id]
                       + [f"{v:.9g}" for v in vec]
                       + [f"{v:.9g}" for v in ex.labels])


def load_training_set(path):
    """-> (combo ids, X: n x 21, Y: n x 8, normalizers dict)."""
    meta = {}
    combos, xs, ys = [], [], []
    with open(path) as fh:
        first = fh.readline().strip()
        if first.startswith("#"):
            for part in first[1:].split():
                k, v = part.split("=")
                meta[k] = float(v)
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        n_feat = len(header) - 1 - N_CORES
        for row in reader:
            combos.append(row[0])
            xs.append([float(v) for v in row[1:1 + n_feat]])
            ys.append([float(v) for v in row[1 + n_feat:]])
    return combos, np.array(xs), np.array(ys), meta
