"""Workload model unit tests: roofline rates, instances, scenario generation."""

import numpy as np
import pytest

from thermsched.platform import BIG, LITTLE
from thermsched.workload import (
    AppInstance,
    AppModel,
    PhaseSpec,
    ScenarioSpec,
    generate_scenario,
    ips,
    load_scenario,
    mean_rate,
    save_scenario,
)

F_SAT = 4.0


def make_phase(fraction=1.0, ipc_l=1.0, ipc_b=2.0, mu=0.0, l2d=0.0, act=0.5):
    return PhaseSpec(fraction=fraction, ipc_little=ipc_l, ipc_big=ipc_b,
                     mem_intensity=mu, l2d_per_ginst=l2d, activity=act)


def make_app(name="t", total=1e9, phases=None):
    return AppModel(name=name, total_instructions=total,
                    phases=tuple(phases or [make_phase()]))


class TestValidation:
    def test_phase_fraction_range(self):
        with pytest.raises(ValueError):
            make_phase(fraction=0.0)
        with pytest.raises(ValueError):
            make_phase(fraction=1.5)

    def test_activity_range(self):
        with pytest.raises(ValueError):
            make_phase(act=1.2)

    def test_big_ipc_floor(self):
        with pytest.raises(ValueError):
            make_phase(ipc_l=2.0, ipc_b=0.5)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError):
            make_app(phases=[make_phase(fraction=0.5), make_phase(fraction=0.4)])

    def test_scenario_spec_guards(self):
        with pytest.raises(ValueError):
            ScenarioSpec(seed=0, app_pool=("a",), count=0, arrival_rate=1.0)
        with pytest.raises(ValueError):
            ScenarioSpec(seed=0, app_pool=("a",), count=1, arrival_rate=0.0)
        with pytest.raises(ValueError):
            ScenarioSpec(seed=0, app_pool=(), count=1, arrival_rate=1.0)


class TestRates:
    def test_ips_saturating_form(self):
        ph = make_phase(ipc_l=1.2, ipc_b=2.0, mu=1.5)
        f = 1.8
        assert ips(ph, LITTLE, f, F_SAT) == pytest.approx(
            1.2 * f * 1e9 / (1.0 + 1.5 * f / F_SAT), rel=1e-12)
        assert ips(ph, BIG, f, F_SAT) == pytest.approx(
            2.0 * f * 1e9 / (1.0 + 1.5 * f / F_SAT), rel=1e-12)

    def test_compute_bound_scales_linearly(self):
        ph = make_phase(mu=0.0)
        assert ips(ph, BIG, 2.0, F_SAT) == pytest.approx(
            2.0 * ips(ph, BIG, 1.0, F_SAT), rel=1e-12)

    def test_memory_bound_sublinear(self):
        ph = make_phase(mu=3.0)
        assert ips(ph, BIG, 2.0, F_SAT) < 2.0 * ips(ph, BIG, 1.0, F_SAT)

    def test_mean_rate_single_phase(self):
        app = make_app()
        assert mean_rate(app, BIG, 1.0, F_SAT) == pytest.approx(
            ips(app.phases[0], BIG, 1.0, F_SAT), rel=1e-12)

    def test_mean_rate_instruction_weighted(self):
        p1 = make_phase(fraction=0.5, ipc_l=1.0, ipc_b=1.0, mu=0.0)
        p2 = make_phase(fraction=0.5, ipc_l=3.0, ipc_b=3.0, mu=0.0)
        app = make_app(phases=[p1, p2])
        r1 = ips(p1, BIG, 1.0, F_SAT)
        r2 = ips(p2, BIG, 1.0, F_SAT)
        # half the instructions at each rate: harmonic, not arithmetic, mean
        expect = 1.0 / (0.5 / r1 + 0.5 / r2)
        assert mean_rate(app, BIG, 1.0, F_SAT) == pytest.approx(expect, rel=1e-12)

    def test_phase_at_boundaries(self):
        p1 = make_phase(fraction=0.5, ipc_l=1.0, ipc_b=1.0)
        p2 = make_phase(fraction=0.5, ipc_l=2.0, ipc_b=2.0)
        app = make_app(phases=[p1, p2])
        assert app.phase_at(0.0) is p1
        assert app.phase_at(0.49) is p1
        assert app.phase_at(0.5) is p2
        assert app.phase_at(1.0) is p2


class TestAppInstance:
    def make_inst(self, app, total=None, qos=0.0):
        return AppInstance(app_id=0, model=app, qos_target=qos,
                           arrival_time=0.0,
                           total_instructions=total or app.total_instructions)

    def test_advance_constant_rate(self):
        app = make_app(total=1e9)
        inst = self.make_inst(app)
        rate = ips(app.phases[0], BIG, 1.0, F_SAT)
        busy = inst.advance(BIG, 1.0, F_SAT, 0.01)
        assert busy == pytest.approx(0.01, rel=1e-12)
        assert inst.executed == pytest.approx(rate * 0.01, rel=1e-12)

    def test_completion_inside_step(self):
        app = make_app(total=1e9)
        inst = self.make_inst(app)
        rate = ips(app.phases[0], BIG, 1.0, F_SAT)
        t_done = 1e9 / rate
        busy = inst.advance(BIG, 1.0, F_SAT, 2 * t_done)
        assert inst.done
        assert busy == pytest.approx(t_done, rel=1e-9)
        assert inst.executed == pytest.approx(1e9, rel=1e-12)

    def test_advance_across_phase_boundary(self):
        p1 = make_phase(fraction=0.5, ipc_l=1.0, ipc_b=1.0)
        p2 = make_phase(fraction=0.5, ipc_l=2.0, ipc_b=2.0)
        app = make_app(total=1e9, phases=[p1, p2])
        inst = self.make_inst(app)
        r1 = ips(p1, BIG, 1.0, F_SAT)
        r2 = ips(p2, BIG, 1.0, F_SAT)
        t1 = 0.5e9 / r1
        dt = t1 + 0.1
        inst.advance(BIG, 1.0, F_SAT, dt)
        assert inst.executed == pytest.approx(0.5e9 + r2 * 0.1, rel=1e-9)

    def test_rate_factor_slows_progress(self):
        app = make_app(total=1e9)
        a = self.make_inst(app)
        b = self.make_inst(app)
        a.advance(BIG, 1.0, F_SAT, 0.1)
        b.advance(BIG, 1.0, F_SAT, 0.1, rate_factor=0.8)
        assert b.executed == pytest.approx(0.8 * a.executed, rel=1e-12)

    def test_loop_restarts_instead_of_finishing(self):
        app = make_app(total=1e6)
        inst = self.make_inst(app)
        rate = ips(app.phases[0], BIG, 1.0, F_SAT)
        t_loop = 1e6 / rate
        busy = inst.advance(BIG, 1.0, F_SAT, 10 * t_loop, loop=True)
        assert busy == pytest.approx(10 * t_loop, rel=1e-9)
        assert inst.executed == pytest.approx(10e6, rel=1e-6)

    def test_l2d_accumulates_per_instruction(self):
        app = make_app(phases=[make_phase(l2d=500.0)])
        inst = self.make_inst(app)
        inst.advance(BIG, 1.0, F_SAT, 0.05)
        assert inst.l2d_count == pytest.approx(
            inst.executed * 500.0 / 1e9, rel=1e-12)

    def test_measure_windows_history(self):
        app = make_app(total=1e12)
        inst = self.make_inst(app)
        inst.start_time = 0.0
        rate = ips(app.phases[0], BIG, 1.0, F_SAT)
        t = 0.0
        for _ in range(100):
            inst.advance(BIG, 1.0, F_SAT, 0.01)
            t += 0.01
            inst.record(t)
        q, _ = inst.measure(t, 0.5)
        assert q == pytest.approx(rate, rel=1e-9)
        # window wider than the app lifetime falls back to the lifetime
        q2, _ = inst.measure(t, 10.0)
        assert q2 == pytest.approx(rate, rel=1e-9)

    def test_measure_before_start(self):
        inst = self.make_inst(make_app())
        assert inst.measure(1.0, 0.5) == (0.0, 0.0)

    def test_mean_ips_spans_execution(self):
        inst = self.make_inst(make_app())
        inst.start_time, inst.finish_time = 2.0, 6.0
        inst.executed = 8e9
        assert inst.mean_ips() == pytest.approx(2e9)


class TestScenarios:
    def make_spec(self, **kw):
        base = dict(seed=3, app_pool=("adi", "seidel_2d", "ferret"),
                    count=12, arrival_rate=0.5)
        base.update(kw)
        return ScenarioSpec(**base)

    def test_deterministic_replay(self, library, config):
        spec = self.make_spec()
        a = generate_scenario(spec, library, config)
        b = generate_scenario(spec, library, config)
        assert [x.model.name for x in a] == [x.model.name for x in b]
        assert [x.arrival_time for x in a] == [x.arrival_time for x in b]
        assert [x.qos_target for x in a] == [x.qos_target for x in b]

    def test_seed_changes_draw(self, library, config):
        a = generate_scenario(self.make_spec(seed=3), library, config)
        b = generate_scenario(self.make_spec(seed=4), library, config)
        assert ([x.arrival_time for x in a] != [x.arrival_time for x in b])

    def test_arrivals_increase_and_qos_in_range(self, library, config):
        spec = self.make_spec(qos_range=(0.2, 0.8))
        insts = generate_scenario(spec, library, config)
        assert len(insts) == spec.count
        arr = [x.arrival_time for x in insts]
        assert all(b >= a for a, b in zip(arr, arr[1:]))
        f_b = config.clusters[BIG].max_freq
        for inst in insts:
            ref = mean_rate(inst.model, BIG, f_b, library.f_sat)
            assert 0.2 * ref <= inst.qos_target <= 0.8 * ref
            assert inst.total_instructions == pytest.approx(
                inst.model.total_instructions * spec.instr_scale)

    def test_mean_gap_tracks_rate(self, library, config):
        spec = self.make_spec(count=400, arrival_rate=2.0)
        insts = generate_scenario(spec, library, config)
        gaps = np.diff([0.0] + [x.arrival_time for x in insts])
        assert np.mean(gaps) == pytest.approx(0.5, rel=0.2)

    def test_save_load_round_trip(self, library, config, tmp_path):
        spec = self.make_spec(cooling="no_fan", instr_scale=7.0)
        insts = generate_scenario(spec, library, config)
        path = tmp_path / "scenario.yaml"
        save_scenario(insts, spec, path)
        loaded, cooling = load_scenario(path, library)
        assert cooling == "no_fan"
        assert [x.model.name for x in loaded] == [x.model.name for x in insts]
        for a, b in zip(loaded, insts):
            assert a.qos_target == pytest.approx(b.qos_target)
            assert a.arrival_time == pytest.approx(b.arrival_time)
            assert a.total_instructions == pytest.approx(b.total_instructions)


class TestLibrary:
    def test_pools_and_saturation(self, library):
        assert len(library.training_pool) >= 8
        assert len(library.evaluation_pool) >= 8
        assert not set(library.training_pool) & set(library.evaluation_pool)
        assert library.f_sat == pytest.approx(4.0)

    def test_every_model_loads(self, library):
        for name in library.training_pool + library.evaluation_pool:
            model = library[name]
            assert model.total_instructions > 0
            assert abs(sum(p.fraction for p in model.phases) - 1.0) < 1e-9
