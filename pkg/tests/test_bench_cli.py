import xml.etree.ElementTree as ET

import numpy as np
import pytest

import faultfilter as ff
from faultfilter import (
    BenchConfig,
    ExperimentReport,
    FaultScenario,
    FeedbackController,
    ValidationError,
    closed_loop_sim,
    collect_identification_data,
    ellipse_stats,
    run_comparison,
)
from faultfilter.bench_cli import (
    ALGORITHM_NAMES,
    AlgorithmResult,
    BENCH_POLES,
    load_bench_config,
    main,
    parse_fault_signal,
    parse_matrix,
    time_filter_step,
    time_window_step,
    write_report_svg,
)

from conftest import planted_zero_predictor


def small_cfg(**kw):
    """Comparison settings scaled down for test speed."""
    base = dict(p=40, markov_length=40, hankel_rows=12, hankel_cols=12,
                n_ident=800, run_samples=500, window_start=300,
                timing_steps=50, seed=3)
    base.update(kw)
    return BenchConfig(**base)


SMALL_INI = """
[identify]
p = 40
n_samples = 400

[design]
markov_length = 40
hankel_rows = 12
hankel_cols = 12
order = 4
strategy = pole_placement
poles = 0.948 0.532 0.225 0.141

[bench]
run_samples = 500
window_start = 300
timing_steps = 50
"""


class TestParseFaultSignal:
    def test_grammar(self):
        assert parse_fault_signal("1.5") == [("step", 1.5)]
        assert parse_fault_signal("step 2") == [("step", 2.0)]
        assert parse_fault_signal("sin 0.1pi") == [("sin", 1.0, 0.1 * np.pi)]
        assert parse_fault_signal("0.5 cos 0.2") == [("cos", 0.5, 0.2)]
        assert parse_fault_signal("sin pi") == [("sin", 1.0, np.pi)]
        terms = parse_fault_signal("0.5 sin 0.05pi + step 2")
        assert terms == [("sin", 0.5, 0.05 * np.pi), ("step", 2.0)]

    @pytest.mark.parametrize("bad", ["", "step", "sin", "1 2 3",
                                     "sin one", "x sin 0.1"])
    def test_rejects(self, bad):
        with pytest.raises(ValidationError):
            parse_fault_signal(bad)


class TestFaultScenario:
    def test_default_signal(self):
        scen = FaultScenario(onset=10)
        f = scen.evaluate(30)
        assert f.shape == (30, 1)
        assert np.all(f[:10] == 0.0)
        k = np.arange(10, 30)
        assert np.allclose(f[10:, 0], np.sin(0.1 * np.pi * k) + 1.0)

    def test_phase_is_absolute(self):
        a = FaultScenario(onset=0, signals=("sin 0.1pi",))
        b = FaultScenario(onset=25, signals=("sin 0.1pi",))
        fa, fb = a.evaluate(60), b.evaluate(60)
        assert np.allclose(fa[25:], fb[25:])

    def test_string_signals_and_scalar_sensor(self):
        scen = FaultScenario(onset=5, sensors=1, signals=("step 3",))
        assert scen.sensors == (1,)
        assert scen.n_faults == 1
        f = scen.evaluate(8)
        assert np.allclose(f[5:, 0], 3.0)

    def test_validation(self):
        with pytest.raises(ValidationError, match="signals"):
            FaultScenario(sensors=(0, 1), signals=("step 1",))
        with pytest.raises(ValidationError, match="onset"):
            FaultScenario(onset=-1)


class TestRegistry:
    def test_default_plant_registered(self):
        assert "unstable4" in ff.list_plants()
        entry = ff.get_plant("unstable4")
        model, ctrl = entry.factory()
        assert model.n_states == 4
        assert ff.spectral_radius(model.A) > 1.0
        assert ctrl.gain.shape == (2, 2)

    def test_unknown_plant(self):
        with pytest.raises(ValidationError, match="unknown plant"):
            ff.get_plant("not_a_plant")

    def test_rejects_non_stabilizing_controller(self):
        def bad_factory(q=None, r=None):
            model, _ = ff.get_plant("unstable4").factory(q=q, r=r)
            return model, FeedbackController(np.zeros((2, 2)))

        with pytest.raises(ValidationError, match="fails to stabilize"):
            ff.register_plant("broken", bad_factory)
        assert "broken" not in ff.list_plants()


class TestClosedLoopSim:
    def setup_method(self):
        self.model, self.ctrl = ff.get_plant("unstable4").factory()
        self.faulty = ff.sensor_fault_plant(self.model, 0)

    def test_shapes_and_determinism(self):
        a, fa = closed_loop_sim(self.faulty, self.ctrl, 100,
                                np.random.default_rng(5),
                                scenario=FaultScenario(onset=20))
        b, fb = closed_loop_sim(self.faulty, self.ctrl, 100,
                                np.random.default_rng(5),
                                scenario=FaultScenario(onset=20))
        assert a.u.shape == (100, 2) and a.y.shape == (100, 2)
        assert fa.shape == (100, 1)
        assert np.array_equal(a.u, b.u) and np.array_equal(a.y, b.y)
        c, _ = closed_loop_sim(self.faulty, self.ctrl, 100,
                               np.random.default_rng(6),
                               scenario=FaultScenario(onset=20))
        assert not np.array_equal(a.y, c.y)

    def test_fault_changes_output_only_after_onset(self):
        scen = FaultScenario(onset=40, signals=("step 5",))
        clean, _ = closed_loop_sim(self.faulty, self.ctrl, 80,
                                   np.random.default_rng(7))
        faulted, _ = closed_loop_sim(self.faulty, self.ctrl, 80,
                                     np.random.default_rng(7), scenario=scen)
        assert np.allclose(clean.y[:40], faulted.y[:40])
        assert np.max(np.abs(faulted.y[40:] - clean.y[40:])) > 1.0

    def test_preset_zero_reference_equals_no_excitation(self):
        ctrl_ref = FeedbackController(self.ctrl.gain,
                                      reference=np.zeros((50, 2)))
        a, _ = closed_loop_sim(self.faulty, ctrl_ref, 50,
                               np.random.default_rng(9))
        b, _ = closed_loop_sim(self.faulty, self.ctrl, 50,
                               np.random.default_rng(9))
        assert np.array_equal(a.y, b.y)

    def test_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValidationError, match="gain"):
            closed_loop_sim(self.faulty,
                            FeedbackController(np.zeros((3, 2))), 10, rng)
        with pytest.raises(ValidationError, match="unstable"):
            closed_loop_sim(self.faulty,
                            FeedbackController(np.zeros((2, 2))), 10, rng)
        short = FeedbackController(self.ctrl.gain, reference=np.zeros((5, 2)))
        with pytest.raises(ValidationError, match="reference"):
            closed_loop_sim(self.faulty, short, 10, rng)
        both = ff.sensor_fault_plant(self.model, [0, 1])
        with pytest.raises(ValidationError, match="faults"):
            closed_loop_sim(both, self.ctrl, 10, rng,
                            scenario=FaultScenario(onset=2, sensors=(0,)))

    def test_collect_identification_data(self):
        a = collect_identification_data(self.model, self.ctrl, 200, seed=11)
        b = collect_identification_data(self.model, self.ctrl, 200, seed=11)
        assert a.n_samples == 200
        assert np.array_equal(a.u, b.u) and np.array_equal(a.y, b.y)
        # excitation keeps the input from being a pure function of y
        resid = a.u + a.y @ self.ctrl.gain.T
        assert np.std(resid) > 0.1


class TestEllipseStats:
    def test_matches_eigen_oracle(self, rng):
        E = rng.standard_normal((500, 2)) @ np.array([[1.0, 0.4], [0.0, 0.3]])
        E += [0.5, -0.2]
        st = ellipse_stats(E)
        mean = E.mean(axis=0)
        cov = (E - mean).T @ (E - mean) / len(E)
        lam = np.sort(np.linalg.eigvalsh(cov))[::-1]
        assert np.allclose(st.mean, mean)
        assert np.allclose(st.covariance, cov)
        assert np.allclose(st.axes, np.sqrt(3 * lam))
        assert np.allclose(st.directions.T @ st.directions, np.eye(2),
                           atol=1e-12)
        assert not st.degenerate
        assert st.n_samples == 500

    def test_one_dimensional(self, rng):
        e = rng.standard_normal(300) * 0.2 + 1.0
        st = ellipse_stats(e.reshape(-1, 1))
        assert st.axes.shape == (1,)
        assert np.isclose(st.axes[0], np.sqrt(3 * e.var()))

    def test_nan_rows_dropped(self, rng):
        E = rng.standard_normal((50, 2))
        E[:10] = np.nan
        assert ellipse_stats(E).n_samples == 40

    def test_degenerate_flag(self, rng):
        x = rng.standard_normal(100)
        st = ellipse_stats(np.column_stack([x, 2 * x]))
        assert st.degenerate

    def test_too_few_samples(self):
        with pytest.raises(ValidationError):
            ellipse_stats(np.ones((2, 2)))


def synthetic_report(nf=1, with_failure=True):
    rng = np.random.default_rng(9)
    N = 50
    fault = np.zeros((N, nf))
    fault[20:] = 1.0
    est = fault + 0.05 * rng.standard_normal((N, nf))
    stats = ellipse_stats(est[10:] - fault[10:])
    results = [AlgorithmResult(name="alg0", ok=True, estimates=est,
                               stats=stats, step_time_ns=500.0)]
    if with_failure:
        results.append(AlgorithmResult(name="alg1", ok=False,
                                       message="alg1: synthetic failure"))
    return ExperimentReport(plant="unstable4", seed=9,
                            scenario=FaultScenario(onset=20,
                                                   sensors=tuple(range(nf))),
                            window=(10, N), fault=fault, results=results)


class TestExperimentReport:
    def test_result_lookup(self):
        rep = synthetic_report()
        assert rep.result("alg0").ok
        with pytest.raises(ValidationError):
            rep.result("alg9")

    def test_summary_mentions_failure(self):
        text = synthetic_report().summary()
        assert "alg0" in text and "trace(cov)" in text
        assert "FAILED" in text and "synthetic failure" in text

    def test_csv_layout_and_determinism(self, tmp_path):
        rep = synthetic_report()
        d1, d2 = tmp_path / "a", tmp_path / "b"
        rep.to_csv(d1)
        rep.to_csv(d2)
        est = (d1 / "estimates.csv").read_text()
        head = est.splitlines()[0].split(",")
        assert head == ["k", "f1", "alg0_f1"]
        assert len(est.splitlines()) == 51
        assert est == (d2 / "estimates.csv").read_text()
        stats = (d1 / "stats.csv").read_text().splitlines()
        assert stats[0].startswith("algorithm,ok,samples")
        assert stats[1].startswith("alg0,1,40")
        assert stats[2].startswith("alg1,0,0")
        assert "synthetic failure" in stats[2]
        assert stats == (d2 / "stats.csv").read_text().splitlines()

    def test_timing_file(self, tmp_path):
        rep = synthetic_report()
        path = tmp_path / "timing.txt"
        rep.write_timing(path)
        lines = path.read_text().splitlines()
        assert lines == ["alg0 median_step_ns 500.0"]


class TestReportSvg:
    def test_scalar_fault_plot(self, tmp_path):
        path = tmp_path / "r1.svg"
        write_report_svg(synthetic_report(nf=1), path)
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")
        text = path.read_text()
        assert "alg0" in text and "failed" in text
        assert "dasharray" in text  # the +/- band around the mean

    def test_planar_fault_plot(self, tmp_path):
        path = tmp_path / "r2.svg"
        write_report_svg(synthetic_report(nf=2, with_failure=False), path)
        ET.parse(path)
        assert "<ellipse" in path.read_text()

    def test_deterministic_bytes(self, tmp_path):
        p1, p2 = tmp_path / "x.svg", tmp_path / "y.svg"
        write_report_svg(synthetic_report(), p1)
        write_report_svg(synthetic_report(), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestBenchConfig:
    def test_explicit_model_needs_controller(self):
        model, _ = ff.get_plant("unstable4").factory()
        with pytest.raises(ValidationError, match="controller"):
            BenchConfig(model=model).resolve_plant()

    def test_noise_overrides_reach_factory(self):
        model, _ = BenchConfig(q=0.5, r=2.0).resolve_plant()
        assert np.allclose(model.Q, 0.5 * np.eye(4))
        assert np.allclose(model.R, 2.0 * np.eye(2))

    def test_bad_window_rejected(self):
        with pytest.raises(ValidationError, match="window"):
            run_comparison(small_cfg(window_start=500))

    def test_unsorted_sensors_rejected(self):
        cfg = small_cfg(scenario=FaultScenario(
            onset=5, sensors=(1, 0), signals=("step 1", "step 1")))
        with pytest.raises(ValidationError, match="sorted"):
            run_comparison(cfg)


class TestRunComparison:
    def test_four_way_smoke(self):
        rep = run_comparison(small_cfg())
        assert [r.name for r in rep.results] == list(ALGORITHM_NAMES)
        assert all(r.ok for r in rep.results)
        assert rep.window == (300, 500)
        for res in rep.results:
            assert res.estimates.shape == (500, 1)
            assert res.step_time_ns > 0
            assert np.trace(res.stats.covariance) < 0.5
        assert np.trace(rep.result("alg0").stats.covariance) < 0.1

    def test_gain_failure_marks_arms_independently(self):
        # a four-fold pole cannot be placed by a rank-one injection, so
        # every arm that computes a gain fails; the window estimator
        # needs no gain and survives
        rep = run_comparison(small_cfg(poles=(0.5, 0.5, 0.5, 0.5)))
        assert not rep.result("alg0").ok
        assert rep.result("alg0").message.startswith("alg0:")
        assert not rep.result("alg1").ok
        assert not rep.result("alg2").ok
        assert rep.result("alg3").ok

    def test_identification_failure_marks_downstream(self):
        rep = run_comparison(small_cfg(n_ident=60))
        assert rep.result("alg0").ok
        for name in ("alg1", "alg2", "alg3"):
            res = rep.result(name)
            assert not res.ok
            assert f"{name}: identify:" in res.message

    def test_noise_free_loop_tracks_exactly(self):
        # with the process noise off and measurement noise negligible the
        # model-based inversion filter reproduces the fault pointwise
        cfg = small_cfg(q=0.0, r=1e-30)
        model, ctrl = cfg.resolve_plant()
        faulty = ff.sensor_fault_plant(model, 0)
        pred = ff.to_predictor(faulty)
        inv = ff.open_loop_inverse(pred)
        Kr = ff.stabilizing_gain(inv.Phi1, inv.C2, strategy="pole_placement",
                                 poles=list(BENCH_POLES))
        filt = ff.reduced_filter(pred, Kr, strategy="pole_placement")
        data, fault = closed_loop_sim(faulty, ctrl, 400,
                                      np.random.default_rng(21),
                                      scenario=FaultScenario(onset=51))
        fhat = ff.run_filter(filt, data)
        assert np.max(np.abs(fhat[100:] - fault[100:])) < 1e-6


class TestTimers:
    def test_filter_step_timer(self, rng):
        from conftest import stable_invertible_predictor

        pred = stable_invertible_predictor(rng)
        Kr = ff.stabilizing_gain(ff.open_loop_inverse(pred).Phi1,
                                 ff.open_loop_inverse(pred).C2)
        filt = ff.reduced_filter(pred, Kr)
        t = time_filter_step(filt, steps=200, seed=1)
        assert np.isfinite(t) and t > 0

    def test_window_step_timer(self):
        t = time_window_step(np.ones((1, 40)), block=4, steps=200, seed=1)
        assert np.isfinite(t) and t > 0


class TestParseMatrix:
    def test_round_trip(self):
        M = parse_matrix("1 2; 3 4.5")
        assert np.allclose(M, [[1.0, 2.0], [3.0, 4.5]])

    def test_ragged(self):
        with pytest.raises(ValidationError, match="matrix literal"):
            parse_matrix("1 2; 3")

    def test_non_numeric(self):
        with pytest.raises(ValidationError, match="matrix"):
            parse_matrix("a b; c d")


class TestLoadBenchConfig:
    def test_defaults(self):
        cfg = load_bench_config()
        assert cfg.plant == "unstable4"
        assert cfg.p == 100 and cfg.seed == 0

    def test_full_ini(self, tmp_path):
        path = tmp_path / "bench.ini"
        path.write_text(SMALL_INI + "\n[scenario]\nonset = 60\n"
                        "sensors = 2\nsignals = step 2\n")
        cfg = load_bench_config(path, seed=7)
        assert cfg.p == 40 and cfg.n_ident == 400
        assert cfg.markov_length == 40
        assert cfg.poles == [0.948, 0.532, 0.225, 0.141]
        assert cfg.seed == 7
        assert cfg.scenario.onset == 60
        assert cfg.scenario.sensors == (1,)
        assert cfg.run_samples == 500

    def test_sensor_index_base(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[scenario]\nsensors = 0\n")
        with pytest.raises(ValidationError, match="one based"):
            load_bench_config(path)

    def test_plant_file_with_matrices(self, tmp_path):
        path = tmp_path / "plant.ini"
        path.write_text(
            "[plant]\n"
            "A = 0.5 0.1; 0 0.4\n"
            "B = 1; 0\n"
            "C = 1 0; 0 1\n"
            "q = 0.001\n"
            "R = 0.01 0; 0 0.04\n"
            "[controller]\n"
            "gain = 0.1 0.1\n")
        cfg = load_bench_config(plant=str(path))
        model, ctrl = cfg.resolve_plant()
        assert model.n_states == 2
        assert np.allclose(model.Q, 0.001 * np.eye(2))
        assert np.allclose(model.R, [[0.01, 0.0], [0.0, 0.04]])
        assert ctrl.gain.shape == (1, 2)

    def test_scalar_q_defers_to_matrix_Q(self, tmp_path):
        path = tmp_path / "plant.ini"
        path.write_text(
            "[plant]\n"
            "A = 0.5\n"
            "B = 1\n"
            "C = 1\n"
            "Q = 0.25\n"
            "q = 9.0\n")
        cfg = load_bench_config(plant=str(path))
        assert np.allclose(cfg.model.Q, [[0.25]])

    def test_missing_plant_file(self):
        with pytest.raises(ValidationError, match="neither a registered"):
            load_bench_config(plant="no_such_plant_or_file")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="bad benchmark config"):
            load_bench_config(overrides={"nonsense": 1})


class TestCli:
    def test_zeros_verb(self, capsys):
        assert main(["zeros"]) == 0
        out = capsys.readouterr().out
        assert "sensors 1:" in out
        assert "no invariant zeros" in out
        assert "stable inversion possible" in out

    def test_identify_design_estimate_pipeline(self, tmp_path, capsys):
        cfg_path = tmp_path / "bench.ini"
        cfg_path.write_text(SMALL_INI)
        out = str(tmp_path)
        args = ["--config", str(cfg_path), "--seed", "3", "--out", out]
        assert main(["identify"] + args) == 0
        assert (tmp_path / "xi.csv").exists()
        assert main(["design", "--xi", str(tmp_path / "xi.csv")] + args) == 0
        assert (tmp_path / "filter.csv").exists()
        model, ctrl = ff.get_plant("unstable4").factory()
        faulty = ff.sensor_fault_plant(model, 0)
        data, fault = closed_loop_sim(faulty, ctrl, 200,
                                      np.random.default_rng(4),
                                      scenario=FaultScenario(onset=50))
        data.to_csv(tmp_path / "run.csv")
        assert main(["estimate", "--filter", str(tmp_path / "filter.csv"),
                     "--data", str(tmp_path / "run.csv")] + args) == 0
        est = (tmp_path / "estimates.csv").read_text().splitlines()
        assert est[0] == "k,fhat1"
        assert len(est) == 201
        capsys.readouterr()

    def test_compare_verb_outputs(self, tmp_path, capsys):
        cfg_path = tmp_path / "bench.ini"
        cfg_path.write_text(SMALL_INI)
        code = main(["compare", "--config", str(cfg_path), "--seed", "3",
                     "--out", str(tmp_path)])
        assert code == 0
        for name in ("estimates.csv", "stats.csv", "report.svg", "timing.txt"):
            assert (tmp_path / name).exists(), name
        out = capsys.readouterr().out
        assert "alg0" in out and "alg3" in out
        timing = (tmp_path / "timing.txt").read_text()
        assert timing.count("median_step_ns") == 4

    def test_estimate_requires_files(self, capsys):
        assert main(["estimate"]) == 2
        assert "validation error" in capsys.readouterr().err

    def test_unknown_plant_exit_code(self, capsys):
        assert main(["zeros", "--plant", "bogus_plant"]) == 2
        assert "validation error" in capsys.readouterr().err

    def test_numerical_failure_exit_code(self, tmp_path, capsys, rng):
        pred = planted_zero_predictor(rng, 1.2)
        xi = ff.xi_from_predictor(pred, 60)
        xi.to_csv(tmp_path / "xi.csv")
        cfg_path = tmp_path / "bench.ini"
        cfg_path.write_text("[design]\nmarkov_length = 48\n"
                            "hankel_rows = 12\nhankel_cols = 12\norder = 4\n")
        code = main(["design", "--xi", str(tmp_path / "xi.csv"),
                     "--config", str(cfg_path), "--out", str(tmp_path)])
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err
