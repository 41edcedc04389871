import math

import numpy as np
import pytest

from emm.core import DataError, NumericalError, SplitSpec, StateSpace, TimeSeries
from emm.edm import delay_embed, simplex
from emm.emd import if_statistics, sift
from emm.pipeline import (ExperimentSpec, ModelSpec, build_state_space, emm_forecast,
                          moving_window_forecast, progressive_forecast, rossler_models,
                          run_ensemble, snr_gate)
from emm.synth import (ROSSLER_NOISE_SCALE, NoiseSpec, child_seed, colored_noise,
                       integrate_rossler, make_noisy_rossler)

SPLIT = SplitSpec(1, 2000, 2001, 3000)


@pytest.fixture(scope="module")
def clean():
    return integrate_rossler()


def noisy(A, seed):
    d = make_noisy_rossler(None, NoiseSpec(A=A, scale=ROSSLER_NOISE_SCALE), seed=seed)
    return [d.x.renamed("x"), d.y.renamed("y"), d.z.renamed("z")], d.z_clean


class TestModelSpec:
    def test_unknown_kind(self):
        with pytest.raises(DataError):
            ModelSpec("m", "fourier")

    def test_selected_needs_one_selector(self):
        with pytest.raises(DataError):
            ModelSpec("m", "emm-selected-imf")
        with pytest.raises(DataError):
            ModelSpec("m", "emm-selected-imf", imf_indices=(1,), multiview_D=2)
        ModelSpec("m", "emm-selected-imf", if_threshold=0.1)


class TestEmmForecast:
    def test_reference_model(self, clean):
        x, y, z = clean
        f = emm_forecast([x, y, z], z, ModelSpec("ref", "multivariable", ("x", "y", "z"), "z"),
                         SPLIT)
        assert f.rho > 0.99
        assert f.diagnostics["E_state"] == 3

    def test_takens_dimension_and_skill(self, clean):
        x, y, z = clean
        f = emm_forecast([x, y], z, ModelSpec("tk", "takens", ("x", "y"), "z", E=3), SPLIT)
        assert f.diagnostics["E_state"] == 6
        assert f.rho > 0.98

    def test_takens_equals_direct_embedding(self, clean):
        x, y, z = clean
        space = delay_embed(x, 3).concat(delay_embed(y, 3))
        direct = simplex(space, z, SPLIT)
        f = emm_forecast([x, y], z, ModelSpec("tk", "takens", ("x", "y"), "z"), SPLIT)
        assert f.same_as(direct)

    def test_emm_beats_takens_at_a32(self):
        wins = 0
        for seed in range(5):
            inputs, z = noisy(32, seed)
            tk = emm_forecast(inputs, z, ModelSpec("tk", "takens", ("x", "y"), "z"), SPLIT)
            em = emm_forecast(inputs, z, ModelSpec("em", "emm-all-imf", ("x", "y"), "z"), SPLIT)
            wins += em.rho > tk.rho
        assert wins >= 3

    def test_selection_mechanisms(self):
        inputs, z = noisy(8, 0)
        by_index = build_state_space(inputs, z, ModelSpec("a", "emm-selected-imf", ("x", "y"),
                                                          "z", imf_indices=(3, 4, 5)), SPLIT)
        assert by_index.labels == ("x_imf3", "x_imf4", "x_imf5", "y_imf3", "y_imf4", "y_imf5")
        per_source = build_state_space(inputs, z, ModelSpec(
            "b", "emm-selected-imf", ("x", "y"), "z", imf_indices={"x": (2,), "y": (4,)}), SPLIT)
        assert per_source.labels == ("x_imf2", "y_imf4")

        var = if_statistics(sift(inputs[0]))["if_variance"]
        thr = float(np.sort(var)[2]) * 1.0001
        by_if = build_state_space(inputs, z, ModelSpec("c", "emm-selected-imf", ("x",), "z",
                                                       if_threshold=thr), SPLIT)
        assert by_if.E == 3

        mv = ModelSpec("d", "emm-selected-imf", ("x", "y"), "z", multiview_D=2, max_combos=30)
        f = emm_forecast(inputs, z, mv, SPLIT)
        assert f.diagnostics["E_state"] == 2 and f.rho_defined

    def test_smap_method(self, clean):
        x, y, z = clean
        f = emm_forecast([x, y, z], z, ModelSpec("s", "multivariable", ("x", "y", "z"), "z",
                                                 method="smap", theta=2.0), SPLIT)
        assert f.diagnostics["method"] == "smap" and f.rho > 0.95

    def test_missing_input(self, clean):
        with pytest.raises(DataError, match="not provided"):
            emm_forecast(list(clean), clean[2], ModelSpec("m", "takens", ("w",), "z"), SPLIT)

    @pytest.mark.parametrize("kind", ["multivariable", "takens", "emm-all-imf"])
    def test_deterministic(self, kind):
        inputs, z = noisy(4, 1)
        m = ModelSpec("m", kind, ("x", "y"), "z")
        assert emm_forecast(inputs, z, m, SPLIT).same_as(emm_forecast(inputs, z, m, SPLIT))

    def test_strict_mode_ignores_future_inputs(self):
        inputs, z = noisy(4, 2)
        split = SplitSpec(1, 1500, 1501, 2000)
        model = ModelSpec("m", "emm-all-imf", ("x",), "z", strict=True)
        base = emm_forecast(inputs, z, model, split)
        x = inputs[0].values.copy()
        x[2000:] = 100.0
        changed = emm_forecast([inputs[0].with_values(x)], z, model, split)
        assert base.same_as(changed)
        loose = emm_forecast([inputs[0].with_values(x)], z, ModelSpec("m", "emm-all-imf", ("x",),
                                                                      "z"), split)
        assert not base.same_as(loose)


def small_experiment(**kw):
    base = dict(models=rossler_models(), amplitudes=(1.0, 8.0), realizations=6, seed=11)
    base.update(kw)
    return ExperimentSpec(**base)


class TestEnsemble:
    def test_single_realization_zero_noise(self, clean):
        spec = small_experiment(amplitudes=(0.0,), realizations=1)
        res = run_ensemble(spec)
        x, y, z = clean
        direct = emm_forecast([x, y], z, ModelSpec("tk", "takens", ("x", "y"), "z"), SPLIT)
        row = res.summary_for("takens", 0.0)
        assert row["rho_mean"] == direct.rho
        assert math.isnan(row["rho_se"]) and row["n"] == 1
        assert math.isnan(res.records[0]["snr_db"])

    def test_same_seed_identical(self):
        a = run_ensemble(small_experiment(realizations=2)).tables()
        b = run_ensemble(small_experiment(realizations=2)).tables()
        assert a == b
        c = run_ensemble(small_experiment(realizations=2, seed=12)).tables()
        assert c["results"]["rho"] != a["results"]["rho"]

    def test_parallel_matches_serial(self):
        spec = small_experiment(realizations=2, amplitudes=(4.0,))
        assert run_ensemble(spec, jobs=2).tables() == run_ensemble(spec).tables()

    def test_reference_dominates_naive(self):
        res = run_ensemble(small_experiment(models=rossler_models()[:2]))
        for a in (1.0, 8.0):
            ref, nv = res.summary_for("reference", a), res.summary_for("naive", a)
            assert ref["rho_mean"] - nv["rho_mean"] >= 2 * max(ref["rho_se"], nv["rho_se"])

    def test_realization_streams_shared_across_amplitudes(self):
        spec = small_experiment(realizations=2)
        res = run_ensemble(spec)
        snr = {(r["amplitude"], r["realization"]): r["snr_db"] for r in res.records}
        # same noise shape: SNR differs by exactly 10*log10(8)
        for r in range(2):
            assert snr[(1.0, r)] - snr[(8.0, r)] == pytest.approx(10 * np.log10(8))

    def test_failures_counted_then_abort(self):
        bad = ModelSpec("bad", "takens", ("x",), "z", E=5000)
        ok = small_experiment(models=(bad,), realizations=2, max_failure_fraction=1.0)
        res = run_ensemble(ok)
        assert len(res.failures) == 4 and res.records == []
        assert res.summary_for("bad", 1.0)["n_failed"] == 2
        with pytest.raises(NumericalError, match="failed"):
            run_ensemble(small_experiment(models=(bad,), realizations=2))

    def test_spec_validation(self):
        with pytest.raises(DataError):
            small_experiment(realizations=0)
        with pytest.raises(DataError):
            small_experiment(amplitudes=(-1.0,))
        with pytest.raises(DataError):
            small_experiment(generator=None)


def seasonal(n, seed, A=0.5):
    t = np.arange(n)
    sig = np.sin(2 * np.pi * t / 365.25) + 0.5 * np.sin(2 * np.pi * t / 182.6 + 1)
    e = A * (0.5 * colored_noise(n, 1, child_seed(seed, 0)).values
             + colored_noise(n, 0, child_seed(seed, 1)).values)
    return TimeSeries("s", sig + e)


class TestProtocols:
    def test_default_window_count(self):
        s = seasonal(6332, 0)
        res = moving_window_forecast([s], s, ModelSpec("tk", "takens", ("s",), "s"))
        assert res.summary["Tp"] == list(range(1, 57, 7))
        assert res.summary["n_windows"] == [28] * 8

    def test_single_window_equals_split(self):
        s = seasonal(1200, 1)
        m = ModelSpec("tk", "takens", ("s",), "s")
        res = moving_window_forecast([s], s, m, lib_end_start=1000, step=150, Tp_list=[5])
        assert res.summary["n_windows"] == [1]
        f = emm_forecast([s], s, m, SplitSpec(1, 1000, 996, 1145), 5)
        assert res.summary["mean_rmse"][0] == f.rmse

    def test_window_forecasts_land_after_library(self):
        s = seasonal(1200, 1)
        m = ModelSpec("tk", "takens", ("s",), "s")
        f = emm_forecast([s], s, m, SplitSpec(1, 1000, 1001 - 7, 1030 - 7), 7)
        assert f.predictions.t0 == 1000.0  # 0-based row 1000 is 1-based row 1001

    def test_no_library_look_ahead(self, clean):
        # target values after the library end cannot move any prediction
        x, _, z = clean
        m = ModelSpec("tk", "takens", ("x",), "z", exclusion_radius=0)
        zv = z.values.copy()
        zv[2000:] = 1e6
        for Tp in (1, 10):
            split = SplitSpec(1, 2000, 2001 - Tp, 2100 - Tp)
            p0 = emm_forecast([x], z, m, split, Tp).predictions.values
            p1 = emm_forecast([x], z.with_values(zv), m, split, Tp).predictions.values
            np.testing.assert_array_equal(p0, p1)
            assert np.all(np.abs(p0) < 100)

    def test_seasonal_selected_imf_beats_takens(self):
        for seed in range(3):
            s = seasonal(6332, seed)
            stats = if_statistics(sift(s))
            slow = tuple(int(k) for k, f in zip(stats["imf"], stats["if_mean"]) if f < 1 / 60)
            tk = moving_window_forecast([s], s, ModelSpec("tk", "takens", ("s",), "s"))
            em = moving_window_forecast([s], s, ModelSpec("em", "emm-selected-imf", ("s",), "s",
                                                          imf_indices=slow))
            for Tp, a, b in zip(tk.summary["Tp"], em.summary["mean_rmse"], tk.summary["mean_rmse"]):
                if Tp >= 7:
                    assert a <= b

    def test_progressive_defaults(self):
        s = seasonal(6332, 2)
        res = progressive_forecast([s], s, ModelSpec("tk", "takens", ("s",), "s"))
        assert res.summary["Tp"] == [1, 3, 7, 14, 21]
        assert res.summary["n_forecasts"] == [121] * 5
        assert len(res.records) == 121 * 5
        assert all(res.forecasts[Tp].n_valid == 121 for Tp in res.summary["Tp"])
        assert res.records[0]["day"] == 5722 and res.records[-1]["day"] == 5842

    def test_progressive_single_day(self):
        s = seasonal(800, 3)
        m = ModelSpec("tk", "takens", ("s",), "s")
        res = progressive_forecast([s], s, m, lib_end0=700, horizon_days=1, Tp_list=[3])
        f = emm_forecast([s], s, m, SplitSpec(1, 700, 698, 698), 3)
        assert res.forecasts[3].predictions.values[0] == f.predictions.values[0]

    def test_progressive_rmse_grows_with_tp(self, clean):
        x = clean[0]
        res = progressive_forecast([x], x, ModelSpec("tk", "takens", ("x",), "x"),
                                   lib_end0=2500, horizon_days=200, Tp_list=[1, 5, 10, 20, 40])
        inversions = int(np.sum(np.diff(res.summary["rmse"]) < 0))
        assert inversions <= 1

    def test_record_too_short(self):
        s = seasonal(500, 0)
        m = ModelSpec("tk", "takens", ("s",), "s")
        with pytest.raises(DataError):
            progressive_forecast([s], s, m, lib_end0=450, horizon_days=121)
        with pytest.raises(DataError):
            moving_window_forecast([s], s, m, lib_end_start=600)


class TestSnrGate:
    @staticmethod
    def pair(db):
        t = np.arange(4000)
        sig = np.sin(2 * np.pi * t / 97)
        noise = np.random.default_rng(0).standard_normal(4000)
        noise = (noise - noise.mean()) / noise.std() * sig.std() / 10 ** (db / 10)
        return TimeSeries("s", sig + noise), TimeSeries("n", noise)

    def test_high_snr_recommends_takens(self):
        s, n = self.pair(10)
        r = snr_gate(s, n)
        assert r.recommend == "takens" and r.snr_db == pytest.approx(10)

    def test_low_snr_recommends_emm(self):
        s, n = self.pair(0)
        assert snr_gate(s, n).recommend == "emm"

    def test_boundary_inclusive(self):
        s, n = self.pair(3)
        value = snr_gate(s, n).snr_db
        assert snr_gate(s, n, threshold_db=value).recommend == "emm"
        assert snr_gate(s, n, threshold_db=np.nextafter(value, -np.inf)).recommend == "takens"

    def test_imf1_proxy(self):
        s, _ = self.pair(0)
        r = snr_gate(s)
        assert r.noise_source == "imf1" and r.recommend == "emm"

    def test_zero_variance(self):
        with pytest.raises(DataError):
            snr_gate(TimeSeries("c", np.ones(100)))
