import json
import math

import numpy as np
import pytest

from emm.cli import int_list, main, resolve_seed
from emm.core import DataError, SplitSpec
from emm.edm import SimplexSpec, delay_embed, simplex
from emm.emd import sift
from emm.io import (format_value, manifest_path_for, parse_experiment_config, read_csv,
                    read_table, write_csv)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestReadCsv:
    def test_three_rows(self, tmp_path):
        p = write(tmp_path, "a.csv", "t,x,y\n0,1,2\n1,3,4\n2,5,6\n")
        x, y = read_csv(p)
        assert (x.name, y.name) == ("x", "y")
        np.testing.assert_array_equal(x.values, [1, 3, 5])
        assert x.dt == 1 and x.t0 == 0

    def test_time_column_sets_dt(self, tmp_path):
        p = write(tmp_path, "a.csv", "time,x\n10,1\n10.5,2\n11,3\n")
        (x,) = read_csv(p)
        assert x.dt == 0.5 and x.t0 == 10

    def test_no_time_column(self, tmp_path):
        (x,) = read_csv(write(tmp_path, "a.csv", "x\n1\n2\n"))
        assert x.dt == 1 and x.t0 == 0

    def test_empty_cell_is_missing(self, tmp_path):
        (x,) = read_csv(write(tmp_path, "a.csv", "t,x\n0,1\n1,\n2,NaN\n3,4\n"))
        assert np.isnan(x.values[1]) and np.isnan(x.values[2])

    def test_non_uniform_time(self, tmp_path):
        with pytest.raises(DataError, match="uniformly"):
            read_csv(write(tmp_path, "a.csv", "t,x\n0,1\n1,2\n3,3\n"))

    def test_non_numeric_cell_line_number(self, tmp_path):
        with pytest.raises(DataError, match=r"a\.csv:3: non-numeric"):
            read_csv(write(tmp_path, "a.csv", "t,x\n0,1\n1,abc\n"))

    def test_ragged_row(self, tmp_path):
        with pytest.raises(DataError, match=":3: expected 2 fields"):
            read_table(write(tmp_path, "a.csv", "t,x\n0,1\n1,2,3\n"))

    def test_unknown_column(self, tmp_path):
        with pytest.raises(DataError, match="unknown column"):
            read_csv(write(tmp_path, "a.csv", "t,x\n0,1\n"), ["q"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            read_csv(tmp_path / "nope.csv")


class TestWriteCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.standard_normal(50) * 10
        vals[7] = np.nan
        p = write_csv(tmp_path / "o.csv", {"t": np.arange(50.0), "x": vals})
        (x,) = read_csv(p)
        np.testing.assert_allclose(x.values, vals, atol=1e-10, equal_nan=True)
        assert p.read_text().splitlines()[8] == "7,"

    def test_byte_identical(self, tmp_path):
        table = {"a": [0.1, 1 / 3, math.nan, 2.0], "n": [1, 2, 3, 4]}
        a = write_csv(tmp_path / "a.csv", table).read_bytes()
        b = write_csv(tmp_path / "b.csv", table).read_bytes()
        assert a == b and b"\r" not in a

    def test_format_value(self):
        assert format_value(3.0) == "3"
        assert format_value(math.nan) == ""
        assert format_value(None) == ""
        assert format_value(True) == "true"
        assert format_value(1 / 3) == "0.333333333333"

    def test_length_mismatch(self, tmp_path):
        with pytest.raises(DataError):
            write_csv(tmp_path / "a.csv", {"a": [1, 2], "b": [1]})

    def test_manifest_path(self):
        assert manifest_path_for("dir/run.csv").name == "run.manifest.json"


CONFIG = """
[experiment]
amplitudes = 0, 8
realizations = 2
seed = 5
lib = 1, 1000
pred = 1001, 1500
Tp = 0, 1
models = tk, sel

[model tk]
kind = takens
inputs = x, y
target = z
E = 2

[model sel]
kind = emm-selected-imf
inputs = x
target = z
imf_indices = 2, 3
max_imfs = 6
"""


class TestConfig:
    def test_parse(self):
        spec = parse_experiment_config(CONFIG)
        assert spec.amplitudes == (0.0, 8.0) and spec.realizations == 2 and spec.seed == 5
        assert spec.split == SplitSpec(1, 1000, 1001, 1500)
        assert spec.Tp == (0, 1)
        tk, sel = spec.models
        assert tk.E == 2 and tk.inputs == ("x", "y") and tk.target == "z"
        assert sel.imf_indices == (2, 3) and sel.sift.max_imfs == 6

    def test_missing_model_section(self):
        with pytest.raises(DataError, match="model sel"):
            parse_experiment_config(CONFIG.split("[model sel]")[0])

    def test_bad_kind(self):
        with pytest.raises(DataError, match="unknown kind"):
            parse_experiment_config(CONFIG.replace("kind = takens", "kind = wavelet"))

    def test_input_file(self, tmp_path):
        text = CONFIG.replace("seed = 5", "seed = 5\ninput = data.csv")
        spec = parse_experiment_config(text, base_dir=tmp_path)
        assert spec.generator is None and spec.input_path == str(tmp_path / "data.csv")


class TestCliHelpers:
    def test_int_list(self):
        assert int_list("1,3") == [1, 3]
        assert int_list("1:4") == [1, 2, 3, 4]
        assert int_list("1:56:7") == list(range(1, 57, 7))

    def test_seed_precedence(self, monkeypatch):
        monkeypatch.setenv("EMM_SEED", "17")
        assert resolve_seed(3) == 3
        assert resolve_seed(None) == 17
        monkeypatch.delenv("EMM_SEED")
        assert isinstance(resolve_seed(None), int)


@pytest.fixture
def rossler_csv(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["gen", "rossler", "--A", "4", "--seed", "2", "--out", str(out)]) == 0
    return out


class TestCli:
    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "simplex" in capsys.readouterr().out

    def test_exit_codes(self, tmp_path, capsys):
        assert main(["simplex", "--input", str(tmp_path / "missing.csv"), "--target", "x",
                     "--lib", "1,10", "--pred", "11,20"]) == 2
        assert main(["simplex", "--target", "x"]) == 1
        assert main(["frobnicate"]) == 1
        bad = write(tmp_path, "bad.csv", "t,x\n0,1\n1,oops\n")
        assert main(["emd", "--input", str(bad), "--column", "x"]) == 2
        assert "bad.csv:3" in capsys.readouterr().err

    def test_gen_records_seed(self, rossler_csv):
        manifest = json.loads(manifest_path_for(rossler_csv).read_text())
        assert manifest["seed"] == 2
        assert manifest["command"][:2] == ["emm", "gen"]
        cols = read_csv(rossler_csv)
        assert [c.name for c in cols] == ["x", "y", "z", "x_noisy", "y_noisy", "z_noisy"]

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EMM_SEED", "2")
        out = tmp_path / "e.csv"
        assert main(["gen", "rossler", "--A", "4", "--out", str(out)]) == 0
        assert json.loads(manifest_path_for(out).read_text())["seed"] == 2
        ref = tmp_path / "ref.csv"
        main(["gen", "rossler", "--A", "4", "--seed", "2", "--out", str(ref)])
        assert out.read_bytes() == ref.read_bytes()

    def test_gen_deterministic(self, rossler_csv, tmp_path):
        again = tmp_path / "again.csv"
        main(["gen", "rossler", "--A", "4", "--seed", "2", "--out", str(again)])
        assert again.read_bytes() == rossler_csv.read_bytes()

    def test_emd_stdout_matches_library(self, rossler_csv, capsys, tmp_path):
        capsys.readouterr()
        assert main(["emd", "--input", str(rossler_csv), "--column", "x_noisy"]) == 0
        captured = capsys.readouterr()
        pipe = write(tmp_path, "imfs.csv", captured.out)
        cols = {s.name: s.values for s in read_csv(pipe)}
        lib = sift(read_csv(rossler_csv, ["x_noisy"])[0])
        assert f"{lib.n_imfs} IMFs" in captured.err
        for m in lib.imfs:
            np.testing.assert_allclose(cols[m.name], m.values, rtol=1e-11, atol=1e-11)

    def test_emd_then_simplex_composes(self, rossler_csv, tmp_path, capsys):
        imfs = tmp_path / "imfs.csv"
        assert main(["emd", "--input", str(rossler_csv), "--column", "x_noisy",
                     "--out", str(imfs)]) == 0
        assert main(["simplex", "--input", str(imfs), "--columns", "x_noisy_imf2,x_noisy_imf3",
                     "--target", f"{rossler_csv}:z", "--embedded", "--lib", "1,2000",
                     "--pred", "2001,3000"]) == 0
        assert capsys.readouterr().out.startswith("rho=")

    def test_simplex_thin_adapter(self, rossler_csv, tmp_path, capsys):
        out = tmp_path / "f.csv"
        assert main(["simplex", "--input", str(rossler_csv), "--columns", "x_noisy",
                     "--target", "z", "--E", "3", "--Tp", "1", "--lib", "1,2000",
                     "--pred", "2001,2999", "--out", str(out)]) == 0
        x, z = read_csv(rossler_csv, ["x_noisy", "z"])
        # the CSV holds 12 significant digits; recompute from the same rounded data
        lib = simplex(delay_embed(x, 3), z, SplitSpec(1, 2000, 2001, 2999), SimplexSpec(Tp=1))
        stats = capsys.readouterr().out.split()
        assert stats[0] == f"rho={lib.rho:.6g}"
        table = {s.name: s.values for s in read_csv(out)}
        np.testing.assert_allclose(table["predicted"], lib.predictions.values, rtol=1e-11,
                                   equal_nan=True)
        manifest = json.loads(manifest_path_for(out).read_text())
        assert manifest["outputs"] == [str(out)]

    def test_forecast_moving_window(self, tmp_path, capsys):
        t = np.arange(800)
        s = np.sin(2 * np.pi * t / 50)
        data = write_csv(tmp_path / "s.csv", {"t": t, "s": s})
        out = tmp_path / "mw.csv"
        assert main(["forecast", "--input", str(data), "--target", "s", "--model", "takens",
                     "--protocol", "moving-window", "--lib-end-start", "600", "--step", "50",
                     "--Tp", "1,5", "--out", str(out)]) == 0
        summary = {c.name: c.values for c in read_csv(out)}
        np.testing.assert_array_equal(summary["n_windows"], [4, 4])
        assert (tmp_path / "mw_windows.csv").exists()

    def test_experiment_run_deterministic(self, tmp_path):
        cfg = write(tmp_path, "exp.ini", CONFIG.replace("realizations = 2", "realizations = 1"))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["experiment", "run", str(cfg), "--out", str(a)]) == 0
        assert main(["experiment", "run", str(cfg), "--out", str(b)]) == 0
        for name in ("results.csv", "summary.csv", "failures.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["seed"] == 5 and len(manifest["config_hash"]) == 64
        lines = (a / "results.csv").read_text().splitlines()
        assert lines[0] == "model,amplitude,realization,snr_db,rho,rmse,Tp"
        assert len(lines) - 1 == 2 * 2 * 2
