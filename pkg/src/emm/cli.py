"""``emm`` command line.

Subcommands are thin adapters over the library: they parse arguments, read
CSV inputs, call one library function and write CSV outputs plus a JSON run
manifest.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import DataError, EmmError, SplitSpec, StateSpace, TimeSeries

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def int_list(text: str) -> list[int]:
    """``"1,3,7"``, ``"1:10"`` (inclusive) or ``"1:56:7"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            if len(bits) == 2:
                bits.append(1)
            start, stop, step = bits
            out.extend(range(start, stop + 1, step))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _range(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'start,end', got {text!r}") from None
    return a, b


def resolve_seed(seed: int | None) -> int:
    """``--seed``, else ``EMM_SEED``, else a fresh random seed (recorded in the manifest)."""
    if seed is not None:
        return seed
    env = os.environ.get("EMM_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"EMM_SEED must be an integer, got {env!r}") from None
    return secrets.randbelow(2**31)


class _Run:
    """Collects outputs and writes the run manifest."""

    def __init__(self, argv, seed=None, config_payload=None):
        from .io import config_hash
        self.argv = list(argv)
        self.seed = seed
        self.started = _now()
        self.outputs: list[str] = []
        payload = config_payload if config_payload is not None else json.dumps(self.argv)
        self.hash = config_hash(payload)

    def write(self, path, table):
        from .io import write_csv
        p = write_csv(path, table)
        self.outputs.append(str(p))
        return p

    def finish(self, manifest_path):
        from .io import RunManifest
        RunManifest(["emm", *self.argv], self.hash, self.seed, __version__, self.started,
                    _now(), self.outputs).write(manifest_path)


def _load_columns(path, names=None) -> list[TimeSeries]:
    from .io import read_csv
    return read_csv(path, names)


def _load_target(spec: str, input_path: str) -> TimeSeries:
    """Target given as a column of the input, ``file.csv`` or ``file.csv:column``."""
    from .io import read_csv
    path, _, col = spec.partition(":") if ":" in spec and not Path(spec).exists() else (spec, "", "")
    if Path(path).is_file():
        if col:
            return read_csv(path, [col])[0]
        series = read_csv(path)
        if len(series) != 1:
            raise DataError(f"{path}: several columns, name one with {path}:<column>")
        return series[0]
    if spec.endswith(".csv"):
        raise DataError(f"target file not found: {spec}")
    return read_csv(input_path, [spec])[0]


def _columns_arg(text: str | None) -> list[str] | None:
    return [c.strip() for c in text.split(",") if c.strip()] if text else None


def _input_space(args, target: TimeSeries, E: int | None = None) -> StateSpace:
    from .edm import embed_all
    names = _columns_arg(args.columns)
    series = _load_columns(args.input, names)
    if names is None:
        series = [s for s in series if s.name != target.name] or series
    if args.embedded:
        return StateSpace.from_series(series)
    return embed_all(series, args.E if E is None else E, args.tau)


def _split(args) -> SplitSpec:
    return SplitSpec(*args.lib, *args.pred)


def _forecast_table(f) -> dict:
    return {"t": f.predictions.times, "observed": f.observations.values,
            "predicted": f.predictions.values}


def _print_stats(f, out=None):
    print(f"rho={f.rho:.6g} rmse={f.rmse:.6g} mae={f.mae:.6g} n_valid={f.n_valid}",
          file=out or sys.stdout)


# --------------------------------------------------------------------------- commands


def cmd_gen(args, argv):
    from .synth import NoiseSpec, RosslerParams, make_noisy_rossler
    seed = resolve_seed(args.seed)
    run = _Run(argv, seed)
    params = RosslerParams(t_end=args.t_end, t_discard=args.t_discard)
    d = make_noisy_rossler(params, NoiseSpec(A=args.A, B=args.B, C=args.C, scale=args.noise_scale),
                           seed=seed, noise_on_z=not args.no_z_noise)
    run.write(args.out, d.columns())
    snr = d.snr()
    print(" ".join(f"snr_{k}={v:.4g}dB" for k, v in snr.items()))
    from .io import manifest_path_for
    run.finish(manifest_path_for(args.out))


def cmd_emd(args, argv):
    from .emd import SiftParams, if_statistics, sift
    from .io import manifest_path_for
    run = _Run(argv)
    series = _load_columns(args.input, [args.column])[0]
    params = SiftParams(max_imfs=args.max_imfs, max_sift_iterations=args.max_iter,
                        sd_threshold=args.sd_threshold, boundary_pad=args.pad)
    imfs = sift(series, params)
    print(f"{imfs.n_imfs} IMFs", file=sys.stderr)
    if args.if_out:
        run.write(args.if_out, if_statistics(imfs))
    if args.out:
        run.write(args.out, imfs.columns())
        run.finish(manifest_path_for(args.out))
    else:
        _print_table(imfs.columns())
        if args.if_out:
            run.finish(manifest_path_for(args.if_out))


def cmd_simplex(args, argv):
    from .edm import SimplexSpec, simplex
    from .io import manifest_path_for
    run = _Run(argv)
    target = _load_target(args.target, args.input)
    space = _input_space(args, target)
    f = simplex(space, target, _split(args),
                SimplexSpec(knn=args.knn, Tp=args.Tp, exclusion_radius=args.exclusion))
    _print_stats(f)
    if args.out:
        run.write(args.out, _forecast_table(f))
        run.finish(manifest_path_for(args.out))


def cmd_smap(args, argv):
    from .edm import SMapSpec, smap
    from .io import manifest_path_for
    run = _Run(argv)
    target = _load_target(args.target, args.input)
    space = _input_space(args, target)
    f = smap(space, target, _split(args),
             SMapSpec(theta=args.theta, Tp=args.Tp, exclusion_radius=args.exclusion))
    _print_stats(f)
    if args.out:
        table = _forecast_table(f)
        coefs = f.diagnostics["coefficients"]
        for j, label in enumerate(f.diagnostics["coefficient_labels"]):
            table[f"coef_{label}"] = coefs[:, j]
        run.write(args.out, table)
        run.finish(manifest_path_for(args.out))


def _print_table(table):
    from .io import format_value
    if not isinstance(table, dict):
        table = {s.name: s.values for s in table}
    keys = list(table)
    print(",".join(keys))
    for row in zip(*(table[k] for k in keys)):
        print(",".join(format_value(v) for v in row))


def _emit_table(args, argv, run, table):
    from .io import manifest_path_for
    _print_table(table)
    if args.out:
        run.write(args.out, table)
        run.finish(manifest_path_for(args.out))


def cmd_scan_e(args, argv):
    from .edm import scan_E
    run = _Run(argv)
    target = _load_target(args.target, args.input)
    series = _load_columns(args.input, _columns_arg(args.columns))
    if args.columns is None:
        series = [s for s in series if s.name != target.name] or series
    table = scan_E(series if len(series) > 1 else series[0], target, _split(args),
                   args.E, args.tau, args.Tp, args.knn, args.exclusion)
    _emit_table(args, argv, run, table)


def cmd_scan_tp(args, argv):
    from .edm import scan_Tp
    run = _Run(argv)
    target = _load_target(args.target, args.input)
    space = _input_space(args, target)
    table = scan_Tp(space, target, _split(args), Tp_range=args.Tp, knn=args.knn,
                    exclusion_radius=args.exclusion)
    _emit_table(args, argv, run, table)


def cmd_scan_theta(args, argv):
    from .edm import scan_theta
    run = _Run(argv)
    target = _load_target(args.target, args.input)
    space = _input_space(args, target)
    table = scan_theta(space, target, _split(args), Tp=args.Tp, theta_range=args.theta,
                       exclusion_radius=args.exclusion)
    _emit_table(args, argv, run, table)


def cmd_multiview(args, argv):
    from .io import manifest_path_for
    from .multiview import MultiviewSpec, multiview_select, scan_D
    seed = resolve_seed(args.seed)
    run = _Run(argv, seed)
    target = _load_target(args.target, args.input)
    names = _columns_arg(args.columns)
    series = _load_columns(args.input, names)
    if names is None:
        series = [s for s in series if s.name != target.name and not s.name.endswith("_residual")]
    candidates = StateSpace.from_series(series)
    spec = MultiviewSpec(D=args.D, split=_split(args), Tp=args.Tp, knn=args.knn,
                         max_combos=args.max_combos, top_k=args.top, seed=seed)
    if args.scan_D:
        table = scan_D(candidates, target, spec, args.scan_D, jobs=args.jobs)
    else:
        table = multiview_select(candidates, target, spec, jobs=args.jobs).table()
    _emit_table(args, argv, run, table)
    if args.out:
        run.finish(manifest_path_for(args.out))


def _model_from_args(args, name="model"):
    from .emd import SiftParams
    from .pipeline import ModelSpec
    return ModelSpec(
        name=name, kind=args.model, inputs=tuple(_columns_arg(args.columns) or ()),
        E=args.E, tau=args.tau,
        imf_indices=tuple(args.imf_indices) if args.imf_indices else None,
        if_threshold=args.if_threshold, multiview_D=args.multiview_D,
        method=args.method, theta=args.theta, knn=args.knn, exclusion_radius=args.exclusion,
        sift=SiftParams(max_imfs=args.max_imfs), strict=args.strict,
    )


def cmd_forecast(args, argv):
    from .io import manifest_path_for
    from .pipeline import emm_forecast, moving_window_forecast, progressive_forecast
    run = _Run(argv)
    target = _load_target(args.target, args.input)
    names = _columns_arg(args.columns)
    inputs = _load_columns(args.input, names)
    if names is None:
        inputs = [s for s in inputs if s.name != target.name] or inputs
    model = _model_from_args(args)
    if args.protocol == "single":
        if args.lib is None or args.pred is None:
            raise UsageError("forecast --protocol single needs --lib and --pred")
        f = emm_forecast(inputs, target, model, _split(args), args.Tp[0])
        _print_stats(f)
        if args.out:
            run.write(args.out, _forecast_table(f))
    else:
        if args.protocol == "moving-window":
            res = moving_window_forecast(inputs, target, model, args.lib_end_start, args.step,
                                         args.Tp)
            suffix = "_windows.csv"
        else:
            res = progressive_forecast(inputs, target, model, args.lib_end0, args.horizon, args.Tp)
            suffix = "_daily.csv"
        _print_table(res.summary)
        if args.out:
            run.write(args.out, res.summary)
            run.write(Path(args.out).with_name(Path(args.out).stem + suffix),
                      {k: [r[k] for r in res.records] for k in res.records[0]})
    if args.out:
        run.finish(manifest_path_for(args.out))


def cmd_experiment(args, argv):
    from dataclasses import replace
    from .io import parse_experiment_config
    from .pipeline import run_ensemble
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    spec = parse_experiment_config(text, base_dir=path.parent)
    seed = resolve_seed(args.seed) if (args.seed is not None or "seed" not in text) else spec.seed
    spec = replace(spec, seed=seed)
    out_dir = Path(args.out or spec.out_dir or "emm_run")
    run = _Run(argv, seed, config_payload=text + f"\nseed={seed}")
    result = run_ensemble(spec, jobs=args.jobs)
    tables = result.tables()
    run.write(out_dir / "results.csv", tables["results"])
    run.write(out_dir / "summary.csv", tables["summary"])
    run.write(out_dir / "failures.csv", tables["failures"])
    for row in result.summary:
        print(f"{row['model']:>12s} A={row['amplitude']:<6g} Tp={row['Tp']} n={row['n']} "
              f"rho={row['rho_mean']:.4f}±{row['rho_se']:.4f} snr={row['snr_db_mean']:.2f}dB")
    run.finish(out_dir / "manifest.json")


# --------------------------------------------------------------------------- parser


def _edm_flags(p, scan=None):
    p.add_argument("--input", required=True, help="CSV file with input columns")
    p.add_argument("--columns", help="comma-separated input columns (default: all but target)")
    p.add_argument("--target", required=True, help="target column, file.csv or file.csv:column")
    p.add_argument("--lib", type=_range, required=True, help="library rows 'start,end' (1-based)")
    p.add_argument("--pred", type=_range, required=True, help="prediction rows 'start,end'")
    p.add_argument("--E", type=int_list if scan == "E" else int, default=[1, 2, 3, 4, 5, 6, 7, 8, 9, 10] if scan == "E" else 3)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--Tp", type=int_list if scan == "Tp" else int, default=list(range(0, 11)) if scan == "Tp" else (1 if scan else 0))
    p.add_argument("--theta", type=float_list if scan == "theta" else float,
                   default=[0, 0.1, 0.3, 0.5, 0.75, 1, 1.5, 2, 3, 4, 5, 6, 8] if scan == "theta" else 0.0)
    p.add_argument("--knn", type=int)
    p.add_argument("--exclusion", type=int, help="exclusion radius in samples")
    p.add_argument("--embedded", action="store_true",
                   help="use input columns directly as the state-space (no delay embedding)")
    p.add_argument("--out", help="output CSV")


def build_parser() -> argparse.ArgumentParser:
    from .synth import ROSSLER_NOISE_SCALE

    parser = _Parser(prog="emm", description="Empirical mode modeling toolkit")
    parser.add_argument("--version", action="version", version=f"emm {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("gen", help="generate synthetic data")
    p.add_argument("system", choices=["rossler"])
    p.add_argument("--A", type=float, default=0.0, help="noise amplitude")
    p.add_argument("--B", type=float, default=0.5, help="pink weight")
    p.add_argument("--C", type=float, default=1.0, help="brown weight")
    p.add_argument("--noise-scale", type=float, default=ROSSLER_NOISE_SCALE)
    p.add_argument("--no-z-noise", action="store_true", help="leave z noiseless")
    p.add_argument("--t-end", type=float, default=500.0)
    p.add_argument("--t-discard", type=float, default=200.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("emd", help="empirical mode decomposition of one column")
    p.add_argument("--input", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--out", help="output CSV (default: standard output)")
    p.add_argument("--if-out", help="also write per-IMF instantaneous-frequency statistics")
    p.add_argument("--max-imfs", type=int, default=16)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--sd-threshold", type=float, default=0.2)
    p.add_argument("--pad", type=int, default=2)
    p.set_defaults(func=cmd_emd)

    for name, func, scan in (("simplex", cmd_simplex, None), ("smap", cmd_smap, None),
                             ("scan-e", cmd_scan_e, "E"), ("scan-tp", cmd_scan_tp, "Tp"),
                             ("scan-theta", cmd_scan_theta, "theta")):
        p = sub.add_parser(name, help=f"{name} forecast skill")
        _edm_flags(p, scan)
        p.set_defaults(func=func)

    p = sub.add_parser("multiview", help="rank column subsets by out-of-sample skill")
    p.add_argument("--input", required=True)
    p.add_argument("--columns")
    p.add_argument("--target", required=True)
    p.add_argument("--D", type=int, default=6)
    p.add_argument("--scan-D", type=int_list, help="scan subset sizes, e.g. 3:8")
    p.add_argument("--lib", type=_range, required=True)
    p.add_argument("--pred", type=_range, required=True)
    p.add_argument("--Tp", type=int, default=0)
    p.add_argument("--knn", type=int)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--max-combos", type=int, default=5000)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_multiview)

    p = sub.add_parser("forecast", help="single split, moving-window or progressive forecasts")
    p.add_argument("--input", required=True)
    p.add_argument("--columns")
    p.add_argument("--target", required=True)
    p.add_argument("--model", required=True,
                   choices=["multivariable", "takens", "emm-all-imf", "emm-selected-imf"])
    p.add_argument("--protocol", choices=["single", "moving-window", "progressive"],
                   default="single")
    p.add_argument("--lib", type=_range)
    p.add_argument("--pred", type=_range)
    p.add_argument("--Tp", type=int_list, default=[1])
    p.add_argument("--E", type=int, default=3)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--knn", type=int)
    p.add_argument("--exclusion", type=int)
    p.add_argument("--method", choices=["simplex", "smap"], default="simplex")
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--imf-indices", type=int_list)
    p.add_argument("--if-threshold", type=float)
    p.add_argument("--multiview-D", type=int)
    p.add_argument("--max-imfs", type=int, default=16)
    p.add_argument("--strict", action="store_true",
                   help="decompose only data up to the last forecast origin")
    p.add_argument("--lib-end-start", type=int, default=5475)
    p.add_argument("--step", type=int, default=30)
    p.add_argument("--lib-end0", type=int, default=5721)
    p.add_argument("--horizon", type=int, default=121)
    p.add_argument("--out")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("experiment", help="ensemble experiments from a config file")
    esub = p.add_subparsers(dest="action", parser_class=_Parser, required=True)
    q = esub.add_parser("run")
    q.add_argument("config")
    q.add_argument("--jobs", type=int, default=1)
    q.add_argument("--seed", type=int)
    q.add_argument("--out", help="output directory (overrides out_dir in the config)")
    q.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.func(args, argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EmmError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BrokenPipeError:
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
