"""CSV tables, experiment config files and run manifests.

CSV conventions: first row is the header; an optional time column named
``t`` or ``time``; missing cells are empty or ``NaN``.  Output floats carry 12
significant digits, missing values are written as empty fields and lines end
with ``\\n``, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import DataError, SplitSpec, TimeSeries

TIME_COLUMNS = ("t", "time")
_MISSING = {"", "nan", "na"}


def _parse_cell(text: str, path, line: int, column: str) -> float:
    s = text.strip()
    if s.lower() in _MISSING:
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise DataError(f"{path}:{line}: non-numeric value {text!r} in column {column!r}") from None


def read_table(path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Header and numeric columns of a CSV file."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    data = [[] for _ in header]
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            data[j].append(_parse_cell(cell, path, line, header[j]))
    return header, {h: np.array(col, dtype=float) for h, col in zip(header, data)}


def _time_column(header: Sequence[str]) -> str | None:
    for h in header:
        if h.lower() in TIME_COLUMNS:
            return h
    return None


def read_csv(path, columns: Sequence[str] | None = None) -> list[TimeSeries]:
    """Selected (default: all non-time) columns as :class:`TimeSeries`.

    ``dt`` and ``t0`` come from the time column when there is one, otherwise
    ``dt = 1`` and ``t0 = 0``.  A time column with gaps larger than
    ``1.001 * dt`` or non-increasing steps is rejected.
    """
    header, data = read_table(path)
    tcol = _time_column(header)
    dt, t0 = 1.0, 0.0
    if tcol is not None:
        t = data[tcol]
        if np.isnan(t).any():
            raise DataError(f"{path}: missing values in time column {tcol!r}")
        if t.size >= 2:
            steps = np.diff(t)
            dt = float(steps[0])
            if dt <= 0 or np.any(steps <= 0) or np.any(steps > 1.001 * dt):
                bad = int(np.flatnonzero((steps <= 0) | (steps > 1.001 * dt))[0]) if dt > 0 else 0
                raise DataError(
                    f"{path}: time column {tcol!r} is not uniformly sampled "
                    f"(step {steps[bad]:g} at line {bad + 3}, expected {dt:g})"
                )
        if t.size:
            t0 = float(t[0])
    if columns is None:
        columns = [h for h in header if h != tcol]
    out = []
    for c in columns:
        if c not in data:
            raise DataError(f"{path}: unknown column {c!r} (have {', '.join(header)})")
        if data[c].size == 0:
            raise DataError(f"{path}: no data rows")
        out.append(TimeSeries(c, data[c], dt, t0))
    return out


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return ""
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path, table: Mapping[str, Sequence] | Sequence[TimeSeries]) -> Path:
    """Write columns (name -> values, or a list of series) to ``path``."""
    if not isinstance(table, Mapping):
        table = {s.name: s.values for s in table}
    names = list(table)
    cols = [list(table[n]) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise DataError(f"write_csv: columns have different lengths {sorted(lengths)}")
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for row in zip(*cols):
                writer.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


# --------------------------------------------------------------------------- config files


def _list(text: str, cast=str) -> list:
    return [cast(v.strip()) for v in text.replace(";", ",").split(",") if v.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise DataError(f"not a boolean: {text!r}")


def _range_pair(text: str) -> tuple[int, int]:
    a, b = _list(text, int)
    return a, b


def parse_experiment_config(text: str, base_dir=".") -> "ExperimentSpec":
    """Parse an INI-style experiment file.

    ::

        [experiment]
        generator = rossler          ; or: input = data.csv
        amplitudes = 1, 4, 8, 16, 32
        realizations = 50
        seed = 7
        lib = 1, 2000
        pred = 2001, 3000
        Tp = 0
        models = reference, naive, takens, emm
        ; optional: B, C, noise_scale, noise_on_target, columns, out_dir

        [model takens]
        kind = takens                ; multivariable | takens | emm-all-imf | emm-selected-imf
        inputs = x, y
        target = z
        E = 3
        ; optional: tau, knn, method, theta, imf_indices, if_threshold,
        ; multiview_D, strict, max_imfs, sd_threshold, max_sift_iterations, boundary_pad
    """
    from .emd import SiftParams
    from .pipeline import ExperimentSpec, ModelSpec

    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise DataError(f"config: {exc}") from None
    if not cp.has_section("experiment"):
        raise DataError("config: missing [experiment] section")
    ex = cp["experiment"]

    models = []
    names = _list(ex.get("models", ""))
    if not names:
        raise DataError("config: [experiment] models is empty")
    for name in names:
        sec = f"model {name}"
        if not cp.has_section(sec):
            raise DataError(f"config: missing [{sec}] section")
        m = cp[sec]
        sift_kw = {}
        for key, cast in (("max_imfs", int), ("max_sift_iterations", int),
                          ("sd_threshold", float), ("boundary_pad", int)):
            if key in m:
                sift_kw[key] = cast(m[key])
        kw = {}
        for key, cast in (("E", int), ("tau", int), ("knn", int), ("theta", float),
                          ("if_threshold", float), ("multiview_D", int), ("max_combos", int),
                          ("seed", int), ("exclusion_radius", int)):
            if key in m:
                kw[key] = cast(m[key])
        if "method" in m:
            kw["method"] = m["method"].strip()
        if "strict" in m:
            kw["strict"] = _bool(m["strict"])
        if "imf_indices" in m:
            kw["imf_indices"] = tuple(_list(m["imf_indices"], int))
        try:
            models.append(ModelSpec(
                name=name, kind=m.get("kind", "").strip(), inputs=tuple(_list(m.get("inputs", ""))),
                target=m.get("target", "").strip() or None, sift=SiftParams(**sift_kw), **kw,
            ))
        except (TypeError, ValueError) as exc:
            raise DataError(f"config [{sec}]: {exc}") from None

    try:
        lib = _range_pair(ex.get("lib", "1, 2000"))
        pred = _range_pair(ex.get("pred", "2001, 3000"))
        kw = dict(
            models=tuple(models),
            amplitudes=tuple(_list(ex.get("amplitudes", "1, 4, 8, 16, 32"), float)),
            realizations=int(ex.get("realizations", "50")),
            seed=int(ex.get("seed", "0")),
            split=SplitSpec(*lib, *pred),
            Tp=tuple(_list(ex.get("Tp", "0"), int)),
        )
        if "input" in ex:
            kw["generator"] = None
            kw["input_path"] = str(Path(base_dir) / ex["input"].strip())
            kw["input_columns"] = tuple(_list(ex.get("columns", "")))
        else:
            kw["generator"] = ex.get("generator", "rossler").strip()
        for key in ("B", "C", "noise_scale"):
            if key in ex:
                kw[key] = float(ex[key])
        if "noise_on_target" in ex:
            kw["noise_on_target"] = _bool(ex["noise_on_target"])
        if "out_dir" in ex:
            kw["out_dir"] = ex["out_dir"].strip()
        return ExperimentSpec(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"config [experiment]: {exc}") from None


# --------------------------------------------------------------------------- manifests


@dataclass
class RunManifest:
    command: list[str]
    config_hash: str
    seed: int | None
    version: str
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def config_hash(payload: str | bytes) -> str:
    if isinstance(payload, str):
        payload = payload.encode()
    return hashlib.sha256(payload).hexdigest()


def manifest_path_for(out: str | os.PathLike) -> Path:
    """Sidecar manifest path for a single output file (``x.csv`` -> ``x.manifest.json``)."""
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")
