"""Model construction, ensemble experiments and forecast protocols.

State-space kinds
-----------------
``multivariable``      the input series as coordinates.
``takens``             each input delay-embedded (``E``, ``tau``), concatenated.
``emm-all-imf``        every IMF of every input.
``emm-selected-imf``   IMFs chosen by explicit indices, an IF-variance
                       threshold, or out-of-sample multiview selection.

IMFs are computed over the whole record before the library/prediction split
(``strict=False``), so IMF values at library rows depend on later samples.
``strict=True`` decomposes only the samples up to the last prediction origin.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import (DataError, EmmError, ForecastResult, SplitSpec, StateSpace, TimeSeries,
                   standard_error)
from .edm import SimplexSpec, SMapSpec, embed_all, simplex, smap
from .emd import ImfSet, SiftParams, if_variance_filter, imf_space, sift
from .multiview import MultiviewSpec, best_forecast, multiview_select
from .synth import (ROSSLER_NOISE_SCALE, NoiseSpec, RosslerParams, child_seed,
                    make_noisy_rossler, multispectral_noise, snr_db)

MODEL_KINDS = ("multivariable", "takens", "emm-all-imf", "emm-selected-imf")

#: SNR at or below which EMM is recommended over delay embedding.
SNR_GATE_DB = 3.0


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    inputs: tuple[str, ...] = ()
    target: str | None = None
    E: int = 3
    tau: int = 1
    imf_indices: Sequence[int] | Mapping[str, Sequence[int]] | None = None
    if_threshold: float | None = None
    multiview_D: int | None = None
    method: str = "simplex"
    theta: float = 0.0
    knn: int | None = None
    exclusion_radius: int | None = None
    sift: SiftParams = field(default_factory=SiftParams)
    strict: bool = False
    max_combos: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DataError(f"model {self.name!r}: unknown kind {self.kind!r}")
        if self.method not in ("simplex", "smap"):
            raise DataError(f"model {self.name!r}: method must be simplex or smap")
        selectors = [self.imf_indices is not None, self.if_threshold is not None,
                     self.multiview_D is not None]
        if self.kind == "emm-selected-imf" and sum(selectors) != 1:
            raise DataError(
                f"model {self.name!r}: emm-selected-imf needs exactly one of "
                "imf_indices, if_threshold, multiview_D"
            )
        object.__setattr__(self, "inputs", tuple(self.inputs))


def _pick_inputs(inputs: Sequence[TimeSeries], model: ModelSpec) -> list[TimeSeries]:
    if not model.inputs:
        return list(inputs)
    by_name = {s.name: s for s in inputs}
    missing = [n for n in model.inputs if n not in by_name]
    if missing:
        raise DataError(f"model {model.name!r}: inputs {missing} not provided "
                        f"(have {sorted(by_name)})")
    return [by_name[n] for n in model.inputs]


def _decompose(series: TimeSeries, params: SiftParams, n_obs: int, cache: dict | None) -> ImfSet:
    key = (id(series), params, n_obs)
    if cache is not None and key in cache:
        return cache[key][1]
    out = sift(series.head(n_obs), params)
    if n_obs < len(series):
        pad = np.full(len(series) - n_obs, np.nan)
        out = ImfSet(
            out.source, out.dt,
            tuple(m.with_values(np.concatenate([m.values, pad])) for m in out.imfs),
            out.residual.with_values(np.concatenate([out.residual.values, pad])),
        )
    if cache is not None:
        # keep the series alive so its id() stays unique while cached
        cache[key] = (series, out)
    return out


def build_state_space(inputs: Sequence[TimeSeries], target: TimeSeries, model: ModelSpec,
                      split: SplitSpec, Tp: int = 0, cache: dict | None = None) -> StateSpace:
    """State-space for ``model``; multiview selection scores on ``split``."""
    series = _pick_inputs(inputs, model)
    if model.kind == "multivariable":
        return StateSpace.from_series(series)
    if model.kind == "takens":
        return embed_all(series, model.E, model.tau)

    n_obs = min(split.pred_end, len(target)) if model.strict else len(target)
    sets = [_decompose(s, model.sift, n_obs, cache) for s in series]
    if model.kind == "emm-all-imf":
        return imf_space(sets)
    if model.imf_indices is not None:
        sel = model.imf_indices
        return imf_space(sets, dict(sel) if isinstance(sel, Mapping) else list(sel))
    if model.if_threshold is not None:
        sel = {s.source: if_variance_filter(s, model.if_threshold) for s in sets}
        return imf_space(sets, sel)
    candidates = imf_space(sets)
    mv = MultiviewSpec(D=model.multiview_D, split=split, Tp=Tp, knn=model.knn,
                       max_combos=model.max_combos, top_k=1, seed=model.seed)
    best = multiview_select(candidates, target, mv).best
    return candidates.select([i - 1 for i in best])


def emm_forecast(inputs: Sequence[TimeSeries], target: TimeSeries, model: ModelSpec,
                 split: SplitSpec, Tp: int = 0, cache: dict | None = None) -> ForecastResult:
    """Build the model's state-space and forecast ``target`` on ``split``."""
    space = build_state_space(inputs, target, model, split, Tp, cache)
    if model.method == "smap":
        result = smap(space, target, split,
                      SMapSpec(theta=model.theta, Tp=Tp, exclusion_radius=model.exclusion_radius))
    else:
        result = simplex(space, target, split,
                         SimplexSpec(knn=model.knn, Tp=Tp, exclusion_radius=model.exclusion_radius))
    result.diagnostics.update(model=model.name, kind=model.kind, state_labels=space.labels,
                              E_state=space.E)
    return result


# --------------------------------------------------------------------------- ensembles


@dataclass(frozen=True)
class ExperimentSpec:
    models: tuple[ModelSpec, ...]
    amplitudes: tuple[float, ...] = (1, 4, 8, 16, 32)
    realizations: int = 50
    seed: int = 0
    split: SplitSpec = SplitSpec(1, 2000, 2001, 3000)
    Tp: tuple[int, ...] = (0,)
    generator: str | None = "rossler"
    input_path: str | None = None
    input_columns: tuple[str, ...] = ()
    rossler: RosslerParams = field(default_factory=RosslerParams)
    B: float = 0.5
    C: float = 1.0
    noise_scale: float = ROSSLER_NOISE_SCALE
    noise_on_target: bool = True
    out_dir: str | None = None
    max_failure_fraction: float = 0.1

    def __post_init__(self):
        if self.realizations < 1:
            raise DataError("realizations must be >= 1")
        if any(a < 0 for a in self.amplitudes):
            raise DataError("noise amplitudes must be >= 0")
        if not self.models:
            raise DataError("experiment lists no models")
        if (self.generator is None) == (self.input_path is None):
            raise DataError("experiment needs exactly one of generator or input_path")
        if self.generator not in (None, "rossler"):
            raise DataError(f"unknown generator {self.generator!r}")
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "Tp", tuple(int(t) for t in self.Tp))
        object.__setattr__(self, "models", tuple(self.models))


@dataclass
class EnsembleResult:
    records: list[dict]
    summary: list[dict]
    failures: list[dict]
    realizations: int

    def summary_for(self, model: str, amplitude: float, Tp: int | None = None) -> dict:
        for row in self.summary:
            if row["model"] == model and row["amplitude"] == amplitude and (
                    Tp is None or row["Tp"] == Tp):
                return row
        raise KeyError((model, amplitude, Tp))

    def tables(self) -> dict[str, dict[str, list]]:
        def columnar(rows, keys):
            return {k: [r[k] for r in rows] for k in keys}

        return {
            "results": columnar(self.records, ["model", "amplitude", "realization", "snr_db",
                                               "rho", "rmse", "Tp"]),
            "summary": columnar(self.summary, ["model", "amplitude", "Tp", "n", "n_failed",
                                               "rho_mean", "rho_se", "rmse_mean", "rmse_se",
                                               "snr_db_mean"]),
            "failures": columnar(self.failures, ["amplitude", "realization", "error"]),
        }


def _clean_series(spec: ExperimentSpec) -> list[TimeSeries]:
    if spec.generator == "rossler":
        from .synth import integrate_rossler
        return list(integrate_rossler(spec.rossler))
    from .io import read_csv
    return read_csv(spec.input_path, spec.input_columns or None)


def _realize(spec: ExperimentSpec, amplitude: float, r: int):
    """Noisy inputs, clean targets and the SNR of the first noised variable."""
    seed = child_seed(spec.seed, r)
    if spec.generator == "rossler":
        d = make_noisy_rossler(spec.rossler,
                               NoiseSpec(A=amplitude, B=spec.B, C=spec.C, scale=spec.noise_scale),
                               seed=seed, noise_on_z=spec.noise_on_target)
        noisy = [d.x.renamed("x"), d.y.renamed("y"), d.z.renamed("z")]
        clean = [d.x_clean, d.y_clean, d.z_clean]
        noise0 = d.noise[0].values
    else:
        clean = _clean_series(spec)
        targets = {m.target for m in spec.models}
        noisy = []
        noise0 = None
        for j, s in enumerate(clean):
            if s.name in targets and not spec.noise_on_target:
                noisy.append(s)
                continue
            e = multispectral_noise(NoiseSpec(A=amplitude, B=spec.B, C=spec.C, length=len(s),
                                              seed=child_seed(seed, j), scale=spec.noise_scale))
            noisy.append(s.with_values(s.values + e.values))
            if noise0 is None:
                noise0 = e.values
    snr = float("nan")
    if noise0 is not None and np.var(noise0) > 0:
        snr = snr_db(clean[0], noise0)
    return noisy, {s.name: s for s in clean}, snr


def _run_one(spec: ExperimentSpec, amplitude: float, r: int) -> tuple[list[dict], str | None]:
    try:
        noisy, clean, snr = _realize(spec, amplitude, r)
        cache: dict = {}
        rows = []
        for model in spec.models:
            if model.target not in clean:
                raise DataError(f"model {model.name!r}: unknown target {model.target!r}")
            for Tp in spec.Tp:
                f = emm_forecast(noisy, clean[model.target], model, spec.split, Tp, cache)
                rows.append({"model": model.name, "amplitude": amplitude, "realization": r,
                             "snr_db": snr, "rho": f.rho, "rmse": f.rmse, "Tp": Tp})
        return rows, None
    except EmmError as exc:
        return [], f"{type(exc).__name__}: {exc}"


def _run_task(args):
    return _run_one(*args)


def _mean(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return float(np.mean(values)) if values else float("nan")


def _se(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return standard_error(values) if len(values) >= 2 else float("nan")


def run_ensemble(spec: ExperimentSpec, jobs: int = 1, progress=None) -> EnsembleResult:
    """Run every model on every (amplitude, realization) noise draw.

    Realization ``r`` draws its noise from ``child_seed(seed, r)`` at every
    amplitude, so amplitudes differ only in scale.  A realization where any
    model raises is skipped and listed in ``failures``; more than
    ``max_failure_fraction`` failures aborts with :class:`~emm.core.NumericalError`.
    """
    from .core import NumericalError

    tasks = [(spec, a, r) for a in spec.amplitudes for r in range(spec.realizations)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    else:
        outcomes = []
        for t in tasks:
            outcomes.append(_run_task(t))
            if progress is not None:
                progress(len(outcomes), len(tasks))

    records, failures = [], []
    for (_, a, r), (rows, err) in zip(tasks, outcomes):
        if err is None:
            records.extend(rows)
        else:
            failures.append({"amplitude": a, "realization": r, "error": err})
    if len(failures) > spec.max_failure_fraction * len(tasks):
        raise NumericalError(
            f"{len(failures)} of {len(tasks)} realizations failed; first: {failures[0]['error']}"
        )

    summary = []
    for a in spec.amplitudes:
        n_failed = sum(1 for f in failures if f["amplitude"] == a)
        for model in spec.models:
            for Tp in spec.Tp:
                rows = [x for x in records
                        if x["model"] == model.name and x["amplitude"] == a and x["Tp"] == Tp]
                rho = [x["rho"] for x in rows]
                err = [x["rmse"] for x in rows]
                summary.append({
                    "model": model.name, "amplitude": a, "Tp": Tp, "n": len(rows),
                    "n_failed": n_failed,
                    "rho_mean": _mean(rho), "rho_se": _se(rho),
                    "rmse_mean": _mean(err), "rmse_se": _se(err),
                    "snr_db_mean": _mean([x["snr_db"] for x in rows]),
                })
    return EnsembleResult(records, summary, failures, spec.realizations)


def rossler_models(E: int = 3, sift_params: SiftParams | None = None) -> tuple[ModelSpec, ...]:
    """The four-representation comparison: reference, naive, Takens and all-IMF."""
    sp = sift_params or SiftParams()
    return (
        ModelSpec("reference", "multivariable", ("x", "y", "z"), "z"),
        ModelSpec("naive", "multivariable", ("x", "y"), "z"),
        ModelSpec("takens", "takens", ("x", "y"), "z", E=E),
        ModelSpec("emm", "emm-all-imf", ("x", "y"), "z", sift=sp),
    )


# --------------------------------------------------------------------------- protocols


@dataclass
class ProtocolResult:
    """Per-Tp summary table plus per-forecast detail records."""

    summary: dict[str, list]
    records: list[dict]
    forecasts: dict[int, ForecastResult] = field(default_factory=dict)


def _protocol_model(model: ModelSpec) -> ModelSpec:
    # Origins sit outside the usable library (targets must precede the library
    # end), so no self-match exclusion is needed even though ranges overlap.
    if model.exclusion_radius is None:
        return replace(model, exclusion_radius=0)
    return model


def moving_window_forecast(inputs: Sequence[TimeSeries], target: TimeSeries, model: ModelSpec,
                           lib_end_start: int = 5475, step: int = 30,
                           Tp_list: Sequence[int] = range(1, 57, 7),
                           lib_start: int = 1) -> ProtocolResult:
    """Expanding-library forecasts over successive ``step``-sample blocks.

    Window ``j`` trains on rows ``[lib_start, L]`` with ``L = lib_end_start +
    j*step`` and forecasts every row of the block ``[L+1, L+step]`` at each
    horizon ``Tp`` (origins ``L+1-Tp .. L+step-Tp``).  Windows whose block
    extends past the record are skipped.  The summary holds the mean and
    standard error over windows of the per-window rmse.
    """
    n = len(target)
    if lib_end_start >= n:
        raise DataError(f"lib_end_start={lib_end_start} leaves no data after the library")
    model = _protocol_model(model)
    cache: dict = {}
    windows = []
    L = lib_end_start
    while L + step <= n:
        windows.append(L)
        L += step
    records = []
    for L in windows:
        for Tp in Tp_list:
            split = SplitSpec(lib_start, L, L + 1 - Tp, L + step - Tp)
            f = emm_forecast(inputs, target, model, split, Tp, cache)
            records.append({"lib_end": L, "Tp": Tp, "rmse": f.rmse, "rho": f.rho,
                            "n_valid": f.n_valid})
    summary = {"Tp": [], "mean_rmse": [], "se_rmse": [], "mean_rho": [], "n_windows": []}
    for Tp in Tp_list:
        rows = [r for r in records if r["Tp"] == Tp]
        summary["Tp"].append(Tp)
        summary["mean_rmse"].append(_mean([r["rmse"] for r in rows]))
        summary["se_rmse"].append(_se([r["rmse"] for r in rows]))
        summary["mean_rho"].append(_mean([r["rho"] for r in rows]))
        summary["n_windows"].append(len(rows))
    return ProtocolResult(summary, records)


def progressive_forecast(inputs: Sequence[TimeSeries], target: TimeSeries, model: ModelSpec,
                         lib_end0: int = 5721, horizon_days: int = 121,
                         Tp_list: Sequence[int] = (1, 3, 7, 14, 21),
                         lib_start: int = 1) -> ProtocolResult:
    """Daily-retrain forecasts.

    On day ``d`` the library is ``[lib_start, lib_end0 + d]`` and row
    ``lib_end0 + d + 1`` is forecast at every horizon ``Tp``.  ``forecasts``
    maps each ``Tp`` to the collated ``horizon_days``-long forecast series.
    """
    n = len(target)
    if lib_end0 + horizon_days > n:
        raise DataError(f"progressive forecast needs {lib_end0 + horizon_days} rows, have {n}")
    model = _protocol_model(model)
    cache: dict = {}
    preds = {Tp: np.full(horizon_days, np.nan) for Tp in Tp_list}
    obs = {Tp: np.full(horizon_days, np.nan) for Tp in Tp_list}
    records = []
    for d in range(horizon_days):
        L = lib_end0 + d
        for Tp in Tp_list:
            origin = L + 1 - Tp
            f = emm_forecast(inputs, target, model, SplitSpec(lib_start, L, origin, origin), Tp, cache)
            preds[Tp][d] = f.predictions.values[0]
            obs[Tp][d] = f.observations.values[0]
            records.append({"day": L + 1, "Tp": Tp, "prediction": preds[Tp][d],
                            "observation": obs[Tp][d]})
    t0 = target.t0 + lib_end0 * target.dt
    forecasts = {Tp: ForecastResult.from_arrays(preds[Tp], obs[Tp], target.name, target.dt, t0)
                 for Tp in Tp_list}
    summary = {
        "Tp": list(Tp_list),
        "rmse": [forecasts[Tp].rmse for Tp in Tp_list],
        "rho": [forecasts[Tp].rho for Tp in Tp_list],
        "n_forecasts": [horizon_days for _ in Tp_list],
    }
    return ProtocolResult(summary, records, forecasts)


@dataclass(frozen=True)
class SnrRecommendation:
    recommend: str
    snr_db: float
    noise_source: str


def snr_gate(series: TimeSeries, noise_estimate: TimeSeries | None = None,
             threshold_db: float = SNR_GATE_DB, sift_params: SiftParams | None = None,
             convention: str = "amplitude") -> SnrRecommendation:
    """Recommend ``"emm"`` when SNR <= ``threshold_db``, else ``"takens"``.

    Without a noise estimate, the first (highest-frequency) IMF stands in for
    the noise and the remainder of the series for the signal.
    """
    x = series.values
    if np.var(x) == 0:
        raise DataError(f"snr_gate: series {series.name!r} has zero variance")
    if noise_estimate is None:
        imfs = sift(series, sift_params)
        if imfs.n_imfs == 0:
            raise DataError("snr_gate: series has no oscillatory modes to estimate noise")
        noise = imfs.imfs[0].values
        source = "imf1"
    else:
        noise = noise_estimate.values
        source = "estimate"
    value = snr_db(x - noise, noise, convention)
    return SnrRecommendation("emm" if value <= threshold_db else "takens", value, source)
