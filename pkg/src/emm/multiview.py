"""Out-of-sample multiview selection of state-space coordinates.

Every ``D``-column subset of the candidate columns is used directly as a
state-space (no delay embedding) for simplex projection, and subsets are
ranked by out-of-sample skill.  The library and prediction ranges must be
disjoint: in-sample ranking would reward nearly monotone low-frequency
columns that map the target uniquely without carrying dynamics.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import DataError, ForecastResult, SplitSpec, StateSpace, TimeSeries
from .edm import SimplexSpec, simplex


@dataclass(frozen=True)
class MultiviewSpec:
    D: int
    split: SplitSpec
    Tp: int = 0
    knn: int | None = None
    max_combos: int = 5000
    top_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.D < 1:
            raise DataError(f"multiview D must be >= 1, got {self.D}")
        if self.split.overlapping:
            raise DataError("multiview selection requires disjoint library and prediction ranges")
        if self.max_combos < 1 or self.top_k < 1:
            raise DataError("max_combos and top_k must be >= 1")


@dataclass(frozen=True)
class MultiviewResult:
    """Ranked subsets; ``combos`` hold 1-based candidate column indices."""

    combos: tuple[tuple[int, ...], ...]
    rho: tuple[float, ...]
    rmse: tuple[float, ...]
    n_evaluated: int
    labels: tuple[tuple[str, ...], ...] = field(default=())

    @property
    def best(self) -> tuple[int, ...]:
        return self.combos[0]

    def table(self) -> dict[str, list]:
        return {
            "rank": list(range(1, len(self.combos) + 1)),
            "combo": [" ".join(str(c) for c in combo) for combo in self.combos],
            "columns": [" ".join(lab) for lab in self.labels],
            "rho": list(self.rho),
            "rmse": list(self.rmse),
        }


def unrank_combination(rank: int, n: int, k: int) -> tuple[int, ...]:
    """The ``rank``-th (0-based) ``k``-subset of ``range(n)`` in lexicographic order."""
    combo = []
    x = 0
    for i in range(k):
        while True:
            c = math.comb(n - x - 1, k - i - 1)
            if rank < c:
                break
            rank -= c
            x += 1
        combo.append(x)
        x += 1
    return tuple(combo)


def candidate_combinations(n: int, D: int, max_combos: int, seed: int) -> list[tuple[int, ...]]:
    """All ``C(n, D)`` subsets, or a seeded uniform sample of ``max_combos`` of them."""
    total = math.comb(n, D)
    if total <= max_combos:
        return list(itertools.combinations(range(n), D))
    ranks = np.sort(np.random.default_rng(seed).choice(total, size=max_combos, replace=False))
    return [unrank_combination(int(r), n, D) for r in ranks]


_WORKER_STATE: dict = {}


def _init_worker(candidates, target, split, spec):
    _WORKER_STATE.update(candidates=candidates, target=target, split=split, spec=spec)


def _evaluate(combo, candidates=None, target=None, split=None, spec=None) -> tuple[float, float]:
    if candidates is None:
        s = _WORKER_STATE
        candidates, target, split, spec = s["candidates"], s["target"], s["split"], s["spec"]
    f = simplex(candidates.select(combo), target, split, spec)
    return f.rho, f.rmse


def _sort_key(item):
    combo, rho, err = item
    return (np.isnan(rho), -rho if not np.isnan(rho) else 0.0,
            err if not np.isnan(err) else np.inf, combo)


def multiview_select(candidates: StateSpace, target: TimeSeries, spec: MultiviewSpec,
                     jobs: int = 1) -> MultiviewResult:
    """Rank ``D``-subsets of candidate columns by out-of-sample simplex skill.

    Sorted by rho descending, then rmse ascending, then lexicographic subset.
    """
    n = candidates.E
    if spec.D > n:
        raise DataError(f"multiview D={spec.D} exceeds {n} candidate columns")
    combos = candidate_combinations(n, spec.D, spec.max_combos, spec.seed)
    sx = SimplexSpec(knn=spec.knn or spec.D + 1, Tp=spec.Tp)

    if jobs > 1 and len(combos) > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(candidates, target, spec.split, sx)) as pool:
            scores = list(pool.map(_evaluate, combos, chunksize=max(1, len(combos) // (4 * jobs))))
    else:
        scores = [_evaluate(c, candidates, target, spec.split, sx) for c in combos]

    ranked = sorted(((c, r, e) for c, (r, e) in zip(combos, scores)), key=_sort_key)
    ranked = ranked[: spec.top_k]
    return MultiviewResult(
        combos=tuple(tuple(i + 1 for i in c) for c, _, _ in ranked),
        rho=tuple(float(r) for _, r, _ in ranked),
        rmse=tuple(float(e) for _, _, e in ranked),
        n_evaluated=len(combos),
        labels=tuple(tuple(candidates.labels[i] for i in c) for c, _, _ in ranked),
    )


def best_forecast(candidates: StateSpace, target: TimeSeries, spec: MultiviewSpec,
                  result: MultiviewResult) -> ForecastResult:
    """Simplex forecast of the top-ranked subset."""
    cols = [i - 1 for i in result.best]
    return simplex(candidates.select(cols), target, spec.split,
                   SimplexSpec(knn=spec.knn or spec.D + 1, Tp=spec.Tp))


def scan_D(candidates: StateSpace, target: TimeSeries, spec: MultiviewSpec, D_range,
           jobs: int = 1) -> dict[str, list]:
    """Best-subset skill for each subset size in ``D_range``."""
    out = {"D": [], "rho": [], "rmse": [], "combo": [], "n_evaluated": []}
    for D in D_range:
        res = multiview_select(candidates, target,
                               MultiviewSpec(D=D, split=spec.split, Tp=spec.Tp,
                                             knn=spec.knn,
                                             max_combos=spec.max_combos, top_k=1, seed=spec.seed),
                               jobs=jobs)
        out["D"].append(D)
        out["rho"].append(res.rho[0])
        out["rmse"].append(res.rmse[0])
        out["combo"].append(" ".join(str(c) for c in res.best))
        out["n_evaluated"].append(res.n_evaluated)
    return out
