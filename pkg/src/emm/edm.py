"""Delay embedding, simplex projection and S-map forecasting.

Conventions shared by :func:`simplex` and :func:`smap`:

* Library rows are the valid rows ``n`` of the library range whose target
  ``target[n + Tp]`` is present and lies inside the library range, so no
  neighbor ever carries a target value later than the library end.
* The prediction at row ``p`` is compared with ``target[p + Tp]``; output
  series are aligned on that forecast index.
* ``exclusion_radius = r > 0`` removes library rows with ``|n - p| <= r``.
  The default is 1 for overlapping (in-sample) splits and 0 otherwise.
* Distances are accumulated over columns sorted by label, which makes results
  bit-identical under any permutation of the state-space columns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import DataError, EmmError, ForecastResult, SplitSpec, StateSpace, TimeSeries


class InsufficientLibraryError(EmmError, ValueError):
    """Too few usable library rows for the requested neighbor count."""


class EmbeddingError(DataError):
    """Series too short for the requested embedding."""


SVD_RCOND = 1e-8

# KD-tree candidate margin beyond knn; rows where the margin cannot certify the
# exact neighbor set are recomputed by brute force.
_KD_EXTRA = 4
_KD_TOL = 1e-10


@dataclass(frozen=True)
class EmbedSpec:
    E: int = 3
    tau: int = 1

    def __post_init__(self):
        if self.E < 1 or self.tau < 1:
            raise DataError(f"embedding needs E >= 1 and tau >= 1, got {self}")


@dataclass(frozen=True)
class SimplexSpec:
    """``knn=None`` means state-space dimension + 1."""

    knn: int | None = None
    Tp: int = 0
    exclusion_radius: int | None = None

    def __post_init__(self):
        if self.knn is not None and self.knn < 1:
            raise DataError(f"knn must be >= 1, got {self.knn}")
        if self.Tp < 0:
            raise DataError(f"Tp must be >= 0, got {self.Tp}")
        if self.exclusion_radius is not None and self.exclusion_radius < 0:
            raise DataError("exclusion_radius must be >= 0")


@dataclass(frozen=True)
class SMapSpec:
    theta: float = 0.0
    Tp: int = 0
    exclusion_radius: int | None = None

    def __post_init__(self):
        if not self.theta >= 0:
            raise DataError(f"theta must be >= 0, got {self.theta}")
        if self.Tp < 0:
            raise DataError(f"Tp must be >= 0, got {self.Tp}")
        if self.exclusion_radius is not None and self.exclusion_radius < 0:
            raise DataError("exclusion_radius must be >= 0")


def delay_embed(series: TimeSeries, E: int | EmbedSpec = 3, tau: int = 1) -> StateSpace:
    """Time-delay embedding; column ``j`` (1-based) holds ``x(t - (j-1)*tau)``.

    Leading rows lacking a lagged value are ``NaN`` and therefore invalid.
    """
    spec = E if isinstance(E, EmbedSpec) else EmbedSpec(int(E), int(tau))
    x = series.values
    span = (spec.E - 1) * spec.tau
    if x.size <= span:
        raise EmbeddingError(
            f"series {series.name!r} of length {x.size} too short for E={spec.E}, tau={spec.tau}"
        )
    cols = np.full((x.size, spec.E), np.nan)
    labels = []
    for j in range(spec.E):
        lag = j * spec.tau
        cols[lag:, j] = x[: x.size - lag]
        labels.append(f"{series.name}(t-{lag})")
    return StateSpace(tuple(labels), cols)


def embed_all(series: Iterable[TimeSeries], E: int = 3, tau: int = 1) -> StateSpace:
    """Delay-embed each series and concatenate the coordinates."""
    spaces = [delay_embed(s, E, tau) for s in series]
    if not spaces:
        raise DataError("embed_all: no series given")
    return spaces[0].concat(*spaces[1:])


def _canonical(space: StateSpace) -> np.ndarray:
    order = sorted(range(space.E), key=lambda c: space.labels[c])
    return np.ascontiguousarray(space.values[:, order]), order


def _prepare(space: StateSpace, target: TimeSeries, split: SplitSpec, Tp: int,
             exclusion_radius: int | None):
    if len(target) != space.n_rows:
        raise DataError(
            f"target {target.name!r} has {len(target)} rows, state-space has {space.n_rows}"
        )
    split.check(space.n_rows)
    X, order = _canonical(space)
    y = target.values
    n = y.size
    valid = space.valid_mask

    lib = split.lib_rows()
    lib = lib[valid[lib] & (lib + Tp <= split.lib_end - 1)]
    lib = lib[~np.isnan(y[lib + Tp])]

    pred = split.pred_rows()
    fut = pred + Tp
    obs = np.full(pred.size, np.nan)
    inside = fut < n
    obs[inside] = y[fut[inside]]

    r = exclusion_radius
    if r is None:
        r = 1 if split.overlapping else 0
    return X, order, y, lib, pred, valid[pred], obs, r


def _distance(xp: np.ndarray, xl: np.ndarray) -> np.ndarray:
    """Exact distances, summing squared differences column by column.

    ``xp`` has shape ``(..., E)`` and ``xl`` broadcasts against it.
    """
    diff = xp[..., 0] - xl[..., 0]
    acc = diff * diff
    for c in range(1, xp.shape[-1]):
        diff = xp[..., c] - xl[..., c]
        acc += diff * diff
    return np.sqrt(acc)


def _brute_neighbors(xp: np.ndarray, p: int, XL: np.ndarray, lib: np.ndarray, k: int, r: int):
    d = _distance(xp[None, :], XL)
    if r > 0:
        d[np.abs(lib - p) <= r] = np.inf
    order = np.lexsort((np.arange(lib.size), d))[:k]
    if order.size < k or not np.isfinite(d[order[-1]]):
        raise InsufficientLibraryError(
            f"fewer than knn={k} library rows available for prediction row {p + 1}"
        )
    return order, d[order]


def nearest_neighbors(XP: np.ndarray, pred: np.ndarray, XL: np.ndarray, lib: np.ndarray,
                      k: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``k`` nearest library rows for each prediction row.

    Returns positions into ``lib`` and distances, sorted by distance with
    ties going to the lower time index.
    """
    n_lib = lib.size
    if n_lib < k:
        raise InsufficientLibraryError(f"library has {n_lib} usable rows, knn={k}")
    n_pred = pred.size
    idx = np.empty((n_pred, k), dtype=np.intp)
    dist = np.empty((n_pred, k))
    if n_pred == 0:
        return idx, dist

    m = min(n_lib, k + _KD_EXTRA + (2 * r + 1 if r > 0 else 0))
    tree = cKDTree(XL)
    d_kd, cand = tree.query(XP, k=m)
    if m == 1:
        d_kd = d_kd[:, None]
        cand = cand[:, None]
    d = _distance(XP[:, None, :], XL[cand])
    if r > 0:
        d[np.abs(lib[cand] - pred[:, None]) <= r] = np.inf
    order = np.lexsort((cand, d), axis=-1)[:, :k]
    rows = np.arange(n_pred)[:, None]
    idx[:] = cand[rows, order]
    dist[:] = d[rows, order]

    kth = dist[:, -1]
    certified = np.isfinite(kth)
    if m < n_lib:
        certified &= d_kd[:, -1] * (1 - _KD_TOL) > kth
    for i in np.flatnonzero(~certified):
        idx[i], dist[i] = _brute_neighbors(XP[i], pred[i], XL, lib, k, r)
    return idx, dist


def simplex_weights(dist: np.ndarray) -> np.ndarray:
    """Exponential neighbor weights ``exp(-d / d_nearest)``.

    When the nearest distance is zero, zero-distance neighbors get weight 1
    and the others ``exp(-d / mean positive distance)``.
    """
    d1 = dist[:, :1]
    zero = d1[:, 0] == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.exp(-dist / d1)
    if zero.any():
        dz = dist[zero]
        pos = dz > 0
        total = np.zeros(dz.shape[0])
        for j in range(dz.shape[1]):
            total += np.where(pos[:, j], dz[:, j], 0.0)
        count = pos.sum(axis=1)
        ebar = np.where(count > 0, total / np.maximum(count, 1), 1.0)
        w[zero] = np.where(pos, np.exp(-dz / ebar[:, None]), 1.0)
    return w


def simplex(space: StateSpace, target: TimeSeries, split: SplitSpec,
            spec: SimplexSpec | None = None, **kwargs) -> ForecastResult:
    """Simplex projection from the ``knn`` nearest library states.

    Keyword arguments build a :class:`SimplexSpec` when ``spec`` is omitted.
    """
    spec = spec or SimplexSpec(**kwargs)
    X, _, y, lib, pred, pred_ok, obs, r = _prepare(space, target, split, spec.Tp,
                                                   spec.exclusion_radius)
    k = spec.knn or space.E + 1
    rows = pred[pred_ok]
    nbr, dist = nearest_neighbors(X[rows], rows, X[lib], lib, k, r)

    w = simplex_weights(dist)
    yt = y[lib[nbr] + spec.Tp]
    num = w[:, 0] * yt[:, 0]
    den = w[:, 0].copy()
    for j in range(1, k):
        num += w[:, j] * yt[:, j]
        den += w[:, j]
    predictions = np.full(pred.size, np.nan)
    predictions[pred_ok] = num / den

    t0 = target.t0 + (split.pred_start - 1 + spec.Tp) * target.dt
    return ForecastResult.from_arrays(
        predictions, obs, target.name, target.dt, t0,
        diagnostics={"method": "simplex", "knn": k, "exclusion_radius": r,
                     "n_library": int(lib.size), "Tp": spec.Tp},
    )


def _lstsq(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > SVD_RCOND * s[0] if s.size and s[0] > 0 else np.zeros(s.size, bool)
    coef = Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])
    return coef, int(np.count_nonzero(keep))


def smap(space: StateSpace, target: TimeSeries, split: SplitSpec,
         spec: SMapSpec | None = None, **kwargs) -> ForecastResult:
    """Locally weighted linear map forecast.

    Each prediction row fits an affine map over all usable library rows with
    row weights ``exp(-theta * d / mean(d))``.  Solved by truncated SVD, so
    rank-deficient designs return the minimum-norm solution and are counted
    in ``diagnostics["rank_deficient"]``.  Per-row coefficients (intercept
    first, then columns in ``space.labels`` order) are in
    ``diagnostics["coefficients"]``.
    """
    spec = spec or SMapSpec(**kwargs)
    X, order, y, lib, pred, pred_ok, obs, r = _prepare(space, target, split, spec.Tp,
                                                       spec.exclusion_radius)
    E = space.E
    if lib.size < E + 2:
        raise InsufficientLibraryError(f"S-map needs >= {E + 2} library rows, have {lib.size}")
    XL = X[lib]
    yl = y[lib + spec.Tp]
    A = np.hstack([np.ones((lib.size, 1)), XL])

    predictions = np.full(pred.size, np.nan)
    coefs = np.full((pred.size, E + 1), np.nan)
    deficient = 0
    global_fit = None
    if spec.theta == 0 and r == 0:
        global_fit = _lstsq(A, yl)

    for i in np.flatnonzero(pred_ok):
        p = pred[i]
        xp = X[p]
        if global_fit is not None:
            c, rank = global_fit
        else:
            d = _distance(xp[None, :], XL)
            use = np.abs(lib - p) > r if r > 0 else np.ones(lib.size, bool)
            if np.count_nonzero(use) < E + 2:
                raise InsufficientLibraryError(
                    f"S-map: fewer than {E + 2} library rows for prediction row {p + 1}"
                )
            du = d[use]
            dbar = du.mean()
            w = np.exp(-spec.theta * du / dbar) if dbar > 0 else np.ones(du.size)
            c, rank = _lstsq(A[use] * w[:, None], yl[use] * w)
        deficient += rank < E + 1
        predictions[i] = c[0] + xp @ c[1:]
        coefs[i, 0] = c[0]
        coefs[i, 1 + np.asarray(order)] = c[1:]

    t0 = target.t0 + (split.pred_start - 1 + spec.Tp) * target.dt
    return ForecastResult.from_arrays(
        predictions, obs, target.name, target.dt, t0,
        diagnostics={"method": "smap", "theta": spec.theta, "exclusion_radius": r,
                     "n_library": int(lib.size), "Tp": spec.Tp,
                     "coefficients": coefs, "coefficient_labels": ("C0",) + space.labels,
                     "rank_deficient": int(deficient)},
    )


def _as_space(series, E: int, tau: int) -> StateSpace:
    if isinstance(series, StateSpace):
        return series
    if isinstance(series, TimeSeries):
        return delay_embed(series, E, tau)
    return embed_all(series, E, tau)


def _table(key: str, rows: list[tuple[float, ForecastResult]]) -> dict[str, np.ndarray]:
    return {
        key: np.array([k for k, _ in rows]),
        "rho": np.array([f.rho for _, f in rows]),
        "rmse": np.array([f.rmse for _, f in rows]),
        "mae": np.array([f.mae for _, f in rows]),
        "n_valid": np.array([f.n_valid for _, f in rows]),
    }


def scan_E(series, target: TimeSeries, split: SplitSpec, E_range: Sequence[int] = range(1, 11),
           tau: int = 1, Tp: int = 1, knn: int | None = None,
           exclusion_radius: int | None = None) -> dict[str, np.ndarray]:
    """Simplex skill as a function of embedding dimension."""
    spec = SimplexSpec(knn=knn, Tp=Tp, exclusion_radius=exclusion_radius)
    rows = [(E, simplex(_as_space(series, E, tau), target, split, spec)) for E in E_range]
    return _table("E", rows)


def scan_Tp(series, target: TimeSeries, split: SplitSpec, E: int = 3, tau: int = 1,
            Tp_range: Sequence[int] = range(0, 11), knn: int | None = None,
            exclusion_radius: int | None = None) -> dict[str, np.ndarray]:
    """Simplex skill as a function of prediction horizon."""
    space = _as_space(series, E, tau)
    spec = SimplexSpec(knn=knn, exclusion_radius=exclusion_radius)
    rows = [(Tp, simplex(space, target, split, replace(spec, Tp=Tp))) for Tp in Tp_range]
    return _table("Tp", rows)


def scan_theta(series, target: TimeSeries, split: SplitSpec, E: int = 3, tau: int = 1,
               Tp: int = 1, theta_range: Sequence[float] = (0, 0.1, 0.3, 0.5, 0.75, 1, 1.5, 2, 3, 4, 5, 6, 8),
               exclusion_radius: int | None = None) -> dict[str, np.ndarray]:
    """S-map skill as a function of the localization parameter."""
    space = _as_space(series, E, tau)
    rows = [
        (float(th), smap(space, target, split, SMapSpec(theta=float(th), Tp=Tp,
                                                        exclusion_radius=exclusion_radius)))
        for th in theta_range
    ]
    return _table("theta", rows)
