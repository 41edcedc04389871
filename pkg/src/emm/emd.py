"""Empirical mode decomposition by envelope sifting.

Envelopes are natural cubic splines through the local maxima (upper) and
minima (lower) of the running component, with ``boundary_pad`` extrema
mirrored about each end of the record before fitting.  IMFs are ordered from
highest to lowest frequency, and ``source == sum(imfs) + residual`` holds to
rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import hilbert

from .core import DataError, StateSpace, TimeSeries

#: Fraction of the record excluded at each end for instantaneous-frequency statistics.
IF_MARGIN = 0.05


class DecompositionInputError(DataError):
    """Input unsuitable for decomposition (too short, missing or non-finite values)."""


@dataclass(frozen=True)
class SiftParams:
    max_imfs: int = 16
    max_sift_iterations: int = 100
    sd_threshold: float = 0.2
    boundary_pad: int = 2

    def __post_init__(self):
        if self.max_imfs < 1 or self.max_sift_iterations < 1 or self.boundary_pad < 1:
            raise DataError(f"invalid sift parameters: {self}")
        if not self.sd_threshold > 0:
            raise DataError(f"sd_threshold must be > 0, got {self.sd_threshold}")


@dataclass(frozen=True, eq=False)
class ImfSet:
    """IMFs of one series (index 1 = highest frequency) plus the residual."""

    source: str
    dt: float
    imfs: tuple[TimeSeries, ...]
    residual: TimeSeries

    @property
    def n_imfs(self) -> int:
        return len(self.imfs)

    def __len__(self):
        return len(self.imfs)

    def imf(self, k: int) -> TimeSeries:
        """IMF number ``k`` (1-based)."""
        if not 1 <= k <= self.n_imfs:
            raise DataError(f"IMF index {k} outside 1..{self.n_imfs} for {self.source!r}")
        return self.imfs[k - 1]

    def as_array(self) -> np.ndarray:
        """IMFs stacked as an ``(n_imfs, n)`` array."""
        if not self.imfs:
            return np.empty((0, len(self.residual)))
        return np.vstack([m.values for m in self.imfs])

    def reconstruct(self) -> np.ndarray:
        total = self.residual.values.copy()
        for m in self.imfs:
            total = total + m.values
        return total

    def columns(self) -> dict[str, np.ndarray]:
        """CSV-ready columns ``<source>_imf1..N, <source>_residual``."""
        out = {m.name: m.values for m in self.imfs}
        out[self.residual.name] = self.residual.values
        return out


def _values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float)


def _extrema(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """0-based maxima and minima; plateaus report their midpoint (rounded down)."""
    d = np.diff(x)
    nz = np.flatnonzero(d)
    if nz.size < 2:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    rising = d[nz] > 0
    start = nz[:-1] + 1
    end = nz[1:]
    is_max = rising[:-1] & ~rising[1:]
    is_min = ~rising[:-1] & rising[1:]
    mid = (start + end) // 2
    return mid[is_max], mid[is_min]


def find_extrema(series) -> tuple[np.ndarray, np.ndarray]:
    """Local maxima and minima of a series.

    Returns
    -------
    maxima, minima : ndarray of int
        1-based sample indices.  A flat plateau bounded by a rise and a fall
        counts once, at its midpoint (rounded down).
    """
    x = _values(series)
    if x.size < 3:
        raise DecompositionInputError("find_extrema needs at least 3 samples")
    if np.isnan(x).any():
        raise DecompositionInputError("find_extrema: series contains missing values")
    maxima, minima = _extrema(x)
    return maxima + 1, minima + 1


def count_zero_crossings(x) -> int:
    s = np.sign(_values(x))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def is_imf(x, slack: int = 2) -> bool:
    """Whether extrema and zero-crossing counts differ by at most ``1 + slack``."""
    x = _values(x)
    maxima, minima = _extrema(x)
    return abs(maxima.size + minima.size - count_zero_crossings(x)) <= 1 + slack


def _envelope(t: np.ndarray, v: np.ndarray, n: int, pad: int) -> np.ndarray:
    p_left = min(pad, t.size)
    p_right = min(pad, t.size)
    knots = np.concatenate([-t[:p_left][::-1], t, 2 * (n - 1) - t[::-1][:p_right]])
    vals = np.concatenate([v[:p_left][::-1], v, v[::-1][:p_right]])
    return CubicSpline(knots, vals, bc_type="natural")(np.arange(n))


def _mean_envelope(h: np.ndarray, pad: int) -> np.ndarray | None:
    maxima, minima = _extrema(h)
    if maxima.size < 1 or minima.size < 1 or maxima.size + minima.size < 3:
        return None
    n = h.size
    upper = _envelope(maxima, h[maxima], n, pad)
    lower = _envelope(minima, h[minima], n, pad)
    return 0.5 * (upper + lower)


def _exhausted(r: np.ndarray) -> bool:
    d = np.diff(r)
    if np.all(d >= 0) or np.all(d <= 0):
        return True
    maxima, minima = _extrema(r)
    return maxima.size < 2 or minima.size < 2


def sift(series: TimeSeries, params: SiftParams | None = None) -> ImfSet:
    """Decompose a series into intrinsic mode functions.

    Extraction stops when the running residual is monotone or has fewer than
    two maxima or minima, or when ``params.max_imfs`` IMFs exist.  Each IMF's
    inner loop stops once ``sum((h_prev - h)**2) / sum(h_prev**2)`` falls
    below ``params.sd_threshold`` while extrema and zero crossings differ by
    at most one, or after ``params.max_sift_iterations``.
    """
    params = params or SiftParams()
    x = series.values
    if x.size < 8:
        raise DecompositionInputError(f"sift needs at least 8 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DecompositionInputError(f"sift: series {series.name!r} has missing or non-finite values")

    residual = x.copy()
    imfs = []
    while len(imfs) < params.max_imfs and not _exhausted(residual):
        h = residual
        for _ in range(params.max_sift_iterations):
            mean_env = _mean_envelope(h, params.boundary_pad)
            if mean_env is None:
                break
            denom = np.dot(h, h)
            h = h - mean_env
            # SD alone leaves many under-sifted modes; also require the IMF property.
            if denom == 0 or (
                np.dot(mean_env, mean_env) / denom < params.sd_threshold and is_imf(h, slack=0)
            ):
                break
        imfs.append(h)
        residual = residual - h

    name = series.name
    return ImfSet(
        source=name,
        dt=series.dt,
        imfs=tuple(
            TimeSeries(f"{name}_imf{k}", v, series.dt, series.t0) for k, v in enumerate(imfs, 1)
        ),
        residual=TimeSeries(f"{name}_residual", residual, series.dt, series.t0),
    )


def instantaneous_frequency(imf: TimeSeries) -> TimeSeries:
    """Phase derivative of the analytic signal, in cycles per time unit.

    A constant input has no defined phase and yields an all-``NaN`` series.
    """
    x = imf.values
    if x.size < 8:
        raise DecompositionInputError(f"instantaneous_frequency needs >= 8 samples, got {x.size}")
    name = f"{imf.name}_if"
    if np.ptp(x) == 0:
        return imf.with_values(np.full(x.size, np.nan), name)
    phase = np.unwrap(np.angle(hilbert(x)))
    freq = np.gradient(phase) / (2 * np.pi * imf.dt)
    return imf.with_values(freq, name)


def interior(values, margin: float = IF_MARGIN) -> np.ndarray:
    """Drop ``margin`` of the samples at each end."""
    values = np.asarray(values)
    cut = int(np.floor(margin * values.size))
    return values[cut: values.size - cut]


def if_statistics(imf_set: ImfSet) -> dict[str, np.ndarray]:
    """Interior mean and variance of each IMF's instantaneous frequency."""
    means, variances = [], []
    for m in imf_set.imfs:
        f = interior(instantaneous_frequency(m).values)
        if np.isnan(f).any():
            means.append(np.nan)
            variances.append(np.nan)
        else:
            means.append(float(np.mean(f)))
            variances.append(float(np.var(f)))
    return {
        "imf": np.arange(1, imf_set.n_imfs + 1),
        "if_mean": np.array(means),
        "if_variance": np.array(variances),
    }


def if_variance_filter(imf_set: ImfSet, threshold: float) -> list[int]:
    """1-based indices of IMFs whose interior IF variance is below ``threshold``."""
    variances = if_statistics(imf_set)["if_variance"]
    return [k for k, v in enumerate(variances, 1) if not np.isnan(v) and v < threshold]


def select_imfs(imf_set: ImfSet, indices: Sequence[int]) -> StateSpace:
    """State-space whose columns are the chosen IMFs (1-based), in the given order."""
    indices = list(indices)
    if not indices:
        raise DataError("select_imfs: empty IMF selection")
    cols = [imf_set.imf(k) for k in indices]
    return StateSpace.from_series(cols)


def imf_space(imf_sets: Sequence[ImfSet], selection=None) -> StateSpace:
    """Concatenate IMFs of several series into one state-space.

    ``selection`` may be ``None`` (all IMFs), a sequence of 1-based indices
    applied to every set, or a mapping from source name to indices.
    """
    spaces = []
    for s in imf_sets:
        if selection is None:
            idx = range(1, s.n_imfs + 1)
        elif isinstance(selection, dict):
            idx = selection.get(s.source, ())
        else:
            idx = selection
        idx = list(idx)
        if idx:
            spaces.append(select_imfs(s, idx))
    if not spaces:
        raise DataError("IMF selection produced an empty state-space")
    return spaces[0].concat(*spaces[1:])
