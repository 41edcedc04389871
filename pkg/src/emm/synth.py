"""Synthetic data: Rössler trajectories, colored noise and SNR.

Seeding
-------
Every generator takes an integer seed (or a :class:`numpy.random.SeedSequence`).
Derived streams use ``SeedSequence(seed, spawn_key=key)`` with a fixed key per
role, so adding a new variable or component never shifts existing streams:

* :func:`multispectral_noise`: pink ``(0,)``, brown ``(1,)``.
* :func:`make_noisy_rossler`: variable ``x`` ``(0,)``, ``y`` ``(1,)``, ``z`` ``(2,)``,
  each then split as above.
* ensembles (see :mod:`emm.pipeline`): realization ``r`` uses ``(r,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .core import DataError, NumericalError, TimeSeries


class IntegrationError(NumericalError):
    pass


#: Noise scale that places the mean SNR of Rössler ``x`` at A=1 on the
#: Table-1 value of 10.08 dB (amplitude convention, unit-variance pink and
#: brown components, B=0.5, C=1).  Recomputed by :func:`calibrate_noise_scale`.
ROSSLER_NOISE_SCALE = 0.3715

#: SNR in dB versus noise amplitude A for the Rössler ``x`` variable.
TABLE1_SNR_DB = {1: 10.08, 2: 7.00, 4: 4.12, 8: 1.07, 12: -0.73, 16: -1.89,
                 24: -3.71, 32: -4.94, 48: -6.69, 64: -7.95}


def child_seed(seed, *key: int) -> np.random.SeedSequence:
    """Deterministic sub-seed for a role identified by ``key``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


@dataclass(frozen=True)
class RosslerParams:
    a: float = 0.4
    b: float = 0.4
    c: float = 4.0
    x0: float = 1.0
    y0: float = 0.0
    z0: float = 1.0
    dt_int: float = 0.01
    dt_sample: float = 0.1
    t_discard: float = 200.0
    t_end: float = 500.0

    def __post_init__(self):
        ratio = self.dt_sample / self.dt_int
        if self.dt_int <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise DataError("dt_sample must be a positive integer multiple of dt_int")
        if not self.t_discard < self.t_end:
            raise DataError("t_discard must be < t_end")

    @property
    def stride(self) -> int:
        return int(round(self.dt_sample / self.dt_int))


@lru_cache(maxsize=8)
def _rk4_rossler(p: RosslerParams) -> tuple[np.ndarray, np.ndarray]:
    a, b, c, h = p.a, p.b, p.c, p.dt_int
    n_steps = int(round(p.t_end / h))
    stride = p.stride
    x, y, z = p.x0, p.y0, p.z0
    out = np.empty((n_steps // stride + 1, 3))
    out[0] = x, y, z
    half = 0.5 * h
    for i in range(1, n_steps + 1):
        k1x = -y - z
        k1y = x + a * y
        k1z = b + z * (x - c)
        xa, ya, za = x + half * k1x, y + half * k1y, z + half * k1z
        k2x = -ya - za
        k2y = xa + a * ya
        k2z = b + za * (xa - c)
        xa, ya, za = x + half * k2x, y + half * k2y, z + half * k2z
        k3x = -ya - za
        k3y = xa + a * ya
        k3z = b + za * (xa - c)
        xa, ya, za = x + h * k3x, y + h * k3y, z + h * k3z
        k4x = -ya - za
        k4y = xa + a * ya
        k4z = b + za * (xa - c)
        x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        z += h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z)
        if i % stride == 0:
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
                raise IntegrationError(f"Rössler integration diverged at t={i * h:g}")
            out[i // stride] = x, y, z
    t = np.arange(out.shape[0]) * p.dt_sample
    keep = t > p.t_discard + 1e-9 * p.dt_sample
    t, out = t[keep], out[keep]
    t.setflags(write=False)
    out.setflags(write=False)
    return t, out


def integrate_rossler(params: RosslerParams | None = None) -> tuple[TimeSeries, TimeSeries, TimeSeries]:
    """Fixed-step RK4 integration, subsampled, with the transient discarded.

    The default parameters give 3000 samples per variable at t = 200.1 .. 500.
    """
    params = params or RosslerParams()
    t, out = _rk4_rossler(params)
    if t.size == 0:
        raise DataError("no samples after t_discard")
    return tuple(TimeSeries(name, out[:, j], params.dt_sample, float(t[0]))
                 for j, name in enumerate("xyz"))


def colored_noise(length: int, beta: float, seed) -> TimeSeries:
    """Gaussian noise with power spectrum ``1/f**beta``, zero mean, unit variance.

    Real and imaginary parts of each positive-frequency coefficient are drawn
    independently and scaled by ``f**(-beta/2)``; the zero-frequency term is
    dropped and the Nyquist term (even lengths) kept real.
    """
    if length < 2:
        raise DataError("colored_noise needs length >= 2")
    rng = np.random.default_rng(seed)
    f = np.fft.rfftfreq(length)
    scale = np.zeros(f.size)
    scale[1:] = f[1:] ** (-beta / 2)
    spec = (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)) * scale
    spec[0] = 0
    if length % 2 == 0:
        spec[-1] = spec[-1].real
    x = np.fft.irfft(spec, length)
    x -= x.mean()
    x /= x.std()
    x -= x.mean()
    return TimeSeries(f"noise_beta{beta:g}", x)


@dataclass(frozen=True)
class NoiseSpec:
    """``scale * A * (B * pink + C * brown)`` with unit-variance components."""

    A: float = 1.0
    B: float = 0.5
    C: float = 1.0
    length: int = 3000
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if not self.A >= 0:
            raise DataError(f"noise amplitude must be >= 0, got {self.A}")
        if self.length < 2:
            raise DataError("noise length must be >= 2")


def multispectral_noise(spec: NoiseSpec) -> TimeSeries:
    pink = colored_noise(spec.length, 1, child_seed(spec.seed, 0)).values
    brown = colored_noise(spec.length, 2, child_seed(spec.seed, 1)).values
    return TimeSeries("noise", spec.scale * spec.A * (spec.B * pink + spec.C * brown))


def snr_db(signal, noise, convention: str = "amplitude") -> float:
    """Signal-to-noise ratio in dB.

    ``convention="amplitude"`` returns ``10*log10(std(signal)/std(noise))``,
    the scale on which the published Rössler table is expressed (about 3 dB
    per doubling of the noise amplitude).  ``convention="power"`` returns
    ``10*log10(var(signal)/var(noise))``.
    """
    s = signal.values if isinstance(signal, TimeSeries) else np.asarray(signal, float)
    n = noise.values if isinstance(noise, TimeSeries) else np.asarray(noise, float)
    if s.shape != n.shape:
        raise DataError("snr_db: signal and noise lengths differ")
    vs, vn = np.var(s), np.var(n)
    if vn == 0:
        raise NumericalError("snr_db: zero noise variance (infinite SNR)")
    if convention == "power":
        return float(10 * np.log10(vs / vn))
    if convention == "amplitude":
        return float(5 * np.log10(vs / vn))
    raise DataError(f"unknown SNR convention {convention!r}")


@dataclass(frozen=True, eq=False)
class NoisyRossler:
    x: TimeSeries
    y: TimeSeries
    z: TimeSeries
    x_clean: TimeSeries
    y_clean: TimeSeries
    z_clean: TimeSeries
    noise: tuple[TimeSeries, TimeSeries, TimeSeries]

    def snr(self, convention: str = "amplitude") -> dict[str, float]:
        """Per-variable SNR (``NaN`` where no noise was added)."""
        out = {}
        for clean, n in zip((self.x_clean, self.y_clean, self.z_clean), self.noise):
            out[clean.name] = (snr_db(clean, n, convention) if np.var(n.values) > 0
                               else float("nan"))
        return out

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "t": self.x_clean.times,
            "x": self.x_clean.values, "y": self.y_clean.values, "z": self.z_clean.values,
            "x_noisy": self.x.values, "y_noisy": self.y.values, "z_noisy": self.z.values,
        }


def make_noisy_rossler(params: RosslerParams | None = None, noise: NoiseSpec | None = None,
                       seed=None, noise_on_z: bool = True) -> NoisyRossler:
    """Clean Rössler trajectories plus independent noise on each variable.

    ``seed`` overrides ``noise.seed``; ``noise.length`` is replaced by the
    trajectory length.
    """
    clean = integrate_rossler(params)
    n = len(clean[0])
    noise = replace(noise or NoiseSpec(scale=ROSSLER_NOISE_SCALE), length=n)
    base = noise.seed if seed is None else seed
    realized = []
    for j, series in enumerate(clean):
        if j == 2 and not noise_on_z:
            realized.append(TimeSeries("noise_z", np.zeros(n)))
            continue
        v = multispectral_noise(replace(noise, seed=child_seed(base, j))).values
        realized.append(TimeSeries(f"noise_{series.name}", v))
    noisy = [s.with_values(s.values + e.values, f"{s.name}_noisy") for s, e in zip(clean, realized)]
    return NoisyRossler(*noisy, *clean, noise=tuple(realized))


def calibrate_noise_scale(target_db: float = TABLE1_SNR_DB[1], A: float = 1.0,
                          n_seeds: int = 100, params: RosslerParams | None = None,
                          B: float = 0.5, C: float = 1.0, seed_offset: int = 0) -> float:
    """Noise scale putting the mean amplitude-convention SNR of ``x`` at ``target_db``.

    On the dB scale a scale factor ``s`` shifts every SNR by ``-10*log10(s)``,
    so the mean is matched in closed form.
    """
    x = integrate_rossler(params)[0]
    vals = []
    for s in range(seed_offset, seed_offset + n_seeds):
        e = multispectral_noise(NoiseSpec(A=A, B=B, C=C, length=len(x), seed=child_seed(s, 0)))
        vals.append(snr_db(x, e))
    return float(10 ** ((np.mean(vals) - target_db) / 10))
