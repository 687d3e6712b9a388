"""Dephasing-noise synthesis from a power spectral density, and spectral estimates.

Conventions
-----------
Phases are in radians and frequencies are angular (rad/s). Densities are
one-sided in angular frequency, so the variance of a trace is
``integral_0^inf S(w) dw``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import RejectedConfigurationError, ValidationError

FLAT_TOP = "flat_top"
ONE_OVER_F2_PLUS_WHITE = "one_over_f2_plus_white"
TABULATED = "tabulated"
SPECTRUM_KINDS = (FLAT_TOP, ONE_OVER_F2_PLUS_WHITE, TABULATED)


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be finite and > 0, got {value!r}", field=name)


def _non_negative(name, value):
    if not (np.isfinite(value) and value >= 0):
        raise ValidationError(f"{name} must be finite and >= 0, got {value!r}", field=name)


@dataclass(frozen=True)
class PowerSpectrum:
    """Declarative one-sided phase-noise PSD.

    Use the :meth:`flat_top`, :meth:`one_over_f2_plus_white` and
    :meth:`tabulated` constructors rather than filling fields by hand.
    """

    kind: str
    level: float = 0.0
    cutoff: float = 0.0
    coefficient: float = 0.0
    white_level: float = 0.0
    max_frequency: float = 0.0
    frequencies: tuple[float, ...] = ()
    densities: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == FLAT_TOP:
            _non_negative("level", self.level)
            _positive("cutoff", self.cutoff)
        elif self.kind == ONE_OVER_F2_PLUS_WHITE:
            _non_negative("coefficient", self.coefficient)
            _non_negative("white_level", self.white_level)
            _positive("max_frequency", self.max_frequency)
        elif self.kind == TABULATED:
            f = np.asarray(self.frequencies, dtype=float)
            d = np.asarray(self.densities, dtype=float)
            if f.ndim != 1 or f.size == 0 or f.shape != d.shape:
                raise ValidationError("tabulated spectrum needs equal-length, non-empty "
                                      "frequency and density lists")
            if not np.all(np.isfinite(f)) or np.any(f < 0):
                raise ValidationError("tabulated frequencies must be finite and >= 0")
            if np.any(np.diff(f) <= 0):
                raise ValidationError("tabulated frequencies must be strictly increasing")
            if not np.all(np.isfinite(d)) or np.any(d < 0):
                raise ValidationError("tabulated densities must be finite and >= 0")
        else:
            raise ValidationError(f"unknown spectrum kind {self.kind!r}; "
                                  f"expected one of {SPECTRUM_KINDS}", field="kind")

    @classmethod
    def flat_top(cls, level: float, cutoff: float) -> "PowerSpectrum":
        return cls(FLAT_TOP, level=float(level), cutoff=float(cutoff))

    @classmethod
    def one_over_f2_plus_white(cls, coefficient: float, white_level: float,
                               max_frequency: float) -> "PowerSpectrum":
        return cls(ONE_OVER_F2_PLUS_WHITE, coefficient=float(coefficient),
                   white_level=float(white_level), max_frequency=float(max_frequency))

    @classmethod
    def tabulated(cls, frequencies: Sequence[float], densities: Sequence[float]) -> "PowerSpectrum":
        return cls(TABULATED, frequencies=tuple(float(f) for f in frequencies),
                   densities=tuple(float(d) for d in densities))

    def density(self, omega) -> np.ndarray:
        """Evaluate S(omega). The DC point is always reported as zero."""
        w = np.asarray(omega, dtype=float)
        if self.kind == FLAT_TOP:
            s = np.where(w <= self.cutoff, self.level, 0.0)
        elif self.kind == ONE_OVER_F2_PLUS_WHITE:
            with np.errstate(divide="ignore"):
                s = np.where(w <= self.max_frequency,
                             self.coefficient / np.where(w > 0, w, 1.0) ** 2 + self.white_level,
                             0.0)
        else:
            f = np.asarray(self.frequencies)
            s = np.interp(w, f, np.asarray(self.densities), left=0.0, right=0.0)
            s = np.where((w >= f[0]) & (w <= f[-1]), s, 0.0)
        return np.where(w > 0, s, 0.0)

    def highest_frequency(self) -> float:
        """Largest angular frequency with nonzero density (0 for an all-zero spectrum)."""
        if self.kind == FLAT_TOP:
            return self.cutoff if self.level > 0 else 0.0
        if self.kind == ONE_OVER_F2_PLUS_WHITE:
            nonzero = self.coefficient > 0 or self.white_level > 0
            return self.max_frequency if nonzero else 0.0
        d = np.asarray(self.densities)
        idx = np.flatnonzero(d > 0)
        if idx.size == 0:
            return 0.0
        # linear interpolation keeps the density nonzero up to the next table point
        last = idx[-1]
        return self.frequencies[min(last + 1, len(self.frequencies) - 1)]

    def descriptor(self) -> dict[str, Any]:
        if self.kind == FLAT_TOP:
            return {"kind": FLAT_TOP, "level_rad2_s": self.level,
                    "cutoff_rad_per_s": self.cutoff}
        if self.kind == ONE_OVER_F2_PLUS_WHITE:
            return {"kind": ONE_OVER_F2_PLUS_WHITE,
                    "coefficient_rad2_rad2_per_s": self.coefficient,
                    "white_level_rad2_s": self.white_level,
                    "max_frequency_rad_per_s": self.max_frequency}
        return {"kind": TABULATED, "frequencies_rad_per_s": list(self.frequencies),
                "densities_rad2_s": list(self.densities)}

    @classmethod
    def from_descriptor(cls, d: dict[str, Any]) -> "PowerSpectrum":
        kind = d.get("kind")
        try:
            if kind == FLAT_TOP:
                return cls.flat_top(d["level_rad2_s"], d["cutoff_rad_per_s"])
            if kind == ONE_OVER_F2_PLUS_WHITE:
                return cls.one_over_f2_plus_white(d["coefficient_rad2_rad2_per_s"],
                                                  d["white_level_rad2_s"],
                                                  d["max_frequency_rad_per_s"])
            if kind == TABULATED:
                return cls.tabulated(d["frequencies_rad_per_s"], d["densities_rad2_s"])
        except KeyError as exc:
            raise ValidationError(f"spectrum of kind {kind!r} is missing key {exc.args[0]!r}",
                                  field=exc.args[0]) from None
        raise ValidationError(f"unknown spectrum kind {kind!r}", field="kind")


@dataclass(frozen=True)
class NoiseTrace:
    """Sampled applied phase; sample ``j`` sits at time ``j * dt``."""

    dt: float
    samples: np.ndarray = field(repr=False)
    seed: int | None = None
    spectrum: PowerSpectrum | None = None  # None marks externally recorded data

    def __post_init__(self):
        _positive("dt", self.dt)
        arr = np.array(self.samples, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ValidationError("a noise trace needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("noise trace samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt

    @property
    def duration(self) -> float:
        """Time span covered by the samples, ``(len - 1) * dt``."""
        return (self.samples.size - 1) * self.dt


def _harmonic_grid(dt, length):
    j = np.arange(1, length // 2 + 1)
    return j, 2 * np.pi * j / (length * dt)


def synthesize_noise(spectrum: PowerSpectrum, dt: float, length: int, seed: int) -> NoiseTrace:
    """Draw a stationary phase trace whose spectrum is ``spectrum``.

    The trace is a sum of harmonics on the grid ``w_j = 2*pi*j / (length*dt)``
    with amplitudes ``sqrt(2 S(w_j) dw)`` and independent uniform phases. There
    is no DC term, so every trace has zero mean over its full length.

    Raises
    ------
    RejectedConfigurationError
        If ``2*pi/dt`` is not above twice the spectrum's highest nonzero frequency.
    ValidationError
        For non-positive ``dt`` or ``length``.
    """
    _positive("dt", dt)
    if int(length) != length or length < 1:
        raise ValidationError(f"length must be an integer >= 1, got {length!r}", field="length")
    length = int(length)
    w_max = spectrum.highest_frequency()
    if not 2 * np.pi / dt > 2 * w_max:
        raise RejectedConfigurationError(
            f"sampling rate 2*pi/dt = {2 * np.pi / dt:.6g} rad/s does not exceed twice the "
            f"highest spectral frequency {w_max:.6g} rad/s", dt=dt, highest_frequency=w_max)

    rng = np.random.default_rng(seed)
    j, omega = _harmonic_grid(dt, length)
    phases = rng.uniform(0.0, 2 * np.pi, size=j.size)
    d_omega = 2 * np.pi / (length * dt)
    amplitude = np.sqrt(2.0 * spectrum.density(omega) * d_omega)

    coeffs = np.zeros(length // 2 + 1, dtype=complex)
    coeffs[1:] = 0.5 * length * amplitude * np.exp(1j * phases)
    samples = np.fft.irfft(coeffs, n=length) if length > 1 else np.zeros(1)
    return NoiseTrace(dt=float(dt), samples=samples, seed=int(seed), spectrum=spectrum)


def _moving_average(values, window):
    if window == 1:
        return values.copy()
    kernel = np.ones(window)
    total = np.convolve(values, kernel, mode="same")
    # shrink the window at the edges instead of padding with zeros
    counts = np.convolve(np.ones_like(values), kernel, mode="same")
    return total / counts


def estimate_periodogram(trace: NoiseTrace, smoothing_window: int = 1) -> PowerSpectrum:
    """One-sided periodogram of ``trace`` as a tabulated spectrum.

    Bins run from ``2*pi/(L*dt)`` up to the Nyquist fold ``pi/dt`` (reached
    exactly for even ``L``). With ``smoothing_window > 1`` the densities are
    passed through a centered moving average that narrows at the edges.
    """
    x = trace.samples
    n = x.size
    if n < 4:
        raise ValidationError("periodogram needs a trace of length >= 4", length=n)
    if int(smoothing_window) != smoothing_window or smoothing_window < 1 or smoothing_window % 2 == 0:
        raise ValidationError("smoothing_window must be an odd integer >= 1",
                              smoothing_window=smoothing_window)
    if smoothing_window > n:
        raise ValidationError("smoothing_window exceeds trace length",
                              smoothing_window=smoothing_window, length=n)
    spec = np.fft.rfft(x)[1:]
    _, omega = _harmonic_grid(trace.dt, n)
    p = trace.dt * np.abs(spec) ** 2 / (np.pi * n)
    if n % 2 == 0:
        p[-1] *= 0.5  # the Nyquist bin has no mirror image
    window = min(int(smoothing_window), p.size if p.size % 2 else p.size - 1)
    p = _moving_average(p, max(window, 1))
    return PowerSpectrum.tabulated(omega, p)


def autocovariance(trace: NoiseTrace | np.ndarray, max_lag: int) -> np.ndarray:
    """Autocovariance at lags ``0..max_lag`` with a ``1/(L - lag)`` normalisation.

    The mean is removed first; lag 0 is therefore ``np.var(x)``.
    """
    x = np.asarray(trace.samples if isinstance(trace, NoiseTrace) else trace, dtype=float)
    n = x.size
    if int(max_lag) != max_lag or max_lag < 0 or max_lag >= n:
        raise ValidationError("max_lag must satisfy 0 <= max_lag < trace length",
                              max_lag=max_lag, length=n)
    xc = x - x.mean()
    lags = np.arange(int(max_lag) + 1)
    return np.array([np.dot(xc[: n - k], xc[k:]) / (n - k) for k in lags])


def format_trace_csv(trace: NoiseTrace) -> str:
    """Two-column CSV with seed, interval and spectrum in leading comment lines."""
    spectrum = trace.spectrum.descriptor() if trace.spectrum is not None else "external"
    lines = [f"# seed={trace.seed}", f"# dt_s={trace.dt!r}",
             f"# spectrum={json.dumps(spectrum, sort_keys=True)}", "time_s,phase_rad"]
    lines += [f"{t!r},{v!r}" for t, v in zip(trace.times.tolist(), trace.samples.tolist())]
    return "\n".join(lines) + "\n"


def write_trace_csv(trace: NoiseTrace, path) -> Path:
    path = Path(path)
    path.write_text(format_trace_csv(trace), encoding="utf-8", newline="\n")
    return path


def read_trace_csv(path) -> NoiseTrace:
    """Inverse of :func:`write_trace_csv`; a trace without header metadata is 'external'."""
    path = Path(path)
    meta = {}
    times, values = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            if line.startswith("time_s"):
                continue
            try:
                t, v = line.split(",")
                times.append(float(t))
                values.append(float(v))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: malformed row {line!r}",
                                      file=str(path), line=lineno) from None
    if "dt_s" in meta:
        dt = float(meta["dt_s"])
    elif len(times) >= 2:
        dt = times[1] - times[0]
    else:
        raise ValidationError(f"{path}: cannot determine sample interval", file=str(path))
    spectrum = None
    if meta.get("spectrum", '"external"') != '"external"':
        spectrum = PowerSpectrum.from_descriptor(json.loads(meta["spectrum"]))
    seed = meta.get("seed")
    seed = int(seed) if seed not in (None, "None") else None
    return NoiseTrace(dt=dt, samples=np.array(values), seed=seed, spectrum=spectrum)


def band_variance(spectrum: PowerSpectrum, dt: float, length: int) -> float:
    """Exact variance of a trace from :func:`synthesize_noise` with these arguments."""
    _, omega = _harmonic_grid(dt, length)
    return float(np.sum(spectrum.density(omega)) * 2 * math.pi / (length * dt))
