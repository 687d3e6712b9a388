"""Phase accumulation over measurement windows and simulated Ramsey readout."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PhaseWrapError, RangeError, ValidationError
from .noise import NoiseTrace, PowerSpectrum

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class MeasurementModel:
    """Timing and projection-noise model of one measurement cycle.

    Exactly one readout-noise model is active: a binomial spatial ensemble of
    ``ensemble_size`` projections, or additive Gaussian noise of
    ``readout_sigma`` rad.
    """

    duration: float
    dead_time: float = 0.0
    ensemble_size: int | None = None
    readout_sigma: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValidationError("measurement duration must be > 0", field="duration")
        if not (math.isfinite(self.dead_time) and self.dead_time >= 0):
            raise ValidationError("dead time must be >= 0", field="dead_time")
        if (self.ensemble_size is None) == (self.readout_sigma is None):
            raise ValidationError("exactly one of ensemble_size and readout_sigma must be set")
        if self.ensemble_size is not None and (int(self.ensemble_size) != self.ensemble_size
                                               or self.ensemble_size < 1):
            raise ValidationError("ensemble_size must be an integer >= 1", field="ensemble_size")
        if self.readout_sigma is not None and not (math.isfinite(self.readout_sigma)
                                                   and self.readout_sigma >= 0):
            raise ValidationError("readout_sigma must be >= 0", field="readout_sigma")

    @property
    def cycle_time(self) -> float:
        return self.duration + self.dead_time

    @property
    def sampling_frequency(self) -> float:
        """Angular measurement rate ``2*pi / (T_M + T_D)``."""
        return 2 * math.pi / (self.duration + self.dead_time)

    @classmethod
    def for_sampling_frequency(cls, duration, sampling_frequency, **readout):
        """Model with fixed ``duration`` whose dead time yields ``sampling_frequency``."""
        dead = 2 * math.pi / sampling_frequency - duration
        if dead < -1e-12 * duration:
            raise ValidationError("sampling frequency too high for this measurement duration",
                                  sampling_frequency=sampling_frequency, duration=duration)
        return cls(duration=duration, dead_time=max(dead, 0.0), **readout)

    def descriptor(self) -> dict:
        return {"duration_s": self.duration, "dead_time_s": self.dead_time,
                "ensemble_size": self.ensemble_size, "readout_sigma_rad": self.readout_sigma}


@dataclass(frozen=True)
class MeasurementSeries:
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    model: MeasurementModel | None = None  # None marks externally recorded data

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValidationError("times and values must be 1-D and of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("measurement times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValidationError("measurement values must be finite")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _cumulative_integral(x, dt):
    out = np.empty_like(x)
    out[0] = 0.0
    np.cumsum(0.5 * dt * (x[1:] + x[:-1]), out=out[1:])
    return out


def _integral_to(trace, cum, t):
    """Integral of the piecewise-linear trace from 0 to ``t`` (array)."""
    x = trace.samples
    u = np.asarray(t, dtype=float) / trace.dt
    j = np.clip(np.floor(u).astype(int), 0, max(x.size - 2, 0))
    f = u - j
    if x.size == 1:
        return np.zeros_like(u)
    slope = x[j + 1] - x[j]
    return cum[j] + trace.dt * (x[j] * f + 0.5 * slope * f * f)


def window_averages(trace: NoiseTrace, starts, duration: float) -> np.ndarray:
    """Time average of the linearly interpolated trace over ``[s, s + duration]`` for each start."""
    starts = np.atleast_1d(np.asarray(starts, dtype=float))
    if not duration > 0:
        raise ValidationError("window must have positive length", duration=duration)
    ends = starts + duration
    tol = 1e-9 * trace.dt
    if starts.size and (starts.min() < -tol or ends.max() > trace.duration + tol):
        bad = int(np.flatnonzero((starts < -tol) | (ends > trace.duration + tol))[0])
        raise RangeError(f"window [{starts[bad]!r}, {ends[bad]!r}] s lies outside the trace "
                         f"extent [0, {trace.duration!r}] s", window_index=bad)
    if len(trace) == 1:
        return np.full(starts.shape, trace.samples[0])
    cum = _cumulative_integral(trace.samples, trace.dt)
    starts = np.clip(starts, 0.0, trace.duration)
    ends = np.clip(ends, 0.0, trace.duration)
    return (_integral_to(trace, cum, ends) - _integral_to(trace, cum, starts)) / duration


def accumulate_phase(trace: NoiseTrace, window_start: float, window_end: float) -> float:
    """Mean applied phase over a window, trapezoidal on the sampled trace."""
    if not window_end > window_start:
        raise ValidationError("window_end must exceed window_start",
                              window_start=window_start, window_end=window_end)
    return float(window_averages(trace, [window_start], window_end - window_start)[0])


def readout(true_phase, model: MeasurementModel, rng: np.random.Generator | None = None,
            index_offset: int = 0) -> np.ndarray:
    """Convert averaged phases into measurement outcomes under ``model``'s projection noise."""
    phi = np.atleast_1d(np.asarray(true_phase, dtype=float))
    wrapped = np.flatnonzero(np.abs(phi) >= HALF_PI)
    if wrapped.size:
        i = int(wrapped[0])
        raise PhaseWrapError(f"averaged phase {phi[i]:.4g} rad at window {i + index_offset} is "
                             "outside the unambiguous readout range (-pi/2, pi/2); reduce the "
                             "noise amplitude", window_index=i + index_offset,
                             phase_rad=float(phi[i]))
    if model.readout_sigma is not None:
        if model.readout_sigma == 0:
            return phi.copy()
        if rng is None:
            raise ValidationError("a random generator is required for noisy readout")
        return phi + model.readout_sigma * rng.standard_normal(phi.shape)
    if rng is None:
        raise ValidationError("a random generator is required for projective readout")
    p = model.ensemble_size
    prob = 0.5 * (1.0 + np.sin(phi))
    k = rng.binomial(p, prob)
    return np.arcsin(np.clip(2.0 * k / p - 1.0, -1.0, 1.0))


def measure(trace: NoiseTrace, model: MeasurementModel, t_start: float,
            rng: np.random.Generator | None = None) -> float:
    """One simulated outcome for the window starting at ``t_start``."""
    phi = accumulate_phase(trace, t_start, t_start + model.duration)
    return float(readout([phi], model, rng)[0])


def run_measurement_sequence(trace: NoiseTrace, model: MeasurementModel, count: int,
                             corrections: Sequence[float] | None = None, seed: int = 0,
                             t_start: float = 0.0) -> MeasurementSeries:
    """Measure ``count`` consecutive windows spaced by the model's cycle time.

    ``corrections[i]`` is the phase the actuator removes during window ``i``
    (already accumulated over earlier feedback steps), so the qubit sees
    ``window_average - corrections[i]``.
    """
    if int(count) != count or count < 1:
        raise ValidationError("count must be an integer >= 1", count=count)
    count = int(count)
    times = t_start + model.cycle_time * np.arange(count)
    phi = window_averages(trace, times, model.duration)
    if corrections is not None:
        c = np.asarray(corrections, dtype=float)
        if c.shape != (count,):
            raise ValidationError("need one correction per window", count=count,
                                  corrections=int(c.size))
        phi = phi - c
    values = readout(phi, model, np.random.default_rng(seed))
    return MeasurementSeries(times=times, values=values, model=model)


def trace_length_for(model: MeasurementModel, count: int, dt: float) -> int:
    """Samples needed so ``count`` measurement windows fit inside the trace."""
    span = (count - 1) * model.cycle_time + model.duration
    return int(math.ceil(span / dt * (1 + 1e-12))) + 2


def window_variance(spectrum: PowerSpectrum, dt: float, length: int, duration: float) -> float:
    """Variance of the window-averaged phase for a synthesized trace.

    Each harmonic of the synthesis grid is attenuated by the averaging window's
    transfer function ``sinc^2(w T/2)``. Interpolation error between samples is
    ignored, which is accurate while ``dt`` is well below ``1/w`` in band.
    """
    j = np.arange(1, length // 2 + 1)
    omega = 2 * np.pi * j / (length * dt)
    power = spectrum.density(omega) * 2 * np.pi / (length * dt)
    box = np.sinc(omega * duration / (2 * np.pi)) ** 2
    return float(np.sum(power * box))


def readout_sigma_for_correlation(signal_rms: float, target_r: float) -> float:
    """Gaussian readout noise that gives correlation ``target_r`` with the true phase."""
    if not 0 < target_r <= 1:
        raise ValidationError("target correlation must lie in (0, 1]", target_r=target_r)
    return float(signal_rms * math.sqrt(1.0 / target_r ** 2 - 1.0))


def format_series_csv(series: MeasurementSeries) -> str:
    lines = ["time_s,phase_rad"]
    lines += [f"{t!r},{v!r}" for t, v in zip(series.times.tolist(), series.values.tolist())]
    return "\n".join(lines) + "\n"


def write_series_csv(series: MeasurementSeries, path) -> Path:
    path = Path(path)
    path.write_text(format_series_csv(series), encoding="utf-8", newline="\n")
    return path


def read_series_csv(path, rate_hz: float | None = None) -> MeasurementSeries:
    """Read ``(time_s, phase_rad)`` or ``(index, phase_rad)`` rows.

    Index-keyed files need ``rate_hz`` to place samples in time; comment lines
    starting with ``#`` are skipped.
    """
    path = Path(path)
    first, values = [], []
    header = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if header is None and not _is_number(parts[0]):
                header = parts
                continue
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}",
                                      file=str(path), line=lineno)
            try:
                first.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: malformed row {line!r}",
                                      file=str(path), line=lineno) from None
    if not values:
        raise ValidationError(f"{path}: no data rows", file=str(path))
    by_index = header is not None and header[0].lower() == "index"
    if by_index:
        if rate_hz is None:
            raise ValidationError("index-keyed series needs a declared sampling rate")
        times = np.asarray(first) / rate_hz
    else:
        times = np.asarray(first)
    if np.any(np.diff(times) <= 0):
        bad = int(np.flatnonzero(np.diff(times) <= 0)[0])
        raise ValidationError(f"{path}: timestamps are not strictly increasing at data row "
                              f"{bad + 2}", file=str(path), row=bad + 2)
    return MeasurementSeries(times=times, values=np.asarray(values), model=None)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True
