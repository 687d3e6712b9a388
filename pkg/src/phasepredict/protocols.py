"""Closed-loop protocols: time-division-multiplexed stabilisation and the cyclic lock.

Sign convention: ``correction`` is the phase the actuator removes during a
step, so every record satisfies ``residual = noise - correction`` exactly.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import metrics
from .errors import PhaseWrapError, UndefinedCorrelationError, ValidationError
from .measure import (HALF_PI, MeasurementModel, MeasurementSeries, readout, trace_length_for,
                      window_averages)
from .noise import NoiseTrace, PowerSpectrum, synthesize_noise
from .predictor import PredictorModel, stack_training_matrices, train
from .seeding import derive_seed

FREE_RUNNING = "free-running"
TRADITIONAL = "traditional"
PREDICTIVE = "predictive"
POLICIES = (FREE_RUNNING, TRADITIONAL, PREDICTIVE)

PROBE, STABILISE, DIAGNOSTIC, LOCK_CYCLE = "probe", "stabilise", "diagnostic", "lock-cycle"


def _check_policy(policy):
    if policy not in POLICIES:
        raise ValidationError(f"unknown policy {policy!r}; expected one of {POLICIES}",
                              policy=policy)


@dataclass(frozen=True)
class TdmConfig:
    n_probe: int
    k_stab: int
    cycles: int
    model: MeasurementModel
    spectrum: PowerSpectrum
    seed: int
    policy: str = PREDICTIVE
    samples_per_window: int = 4
    diagnostic_step: int | None = None

    def __post_init__(self):
        if self.n_probe < 1 or self.k_stab < 1 or self.cycles < 1:
            raise ValidationError("n_probe, k_stab and cycles must all be >= 1")
        _check_policy(self.policy)
        step = self.diagnostic_step
        if step is not None and not 1 <= step <= self.k_stab:
            raise ValidationError("diagnostic_step must lie in 1..k_stab", diagnostic_step=step)
        if self.samples_per_window < 1:
            raise ValidationError("samples_per_window must be >= 1")


@dataclass(frozen=True)
class LockConfig:
    n: int
    cycles: int
    model: MeasurementModel
    spectrum: PowerSpectrum
    seed: int
    policy: str = PREDICTIVE
    horizon: int = 1
    samples_per_window: int = 4
    warmup: int | None = None  # defaults to n

    def __post_init__(self):
        if self.cycles < 2:
            raise ValidationError("a lock needs at least 2 cycles", cycles=self.cycles)
        if self.n < 1 or self.horizon < 1:
            raise ValidationError("n and horizon must be >= 1")
        _check_policy(self.policy)
        if self.warmup is not None and self.warmup < 0:
            raise ValidationError("warmup must be >= 0")

    @property
    def warmup_cycles(self) -> int:
        return self.n if self.warmup is None else self.warmup


@dataclass(frozen=True)
class ProtocolRecord:
    """Per-step ledger of one protocol run; ``measured`` is NaN where nothing was measured."""

    time: np.ndarray = field(repr=False)
    noise: np.ndarray = field(repr=False)
    correction: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    measured: np.ndarray = field(repr=False)
    tag: np.ndarray = field(repr=False)
    cycle: np.ndarray = field(repr=False)
    step: np.ndarray = field(repr=False)
    policy: str = PREDICTIVE
    outcome: str = "completed"
    abort_cycle: int | None = None

    COLUMNS = ("time_s", "cycle", "step", "tag", "noise_rad", "correction_rad",
               "residual_rad", "measured_rad")

    def __len__(self):
        return self.time.size

    def select(self, tag: str) -> np.ndarray:
        return self.tag == tag

    def bookkeeping_error(self) -> float:
        """Largest deviation from ``residual = noise - correction`` over all steps."""
        if len(self) == 0:
            return 0.0
        return float(np.max(np.abs(self.residual - (self.noise - self.correction))))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for i in range(len(self)):
            m = self.measured[i]
            w.writerow([repr(float(self.time[i])), int(self.cycle[i]), int(self.step[i]),
                        self.tag[i], repr(float(self.noise[i])),
                        repr(float(self.correction[i])), repr(float(self.residual[i])),
                        "" if np.isnan(m) else repr(float(m))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        cols = dict(zip(self.COLUMNS, (self.time, self.cycle, self.step, self.tag, self.noise,
                                       self.correction, self.residual, self.measured)))
        out = {k: [None if isinstance(v, float) and math.isnan(v) else v
                   for v in np.asarray(a).tolist()] for k, a in cols.items()}
        out.update(policy=self.policy, outcome=self.outcome, abort_cycle=self.abort_cycle)
        return out


class _Readout:
    """Readout noise drawn so that runs sharing a seed see the same draws per window."""

    def __init__(self, model: MeasurementModel, seed: int, count: int):
        self.model = model
        self.rng = np.random.default_rng(derive_seed(seed, "readout"))
        gaussian = model.readout_sigma is not None and model.readout_sigma > 0
        self.z = self.rng.standard_normal(count) if gaussian else None

    def __call__(self, phase: float, index: int) -> float:
        if abs(phase) >= HALF_PI:
            raise PhaseWrapError(f"phase {phase:.4g} rad outside (-pi/2, pi/2) at step {index}",
                                 step=index, phase_rad=float(phase))
        if self.z is not None:
            return phase + self.model.readout_sigma * self.z[index]
        return float(readout([phase], self.model, self.rng)[0])

    def many(self, phases: np.ndarray) -> np.ndarray:
        if self.z is None:
            return np.array([self(p, i) for i, p in enumerate(phases)])
        readout(phases, replace(self.model, readout_sigma=0.0))  # phase-wrap check only
        return phases + self.model.readout_sigma * self.z[:phases.size]


def simulate_windows(spectrum: PowerSpectrum, model: MeasurementModel, count: int, seed: int,
                     samples_per_window: int = 4) -> tuple[NoiseTrace, np.ndarray, np.ndarray]:
    """Synthesize a trace long enough for ``count`` cycles; return it with window starts/averages."""
    dt = model.duration / samples_per_window
    length = trace_length_for(model, count, dt)
    trace = synthesize_noise(spectrum, dt, length, seed)
    starts = model.cycle_time * np.arange(count)
    return trace, starts, window_averages(trace, starts, model.duration)


def free_running_series(spectrum: PowerSpectrum, model: MeasurementModel, count: int, seed: int,
                        samples_per_window: int = 4) -> tuple[np.ndarray, MeasurementSeries]:
    """Uncorrected measurements of a fresh noise realisation; returns (true window phases, series)."""
    _, starts, phi = simulate_windows(spectrum, model, count, seed, samples_per_window)
    values = _Readout(model, seed, count).many(phi)
    return phi, MeasurementSeries(times=starts, values=values, model=model)


def run_tdm(config: TdmConfig, model: PredictorModel | None = None) -> ProtocolRecord:
    """Alternate probe periods (measure only) with stabilisation periods (correct only).

    Each cycle takes ``n_probe`` uncorrected measurements, predicts the next
    ``k_stab`` steps and removes ``phi_P(t_k)`` at step ``k`` without measuring.
    One diagnostic measurement of the residual is taken at ``diagnostic_step``
    (default: the last step).
    """
    if config.policy == PREDICTIVE:
        if model is None:
            raise ValidationError("predictive TDM needs a trained predictor")
        if model.n != config.n_probe or model.horizon < config.k_stab:
            raise ValidationError("predictor shape does not match TDM config",
                                  model_n=model.n, model_K=model.horizon,
                                  n_probe=config.n_probe, k_stab=config.k_stab)
    per_cycle = config.n_probe + config.k_stab
    total = config.cycles * per_cycle
    _, starts, phi = simulate_windows(config.spectrum, config.model, total, config.seed,
                                      config.samples_per_window)
    ro = _Readout(config.model, config.seed, total)
    diag = config.diagnostic_step or config.k_stab

    correction = np.zeros(total)
    measured = np.full(total, np.nan)
    tag = np.empty(total, dtype=object)
    cycle = np.repeat(np.arange(config.cycles), per_cycle)
    step = np.tile(np.concatenate([np.arange(1 - config.n_probe, 1),
                                   np.arange(1, config.k_stab + 1)]), config.cycles)
    for c in range(config.cycles):
        base = c * per_cycle
        probe = slice(base, base + config.n_probe)
        tag[probe] = PROBE
        try:
            for i in range(probe.start, probe.stop):
                measured[i] = ro(phi[i], i)
        except PhaseWrapError as exc:
            raise PhaseWrapError(f"TDM cycle {c}, probe step: {exc}", cycle=c,
                                 **exc.context) from None
        features = measured[probe]
        if config.policy == PREDICTIVE:
            plan = model.predict_rows(features[None, :])[0, :config.k_stab]
        elif config.policy == TRADITIONAL:
            plan = np.full(config.k_stab, features[-1])
        else:
            plan = np.zeros(config.k_stab)
        stab = slice(base + config.n_probe, base + per_cycle)
        correction[stab] = plan
        tag[stab] = STABILISE
        i_diag = stab.start + diag - 1
        tag[i_diag] = DIAGNOSTIC
        try:
            measured[i_diag] = ro(phi[i_diag] - correction[i_diag], i_diag)
        except PhaseWrapError as exc:
            raise PhaseWrapError(f"TDM cycle {c}, diagnostic step {diag}: {exc}", cycle=c,
                                 **exc.context) from None
    return ProtocolRecord(time=starts, noise=phi, correction=correction,
                          residual=phi - correction, measured=measured, tag=tag.astype(str),
                          cycle=cycle, step=step, policy=config.policy)


def run_lock(config: LockConfig, model: PredictorModel | None = None,
             noise: np.ndarray | None = None) -> ProtocolRecord:
    """Cyclic measure-and-correct loop with dead time between measurements.

    The correction removed during cycle ``i + horizon`` is computed right after
    the measurement of cycle ``i``. Features fed to the predictor are the
    reconstructed noise values ``measured + correction`` so they match the
    uncorrected data the predictor was trained on. Until ``n`` reconstructions
    exist, the predictive policy falls back to the traditional rule. The first
    ``warmup`` cycles are tagged ``probe``; the rest ``lock-cycle``.

    A residual beyond the readout range ends the run with
    ``outcome == "diverged"`` instead of raising. ``noise`` replays given
    window-averaged phases instead of synthesizing them from the spectrum.
    """
    if config.policy == PREDICTIVE:
        if model is None:
            raise ValidationError("predictive lock needs a trained predictor")
        if model.n != config.n or model.horizon < config.horizon:
            raise ValidationError("predictor shape does not match lock config",
                                  model_n=model.n, model_K=model.horizon, n=config.n,
                                  horizon=config.horizon)
    h = config.horizon
    total = config.warmup_cycles + config.cycles
    if noise is None:
        _, starts, phi = simulate_windows(config.spectrum, config.model, total, config.seed,
                                          config.samples_per_window)
    else:
        phi = np.asarray(noise, dtype=float)
        if phi.shape != (total,):
            raise ValidationError(f"replayed noise needs {total} window averages",
                                  expected=total, got=int(phi.size))
        starts = config.model.cycle_time * np.arange(total)
    ro = _Readout(config.model, config.seed, total)

    correction = np.zeros(total + h)
    measured = np.full(total, np.nan)
    history = np.zeros(total)
    outcome, abort = "completed", None
    done = total
    k = h - 1
    for i in range(total):
        residual = phi[i] - correction[i]
        if abs(residual) >= HALF_PI:
            outcome, abort, done = "diverged", i, i + 1
            break
        measured[i] = ro(residual, i)
        history[i] = measured[i] + correction[i]
        if config.policy == FREE_RUNNING:
            nxt = 0.0
        elif config.policy == PREDICTIVE and i + 1 >= config.n:
            recent = history[i + 1 - config.n:i + 1]
            nxt = float(model.intercepts[k] + recent @ model.weights[:, k])
        else:
            nxt = history[i]
        correction[i + h] = nxt

    sl = slice(0, done)
    idx = np.arange(done)
    tag = np.where(idx < config.warmup_cycles, PROBE, LOCK_CYCLE)
    return ProtocolRecord(time=starts[sl], noise=phi[sl], correction=correction[sl],
                          residual=phi[sl] - correction[sl], measured=measured[sl], tag=tag,
                          cycle=idx, step=np.ones(done, dtype=int), policy=config.policy,
                          outcome=outcome, abort_cycle=abort)


def train_lock_predictor(config: LockConfig, train_seeds: Sequence[int], cycles_per_seed: int,
                         ridge: float | None = None) -> PredictorModel:
    """Fit the lock predictor on free-running series at the lock's own cycle time."""
    series = [free_running_series(config.spectrum, config.model, cycles_per_seed, s,
                                  config.samples_per_window)[1] for s in train_seeds]
    x, y = stack_training_matrices(series, config.n, config.horizon)
    meta = {"spectrum": config.spectrum.descriptor(), "measurement": config.model.descriptor(),
            "seeds": list(map(int, train_seeds)), "cycles_per_seed": cycles_per_seed}
    return train(x, y, ridge=ridge, training_meta=meta)


def lock_summary(record: ProtocolRecord, N: int | None = None) -> dict:
    """Sample variance of the locked residual at ``N`` cycles and the correction/noise correlation."""
    sel = record.select(LOCK_CYCLE)
    res = record.residual[sel]
    N = res.size if N is None else N
    out = {"policy": record.policy, "outcome": record.outcome, "abort_cycle": record.abort_cycle,
           "cycles": int(res.size)}
    out["sample_variance_rad2"] = metrics.sample_variance(res, N) if res.size >= max(N, 2) else None
    corr = record.correction[sel]
    try:
        out["pearson_r_correction_vs_noise"] = metrics.pearson_r(corr[:N], record.noise[sel][:N])
    except UndefinedCorrelationError:  # free-running corrections are constant
        out["pearson_r_correction_vs_noise"] = None
    return out


def sampling_config(template: LockConfig, ratio: float, cutoff: float) -> LockConfig:
    """Copy of ``template`` whose dead time sets ``w_s = ratio * cutoff`` at fixed T_M."""
    if not ratio > 1:
        raise ValidationError("sampling ratio w_s/w_c must exceed 1", ratio=ratio)
    readout_kw = ({"readout_sigma": template.model.readout_sigma}
                  if template.model.readout_sigma is not None
                  else {"ensemble_size": template.model.ensemble_size})
    try:
        model = MeasurementModel.for_sampling_frequency(template.model.duration, ratio * cutoff,
                                                        **readout_kw)
    except ValidationError as exc:
        raise ValidationError(f"sampling ratio {ratio} not reachable with "
                              f"T_M = {template.model.duration} s: {exc}", ratio=ratio) from None
    return replace(template, model=model)


def _sweep_point(args):
    template, ratio, cutoff, seeds, train_seeds, train_cycles, ridge, policies, N = args
    cfg = sampling_config(template, ratio, cutoff)
    predictor = None
    if PREDICTIVE in policies:
        predictor = train_lock_predictor(replace(cfg, policy=PREDICTIVE), train_seeds,
                                         train_cycles, ridge)
    per_seed = []
    for seed in seeds:
        row = {}
        for policy in policies:
            rec = run_lock(replace(cfg, seed=seed, policy=policy), predictor)
            row[policy] = lock_summary(rec, N)
        per_seed.append(row)
    return ratio, per_seed


def sweep_sampling(template: LockConfig, ratios: Sequence[float], seeds: Sequence[int],
                   train_seeds: Sequence[int], train_cycles: int = 4000,
                   ridge: float | None = None, N: int | None = None, cutoff: float | None = None,
                   jobs: int = 1, policies: Sequence[str] = POLICIES) -> list[dict]:
    """Sample variance at ``N`` cycles versus sampling rate, for each policy.

    Measurement duration is held fixed and the dead time grows as ``w_s``
    falls. Each seed's variance is normalised to the free-running variance of
    the same noise realisation; rows report the mean, standard deviation of the
    mean and min/max over seeds, plus the ensemble-normalised value
    (mean variance / mean free-running variance).
    """
    policies = tuple(policies)
    if FREE_RUNNING not in policies:
        policies = (FREE_RUNNING,) + policies
    if set(seeds) & set(train_seeds):
        raise ValidationError("training and evaluation seeds must be disjoint")
    cutoff = template.spectrum.highest_frequency() if cutoff is None else cutoff
    max_ratio = 2 * math.pi / (template.model.duration * cutoff)
    for r in ratios:
        if not 1 < r <= max_ratio * (1 + 1e-9):
            raise ValidationError(f"sampling ratio {r} outside (1, {max_ratio:.6g}]", ratio=r)
    N = template.cycles if N is None else N
    tasks = [(template, float(r), cutoff, list(seeds), list(train_seeds), train_cycles, ridge,
              policies, N) for r in ratios]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]

    rows = []
    for ratio, per_seed in results:
        free = np.array([s[FREE_RUNNING]["sample_variance_rad2"] for s in per_seed])
        for policy in policies:
            var = np.array([np.nan if s[policy]["sample_variance_rad2"] is None
                            else s[policy]["sample_variance_rad2"] for s in per_seed])
            norm = var / free
            rs = [s[policy]["pearson_r_correction_vs_noise"] for s in per_seed]
            rs = np.array([np.nan if r is None else r for r in rs])
            diverged = sum(s[policy]["outcome"] != "completed" for s in per_seed)
            rows.append({
                "sampling_ratio": ratio,
                "policy": policy,
                "normalized_variance_mean": float(np.mean(norm)),
                "normalized_variance_sem": float(np.std(norm, ddof=1) / np.sqrt(norm.size))
                if norm.size > 1 else 0.0,
                "normalized_variance_min": float(np.min(norm)),
                "normalized_variance_max": float(np.max(norm)),
                "ensemble_normalized_variance": float(np.mean(var) / np.mean(free)),
                "pearson_r_mean": float(np.mean(rs)) if np.all(np.isfinite(rs)) else None,
                "diverged_runs": int(diverged),
                "per_seed_normalized_variance": norm.tolist(),
                "per_seed_pearson_r": [None if not np.isfinite(r) else float(r) for r in rs],
            })
    return rows
