"""End-to-end experiment analyses built from the library pieces.

Every function here is deterministic in its seeds and returns plain
dictionaries/arrays; writing files is left to :mod:`phasepredict.cli`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import metrics
from .errors import ValidationError
from .measure import MeasurementModel, MeasurementSeries
from .noise import PowerSpectrum, estimate_periodogram, NoiseTrace
from .predictor import (PredictorModel, residual_rms, stack_training_matrices,
                        train, traditional_residual_rms)
from .protocols import (DIAGNOSTIC, FREE_RUNNING, LOCK_CYCLE, POLICIES, PREDICTIVE, TRADITIONAL,
                        LockConfig, TdmConfig, free_running_series, lock_summary, run_lock, run_tdm,
                        train_lock_predictor)


def _eval_windows(values, n_max, K, stride=1):
    """Indices t0 at which every n <= n_max has history and all K future steps exist."""
    return np.arange(n_max - 1, values.size - K, stride)


def _features(values, t0, n):
    offsets = np.arange(-n + 1, 1)
    return values[t0[:, None] + offsets[None, :]]


def _futures(values, t0, K):
    return values[t0[:, None] + np.arange(1, K + 1)[None, :]]


def train_predictors(series: Sequence[MeasurementSeries], ns: Sequence[int], K: int,
                     ridge: float | None = None, meta: dict | None = None) -> dict[int, PredictorModel]:
    """One predictor per feature count, all trained on the same measurement series."""
    models = {}
    for n in ns:
        x, y = stack_training_matrices(series, n, K)
        info = dict(meta or {}, n=n, K=K)
        models[n] = train(x, y, ridge=ridge, training_meta=info)
        models[n].training_meta["train_rms"] = residual_rms(models[n], x, y).tolist()
        models[n].training_meta["traditional_train_rms"] = traditional_residual_rms(x, y).tolist()
    return models


def forward_prediction(models: dict[int, PredictorModel], validation: Sequence[tuple],
                       K: int, mean_level: np.ndarray | None = None, stride: int = 1,
                       n_boot: int = 2000, boot_seed: int = 0) -> dict:
    """Held-out RMS error of every predictor, traditional feedback and the mean predictor.

    ``validation`` holds ``(truth, measured)`` pairs per held-out trace; truth
    is the applied phase per window (or future measurements for intrinsic data).
    Per-trace RMS values are kept so confidence can be bootstrapped over traces.
    """
    ns = sorted(models)
    n_max = max(ns)
    labels = [metrics.TRADITIONAL_ROW] + [str(n) for n in ns]
    per_trace = []
    mean_rms = []
    truth_sq, truth_count = 0.0, 0
    r_all_x, r_all_y = [], []
    mean_level = np.zeros(K) if mean_level is None else np.asarray(mean_level)
    for truth, measured in validation:
        t0 = _eval_windows(measured, n_max, K, stride)
        fut = _futures(truth, t0, K)
        rows = [np.sqrt(np.mean((measured[t0][:, None] - fut) ** 2, axis=0))]
        for n in ns:
            pred = models[n].predict_rows(_features(measured, t0, n))
            rows.append(np.sqrt(np.mean((pred - fut) ** 2, axis=0)))
        per_trace.append(rows)
        mean_rms.append(np.sqrt(np.mean((mean_level[None, :] - fut) ** 2, axis=0)))
        truth_sq += float(np.sum(fut ** 2))
        truth_count += fut.size
        r_all_x.append(measured)
        r_all_y.append(truth)
    per_trace = np.array(per_trace)  # (traces, rows, K)
    raw = per_trace.mean(axis=0)
    boots = metrics.bootstrap_means(per_trace, n_boot=n_boot, seed=boot_seed)
    return {
        "labels": labels,
        "ns": ns,
        "per_trace_rms": per_trace,
        "mean_rms": raw,
        "bootstrap_se": boots.std(axis=0, ddof=1),
        "bootstrap_replicates": boots,
        "mean_predictor_rms": np.mean(mean_rms, axis=0),
        "truth_rms": math.sqrt(truth_sq / truth_count),
        "pearson_r_measured_vs_truth": metrics.pearson_r(np.concatenate(r_all_x),
                                                        np.concatenate(r_all_y)),
    }


def overlay(models: dict[int, PredictorModel], truth, measured, t0: int, K: int) -> dict:
    """Applied/measured phase around ``t0`` and each predictor's forecast up to ``t_K``."""
    ns = sorted(models)
    n_max = max(ns)
    if t0 < n_max - 1 or t0 + K >= measured.size:
        raise ValidationError("overlay window does not fit in the trace", t0=t0)
    ks = np.arange(-n_max + 1, K + 1)
    out = {"k": ks, "applied": truth[t0 + ks],
           "measured": np.where(ks <= 0, measured[t0 + np.minimum(ks, 0)], np.nan),
           "traditional": np.where(ks > 0, measured[t0], np.nan)}
    for n in ns:
        pred = models[n].predict_rows(measured[t0 - n + 1:t0 + 1][None, :])[0]
        out[f"n={n}"] = np.concatenate([np.full(n_max, np.nan), pred])
    return out


def rms_map_from(result: dict, mode: str = "field-min") -> metrics.RmsMap:
    ref = result["truth_rms"] if mode in ("noise-rms", "uncorrected-rms") else None
    return metrics.normalize_rms_grid(result["labels"], result["mean_rms"], mode, ref)


@dataclass(frozen=True)
class Fig1Setup:
    spectrum: PowerSpectrum
    model: MeasurementModel
    ns: tuple[int, ...] = (1, 5, 20, 100)
    horizon: int = 150
    train_seeds: tuple[int, ...] = ()
    validate_seeds: tuple[int, ...] = ()
    measurements_per_trace: int = 8192
    samples_per_window: int = 4
    ridge: float | None = None
    n_boot: int = 2000
    stride: int = 1


def run_fig1(setup: Fig1Setup) -> dict:
    """Train on one set of noise realisations, score forward prediction on another."""
    if set(setup.train_seeds) & set(setup.validate_seeds):
        raise ValidationError("training and validation seeds must be disjoint")
    train_series = [free_running_series(setup.spectrum, setup.model,
                                        setup.measurements_per_trace, s,
                                        setup.samples_per_window)[1]
                    for s in setup.train_seeds]
    meta = {"spectrum": setup.spectrum.descriptor(), "measurement": setup.model.descriptor(),
            "seeds": list(setup.train_seeds), "measurements_per_trace":
            setup.measurements_per_trace}
    models = train_predictors(train_series, setup.ns, setup.horizon, setup.ridge, meta)
    _, labels = stack_training_matrices(train_series, 1, setup.horizon)
    mean_level = labels.mean(axis=0)
    validation = []
    for s in setup.validate_seeds:
        phi, series = free_running_series(setup.spectrum, setup.model,
                                          setup.measurements_per_trace, s,
                                          setup.samples_per_window)
        validation.append((phi, series.values))
    result = forward_prediction(models, validation, setup.horizon, mean_level=mean_level,
                                stride=setup.stride, n_boot=setup.n_boot)
    result["models"] = models
    phi0, m0 = validation[0]
    t0 = max(setup.ns) + 2 * setup.horizon
    result["overlay"] = overlay(models, phi0, m0, t0, setup.horizon)
    result["overlay_time_s"] = setup.model.cycle_time * (t0 + result["overlay"]["k"])
    result["scatter"] = {"measured": m0, "applied": phi0}
    return result


def tdm_ensemble(config: TdmConfig, model: PredictorModel, n_boot: int = 2000) -> dict:
    """Run the same noise/readout realisation under all three policies and compare per step."""
    records = {p: run_tdm(replace(config, policy=p), model if p == PREDICTIVE else None)
               for p in POLICIES}
    k = config.k_stab
    res = {}
    for p, rec in records.items():
        stab = rec.step > 0
        res[p] = rec.residual[stab].reshape(config.cycles, k)
    out = {"records": records, "k": np.arange(1, k + 1), "residuals": res}
    out["residual_rms"] = {p: np.sqrt(np.mean(r ** 2, axis=0)) for p, r in res.items()}
    abs_int = {p: np.cumsum(np.abs(r), axis=1) for p, r in res.items()}
    out["integrated_error"] = {p: a.mean(axis=0) for p, a in abs_int.items()}
    free_int = abs_int[FREE_RUNNING].mean(axis=0)
    out["integrated_reduction"] = {p: 1.0 - out["integrated_error"][p] / free_int
                                   for p in (TRADITIONAL, PREDICTIVE)}
    # per-period integrated reduction at the final step
    out["per_period_reduction"] = 1.0 - abs_int[PREDICTIVE][:, -1] / abs_int[FREE_RUNNING][:, -1]
    # bootstrap over periods of the MSE difference (traditional - predictive) per k
    diff = res[TRADITIONAL] ** 2 - res[PREDICTIVE] ** 2
    boots = metrics.bootstrap_means(diff, n_boot=n_boot, seed=config.seed % (2 ** 32))
    out["mse_difference_lower95"] = np.percentile(boots, 5, axis=0)
    rec = records[PREDICTIVE]
    out["diagnostics"] = {p: records[p].measured[records[p].select(DIAGNOSTIC)]
                          for p in POLICIES}
    out["noise_rms"] = float(np.sqrt(np.mean(res[FREE_RUNNING] ** 2)))
    out["bookkeeping_error"] = max(r.bookkeeping_error() for r in records.values())
    return out


def lock_comparison(template: LockConfig, seeds: Sequence[int], train_seeds: Sequence[int],
                    train_cycles: int, ridge: float | None = None) -> dict:
    """Every policy on every noise realisation at one sampling rate."""
    model = train_lock_predictor(replace(template, policy=PREDICTIVE), train_seeds, train_cycles,
                                 ridge)
    runs = {p: [run_lock(replace(template, seed=s, policy=p), model) for s in seeds]
            for p in POLICIES}
    N = template.cycles
    curves, variance, ellipses = {}, {}, {}
    free_at_N = np.array([lock_summary(r, N)["sample_variance_rad2"] for r in runs[FREE_RUNNING]])
    for p, recs in runs.items():
        cur = []
        for rec, ref in zip(recs, free_at_N):
            res = rec.residual[rec.select(LOCK_CYCLE)]
            Ns, v = metrics.sample_variance_curve(res)
            cur.append(v / ref)
        curves[p] = np.array(cur)
        variance[p] = np.array([lock_summary(r, N)["sample_variance_rad2"] for r in recs])
        if p != FREE_RUNNING:
            x = np.concatenate([r.correction[r.select(LOCK_CYCLE)] for r in recs])
            y = np.concatenate([r.noise[r.select(LOCK_CYCLE)] for r in recs])
            ellipses[p] = metrics.ellipse_summary(x, y)
    return {"model": model, "runs": runs, "N": Ns, "normalized_curves": curves,
            "sample_variance": variance, "free_running_variance": free_at_N,
            "ellipses": ellipses,
            "bookkeeping_error": max(r.bookkeeping_error() for rs in runs.values() for r in rs)}


def ingest_analysis(series: MeasurementSeries, ns: Sequence[int], K: int,
                    train_fraction: float = 0.7, ridge: float | None = None,
                    smoothing_window: int = 9, rate_hz: float | None = None) -> dict:
    """Offline analysis of a recorded series: chronological split, RMS map, variance vs n, spectrum.

    Truth for prediction error is the future measurement itself. Corrected
    sample variance at each ``n`` applies the one-step prediction as the
    correction for the next measurement.
    """
    x = series.values
    split = int(math.floor(train_fraction * x.size))
    train_part, valid_part = x[:split], x[split:]
    n_max = max(ns)
    if valid_part.size < n_max + K + 2 or train_part.size < n_max + K + n_max + 1:
        raise ValidationError("series too short for the requested n/K", length=int(x.size))
    models = train_predictors([train_part], ns, K, ridge,
                              {"source": "ingested", "split_index": split})
    result = forward_prediction(models, [(valid_part, valid_part)], K,
                                mean_level=np.full(K, train_part.mean()), n_boot=200)
    uncorrected_rms = float(np.sqrt(np.mean(valid_part ** 2)))
    rms_map = metrics.normalize_rms_grid(result["labels"], result["mean_rms"],
                                         "uncorrected-rms", uncorrected_rms)
    t0 = _eval_windows(valid_part, n_max, 1)
    nxt = valid_part[t0 + 1]
    base_var = metrics.sample_variance(nxt)
    corrected = {}
    for n in sorted(models):
        pred = models[n].predict_rows(_features(valid_part, t0, n))[:, 0]
        corrected[n] = metrics.sample_variance(nxt - pred) / base_var
    traditional = metrics.sample_variance(nxt - valid_part[t0]) / base_var
    dt = 1.0 / rate_hz if rate_hz else float(np.median(np.diff(series.times)))
    centred = NoiseTrace(dt=dt, samples=x - x.mean(), spectrum=None)
    raw_psd = estimate_periodogram(centred, 1)
    smooth_psd = estimate_periodogram(centred, smoothing_window)
    predictive_rows = [row for row in rms_map.rows if row != metrics.TRADITIONAL_ROW]
    best = min(float(rms_map.row(r).min()) for r in predictive_rows)
    return {"split_index": split, "models": models, "forward": result, "rms_map": rms_map,
            "uncorrected_rms": uncorrected_rms, "best_normalized_rms": best,
            "corrected_variance": corrected, "traditional_variance": traditional,
            "periodogram": raw_psd, "smoothed_periodogram": smooth_psd}
