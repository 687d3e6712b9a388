"""Prediction-quality and stability diagnostics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import UndefinedCorrelationError, ValidationError

NORMALIZATIONS = ("field-min", "noise-rms", "uncorrected-rms", "none")
TRADITIONAL_ROW = "1*"


def pearson_r(x, y) -> float:
    """Pearson product-moment correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("pearson_r needs two equal-length 1-D series of length >= 2",
                              x=x.shape, y=y.shape)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a zero-variance series")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def sample_variance(series, N: int | None = None) -> float:
    """Unbiased (1/(N-1)) variance of the first ``N`` values."""
    x = np.asarray(series, dtype=float)
    N = x.size if N is None else int(N)
    if N < 2:
        raise ValidationError("sample variance needs N >= 2", N=N)
    if N > x.size:
        raise ValidationError("N exceeds series length", N=N, length=int(x.size))
    return float(np.var(x[:N], ddof=1))


def sample_variance_curve(series, start: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Sample variance of the first ``N`` values for every ``N`` from ``start`` to the end.

    Uses running sums of deviations from the overall mean, which keeps the
    cancellation error of the one-pass formula small.
    """
    x = np.asarray(series, dtype=float)
    if x.size < max(start, 2):
        raise ValidationError("series too short for a variance curve", length=int(x.size))
    d = x - x.mean()
    s1 = np.cumsum(d)
    s2 = np.cumsum(d * d)
    ns = np.arange(1, x.size + 1)
    var = (s2 - s1 * s1 / ns)[1:] / (ns[1:] - 1)
    N = ns[1:]
    keep = N >= start
    return N[keep], np.maximum(var[keep], 0.0)


def allan_variance(series, m: int = 1) -> float:
    """Non-overlapping two-sample variance of ``m``-averages; reported as an extra only."""
    x = np.asarray(series, dtype=float)
    blocks = x.size // m
    if blocks < 2:
        raise ValidationError("series too short for Allan variance at this averaging factor",
                              m=m, length=int(x.size))
    y = x[: blocks * m].reshape(blocks, m).mean(axis=1)
    return float(0.5 * np.mean(np.diff(y) ** 2))


@dataclass(frozen=True)
class EllipseSummary:
    r: float
    covariance: np.ndarray = field(repr=False)
    major_axis: np.ndarray
    minor_axis: np.ndarray
    major_length: float
    minor_length: float
    degenerate: bool = False

    @property
    def tilt(self) -> float:
        """Angle of the major axis from the x axis, in (-pi/2, pi/2]."""
        return float(np.arctan2(self.major_axis[1], self.major_axis[0]))

    def to_dict(self) -> dict:
        return {
            "pearson_r": self.r,
            "covariance_rad2": self.covariance.tolist(),
            "major_axis": self.major_axis.tolist(),
            "minor_axis": self.minor_axis.tolist(),
            "major_length_rad": self.major_length,
            "minor_length_rad": self.minor_length,
            "tilt_rad": self.tilt,
            "degenerate": self.degenerate,
        }


def _canonical_direction(v):
    # major axis pointing into the right half-plane (upper half on the y axis)
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return v


def ellipse_summary(x, y, rank_tol: float = 1e-12) -> EllipseSummary:
    """Covariance ellipse of a scatter: eigen-axes with one-sigma lengths.

    Collinear data yield a flagged rank-1 summary whose minor length is 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValidationError("ellipse needs two equal-length series of length >= 3")
    cov = np.cov(np.vstack([x, y]), ddof=1)
    evals, evecs = np.linalg.eigh(cov)
    major = _canonical_direction(evecs[:, 1])
    minor = np.array([-major[1], major[0]])
    degenerate = bool(evals[0] <= rank_tol * max(evals[1], np.finfo(float).tiny))
    minor_len = 0.0 if degenerate else float(np.sqrt(max(evals[0], 0.0)))
    if cov[0, 0] > 0 and cov[1, 1] > 0:
        r = float(np.clip(cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1]), -1, 1))
    else:
        r = float("nan")
    return EllipseSummary(r=r, covariance=cov, major_axis=major, minor_axis=minor,
                          major_length=float(np.sqrt(max(evals[1], 0.0))),
                          minor_length=minor_len, degenerate=degenerate)


@dataclass(frozen=True)
class RmsMap:
    """RMS prediction error over (feature count, horizon).

    ``rows`` labels each row: ``"1*"`` for traditional feedback, otherwise the
    feature count ``n`` as a string. ``values`` are already normalised by
    ``normalization`` (the divisor actually used).
    """

    rows: tuple[str, ...]
    horizons: np.ndarray
    values: np.ndarray
    mode: str
    normalization: float
    raw: np.ndarray = field(repr=False)

    def row(self, label) -> np.ndarray:
        return self.values[self.rows.index(str(label))]

    def raw_row(self, label) -> np.ndarray:
        return self.raw[self.rows.index(str(label))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["normalization_mode", self.mode])
        w.writerow(["normalization_rad", repr(self.normalization)])
        w.writerow(["n\\k"] + [str(int(k)) for k in self.horizons])
        for label, vals in zip(self.rows, self.values):
            w.writerow([label] + [repr(float(v)) for v in vals])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RmsMap":
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        mode = rows[0][1]
        norm = float(rows[1][1])
        horizons = np.array([int(k) for k in rows[2][1:]])
        labels = tuple(r[0] for r in rows[3:])
        values = np.array([[float(v) for v in r[1:]] for r in rows[3:]])
        return cls(rows=labels, horizons=horizons, values=values, mode=mode,
                   normalization=norm, raw=values * norm)


def normalize_rms_grid(rows: Sequence, raw, mode: str, reference_rms: float | None = None,
                       horizons=None) -> RmsMap:
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] != len(rows):
        raise ValidationError("RMS grid must have one row per label")
    if raw.size == 0 or not np.all(np.isfinite(raw)):
        raise ValidationError("RMS grid has empty or non-finite cells")
    if mode not in NORMALIZATIONS:
        raise ValidationError(f"normalization must be one of {NORMALIZATIONS}", mode=mode)
    if mode == "field-min":
        norm = float(raw.min())
    elif mode == "none":
        norm = 1.0
    else:
        if reference_rms is None:
            raise ValidationError(f"normalization {mode!r} needs a reference RMS")
        norm = float(reference_rms)
    values = raw / norm if norm > 0 else raw.copy()
    if mode == "field-min" and norm > 0:
        values[raw == norm] = 1.0
    ks = np.arange(1, raw.shape[1] + 1) if horizons is None else np.asarray(horizons)
    return RmsMap(rows=tuple(str(r) for r in rows), horizons=ks, values=values, mode=mode,
                  normalization=norm, raw=raw)


def rms_error_map(predictions: Mapping, truths, normalization: str = "field-min",
                  traditional=None, reference_rms: float | None = None) -> RmsMap:
    """RMS of ``prediction - truth`` per (n, k) cell over all evaluation windows.

    Parameters
    ----------
    predictions : mapping from n to a ``(windows, K)`` prediction array
    truths : ``(windows, K)`` array of what actually happened at each horizon
    normalization : one of ``field-min``, ``noise-rms``, ``uncorrected-rms``, ``none``
    traditional : optional ``(windows, K)`` array for the ``1*`` row
    reference_rms : divisor for the RMS-based modes; defaults to the RMS of
        ``truths`` about zero
    """
    truths = np.asarray(truths, dtype=float)
    labels, grid = [], []
    items = list(predictions.items())
    if traditional is not None:
        items.insert(0, (TRADITIONAL_ROW, traditional))
    if not items:
        raise ValidationError("no prediction rows supplied")
    for label, pred in items:
        pred = np.asarray(pred, dtype=float)
        if pred.shape != truths.shape or pred.shape[0] == 0:
            raise ValidationError(f"row {label}: predictions {pred.shape} do not match "
                                  f"truths {truths.shape}")
        labels.append(label)
        grid.append(np.sqrt(np.mean((pred - truths) ** 2, axis=0)))
    if reference_rms is None and normalization in ("noise-rms", "uncorrected-rms"):
        reference_rms = float(np.sqrt(np.mean(truths ** 2)))
    return normalize_rms_grid(labels, np.array(grid), normalization, reference_rms)


def bootstrap_means(samples, n_boot: int = 2000, seed: int = 0) -> np.ndarray:
    """Bootstrap replicates of the mean along axis 0 (resampling rows)."""
    x = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.shape[0], size=(n_boot, x.shape[0]))
    return x[idx].mean(axis=1)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
