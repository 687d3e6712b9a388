"""Per-horizon linear prediction of future phase from recent measurements.

For every horizon ``k`` the prediction is the affine map

    phi_P(t_k) = w0[k] + sum_i w[i, k] * phi_M[i]

over the ``n`` most recent measurements, oldest first. Each horizon is a
separate ridge regression sharing one design matrix; intercepts are never
penalised.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.linalg
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SingularityError, ValidationError

FORMAT_VERSION = 1
CONDITION_LIMIT = 1e12
DEFAULT_RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class PredictionSet:
    base_index: int
    values: np.ndarray

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class PredictorModel:
    intercepts: np.ndarray
    weights: np.ndarray  # shape (n, K); row i is the i-th oldest feature
    ridge: float = 0.0
    solver: str = "cholesky"
    training_meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.intercepts, dtype=float)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ValidationError("weights must be (n, K) with K intercepts",
                                  weights_shape=w.shape, intercepts_shape=b.shape)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("predictor coefficients must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercepts", b)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def horizon(self) -> int:
        return self.weights.shape[1]

    def predict_rows(self, features: np.ndarray) -> np.ndarray:
        """Vectorised :func:`predict` over a ``(rows, n)`` feature matrix."""
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n:
            raise ValidationError(f"expected features of shape (rows, {self.n})",
                                  shape=x.shape)
        return x @ self.weights + self.intercepts

    def to_json(self) -> str:
        doc = {
            "format_version": FORMAT_VERSION,
            "n": self.n,
            "K": self.horizon,
            "ridge": self.ridge,
            "solver": self.solver,
            "feature_order": "oldest-first",
            "weights_layout": "row-major over (k, i), i fastest: index = (k-1)*n + (i-1)",
            "intercepts": [float(v) for v in self.intercepts],
            "weights": [float(v) for v in self.weights.T.ravel()],
            "training_meta": self.training_meta,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PredictorModel":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValidationError("unsupported predictor format version",
                                  format_version=doc.get("format_version"))
        if doc.get("feature_order", "oldest-first") != "oldest-first":
            raise ValidationError("only oldest-first feature order is supported")
        n, k = int(doc["n"]), int(doc["K"])
        flat = np.asarray(doc["weights"], dtype=float)
        if flat.size != n * k:
            raise ValidationError("weight vector length does not match n*K", n=n, K=k)
        return cls(intercepts=np.asarray(doc["intercepts"], dtype=float),
                   weights=flat.reshape(k, n).T, ridge=float(doc["ridge"]),
                   solver=doc.get("solver", "cholesky"),
                   training_meta=doc.get("training_meta", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "PredictorModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _values(series) -> np.ndarray:
    return np.asarray(getattr(series, "values", series), dtype=float)


def build_training_matrix(series, n: int, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding-window design matrix over one measurement series.

    Row ``r`` has features ``x[r : r+n]`` and labels ``x[r+n : r+n+K]``; there
    are ``len(x) - n - K + 1`` rows.
    """
    x = _values(series)
    if n < 1 or K < 1:
        raise ValidationError("n and K must be >= 1", n=n, K=K)
    if x.size < n + K:
        raise ValidationError(f"series of length {x.size} is too short for n={n}, K={K}",
                              length=int(x.size), n=n, K=K)
    windows = sliding_window_view(x, n + K)
    return windows[:, :n].copy(), windows[:, n:].copy()


def stack_training_matrices(series_list: Iterable, n: int, K: int):
    """Concatenate design matrices of several series; windows never span two series."""
    parts = [build_training_matrix(s, n, K) for s in series_list]
    if not parts:
        raise ValidationError("no training series supplied")
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def default_ridge(features: np.ndarray) -> float:
    """``1e-6 * trace(G) / n`` for the centred Gram matrix ``G``."""
    xc = features - features.mean(axis=0)
    return DEFAULT_RIDGE_SCALE * float(np.einsum("ij,ij->", xc, xc)) / features.shape[1]


def train(features, labels, ridge: float | None = None,
          training_meta: dict[str, Any] | None = None) -> PredictorModel:
    """Fit intercepts and weights for every horizon by regularised least squares.

    Parameters
    ----------
    features : (rows, n) array
    labels : (rows, K) array
    ridge : float, optional
        Penalty on the weights (never on the intercepts). ``None`` selects
        :func:`default_ridge`; ``0`` is plain least squares.

    Raises
    ------
    SingularityError
        If ``ridge == 0`` and the centred features are rank deficient.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError("features and labels must be 2-D with matching row counts",
                              features=x.shape, labels=y.shape)
    rows, n = x.shape
    if rows < n + 1:
        raise ValidationError(f"need at least n + 1 = {n + 1} rows, got {rows}", rows=rows, n=n)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("training data must be finite")
    lam = default_ridge(x) if ridge is None else float(ridge)
    if not lam >= 0:
        raise ValidationError("ridge must be >= 0", ridge=ridge)

    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc
    rhs = xc.T @ yc
    a = gram + lam * np.eye(n)

    if lam == 0 and np.linalg.matrix_rank(xc) < n:
        raise SingularityError("feature matrix is rank deficient; use ridge > 0",
                               n=n, rank=int(np.linalg.matrix_rank(xc)))
    solver = "cholesky"
    try:
        cond = np.linalg.cond(a)
        if not cond <= CONDITION_LIMIT:
            raise np.linalg.LinAlgError
        w = scipy.linalg.cho_solve(scipy.linalg.cho_factor(a), rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        solver = "lstsq"
        aug_x = np.vstack([xc, np.sqrt(lam) * np.eye(n)]) if lam > 0 else xc
        aug_y = np.vstack([yc, np.zeros((n, y.shape[1]))]) if lam > 0 else yc
        w, *_ = scipy.linalg.lstsq(aug_x, aug_y)
    intercepts = y_mean - x_mean @ w
    meta = dict(training_meta or {})
    meta.setdefault("rows", rows)
    return PredictorModel(intercepts=intercepts, weights=w, ridge=lam, solver=solver,
                          training_meta=meta)


def predict(model: PredictorModel, recent: Sequence[float], base_index: int = 0) -> PredictionSet:
    """Predictions ``phi_P(t_1..t_K)`` from the ``n`` most recent measurements, oldest first."""
    x = np.asarray(recent, dtype=float)
    if x.shape != (model.n,):
        raise ValidationError(f"expected exactly {model.n} recent measurements, got {x.size}",
                              expected=model.n, got=int(x.size))
    if not np.all(np.isfinite(x)):
        raise ValidationError("recent measurements must be finite")
    return PredictionSet(base_index=base_index, values=model.intercepts + x @ model.weights)


def traditional_predict(recent: Sequence[float], K: int, base_index: int = 0) -> PredictionSet:
    """Every future estimate equals the last measured value."""
    x = np.atleast_1d(np.asarray(recent, dtype=float))
    if x.size < 1:
        raise ValidationError("traditional prediction needs at least one measurement")
    return PredictionSet(base_index=base_index, values=np.full(int(K), x[-1]))


def traditional_model(n: int, K: int) -> PredictorModel:
    """Predictor with weights ``(0, ..., 0, 1)`` and zero intercepts: traditional feedback."""
    w = np.zeros((n, K))
    w[-1, :] = 1.0
    return PredictorModel(intercepts=np.zeros(K), weights=w, ridge=0.0, solver="fixed",
                          training_meta={"baseline": "traditional"})


def mean_predict(labels, n: int = 1) -> PredictorModel:
    """Constant predictor at the per-horizon training-label mean."""
    y = np.asarray(labels, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    return PredictorModel(intercepts=y.mean(axis=0), weights=np.zeros((n, y.shape[1])),
                          ridge=float("inf"), solver="fixed",
                          training_meta={"baseline": "mean"})


def residual_rms(model: PredictorModel, features, labels) -> np.ndarray:
    """Per-horizon RMS of ``labels - prediction`` over the given rows."""
    err = np.asarray(labels, dtype=float) - model.predict_rows(features)
    return np.sqrt(np.mean(err ** 2, axis=0))


def traditional_residual_rms(features, labels) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    err = np.asarray(labels, dtype=float) - x[:, -1:]
    return np.sqrt(np.mean(err ** 2, axis=0))
