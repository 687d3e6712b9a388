"""Prediction and pre-emptive compensation of stochastic qubit dephasing, in simulation."""

__version__ = "0.1.0"

from .errors import (PhasePredictError, PhaseWrapError, RangeError,  # noqa: E402
                     RejectedConfigurationError, SingularityError, UndefinedCorrelationError,
                     ValidationError)
from .measure import (MeasurementModel, MeasurementSeries, accumulate_phase,  # noqa: E402
                      measure, run_measurement_sequence)
from .metrics import (EllipseSummary, RmsMap, ellipse_summary, pearson_r,  # noqa: E402
                      rms_error_map, sample_variance)
from .noise import (NoiseTrace, PowerSpectrum, autocovariance, estimate_periodogram,  # noqa: E402
                    synthesize_noise)
from .predictor import (PredictionSet, PredictorModel, build_training_matrix,  # noqa: E402
                        mean_predict, predict, traditional_predict, train)
from .protocols import (LockConfig, ProtocolRecord, TdmConfig, run_lock, run_tdm,  # noqa: E402
                        sweep_sampling)

__all__ = [
    "PhasePredictError", "PhaseWrapError", "RangeError", "RejectedConfigurationError",
    "SingularityError", "UndefinedCorrelationError", "ValidationError",
    "MeasurementModel", "MeasurementSeries", "accumulate_phase", "measure",
    "run_measurement_sequence",
    "EllipseSummary", "RmsMap", "ellipse_summary", "pearson_r", "rms_error_map",
    "sample_variance",
    "NoiseTrace", "PowerSpectrum", "autocovariance", "estimate_periodogram", "synthesize_noise",
    "PredictionSet", "PredictorModel", "build_training_matrix", "mean_predict", "predict",
    "traditional_predict", "train",
    "LockConfig", "ProtocolRecord", "TdmConfig", "run_lock", "run_tdm", "sweep_sampling",
]
