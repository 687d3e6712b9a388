"""Experiment configuration: YAML loading, validation and resolution.

A configuration is validated completely before anything runs. Resolution
turns derived knobs (readout noise from a target correlation) into explicit
numbers; the resolved mapping is what gets echoed into every output.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .errors import ValidationError
from .measure import MeasurementModel, readout_sigma_for_correlation, window_variance
from .noise import PowerSpectrum
from .seeding import derive_seeds

SECTIONS = ("seed", "output_dir", "spectrum", "measurement", "predictor", "synth", "train",
            "fig1", "tdm", "lock", "sweep", "ingest")


def default_config_path() -> Path:
    return Path(str(resources.files("phasepredict") / "configs" / "default.yaml"))


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require(section: dict, key: str, where: str, kind=(int, float), positive=True):
    if key not in section:
        raise ValidationError(f"{where}.{key} is required", field=f"{where}.{key}")
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ValidationError(f"{where}.{key} has the wrong type", field=f"{where}.{key}")
    if positive and isinstance(value, (int, float)) and not value > 0:
        raise ValidationError(f"{where}.{key} must be > 0", field=f"{where}.{key}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict[str, Any]

    @classmethod
    def load(cls, path=None, seed: int | None = None) -> "ExperimentConfig":
        """Load ``path`` on top of the shipped defaults; ``seed`` overrides the master seed."""
        base = yaml.safe_load(default_config_path().read_text(encoding="utf-8"))
        if path is not None:
            try:
                user = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
            except OSError as exc:
                raise ValidationError(f"cannot read config {path}: {exc.strerror}",
                                      file=str(path)) from None
            except yaml.YAMLError as exc:
                raise ValidationError(f"config {path} is not valid YAML: {exc}",
                                      file=str(path)) from None
            if not isinstance(user, dict):
                raise ValidationError(f"config {path} must be a mapping", file=str(path))
            unknown = set(user) - set(SECTIONS)
            if unknown:
                raise ValidationError(f"unknown config keys: {sorted(unknown)}",
                                      keys=sorted(unknown))
            base = _merge(base, user)
        if seed is not None:
            base["seed"] = int(seed)
        cfg = cls(base)
        cfg.validate()
        return cfg.resolved()

    def validate(self) -> None:
        r = self.raw
        if not isinstance(r.get("seed"), int) or isinstance(r.get("seed"), bool) or r["seed"] < 0:
            raise ValidationError("seed must be a non-negative integer", field="seed")
        self.spectrum()
        m = r["measurement"]
        _require(m, "duration_s", "measurement")
        _require(m, "samples_per_window", "measurement", kind=int)
        if m.get("dead_time_s", 0) < 0:
            raise ValidationError("measurement.dead_time_s must be >= 0")
        ro = m.get("readout", {})
        if ro.get("mode") not in ("gaussian", "ensemble"):
            raise ValidationError("measurement.readout.mode must be gaussian or ensemble")
        if ro["mode"] == "ensemble":
            _require(ro, "ensemble_size", "measurement.readout", kind=int)
        elif ro.get("sigma_rad") is None:
            t = ro.get("target_correlation")
            if not isinstance(t, (int, float)) or not 0 < t <= 1:
                raise ValidationError("measurement.readout needs sigma_rad or a "
                                      "target_correlation in (0, 1]")
        for key in ("n_values",):
            vals = r["fig1"].get(key, [])
            if not vals or any(not isinstance(v, int) or v < 1 for v in vals):
                raise ValidationError(f"fig1.{key} must be a list of integers >= 1")
        for sec, keys in {"fig1": ("horizon", "train_traces", "validate_traces",
                                   "measurements_per_trace"),
                          "tdm": ("n_probe", "k_stab", "periods", "train_traces",
                                  "measurements_per_trace"),
                          "lock": ("n", "cycles", "horizon", "realisations", "train_traces",
                                   "train_cycles"),
                          "train": ("n", "horizon", "traces", "measurements_per_trace"),
                          "synth": ("traces", "length_samples")}.items():
            for key in keys:
                _require(r[sec], key, sec, kind=int)
        _require(r["lock"], "sampling_ratio", "lock")
        ratios = r["sweep"].get("sampling_ratios", [])
        if not ratios or any(not isinstance(x, (int, float)) or x <= 1 for x in ratios):
            raise ValidationError("sweep.sampling_ratios must be numbers > 1")
        frac = r["ingest"].get("train_fraction")
        if not isinstance(frac, (int, float)) or not 0 < frac < 1:
            raise ValidationError("ingest.train_fraction must lie in (0, 1)")
        w = r["ingest"].get("smoothing_window", 1)
        if not isinstance(w, int) or w < 1 or w % 2 == 0:
            raise ValidationError("ingest.smoothing_window must be an odd integer >= 1")
        sur = r["ingest"]["surrogate"]
        PowerSpectrum.from_descriptor(sur["spectrum"])
        _require(sur, "rate_hz", "ingest.surrogate")
        _require(sur, "length", "ingest.surrogate", kind=int)
        _require(sur, "realisations", "ingest.surrogate", kind=int)
        ridge = r["predictor"].get("ridge")
        if ridge is not None and (not isinstance(ridge, (int, float)) or ridge < 0):
            raise ValidationError("predictor.ridge must be null or >= 0")
        self.measurement_model()

    def resolved(self) -> "ExperimentConfig":
        """Copy with the readout noise made explicit."""
        raw = copy.deepcopy(self.raw)
        ro = raw["measurement"]["readout"]
        if ro["mode"] == "gaussian" and ro.get("sigma_rad") is None:
            m = raw["measurement"]
            dt = m["duration_s"] / m["samples_per_window"]
            length = 1 << 20
            rms = math.sqrt(window_variance(self.spectrum(), dt, length, m["duration_s"]))
            ro["sigma_rad"] = readout_sigma_for_correlation(rms, ro["target_correlation"])
        return ExperimentConfig(raw)

    # -- typed views -------------------------------------------------------
    def spectrum(self) -> PowerSpectrum:
        return PowerSpectrum.from_descriptor(self.raw["spectrum"])

    @property
    def cutoff(self) -> float:
        return self.spectrum().highest_frequency()

    def measurement_model(self, dead_time: float | None = None) -> MeasurementModel:
        m = self.raw["measurement"]
        ro = m["readout"]
        kw = ({"ensemble_size": ro["ensemble_size"]} if ro["mode"] == "ensemble"
              else {"readout_sigma": ro.get("sigma_rad") or 0.0})
        return MeasurementModel(duration=m["duration_s"],
                                dead_time=m.get("dead_time_s", 0.0) if dead_time is None
                                else dead_time, **kw)

    @property
    def samples_per_window(self) -> int:
        return self.raw["measurement"]["samples_per_window"]

    @property
    def ridge(self):
        return self.raw["predictor"].get("ridge")

    def seeds(self, role: str, count: int) -> list[int]:
        return derive_seeds(self.raw["seed"], role, count)

    def section(self, name: str) -> dict:
        return self.raw[name]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)
