"""Command-line harness: one subcommand per experiment dataset.

Every command resolves and validates the configuration first, writes all of
its artifacts into a single run directory and finishes with a manifest of
checksums. Failures exit nonzero with a JSON error document on stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .config import ExperimentConfig
from .errors import PhasePredictError, ValidationError
from .experiments import (Fig1Setup, ingest_analysis, lock_comparison, rms_map_from, run_fig1,
                          tdm_ensemble, train_predictors)
from .measure import MeasurementSeries, format_series_csv, read_series_csv
from .noise import PowerSpectrum, band_variance, format_trace_csv, synthesize_noise
from .output import RunDirectory
from .predictor import stack_training_matrices
from .protocols import (POLICIES, PREDICTIVE, TRADITIONAL, LockConfig, TdmConfig,
                        free_running_series, lock_summary, sampling_config, sweep_sampling)

COMMANDS = ("synth", "train", "fig1", "tdm", "lock", "sweep", "ingest", "report")

EXIT_VALIDATION = 2
EXIT_RUNTIME = 1
EXIT_IO = 3


# -- builders shared with the test-suite ------------------------------------

def fig1_setup(cfg: ExperimentConfig) -> Fig1Setup:
    f = cfg.section("fig1")
    return Fig1Setup(spectrum=cfg.spectrum(), model=cfg.measurement_model(),
                     ns=tuple(f["n_values"]), horizon=f["horizon"],
                     train_seeds=tuple(cfg.seeds("fig1/train", f["train_traces"])),
                     validate_seeds=tuple(cfg.seeds("fig1/validate", f["validate_traces"])),
                     measurements_per_trace=f["measurements_per_trace"],
                     samples_per_window=cfg.samples_per_window, ridge=cfg.ridge,
                     n_boot=f["bootstrap_resamples"])


def tdm_setup(cfg: ExperimentConfig):
    """TDM configuration plus the predictor trained for it on separate realisations."""
    t = cfg.section("tdm")
    model = cfg.measurement_model()
    series = [free_running_series(cfg.spectrum(), model, t["measurements_per_trace"], s,
                                  cfg.samples_per_window)[1]
              for s in cfg.seeds("tdm/train", t["train_traces"])]
    meta = {"spectrum": cfg.spectrum().descriptor(), "measurement": model.descriptor()}
    predictor = train_predictors(series, [t["n_probe"]], t["k_stab"], cfg.ridge,
                                 meta)[t["n_probe"]]
    config = TdmConfig(n_probe=t["n_probe"], k_stab=t["k_stab"], cycles=t["periods"],
                       model=model, spectrum=cfg.spectrum(), seed=cfg.seeds("tdm/run", 1)[0],
                       samples_per_window=cfg.samples_per_window,
                       diagnostic_step=t.get("diagnostic_step"))
    return config, predictor


def lock_template(cfg: ExperimentConfig) -> LockConfig:
    """Lock template at the measurement model of the config (``sampling_ratio`` not applied)."""
    lk = cfg.section("lock")
    return LockConfig(n=lk["n"], cycles=lk["cycles"], model=cfg.measurement_model(),
                      spectrum=cfg.spectrum(), seed=0, horizon=lk["horizon"],
                      samples_per_window=cfg.samples_per_window)


def ingest_surrogate(cfg: ExperimentConfig, index: int = 0) -> tuple[MeasurementSeries, float]:
    """Synthetic stand-in for a recorded free-running series, and its sampling rate."""
    s = cfg.section("ingest")["surrogate"]
    spectrum = PowerSpectrum.from_descriptor(s["spectrum"])
    rate = float(s["rate_hz"])
    trace = synthesize_noise(spectrum, 1.0 / rate, int(s["length"]),
                             cfg.seeds("ingest/surrogate", index + 1)[index])
    return MeasurementSeries(times=trace.times, values=trace.samples), rate


def surrogate_ensemble(cfg: ExperimentConfig) -> list[dict]:
    """Headline numbers of the ingest analysis on every surrogate realisation."""
    ing = cfg.section("ingest")
    rows = []
    for i in range(int(ing["surrogate"].get("realisations", 1))):
        series, rate = ingest_surrogate(cfg, i)
        res = ingest_analysis(series, ing["n_values"], ing["horizon"], ing["train_fraction"],
                              cfg.ridge, ing["smoothing_window"], rate_hz=rate)
        rows.append({"realisation": i, "best_improvement": 1.0 - res["best_normalized_rms"],
                     "traditional_normalized_variance": res["traditional_variance"]})
    return rows


# -- commands ---------------------------------------------------------------

def cmd_synth(cfg: ExperimentConfig, run: RunDirectory, args) -> None:
    s = cfg.section("synth")
    spectrum = cfg.spectrum()
    dt, length = s["dt_s"], s["length_samples"]
    rows = []
    for i, seed in enumerate(cfg.seeds("synth", s["traces"])):
        trace = synthesize_noise(spectrum, dt, length, seed)
        name = f"trace_{i:03d}"
        if run.fmt == "json":
            run.write_json(f"{name}.json", {"seed": seed, "dt_s": dt,
                                            "spectrum": spectrum.descriptor(),
                                            "time_s": trace.times, "phase_rad": trace.samples})
        else:
            run.write_csv_text(f"{name}.csv", format_trace_csv(trace))
        rows.append([i, seed, float(np.var(trace.samples))])
    run.write_table("synth_summary", ["trace", "seed", "variance_rad2"], rows)
    run.write_json("synth.json", {"band_variance_rad2": band_variance(spectrum, dt, length),
                                  "traces": len(rows)})


def _load_series(paths, rate_hz=None):
    out = []
    for p in paths:
        try:
            out.append(read_series_csv(p, rate_hz))
        except OSError as exc:
            raise ValidationError(f"cannot read {p}: {exc.strerror}", file=str(p)) from None
    return out


def cmd_train(cfg: ExperimentConfig, run: RunDirectory, args) -> None:
    t = cfg.section("train")
    n, K = t["n"], t["horizon"]
    if args.inputs:
        series = _load_series(args.inputs, args.rate_hz)
        source = [str(p) for p in args.inputs]
    else:
        model = cfg.measurement_model()
        series = [free_running_series(cfg.spectrum(), model, t["measurements_per_trace"], s,
                                      cfg.samples_per_window)[1]
                  for s in cfg.seeds("train", t["traces"])]
        source = "simulated"
    try:
        predictor = train_predictors(series, [n], K, cfg.ridge, {"source": source})[n]
    except PhasePredictError as exc:
        exc.context.setdefault("inputs", source)
        raise
    x, y = stack_training_matrices(series, n, K)
    run.write_text("model.json", predictor.to_json())
    ols = predictor.training_meta["train_rms"]
    trad = predictor.training_meta["traditional_train_rms"]
    run.write_table("training_report",
                    ["k", "train_rms_rad", "traditional_rms_rad", "dominates_traditional"],
                    [[k + 1, a, b, a <= b] for k, (a, b) in enumerate(zip(ols, trad))])
    run.write_json("training.json", {"rows": int(x.shape[0]), "n": n, "horizon": K,
                                     "ridge": predictor.ridge, "solver": predictor.solver,
                                     "dominates_traditional": bool(np.all(np.array(ols)
                                                                          <= np.array(trad)))})


def _rms_map_json(m: metrics.RmsMap) -> dict:
    return {"mode": m.mode, "normalization_rad": m.normalization, "rows": list(m.rows),
            "horizons": m.horizons, "values": m.values}


def _write_rms_map(run: RunDirectory, stem: str, m: metrics.RmsMap) -> None:
    if run.fmt == "json":
        run.write_json(f"{stem}.json", _rms_map_json(m))
    else:
        run.write_csv_text(f"{stem}.csv", m.to_csv())


def cmd_fig1(cfg: ExperimentConfig, run: RunDirectory, args) -> None:
    setup = fig1_setup(cfg)
    res = run_fig1(setup)
    ov = res["overlay"]
    labels = [k for k in ov if k.startswith("n=")]
    header = ["time_s", "k", "applied_rad", "measured_rad", "traditional_rad"] + \
        [f"predicted_{k.replace('=', '')}_rad" for k in labels]
    rows = []
    for i, k in enumerate(ov["k"]):
        rows.append([float(res["overlay_time_s"][i]), int(k), float(ov["applied"][i]),
                     float(ov["measured"][i]), float(ov["traditional"][i])]
                    + [float(ov[lab][i]) for lab in labels])
    run.write_table("overlay", header, rows)
    sc = res["scatter"]
    run.write_table("scatter", ["measured_rad", "applied_rad"],
                    zip(sc["measured"].tolist(), sc["applied"].tolist()))
    ell = metrics.ellipse_summary(sc["measured"], sc["applied"])
    run.write_json("correlation.json", {
        "pearson_r": res["pearson_r_measured_vs_truth"],
        "ellipse_first_validation_trace": ell.to_dict(),
        "validation_traces": len(setup.validate_seeds)})
    _write_rms_map(run, "rms_map", rms_map_from(res, cfg.section("fig1")["normalization"]))
    _write_rms_map(run, "rms_map_raw", rms_map_from(res, "none"))
    se = metrics.normalize_rms_grid(res["labels"], res["bootstrap_se"], "none")
    _write_rms_map(run, "rms_bootstrap_se", se)
    K = setup.horizon
    run.write_table("horizon_summary",
                    ["k", "mean_predictor_rms_rad", "truth_rms_rad"]
                    + [f"rms_{lab}_rad" for lab in res["labels"]],
                    [[k + 1, float(res["mean_predictor_rms"][k]), res["truth_rms"]]
                     + [float(v) for v in res["mean_rms"][:, k]] for k in range(K)])
    for n, model in res["models"].items():
        run.write_text(f"models/model_n{n}.json", model.to_json())


def cmd_tdm(cfg: ExperimentConfig, run: RunDirectory, args) -> None:
    config, predictor = tdm_setup(cfg)
    out = tdm_ensemble(config, predictor, n_boot=cfg.section("tdm")["bootstrap_resamples"])
    run.write_text("model.json", predictor.to_json())
    for policy, rec in out["records"].items():
        if run.fmt == "json":
            run.write_json(f"record_{policy}.json", rec.to_dict())
        else:
            run.write_csv_text(f"record_{policy}.csv", rec.to_csv())
    header = ["k"] + [f"residual_rms_{p}_rad" for p in POLICIES] + \
        [f"integrated_error_{p}_rad" for p in POLICIES] + \
        [f"integrated_reduction_{p}" for p in (TRADITIONAL, PREDICTIVE)] + \
        ["mse_difference_lower95_rad2"]
    rows = []
    for i, k in enumerate(out["k"]):
        rows.append([int(k)] + [float(out["residual_rms"][p][i]) for p in POLICIES]
                    + [float(out["integrated_error"][p][i]) for p in POLICIES]
                    + [float(out["integrated_reduction"][p][i]) for p in (TRADITIONAL, PREDICTIVE)]
                    + [float(out["mse_difference_lower95"][i])])
    run.write_table("tdm_steps", header, rows)
    diag = out["diagnostics"]
    run.write_table("diagnostics", ["period"] + [f"measured_{p}_rad" for p in POLICIES],
                    [[i] + [float(diag[p][i]) for p in POLICIES]
                     for i in range(len(diag[PREDICTIVE]))])
    run.write_table("per_period", ["period", "integrated_reduction_predictive"],
                    enumerate(out["per_period_reduction"].tolist()))
    run.write_json("summary.json", {
        "noise_rms_rad": out["noise_rms"],
        "integrated_reduction_at_last_step": {p: float(out["integrated_reduction"][p][-1])
                                              for p in (TRADITIONAL, PREDICTIVE)},
        "per_period_reduction_median": float(np.median(out["per_period_reduction"])),
        "bookkeeping_error_rad": out["bookkeeping_error"],
        "seed": config.seed})


def cmd_lock(cfg: ExperimentConfig, run: RunDirectory, args) -> None:
    lk = cfg.section("lock")
    template = sampling_config(lock_template(cfg), lk["sampling_ratio"], cfg.cutoff)
    seeds = cfg.seeds("lock/run", lk["realisations"])
    out = lock_comparison(template, seeds, cfg.seeds("lock/train", lk["train_traces"]),
                          lk["train_cycles"], cfg.ridge)
    run.write_text("model.json", out["model"].to_json())
    for policy, recs in out["runs"].items():
        for i, rec in enumerate(recs):
            if run.fmt == "json":
                run.write_json(f"records/{policy}_{i:02d}.json", rec.to_dict())
            else:
                run.write_csv_text(f"records/{policy}_{i:02d}.csv", rec.to_csv())
    curves = out["normalized_curves"]
    header = ["N"] + [f"mean_{p}" for p in POLICIES] + \
        [f"{p}_r{i:02d}" for p in POLICIES for i in range(len(seeds))]
    rows = []
    for j, N in enumerate(out["N"]):
        rows.append([int(N)] + [float(curves[p][:, j].mean()) for p in POLICIES]
                    + [float(curves[p][i, j]) for p in POLICIES for i in range(len(seeds))])
    run.write_table("variance_curves", header, rows)
    run.write_json("ellipses.json", {p: e.to_dict() for p, e in out["ellipses"].items()})
    var = out["sample_variance"]
    free = out["free_running_variance"]
    run.write_json("summary.json", {
        "sampling_frequency_rad_per_s": template.model.sampling_frequency,
        "dead_time_s": template.model.dead_time,
        "seeds": seeds,
        "sample_variance_rad2": {p: v.tolist() for p, v in var.items()},
        "normalized_variance": {p: (v / free).tolist() for p, v in var.items()},
        "ensemble_normalized_variance": {p: float(v.mean() / free.mean()) for p, v in var.items()},
        "traditional_to_predictive_ratio": float(var[TRADITIONAL].mean()
                                                 / var[PREDICTIVE].mean()),
        "summaries": {p: [lock_summary(r, template.cycles) for r in recs]
                      for p, recs in out["runs"].items()},
        "bookkeeping_error_rad": out["bookkeeping_error"]})


SWEEP_COLUMNS = ("sampling_ratio", "policy", "normalized_variance_mean",
                 "normalized_variance_sem", "normalized_variance_min", "normalized_variance_max",
                 "ensemble_normalized_variance", "pearson_r_mean", "diverged_runs")


def cmd_sweep(cfg: ExperimentConfig, run: RunDirectory, args) -> None:
    lk, sw = cfg.section("lock"), cfg.section("sweep")
    rows = sweep_sampling(lock_template(cfg), sw["sampling_ratios"],
                          cfg.seeds("sweep/run", sw["realisations"]),
                          cfg.seeds("lock/train", lk["train_traces"]), lk["train_cycles"],
                          cfg.ridge, lk["cycles"], cfg.cutoff, jobs=args.jobs)
    run.write_table("sweep", SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows])
    run.write_json("sweep_detail.json", {"rows": rows})


def cmd_ingest(cfg: ExperimentConfig, run: RunDirectory, args) -> None:
    ing = cfg.section("ingest")
    if args.surrogate:
        series, rate = ingest_surrogate(cfg)
        run.write_csv_text("series.csv", format_series_csv(series))
    else:
        if args.file is None or args.rate_hz is None:
            raise ValidationError("ingest needs FILE and --rate-hz, or --surrogate")
        series = _load_series([args.file], args.rate_hz)[0]
        rate = args.rate_hz
    res = ingest_analysis(series, ing["n_values"], ing["horizon"], ing["train_fraction"],
                          cfg.ridge, ing["smoothing_window"], rate_hz=rate)
    _write_rms_map(run, "rms_map", res["rms_map"])
    run.write_table("corrected_variance",
                    ["n", "normalized_corrected_variance", "traditional_normalized_variance"],
                    [[n, v, res["traditional_variance"]]
                     for n, v in sorted(res["corrected_variance"].items())])
    raw, smooth = res["periodogram"], res["smoothed_periodogram"]
    run.write_table("periodogram",
                    ["frequency_rad_per_s", "frequency_hz", "density_rad2_s",
                     "smoothed_density_rad2_s"],
                    [[float(w), float(w / (2 * math.pi)), float(a), float(b)]
                     for w, a, b in zip(raw.frequencies, raw.densities, smooth.densities)])
    run.write_json("summary.json", {
        "length": len(series), "rate_hz": rate, "split_index": res["split_index"],
        "uncorrected_rms_rad": res["uncorrected_rms"],
        "best_normalized_rms": res["best_normalized_rms"],
        "best_improvement": 1.0 - res["best_normalized_rms"],
        "traditional_normalized_variance": res["traditional_variance"],
        "source": "surrogate" if args.surrogate else str(args.file)})
    if args.surrogate:
        ens = surrogate_ensemble(cfg)
        cols = ("realisation", "best_improvement", "traditional_normalized_variance")
        run.write_table("surrogate_ensemble", cols, [[r[c] for c in cols] for r in ens])
        run.write_json("surrogate_summary.json", {
            "realisations": len(ens),
            "mean_best_improvement": float(np.mean([r["best_improvement"] for r in ens])),
            "mean_traditional_normalized_variance":
                float(np.mean([r["traditional_normalized_variance"] for r in ens]))})


def cmd_report(args) -> Path:
    from .plotting import render_run
    src = Path(args.run_dir)
    if not (src / "manifest.json").is_file():
        raise ValidationError(f"{src} is not a run directory (no manifest.json)", path=str(src))
    manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
    out = Path(args.out) if args.out else src / "figures"
    run = RunDirectory(out, manifest.get("config", {}), "report", "csv")
    for name in render_run(src, manifest["command"], out):
        run.register(name)
    rows = [[name] for name in run.files]
    run.write_table("figures", ["file"], rows)
    return run.finalize()


HANDLERS = {"synth": cmd_synth, "train": cmd_train, "fig1": cmd_fig1, "tdm": cmd_tdm,
            "lock": cmd_lock, "sweep": cmd_sweep, "ingest": cmd_ingest}


# -- argument parsing and error reporting -----------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML file merged over the defaults")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="run directory (default: <output_dir>/<cmd>)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="encoding of tabular outputs")
    p = _Parser(prog="phasepredict", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="synthesize noise traces")
    t = sub.add_parser("train", parents=[common], help="train a predictor")
    t.add_argument("inputs", nargs="*", type=Path, help="measurement series CSV files")
    t.add_argument("--rate-hz", type=float, help="sampling rate for index-keyed inputs")
    for name, text in (("fig1", "forward prediction and RMS map"),
                       ("tdm", "time-division-multiplexed stabilisation"),
                       ("lock", "cyclic lock at one sampling rate"),
                       ("sweep", "lock variance versus sampling rate")):
        sub.add_parser(name, parents=[common], help=text)
    g = sub.add_parser("ingest", parents=[common], help="offline analysis of a recorded series")
    g.add_argument("file", nargs="?", type=Path)
    g.add_argument("--rate-hz", type=float, help="declared sampling rate in Hz")
    g.add_argument("--surrogate", action="store_true",
                   help="use the synthetic 1/f^2 + white surrogate from the config")
    r = sub.add_parser("report", parents=[common], help="render figures for a run directory")
    r.add_argument("run_dir", type=Path)
    return p


def _emit_error(kind: str, message: str, context: dict | None = None) -> None:
    doc = {"error": {"type": kind, "message": message, "context": context or {}}}
    sys.stderr.write(json.dumps(doc, default=str, sort_keys=True) + "\n")


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        raise ValidationError("--jobs must be >= 1", jobs=args.jobs)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ValidationError("--seed must be an unsigned 64-bit integer", seed=args.seed)
    if args.command == "report":
        path = cmd_report(args)
        print(path)
        return 0
    cfg = ExperimentConfig.load(args.config, seed=args.seed)
    out = args.out or Path(cfg.section("output_dir")) / args.command
    run = RunDirectory(out, cfg.to_dict(), args.command, args.format)
    HANDLERS[args.command](cfg, run, args)
    print(run.finalize())
    return 0


def main(argv=None) -> int:
    try:
        return run_command(argv)
    except ValidationError as exc:
        _emit_error(type(exc).__name__, str(exc), exc.context)
        return EXIT_VALIDATION
    except PhasePredictError as exc:
        _emit_error(type(exc).__name__, str(exc), exc.context)
        return EXIT_RUNTIME
    except OSError as exc:
        _emit_error("IOError", str(exc), {"path": getattr(exc, "filename", None)})
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
