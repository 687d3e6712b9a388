"""Figures for a finished run directory, drawn from its own CSV/JSON outputs.

Rendering never recomputes anything: every figure is a view of files the
corresponding command already wrote, so a report can be regenerated from
the run directory alone.
"""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LogNorm  # noqa: E402
from matplotlib.patches import Ellipse  # noqa: E402

from .errors import ValidationError  # noqa: E402
from .metrics import RmsMap, ellipse_summary  # noqa: E402
from .output import read_table  # noqa: E402

_SAVE = {"dpi": 120, "metadata": {"Software": None}}
POLICY_STYLE = {"free-running": "0.5", "traditional": "tab:red", "predictive": "tab:blue"}


def _table(run_dir: Path, stem: str) -> dict[str, np.ndarray]:
    """Columns of ``stem.csv`` or ``stem.json`` as float arrays where possible."""
    for suffix in (".csv", ".json"):
        path = run_dir / f"{stem}{suffix}"
        if path.is_file():
            header, rows = read_table(path)
            cols = {}
            for j, name in enumerate(header):
                raw = [r[j] for r in rows]
                try:
                    cols[name] = np.array([np.nan if v in ("", None) else float(v) for v in raw])
                except (TypeError, ValueError):
                    cols[name] = np.array(raw, dtype=object)
            return cols
    raise ValidationError(f"{run_dir} has no {stem} table", stem=stem)


def _json(run_dir: Path, name: str) -> dict:
    return json.loads((run_dir / name).read_text(encoding="utf-8"))


def _rms_map(run_dir: Path, stem: str) -> RmsMap:
    csv_path = run_dir / f"{stem}.csv"
    if csv_path.is_file():
        return RmsMap.from_csv(csv_path.read_text(encoding="utf-8"))
    d = _json(run_dir, f"{stem}.json")
    values = np.array(d["values"], dtype=float)
    return RmsMap(rows=tuple(d["rows"]), horizons=np.array(d["horizons"]), values=values,
                  mode=d["mode"], normalization=d["normalization_rad"],
                  raw=values * d["normalization_rad"])


def _save(fig, out: Path, name: str) -> str:
    fig.tight_layout()
    fig.savefig(out / name, **_SAVE)
    plt.close(fig)
    return name


def plot_rms_map(m: RmsMap, title: str = ""):
    """Heat map of normalised RMS error on a logarithmic colour scale, 1* row at the bottom."""
    fig, ax = plt.subplots(figsize=(7, 3.2))
    vals = np.clip(m.values, np.finfo(float).tiny, None)
    mesh = ax.pcolormesh(np.append(m.horizons, m.horizons[-1] + 1) - 0.5,
                         np.arange(len(m.rows) + 1), vals, shading="flat",
                         norm=LogNorm(vmin=vals.min(), vmax=vals.max()), cmap="viridis")
    ax.set_yticks(np.arange(len(m.rows)) + 0.5, m.rows)
    ax.set_xlabel("prediction step k")
    ax.set_ylabel("features n")
    ax.set_title(title or f"normalised RMS error ({m.mode})")
    fig.colorbar(mesh, ax=ax)
    return fig


def _fig1(run_dir: Path, out: Path) -> list[str]:
    names = []
    ov = _table(run_dir, "overlay")
    fig, ax = plt.subplots(figsize=(7, 3.5))
    t = ov["time_s"] * 1e3
    ax.plot(t, ov["applied_rad"], color="k", lw=1, label="applied")
    ax.plot(t, ov["measured_rad"], "o", ms=2, color="0.4", label="measured")
    ax.plot(t, ov["traditional_rad"], color="tab:red", lw=1, label="traditional")
    for name, col in ov.items():
        if name.startswith("predicted_"):
            ax.plot(t, col, lw=1, label=name[len("predicted_"):-len("_rad")])
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("phase (rad)")
    ax.legend(fontsize=7, ncol=3)
    names.append(_save(fig, out, "overlay.png"))

    sc = _table(run_dir, "scatter")
    corr = _json(run_dir, "correlation.json")
    ell = ellipse_summary(sc["applied_rad"], sc["measured_rad"])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(sc["applied_rad"], sc["measured_rad"], ".", ms=1, alpha=0.4)
    centre = (float(np.mean(sc["applied_rad"])), float(np.mean(sc["measured_rad"])))
    ax.add_patch(Ellipse(centre, 4 * ell.major_length, 4 * ell.minor_length,
                         angle=np.degrees(ell.tilt), fill=False, color="tab:red"))
    ax.set_xlabel("applied phase (rad)")
    ax.set_ylabel("measured phase (rad)")
    ax.set_title(f"r = {corr['pearson_r']:.3f}")
    ax.set_aspect("equal", adjustable="datalim")
    names.append(_save(fig, out, "scatter.png"))

    names.append(_save(plot_rms_map(_rms_map(run_dir, "rms_map")), out, "rms_map.png"))
    return names


def _tdm(run_dir: Path, out: Path) -> list[str]:
    st = _table(run_dir, "tdm_steps")
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for p, colour in POLICY_STYLE.items():
        a1.plot(st["k"], st[f"residual_rms_{p}_rad"], color=colour, label=p)
        a2.plot(st["k"], st[f"integrated_error_{p}_rad"], color=colour, label=p)
    a1.set_xlabel("stabilisation step k")
    a1.set_ylabel("residual RMS (rad)")
    a2.set_xlabel("stabilisation step k")
    a2.set_ylabel("integrated |residual| (rad)")
    a1.legend(fontsize=7)
    names = [_save(fig, out, "tdm_residuals.png")]
    d = _table(run_dir, "diagnostics")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    data = [d[f"measured_{p}_rad"] for p in POLICY_STYLE]
    ax.boxplot(data)
    ax.set_xticks(np.arange(1, len(data) + 1), list(POLICY_STYLE))
    ax.set_ylabel("diagnostic measurement (rad)")
    names.append(_save(fig, out, "tdm_diagnostics.png"))
    return names


def _lock(run_dir: Path, out: Path) -> list[str]:
    vc = _table(run_dir, "variance_curves")
    fig, ax = plt.subplots(figsize=(6, 4))
    for p, colour in POLICY_STYLE.items():
        for name, col in vc.items():
            if name.startswith(f"{p}_r"):
                ax.plot(vc["N"], col, color=colour, lw=0.5, alpha=0.4)
        ax.plot(vc["N"], vc[f"mean_{p}"], color=colour, lw=2, label=p)
    ax.set_xscale("log")
    ax.set_xlabel("cycles N")
    ax.set_ylabel("normalised sample variance")
    ax.legend(fontsize=7)
    names = [_save(fig, out, "lock_variance.png")]
    ell = _json(run_dir, "ellipses.json")
    fig, ax = plt.subplots(figsize=(4, 4))
    for p in ("traditional", "predictive"):
        if p in ell:
            e = ell[p]
            ax.add_patch(Ellipse((0, 0), 2 * e["major_length_rad"], 2 * e["minor_length_rad"],
                                 angle=np.degrees(e["tilt_rad"]), fill=False,
                                 color=POLICY_STYLE[p], label=f"{p} r={e['pearson_r']:.2f}"))
    lim = max(e["major_length_rad"] for p, e in ell.items() if isinstance(e, dict)
              and "major_length_rad" in e) * 1.2
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_xlabel("correction (rad)")
    ax.set_ylabel("applied noise (rad)")
    ax.legend(fontsize=7)
    names.append(_save(fig, out, "lock_ellipses.png"))
    return names


def _sweep(run_dir: Path, out: Path) -> list[str]:
    sw = _table(run_dir, "sweep")
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for p, colour in POLICY_STYLE.items():
        sel = sw["policy"] == p
        a1.errorbar(sw["sampling_ratio"][sel], sw["normalized_variance_mean"][sel],
                    yerr=sw["normalized_variance_sem"][sel], color=colour, marker="o", label=p)
        if p != "free-running":
            a2.plot(sw["sampling_ratio"][sel], sw["pearson_r_mean"][sel], "o-", color=colour,
                    label=p)
    for ax in (a1, a2):
        ax.set_xscale("log")
        ax.set_xlabel("sampling ratio w_s / w_c")
    a1.set_ylabel("normalised sample variance")
    a2.set_ylabel("Pearson r (correction, noise)")
    a2.axhline(0, color="0.7", lw=0.5)
    a1.legend(fontsize=7)
    return [_save(fig, out, "sweep.png")]


def _ingest(run_dir: Path, out: Path) -> list[str]:
    names = [_save(plot_rms_map(_rms_map(run_dir, "rms_map")), out, "ingest_rms_map.png")]
    cv = _table(run_dir, "corrected_variance")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(cv["n"], cv["normalized_corrected_variance"], "o-", label="predictive")
    ax.axhline(cv["traditional_normalized_variance"][0], color="tab:red", label="traditional")
    ax.axhline(1.0, color="0.5", ls="--", label="uncorrected")
    ax.set_xscale("log")
    ax.set_xlabel("features n")
    ax.set_ylabel("normalised sample variance")
    ax.legend(fontsize=7)
    names.append(_save(fig, out, "ingest_variance.png"))
    names += _periodogram(run_dir, out, "periodogram")
    return names


def _periodogram(run_dir: Path, out: Path, stem: str) -> list[str]:
    pg = _table(run_dir, stem)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(pg["frequency_hz"], pg["density_rad2_s"], color="0.7", lw=0.5, label="raw")
    ax.loglog(pg["frequency_hz"], pg["smoothed_density_rad2_s"], color="k", label="smoothed")
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("PSD (rad^2 s)")
    ax.legend(fontsize=7)
    return [_save(fig, out, f"{stem}.png")]


def _synth(run_dir: Path, out: Path) -> list[str]:
    from .noise import read_trace_csv
    path = run_dir / "trace_000.csv"
    if path.is_file():
        tr = read_trace_csv(path)
        t, x = tr.times, tr.samples
    else:
        d = _json(run_dir, "trace_000.json")
        t, x = np.array(d["time_s"]), np.array(d["phase_rad"])
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, x, lw=0.5)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("phase (rad)")
    return [_save(fig, out, "trace_000.png")]


def _train(run_dir: Path, out: Path) -> list[str]:
    tr = _table(run_dir, "training_report")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(tr["k"], tr["train_rms_rad"], label="predictor")
    ax.plot(tr["k"], tr["traditional_rms_rad"], color="tab:red", label="traditional")
    ax.set_xlabel("prediction step k")
    ax.set_ylabel("training RMS (rad)")
    ax.legend(fontsize=7)
    return [_save(fig, out, "training.png")]


RENDERERS = {"synth": _synth, "train": _train, "fig1": _fig1, "tdm": _tdm, "lock": _lock,
             "sweep": _sweep, "ingest": _ingest}


def render_run(run_dir, command: str, out) -> list[str]:
    """Render every figure for a run of ``command``; returns file names relative to ``out``."""
    run_dir, out = Path(run_dir), Path(out)
    if command not in RENDERERS:
        raise ValidationError(f"no figures defined for command {command!r}", command=command)
    out.mkdir(parents=True, exist_ok=True)
    return RENDERERS[command](run_dir, out)
