"""Render figures and a per-epoch table from a finished run directory."""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def _seed_frames(run_dir):
    frames = {}
    for path in sorted(run_dir.glob("seed_*.csv")):
        seed = int(path.stem.split("_", 1)[1])
        frames[seed] = pd.read_csv(path)
    return dict(sorted(frames.items()))


def _column_group(frame, prefix):
    cols = [c for c in frame.columns if c.startswith(prefix)]
    cols.sort(key=lambda c: int(c.rsplit("_", 1)[1]))
    return cols


def _plot_convergence(summary, out_path):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    epoch = summary["epoch"]
    mean = summary["mean_dist_to_opt"]
    err = summary["stderr_dist_to_opt"]
    ax.plot(epoch, mean, color="tab:blue", lw=1.5, label="mean over seeds")
    ax.fill_between(epoch, mean - err, mean + err, color="tab:blue", alpha=0.25, lw=0)
    ax.set_xlabel("epoch")
    ax.set_ylabel("distance to optimum")
    if (mean > 0).all():
        ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def _plot_decisions(frames, x_star, out_path):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    scalar = x_star is not None and len(x_star) == 1
    for seed, frame in frames.items():
        cols = _column_group(frame, "decision_")
        if scalar:
            series = frame[cols[0]]
        else:
            series = np.linalg.norm(frame[cols].to_numpy(), axis=1)
        ax.plot(frame["epoch"], series, lw=0.9, alpha=0.7, label=f"seed {seed}")
    if x_star is not None:
        level = x_star[0] if scalar else float(np.linalg.norm(x_star))
        ax.axhline(level, color="black", ls="--", lw=1.0, label="optimum")
    ax.set_xlabel("epoch")
    ax.set_ylabel("decision" if scalar else "decision norm")
    if len(frames) <= 8:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def _plot_occupancy(frames, target, out_path):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    stacks = []
    for frame in frames.values():
        cols = _column_group(frame, "sample_")
        stacks.append(frame[cols].to_numpy().mean(axis=1))
    mean = np.stack(stacks).mean(axis=0)
    epoch = next(iter(frames.values()))["epoch"]
    ax.plot(epoch, mean, color="tab:green", lw=1.5, label="mean observed occupancy")
    ax.axhline(target, color="black", ls="--", lw=1.0, label=f"target {target:g}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("occupancy")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_run_report(run_dir):
    """Write convergence/decision figures plus report.csv; return written paths.

    Expects the directory layout `execute` produces: manifest.json,
    summary.csv, and one seed_<n>.csv per seed. An occupancy figure is added
    when the manifest predicts one.
    """
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    summary = pd.read_csv(run_dir / "summary.csv")
    frames = _seed_frames(run_dir)
    if not frames:
        raise FileNotFoundError(f"no seed_*.csv telemetry under {run_dir}")
    x_star = manifest.get("oracle", {}).get("x_star")
    written = []

    path = run_dir / "convergence.png"
    _plot_convergence(summary, path)
    written.append(path)

    path = run_dir / "decisions.png"
    _plot_decisions(frames, x_star, path)
    written.append(path)

    target = manifest.get("outcome", {}).get("occupancy_target")
    if target is not None:
        path = run_dir / "occupancy.png"
        _plot_occupancy(frames, target, path)
        written.append(path)

    table = summary.copy()
    sample_means = []
    decision_norms = []
    for frame in frames.values():
        sample_cols = _column_group(frame, "sample_")
        decision_cols = _column_group(frame, "decision_")
        sample_means.append(frame[sample_cols].to_numpy().mean(axis=1))
        decision_norms.append(np.linalg.norm(frame[decision_cols].to_numpy(), axis=1))
    table["mean_sample"] = np.stack(sample_means).mean(axis=0)
    table["mean_decision_norm"] = np.stack(decision_norms).mean(axis=0)
    path = run_dir / "report.csv"
    table.to_csv(path, index=False)
    written.append(path)
    return written
