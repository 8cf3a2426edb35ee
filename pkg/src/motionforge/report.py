"""Report rendering: delimited tables, JSON summaries, and figures.

Figures are rendered headlessly to image files next to the delimited
output; every writer returns the paths it produced so callers can list
them.  Numbers in tables use %.9g so files are byte-stable across runs
with identical inputs.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.9g}"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def write_rows_tsv(path, rows, columns=None) -> str:
    """Tab-separated table; columns default to first-seen key order."""
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    with open(path, "w") as f:
        f.write("\t".join(columns) + "\n")
        for row in rows:
            f.write("\t".join(_fmt(row.get(c)) for c in columns) + "\n")
    return str(path)


def write_summary_json(path, payload: dict) -> str:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return str(path)


def loss_curve_figure(curve, path) -> str:
    """Per-epoch loss terms on a log scale."""
    epochs = [c["epoch"] for c in curve]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key in ("total", "reconstruction", "joint"):
        ax.plot(epochs, [max(c[key], 1e-12) for c in curve], label=key)
    ax.plot(epochs, [max(c["kl"], 1e-12) for c in curve], label="kl", linestyle="--")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def dtg_histogram(rows, path, key: str = "dtg_cm") -> str:
    values = [r[key] for r in rows if key in r]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if values:
        ax.hist(values, bins=min(40, max(5, len(values) // 5)), color="#4878a8")
        ax.axvline(float(np.mean(values)), color="k", linestyle="--",
                   label=f"mean {np.mean(values):.1f} cm")
        ax.legend()
    ax.set_xlabel("distance to goal (cm)")
    ax.set_ylabel("episodes")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def trajectory_figure(trace, skeleton, path, joint: str = None) -> str:
    """Top-down pelvis path with goal markers; optionally one joint's path."""
    data = trace.data()
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(data[:, 0], data[:, 1], color="#2a4d69", label="pelvis")
    ax.plot(data[0, 0], data[0, 1], "o", color="#2a4d69")
    if joint is not None:
        from .metrics import trace_positions

        positions = trace_positions(data, skeleton)
        j = skeleton.index(joint)
        ax.plot(positions[:, j, 0], positions[:, j, 1], color="#b05454", label=joint)
    goal_sets = [trace.config.goals] + [s["goals"] for s in trace.segments]
    seen = set()
    for goals in goal_sets:
        for name, g in goals.joints.items():
            key = (name, round(g.position[0], 6), round(g.position[1], 6))
            if key in seen:
                continue
            seen.add(key)
            ax.plot(g.position[0], g.position[1], "x", color="#3a7d44", markersize=10)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if joint is not None:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def comparison_bars(values: dict, path, ylabel: str, title: str = "") -> str:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    labels = list(values.keys())
    ax.bar(labels, [values[k] for k in labels], color=["#4878a8", "#b05454"][: len(labels)])
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def render_eval_report(report, out_dir, prefix: str = None) -> list:
    """Rows table, summary JSON, and a distance histogram for one report."""
    os.makedirs(out_dir, exist_ok=True)
    prefix = prefix or report.protocol
    written = []
    written.append(write_rows_tsv(os.path.join(out_dir, f"{prefix}_rows.tsv"), report.rows))
    written.append(
        write_summary_json(
            os.path.join(out_dir, f"{prefix}_summary.json"),
            {"protocol": report.protocol, "aggregates": report.aggregates, "params": report.params},
        )
    )
    key = "dtg_cm" if any("dtg_cm" in r for r in report.rows) else "l2p"
    written.append(dtg_histogram(report.rows, os.path.join(out_dir, f"{prefix}_hist.png"), key=key))
    return written
