"""Aggregate run metrics into summary tables and figures.

Reads every ``metrics_*.csv`` in a directory and emits ``summary.csv``
alongside rendered comparison figures: comprehensive score per round,
time-to-accuracy, energy-to-accuracy, and selection size per round.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DataError
from .harness import read_metrics_csv

FIGURES = ("score_per_round.png", "time_to_accuracy.png",
           "energy_to_accuracy.png", "selection_size.png")


def _load_runs(metrics_dir: Path) -> dict[str, list[dict]]:
    runs = {}
    for path in sorted(metrics_dir.glob("metrics_*.csv")):
        rows = read_metrics_csv(path)
        body = [r for r in rows if r["round"] != "summary"]
        if body:
            runs[body[0]["policy"]] = body
    if not runs:
        raise DataError(f"no metrics_*.csv files found in {metrics_dir}")
    return runs


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(metrics_dir: Path, out_dir: Path) -> Path:
    runs = _load_runs(metrics_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = ["policy,rounds,mean_score,final_accuracy,cum_latency_s,cum_energy_j,"
             "mean_selection_size"]
    for policy, rows in sorted(runs.items()):
        mean_score = sum(r["score"] for r in rows) / len(rows)
        mean_size = sum(r["selection_size"] for r in rows) / len(rows)
        last = rows[-1]
        lines.append(",".join([
            policy, str(len(rows)), repr(mean_score), repr(last["accuracy"]),
            repr(last["cum_latency_s"]), repr(last["cum_energy_j"]), repr(mean_size)]))
    summary_path = out_dir / "summary.csv"
    summary_path.write_text("\n".join(lines) + "\n")

    fig, ax = plt.subplots(figsize=(6, 4))
    for policy, rows in sorted(runs.items()):
        ax.plot([r["round"] for r in rows], [r["score"] for r in rows],
                marker=".", label=policy)
    ax.set_xlabel("round")
    ax.set_ylabel("comprehensive score")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_dir / "score_per_round.png")

    for xkey, fname, xlabel in (("cum_latency_s", "time_to_accuracy.png", "cumulative latency (s)"),
                                ("cum_energy_j", "energy_to_accuracy.png", "cumulative energy (J)")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for policy, rows in sorted(runs.items()):
            ax.plot([r[xkey] for r in rows], [r["accuracy"] for r in rows],
                    marker=".", label=policy)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("validation accuracy")
        ax.legend()
        fig.tight_layout()
        _save(fig, out_dir / fname)

    fig, ax = plt.subplots(figsize=(6, 4))
    for policy, rows in sorted(runs.items()):
        ax.step([r["round"] for r in rows], [r["selection_size"] for r in rows],
                where="mid", label=policy)
    ax.set_xlabel("round")
    ax.set_ylabel("selection size")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_dir / "selection_size.png")

    return summary_path
