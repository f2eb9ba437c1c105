"""Evaluation report emission: structured JSON, delimited per-instance table, figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalConfig, EvalResult


def result_to_dict(result: EvalResult, config: EvalConfig) -> dict:
    return {
        "config": {
            "iou_thresholds": list(config.iou_thresholds),
            "max_clicks": config.max_clicks,
            "k_list": list(config.k_list),
            "selection_mode": config.selection_mode,
            "count_repicks": config.count_repicks,
        },
        "aggregates": {
            "mean_noc": {str(t): v for t, v in result.mean_noc.items()},
            "miou_at_k": {str(k): v for k, v in result.miou_at_k.items()},
            "mean_repicks": result.mean_repicks,
            "num_instances": len(result.instances),
        },
        "instances": [
            {
                "id": r.instance_id,
                "ious": r.ious,
                "noc": {str(t): v for t, v in r.noc.items()},
                "repicks": r.repicks,
            }
            for r in result.instances
        ],
    }


def write_report(result: EvalResult, config: EvalConfig, out_json, figures: bool = True) -> dict:
    """Write report.json plus a CSV table and a mIoU-vs-clicks figure next to it.

    Returns the paths written, keyed by artifact kind.
    """
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    doc = result_to_dict(result, config)
    out_json.write_text(json.dumps(doc, indent=2))
    paths = {"json": out_json}

    csv_path = out_json.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["instance_id"] + [f"noc@{t}" for t in config.iou_thresholds] + ["repicks", "ious"]
        writer.writerow(header)
        for r in result.instances:
            writer.writerow(
                [r.instance_id]
                + [r.noc[t] for t in config.iou_thresholds]
                + [r.repicks, " ".join(f"{v:.4f}" for v in r.ious)]
            )
    paths["csv"] = csv_path

    if figures:
        fig_path = out_json.parent / (out_json.stem + "_miou_vs_clicks.png")
        ks = np.arange(1, config.max_clicks + 1)
        curve = [float(np.mean([r.iou_at(int(k)) for r in result.instances])) for k in ks]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(ks, curve, marker="o", ms=3)
        for t in config.iou_thresholds:
            ax.axhline(t, color="gray", lw=0.8, ls="--")
        ax.set_xlabel("clicks")
        ax.set_ylabel("mean IoU")
        ax.set_ylim(0, 1.02)
        ax.set_title(f"mIoU vs clicks ({config.selection_mode} selection)")
        fig.tight_layout()
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)
        paths["figure"] = fig_path
    return paths
