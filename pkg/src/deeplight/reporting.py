"""Report emission: JSON documents, CSV tables, and matplotlib figures.

Every report path writes the machine-readable artifacts first and then the
figure next to them, sharing the JSON path's stem.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import METRIC_KEYS, METRIC_NOTES, MetricsReport


def write_json(path, doc) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return p


def eval_report_doc(split: str, reports: list[MetricsReport], agg: dict,
                    baseline: tuple[list[MetricsReport], dict] | None = None,
                    extra: dict | None = None) -> dict:
    doc = {
        "split": split,
        "metadata": dict(METRIC_NOTES),
        "tiles": [r.to_dict() for r in reports],
        "aggregate": agg,
    }
    if baseline is not None:
        doc["baseline"] = {
            "tiles": [r.to_dict() for r in baseline[0]],
            "aggregate": baseline[1],
        }
    if extra:
        doc.update(extra)
    return doc


def _eval_csv(path, doc) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["tile_id", *METRIC_KEYS])
        for tile in doc["tiles"]:
            w.writerow([tile.get("tile_id", "")]
                       + [tile[k] for k in METRIC_KEYS])
        w.writerow(["aggregate"] + [doc["aggregate"][k] for k in METRIC_KEYS])
        if "baseline" in doc:
            w.writerow(["baseline_aggregate"]
                       + [doc["baseline"]["aggregate"][k] for k in METRIC_KEYS])


def _finite(vals):
    return [v for v in vals if np.isfinite(v)]


def _eval_figure(path, doc) -> None:
    tiles = doc["tiles"]
    ids = [t.get("tile_id", str(i)) for i, t in enumerate(tiles)]
    x = np.arange(len(tiles))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))

    psnr = [t["psnr"] for t in tiles]
    cap = max(_finite(psnr), default=1.0) * 1.05 + 1.0
    ax1.bar(x - 0.2, np.minimum(psnr, cap), width=0.4, label="model")
    if "baseline" in doc:
        bp = [t["psnr"] for t in doc["baseline"]["tiles"]]
        ax1.bar(x + 0.2, np.minimum(bp, cap), width=0.4, label="bicubic")
    ax1.set_xticks(x, ids, rotation=45, ha="right", fontsize=7)
    ax1.set_ylabel("PSNR (dB)")
    ax1.set_title(f"per-tile PSNR ({doc['split']})")
    ax1.legend()

    keys = ("ssim", "uiqi", "cc")
    xm = np.arange(len(keys))
    ax2.bar(xm - 0.2, [doc["aggregate"][k] for k in keys], width=0.4,
            label="model")
    if "baseline" in doc:
        ax2.bar(xm + 0.2, [doc["baseline"]["aggregate"][k] for k in keys],
                width=0.4, label="bicubic")
    ax2.set_xticks(xm, keys)
    ax2.set_ylim(0, 1.05)
    ax2.set_title("aggregate (sam/piqe in JSON)")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_eval_report(json_path, doc) -> dict[str, Path]:
    """JSON + CSV + PNG, sharing the JSON path's stem."""
    p = write_json(json_path, doc)
    csv_path = p.with_suffix(".csv")
    _eval_csv(csv_path, doc)
    png_path = p.with_suffix(".png")
    _eval_figure(png_path, doc)
    return {"json": p, "csv": csv_path, "png": png_path}


def write_loss_curve(log_path, png_path) -> Path:
    steps, totals, l1s, bces = [], [], [], []
    eval_steps, eval_psnr = [], []
    with open(log_path, encoding="utf-8") as f:
        for line in f:
            row = json.loads(line)
            if "total" in row and "event" not in row:
                steps.append(row["step"])
                totals.append(row["total"])
                l1s.append(row["l1"])
                bces.append(row["bce"])
            if "eval" in row and np.isfinite(row["eval"].get("psnr", np.nan)):
                eval_steps.append(row["step"])
                eval_psnr.append(row["eval"]["psnr"])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(steps, totals, label="total", lw=1.2)
    ax.plot(steps, l1s, label="l1", lw=0.8, alpha=0.7)
    if any(b is not None for b in bces):
        ax.plot(steps, [b if b is not None else np.nan for b in bces],
                label="bce", lw=0.8, alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper left")
    if eval_steps:
        ax2 = ax.twinx()
        ax2.plot(eval_steps, eval_psnr, "o-", color="tab:red", ms=3,
                 label="val PSNR")
        ax2.set_ylabel("val PSNR (dB)", color="tab:red")
    fig.tight_layout()
    p = Path(png_path)
    fig.savefig(p, dpi=110)
    plt.close(fig)
    return p


def write_ablation_report(json_path, rows: list[dict],
                          meta: dict | None = None) -> dict[str, Path]:
    """Matrix rows (one per variant) as JSON + CSV + PSNR bar figure."""
    doc = {"metadata": dict(METRIC_NOTES), "rows": rows}
    if meta:
        doc.update(meta)
    p = write_json(json_path, doc)

    csv_path = p.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["label", "ablation", *METRIC_KEYS, "error"])
        for row in rows:
            w.writerow([row["label"], row["ablation"]]
                       + [row.get(k, "") for k in METRIC_KEYS]
                       + [row.get("error", "")])

    ok = [r for r in rows if "error" not in r]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    if ok:
        x = np.arange(len(ok))
        vals = [r["psnr"] for r in ok]
        bars = ax.bar(x, vals, color=["tab:green" if r["ablation"] == "none"
                                      else "tab:blue" for r in ok])
        ax.bar_label(bars, fmt="%.2f", fontsize=8)
        ax.set_xticks(x, [r["label"] for r in ok], rotation=30, ha="right")
        ax.set_ylabel("val PSNR (dB)")
        ax.set_title("ablation matrix")
    fig.tight_layout()
    png_path = p.with_suffix(".png")
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
    return {"json": p, "csv": csv_path, "png": png_path}
