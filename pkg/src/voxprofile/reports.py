"""Report emission: line-delimited run records plus summary tables.

Every artifact is byte-deterministic for a fixed configuration: run ids
are hashes of the resolved config, floats use fixed formatting, and no
timestamps are written.
"""

from __future__ import annotations

import csv
import hashlib
import json

METRIC_COLUMNS = ("accuracy", "precision_macro", "recall_macro", "f1_macro",
                  "mae", "rmse")


def config_hash(payload: dict) -> str:
    """Stable hash of a JSON-serializable configuration."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def write_history(path, run_id: str, histories: dict, rows=None) -> None:
    """One JSON line per (run, epoch) with losses, then one final line
    per (model, task) with its evaluation metrics."""
    with open(path, "w") as fh:
        for name in sorted(histories):
            for record in histories[name]:
                line = {
                    "run": run_id,
                    "model": name,
                    "epoch": record["epoch"],
                    "train_loss": round(record["train_loss"], 8),
                    "val_loss": (None if record.get("val_loss") is None
                                 else round(record["val_loss"], 8)),
                    "task_losses": {k: round(v, 8)
                                    for k, v in record.get("task_losses", {}).items()},
                }
                fh.write(json.dumps(line, sort_keys=True) + "\n")
        for row in rows or ():
            line = {
                "run": run_id,
                "model": row["model"],
                "task": row["task"],
                "metrics": row["metrics"].to_dict(),
            }
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def _fmt(value) -> str:
    return "" if value is None else f"{value:.4f}"


def summary_table(rows) -> str:
    """Aligned text table: one row per (model, task) metric set."""
    header = ["model", "task"] + list(METRIC_COLUMNS)
    body = []
    for row in rows:
        metrics = row["metrics"]
        body.append([row["model"], row["task"]]
                    + [_fmt(getattr(metrics, col)) for col in METRIC_COLUMNS])
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i])
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_summary_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "task", *METRIC_COLUMNS])
        for row in rows:
            metrics = row["metrics"]
            writer.writerow(
                [row["model"], row["task"]]
                + ["" if getattr(metrics, col) is None
                   else f"{getattr(metrics, col):.6f}" for col in METRIC_COLUMNS]
            )
