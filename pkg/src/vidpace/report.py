"""CSV tables and static accuracy-vs-k plots."""
from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RETRIEVAL_FIELDS = ("model", "k", "accuracy")


def emit_report(
    results: Mapping[str, Mapping[int, float]],
    out_dir: str | os.PathLike,
    name: str = "retrieval",
) -> list[Path]:
    """Write ``<name>.csv`` and, if there is anything to plot, ``<name>.png``.

    ``results`` maps a model label to its {k: top-k accuracy} curve; every
    model becomes one labelled line on a shared axis.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RETRIEVAL_FIELDS)
        for model, curve in results.items():
            for k in sorted(curve):
                w.writerow([model, k, f"{curve[k]:.6f}"])
    written = [csv_path]
    curves = {m: c for m, c in results.items() if c}
    if not curves:
        return written
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for model, curve in curves.items():
        ks = sorted(curve)
        ax.plot(ks, [100 * curve[k] for k in ks], marker="o", label=model)
    ax.set_xlabel("k")
    ax.set_ylabel("top-k retrieval accuracy (%)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    png_path = out / f"{name}.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    written.append(png_path)
    return written


def write_table(rows: Sequence[Mapping], path: str | os.PathLike, fields: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fields is None:
        fields = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
    return path


def read_table(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
