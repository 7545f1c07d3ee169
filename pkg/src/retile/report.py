"""Corpus reporting: delimited metrics plus rendered figures.

Consumes per-program MetricsReport rows (typically one per difftest seed) and
writes a CSV next to a small set of PNG figures summarizing the code-size
story: the three decomposition factors, the valid-decode rate, source
instruction lengths, and expansion against program size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, fields
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import MetricsReport  # noqa: E402

__all__ = ["write_corpus_report"]


def _geomean(values: list[float]) -> float:
    return math.exp(sum(math.log(v) for v in values) / len(values))


def write_corpus_report(rows: list[MetricsReport], out_dir: Path | str) -> list[Path]:
    """Write metrics.csv and the summary figures; returns the created paths."""
    if not rows:
        raise ValueError("no metrics rows to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []

    csv_path = out_dir / "metrics.csv"
    names = [f.name for f in fields(MetricsReport)]
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["decomposition_product"])
        for row in rows:
            record = asdict(row)
            writer.writerow([record[n] for n in names] + [row.decomposition_product])
    created.append(csv_path)

    factors = {
        "lowering": [r.lowering_factor for r in rows],
        "density": [r.density_factor for r in rows],
        "amplification": [r.amplification_factor for r in rows],
        "expansion": [r.expansion for r in rows],
    }
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = list(factors)
    gmeans = [_geomean(factors[k]) for k in labels]
    bars = ax.bar(labels, gmeans, color=["#4C72B0", "#DD8452", "#55A868", "#C44E52"])
    for bar, value in zip(bars, gmeans):
        ax.annotate(f"{value:.2f}", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("geometric mean over corpus")
    ax.set_title("expansion and its three factors")
    fig.tight_layout()
    path = out_dir / "decomposition_factors.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    created.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].hist([r.valid_decode_rate for r in rows], bins=20, color="#4C72B0")
    axes[0].set_xlabel("valid-decode rate")
    axes[0].set_ylabel("programs")
    axes[1].hist([r.avg_source_instr_len for r in rows], bins=20, color="#55A868")
    axes[1].set_xlabel("average source instruction length (bytes)")
    fig.suptitle("superset decode characteristics")
    fig.tight_layout()
    path = out_dir / "decode_characteristics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    created.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter([r.image_len for r in rows], [r.expansion for r in rows],
               s=14, alpha=0.6, color="#C44E52")
    ax.set_xlabel("image length (bytes)")
    ax.set_ylabel("expansion (target instr / real instr)")
    ax.set_title("expansion vs. program size")
    fig.tight_layout()
    path = out_dir / "expansion_vs_size.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    created.append(path)

    return created
