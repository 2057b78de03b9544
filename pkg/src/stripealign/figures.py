"""Matplotlib rendering of evaluation outputs.

Figures are written with the non-interactive Agg backend and fixed PNG
metadata so that identical inputs produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .core import RankingResult
from .evaluation import SweepRow

_PNG_METADATA = {"Software": "stripealign"}


def save_cmc_curve(result: RankingResult, path, max_rank: int = 20) -> Path:
    """Plot the CMC curve up to ``max_rank`` and save it as a PNG."""
    path = Path(path)
    top = min(max_rank, result.cmc.size)
    ranks = range(1, top + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    try:
        ax.plot(ranks, result.cmc[:top], marker="o", markersize=3)
        ax.set_xlabel("rank")
        ax.set_ylabel("matching rate")
        ax.set_title(f"CMC (mAP {result.map:.3f})")
        ax.set_ylim(0.0, 1.05)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=_PNG_METADATA)
    finally:
        plt.close(fig)
    return path


def save_sweep_curve(rows: list[SweepRow], param: str, path) -> Path:
    """Plot Rank-1/Rank-5/mAP against the swept parameter values."""
    path = Path(path)
    values = [r.value for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    try:
        ax.plot(values, [r.rank1 for r in rows], marker="o", label="Rank-1")
        ax.plot(values, [r.rank5 for r in rows], marker="s", label="Rank-5")
        ax.plot(values, [r.map for r in rows], marker="^", label="mAP")
        ax.set_xlabel(param)
        ax.set_ylabel("score")
        ax.set_xticks(values)
        ax.set_ylim(0.0, 1.05)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=_PNG_METADATA)
    finally:
        plt.close(fig)
    return path
