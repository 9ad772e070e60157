"""Static PNG charts for the --plot flag. Requires matplotlib."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from .locatability import DistancePair, LocatabilityParams, optimized_score, reason_score
from .rewards import RewardParams

# strip version/date metadata so reruns write identical bytes
_PNG_META = {"Software": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def l_opt_histogram_png(histogram: dict, path: str | Path) -> None:
    plt = _pyplot()
    edges, counts = histogram["edges"], histogram["counts"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(edges[:-1], counts, width=edges[1] - edges[0], align="edge", edgecolor="black")
    ax.set_xlabel("optimized locatability")
    ax.set_ylabel("records")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def reward_surface_png(params: RewardParams, loc: LocatabilityParams, path: str | Path, max_km: float = 600.0) -> None:
    plt = _pyplot()
    ds = [max_km * i / 200 for i in range(201)]
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 3.8))
    coord = [math.exp(-d / params.sigma) for d in ds]
    left.plot(ds, [params.lambda1 + params.lambda2 * c for c in coord], label="country + city match")
    left.plot(ds, [params.lambda1 * c for c in coord], label="country match only")
    left.plot(ds, [0.0] * len(ds), label="wrong country")
    left.set_xlabel("distance to truth (km)")
    left.set_ylabel("hierarchical geo reward")
    left.legend()
    for d_rag in (0.0, 100.0, 300.0):
        ys = [optimized_score(1.0, reason_score(DistancePair(d_rag, d), loc).l_reason, loc.alpha) for d in ds]
        right.plot(ds, ys, label=f"d_rag = {d_rag:g} km")
    right.set_xlabel("reasoning error (km)")
    right.set_ylabel("optimized locatability (visual = 1)")
    right.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def trace_png(trace: Sequence[dict], path: str | Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for stage in sorted({row["stage"] for row in trace}):
        rows = [r for r in trace if r["stage"] == stage]
        ax.plot([r["epoch"] for r in rows], [r["mean_reward"] for r in rows], marker="o", label=f"stage {stage}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean reward")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
