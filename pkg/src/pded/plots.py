"""Report figures: reward curves, reconstruction heatmaps, vote tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def reward_curves(report: dict, path: Path) -> Path | None:
    rows = report.get("rewards") or []
    if not rows:
        return None
    x = np.arange(1, len(rows) + 1)
    best = [r["best"] if r["best"] is not None else np.nan for r in rows]
    top = [r["top_eps_mean"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(x, best, label="best reward")
    ax.plot(x, top, label="top-ε mean", alpha=0.8)
    starts = [i + 1 for i, r in enumerate(rows) if r["iteration"] == 1 and r["round"] > 1]
    for s in starts:
        ax.axvline(s, color="green", ls="--", lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("reward")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def field_heatmaps(model, data, path: Path) -> Path:
    """True field, surrogate reconstruction and their difference on the grid."""
    pred = model.predict(data.points())[:, 0].reshape(data.shape)
    true = data.fields[data.variables[0]]
    extent = [data.axes[-1].lo, data.axes[-1].hi, data.axes[0].lo, data.axes[0].hi]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5), sharey=True)
    for ax, arr, title in zip(axes, (true, pred, pred - true), ("data", "surrogate", "difference")):
        im = ax.imshow(arr, aspect="auto", origin="lower", extent=extent, cmap="RdBu_r" if title == "difference" else "viridis")
        ax.set_title(title)
        ax.set_xlabel(data.axes[-1].name)
        fig.colorbar(im, ax=ax)
    axes[0].set_ylabel(data.axes[0].name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def vote_table(report: dict, path: Path) -> Path | None:
    rounds = [r for r in report.get("rounds", []) if r.get("selection")]
    if not rounds:
        return None
    fig, axes = plt.subplots(len(rounds), 1, figsize=(8, 1.2 + 1.0 * sum(len(r["selection"]["votes"]) for r in rounds) / len(rounds)), squeeze=False)
    for ax, r in zip(axes[:, 0], rounds):
        sel = r["selection"]
        labels = [lab if len(lab) < 70 else lab[:67] + "..." for lab in sel["labels"]]
        y = np.arange(len(labels))
        ax.barh(y, sel["votes"], color=["tab:green" if k == sel["winner"] else "tab:gray" for k in y])
        ax.set_yticks(y, labels, fontsize=8)
        ax.invert_yaxis()
        ax.set_title(f"round {r['round']} votes", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_all(report: dict, out: Path, model=None, data=None) -> list[Path]:
    out = Path(out)
    made = [reward_curves(report, out / "rewards.png"), vote_table(report, out / "votes.png")]
    if model is not None:
        if data is None:
            from .config import RunConfig
            from .pipeline import load_data

            clean, noisy, _ = load_data(RunConfig.from_dict(report["config"]))
            data = clean if clean is not None else noisy
        made.append(field_heatmaps(model, data, out / "reconstruction.png"))
    return [p for p in made if p is not None]
