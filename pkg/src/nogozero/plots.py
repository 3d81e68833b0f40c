"""Figure rendering for match sweeps and training runs.

Every report-producing CLI path writes a PNG next to its delimited text
output.  Rendering is headless (Agg) and file-based only.
"""

from __future__ import annotations

from fractions import Fraction

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_sweep_figure(rows: list[dict], path) -> None:
    """Elo vs normalized budget, one line per allocation ratio, with
    binomial error bars (converted to Elo via the local slope)."""
    by_ratio: dict[str, list[dict]] = {}
    for row in rows:
        by_ratio.setdefault(row["r"], []).append(row)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for ratio, points in sorted(by_ratio.items(), key=lambda kv: Fraction(kv[0])):
        points = sorted(points, key=lambda r: r["budget"])
        xs = [p["budget"] for p in points]
        ys = [p["elo"] for p in points]
        # d(elo)/dp = 400 / (ln 10 * p * (1-p))
        errs = []
        for p in points:
            q = min(max(p["p"], 0.5 / p["games"]), 1 - 0.5 / p["games"])
            errs.append(400.0 / (2.302585 * q * (1 - q)) * p["stderr"])
        label = {"0": "small only", "1": "large only"}.get(ratio, f"r={ratio}")
        ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=label)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("normalized budget")
    ax.set_ylabel("Elo vs opponent")
    ax.grid(True, linestyle=":", alpha=0.6)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_figure(history: list[dict], path) -> None:
    """Loss curves (and held-out loss when present) vs normalized games."""
    xs = [h["normalized_games"] for h in history]
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for key, label in (("loss_fs", "small net loss"), ("loss_fl", "large net loss"),
                       ("holdout_loss", "held-out loss")):
        ys = [h.get(key) for h in history]
        pairs = [(x, y) for x, y in zip(xs, ys) if y is not None and y == y]
        if pairs:
            ax.plot([p[0] for p in pairs], [p[1] for p in pairs], label=label)
    ax.set_xlabel("normalized generated games")
    ax.set_ylabel("training loss")
    ax.grid(True, linestyle=":", alpha=0.6)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_match_figure(rows: list[tuple[str, object]], path) -> None:
    """Win-rate bars with stderr whiskers, one bar per pairing."""
    names = [name for name, _ in rows]
    ps = [r.p for _, r in rows]
    errs = [r.stderr for _, r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows) + 2), 4.0))
    ax.bar(range(len(rows)), ps, yerr=errs, capsize=4, color="#4878cf")
    ax.axhline(0.5, color="gray", linestyle="--", linewidth=1)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("win rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
