"""Static SVG charts for experiment reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import ExperimentReport  # noqa: E402

plt.rcParams["svg.hashsalt"] = "aiba"


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def chart_errors(rep: ExperimentReport, path: Path) -> None:
    ep = rep.epochs()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, label in (("error_ce", "cross entropy"), ("error_norm1", "1-norm")):
        m, s = rep.series(key), rep.series(key, "std")
        ax.errorbar(ep, m, yerr=s, marker="o", capsize=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test error")
    ax.legend()
    _save(fig, path)


def chart_value(rep: ExperimentReport, path: Path) -> None:
    ep = rep.epochs()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(ep, rep.series("value_achieved"), yerr=rep.series("value_achieved", "std"),
                marker="o", capsize=3, label="achieved")
    opt = rep.rows[0].get("value_optimal") if rep.rows else None
    if opt is not None:
        ax.axhline(opt, color="k", linestyle="--", label="optimal")
    ax.set_xlabel("epoch")
    ax.set_ylabel("value")
    ax.legend()
    _save(fig, path)


def chart_scatter(rep: ExperimentReport, key: str, path: Path) -> None:
    x = rep.series(key)
    if rep.correlation_target == "loss":
        y, ylabel = rep.series("loss"), "value loss"
    else:
        y, ylabel = -rep.series("value_achieved"), "negative value"
    r = rep.pearson_ce if key == "error_ce" else rep.pearson_norm1
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter(x, y)
    if len(x) >= 2 and np.ptp(x) > 0:
        k, c = np.polyfit(x, y, 1)
        xs = np.linspace(x.min(), x.max(), 50)
        ax.plot(xs, k * xs + c, color="C1")
    ax.set_xlabel(key)
    ax.set_ylabel(ylabel)
    ax.set_title("r undefined" if r is None else f"r = {r:.3f}")
    _save(fig, path)


def render_all(rep: ExperimentReport, out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "errors.svg", out / "value.svg", out / "loss_vs_error_ce.svg",
             out / "loss_vs_error_norm1.svg"]
    chart_errors(rep, paths[0])
    chart_value(rep, paths[1])
    chart_scatter(rep, "error_ce", paths[2])
    chart_scatter(rep, "error_norm1", paths[3])
    return paths
