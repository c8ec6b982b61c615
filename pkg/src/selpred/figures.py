"""Figure rendering for experiment reports.

Writes PNG files next to the JSON/CSV output: one risk-coverage plot per
mixture, a coverage-degradation summary across OOD fractions, and a
threshold-generalization plot of realized risk. Rendering is deterministic
(fixed geometry and metadata) so re-emitting an identical report produces
identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_figures"]

_PNG_METADATA = {"Software": "selpred"}


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


def _sorted_methods(report) -> list[str]:
    return [m for m in report.config.methods]


def _alphas(report) -> list[float]:
    return sorted({a for (_, a) in report.cells}, reverse=True)


def _alpha_label(alpha: float) -> str:
    return format(alpha, "g")


def render_figures(report, directory) -> list[Path]:
    """Render every figure for the report; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    written += _rc_curve_figures(report, directory)
    summary = _degradation_figure(report, directory)
    if summary is not None:
        written.append(summary)
    generalization = _risk_generalization_figure(report, directory)
    if generalization is not None:
        written.append(generalization)
    return written


def _rc_curve_figures(report, directory: Path) -> list[Path]:
    paths = []
    for alpha in _alphas(report):
        fig, ax = plt.subplots(figsize=(6.0, 4.5))
        plotted = False
        for method in _sorted_methods(report):
            cell = report.cells.get((method, alpha))
            if cell is None:
                continue
            xs = [c for c, _ in cell.metrics.curve]
            ys = [r for _, r in cell.metrics.curve]
            ax.plot(xs, ys, label=method, linewidth=1.6)
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_xlabel("coverage")
        ax.set_ylabel("risk")
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(bottom=0.0)
        ax.set_title(f"risk-coverage, ID proportion {_alpha_label(alpha)}")
        ax.legend(loc="upper left", fontsize=9)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = directory / f"rc_curve_alpha_{_alpha_label(alpha)}.png"
        _save(fig, path)
        paths.append(path)
    return paths


def _pick_level(report) -> float | None:
    levels = list(report.config.risk_levels)
    if not levels:
        return None
    return 0.05 if 0.05 in levels else levels[0]


def _degradation_figure(report, directory: Path) -> Path | None:
    level = _pick_level(report)
    alphas = _alphas(report)
    if level is None or len(alphas) < 2:
        return None
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    plotted = False
    for method in _sorted_methods(report):
        points = []
        for alpha in alphas:
            cell = report.cells.get((method, alpha))
            if cell is None:
                continue
            points.append((1.0 - alpha, cell.metrics.c_at_r.get(level)))
        points = [(x, y) for x, y in points if y is not None]
        if points:
            ax.plot(*zip(*points), marker="o", label=method, linewidth=1.6)
            plotted = True
    if not plotted:
        plt.close(fig)
        return None
    ax.set_xlabel("OOD fraction")
    ax.set_ylabel(f"coverage at {format(level * 100, 'g')}% risk")
    ax.set_ylim(bottom=0.0)
    ax.set_title("coverage degradation under distribution shift")
    ax.legend(loc="upper right", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = directory / "coverage_degradation.png"
    _save(fig, path)
    return path


def _risk_generalization_figure(report, directory: Path) -> Path | None:
    level = _pick_level_first(report)
    alphas = _alphas(report)
    if level is None or len(alphas) < 2:
        return None
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    plotted = False
    for method in _sorted_methods(report):
        points = []
        for alpha in alphas:
            cell = report.cells.get((method, alpha))
            if cell is None:
                continue
            entry = cell.realized_at_risk.get(level)
            if entry and entry["risk"] is not None:
                points.append((1.0 - alpha, entry["risk"]))
        if points:
            ax.plot(*zip(*points), marker="o", label=method, linewidth=1.6)
            plotted = True
    if not plotted:
        plt.close(fig)
        return None
    ax.axhline(level, color="gray", linestyle="--", linewidth=1.0,
               label=f"target {format(level * 100, 'g')}%")
    ax.set_xlabel("OOD fraction")
    ax.set_ylabel("realized risk at the validation-chosen threshold")
    ax.set_ylim(bottom=0.0)
    ax.set_title("threshold generalization")
    ax.legend(loc="upper left", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = directory / "risk_generalization.png"
    _save(fig, path)
    return path


def _pick_level_first(report) -> float | None:
    levels = list(report.config.risk_levels)
    return levels[0] if levels else None
