"""Report figures rendered to PNG with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .report import Comparison, ScenarioReport  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 4.0),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.bbox": "tight",
}
DYNAMIC_COLOR = "#1f77b4"
STATIC_COLOR = "#bbbbbb"


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_deployments(rep: ScenarioReport, path) -> Path:
    templates = sorted(rep.cpu.uptime)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(templates, [rep.deployments.get(t, 0) for t in templates], color=DYNAMIC_COLOR)
        ax.set_ylabel("deployments")
        ax.set_title(f"Deployments per template ({rep.name}, {rep.mode})")
        ax.tick_params(axis="x", rotation=45)
        ax.yaxis.get_major_locator().set_params(integer=True)
        return _save(fig, Path(path))


def plot_cpu(rep: ScenarioReport, path, static: ScenarioReport | None = None) -> Path:
    """Per-template uptime against the always-on line (and the static run, if given)."""
    templates = sorted(rep.cpu.uptime)
    x = range(len(templates))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        width = 0.4 if static is not None else 0.8
        ax.bar([k - (width / 2 if static is not None else 0) for k in x],
               [rep.cpu.uptime[t] / 3600 for t in templates], width, color=DYNAMIC_COLOR, label=rep.mode)
        if static is not None:
            ax.bar([k + width / 2 for k in x], [static.cpu.uptime.get(t, 0) / 3600 for t in templates], width,
                   color=STATIC_COLOR, label=static.mode)
        ax.axhline(rep.horizon / 3600, color="k", linestyle="--", linewidth=0.8, label="always on")
        ax.set_xticks(list(x), templates, rotation=45)
        ax.set_ylabel("uptime (h)")
        ax.set_title(f"CPU time per template, {rep.cpu.total:.1f}% saved vs always-on")
        ax.legend(frameon=False)
        return _save(fig, Path(path))


def plot_attacks(rep: ScenarioReport, path) -> Path:
    ids = sorted(rep.attacks)
    kinds = ("ids", "ddos", "botnet")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bottom = [0] * len(ids)
        for kind in kinds:
            vals = [rep.attacks[i].get(kind, 0) for i in ids]
            ax.bar([f"{i}\n{rep.instance_template[i]}" for i in ids], vals, bottom=bottom, label=kind)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_ylabel("attacks")
        ax.set_title("Attacks per honeypot")
        if ids:
            ax.legend(frameon=False)
        else:
            ax.text(0.5, 0.5, "no attacks on decoys", ha="center", va="center", transform=ax.transAxes)
        return _save(fig, Path(path))


def plot_engagement(rep: ScenarioReport, path, static: ScenarioReport | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for r, color in ((rep, DYNAMIC_COLOR), (static, STATIC_COLOR)):
            if r is None:
                continue
            top = r.engagements[: r.top]
            ax.plot(range(1, len(top) + 1), [e.duration for e in top], "o-", color=color,
                    label=f"{r.mode} (mean {r.mean_engagement:.0f} s)")
        ax.set_xlabel("rank")
        ax.set_ylabel("engagement (s)")
        ax.set_title(f"Top {rep.top} engagement times")
        ax.legend(frameon=False)
        return _save(fig, Path(path))


def render_all(rep: ScenarioReport, out_dir, static: ScenarioReport | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = rep.mode
    return [
        plot_deployments(rep, out / f"deployments_{tag}.png"),
        plot_cpu(rep, out / f"cpu_{tag}.png", static),
        plot_attacks(rep, out / f"attacks_{tag}.png"),
        plot_engagement(rep, out / f"engagement_{tag}.png", static),
    ]


def render_comparison(cmp: Comparison, out_dir) -> list[Path]:
    return render_all(cmp.dynamic, out_dir, cmp.static) + [
        plot_deployments(cmp.static, Path(out_dir) / "deployments_static.png"),
        plot_attacks(cmp.static, Path(out_dir) / "attacks_static.png"),
    ]
