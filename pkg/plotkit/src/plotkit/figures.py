"""Figure renderers: learning curves, attacker bars, firing-probability traces.

Rendering is read-only over the metrics rows and byte-deterministic: the Agg
backend, fixed style parameters, a pinned svg hash salt, and no date
metadata in either output format.
"""

from __future__ import annotations

import os

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .io import PlotError, read_rows, require_column  # noqa: E402

matplotlib.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "svg.hashsalt": "plotkit",
    "axes.grid": True,
    "grid.alpha": 0.3,
})

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _save(fig, out_prefix: str, formats) -> list[str]:
    os.makedirs(os.path.dirname(out_prefix) or ".", exist_ok=True)
    written = []
    for fmt in formats:
        path = f"{out_prefix}.{fmt}"
        fig.savefig(path, format=fmt, metadata={"Date": None})
        written.append(path)
    plt.close(fig)
    return written


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return values
    kernel = np.ones(window) / window
    padded = np.concatenate([np.repeat(values[0], window - 1), values])
    return np.convolve(padded, kernel, mode="valid")


def _group_key(row: dict, keys) -> tuple:
    return tuple(str(row.get(k)) for k in keys)


def _ordered_unique(items) -> list:
    seen = []
    for item in items:
        if item not in seen:
            seen.append(item)
    return seen


def render_curves(spec: dict) -> list[str]:
    """Mean learning curve with a +/-1 std band across seeds, per group."""
    rows = [r for r in read_rows(spec["metrics"]) if r.get("kind") == "train_episode"]
    if not rows:
        raise PlotError("curves: no train_episode rows in the selected metrics")
    keys = spec.get("group_by", ["method"])
    value = spec.get("value", "ep_return")
    x_field = spec.get("x", "env_step")
    require_column(rows, value, "curves")
    require_column(rows, x_field, "curves")
    window = spec["smoothing_window"]

    groups: dict[tuple, dict[int, list]] = {}
    for row in rows:
        g = groups.setdefault(_group_key(row, keys), {})
        g.setdefault(row.get("seed", 0), []).append(row)

    fig, ax = plt.subplots()
    for idx, (gkey, by_seed) in enumerate(sorted(groups.items())):
        series = []
        for seed in sorted(by_seed):
            srows = sorted(by_seed[seed], key=lambda r: r[x_field])
            series.append((np.array([r[x_field] for r in srows]),
                           _smooth(np.array([r[value] for r in srows],
                                            dtype=float), window)))
        t_min = min(len(x) for x, _ in series)
        xs = series[0][0][:t_min]
        stack = np.stack([y[:t_min] for _, y in series])
        mean = stack.mean(axis=0)
        std = stack.std(axis=0)
        color = _COLORS[idx % len(_COLORS)]
        label = ", ".join(gkey)
        ax.plot(xs, mean, color=color, label=label)
        ax.fill_between(xs, mean - std, mean + std, color=color, alpha=0.2,
                        linewidth=0)
    ax.set_xlabel(x_field)
    ax.set_ylabel(value)
    if spec.get("title"):
        ax.set_title(spec["title"])
    ax.legend(loc="best", fontsize=8)
    return _save(fig, spec["out"], spec["formats"])


def render_attack_bars(spec: dict) -> list[str]:
    """Grouped mean-return bars per (method, attacker) with std whiskers."""
    rows = [r for r in read_rows(spec["metrics"]) if r.get("kind") == "eval_episode"]
    if not rows:
        raise PlotError("attack_bars: no eval_episode rows in the selected metrics")
    require_column(rows, "attacker", "attack_bars")
    require_column(rows, "ep_return", "attack_bars")

    methods = spec.get("methods") or _ordered_unique(
        str(r.get("method")) for r in rows)
    attackers = spec.get("attackers") or _ordered_unique(
        str(r["attacker"]) for r in rows)

    fig, ax = plt.subplots()
    width = 0.8 / max(len(attackers), 1)
    xs = np.arange(len(methods), dtype=float)
    for idx, attacker in enumerate(attackers):
        means, stds = [], []
        for method in methods:
            vals = np.array([r["ep_return"] for r in rows
                             if str(r.get("method")) == method
                             and str(r["attacker"]) == attacker], dtype=float)
            if vals.size == 0:
                raise PlotError(
                    f"attack_bars: no rows for method={method!r} "
                    f"attacker={attacker!r}")
            means.append(vals.mean())
            stds.append(vals.std())
        offset = (idx - (len(attackers) - 1) / 2) * width
        ax.bar(xs + offset, means, width=width, yerr=stds, capsize=3,
               color=_COLORS[idx % len(_COLORS)], label=attacker)
    ax.set_xticks(xs)
    ax.set_xticklabels(methods, rotation=15, ha="right", fontsize=8)
    ax.set_ylabel("mean episode return")
    if spec.get("title"):
        ax.set_title(spec["title"])
    ax.legend(loc="best", fontsize=8)
    return _save(fig, spec["out"], spec["formats"])


def _softmax_first(forecast: np.ndarray, temperature: float) -> float:
    z = np.asarray(forecast, dtype=float) / temperature
    z = z - z.max()
    e = np.exp(z)
    return float(e[0] / e.sum())


def render_step_probs(spec: dict) -> list[str]:
    """Per-step firing probability traces, one line per temperature."""
    rows = [r for r in read_rows(spec["metrics"]) if r.get("kind") == "stepprob"]
    if not rows:
        raise PlotError("step_probs: no stepprob rows in the selected metrics")
    require_column(rows, "forecast", "step_probs")
    require_column(rows, "step", "step_probs")
    episodes = _ordered_unique(r.get("episode") for r in rows)
    episode = spec.get("episode", episodes[0])
    trace = sorted((r for r in rows if r.get("episode") == episode),
                   key=lambda r: r["step"])
    if not trace:
        raise PlotError(f"step_probs: no rows for episode {episode!r}")
    temperatures = spec.get("temperatures", [0.1, 1.0, 10.0])

    steps = np.array([r["step"] for r in trace])
    fig, ax = plt.subplots()
    for idx, temp in enumerate(temperatures):
        probs = [_softmax_first(np.array(r["forecast"]), temp) for r in trace]
        ax.plot(steps, probs, color=_COLORS[idx % len(_COLORS)],
                label=f"T={temp:g}")
    ax.set_xlim(steps.min(), steps.max())
    ax.set_xlabel("step")
    ax.set_ylabel("initial-attack probability")
    if spec.get("title"):
        ax.set_title(spec["title"])
    ax.legend(loc="best", fontsize=8)
    return _save(fig, spec["out"], spec["formats"])


RENDERERS = {
    "curves": render_curves,
    "attack_bars": render_attack_bars,
    "step_probs": render_step_probs,
}


def render(spec: dict) -> list[str]:
    return RENDERERS[spec["figure"]](spec)
