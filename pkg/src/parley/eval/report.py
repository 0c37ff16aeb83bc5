"""Text tables, JSON summaries and figures for evaluation results."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SECTION = "=" * 72


def table_rows(reports) -> list[tuple]:
    """(scenario, variant, method, comm, cell, invalid) per report, in input order."""
    return [(r.scenario, r.variant, r.method, r.comm, r.cell(), r.invalid) for r in reports]


def render_table(reports) -> str:
    head = ("scenario", "variant", "method", "comm", "CR / SR (%)", "invalid")
    rows = [head] + [tuple(str(c) for c in row) for row in table_rows(reports)]
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_costs(reports) -> str:
    lines = []
    for r in reports:
        lat = ", ".join(f"{k} {v * 1000:.2f} ms" for k, v in r.latency.items() if v is not None) or "no model calls"
        msg = r.messages
        lines.append(
            f"{r.scenario}/{r.method}/{r.comm}: {lat}; {msg.get('messages', 0)} messages, "
            f"{msg.get('total_bytes', 0)} B, {msg.get('bandwidth_mbps', 0.0):.6f} Mbps")
    return "\n".join(lines)


def render_report(reports) -> str:
    """Delimited plain-text report: results table, then cost figures."""
    return "\n".join([SECTION, "RESULTS", SECTION, render_table(reports), SECTION, "COSTS", SECTION,
                      render_costs(reports), SECTION])


def write_summary(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1) + "\n")
    return path


def summary_rows(path) -> list[dict]:
    """Flat rows from a JSON summary written by ``write_summary``."""
    out = []
    for d in json.loads(Path(path).read_text()):
        row = {k: d.get(k) for k in ("scenario", "variant", "method", "comm", "cell", "invalid_episodes")}
        for key in ("cr", "sr", "tr"):
            agg = d.get(key) or {}
            row[key] = agg.get("mean")
            row[key + "_std"] = agg.get("std")
        row["latency"] = d.get("latency", {})
        row["messages"] = d.get("messages", {})
        out.append(row)
    return out


def plot_rates(rows, path) -> Path:
    """Grouped bars of mean CR and SR with sample-std error bars."""
    labels = [f"{r['scenario']}\n{r['method']}/{r['comm']}" for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows)), 4))
    w = 0.38
    for off, key, color in ((-w / 2, "cr", "tab:red"), (w / 2, "sr", "tab:green")):
        means = [100 * (r[key] or 0) for r in rows]
        errs = [100 * (r[key + "_std"] or 0) for r in rows]
        ax.bar([i + off for i in x], means, w, yerr=errs, capsize=3, color=color, label=key.upper())
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("rate (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_costs(rows, path) -> Path:
    """Mean per-call latency by stage and message bytes per decision step."""
    labels = [f"{r['scenario']}\n{r['method']}/{r['comm']}" for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(max(8, 1.6 * len(rows)), 4))
    stages = ("captioner", "reasoning", "decision")
    w = 0.8 / len(stages)
    for k, stage in enumerate(stages):
        vals = [1000 * (r["latency"].get(stage) or 0) for r in rows]
        a1.bar([i + (k - 1) * w for i in range(len(rows))], vals, w, label=stage)
    a1.set_ylabel("mean latency (ms)")
    a1.legend(fontsize=7)
    a2.bar(range(len(rows)), [r["messages"].get("bytes_per_decision_step", 0) for r in rows], color="tab:blue")
    a2.set_ylabel("message bytes per decision step")
    for a in (a1, a2):
        a.set_xticks(range(len(rows)))
        a.set_xticklabels(labels, fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_training(log_rows, path) -> Path:
    """Success per episode with knowledge resets marked."""
    ep = [r["episode"] for r in log_rows]
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.step(ep, [r["streak"] for r in log_rows], where="post", label="success streak")
    ax.scatter(ep, [1 if r["success"] else 0 for r in log_rows], s=10, c="k", label="success")
    for r in log_rows:
        if r.get("reset"):
            ax.axvline(r["episode"], color="tab:red", ls="--", lw=1)
    ax.set_xlabel("episode")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
