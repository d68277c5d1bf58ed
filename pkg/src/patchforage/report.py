"""SVG figures drawn from the analysis CSVs.

Output is byte-stable across runs: the SVG hash salt is fixed and no date
metadata is written.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import QUARTILES  # noqa: E402
from .optimal import discounted_mvt_leave_step, mvt_leave_step  # noqa: E402

log = logging.getLogger(__name__)

DEFAULT_GAMMAS = (0.99, 0.995, 0.998, 0.999)
FIGURES = ("score_vs_distance", "leave_steps", "rate_curves", "indifference_curves", "quartile_traces")
_NEEDS = {
    "score_vs_distance": ("scores.csv",),
    "leave_steps": ("leaving_times.csv", "travel.csv"),
    "rate_curves": ("travel.csv",),
    "indifference_curves": ("travel.csv",),
    "quartile_traces": ("quartile_traces.csv", "sliding_slopes.csv"),
}


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _tau_table(rows):
    return {float(r["distance"]): int(math.floor(float(r["mean_travel_steps"]) + 0.5)) for r in rows}


def score_vs_distance(tables, path):
    fig, ax = plt.subplots(figsize=(4, 3))
    by_agent = defaultdict(list)
    for r in tables["scores.csv"]:
        by_agent[r["agent"]].append((float(r["distance"]), float(r["mean_score"])))
    for agent, pts in sorted(by_agent.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=agent)
    ax.set_xlabel("patch distance (m)")
    ax.set_ylabel("mean episode score")
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def leave_steps(tables, path, gammas=DEFAULT_GAMMAS):
    fig, ax = plt.subplots(figsize=(4, 3))
    by_agent = defaultdict(list)
    for r in tables["leaving_times.csv"]:
        by_agent[r["agent"]].append((float(r["distance"]), float(r["mean_leave_step"])))
    for agent, pts in sorted(by_agent.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=agent)
    tau = _tau_table(tables["travel.csv"])
    ds = sorted(tau)
    ax.plot(ds, [mvt_leave_step(tau[d]).leave_step for d in ds], "k--", label="MVT")
    for g in gammas:
        ax.plot(ds, [discounted_mvt_leave_step(tau[d], g).leave_step for d in ds], ":",
                label=f"discounted MVT, gamma={g}")
    ax.set_xlabel("patch distance (m)")
    ax.set_ylabel("patch leaving step")
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def rate_curves(tables, path):
    fig, ax = plt.subplots(figsize=(4, 3))
    for d, t in sorted(_tau_table(tables["travel.csv"]).items()):
        sol = mvt_leave_step(t, t_max=400)
        ax.plot(sol.rate_curve[:, 0], sol.rate_curve[:, 1], label=f"{d:g} m (tau={t})")
        ax.plot([sol.leave_step], [sol.average_rate], "k.")
    ax.set_xlabel("steps in patch")
    ax.set_ylabel("average reward per step")
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def indifference_curves(tables, path, gammas=DEFAULT_GAMMAS):
    fig, ax = plt.subplots(figsize=(4, 3))
    tau = _tau_table(tables["travel.csv"])
    t = tau[sorted(tau)[len(tau) // 2]]
    for g in (1.0, *gammas):
        curve = discounted_mvt_leave_step(t, g).indifference_curve[:400]
        ax.plot(curve[:, 0], curve[:, 1], label=f"gamma={g}")
    ax.plot([1, 400], [1, 400], "k--", lw=0.8)
    ax.set_xlabel("assumed future patch steps P")
    ax.set_ylabel("indifference step m*(P)")
    ax.set_title(f"tau = {t}", fontsize=8)
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def quartile_traces(tables, path):
    fig, ax = plt.subplots(figsize=(4, 3))
    series = defaultdict(list)
    for r in tables["quartile_traces.csv"]:
        series[r["quartile"]].append((int(r["step"]), float(r["mean"])))
    for q in QUARTILES:
        if q in series:
            pts = sorted(series[q])
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=q)
    sig = [int(r["step"]) for r in tables["sliding_slopes.csv"]
           if r["alignment"] == "entry" and r["significant"] == "True"]
    if sig:
        top = ax.get_ylim()[1]
        ax.plot(sig, [top] * len(sig), "s", color="tab:blue", ms=3)
    ax.axvline(0, color="k", lw=0.8)
    ax.set_xlabel("steps from patch entry")
    ax.set_ylabel("mean state")
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


_DRAW = {
    "score_vs_distance": score_vs_distance,
    "leave_steps": leave_steps,
    "rate_curves": rate_curves,
    "indifference_curves": indifference_curves,
    "quartile_traces": quartile_traces,
}


def make_figures(analysis_dir, out_dir=None):
    """Draw every figure whose input CSVs exist; returns (written paths, skipped names)."""
    src = Path(analysis_dir)
    dst = Path(out_dir) if out_dir else src / "figures"
    dst.mkdir(parents=True, exist_ok=True)
    written, skipped = [], []
    with plt.rc_context({"svg.hashsalt": "patchforage", "svg.fonttype": "path"}):
        for name in FIGURES:
            missing = [f for f in _NEEDS[name] if not (src / f).exists()]
            if missing:
                log.warning("skipping %s: missing %s", name, ", ".join(missing))
                skipped.append(name)
                continue
            tables = {f: _read(src / f) for f in _NEEDS[name]}
            written.append(_DRAW[name](tables, dst / f"{name}.svg"))
    return written, skipped
