"""Behavioural and internal-dynamics analyses of episode logs.

The unit of analysis is the patch encounter: the steps from first entering a
freshly refreshed patch to first leaving it. Encounters still open when the
episode ends are kept but flagged ``truncated`` and dropped by every analysis.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import stats
from .errors import DegenerateDesignError, DependencyError, SampleSizeError
from .optimal import discounted_mvt_leave_step, empirical_mvt_leave_step, mvt_leave_step

log = logging.getLogger(__name__)

QUARTILES = ("Earliest", "Early", "Late", "Latest")
TRACE_PAD = 12  # rows kept either side of a visit; covers a 10-step margin plus one for differencing


@dataclass(frozen=True)
class PatchEncounter:
    episode_id: str
    agent_id: str
    patch_id: int
    patch_distance: float
    entry_step: int
    exit_step: int | None
    leave_step: int
    rewards: np.ndarray = field(repr=False)
    state_trace: np.ndarray | None = field(default=None, repr=False)
    pad: int = TRACE_PAD
    truncated: bool = False
    revisit_steps: int = 0
    gamma: float | None = None
    quartile: int | None = None  # 0..3, index into QUARTILES

    @property
    def quartile_label(self):
        return None if self.quartile is None else QUARTILES[self.quartile]

    def entry_row(self):
        return self.pad

    def exit_row(self):
        return self.pad + self.leave_step


def _runs(inside):
    """(patch, start, stop) for each maximal run of steps inside one patch."""
    runs = []
    n = len(inside)
    i = 0
    while i < n:
        j = inside[i]
        if j < 0:
            i += 1
            continue
        k = i
        while k < n and inside[k] == j:
            k += 1
        runs.append((int(j), i, k))
        i = k
    return runs


def _padded(states, start, stop, pad):
    n, d = states.shape
    out = np.full((stop - start + 2 * pad, d), np.nan)
    lo, hi = max(0, start - pad), min(n, stop + pad)
    out[lo - (start - pad) : hi - (start - pad)] = states[lo:hi]
    return out


def extract_encounters(logs, pad=TRACE_PAD):
    """Split every log into patch encounters (including flagged truncated ones)."""
    encounters = []
    for ep, episode in enumerate(logs):
        episode_id = episode.episode_id or f"episode{ep}"
        gamma = None
        if episode.agent and episode.agent.get("kind") == "planner":
            gamma = episode.agent.get("gamma")
        states = episode.agent_state
        n = len(episode)
        open_enc = None  # index into encounters of the current one, for revisits
        for patch, start, stop in _runs(episode.inside):
            fresh = episode.depletion[start, patch] == 1
            if not fresh:
                if open_enc is not None and encounters[open_enc].patch_id == patch:
                    enc = encounters[open_enc]
                    encounters[open_enc] = replace(
                        enc, revisit_steps=enc.revisit_steps + (stop - start)
                    )
                continue
            truncated = stop >= n
            encounters.append(
                PatchEncounter(
                    episode_id=episode_id,
                    agent_id=episode.agent_id,
                    patch_id=patch,
                    patch_distance=float(episode.patch_distance),
                    entry_step=int(episode.step[start]),
                    exit_step=None if truncated else int(episode.step[stop]),
                    leave_step=stop - start,
                    rewards=episode.reward[start:stop].copy(),
                    state_trace=None if states is None else _padded(states, start, stop, pad),
                    pad=pad,
                    truncated=truncated,
                    gamma=gamma,
                )
            )
            open_enc = len(encounters) - 1
    return encounters


def completed(encounters):
    return [e for e in encounters if not e.truncated]


def _distance_groups(encounters):
    groups = defaultdict(list)
    for e in encounters:
        groups[e.patch_distance].append(e)
    return dict(sorted(groups.items()))


def travel_segments(encounters):
    """(patch_distance, steps) for each travel leg between consecutive encounters.

    Needs the original step numbering, so re-entries into the depleted patch
    between two encounters are subtracted via ``revisit_steps``.
    """
    legs = []
    by_episode = defaultdict(list)
    for e in encounters:
        by_episode[e.episode_id].append(e)
    for eps in by_episode.values():
        eps.sort(key=lambda e: e.entry_step)
        for a, b in zip(eps, eps[1:]):
            if a.exit_step is None:
                continue
            legs.append((a.patch_distance, b.entry_step - a.exit_step - a.revisit_steps))
    return legs


def estimate_travel_steps(encounters):
    """Mean travel steps between encounters, keyed by patch distance."""
    legs = travel_segments(encounters)
    if not legs:
        raise DependencyError("no completed travel segments in the logs")
    grouped = defaultdict(list)
    for d, steps in legs:
        grouped[d].append(steps)
    return {d: float(np.mean(v)) for d, v in sorted(grouped.items())}


# -- behaviour ---------------------------------------------------------------


def leaving_time_table(encounters):
    """Rows of (agent, distance, mean leave step, encounter count)."""
    cells = defaultdict(list)
    for e in completed(encounters):
        cells[(e.agent_id, e.patch_distance)].append(e.leave_step)
    return [
        {"agent": a, "distance": d, "mean_leave_step": float(np.mean(v)), "encounters": len(v)}
        for (a, d), v in sorted(cells.items())
    ]


def _regress_on_distance(rows, key):
    distances = {r["distance"] for r in rows}
    if len(distances) < 2:
        raise DegenerateDesignError("regression against distance needs at least 2 distances")
    return stats.linear_regression([r["distance"] for r in rows], [r[key] for r in rows])


def leaving_time_regression(encounters):
    """OLS of per-agent mean leave step on patch distance (metres)."""
    return _regress_on_distance(leaving_time_table(encounters), "mean_leave_step")


def score_table(logs):
    cells = defaultdict(list)
    for episode in logs:
        cells[(episode.agent_id, float(episode.patch_distance))].append(episode.score)
    return [
        {"agent": a, "distance": d, "mean_score": float(np.mean(v)), "episodes": len(v)}
        for (a, d), v in sorted(cells.items())
    ]


def score_regression(logs):
    """OLS of per-agent mean episode score on patch distance."""
    return _regress_on_distance(score_table(logs), "mean_score")


# -- optimality --------------------------------------------------------------


@dataclass
class GapReport:
    solver: str
    rows: list  # per (agent, distance)
    agent_gaps: dict  # agent -> mean gap across distances
    test: stats.TTest | None  # across agents
    distance_tests: dict  # distance -> (TTest, significant at the Bonferroni level)
    alpha: float
    inputs: dict


def solver_leave_step(solver, tau, gamma=None, rho=None, n0=None, lam=None):
    kw = {}
    if n0 is not None:
        kw["n0"] = n0
    if lam is not None:
        kw["lam"] = lam
    if solver == "mvt":
        return mvt_leave_step(tau, **kw).leave_step
    if solver == "dmvt":
        if gamma is None:
            raise DependencyError("discounted MVT gap needs a discount factor")
        return discounted_mvt_leave_step(tau, gamma, **kw).leave_step
    if solver == "empirical":
        if rho is None:
            raise DependencyError("empirical MVT gap needs the observed reward rate")
        return empirical_mvt_leave_step(rho, **kw)
    raise ValueError(f"unknown solver {solver!r}")


def optimality_gap(encounters, tau_by_distance, solver="mvt", gamma=None, rho_by_cell=None,
                   alpha=0.05):
    """Observed minus optimal leave step per agent and distance, with t tests.

    ``tau_by_distance`` maps distance to mean travel steps (rounded before
    solving). ``gamma`` defaults to each planner agent's own discount factor.
    For ``solver="empirical"``, ``rho_by_cell`` maps (agent, distance) to the
    observed mean reward per step.
    """
    done = completed(encounters)
    cells = defaultdict(list)
    for e in done:
        cells[(e.agent_id, e.patch_distance)].append(e)
    rows = []
    per_distance = defaultdict(list)
    for (agent, d), encs in sorted(cells.items()):
        if d not in tau_by_distance:
            raise DependencyError(f"no travel estimate for distance {d}")
        tau = int(math.floor(tau_by_distance[d] + 0.5))
        g = gamma if gamma is not None else encs[0].gamma
        rho = None if rho_by_cell is None else rho_by_cell.get((agent, d))
        optimum = solver_leave_step(solver, tau, gamma=g, rho=rho)
        leaves = np.array([e.leave_step for e in encs], dtype=float)
        rows.append(
            {
                "agent": agent,
                "distance": d,
                "tau": tau,
                "gamma": 1.0 if solver == "mvt" else g,
                "optimal_leave_step": optimum,
                "mean_leave_step": float(leaves.mean()),
                "gap": float(leaves.mean() - optimum),
                "encounters": len(encs),
            }
        )
        per_distance[d].extend((leaves - optimum).tolist())

    agent_gaps = defaultdict(list)
    for r in rows:
        agent_gaps[r["agent"]].append(r["gap"])
    agent_gaps = {a: float(np.mean(v)) for a, v in agent_gaps.items()}
    test = None
    if len(agent_gaps) >= 2:
        test = stats.t_test_one_sample(list(agent_gaps.values()), 0.0)
    corrected = stats.bonferroni(alpha, max(1, len(per_distance)))
    distance_tests = {}
    for d, gaps in sorted(per_distance.items()):
        if len(gaps) >= 2:
            t = stats.t_test_one_sample(gaps, 0.0)
            distance_tests[d] = (t, t.p < corrected)
    return GapReport(
        solver=solver,
        rows=rows,
        agent_gaps=agent_gaps,
        test=test,
        distance_tests=distance_tests,
        alpha=corrected,
        inputs={"tau": {str(k): v for k, v in tau_by_distance.items()}, "gamma": gamma},
    )


def empirical_rates(logs):
    """Observed mean reward per step, keyed by (agent, distance)."""
    cells = defaultdict(list)
    for episode in logs:
        cells[(episode.agent_id, float(episode.patch_distance))].append(
            episode.score / len(episode)
        )
    return {k: float(np.mean(v)) for k, v in cells.items()}


# -- dynamics ----------------------------------------------------------------


def quartile_split(encounters):
    """Label completed encounters by leave-step quartile within each agent and distance.

    Percentiles interpolate linearly between order statistics; values equal
    to a boundary fall in the lower quartile.
    """
    groups = defaultdict(list)
    for e in completed(encounters):
        groups[(e.agent_id, e.patch_distance)].append(e)
    out = []
    for key, encs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if len(encs) < 4:
            raise SampleSizeError(
                f"quartile split needs >= 4 encounters per distance; {key} has {len(encs)}"
            )
        leaves = np.array([e.leave_step for e in encs], dtype=float)
        bounds = np.percentile(leaves, [25, 50, 75])
        labels = np.searchsorted(bounds, leaves, side="left")
        out.extend(replace(e, quartile=int(q)) for e, q in zip(encs, labels))
    return out


def _require_traces(encounters):
    if not encounters:
        raise SampleSizeError("no encounters")
    if any(e.state_trace is None for e in encounters):
        raise DependencyError("encounters carry no agent state traces")
    if any(e.quartile is None for e in encounters):
        raise DependencyError("encounters need quartile labels; run quartile_split first")


def _quartile_medians(encounters):
    groups = defaultdict(list)
    for e in encounters:
        groups[(e.agent_id, e.patch_distance, e.quartile)].append(e.leave_step)
    return {k: float(np.median(v)) for k, v in groups.items()}


def _slope_at(e, t, alignment, state_index):
    """First difference of the state at aligned step ``t``, or None if unavailable."""
    base = e.entry_row() if alignment == "entry" else e.exit_row()
    row = base + t
    if row < 1 or row >= len(e.state_trace):
        return None
    v = e.state_trace[row, state_index] - e.state_trace[row - 1, state_index]
    return None if math.isnan(v) else float(v)


@dataclass
class SlidingResult:
    alignment: str
    steps: np.ndarray
    results: list  # RegressionResult or None per step
    significant: np.ndarray
    threshold: float
    state_index: int

    def window(self, in_patch=True):
        """Aligned steps flagged significant (in-patch side only by default)."""
        keep = self.steps >= 0 if self.alignment == "entry" else self.steps < 0
        if not in_patch:
            keep = np.ones_like(keep)
        return [int(t) for t, s, k in zip(self.steps, self.significant, keep) if s and k]

    def longest_run(self):
        best = cur = 0
        start = best_start = None
        for i, s in enumerate(self.significant):
            if s:
                if cur == 0:
                    start = i
                cur += 1
                if cur > best:
                    best, best_start = cur, start
            else:
                cur = 0
        if best == 0:
            return []
        return [int(t) for t in self.steps[best_start : best_start + best]]

    def rows(self):
        out = []
        for t, r, s in zip(self.steps, self.results, self.significant):
            row = {"alignment": self.alignment, "step": int(t), "significant": bool(s)}
            row.update(r.row() if r is not None else dict.fromkeys(
                ("slope", "intercept", "slope_se", "t", "p", "n"), ""))
            out.append(row)
        return out


def sliding_slope_regression(encounters, alignment="entry", in_patch_window=40, margin=10,
                             state_index=0, alpha=0.05):
    """Regress the per-step slope of one state coordinate on quartile (1-4) at each aligned step.

    Entry-aligned steps run from ``-margin`` to ``in_patch_window - 1``;
    in-patch steps only use encounters still in the patch and not past
    their quartile's median leave step. Exit-aligned steps run from
    ``-in_patch_window`` to ``margin - 1``, step 0 being the first step
    outside the patch.
    """
    if alignment not in ("entry", "exit"):
        raise ValueError("alignment must be 'entry' or 'exit'")
    _require_traces(encounters)
    if margin + 1 > min(e.pad for e in encounters):
        log.info("margin %d exceeds stored trace padding; outer steps truncated", margin)
    medians = _quartile_medians(encounters)
    if alignment == "entry":
        steps = np.arange(-margin, in_patch_window)
    else:
        steps = np.arange(-in_patch_window, margin)
    threshold = stats.bonferroni(alpha, len(steps))
    results, significant = [], []
    short = 0
    for t in steps:
        xs, ys = [], []
        for e in encounters:
            if alignment == "entry" and t >= 0:
                if t >= e.leave_step or t >= medians[(e.agent_id, e.patch_distance, e.quartile)]:
                    continue
            if alignment == "exit" and t < 0 and -t > e.leave_step:
                continue
            v = _slope_at(e, int(t), alignment, state_index)
            if v is None:
                short += 1
                continue
            xs.append(e.quartile + 1)
            ys.append(v)
        res = None
        if len(xs) >= 3 and len(set(xs)) >= 2:
            res = stats.linear_regression(xs, ys)
        results.append(res)
        significant.append(res is not None and res.p < threshold)
    if short:
        log.info("sliding regression: %d trace samples fell outside stored traces", short)
    return SlidingResult(alignment, steps, results, np.array(significant), threshold, state_index)


def encounter_mean_slope(e, window, state_index):
    """Mean entry-aligned slope over ``window`` steps the encounter actually reached."""
    vals = []
    for t in window:
        if t >= e.leave_step:
            continue
        v = _slope_at(e, int(t), "entry", state_index)
        if v is not None:
            vals.append(v)
    return float(np.mean(vals)) if vals else None


def quartile_mean_slopes(encounters, window, state_index):
    """Mean per-encounter slope over ``window``, one value per quartile."""
    groups = defaultdict(list)
    for e in encounters:
        v = encounter_mean_slope(e, window, state_index)
        if v is not None:
            groups[e.quartile].append(v)
    return [float(np.mean(groups[q])) if groups[q] else float("nan") for q in range(4)]


def slope_vs_distance_regression(encounters, window, state_index):
    """OLS of per-encounter mean slope over the significant window on patch distance."""
    if not window:
        raise DependencyError("no significant steps: the slope window is empty")
    xs, ys = [], []
    for e in encounters:
        v = encounter_mean_slope(e, window, state_index)
        if v is not None:
            xs.append(e.patch_distance)
            ys.append(v)
    if len(set(xs)) < 2:
        raise DegenerateDesignError("slope-vs-distance regression needs at least 2 distances")
    return stats.linear_regression(xs, ys)


def activity_range(e, state_index):
    return float(e.state_trace[e.exit_row(), state_index] - e.state_trace[e.entry_row(), state_index])


def activity_range_regression(encounters, state_index):
    """OLS of (exit activity - entry activity) on patch distance."""
    done = [e for e in completed(encounters) if e.state_trace is not None]
    xs = [e.patch_distance for e in done]
    ys = [activity_range(e, state_index) for e in done]
    if len(set(xs)) < 2:
        raise DegenerateDesignError("activity range regression needs at least 2 distances")
    return stats.linear_regression(xs, ys)


@dataclass
class ExitAnova:
    anova: stats.Anova
    pairwise: list  # dicts: a, b, t, p, significant
    alpha: float


def exit_activity_anova(encounters, state_index, alpha=0.05):
    """One-way ANOVA of exit-step activity across quartiles, with Bonferroni pairwise tests."""
    _require_traces(encounters)
    groups = defaultdict(list)
    for e in encounters:
        groups[e.quartile].append(float(e.state_trace[e.exit_row(), state_index]))
    present = sorted(groups)
    result = stats.anova_oneway([groups[q] for q in present])
    pairs = [(a, b) for i, a in enumerate(present) for b in present[i + 1 :]]
    corrected = stats.bonferroni(alpha, max(1, len(pairs)))
    table = []
    for a, b in pairs:
        t = stats.t_test_two_sample(groups[a], groups[b])
        table.append(
            {"a": QUARTILES[a], "b": QUARTILES[b], "t": t.t, "p": t.p, "significant": t.p < corrected}
        )
    return ExitAnova(result, table, corrected)


def state_pca(encounters):
    """PCA over the stacked in-patch state rows of all encounters."""
    rows = [e.state_trace[e.entry_row() : e.exit_row()] for e in encounters
            if e.state_trace is not None]
    if not rows:
        raise DependencyError("encounters carry no agent state traces")
    return stats.pca(np.vstack(rows))


def project_encounters(encounters, result):
    """Replace each state trace by its principal-component scores."""
    out = []
    for e in encounters:
        centered = e.state_trace - result.mean
        out.append(replace(e, state_trace=centered @ result.components.T))
    return out


# -- reports -----------------------------------------------------------------

ANALYSES = (
    "encounters",
    "travel",
    "leaving-times",
    "scores",
    "optimality",
    "dynamics",
)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in header})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_analyses(logs, out_dir, analyses=ANALYSES, solvers=None, state_index=0):
    """Run the selected analyses, write one CSV each plus ``summary.json``.

    ``solvers`` lists dicts ``{"kind": "mvt"|"dmvt"|"empirical", "gamma": float|None}``
    for the optimality analysis, which is skipped with an error if absent.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    analyses = list(analyses)
    unknown = set(analyses) - set(ANALYSES)
    if unknown:
        raise ValueError(f"unknown analyses: {sorted(unknown)}")
    encounters = extract_encounters(logs)
    summary = {
        "episodes": len(logs),
        "encounters": len(completed(encounters)),
        "truncated_encounters": sum(e.truncated for e in encounters),
        "notes": {
            "regressions": "ordinary least squares on per-agent means (no random effects)",
            "sliding_regressions": "encounters pooled across distances after per-distance quartile split",
        },
    }
    written = []

    if "encounters" in analyses:
        written.append(_write_csv(
            out / "encounters.csv",
            ["episode", "agent", "distance", "patch", "entry_step", "exit_step", "leave_step",
             "revisit_steps", "truncated"],
            [{"episode": e.episode_id, "agent": e.agent_id, "distance": e.patch_distance,
              "patch": e.patch_id, "entry_step": e.entry_step,
              "exit_step": "" if e.exit_step is None else e.exit_step,
              "leave_step": e.leave_step, "revisit_steps": e.revisit_steps,
              "truncated": e.truncated} for e in encounters],
        ))

    tau = None
    if "travel" in analyses or "optimality" in analyses:
        tau = estimate_travel_steps(encounters)
        summary["travel_steps"] = tau
        if "travel" in analyses:
            written.append(_write_csv(
                out / "travel.csv", ["distance", "mean_travel_steps"],
                [{"distance": d, "mean_travel_steps": v} for d, v in tau.items()],
            ))

    if "leaving-times" in analyses:
        table = leaving_time_table(encounters)
        reg = leaving_time_regression(encounters)
        summary["leaving_time_regression"] = reg.row()
        written.append(_write_csv(
            out / "leaving_times.csv", ["agent", "distance", "mean_leave_step", "encounters"], table))

    if "scores" in analyses:
        table = score_table(logs)
        reg = score_regression(logs)
        summary["score_regression"] = reg.row()
        written.append(_write_csv(out / "scores.csv", ["agent", "distance", "mean_score", "episodes"], table))

    if "optimality" in analyses:
        if not solvers:
            raise DependencyError("optimality analysis needs solver settings (kind and gamma)")
        rates = empirical_rates(logs)
        gap_rows = []
        summary["optimality"] = {}
        for solver in solvers:
            kind, gamma = solver["kind"], solver.get("gamma")
            report = optimality_gap(encounters, tau, solver=kind, gamma=gamma, rho_by_cell=rates)
            key = kind if gamma is None else f"{kind}@{gamma}"
            summary["optimality"][key] = {
                "agent_gaps": report.agent_gaps,
                "t_test": None if report.test is None else report.test._asdict(),
                "distance_tests": {str(d): {"t": t.t, "p": t.p, "significant": sig}
                                   for d, (t, sig) in report.distance_tests.items()},
                "bonferroni_alpha": report.alpha,
                "inputs": {"tau": report.inputs["tau"], "gamma": gamma},
            }
            for r in report.rows:
                gap_rows.append({"solver": key, **r})
        written.append(_write_csv(
            out / "optimality_gaps.csv",
            ["solver", "agent", "distance", "tau", "gamma", "optimal_leave_step",
             "mean_leave_step", "gap", "encounters"], gap_rows))

    if "dynamics" in analyses:
        summary["dynamics"] = _dynamics(encounters, out, written, state_index)

    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=1, sort_keys=True) + "\n")
    written.append(out / "summary.json")
    return summary, written


def _dynamics(encounters, out, written, state_index):
    labelled = quartile_split([e for e in encounters if e.state_trace is not None])
    result = {"state_index": state_index}
    sliding_rows = []
    windows = {}
    for alignment in ("entry", "exit"):
        sl = sliding_slope_regression(labelled, alignment, state_index=state_index)
        sliding_rows.extend(sl.rows())
        windows[alignment] = sl.window()
        result[f"{alignment}_significant_steps"] = sl.window(in_patch=False)
        result[f"{alignment}_longest_run"] = sl.longest_run()
    written.append(_write_csv(
        out / "sliding_slopes.csv",
        ["alignment", "step", "slope", "intercept", "slope_se", "t", "p", "n", "significant"],
        sliding_rows))

    window = windows["entry"]
    result["quartile_mean_slopes"] = quartile_mean_slopes(labelled, window, state_index) if window else None
    try:
        result["slope_vs_distance"] = slope_vs_distance_regression(labelled, window, state_index).row()
    except (DependencyError, DegenerateDesignError) as exc:
        result["slope_vs_distance"] = str(exc)
    try:
        result["activity_range"] = activity_range_regression(labelled, state_index).row()
    except DegenerateDesignError as exc:
        result["activity_range"] = str(exc)

    anova = exit_activity_anova(labelled, state_index)
    result["exit_anova"] = {"F": anova.anova.F, "p": anova.anova.p,
                            "df": [anova.anova.df_between, anova.anova.df_within],
                            "pairwise": anova.pairwise}
    written.append(_write_csv(out / "exit_anova.csv", ["a", "b", "t", "p", "significant"], anova.pairwise))

    # quartile-averaged entry-aligned traces for plotting
    trace_rows = []
    for q in range(4):
        members = [e for e in labelled if e.quartile == q]
        if not members:
            continue
        for t in range(-10, 40):
            vals = [e.state_trace[e.entry_row() + t, state_index] for e in members
                    if t < e.leave_step and not math.isnan(e.state_trace[e.entry_row() + t, state_index])]
            if vals:
                trace_rows.append({"quartile": QUARTILES[q], "step": t, "mean": float(np.mean(vals)),
                                   "n": len(vals)})
    written.append(_write_csv(out / "quartile_traces.csv", ["quartile", "step", "mean", "n"], trace_rows))

    counts = defaultdict(int)
    for e in labelled:
        counts[QUARTILES[e.quartile]] += 1
    result["quartile_counts"] = dict(counts)

    p = state_pca(labelled)
    result["pca_explained_variance_ratio"] = p.explained_variance_ratio.tolist()
    written.append(_write_csv(
        out / "pca.csv", ["component", "explained_variance_ratio", "loadings"],
        [{"component": i + 1, "explained_variance_ratio": float(r),
          "loadings": " ".join(repr(float(v)) for v in c)}
         for i, (r, c) in enumerate(zip(p.explained_variance_ratio, p.components))]))
    return result
