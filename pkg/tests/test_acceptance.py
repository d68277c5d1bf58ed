"""Acceptance criteria 1-9, each at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary. Run standalone with ``python tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from patchforage import analysis as A
from patchforage import stats
from patchforage.agents import AgentParams, Forager, RandomAgent, agent_info
from patchforage.env import (
    NOOP,
    N0,
    EpisodeLog,
    WorldConfig,
    WorldState,
    patch_reward,
    run_episode,
    step,
)
from patchforage.optimal import (
    discounted_mvt_leave_step,
    discounted_return_alternating,
    mvt_leave_step,
)

DISTANCES = (6.0, 8.0, 10.0, 12.0)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def simulate(params, episodes_per_distance, base_seed=0):
    logs = []
    i = 0
    for d in DISTANCES:
        cfg = WorldConfig(patch_distance=d)
        for _ in range(episodes_per_distance):
            logs.append(run_episode(cfg, Forager(params), base_seed + i, agent_info(params), f"ep{i:05d}"))
            i += 1
    return logs


# -- 1 -------------------------------------------------------------------------


def brute_force_argmax(tau, t_max=3600):
    best_T, best, gain = 1, -math.inf, 0.0
    for T in range(1, t_max + 1):
        gain += N0 * math.exp(-0.01 * (T - 1))
        rate = gain / (T + tau)
        if rate > best:
            best_T, best = T, rate
    return best_T


def test_criterion_1_mvt_exact():
    taus = list(range(0, 121, 10))
    t0 = time.perf_counter()
    got = [mvt_leave_step(t).leave_step for t in taus]
    elapsed = time.perf_counter() - t0
    want = [brute_force_argmax(t) for t in taus]
    record(1, got == want and elapsed < 1.0,
           f"T* over tau 0..120 = {got}; brute force agrees: {got == want}; {elapsed:.3f}s")


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_discounted_consistency():
    discounted_mvt_leave_step.cache_clear()
    t0 = time.perf_counter()
    t_star = mvt_leave_step(58).leave_step
    p1 = discounted_mvt_leave_step(58, 1.0).leave_step
    gammas = (0.99, 0.995, 0.998, 0.999)
    ps = [discounted_mvt_leave_step(58, g).leave_step for g in gammas]
    doubled = [discounted_mvt_leave_step(58, g, 10000).leave_step for g in gammas]
    elapsed = time.perf_counter() - t0
    ok = (
        abs(p1 - t_star) <= 2
        and all(a >= b for a, b in zip(ps, ps[1:]))
        and all(p >= t_star for p in ps)
        and all(abs(a - b) <= 1 for a, b in zip(ps, doubled))
        and elapsed < 30
    )
    record(2, ok, f"T*(58)={t_star}, P*(1.0)={p1}, P*(gamma)={ps}, horizon x2 -> {doubled}; {elapsed:.1f}s")


# -- 3 -------------------------------------------------------------------------


def term_by_term(m, P, tau, gamma, horizon, leave_now):
    total, weight, t = 0.0, 1.0, 0
    if not leave_now:
        total, weight, t = patch_reward(m), gamma, 1
    phase = 0
    while t < horizon:
        if phase >= tau:
            total += weight * N0 * math.exp(-0.01 * (phase - tau))
        weight *= gamma
        phase = (phase + 1) % (tau + P)
        t += 1
    return total


def test_criterion_3_discounted_return_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(100):
        m, P, tau = int(rng.integers(0, 300)), int(rng.integers(1, 200)), int(rng.integers(0, 121))
        gamma = float(rng.uniform(0.9, 0.9999))
        leave_now = bool(k % 2)
        got = discounted_return_alternating(m, P, tau, gamma, 5000, leave_now=leave_now)
        want = term_by_term(m, P, tau, gamma, 5000, leave_now)
        worst = max(worst, abs(got - want) / abs(want))
    record(3, worst < 1e-10, f"max relative error over 100 tuples = {worst:.2e}")


# -- 4 -------------------------------------------------------------------------


def gaps(report):
    return {r["distance"]: r["gap"] for r in report.rows}


def test_criterion_4_closed_loop_optimality():
    t0 = time.perf_counter()
    lines, ok = [], True
    for gamma in (1.0, 0.995):
        logs = simulate(AgentParams(kind="planner", gamma=gamma), 50, base_seed=0)
        encs = A.extract_encounters(logs)
        tau = A.estimate_travel_steps(encs)
        vs_mvt = gaps(A.optimality_gap(encs, tau, solver="mvt"))
        vs_own = gaps(A.optimality_gap(encs, tau, solver="dmvt", gamma=gamma))
        if gamma == 1.0:
            ok &= all(abs(g) <= 2 for g in vs_mvt.values())
        else:
            ok &= all(g > 0 for g in vs_mvt.values())
            ok &= all(abs(g) <= 2 for g in vs_own.values())
        fmt = lambda d: "{" + ", ".join(f"{k:g}m: {v:+.2f}" for k, v in d.items()) + "}"  # noqa: E731
        lines.append(f"gamma={gamma}: vs MVT {fmt(vs_mvt)}, vs own solver {fmt(vs_own)}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    record(4, ok, "; ".join(lines) + f"; 2 x 200 episodes in {elapsed:.0f}s")


# -- 5 -------------------------------------------------------------------------


def test_criterion_5_behavioural_adaptation():
    t0 = time.perf_counter()
    learner = simulate(AgentParams(kind="mvt_learner"), 50)
    control = simulate(AgentParams(kind="threshold", theta=0.0134), 50)
    enc_l = A.extract_encounters(learner)
    leave = A.leaving_time_regression(enc_l)
    score = A.score_regression(learner)
    ctrl = A.leaving_time_regression(A.extract_encounters(control))
    elapsed = time.perf_counter() - t0
    ok = (
        leave.slope > 0 and leave.p < 0.05
        and score.slope < 0 and score.p < 0.05
        and not ctrl.p < 0.05
        and elapsed < 600
    )
    record(5, ok,
           f"learner leave b={leave.slope:.2f}+-{leave.slope_se:.2f} p={leave.p:.2g}; "
           f"score b={score.slope:.2f}+-{score.slope_se:.2f} p={score.p:.2g}; "
           f"threshold control b={ctrl.slope:.2f} p={ctrl.p:.2g}; {elapsed:.0f}s")


# -- 6 -------------------------------------------------------------------------


def planted_encounters(per_quartile=250, effect=0.25, noise=1.0, seed=6):
    rng = np.random.default_rng(seed)
    pad = A.TRACE_PAD
    encs = []
    for q in range(4):
        for k in range(per_quartile):
            leave = 60 + 10 * q + k % 10  # quartile medians beyond the 40-step window
            diffs = rng.normal(0.0, noise, leave + 2 * pad)
            diffs[pad + 5 : pad + 24] -= effect * (q + 1)
            encs.append(A.PatchEncounter(
                episode_id=f"s{q}-{k}", agent_id="synthetic", patch_id=k % 2,
                patch_distance=DISTANCES[k % 4], entry_step=100, exit_step=100 + leave,
                leave_step=leave, rewards=np.zeros(leave),
                state_trace=np.cumsum(diffs).reshape(-1, 1), pad=pad,
            ))
    return encs


def test_criterion_6_dynamics_recovery():
    res = A.sliding_slope_regression(A.quartile_split(planted_encounters()), "entry", state_index=0)
    flagged = res.window(in_patch=False)
    inside = [t for t in flagged if 5 <= t <= 23]
    outside = [t for t in flagged if not 5 <= t <= 23]
    run = res.longest_run()
    run_inside = all(5 <= t <= 23 for t in run)

    p = AgentParams(kind="accumulator", accum_noise_sd=0.0, accum_absorbing=True)
    logs = simulate(p, 10, base_seed=100)
    exit_p = A.exit_activity_anova(A.quartile_split(A.extract_encounters(logs)), 0).anova.p
    # for the record: the same agent without absorption keeps its discrete overshoot
    raw = simulate(AgentParams(kind="accumulator", accum_noise_sd=0.0), 10, base_seed=100)
    raw_p = A.exit_activity_anova(A.quartile_split(A.extract_encounters(raw)), 0).anova.p

    ok = len(run) >= 15 and run_inside and len(outside) <= 1 and exit_p > 0.05
    record(6, ok,
           f"planted window 5-23: longest significant run {run[0] if run else None}..{run[-1] if run else None} "
           f"({len(run)} steps), {len(inside)} flagged inside, {len(outside)} outside at p<{res.threshold:g}; "
           f"noiseless exit ANOVA p={exit_p:.3g} (non-absorbing overshoot variant p={raw_p:.2g})")


# -- 7 -------------------------------------------------------------------------


def test_criterion_7_accumulator_mechanism():
    logs = simulate(AgentParams(kind="accumulator"), 50, base_seed=7000)
    encs = A.quartile_split(A.extract_encounters(logs))
    counts = {d: sum(e.patch_distance == d for e in encs) for d in DISTANCES}
    res = A.sliding_slope_regression(encs, "entry", state_index=0)
    window = res.window()
    slopes = A.quartile_mean_slopes(encs, window, 0) if window else []
    decreasing = len(slopes) == 4 and all(a > b for a, b in zip(slopes, slopes[1:]))
    rng_reg = A.activity_range_regression(encs, 0)
    rate = {d: np.mean([e.state_trace[e.entry_row(), 1] for e in encs if e.patch_distance == d])
            for d in DISTANCES}
    ok = (
        min(counts.values()) >= 1000
        and decreasing
        and rng_reg.slope > 0 and rng_reg.p < 0.05
    )
    record(7, ok,
           f"encounters/distance {list(counts.values())}; window {window}; "
           f"quartile mean dv slopes {[round(s, 3) for s in slopes]}; "
           f"range b={rng_reg.slope:.3f}+-{rng_reg.slope_se:.3f} p={rng_reg.p:.2g}; "
           f"rate estimate at entry {[round(float(v), 5) for v in rate.values()]}")


# -- 8 -------------------------------------------------------------------------

T_TABLE = [(1, 12.706), (5, 2.571), (10, 2.228), (30, 2.042), (120, 1.980)]
F_TABLE = [(1, 10, 4.96), (2, 20, 3.49), (3, 30, 2.92), (5, 60, 2.37), (4, 120, 2.45)]


def test_criterion_8_statistics_kernel():
    rng = np.random.default_rng(8)
    identity = 0.0
    ft = 0.0
    for _ in range(50):
        x = rng.normal(size=30)
        y = 0.2 * x + rng.normal(size=30)
        identity = max(identity, abs(stats.linear_regression(x, y).p - stats.pearson(x, y)[1]))
        a, b = rng.normal(size=15), rng.normal(0.3, 1.0, size=12)
        f, t = stats.anova_oneway([a, b]), stats.t_test_two_sample(a, b)
        ft = max(ft, abs(f.F - t.t ** 2) / t.t ** 2)
    t_err = max(abs(stats.t_sf_two_sided(q, df) - 0.05) for df, q in T_TABLE)
    f_err = max(abs(stats.f_sf(q, n, d) - 0.05) for n, d, q in F_TABLE)
    X = rng.normal(size=(300, 5)) @ rng.normal(size=(5, 5))
    p = stats.pca(X)
    ortho = np.abs(p.components @ p.components.T - np.eye(5)).max()
    recon = np.abs(p.scores @ p.components + p.mean - X).max()
    ok = identity < 1e-10 and ft < 1e-10 and t_err < 1e-3 and f_err < 1e-3 and ortho < 1e-9 and recon < 1e-9
    record(8, ok,
           f"reg/Pearson p gap {identity:.1e}; F vs t^2 rel {ft:.1e}; t table err {t_err:.1e}; "
           f"F table err {f_err:.1e}; PCA ortho {ortho:.1e}, reconstruction {recon:.1e}")


# -- 9 -------------------------------------------------------------------------


def test_criterion_9_environment_contract(tmp_path):
    cfg = WorldConfig()
    checks = {}

    ratios = [patch_reward(n + 1) / patch_reward(n) for n in range(1000)]
    checks["geometric"] = max(abs(r - math.exp(-0.01)) for r in ratios) < 1e-12

    def state(pos, depletion):
        return WorldState(0, pos, 0.0, (0.0, 0.0), depletion, None, 0.0)

    s, r, _ = step(state((-4.0, 0.0), (0, 0)), NOOP, cfg)
    fresh = r == N0 and s.depletion == (1, 0)
    s, r, _ = step(state((4.0, 0.0), (30, 7)), NOOP, cfg)
    refresh = r == patch_reward(7) and s.depletion == (0, 8)
    s, _, _ = step(state((0.0, 0.0), (12, 0)), NOOP, cfg)  # out of both patches
    s, r, _ = step(state((-4.0, 0.0), s.depletion), NOOP, cfg)  # back into patch 0
    reentry = r == patch_reward(12) and s.depletion == (13, 0)
    checks["refresh"] = fresh and refresh and reentry

    log = run_episode(WorldConfig(patch_distance=6), Forager(AgentParams(kind="mvt_learner")), 3)
    total = 0.0
    for v in log.reward:
        total += v
    paid = all(rw == (patch_reward(dep[j] - 1) if j >= 0 else 0.0)
               for j, rw, dep in zip(log.inside, log.reward, log.depletion))
    checks["score"] = log.score == total and paid and log.score > 0

    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run_episode(cfg, RandomAgent(11), 5).to_jsonl(a)
    run_episode(cfg, RandomAgent(11), 5).to_jsonl(b)
    checks["bit_identical"] = a.read_bytes() == b.read_bytes() and EpisodeLog.from_jsonl(a).score == \
        EpisodeLog.from_jsonl(b).score

    checks["bonferroni"] = stats.bonferroni(0.05, 50) == 0.001
    record(9, all(checks.values()), ", ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in checks.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
