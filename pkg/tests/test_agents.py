import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchforage.agents import (
    FORAGE,
    AgentParams,
    Forager,
    IdleAgent,
    RandomAgent,
    accumulator_update,
    ema_update,
    make_agent,
    navigate,
    threshold_decide,
)
from patchforage.env import N0, WorldConfig, patch_reward, run_episode
from patchforage.errors import ConfigError
from patchforage.optimal import average_rate, empirical_mvt_leave_step, mvt_leave_step


def episode(params, distance=8.0, seed=0, steps=3600):
    agent = Forager(params)
    log = run_episode(WorldConfig(patch_distance=distance, episode_steps=steps), agent, seed)
    return agent, log


class TestDecisionRules:
    def test_threshold_examples(self):
        assert threshold_decide(1 / 30, 0.02) == "stay"
        assert threshold_decide(0.01, 0.02) == "leave"

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-4, N0), st.floats(1e-4, N0))
    def test_raising_theta_never_delays_leaving(self, a, b):
        lo, hi = sorted((a, b))

        def leave_step(theta):
            n = 0
            while threshold_decide(patch_reward(n), theta) == "stay":
                n += 1
            return n

        assert leave_step(hi) <= leave_step(lo)

    def test_ema_examples(self):
        assert ema_update(0.0, 0.7, 1.0) == 0.7
        assert ema_update(0.3, 0.3, 0.01) == 0.3

    def test_ema_tracks_cycle_rate(self):
        T, tau, alpha = 80, 40, 0.005
        cycle = [0.0] * tau + [patch_reward(n) for n in range(T)]
        rate, trace = 0.0, []
        for _ in range(10 * 12):
            for r in cycle:
                rate = ema_update(rate, r, alpha)
                trace.append(rate)
        target = average_rate(T, tau)
        assert np.mean(trace[-len(cycle):]) == pytest.approx(target, rel=0.02)

    def test_ema_geometric_convergence(self):
        rate, alpha = 1.0, 0.1
        for k in range(1, 20):
            rate = ema_update(rate, 0.0, alpha)
            assert rate == pytest.approx((1 - alpha) ** k)

    def test_accumulator_noiseless_slope_grows(self):
        p = AgentParams(kind="accumulator", accum_leak=0.0, accum_gain=40.0)
        dv, trace = 0.0, []
        for n in range(200):
            dv = accumulator_update(dv, patch_reward(n), 0.012, p)
            trace.append(dv)
        assert np.all(np.diff(np.diff(trace)) > 0)

    def test_accumulator_update_formula(self):
        p = AgentParams(kind="accumulator", accum_leak=0.25, accum_gain=10.0)
        assert accumulator_update(2.0, 0.02, 0.01, p, noise=0.5) == pytest.approx(
            0.75 * 2.0 + 10.0 * (0.01 - 0.02) + 0.5
        )

    def test_accumulator_floor(self):
        p = AgentParams(kind="accumulator", accum_floor=0.0)
        assert accumulator_update(0.0, N0, 0.01, p) == 0.0


class TestNavigation:
    def test_dead_ahead(self):
        assert tuple(navigate((0.0, 0.0), 0.0, (5.0, 0.0))) == (1.0, 0.0, 0.0, 0.0, 0.0)

    def test_behind(self):
        a = navigate((0.0, 0.0), 0.0, (-5.0, 0.1))
        assert abs(a.rotate) == 1.0 and a.forward == 0.0

    def test_bounded(self):
        for heading in np.linspace(-3, 3, 13):
            a = navigate((1.0, 2.0), heading, (-4.0, 0.0))
            assert all(-1.0 <= v <= 1.0 for v in a)

    def test_travel_grows_with_distance(self):
        from patchforage.analysis import estimate_travel_steps, extract_encounters

        p = AgentParams(kind="threshold", theta=0.02)
        taus = []
        for d in (6.0, 8.0, 10.0, 12.0):
            _, log = episode(p, d, steps=1500)
            taus.append(estimate_travel_steps(extract_encounters([log]))[d])
        assert taus == sorted(taus) and len(set(taus)) == 4


class TestParams:
    def test_threshold_needs_theta(self):
        with pytest.raises(ConfigError):
            AgentParams(kind="threshold").validate()

    @pytest.mark.parametrize(
        "kw", [{"kind": "nope"}, {"gamma": 0.0}, {"gamma": 1.5}, {"ema_alpha": 0.0}, {"accum_noise_sd": -1.0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            AgentParams(**kw).validate()

    def test_dict_roundtrip(self):
        p = AgentParams(kind="planner", gamma=0.995, seed=3)
        assert AgentParams.from_dict(p.to_dict()).gamma == 0.995

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            make_agent({"kind": "threshold", "theta": 0.01, "bogus": 1})

    def test_make_controls(self):
        assert isinstance(make_agent({"kind": "random", "seed": 2}), RandomAgent)
        assert isinstance(make_agent({"kind": "idle"}), IdleAgent)


class TestClosedLoop:
    @pytest.mark.parametrize("theta", [0.0134, 0.018])
    def test_threshold_agent_matches_oracle(self, theta):
        agent, _ = episode(AgentParams(kind="threshold", theta=theta), steps=2000)
        want = empirical_mvt_leave_step(theta)
        assert agent.decisions
        assert all(abs(n - want) <= 1 for _, n in agent.decisions)

    def test_planner_undiscounted_matches_mvt(self):
        agent, _ = episode(AgentParams(kind="planner", gamma=1.0), steps=2500)
        # later encounters plan with the measured travel time
        for _, n in agent.decisions[2:]:
            assert abs(n - mvt_leave_step(agent.travel_estimate()).leave_step) <= 1

    def test_learner_adapts_to_distance(self):
        means = []
        for d in (6.0, 12.0):
            agent, _ = episode(AgentParams(kind="mvt_learner"), d, steps=3600)
            means.append(np.mean([n for _, n in agent.decisions[3:]]))
        assert means[1] > means[0]

    def test_gain_zero_never_leaves(self):
        agent, log = episode(AgentParams(kind="accumulator", accum_gain=0.0, accum_noise_sd=0.0), steps=1500)
        assert agent.decisions == []
        assert log.inside[-1] >= 0

    def test_accumulator_reset_and_bound(self):
        p = AgentParams(kind="accumulator", accum_noise_sd=0.0, accum_drift_sd=0.0)
        agent, log = episode(p, steps=2000)
        dv, rate, level = log.agent_state[:, 0], log.agent_state[:, 1], log.agent_state[:, 4]
        forage = log.agent_state[:, FORAGE]
        entries = np.flatnonzero(np.diff(forage) > 0) + 1
        assert len(entries) > 5
        for i in entries:
            # dv starts from zero and integrates the entry step only
            assert dv[i] == pytest.approx(p.accum_gain * (rate[i] - level[i] * N0))
        for step_no, _ in agent.decisions:
            assert dv[step_no - 1] >= p.accum_threshold
            assert dv[step_no - 2] < p.accum_threshold

    def test_absorbing_bound(self):
        p = AgentParams(kind="accumulator", accum_noise_sd=0.0, accum_absorbing=True)
        agent, log = episode(p, steps=1500)
        for step_no, _ in agent.decisions:
            assert log.agent_state[step_no - 1, 0] == p.accum_threshold

    def test_modes_alternate(self):
        _, log = episode(AgentParams(kind="mvt_learner"), steps=2000)
        forage = log.agent_state[:, FORAGE]
        changes = np.flatnonzero(np.diff(forage) != 0)
        # each switch flips the mode, starting from travel
        assert forage[0] == 0.0
        assert np.all(np.diff(forage[np.r_[0, changes + 1]]) != 0)

    def test_reproducible(self):
        a, la = episode(AgentParams(kind="accumulator", seed=4), seed=9, steps=1500)
        b, lb = episode(AgentParams(kind="accumulator", seed=4), seed=9, steps=1500)
        assert a.decisions == b.decisions
        np.testing.assert_array_equal(la.agent_state, lb.agent_state)

    def test_seeds_differ(self):
        a, _ = episode(AgentParams(kind="accumulator"), seed=1, steps=1500)
        b, _ = episode(AgentParams(kind="accumulator"), seed=2, steps=1500)
        assert a.decisions != b.decisions

    def test_random_agent_scores_little(self):
        scores = [run_episode(WorldConfig(), RandomAgent(s), s).score for s in range(3)]
        competent = episode(AgentParams(kind="mvt_learner"))[1].score
        assert max(scores) < 0.1 * competent

    def test_state_vector_dimension(self):
        agent, log = episode(AgentParams(kind="planner"), steps=10)
        assert log.agent_state.shape == (10, 5)
        assert math.isfinite(log.agent_state.sum())
