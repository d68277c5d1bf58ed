import numpy as np
import pytest

from patchforage.env import EpisodeLog, WorldConfig, patch_reward

ACCEPTANCE_LINES = []


def synthetic_log(inside, config=None, states=None, agent=None, episode_id="synthetic", seed=0):
    """Episode log from a per-step patch membership sequence (None or -1 = outside).

    Depletion and rewards follow the world's rules: a patch pays
    ``r(n)`` and counts up while occupied, and being in one patch resets the
    other's counter.
    """
    config = config or WorldConfig()
    n = len(inside)
    ins = np.array([-1 if v is None else v for v in inside], dtype=np.int64)
    depletion = np.zeros((n, 2), dtype=np.int64)
    reward = np.zeros(n)
    counts = [0, 0]
    for t, j in enumerate(ins):
        if j >= 0:
            reward[t] = patch_reward(counts[j], config.n0, config.lam)
            counts[j] += 1
            counts[1 - j] = 0
        depletion[t] = counts
    return EpisodeLog(
        config=config,
        seed=seed,
        agent=agent or {"kind": "scripted", "name": "scripted"},
        step=np.arange(1, n + 1, dtype=np.int64),
        pos=np.zeros((n, 2)),
        heading=np.zeros(n),
        action=np.zeros((n, 5)),
        reward=reward,
        inside=ins,
        depletion=depletion,
        agent_state=None if states is None else np.asarray(states, dtype=float),
        episode_id=episode_id,
    )


def visits(spans, n, patch_of=None):
    """Membership sequence with patch visits at ``[start, stop)`` index spans, alternating patches."""
    inside = [None] * n
    for k, (a, b) in enumerate(spans):
        j = k % 2 if patch_of is None else patch_of[k]
        for t in range(a, b):
            inside[t] = j
    return inside


@pytest.fixture
def make_log():
    return synthetic_log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
