"""Optimal patch-leaving times, with and without temporal discounting.

Everything is discrete time. The undiscounted solution maximises the long-run
reward rate of a schedule that alternates ``T`` patch steps with ``tau``
travel steps. The discounted solution compares the discounted return of
staying one more step against leaving now, assuming the future alternates
between a fixed patch time ``P`` and ``tau`` travel steps, and looks for the
``P`` that is consistent with its own indifference point.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .env import DECAY, EPISODE_STEPS, N0, patch_reward
from .errors import SolverError

HORIZON = 5000


def cumulative_patch_reward(T, n0=N0, lam=DECAY):
    """Total reward from ``T`` consecutive steps in a fresh patch."""
    if T <= 0:
        return 0.0
    return n0 * math.expm1(-lam * T) / math.expm1(-lam)


def average_rate(T, tau, n0=N0, lam=DECAY):
    """Reward per step of a schedule alternating ``T`` patch and ``tau`` travel steps."""
    if T < 1 or tau < 0:
        raise ValueError("average_rate needs T >= 1 and tau >= 0")
    return cumulative_patch_reward(T, n0, lam) / (T + tau)


@dataclass
class MvtSolution:
    leave_step: int
    average_rate: float
    tau: int
    rate_curve: np.ndarray = field(repr=False)  # rows of (T, R(T))

    def to_dict(self):
        return {
            "kind": "mvt",
            "gamma": 1.0,
            "tau": self.tau,
            "leave_step": self.leave_step,
            "average_rate": self.average_rate,
            "rate_curve": self.rate_curve.tolist(),
        }


@dataclass
class DiscountedMvtSolution:
    leave_step: int
    gamma: float
    tau: int
    horizon: int
    crossing: float  # interpolated fixed point before rounding
    indifference_curve: np.ndarray = field(repr=False)  # rows of (P, m*(P)); nan = never leave

    def to_dict(self):
        curve = [[p, None if math.isnan(m) else m] for p, m in self.indifference_curve.tolist()]
        return {
            "kind": "dmvt",
            "gamma": self.gamma,
            "tau": self.tau,
            "horizon": self.horizon,
            "leave_step": self.leave_step,
            "crossing": self.crossing,
            "indifference_curve": curve,
        }


def mvt_leave_step(tau, n0=N0, lam=DECAY, t_max=EPISODE_STEPS):
    """Patch time maximising the average reward rate; exhaustive over ``[1, t_max]``."""
    if tau < 0 or t_max < 1:
        raise ValueError("mvt_leave_step needs tau >= 0 and t_max >= 1")
    T = np.arange(1, t_max + 1)
    gains = n0 * np.expm1(-lam * T) / math.expm1(-lam)
    rates = gains / (T + tau)
    best = int(np.argmax(rates))  # first maximum, i.e. smallest T on ties
    return MvtSolution(
        leave_step=int(T[best]),
        average_rate=float(rates[best]),
        tau=int(tau),
        rate_curve=np.column_stack([T, rates]),
    )


def empirical_mvt_leave_step(rho, n0=N0, lam=DECAY):
    """First in-patch step whose reward falls strictly below the rate ``rho``."""
    if not rho > 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    if rho > n0:
        raise ValueError(f"rho={rho} exceeds the fresh-patch reward n0={n0}")
    n = max(0, math.floor(math.log(n0 / rho) / lam) + 1)
    # settle float rounding against the defining inequality
    while n > 0 and patch_reward(n - 1, n0, lam) < rho:
        n -= 1
    while patch_reward(n, n0, lam) >= rho:
        n += 1
    return n


def _leave_stream(P, tau, length, n0, lam):
    cycle = np.concatenate([np.zeros(tau), n0 * np.exp(-lam * np.arange(P))])
    reps = -(-length // len(cycle)) if length > 0 else 0
    return np.tile(cycle, reps)[:length]


def _discounted_sum(stream, gamma):
    return float(np.dot(np.power(gamma, np.arange(len(stream), dtype=float)), stream))


def discounted_return_alternating(
    m, P, tau, gamma, horizon=HORIZON, n0=N0, lam=DECAY, leave_now=True
):
    """Discounted return of leaving now, or of staying one step at depletion ``m`` first.

    Leaving produces ``tau`` zero-reward travel steps followed by repeating
    cycles of ``P`` fresh-patch steps and ``tau`` travel steps, truncated at
    ``horizon`` steps. Staying pays ``r(m)`` and then the leave stream for the
    remaining ``horizon - 1`` steps.
    """
    if not 0 < gamma <= 1 and gamma != 0:
        raise ValueError("gamma must lie in (0, 1]")
    if P < 1:
        raise ValueError("P must be >= 1")
    if leave_now:
        return _discounted_sum(_leave_stream(P, tau, horizon, n0, lam), gamma)
    stream = np.concatenate(
        [[patch_reward(m, n0, lam)], _leave_stream(P, tau, horizon - 1, n0, lam)]
    )
    return _discounted_sum(stream, gamma)


def leave_value_per_step(P, tau, gamma, horizon=HORIZON, n0=N0, lam=DECAY):
    """Reward level at which staying one more step and leaving now are worth the same.

    ``V_stay(m) - V_leave = r(m) - c`` with ``c = V_leave(H) - gamma * V_leave(H-1)``.
    At ``gamma == 1`` that difference only sees the last element of the
    truncated stream, so ``c`` is averaged over the phase of the cycle at
    which the horizon falls, which is the cycle's reward rate.
    """
    if gamma >= 1.0:
        return cumulative_patch_reward(P, n0, lam) / (P + tau)
    full = _leave_stream(P, tau, horizon, n0, lam)
    weights = np.power(gamma, np.arange(horizon, dtype=float))
    v_h = float(np.dot(weights, full))
    v_h1 = float(np.dot(weights[: horizon - 1], full[: horizon - 1]))
    return v_h - gamma * v_h1


def indifference_step(P, tau, gamma, horizon=HORIZON, n0=N0, lam=DECAY):
    """Smallest depletion ``m`` at which leaving is at least as good as staying.

    Returns None when staying always wins before the patch reward underflows.
    """
    c = leave_value_per_step(P, tau, gamma, horizon, n0, lam)
    if not c > 0:
        return None
    if c >= n0:
        return 0
    m = max(0, math.ceil(math.log(n0 / c) / lam))
    while m > 0 and patch_reward(m - 1, n0, lam) <= c:
        m -= 1
    while patch_reward(m, n0, lam) > c:
        m += 1
    if patch_reward(m, n0, lam) == 0.0:
        return None
    return m


@lru_cache(maxsize=256)
def discounted_mvt_leave_step(
    tau, gamma, horizon=HORIZON, n0=N0, lam=DECAY, p_max=EPISODE_STEPS
):
    """Fixed point of the indifference curve ``m*(P) = P`` over ``P`` in ``[1, p_max]``."""
    Ps = np.arange(1, p_max + 1)
    curve = np.full(p_max, np.nan)
    for i, P in enumerate(Ps):
        m = indifference_step(int(P), tau, gamma, horizon, n0, lam)
        if m is not None:
            curve[i] = m

    # never-leave counts as lying above the unity line
    diff = np.where(np.isnan(curve), np.inf, curve - Ps)
    below = np.flatnonzero(diff <= 0)
    if len(below) == 0:
        finite = diff[np.isfinite(diff)]
        detail = (
            f"m*(P) - P stays in [{finite.min():.0f}, {finite.max():.0f}]"
            if len(finite)
            else "staying always beats leaving"
        )
        raise SolverError(
            f"no fixed point for tau={tau}, gamma={gamma} in P=[1, {p_max}]: {detail}"
        )
    hi = int(below[0])
    if hi == 0 or not np.isfinite(diff[hi - 1]):
        crossing = float(Ps[hi])
    else:
        d_lo, d_hi = diff[hi - 1], diff[hi]
        crossing = float(Ps[hi - 1] + d_lo / (d_lo - d_hi))
    return DiscountedMvtSolution(
        leave_step=int(math.floor(crossing + 0.5)),
        gamma=float(gamma),
        tau=int(tau),
        horizon=int(horizon),
        crossing=crossing,
        indifference_curve=np.column_stack([Ps, curve]),
    )


def write_solution(solution, path):
    """Write a solution as JSON, or its curve as CSV when ``path`` ends in ``.csv``."""
    path = str(path)
    if path.endswith(".csv"):
        if isinstance(solution, MvtSolution):
            header, rows = ("T", "rate"), solution.rate_curve.tolist()
        else:
            header, rows = ("P", "m_star"), solution.indifference_curve.tolist()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for a, b in rows:
                writer.writerow([int(a), "" if math.isnan(b) else repr(b)])
    else:
        with open(path, "w") as fh:
            json.dump(solution.to_dict(), fh, indent=1)
    return path
