"""Priority scoring rules that decide which robots deserve human attention.

Every rule maps fleet observables to one non-negative score per robot,
consumed downstream by the allocator; higher means more urgent and exactly
0 means "leave this robot alone". Simple rules score a single signal
(fault flags, random draws, policy uncertainty, critic estimates). The
composite rules order whole *classes* of robots ahead of one another by
packing (class rank, within-class score) into a single scalar: the rank
picks a disjoint band of width ``band_width`` and the clamped score orders
robots inside it.

Composites provided:

* ``compose_uc`` -- above-threshold uncertainty first, then fault states.
* ``compose_ugc`` -- a z-normalized blend of uncertainty and goal-failure
  probability first, then fault states.
* ``compose_cur`` -- fault states first, then above-threshold uncertainty,
  then above-threshold risk; during an initial warm-up window fault states
  are deliberately ignored so scarce supervision buys training data instead
  of resets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .allocation import PriorityVector

#: Scores are clamped to band_width - BAND_MARGIN so ranks can never collide.
BAND_MARGIN = 1e-6


@dataclass
class PriorityConfig:
    """Thresholds and knobs shared by the composite priority rules."""

    uncertainty_threshold: float = 0.05
    risk_threshold: float = 0.5
    random_threshold: float = 0.5
    initial_no_reset_steps: int = 0
    uncertainty_weight: float = 0.5
    band_width: float = 1000.0

    def __post_init__(self):
        for name in ("uncertainty_threshold", "risk_threshold", "random_threshold"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.initial_no_reset_steps < 0:
            raise ValueError("initial_no_reset_steps must be >= 0")
        if self.band_width <= 0:
            raise ValueError("band_width must be positive")


class RunningStats:
    """Streaming mean / population variance via Welford's update.

    Merging two accumulators is supported and is order-insensitive up to
    floating-point tolerance, so per-shard statistics can be combined.
    """

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def update_many(self, values) -> None:
        for x in np.asarray(values, dtype=float).ravel():
            self.update(float(x))

    def merge(self, other: "RunningStats") -> None:
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.mean += delta * other.count / total
        self.count = total

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def zscore(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        scale = self.std
        if scale <= 0:
            return values - self.mean
        return (values - self.mean) / scale


def band_score(rank: int, score: float, band_width: float) -> float:
    """Pack (rank, in-band score) into one scalar preserving their order."""
    clamped = min(max(float(score), 0.0), band_width - BAND_MARGIN)
    return rank * band_width + clamped


def constraint_priority(violations: Sequence[bool]) -> PriorityVector:
    """Score 1 for robots stuck in fault states, 0 for everyone else."""
    return PriorityVector(np.asarray(violations, dtype=bool).astype(float))


def random_priority(
    rng: np.random.Generator, n_robots: int, threshold: float
) -> PriorityVector:
    """Uniform draws per robot, zeroed below the request threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("random threshold must lie in [0, 1]")
    draws = rng.uniform(0.0, 1.0, size=n_robots)
    return PriorityVector(np.where(draws >= threshold, draws, 0.0))


def entropy_uncertainty(action_dist) -> float:
    """Shannon entropy of a discrete action distribution, in nats."""
    p = np.asarray(action_dist, dtype=float)
    if (p < 0).any():
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must sum to 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_uncertainty_batch(dists: np.ndarray) -> np.ndarray:
    """Row-wise entropy for an (n, arity) matrix of distributions."""
    p = np.asarray(dists, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * logs).sum(axis=1)


def ensemble_variance(predictions: Sequence) -> float:
    """Mean over action dimensions of the across-member population variance."""
    members = np.asarray(predictions, dtype=float)
    if members.ndim != 2 or members.shape[0] < 2:
        raise ValueError("need at least two equally sized ensemble members")
    return float(members.var(axis=0).mean())


def risk_priority(
    states: Sequence,
    safety_critic,
    robot_policy,
    risk_threshold: float,
) -> PriorityVector:
    """Critic-estimated fault probability at the policy's action, gated at the threshold."""
    if safety_critic is None:
        raise ValueError("risk prioritization needs a trained safety critic")
    scores = np.array(
        [safety_critic.value(s, robot_policy.greedy_action(s)) for s in states], dtype=float
    )
    return PriorityVector(np.where(scores >= risk_threshold, scores, 0.0))


def goal_priority(states: Sequence, goal_critic, robot_policy) -> PriorityVector:
    """Estimated probability of failing to reach the goal under the current policy."""
    if goal_critic is None:
        raise ValueError("goal prioritization needs a pretrained goal critic")
    scores = np.array(
        [1.0 - goal_critic.value(s, robot_policy.greedy_action(s)) for s in states], dtype=float
    )
    return PriorityVector(np.clip(scores, 0.0, 1.0))


def compose_uc(
    u_scores,
    violations: Sequence[bool],
    uncertainty_threshold: float,
    band_width: float = 1000.0,
) -> PriorityVector:
    """Uncertain robots above threshold outrank fault states; all else 0."""
    u = np.asarray(u_scores, dtype=float)
    out = np.zeros(len(u))
    for i in range(len(u)):
        if u[i] >= uncertainty_threshold:
            out[i] = band_score(2, u[i], band_width)
        elif violations[i]:
            out[i] = band_score(1, 0.0, band_width)
    return PriorityVector(out)


def compose_ugc(
    u_scores,
    g_scores,
    violations: Sequence[bool],
    stats_u: RunningStats,
    stats_g: RunningStats,
    uncertainty_weight: float,
    threshold: float,
    band_width: float = 1000.0,
) -> PriorityVector:
    """Blend z-normalized uncertainty and goal-failure scores, then fault states.

    Callers must feed this step's raw scores into the running statistics
    before composing. Until the statistics have seen at least two samples the
    raw scores are blended directly (warm-up behavior).
    """
    u = np.asarray(u_scores, dtype=float)
    g = np.asarray(g_scores, dtype=float)
    if stats_u.count >= 2 and stats_g.count >= 2:
        zu, zg = stats_u.zscore(u), stats_g.zscore(g)
    else:
        zu, zg = u, g
    combined = uncertainty_weight * zu + (1.0 - uncertainty_weight) * zg
    out = np.zeros(len(u))
    for i in range(len(u)):
        if combined[i] >= threshold:
            out[i] = band_score(2, combined[i] - threshold, band_width)
        elif violations[i]:
            out[i] = band_score(1, 0.0, band_width)
    return PriorityVector(out)


def compose_cur(
    violations: Sequence[bool],
    u_scores,
    r_scores,
    t: int,
    cfg: PriorityConfig,
) -> PriorityVector:
    """Fault states, then uncertain robots, then at-risk robots.

    For the first ``initial_no_reset_steps`` timesteps fault states score 0
    instead of topping the ranking: early on, supervision is worth more as
    teleoperation data than as resets, so broken robots are left idle.
    """
    u = np.asarray(u_scores, dtype=float)
    r = np.asarray(r_scores, dtype=float)
    warmup = t < cfg.initial_no_reset_steps
    out = np.zeros(len(u))
    for i in range(len(u)):
        if violations[i]:
            out[i] = 0.0 if warmup else band_score(3, 0.0, cfg.band_width)
        elif u[i] >= cfg.uncertainty_threshold:
            out[i] = band_score(2, u[i], cfg.band_width)
        elif r[i] >= cfg.risk_threshold:
            out[i] = band_score(1, r[i], cfg.band_width)
    return PriorityVector(out)
