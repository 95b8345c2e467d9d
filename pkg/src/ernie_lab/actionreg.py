# Worst-case joint-action perturbation of a global Q-function under a
# Hamming-distance budget: greedy solver plus an exhaustive oracle.
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

BRUTE_MAX_AGENTS = 6
BRUTE_MAX_ACTIONS = 6


@dataclass
class ActionAttackResult:
    perturbed: tuple  # joint action
    value: float      # (Q(s,a) - Q(s,a'))^2 at the reported action
    changed_agents: tuple
    evals: int = 0
    warnings: list = field(default_factory=list)


def _per_agent_counts(n_actions, n_agents) -> list[int]:
    if np.isscalar(n_actions):
        return [int(n_actions)] * n_agents
    counts = [int(c) for c in n_actions]
    if len(counts) != n_agents:
        raise ValueError("n_actions length must match number of agents")
    return counts


class _CountingQ:
    def __init__(self, q_fn, state):
        self.q_fn = q_fn
        self.state = state
        self.evals = 0

    def __call__(self, joint) -> float:
        self.evals += 1
        return float(self.q_fn(self.state, tuple(joint)))


def greedy_action_attack(q_global, state, actions, n_actions, k: int,
                         restart_each_round: bool = False) -> ActionAttackResult:
    """K rounds of single-agent flips, each committing the flip that maximizes
    (Q(s,a) - Q(s,a'))^2; reports the best value over all committed prefixes.

    Flips accumulate by default; restart_each_round rescans from the original
    joint action every round instead. Ties break deterministically to the
    lowest (agent, action) index. K > N is clamped to N with a warning record.
    """
    actions = tuple(int(a) for a in actions)
    n = len(actions)
    counts = _per_agent_counts(n_actions, n)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    warnings = []
    if k > n:
        warnings.append(f"k={k} clamped to the number of agents {n}")
        k = n
    for i, (a, c) in enumerate(zip(actions, counts)):
        if not 0 <= a < c:
            raise ValueError(f"agent {i} action {a} out of range [0, {c})")

    q = _CountingQ(q_global, state)
    q_orig = q(actions)
    current = list(actions)
    changed: list[int] = []
    best_value, best_joint, best_changed = -1.0, actions, ()
    for _ in range(k):
        round_best = None  # (value, agent, action)
        for agent in range(n):
            if agent in changed:
                continue
            for alt in range(counts[agent]):
                if alt == current[agent]:
                    continue
                cand = list(current)
                cand[agent] = alt
                val = (q_orig - q(cand)) ** 2
                if round_best is None or val > round_best[0]:
                    round_best = (val, agent, alt)
        if round_best is None:
            break
        val, agent, alt = round_best
        current[agent] = alt
        changed.append(agent)
        if val > best_value:
            best_value, best_joint, best_changed = val, tuple(current), tuple(changed)
        if restart_each_round:
            current = list(actions)
    return ActionAttackResult(best_joint, float(max(best_value, 0.0)), best_changed,
                              evals=q.evals, warnings=warnings)


def brute_force_action_attack(q_global, state, actions, n_actions, k: int) -> ActionAttackResult:
    """Exact maximizer over all joint actions within Hamming distance k."""
    actions = tuple(int(a) for a in actions)
    n = len(actions)
    counts = _per_agent_counts(n_actions, n)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = min(k, n)
    if n > BRUTE_MAX_AGENTS or max(counts) > BRUTE_MAX_ACTIONS:
        raise ValueError(
            f"brute force limited to N <= {BRUTE_MAX_AGENTS}, |A| <= {BRUTE_MAX_ACTIONS}")

    q = _CountingQ(q_global, state)
    q_orig = q(actions)
    best_value, best_joint = 0.0, actions
    for cand in product(*(range(c) for c in counts)):
        dist = sum(1 for a, b in zip(actions, cand) if a != b)
        if dist == 0 or dist > k:
            continue
        val = (q_orig - q(cand)) ** 2
        if val > best_value:
            best_value, best_joint = val, cand
    changed = tuple(i for i, (a, b) in enumerate(zip(actions, best_joint)) if a != b)
    return ActionAttackResult(best_joint, float(best_value), changed, evals=q.evals)


def action_regularizer(q_global, state, actions, n_actions, k: int,
                       mode: str = "greedy") -> float:
    """Attack value (Q(s,a) - Q(s,a'))^2 under the chosen solver; k=0 -> 0."""
    if k == 0:
        return 0.0
    if mode == "greedy":
        return greedy_action_attack(q_global, state, actions, n_actions, k).value
    if mode == "brute":
        return brute_force_action_attack(q_global, state, actions, n_actions, k).value
    raise ValueError(f"mode must be 'greedy' or 'brute', got {mode!r}")
