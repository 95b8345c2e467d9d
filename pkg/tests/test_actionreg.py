import itertools

import numpy as np
import pytest

from ernie_lab.actionreg import (action_regularizer, brute_force_action_attack,
                                 greedy_action_attack)

# Hand table: Q(0,0)=1.0 Q(1,0)=2.0 Q(0,1)=1.5 Q(1,1)=0.2
TABLE = {(0, 0): 1.0, (1, 0): 2.0, (0, 1): 1.5, (1, 1): 0.2}


def q_table(state, joint):
    return TABLE[tuple(joint)]


def q_const(state, joint):
    return 3.5


def _random_q(rng, n_agents, n_actions):
    table = {j: rng.standard_normal()
             for j in itertools.product(range(n_actions), repeat=n_agents)}
    return lambda state, joint: table[tuple(joint)]


def test_greedy_hamming1_oracle():
    res = greedy_action_attack(q_table, None, (0, 0), 2, k=1)
    assert res.perturbed == (1, 0)
    assert res.value == (1.0 - 2.0) ** 2
    assert res.changed_agents == (0,)


def test_greedy_constant_q_tiebreak():
    res = greedy_action_attack(q_const, None, (0, 0), 2, k=1)
    assert res.value == 0.0
    # lowest (agent, action) pair: agent 0 flips to its lowest alternative
    assert res.perturbed == (1, 0)


def test_greedy_prefix_max_reporting():
    # K=2: second flip from (1,0) can only reach (1,1) with value 0.64 < 1.0;
    # the reported value keeps the better committed prefix
    res = greedy_action_attack(q_table, None, (0, 0), 2, k=2)
    assert res.value == 1.0
    assert res.perturbed == (1, 0)


def test_greedy_restart_each_round_scans_single_flips():
    # restart mode: round 2 flips agent 1 from the ORIGINAL (0,0), reaching
    # (0,1) with value 0.25 instead of the cumulative (1,1)
    res = greedy_action_attack(q_table, None, (0, 0), 2, k=2,
                               restart_each_round=True)
    assert res.value == 1.0
    assert res.perturbed == (1, 0)
    cumulative = greedy_action_attack(q_table, None, (0, 0), 2, k=2)
    assert res.evals == cumulative.evals


def test_greedy_k_clamped_with_warning():
    res = greedy_action_attack(q_table, None, (0, 0), 2, k=5)
    assert res.warnings
    assert len(res.changed_agents) <= 2


def test_greedy_eval_budget():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, a = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        k = int(rng.integers(1, n + 1))
        q = _random_q(rng, n, a)
        res = greedy_action_attack(q, None, tuple([0] * n), a, k)
        assert res.evals <= a * n * k


def test_brute_equals_greedy_at_k1():
    rng = np.random.default_rng(1)
    for _ in range(500):
        n, a = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        q = _random_q(rng, n, a)
        start = tuple(int(x) for x in rng.integers(a, size=n))
        g = greedy_action_attack(q, None, start, a, 1)
        b = brute_force_action_attack(q, None, start, a, 1)
        assert g.value == b.value
        assert g.perturbed == b.perturbed


def test_greedy_bounded_by_brute():
    rng = np.random.default_rng(2)
    for _ in range(100):
        q = _random_q(rng, 4, 3)
        start = tuple(int(x) for x in rng.integers(3, size=4))
        for k in (2, 3):
            g = greedy_action_attack(q, None, start, 3, k)
            b = brute_force_action_attack(q, None, start, 3, k)
            assert g.value <= b.value + 1e-15


def test_brute_monotone_in_k():
    rng = np.random.default_rng(3)
    for _ in range(30):
        q = _random_q(rng, 3, 3)
        start = (0, 0, 0)
        vals = [brute_force_action_attack(q, None, start, 3, k).value
                for k in (1, 2, 3)]
        assert vals[0] <= vals[1] <= vals[2]


def test_brute_size_limits():
    q = _random_q(np.random.default_rng(0), 3, 3)
    with pytest.raises(ValueError):
        brute_force_action_attack(q, None, tuple([0] * 7), 3, 1)


def test_action_regularizer():
    assert action_regularizer(q_table, None, (0, 0), 2, 0) == 0.0
    assert action_regularizer(q_table, None, (0, 0), 2, 1, mode="greedy") == 1.0
    assert action_regularizer(q_table, None, (0, 0), 2, 1, mode="brute") == 1.0
    assert action_regularizer(q_const, None, (0, 0), 2, 2) == 0.0
    with pytest.raises(ValueError):
        action_regularizer(q_table, None, (0, 0), 2, 1, mode="other")
