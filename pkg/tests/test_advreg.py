import math

import numpy as np
import pytest

from ernie_lab.advreg import (AttackConfig, divergence, gaussian_delta,
                              pgd_attack, project, reg_value_and_grads,
                              regularized_grad, regularizer, sample_ball,
                              stackelberg_grad)
from ernie_lab.net import Net, n_params, net_init, params_to_vector, vector_to_net


def _linear_net(w):
    w = np.asarray(w, dtype=float)
    return Net(layer_dims=(w.shape[1], w.shape[0]), weights=(w,),
               biases=(np.zeros(w.shape[0]),), activation="identity")


def test_divergence_zero_at_equality():
    p = np.array([0.3, 0.7])
    assert divergence(p, p, "kl") == 0.0
    assert divergence(p, p, "sq_l2") == 0.0


def test_divergence_kl_oracle():
    got = divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5]), "kl")
    assert abs(got - math.log(2)) < 1e-12


def test_divergence_sq_l2_oracle():
    assert divergence(np.array([1.0, 0.0]), np.array([0.0, 1.0]), "sq_l2") == 2.0


def test_divergence_kl_rejects_non_simplex():
    with pytest.raises(ValueError):
        divergence(np.array([0.9, 0.3]), np.array([0.5, 0.5]), "kl")
    with pytest.raises(ValueError):
        divergence(np.array([1.2, -0.2]), np.array([0.5, 0.5]), "kl")


def test_kl_nonnegative_on_random_simplex_pairs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.dirichlet(np.ones(4))
        b = rng.dirichlet(np.ones(4))
        assert divergence(a, b, "kl") >= 0.0


def test_pgd_constant_policy_keeps_init():
    net = _linear_net(np.zeros((2, 3)))
    cfg = AttackConfig(epsilon=0.2, k_steps=5, metric="sq_l2", seed=1)
    delta = pgd_attack(net, np.zeros(3), cfg)
    rng = np.random.default_rng(1)
    init = sample_ball(3, 0.1 * cfg.epsilon, "l2", rng)
    assert np.allclose(delta, init)


def test_pgd_epsilon_zero():
    net = net_init([3, 2], seed=0)
    cfg = AttackConfig(epsilon=0.0, k_steps=4, metric="sq_l2", seed=0)
    assert np.array_equal(pgd_attack(net, np.ones(3), cfg), np.zeros(3))


def test_pgd_linear_top_singular_direction():
    # y = diag(2,1) x: the strongest l2 perturbation of norm 0.1 is (+-0.1, 0)
    net = _linear_net(np.diag([2.0, 1.0]))
    cfg = AttackConfig(epsilon=0.1, k_steps=200, eta=0.01, metric="sq_l2", seed=3)
    delta = pgd_attack(net, np.array([0.5, -0.5]), cfg)
    assert abs(abs(delta[0]) - 0.1) < 1e-6
    assert abs(delta[1]) < 1e-4
    assert abs(regularizer(net, np.array([0.5, -0.5]), delta, "sq_l2") - 0.04) < 1e-6


def test_pgd_projection_invariant():
    rng = np.random.default_rng(7)
    for norm in ("l2", "linf"):
        for _ in range(20):
            net = net_init([4, 6, 3], seed=int(rng.integers(2 ** 31)))
            cfg = AttackConfig(epsilon=0.3, k_steps=3, metric="sq_l2", norm=norm,
                               seed=int(rng.integers(2 ** 31)))
            delta = pgd_attack(net, rng.standard_normal(4), cfg)
            nrm = np.linalg.norm(delta) if norm == "l2" else np.abs(delta).max()
            assert nrm <= cfg.epsilon + 1e-12


def test_regularizer_zero_delta():
    net = net_init([3, 4, 2], seed=0)
    assert regularizer(net, np.ones(3), np.zeros(3), "sq_l2") == 0.0


def test_regularizer_identity_linear():
    net = _linear_net(np.eye(3))
    delta = np.array([0.1, 0.0, 0.0])
    assert abs(regularizer(net, np.ones(3), delta, "sq_l2") - 0.01) < 1e-15


def test_gaussian_delta():
    assert np.array_equal(gaussian_delta(5, 0.0, 3), np.zeros(5))
    assert np.array_equal(gaussian_delta(8, 1.0, 4), gaussian_delta(8, 1.0, 4))
    big = gaussian_delta(10 ** 4, 1.0, 0)
    assert abs(big.mean()) < 0.05
    assert 0.9 < big.var() < 1.1


def test_attack_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, k_steps=-1)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, norm="l1")
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, metric="js")
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, k_steps=2, eta=0.0)


def test_stackelberg_k0_equals_plain_gradient():
    net = net_init([3, 4, 2], activation="tanh", seed=5)
    obs = np.array([0.2, -0.4, 0.9])
    cfg = AttackConfig(epsilon=0.3, k_steps=0, metric="sq_l2", seed=11)
    got = stackelberg_grad(net, obs, cfg)
    rng = np.random.default_rng(11)
    from ernie_lab.advreg import _init_delta
    delta0 = project(_init_delta((3,), cfg, rng), cfg.epsilon, "l2")
    _, _, plain = reg_value_and_grads(net, obs, delta0, "sq_l2")
    assert np.array_equal(got, plain)


def test_stackelberg_constant_policy_zero():
    net = _linear_net(np.zeros((2, 3)))
    cfg = AttackConfig(epsilon=0.2, k_steps=2, metric="sq_l2", seed=0)
    g = stackelberg_grad(net, np.ones(3), cfg)
    # weight gradients vanish except through the (zero) divergence value
    assert np.allclose(g, 0.0)


def test_regularized_grad():
    base = np.array([1.0, -2.0, 0.5])
    g = np.array([0.5, 0.5, 0.5])
    assert regularized_grad(base, [g], 0.0) is base
    assert np.array_equal(regularized_grad(base, [np.zeros(3)], 1.0), base)
    assert np.array_equal(regularized_grad(base, [g], 2.0), base + 2 * g)
    with pytest.raises(ValueError):
        regularized_grad(base, [np.zeros(4)], 1.0)


def test_attack_soundness_pgd_beats_gaussian():
    # PGD at least matches a random direction of the same norm in >= 80% of trials
    rng = np.random.default_rng(42)
    wins = 0
    trials = 500
    for i in range(trials):
        net = net_init([4, 8, 3], seed=int(rng.integers(2 ** 31)), scale=2.0)
        obs = rng.uniform(-1, 1, size=4)
        cfg = AttackConfig(epsilon=0.5, k_steps=10, metric="sq_l2",
                           seed=int(rng.integers(2 ** 31)))
        delta = pgd_attack(net, obs, cfg)
        raw = gaussian_delta(4, 1.0, i)
        rand = raw / np.linalg.norm(raw) * np.linalg.norm(delta)
        v_pgd = regularizer(net, obs, delta, "sq_l2")
        v_rand = regularizer(net, obs, rand, "sq_l2")
        wins += v_pgd >= v_rand
    assert wins >= 0.8 * trials, f"pgd won only {wins}/{trials}"
