# Finite-difference verification suites: network gradients, Hessian-vector
# products, and the Stackelberg total derivative through the unrolled attack.
from __future__ import annotations

import numpy as np

from .advreg import (AttackConfig, _init_delta, default_head, policy_forward,
                     project, reg_value_and_grads, stackelberg_grad)
from .net import (Net, grads_to_vector, hvp, net_forward, net_grads, net_init,
                  n_params, params_to_vector, vector_to_net)

GRAD_TOL = 1e-4
KINK_MARGIN = 1e-4


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def _fd_grad(f, x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _preactivations_clear(net: Net, x: np.ndarray) -> bool:
    """Reject relu inputs near a kink; FD breaks on piecewise-linear corners."""
    if net.activation != "relu":
        return True
    z = np.asarray(x, dtype=float)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = z @ w.T + b
        if np.any(np.abs(z) < KINK_MARGIN):
            return False
        z = np.maximum(z, 0.0)
    return True


def _random_small_net(rng: np.random.Generator, activation: str,
                      max_params: int = 200) -> Net:
    while True:
        d_in = int(rng.integers(2, 7))
        width = int(rng.integers(3, 9))
        d_out = int(rng.integers(1, 5))
        dims = [d_in, width, d_out]
        net = net_init(dims, activation=activation, seed=int(rng.integers(2 ** 31)))
        if n_params(net) <= max_params:
            return net


def check_net_grads(n_trials: int = 100, seed: int = 0) -> dict:
    """grad_params and grad_input vs central finite differences."""
    rng = np.random.default_rng(seed)
    worst_p, worst_x = 0.0, 0.0
    done = 0
    while done < n_trials:
        net = _random_small_net(rng, activation=str(rng.choice(["relu", "tanh"])))
        x = rng.uniform(-1.0, 1.0, size=net.in_dim)
        if not _preactivations_clear(net, x):
            continue
        u = rng.standard_normal(net.out_dim)
        bundle = net_grads(net, x, u)
        theta = params_to_vector(net)
        h = 1e-5 * (1.0 + float(np.linalg.norm(theta)))

        def f_theta(t):
            return float(u @ net_forward(vector_to_net(net, t), x))

        def f_x(xi):
            return float(u @ net_forward(net, xi))

        worst_p = max(worst_p, _rel_err(grads_to_vector(bundle.grad_params),
                                        _fd_grad(f_theta, theta, h)))
        worst_x = max(worst_x, _rel_err(bundle.grad_input, _fd_grad(f_x, x.copy(), h)))
        done += 1
    passed = worst_p < GRAD_TOL and worst_x < GRAD_TOL
    return {"suite": "net_grads", "trials": n_trials, "seed": seed,
            "max_rel_err_params": worst_p, "max_rel_err_input": worst_x,
            "tolerance": GRAD_TOL, "passed": passed}


def check_hvp(seed: int = 0) -> dict:
    """Quadratic exactness, linearity in v, symmetry, and a dense FD oracle."""
    rng = np.random.default_rng(seed)
    a_diag = np.array([1.0, 2.0])
    grad_quad = lambda t: a_diag * t
    exact = hvp(grad_quad, np.zeros(2), np.ones(2))
    quad_err = float(np.abs(exact - a_diag).max())

    net = net_init([3, 4, 2], activation="tanh", seed=seed)
    theta = params_to_vector(net)
    x = rng.uniform(-1.0, 1.0, size=3)
    target = rng.standard_normal(2)

    def grad_fn(t):
        m = vector_to_net(net, t)
        resid = net_forward(m, x) - target
        return grads_to_vector(net_grads(m, x, resid).grad_params)

    v = rng.standard_normal(theta.size)
    lin_err = _rel_err(hvp(grad_fn, theta, 10.0 * v), 10.0 * hvp(grad_fn, theta, v))
    u = rng.standard_normal(theta.size)
    hu, hv = hvp(grad_fn, theta, u), hvp(grad_fn, theta, v)
    sym_err = abs(float(v @ hu - u @ hv)) / max(abs(float(u @ hv)), 1e-6)

    h = 1e-5 * (1.0 + float(np.linalg.norm(theta)))
    dense = np.stack([_fd_grad(lambda t, j=j: grad_fn(t)[j], theta, h)
                      for j in range(theta.size)])
    dense_err = _rel_err(hvp(grad_fn, theta, v), dense @ v)

    passed = quad_err < 1e-6 and lin_err < 1e-4 and sym_err < 1e-3 and dense_err < 1e-4
    return {"suite": "hvp", "seed": seed, "quadratic_abs_err": quad_err,
            "linearity_rel_err": lin_err, "symmetry_rel_err": sym_err,
            "dense_oracle_rel_err": dense_err, "passed": passed}


def attack_inclusive_value(template: Net, theta: np.ndarray, obs: np.ndarray,
                           delta0: np.ndarray, cfg: AttackConfig, head: str) -> float:
    """R(obs, delta^K(theta); theta) with the attack unrolled from a FIXED
    initial delta, so the map is a pure function of theta."""
    net = vector_to_net(template, theta)
    delta = delta0
    eta = cfg.step_size
    for _ in range(cfg.k_steps):
        _, gd, _ = reg_value_and_grads(net, obs, delta, cfg.metric, head, need_theta=False)
        delta = project(delta + eta * gd, cfg.epsilon, cfg.norm)
    val, _, _ = reg_value_and_grads(net, obs, delta, cfg.metric, head, need_theta=False)
    return float(np.asarray(val).ravel()[0])


def _projection_margins_ok(net: Net, obs, delta0, cfg: AttackConfig, head: str,
                           margin: float = 1e-3) -> bool:
    """Skip samples whose ascent iterates graze the ball boundary; the
    projection is non-differentiable exactly there."""
    delta = delta0
    eta = cfg.step_size
    for _ in range(cfg.k_steps):
        _, gd, _ = reg_value_and_grads(net, obs, delta, cfg.metric, head, need_theta=False)
        pre = delta + eta * gd
        if cfg.norm == "l2":
            if abs(float(np.linalg.norm(pre)) - cfg.epsilon) < margin:
                return False
        else:
            if np.any(np.abs(np.abs(pre) - cfg.epsilon) < margin):
                return False
        delta = project(pre, cfg.epsilon, cfg.norm)
    return True


def check_stackelberg(n_trials: int = 100, seed: int = 0) -> dict:
    """Total derivative through the unrolled attack vs FD of the full map.

    Uses tanh nets: the map is twice differentiable away from projection
    boundaries, which central differences require.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    exact_k0 = None
    done = 0
    while done < n_trials:
        k = 1 + done % 3
        metric = ("sq_l2", "kl")[done % 2]
        cfg = AttackConfig(epsilon=0.5, k_steps=k, metric=metric,
                           seed=int(rng.integers(2 ** 31)))
        head = default_head(metric)
        net = _random_small_net(rng, activation="tanh")
        obs = rng.uniform(-1.0, 1.0, size=net.in_dim)
        init_rng = np.random.default_rng(cfg.seed)
        delta0 = project(_init_delta((net.in_dim,), cfg, init_rng), cfg.epsilon, cfg.norm)
        if not _projection_margins_ok(net, obs, delta0, cfg, head):
            continue

        analytic = stackelberg_grad(net, obs, cfg, head=head,
                                    rng=np.random.default_rng(cfg.seed))
        theta = params_to_vector(net)
        h = 1e-5 * (1.0 + float(np.linalg.norm(theta)))
        fd = _fd_grad(lambda t: attack_inclusive_value(net, t, obs, delta0, cfg, head),
                      theta, h)
        worst = max(worst, _rel_err(analytic, fd))

        if exact_k0 is None:
            cfg0 = AttackConfig(epsilon=0.5, k_steps=0, metric=metric, seed=cfg.seed)
            g0 = stackelberg_grad(net, obs, cfg0, head=head,
                                  rng=np.random.default_rng(cfg.seed))
            _, _, gt = reg_value_and_grads(net, obs, delta0, metric, head)
            exact_k0 = bool(np.array_equal(g0, gt))
        done += 1
    passed = worst < GRAD_TOL and bool(exact_k0)
    return {"suite": "stackelberg", "trials": n_trials, "seed": seed,
            "max_rel_err": worst, "k0_exact": exact_k0,
            "tolerance": GRAD_TOL, "passed": passed}


def run_gradcheck(seed: int = 0, net_trials: int = 100,
                  stackelberg_trials: int = 100) -> dict:
    g = check_net_grads(net_trials, seed)
    h = check_hvp(seed)
    s = check_stackelberg(stackelberg_trials, seed)
    return {"net_grads": g, "hvp": h, "stackelberg": s,
            "passed": g["passed"] and h["passed"] and s["passed"]}
