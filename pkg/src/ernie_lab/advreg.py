# Observation-space adversarial regularizer: divergence metrics, projected
# gradient ascent on the perturbation, Gaussian noise baseline, and the
# leader-follower (total-derivative) gradient through the unrolled attack.
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .net import Net, grads_to_vector, hvp, net_forward, net_grads, params_to_vector, vector_to_net

KL_FLOOR = 1e-12

NORMS = ("l2", "linf")
METRICS = ("kl", "sq_l2")
INITS = ("zero", "random_ball")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    k_steps: int = 2
    eta: float | None = None  # default 2.5*eps/K
    norm: str = "l2"
    metric: str = "sq_l2"
    init: str = "random_ball"
    seed: int = 0
    project_each_step: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.k_steps < 0:
            raise ValueError(f"k_steps must be >= 0, got {self.k_steps}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        # epsilon=0 short-circuits the attack, so a zero derived step is fine
        if self.k_steps > 0 and self.epsilon > 0 and self.step_size <= 0:
            raise ValueError("eta must be > 0 when k_steps > 0")
        if self.eta is not None and self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")

    @property
    def step_size(self) -> float:
        if self.eta is not None:
            return self.eta
        return 2.5 * self.epsilon / max(self.k_steps, 1)


def default_head(metric: str) -> str:
    # Stochastic policies emit simplex rows through a softmax head; deterministic
    # policies are compared on raw outputs.
    return "softmax" if metric == "kl" else "identity"


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_vjp(y: np.ndarray, u: np.ndarray) -> np.ndarray:
    # y = softmax(z); returns J^T u.
    dot = (u * y).sum(axis=-1, keepdims=True)
    return y * (u - dot)


def policy_forward(net: Net, x, head: str) -> np.ndarray:
    y = net_forward(net, x)
    return softmax(y) if head == "softmax" else y


def divergence(out_a, out_b, metric: str) -> float:
    """KL (simplex inputs) or squared l2 between two output vectors."""
    a = np.asarray(out_a, dtype=float)
    b = np.asarray(out_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if metric == "sq_l2":
        d = a - b
        return float(np.sum(d * d))
    if metric == "kl":
        for v, name in ((a, "out_a"), (b, "out_b")):
            if np.any(v < 0) or abs(float(v.sum()) - 1.0) > 1e-9:
                raise ValueError(f"kl divergence needs {name} on the probability simplex")
        bf = np.maximum(b, KL_FLOOR)
        terms = np.where(a > 0, a * (np.log(np.maximum(a, KL_FLOOR)) - np.log(bf)), 0.0)
        return float(terms.sum())
    raise ValueError(f"unknown metric {metric!r}")


def _divergence_grads(a: np.ndarray, b: np.ndarray, metric: str):
    """Row-wise divergence values and gradients; a, b are (B, m)."""
    if metric == "sq_l2":
        d = a - b
        vals = np.sum(d * d, axis=-1)
        return vals, 2.0 * d, -2.0 * d
    bf = np.maximum(b, KL_FLOOR)
    af = np.maximum(a, KL_FLOOR)
    log_ratio = np.log(af) - np.log(bf)
    vals = np.sum(np.where(a > 0, a * log_ratio, 0.0), axis=-1)
    da = log_ratio + 1.0
    db = np.where(b > KL_FLOOR, -a / bf, 0.0)
    return vals, da, db


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def reg_value_and_grads(net: Net, obs, delta, metric: str, head: str | None = None,
                        need_theta: bool = True):
    """Per-row regularizer value D(pi(o+delta), pi(o)), gradient w.r.t. delta,
    and (optionally) flat parameter gradient summed over rows."""
    head = default_head(metric) if head is None else head
    ob, squeezed = _as_batch(obs)
    db, _ = _as_batch(delta)
    if ob.shape != db.shape:
        raise ValueError(f"obs shape {ob.shape} != delta shape {db.shape}")
    xa = ob + db
    ya = policy_forward(net, xa, head)
    yb = policy_forward(net, ob, head)
    vals, d_ya, d_yb = _divergence_grads(ya, yb, metric)
    up_a = _softmax_vjp(ya, d_ya) if head == "softmax" else d_ya
    up_b = _softmax_vjp(yb, d_yb) if head == "softmax" else d_yb
    ga = net_grads(net, xa, up_a)
    grad_delta = ga.grad_input
    grad_theta = None
    if need_theta:
        gb = net_grads(net, ob, up_b)
        grad_theta = grads_to_vector(ga.grad_params) + grads_to_vector(gb.grad_params)
    if squeezed:
        return float(vals[0]), grad_delta[0], grad_theta
    return vals, grad_delta, grad_theta


def project(delta: np.ndarray, epsilon: float, norm: str) -> np.ndarray:
    """Row-wise exact projection onto the epsilon-ball of the given norm."""
    if epsilon == 0.0:
        return np.zeros_like(delta)
    if norm == "linf":
        return np.clip(delta, -epsilon, epsilon)
    single = delta.ndim == 1
    d = delta[None, :] if single else delta
    norms = np.linalg.norm(d, axis=-1, keepdims=True)
    scale = np.where(norms > epsilon, epsilon / np.maximum(norms, 1e-300), 1.0)
    out = d * scale
    return out[0] if single else out


def _project_vjp(pre: np.ndarray, epsilon: float, norm: str, u: np.ndarray) -> np.ndarray:
    """Transposed Jacobian of project() at pre-projection point `pre` applied to u."""
    if epsilon == 0.0:
        return np.zeros_like(u)
    if norm == "linf":
        return np.where(np.abs(pre) <= epsilon, u, 0.0)
    n = float(np.linalg.norm(pre))
    if n <= epsilon:
        return u
    unit = pre / n
    return (epsilon / n) * (u - unit * float(unit @ u))


def sample_ball(dim: int, radius: float, norm: str, rng: np.random.Generator) -> np.ndarray:
    if norm == "linf":
        return rng.uniform(-radius, radius, size=dim)
    direction = rng.standard_normal(dim)
    d_norm = np.linalg.norm(direction)
    if d_norm == 0.0:
        return np.zeros(dim)
    r = radius * rng.uniform() ** (1.0 / dim)
    return direction / d_norm * r


def _init_delta(shape, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    # Radius 0.1*eps: at delta=0 both metrics have a vanishing gradient, so a
    # zero init would make gradient ascent a no-op.
    if cfg.init == "zero" or cfg.epsilon == 0.0:
        return np.zeros(shape)
    if len(shape) == 1:
        return sample_ball(shape[0], 0.1 * cfg.epsilon, cfg.norm, rng)
    return np.stack([sample_ball(shape[1], 0.1 * cfg.epsilon, cfg.norm, rng)
                     for _ in range(shape[0])])


def pgd_attack(net: Net, obs, cfg: AttackConfig, head: str | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """K steps of gradient ascent on the divergence, projected after every step.

    obs may be a single observation (d,) or a batch (B, d); the attack is
    row-independent. Returns delta with the shape of obs.
    """
    head = default_head(metric=cfg.metric) if head is None else head
    ob, squeezed = _as_batch(obs)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    delta = _init_delta(ob.shape if not squeezed else (ob.shape[1],), cfg, rng)
    db = delta[None, :] if squeezed else delta
    db = project(db, cfg.epsilon, cfg.norm)
    if cfg.epsilon == 0.0:
        return db[0] if squeezed else db
    eta = cfg.step_size
    for _ in range(cfg.k_steps):
        _, gd, _ = reg_value_and_grads(net, ob, db, cfg.metric, head, need_theta=False)
        if not np.all(np.isfinite(gd)):
            raise FloatingPointError("non-finite attack gradient")
        db = db + eta * gd
        if cfg.project_each_step:
            db = project(db, cfg.epsilon, cfg.norm)
    if not cfg.project_each_step:
        db = project(db, cfg.epsilon, cfg.norm)
    return db[0] if squeezed else db


def regularizer(net: Net, obs, delta, metric: str, head: str | None = None):
    """Divergence between the net's outputs at obs+delta and obs."""
    head = default_head(metric) if head is None else head
    ya = policy_forward(net, np.asarray(obs, dtype=float) + np.asarray(delta, dtype=float), head)
    yb = policy_forward(net, obs, head)
    if ya.ndim == 1:
        return divergence(ya, yb, metric)
    vals, _, _ = _divergence_grads(ya, yb, metric)
    return vals


def gaussian_delta(dim: int, sigma: float, seed: int) -> np.ndarray:
    """Seeded standard-normal perturbation scaled by sigma."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return np.zeros(dim)
    rng = np.random.default_rng(seed)
    return sigma * rng.standard_normal(dim)


def _joint_grad_fn(template: Net, obs: np.ndarray, metric: str, head: str, dim: int):
    def g(z):
        delta, theta = z[:dim], z[dim:]
        net = vector_to_net(template, theta)
        _, gd, gt = reg_value_and_grads(net, obs, delta, metric, head)
        return np.concatenate([gd, gt])
    return g


def stackelberg_grad(net: Net, obs, cfg: AttackConfig, head: str | None = None,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Total derivative of R(o, delta^K(theta); theta) w.r.t. the parameters.

    Reverse accumulation through the K unrolled ascent steps; each step's
    second-order term is a finite-difference Hessian-vector product of the
    joint (delta, theta) gradient. K=0 reduces to the plain gradient at
    the initialization.
    """
    head = default_head(cfg.metric) if head is None else head
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1:
        raise ValueError("stackelberg_grad expects a single observation")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    dim = obs.shape[0]
    delta = project(_init_delta((dim,), cfg, rng), cfg.epsilon, cfg.norm)
    eta = cfg.step_size

    # Forward: record delta^k and the pre-projection points.
    deltas, pres = [delta], []
    if cfg.epsilon > 0.0:
        for _ in range(cfg.k_steps):
            _, gd, _ = reg_value_and_grads(net, obs, deltas[-1], cfg.metric, head, need_theta=False)
            if not np.all(np.isfinite(gd)):
                raise FloatingPointError("non-finite attack gradient")
            pre = deltas[-1] + eta * gd
            pres.append(pre)
            deltas.append(project(pre, cfg.epsilon, cfg.norm) if cfg.project_each_step else pre)

    _, gd_final, theta_acc = reg_value_and_grads(net, obs, deltas[-1], cfg.metric, head)
    u = gd_final
    if len(deltas) == 1:
        return theta_acc

    theta_vec = params_to_vector(net)
    gfun = _joint_grad_fn(net, obs, cfg.metric, head, dim)
    for k in range(len(pres) - 1, -1, -1):
        if cfg.project_each_step:
            u = _project_vjp(pres[k], cfg.epsilon, cfg.norm, u)
        if not np.any(u):
            break
        z = np.concatenate([deltas[k], theta_vec])
        hz = hvp(gfun, z, np.concatenate([u, np.zeros_like(theta_vec)]))
        theta_acc = theta_acc + eta * hz[dim:]
        u = u + eta * hz[:dim]
    if not np.all(np.isfinite(theta_acc)):
        raise FloatingPointError("non-finite leader gradient")
    return theta_acc


def regularized_grad(base_grad: np.ndarray, reg_grads, lam: float) -> np.ndarray:
    """base + lambda * mean of sampled regularizer gradients; lambda=0 is bitwise base."""
    if lam == 0.0:
        return base_grad
    reg_grads = [np.asarray(g, dtype=float) for g in reg_grads]
    for g in reg_grads:
        if g.shape != base_grad.shape:
            raise ValueError("regularizer gradient shape mismatch")
    return base_grad + lam * np.mean(reg_grads, axis=0)
