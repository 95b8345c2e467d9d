# Tabular MDPs with metric-embedded states: smooth instance generation, exact
# policy evaluation / value iteration, softmax policies, empirical Lipschitz
# measurement, and the perturbed-value dynamic program.
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DIRECT_SOLVE_MAX = 64
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TabularMdp:
    embed: np.ndarray   # (S, d) state coordinates, d <= 3
    reward: np.ndarray  # (S, A), entries in [-1, 1]
    trans: np.ndarray   # (S, A, S) row-stochastic in the last axis
    gamma: float
    l_r: float
    l_p: float

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


@dataclass(frozen=True)
class TabularPolicy:
    probs: np.ndarray  # (S, A)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class ValuePair:
    v: np.ndarray  # (S,)
    q: np.ndarray  # (S, A)


@dataclass(frozen=True)
class LipschitzBounds:
    l_q: float
    l_v: float


def state_distances(embed: np.ndarray) -> np.ndarray:
    diff = embed[:, None, :] - embed[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def validate_mdp(mdp: TabularMdp, tol: float = 1e-9) -> None:
    """Audit all TabularMdp invariants; raises ValueError on any violation."""
    s, a = mdp.n_states, mdp.n_actions
    if mdp.embed.shape[0] != s or mdp.trans.shape != (s, a, s):
        raise ValueError("inconsistent array shapes")
    if not 0.0 < mdp.gamma < 1.0:
        raise ValueError(f"gamma must be in (0,1), got {mdp.gamma}")
    if mdp.l_r < 0 or mdp.l_p < 0:
        raise ValueError("Lipschitz constants must be >= 0")
    if np.any(np.abs(mdp.reward) > 1.0 + tol):
        raise ValueError("rewards must lie in [-1, 1]")
    if np.any(mdp.trans < -tol):
        raise ValueError("transition probabilities must be nonnegative")
    row_sums = mdp.trans.sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
        raise ValueError("transition rows must sum to 1 within 1e-12")
    slopes = audit_smoothness(mdp)
    if slopes["reward_slope"] > mdp.l_r + tol:
        raise ValueError(f"measured reward slope {slopes['reward_slope']} exceeds l_r={mdp.l_r}")
    if slopes["trans_slope"] > mdp.l_p + tol:
        raise ValueError(f"measured transition slope {slopes['trans_slope']} exceeds l_p={mdp.l_p}")


def audit_smoothness(mdp: TabularMdp) -> dict:
    """Exhaustive pairwise slope measurement over all (s, s', a) triples."""
    dist = state_distances(mdp.embed)
    iu = np.triu_indices(mdp.n_states, k=1)
    d = dist[iu]
    mask = d > 1e-12
    reward_slope, trans_slope = 0.0, 0.0
    if np.any(mask):
        r_diff = np.abs(mdp.reward[iu[0]] - mdp.reward[iu[1]]).max(axis=1)
        p_diff = np.abs(mdp.trans[iu[0]] - mdp.trans[iu[1]]).sum(axis=-1).max(axis=1)
        reward_slope = float(np.max(r_diff[mask] / d[mask]))
        trans_slope = float(np.max(p_diff[mask] / d[mask]))
    return {"reward_slope": reward_slope, "trans_slope": trans_slope}


def gen_smooth_mdp(n_states, n_actions, l_r, l_p, gamma, seed, d=2) -> TabularMdp:
    """Random instance satisfying the smoothness invariants exactly.

    Rewards ride a clipped linear ramp along a random unit direction (slope
    l_r); transition rows interpolate between two fixed distributions with a
    clipped linear mixing weight whose slope is l_p / ||p - q||_1, so the
    L1 bound holds by construction.
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError("n_states and n_actions must be >= 1")
    if l_r < 0 or l_p < 0:
        raise ValueError("Lipschitz constants must be >= 0")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    if not 1 <= d <= 3:
        raise ValueError(f"embedding dimension must be in [1,3], got {d}")
    rng = np.random.default_rng(seed)
    embed = rng.uniform(0.0, 1.0, size=(n_states, d))
    reward = np.empty((n_states, n_actions))
    trans = np.empty((n_states, n_actions, n_states))
    for a in range(n_actions):
        w = rng.standard_normal(d)
        w /= max(np.linalg.norm(w), 1e-12)
        base = rng.uniform(-0.5, 0.5)
        reward[:, a] = np.clip(base + l_r * (embed @ w - 0.5 * w.sum()), -1.0, 1.0)

        p = rng.dirichlet(np.ones(n_states))
        q = rng.dirichlet(np.ones(n_states))
        gap = float(np.abs(p - q).sum())
        w2 = np.abs(rng.standard_normal(d))
        w2 /= max(np.linalg.norm(w2), 1e-12)
        c = l_p / gap if gap > 1e-12 else 0.0
        t = np.clip(c * (embed @ w2), 0.0, 1.0)
        trans[:, a, :] = (1.0 - t)[:, None] * p + t[:, None] * q
    # exact renormalization guards float drift in the mixture rows
    trans /= trans.sum(axis=-1, keepdims=True)
    mdp = TabularMdp(embed, reward, trans, float(gamma), float(l_r), float(l_p))
    validate_mdp(mdp)
    return mdp


def random_policy(n_states, n_actions, seed) -> TabularPolicy:
    rng = np.random.default_rng(seed)
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


def _check_policy(mdp: TabularMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.probs.shape} does not match MDP "
                         f"({mdp.n_states}, {mdp.n_actions})")


def policy_eval(mdp: TabularMdp, policy: TabularPolicy, tol: float = 1e-10) -> ValuePair:
    """Exact policy evaluation: direct linear solve for small MDPs, otherwise
    iterative refinement until the Bellman residual is within tol."""
    _check_policy(mdp, policy)
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    probs = policy.probs
    p_pi = np.einsum("sa,sat->st", probs, mdp.trans)
    r_pi = np.sum(probs * mdp.reward, axis=1)
    if mdp.n_states <= DIRECT_SOLVE_MAX:
        v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    else:
        v = np.zeros(mdp.n_states)
        while True:
            v_new = r_pi + mdp.gamma * p_pi @ v
            if np.max(np.abs(v_new - v)) * mdp.gamma / (1 - mdp.gamma) <= tol:
                v = v_new
                break
            v = v_new
    residual = np.max(np.abs(v - (r_pi + mdp.gamma * p_pi @ v)))
    if residual > tol:
        raise ArithmeticError(f"Bellman residual {residual} exceeds tol {tol}")
    q = mdp.reward + mdp.gamma * mdp.trans @ v
    return ValuePair(v, q)


def value_iteration(mdp: TabularMdp, tol: float = 1e-10) -> np.ndarray:
    """Optimal q-table with sup-norm Bellman residual <= tol."""
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    while True:
        tq = mdp.reward + mdp.gamma * mdp.trans @ q.max(axis=1)
        if np.max(np.abs(tq - q)) <= tol:
            return tq
        q = tq


def optimal_values(mdp: TabularMdp) -> ValuePair:
    """Exact V*, Q* by policy iteration (finite convergence, machine precision)."""
    q = value_iteration(mdp, tol=1e-8)
    greedy = q.argmax(axis=1)
    for _ in range(mdp.n_states * mdp.n_actions + 1):
        probs = np.zeros((mdp.n_states, mdp.n_actions))
        probs[np.arange(mdp.n_states), greedy] = 1.0
        vp = policy_eval(mdp, TabularPolicy(probs), tol=1e-9)
        new_greedy = vp.q.argmax(axis=1)
        if np.array_equal(new_greedy, greedy):
            return vp
        greedy = new_greedy
    raise ArithmeticError("policy iteration failed to converge")


def softmax_policy(q_table: np.ndarray, epsilon_target: float, n_actions: int) -> TabularPolicy:
    """Rows are softmax(eta * q) with eta = ln(n_actions) / epsilon_target."""
    if epsilon_target <= 0:
        raise ValueError(f"epsilon_target must be > 0, got {epsilon_target}")
    q = np.asarray(q_table, dtype=float)
    eta = np.log(n_actions) / epsilon_target
    z = eta * q
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return TabularPolicy(e / e.sum(axis=1, keepdims=True))


def empirical_lipschitz(values: np.ndarray, embed: np.ndarray, output_metric: str = "l1") -> float:
    """Max over state pairs of output distance / embedding distance.

    output_metric 'l1' for per-state vectors (e.g. policy rows), 'abs' for scalars.
    """
    values = np.asarray(values, dtype=float)
    embed = np.asarray(embed, dtype=float)
    if embed.shape[0] < 2:
        raise ValueError("need at least 2 states")
    dist = state_distances(embed)
    iu = np.triu_indices(embed.shape[0], k=1)
    d = dist[iu]
    mask = d > 1e-12
    if not np.any(mask):
        raise ValueError("all states are co-located; the metric is degenerate")
    if output_metric == "abs":
        out = np.abs(values[iu[0]] - values[iu[1]])
    elif output_metric == "l1":
        out = np.abs(values[iu[0]] - values[iu[1]]).sum(axis=-1)
    else:
        raise ValueError(f"output_metric must be 'l1' or 'abs', got {output_metric!r}")
    return float(np.max(out[mask] / d[mask]))


def lipschitz_bounds(l_r: float, l_p: float, l_pi: float, gamma: float) -> LipschitzBounds:
    """L_Q = L_r + gamma*L_P/(1-gamma); L_V = L_pi/(1-gamma) + L_Q."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    if min(l_r, l_p, l_pi) < 0:
        raise ValueError("Lipschitz constants must be >= 0")
    l_q = l_r + gamma * l_p / (1.0 - gamma)
    l_v = l_pi / (1.0 - gamma) + l_q
    return LipschitzBounds(l_q, l_v)


def interpolate_policy(mdp: TabularMdp, policy: TabularPolicy):
    """Continuous extension of a tabular policy over the embedding.

    Blends the two nearest embedded states with inverse-distance weights
    (re-normalized); exact at the embedded states themselves.
    """
    _check_policy(mdp, policy)
    embed, probs = mdp.embed, policy.probs

    def pi(x: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(embed - np.asarray(x, dtype=float), axis=1)
        if embed.shape[0] == 1:
            return probs[0]
        i1, i2 = np.argsort(d, kind="stable")[:2]
        d1, d2 = d[i1], d[i2]
        if d1 + d2 < 1e-300 or d1 < 1e-12:
            return probs[i1]
        w1 = d2 / (d1 + d2)
        return w1 * probs[i1] + (1.0 - w1) * probs[i2]

    return pi


def delta_grid(epsilon: float, d: int, resolution: int = 9, norm: str = "l2") -> np.ndarray:
    """Finite perturbation grid inside the epsilon-ball (resolution^d candidates)."""
    axes = [np.linspace(-epsilon, epsilon, resolution)] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    if norm == "l2":
        pts = pts[np.linalg.norm(pts, axis=1) <= epsilon + 1e-15]
    return pts


@dataclass(frozen=True)
class GapResult:
    gap: float        # worst observed |V - V_perturbed| over states
    l_pi: float       # measured Lipschitz constant restricted to the searched grid
    bound: float      # 2 * l_pi * eps / (1-gamma)^2
    horizon: int


def perturbed_value_gap(mdp: TabularMdp, policy: TabularPolicy, epsilon: float,
                        horizon: int, grid_resolution: int = 9, seed: int = 0,
                        delta_norm: str = "l2") -> GapResult:
    """Worst-case value deviation under per-step grid-searched observation shifts.

    The adversary perturbs each state's observed embedding by a grid point in
    the epsilon-ball; backward DP over the horizon yields the best perturbing
    sequence within the grid (both reward-minimizing and -maximizing runs).
    """
    _check_policy(mdp, policy)
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if mdp.gamma ** horizon / (1.0 - mdp.gamma) >= 1e-6:
        raise ValueError(f"horizon {horizon} too small: gamma^T/(1-gamma) >= 1e-6")
    s, a = mdp.n_states, mdp.n_actions
    pi = interpolate_policy(mdp, policy)
    grid = delta_grid(epsilon, mdp.embed.shape[1], grid_resolution, delta_norm)
    g = grid.shape[0]

    tilde = np.empty((s, g, a))
    for i in range(s):
        for j in range(g):
            tilde[i, j] = pi(mdp.embed[i] + grid[j])

    l_pi = 0.0
    if epsilon > 0:
        norms = np.linalg.norm(grid, axis=1)
        nz = norms > 1e-12
        if np.any(nz):
            tv = np.abs(tilde - policy.probs[:, None, :]).sum(axis=-1)  # (s, g)
            l_pi = float(np.max(tv[:, nz] / norms[nz]))

    w_min = np.zeros(s)
    w_max = np.zeros(s)
    v_clean = np.zeros(s)
    for _ in range(horizon):
        q_min = mdp.reward + mdp.gamma * mdp.trans @ w_min
        q_max = mdp.reward + mdp.gamma * mdp.trans @ w_max
        q_clean = mdp.reward + mdp.gamma * mdp.trans @ v_clean
        w_min = np.einsum("sga,sa->sg", tilde, q_min).min(axis=1)
        w_max = np.einsum("sga,sa->sg", tilde, q_max).max(axis=1)
        v_clean = np.sum(policy.probs * q_clean, axis=1)

    gap = float(max(np.max(np.abs(v_clean - w_min)), np.max(np.abs(v_clean - w_max))))
    bound = 2.0 * l_pi * epsilon / (1.0 - mdp.gamma) ** 2
    return GapResult(gap, l_pi, bound, horizon)


def mdp_to_json(mdp: TabularMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "l_r": mdp.l_r,
        "l_p": mdp.l_p,
        "embed": mdp.embed.tolist(),
        "reward": mdp.reward.tolist(),
        "trans": mdp.trans.tolist(),
    }


def mdp_from_json(doc: dict) -> TabularMdp:
    mdp = TabularMdp(
        embed=np.asarray(doc["embed"], dtype=float),
        reward=np.asarray(doc["reward"], dtype=float),
        trans=np.asarray(doc["trans"], dtype=float),
        gamma=float(doc["gamma"]),
        l_r=float(doc["l_r"]),
        l_p=float(doc["l_p"]),
    )
    if mdp.n_states != int(doc["n_states"]) or mdp.n_actions != int(doc["n_actions"]):
        raise ValueError("declared sizes disagree with array shapes")
    return mdp


def save_mdp(mdp: TabularMdp, path) -> None:
    with open(path, "w") as f:
        json.dump(mdp_to_json(mdp), f, sort_keys=True)


def load_mdp(path) -> TabularMdp:
    with open(path) as f:
        return mdp_from_json(json.load(f))
