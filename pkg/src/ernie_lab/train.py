# Training loops for QCOMBO (gridq) and MADDPG-style DDPG (coopnav) with the
# adversarial-regularization hooks. Single-threaded per seed; all randomness
# comes from two named streams so the regularizer path never shifts the
# environment stream.
from __future__ import annotations

import json
import time
from collections import deque
from pathlib import Path

import numpy as np

from .actionreg import greedy_action_attack
from .advreg import (AttackConfig, pgd_attack, reg_value_and_grads,
                     regularized_grad, stackelberg_grad)
from .algos import (DdpgAgents, QComboAgents, _joint_onehot, apply_grad,
                    ddpg_updates, qcombo_losses, select_action_continuous,
                    select_action_discrete, soft_update)
from .config import ExperimentConfig
from .envs import CoopNavEnv, GridQueueEnv
from .net import (grads_to_vector, n_params, net_forward, net_grads, net_init,
                  save_net)
from .replay import ReplayBuffer, Transition, stack_batch

QCOMBO_HEADER = ("step,seed,episodic_return_mean,episodic_return_std,"
                 "loss_ind,loss_glob,loss_reg,loss_total,reg_value_mean,attack_norm_mean")
DDPG_HEADER = ("step,seed,episodic_return_mean,episodic_return_std,"
               "loss_critic,actor_obj,loss_reg,loss_total,reg_value_mean,attack_norm_mean")


def _fmt(x) -> str:
    return repr(float(x))


def _explore_rate(t: int, steps: int, final: float) -> float:
    if steps <= 0:
        return final
    frac = min(1.0, t / (0.3 * steps))
    return 1.0 + (final - 1.0) * frac


def _lr_at(t: int, steps: int, lr: float, decay: float) -> float:
    if steps <= 0:
        return lr
    return lr * (1.0 - decay * t / steps)


def make_env(cfg: ExperimentConfig):
    if cfg.env == "gridq":
        side = int(round(cfg.n_agents ** 0.5))
        return GridQueueEnv(side, side)
    return CoopNavEnv(cfg.n_agents)


def _net_seeds(seed: int, count: int) -> list[int]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4e45]))
    return [int(s) for s in rng.integers(2 ** 31, size=count)]


def build_qcombo(cfg: ExperimentConfig, env: GridQueueEnv, seed: int) -> QComboAgents:
    hid = cfg["hidden"]
    n = env.n_agents
    seeds = _net_seeds(seed, n + 1)
    ind = [net_init([env.obs_dim, hid, env.n_phases], seed=seeds[i]) for i in range(n)]
    glob = net_init([env.state_dim + n * env.n_phases, hid, 1], seed=seeds[n])
    return QComboAgents(ind=ind, glob=glob, ind_target=list(ind), glob_target=glob,
                        n_actions=env.n_phases)


def build_ddpg(cfg: ExperimentConfig, env: CoopNavEnv, seed: int) -> DdpgAgents:
    hid = cfg["hidden"]
    n = env.n_agents
    seeds = _net_seeds(seed, n + 1)
    actors = [net_init([env.obs_dim, hid, env.action_dim], seed=seeds[i]) for i in range(n)]
    critic = net_init([env.state_dim + n * env.action_dim, hid, 1], seed=seeds[n])
    return DdpgAgents(actors=actors, critic=critic, actor_target=list(actors),
                      critic_target=critic, action_dim=env.action_dim)


def _attack_config(cfg: ExperimentConfig, seed: int) -> AttackConfig:
    e = cfg["ernie"]
    return AttackConfig(epsilon=float(e["epsilon"]), k_steps=int(e["k_steps"]),
                        eta=e["eta"], norm=e["norm"],
                        metric=e["metric"] or "sq_l2", seed=seed)


def _obs_regularizer(net, obs_rows, acfg: AttackConfig, mode: str,
                     attack_rng: np.random.Generator, stackelberg: bool):
    """Mean regularizer value, mean parameter gradient, mean attack norm."""
    rows = obs_rows.shape[0]
    if mode == "gaussian":
        sigma = acfg.epsilon
        delta = (np.zeros_like(obs_rows) if sigma == 0.0
                 else sigma * attack_rng.standard_normal(obs_rows.shape))
    else:
        delta = pgd_attack(net, obs_rows, acfg, rng=attack_rng)
    vals, _, gt = reg_value_and_grads(net, obs_rows, delta, acfg.metric)
    if stackelberg and mode == "pgd":
        gt = sum(stackelberg_grad(net, obs_rows[r], acfg, rng=attack_rng)
                 for r in range(rows))
    value = float(np.mean(vals))
    norm = float(np.mean(np.linalg.norm(delta, axis=-1)))
    return value, gt / rows, norm


def _glob_q_fn(glob_net, n_actions: int):
    def q(state_vec, joint):
        joint = np.asarray(joint, dtype=int)
        x = np.concatenate([state_vec, _joint_onehot(joint[None, :], n_actions)[0]])
        return float(net_forward(glob_net, x)[0])
    return q


def _action_regularizer_grad(agents: QComboAgents, batch: dict, k: int, rows: int):
    """Mean (Q(s,a) - Q(s, a_adv))^2 over the first rows of the batch, with its
    gradient w.r.t. the global Q parameters."""
    rows = min(rows, batch["state"].shape[0])
    n_actions = agents.n_actions
    qfn = _glob_q_fn(agents.glob, n_actions)
    x_clean, x_adv, keep = [], [], []
    for r in range(rows):
        state = batch["state"][r]
        actions = tuple(int(a) for a in batch["actions"][r])
        res = greedy_action_attack(qfn, state, actions, n_actions, k)
        if res.perturbed == actions:
            continue
        oh = _joint_onehot(np.asarray([actions, res.perturbed]), n_actions)
        x_clean.append(np.concatenate([state, oh[0]]))
        x_adv.append(np.concatenate([state, oh[1]]))
        keep.append(r)
    if not keep:
        return 0.0, np.zeros(n_params(agents.glob)), 0
    xc, xa = np.stack(x_clean), np.stack(x_adv)
    qc = net_forward(agents.glob, xc)[:, 0]
    qa = net_forward(agents.glob, xa)[:, 0]
    diff = qc - qa
    value = float(np.sum(diff ** 2) / rows)
    up = (2.0 * diff / rows)[:, None]
    grad = (grads_to_vector(net_grads(agents.glob, xc, up).grad_params)
            - grads_to_vector(net_grads(agents.glob, xa, up).grad_params))
    return value, grad, len(keep)


def _cloud_regularizer_grad(critic, batch: dict, n_agents: int, rows: int,
                            steps: int, eta: float, lam_w: float, jitter: float,
                            attack_rng: np.random.Generator):
    """Mean-field cloud regularizer on the centralized critic: penalized
    ascent on the agent-position block (the empirical state cloud), with the
    differentiable identity-coupling transport penalty."""
    rows = min(rows, batch["state"].shape[0])
    acts = batch["actions"][:rows].reshape(rows, -1)
    x0 = np.concatenate([batch["state"][:rows], acts], axis=1)
    q0 = net_forward(critic, x0)[:, 0]
    pdim = 2 * n_agents
    pos0 = x0[:, :pdim]
    pos = pos0 + (jitter * attack_rng.standard_normal(pos0.shape) if jitter > 0
                  else 0.0)
    for _ in range(steps):
        x = x0.copy()
        x[:, :pdim] = pos
        q = net_forward(critic, x)[:, 0]
        gin = net_grads(critic, x, (2.0 * (q - q0))[:, None]).grad_input[:, :pdim]
        dpos = (pos - pos0).reshape(rows, n_agents, 2)
        nrm = np.linalg.norm(dpos, axis=2, keepdims=True)
        pen = np.where(nrm > 1e-12, dpos / np.maximum(nrm, 1e-12), 0.0)
        pos = pos + eta * (gin - lam_w * pen.reshape(rows, pdim) / n_agents)
    x = x0.copy()
    x[:, :pdim] = pos
    diff = net_forward(critic, x)[:, 0] - q0
    value = float(np.mean(diff ** 2))
    up = (2.0 * diff / rows)[:, None]
    grad = (grads_to_vector(net_grads(critic, x, up).grad_params)
            - grads_to_vector(net_grads(critic, x0, up).grad_params))
    move = float(np.mean(np.linalg.norm((pos - pos0).reshape(rows, n_agents, 2), axis=2)))
    return value, grad, move


class _MetricsWriter:
    def __init__(self, path: Path, header: str):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(header + "\n")

    def row(self, values):
        with self.path.open("a") as fh:
            fh.write(",".join(values) + "\n")


def _save_checkpoint(out: Path, step: int, nets: dict, meta: dict) -> Path:
    ck = out / f"ckpt_{step:06d}"
    ck.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, net in nets.items():
        save_net(net, ck / f"{name}.json")
        files[name] = f"{name}.json"
    manifest = dict(meta, step=step, files=files)
    (ck / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ck


def _episode_stats(recent) -> tuple[float, float]:
    if not recent:
        return float("nan"), float("nan")
    arr = np.asarray(recent, dtype=float)
    return float(arr.mean()), float(arr.std())


def train_qcombo(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    env = make_env(cfg)
    agents = build_qcombo(cfg, env, seed)
    steps = int(cfg["train_steps"])
    ss = np.random.SeedSequence(seed)
    env_rng, attack_rng = [np.random.default_rng(c) for c in ss.spawn(2)]
    buf = ReplayBuffer(cfg["replay_capacity"])
    metrics = _MetricsWriter(out_dir / "metrics.csv", QCOMBO_HEADER)
    meta = {"algo": "qcombo", "env": cfg.env, "n_agents": env.n_agents,
            "hidden": cfg["hidden"], "seed": seed}
    nets = lambda: {**{f"ind_{i}": agents.ind[i] for i in range(env.n_agents)},
                    "glob": agents.glob}
    _save_checkpoint(out_dir, 0, nets(), meta)
    interval = max(1, steps // 10)

    ecfg = cfg["ernie"]
    acfg = _attack_config(cfg, seed)
    ernie_on = bool(ecfg["enabled"]) and ecfg["lambda"] != 0.0
    ea = cfg["ernie_a"]
    ernie_a_on = bool(ea["enabled"]) and ea["lambda"] != 0.0 and ea["k"] > 0

    state, obs = env.reset(int(env_rng.integers(2 ** 31)))
    recent = deque(maxlen=10)
    ep_ret, ep_len = 0.0, 0
    t0 = time.monotonic()
    for t in range(1, steps + 1):
        rate = _explore_rate(t, steps, cfg["explore_final"])
        actions = np.array([select_action_discrete(agents.ind[i], obs[i], rate,
                                                   env_rng, env.n_phases)
                            for i in range(env.n_agents)])
        gs = env.global_state(state)
        nstate, nobs, rewards, g_reward = env.step(state, actions)
        done = ep_len + 1 >= env.episode_len
        buf.push(Transition(obs=obs.copy(), global_state=gs, joint_action=actions,
                            rewards=rewards, global_reward=g_reward,
                            next_obs=nobs.copy(),
                            next_global_state=env.global_state(nstate), done=done))
        ep_ret += g_reward
        ep_len += 1
        state, obs = nstate, nobs
        if done:
            recent.append(ep_ret)
            ep_ret, ep_len = 0.0, 0
            state, obs = env.reset(int(env_rng.integers(2 ** 31)))

        losses = {"ind": 0.0, "glob": 0.0, "reg": 0.0, "total": 0.0}
        reg_val, atk_norm = 0.0, 0.0
        if t >= cfg["warmup"]:
            batch = stack_batch(buf.sample(cfg["batch"], env_rng))
            losses, grads = qcombo_losses(batch, agents, cfg["gamma"], cfg["lambda_q"])
            if ernie_on and t >= ecfg["start_frac"] * steps:
                vals, norms = [], []
                rows = min(int(ecfg["reg_rows"]), batch["obs"].shape[0])
                for i in range(env.n_agents):
                    v, gt, nn = _obs_regularizer(agents.ind[i], batch["obs"][:rows, i],
                                                 acfg, ecfg["mode"], attack_rng,
                                                 bool(ecfg["stackelberg"]))
                    grads["ind"][i] = regularized_grad(grads["ind"][i], [gt],
                                                       ecfg["lambda"])
                    vals.append(v)
                    norms.append(nn)
                reg_val = float(np.mean(vals))
                atk_norm = float(np.mean(norms))
            if ernie_a_on:
                av, ag, hits = _action_regularizer_grad(agents, batch, int(ea["k"]),
                                                        int(ea["rows"]))
                if hits:
                    grads["glob"] = regularized_grad(grads["glob"], [ag], ea["lambda"])
                reg_val += float(av)
            lr_t = _lr_at(t, steps, cfg["lr"], cfg["lr_decay"])
            for i in range(env.n_agents):
                agents.ind[i] = apply_grad(agents.ind[i], grads["ind"][i], lr_t)
            agents.glob = apply_grad(agents.glob, grads["glob"], lr_t)
            agents.ind_target = [soft_update(tg, on, cfg["tau"])
                                 for tg, on in zip(agents.ind_target, agents.ind)]
            agents.glob_target = soft_update(agents.glob_target, agents.glob, cfg["tau"])

        if t % cfg["log_interval"] == 0:
            m, s = _episode_stats(recent)
            metrics.row([str(t), str(seed), _fmt(m), _fmt(s), _fmt(losses["ind"]),
                         _fmt(losses["glob"]), _fmt(losses["reg"]),
                         _fmt(losses["total"]), _fmt(reg_val), _fmt(atk_norm)])
        if t % interval == 0:
            _save_checkpoint(out_dir, t, nets(), meta)

    (out_dir / "timings.json").write_text(json.dumps(
        {"seed": seed, "steps": steps,
         "wall_ms": (time.monotonic() - t0) * 1000.0}) + "\n")
    return {"out_dir": str(out_dir), "final_checkpoint": str(out_dir / f"ckpt_{steps:06d}")}


def train_ddpg(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    env = make_env(cfg)
    agents = build_ddpg(cfg, env, seed)
    steps = int(cfg["train_steps"])
    ss = np.random.SeedSequence(seed)
    env_rng, attack_rng = [np.random.default_rng(c) for c in ss.spawn(2)]
    buf = ReplayBuffer(cfg["replay_capacity"])
    metrics = _MetricsWriter(out_dir / "metrics.csv", DDPG_HEADER)
    meta = {"algo": cfg.algo, "env": cfg.env, "n_agents": env.n_agents,
            "hidden": cfg["hidden"], "seed": seed}
    nets = lambda: {**{f"actor_{i}": agents.actors[i] for i in range(env.n_agents)},
                    "critic": agents.critic}
    _save_checkpoint(out_dir, 0, nets(), meta)
    interval = max(1, steps // 10)

    ecfg = cfg["ernie"]
    acfg = _attack_config(cfg, seed)
    ernie_on = bool(ecfg["enabled"]) and ecfg["lambda"] != 0.0
    mf = cfg["meanfield"]
    mf_on = cfg.algo == "mf_ddpg" and bool(mf["enabled"]) and ecfg["lambda"] != 0.0

    state, obs = env.reset(int(env_rng.integers(2 ** 31)))
    recent = deque(maxlen=10)
    ep_ret, ep_len = 0.0, 0
    t0 = time.monotonic()
    for t in range(1, steps + 1):
        actions = np.stack([select_action_continuous(agents.actors[i], obs[i],
                                                     cfg["actor_noise"], env_rng)
                            for i in range(env.n_agents)])
        gs = env.global_state(state)
        nstate, nobs, rewards, g_reward = env.step(state, actions)
        done = ep_len + 1 >= env.episode_len
        buf.push(Transition(obs=obs.copy(), global_state=gs, joint_action=actions,
                            rewards=rewards, global_reward=g_reward,
                            next_obs=nobs.copy(),
                            next_global_state=env.global_state(nstate), done=done))
        ep_ret += g_reward
        ep_len += 1
        state, obs = nstate, nobs
        if done:
            recent.append(ep_ret)
            ep_ret, ep_len = 0.0, 0
            state, obs = env.reset(int(env_rng.integers(2 ** 31)))

        losses = {"critic": 0.0, "actor_obj": 0.0}
        reg_val, atk_norm = 0.0, 0.0
        if t >= cfg["warmup"]:
            batch = stack_batch(buf.sample(cfg["batch"], env_rng))
            losses, grads = ddpg_updates(batch, agents, cfg["gamma"])
            if ernie_on and t >= ecfg["start_frac"] * steps:
                vals, norms = [], []
                rows = min(int(ecfg["reg_rows"]), batch["obs"].shape[0])
                for i in range(env.n_agents):
                    v, gt, nn = _obs_regularizer(agents.actors[i], batch["obs"][:rows, i],
                                                 acfg, ecfg["mode"], attack_rng,
                                                 bool(ecfg["stackelberg"]))
                    grads["actors"][i] = regularized_grad(grads["actors"][i], [gt],
                                                          ecfg["lambda"])
                    vals.append(v)
                    norms.append(nn)
                reg_val = float(np.mean(vals))
                atk_norm = float(np.mean(norms))
            if mf_on:
                mv, mg, _ = _cloud_regularizer_grad(
                    agents.critic, batch, env.n_agents, int(ecfg["reg_rows"]),
                    int(mf["mf_steps"]), float(mf["mf_eta"]),
                    float(mf["lambda_w"]), 0.01, attack_rng)
                grads["critic"] = regularized_grad(grads["critic"], [mg],
                                                   ecfg["lambda"])
                reg_val += mv
            lr_t = _lr_at(t, steps, cfg["lr"], cfg["lr_decay"])
            actor_lr = cfg["lr"] if cfg["actor_lr"] is None else cfg["actor_lr"]
            actor_lr_t = _lr_at(t, steps, actor_lr, cfg["lr_decay"])
            agents.critic = apply_grad(agents.critic, grads["critic"], lr_t)
            for i in range(env.n_agents):
                agents.actors[i] = apply_grad(agents.actors[i], grads["actors"][i],
                                              actor_lr_t)
            agents.critic_target = soft_update(agents.critic_target, agents.critic,
                                               cfg["tau"])
            agents.actor_target = [soft_update(tg, on, cfg["tau"])
                                   for tg, on in zip(agents.actor_target, agents.actors)]

        if t % cfg["log_interval"] == 0:
            m, s = _episode_stats(recent)
            metrics.row([str(t), str(seed), _fmt(m), _fmt(s), _fmt(losses["critic"]),
                         _fmt(losses["actor_obj"]), _fmt(reg_val),
                         _fmt(losses["critic"] + reg_val), _fmt(reg_val), _fmt(atk_norm)])
        if t % interval == 0:
            _save_checkpoint(out_dir, t, nets(), meta)

    (out_dir / "timings.json").write_text(json.dumps(
        {"seed": seed, "steps": steps,
         "wall_ms": (time.monotonic() - t0) * 1000.0}) + "\n")
    return {"out_dir": str(out_dir), "final_checkpoint": str(out_dir / f"ckpt_{steps:06d}")}


def train_run(cfg: ExperimentConfig, out_root) -> list[dict]:
    out_root = Path(out_root)
    results = []
    for seed in cfg.seeds:
        fn = train_qcombo if cfg.algo == "qcombo" else train_ddpg
        results.append(fn(cfg, int(seed), out_root / f"seed_{seed}"))
    return results
