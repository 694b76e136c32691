"""Fine-tuning the pre-trained diffusion policy on a rewarded task.

Each iteration learns Q/V heads (expectile regression, or an in-sample softmax value as an
ablation), fits a time-indexed energy f_phi by contrastive energy prediction against
softmax(Q/beta) over K actions drawn from the frozen prior eps_theta, and distills
eps_theta - sigma_t grad f_phi into a trainable copy eps_psi that drives data collection.
The target policy is pi(a|s) ∝ pi_d(a|s) exp(Q(s,a)/beta).
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import brentq
from torch import nn

from .config import RunConfig
from .diffusion import (
    EpsPredictor,
    GuidanceNet,
    NoiseSchedule,
    adam,
    guided_eps,
    load_checkpoint,
    perturb,
    sample,
    sample_t,
    save_checkpoint,
)
from .errors import CheckpointMissing, KTooSmall, NonFiniteGradient
from .maze import MazeEnv, TaskReward, make_task, resolve_maze
from .pretrain import ActorCritic, ddpg_update, make_models, mlp, to_net
from .replay import ReplayBuffer, Transition
from .tabular import soft_policy_step_exact  # noqa: F401  (exact tabular counterpart of the update)


def expectile_loss(u, tau: float):
    """L_2^tau(u) = |tau - 1(u < 0)| u^2, elementwise."""
    if torch.is_tensor(u):
        return torch.abs(tau - (u < 0).to(u.dtype)) * u**2
    u = np.asarray(u, dtype=float)
    out = np.abs(tau - (u < 0)) * u**2
    return float(out) if out.ndim == 0 else out


def tabular_expectile(values, tau: float, weights=None) -> float:
    """Exact minimizer over v of sum_i w_i L_2^tau(q_i - v)."""
    q = np.asarray(values, dtype=float).ravel()
    w = np.ones_like(q) if weights is None else np.asarray(weights, dtype=float).ravel()
    lo, hi = q.min(), q.max()
    if hi - lo < 1e-300:
        return float(lo)

    def grad(v):
        u = q - v
        return float((w * np.abs(tau - (u < 0)) * u).sum())

    return float(brentq(grad, lo, hi, xtol=1e-14, rtol=1e-15))


class IQLHeads(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, hidden: int = 256, lr: float = 3e-4,
                 expectile: float = 0.7, target_tau: float = 0.005):
        super().__init__()
        if not 0.5 < expectile < 1.0:
            raise ValueError("expectile must lie in (0.5, 1)")
        self.q_net = mlp(state_dim + action_dim, hidden, 1)
        self.v_net = mlp(state_dim, hidden, 1)
        self.q_target = copy.deepcopy(self.q_net).requires_grad_(False)
        self.q_opt = adam(self.q_net.parameters(), lr)
        self.v_opt = adam(self.v_net.parameters(), lr)
        self.expectile, self.target_tau = expectile, target_tau

    def q(self, s, a, target: bool = False):
        net = self.q_target if target else self.q_net
        return net(torch.cat([s, a], dim=-1)).squeeze(-1)

    def v(self, s):
        return self.v_net(s).squeeze(-1)

    @torch.no_grad()
    def soft_update(self):
        for p, tp in zip(self.q_net.parameters(), self.q_target.parameters()):
            tp.mul_(1.0 - self.target_tau).add_(self.target_tau * p)


def iql_update(heads: IQLHeads, s, a, ret, discount, s_boot, support=None, beta: float = 1.0,
               q_method: str = "iql") -> dict:
    """One V step then one Q step toward ret + discount * V(s_boot).

    ``discount`` already folds gamma^k and the terminal mask. With ``q_method='in_sample_softmax'``
    V regresses onto sum_i softmax(Q(s, a_i)/beta) Q(s, a_i) over ``support`` actions (B, K, da).
    """
    with torch.no_grad():
        if q_method == "iql":
            q_sa = heads.q(s, a, target=True)
        else:
            B, K, da = support.shape
            q_k = heads.q(s.repeat_interleave(K, 0), support.reshape(B * K, da), target=True).view(B, K)
            q_sa = (torch.softmax(q_k / beta, dim=1) * q_k).sum(dim=1)
    diff = q_sa - heads.v(s)
    v_loss = expectile_loss(diff, heads.expectile).mean() if q_method == "iql" else (diff**2).mean()
    heads.v_opt.zero_grad()
    v_loss.backward()
    heads.v_opt.step()

    with torch.no_grad():
        target = ret + discount * heads.v(s_boot)
    q_loss = ((heads.q(s, a) - target) ** 2).mean()
    heads.q_opt.zero_grad()
    q_loss.backward()
    heads.q_opt.step()
    heads.soft_update()
    return {"v_loss": v_loss.item(), "q_loss": q_loss.item()}


def cep_targets(q_values, beta: float):
    """softmax(Q / beta) over the K axis; invariant to adding a constant to Q."""
    return torch.softmax(q_values / beta, dim=-1)


def cep_loss(f: GuidanceNet, s, actions, q_values, beta: float, schedule: NoiseSchedule, generator=None,
             t_min: float = 1e-3, t=None, eps=None):
    """-sum_i softmax_i(Q/beta) log softmax_i(f(s, a_t^i, t)); one t per state shared by its K actions."""
    B, K, da = actions.shape
    if K < 2:
        raise KTooSmall(f"CEP needs K >= 2 actions per state, got {K}")
    if t is None:
        t = sample_t(B, generator, t_min, actions.dtype)
    if eps is None:
        eps = torch.randn(actions.shape, generator=generator, dtype=actions.dtype)
    tk = t.repeat_interleave(K)
    a_t = perturb(schedule, actions.reshape(B * K, da), tk, eps.reshape(B * K, da))
    logits = f(s.repeat_interleave(K, 0), a_t, tk).view(B, K)
    return -(cep_targets(q_values, beta) * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def cep_update(f: GuidanceNet, opt, s, actions, q_values, beta: float, schedule: NoiseSchedule,
               generator=None, t_min: float = 1e-3) -> float:
    loss = cep_loss(f, s, actions, q_values, beta, schedule, generator, t_min)
    opt.zero_grad()
    loss.backward()
    opt.step()
    return loss.item()


def distill_loss(eps_psi, eps_theta, f, s, a, schedule: NoiseSchedule, generator=None, t_min: float = 1e-3,
                 t=None, eps=None):
    """||eps_psi(a_t|s,t) - (eps_theta(a_t|s,t) - sigma_t grad_{a_t} f(s,a_t,t))||^2, target held fixed."""
    if t is None:
        t = sample_t(a.shape[0], generator, t_min, a.dtype)
    if eps is None:
        eps = torch.randn(a.shape, generator=generator, dtype=a.dtype)
    a_t = perturb(schedule, a, t, eps)
    target = guided_eps(eps_theta, lambda c, x, tt: f(c, x, tt), schedule, a_t, t, s).detach()
    return ((eps_psi(a_t, t, s) - target) ** 2).sum(dim=-1).mean()


def distill_update(eps_psi, opt, eps_theta, f, s, a, schedule: NoiseSchedule, generator=None,
                   t_min: float = 1e-3) -> float:
    loss = distill_loss(eps_psi, eps_theta, f, s, a, schedule, generator, t_min)
    opt.zero_grad()
    loss.backward()
    for p in eps_psi.parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteGradient("distillation gradient is not finite")
    opt.step()
    return loss.item()


@dataclass
class FinetuneState:
    env: MazeEnv
    task: TaskReward
    eps_theta: EpsPredictor
    eps_psi: EpsPredictor
    guidance: GuidanceNet
    heads: IQLHeads
    buffer: ReplayBuffer
    support: np.ndarray  # (capacity, K, da) prior actions for each stored state
    n: int = 0
    env_steps: int = 0
    log: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def policy_actions(model: EpsPredictor, s_net: torch.Tensor, n_steps: int, schedule: NoiseSchedule,
                   generator=None, order: int = 3) -> torch.Tensor:
    """Actions in [-1, 1]^2 from a state-conditioned noise predictor."""
    a = sample(model, schedule, n_steps, (s_net.shape[0], 2), cond=s_net, generator=generator, order=order)
    return a.clamp(-1.0, 1.0)


def evaluate_policy(model: EpsPredictor, cfg: RunConfig, task: TaskReward, n_episodes: int, n_steps: int,
                    generator=None) -> np.ndarray:
    """Per-episode returns of ``n_episodes`` episodes run in lockstep from the start state."""
    spec = resolve_maze(cfg.env.maze_spec)
    envs = [MazeEnv(spec, cfg.env.max_action_norm, cfg.env.episode_len) for _ in range(n_episodes)]
    schedule = NoiseSchedule(cfg.diffusion.beta0, cfg.diffusion.beta1)
    s = np.stack([e.reset() for e in envs])
    ret = np.zeros(n_episodes)
    for _ in range(cfg.env.episode_len):
        a = policy_actions(model, torch.as_tensor(to_net(s), dtype=torch.float32), n_steps, schedule, generator,
                           cfg.diffusion.order).numpy().astype(float)
        s = np.stack([e.step(ai * cfg.env.max_action_norm)[0] for e, ai in zip(envs, a)])
        ret += task(s)
    return ret


def load_pretrained_actions(cfg: RunConfig, pretrain_dir) -> EpsPredictor:
    path = Path(pretrain_dir) / "action_diffusion.ckpt"
    if not path.exists():
        raise CheckpointMissing(f"checkpoint not found: {path}")
    _, action_model = make_models(cfg)
    return load_checkpoint(action_model, path)


def run_finetune(cfg: RunConfig, pretrain_dir, out_dir=None, task: Optional[TaskReward] = None) -> FinetuneState:
    """N iterations of: collect ``steps_per_iter`` env steps with eps_psi, then Q/V, CEP and distillation steps."""
    cfg.validate()
    fc = cfg.finetune
    torch.manual_seed(cfg.seed)
    rng, gen = np.random.default_rng(cfg.seed), torch.Generator().manual_seed(cfg.seed)
    schedule = NoiseSchedule(cfg.diffusion.beta0, cfg.diffusion.beta1)
    eps_theta = load_pretrained_actions(cfg, pretrain_dir).requires_grad_(False)
    eps_psi = copy.deepcopy(eps_theta).requires_grad_(True)
    env = MazeEnv(resolve_maze(cfg.env.maze_spec), cfg.env.max_action_norm, cfg.env.episode_len)
    task = task or make_task(env, fc.goal, fc.reward_kind, fc.goal_radius)
    m = cfg.model
    guidance = GuidanceNet(2, 2, m.guidance_hidden, m.guidance_layers)
    heads = IQLHeads(2, 2, m.hidden, fc.lr, fc.expectile, fc.target_tau)
    opt_f = adam(guidance.parameters(), fc.lr)
    opt_psi = adam(eps_psi.parameters(), m.diffusion_lr)
    cap = min(fc.buffer_capacity, max(fc.n_iterations * fc.steps_per_iter, 1))
    st = FinetuneState(env, task, eps_theta, eps_psi, guidance, heads,
                       ReplayBuffer(cap, 2, 2, mode="finetune", n_step=fc.n_step, gamma=fc.gamma),
                       np.zeros((cap, fc.K, 2), dtype=np.float32))

    s = env.reset()
    ep_ret = 0.0
    for n in range(1, fc.n_iterations + 1):
        returns, slots = [], []
        for _ in range(fc.steps_per_iter):
            s_t = torch.as_tensor(to_net(s), dtype=torch.float32)[None]
            a = policy_actions(eps_psi, s_t, cfg.diffusion.n_steps_collect, schedule, gen,
                               cfg.diffusion.order)[0].numpy().astype(float)
            s_next, done = env.step(a * cfg.env.max_action_norm)
            r = float(task(s_next))
            ep_ret += r
            slots.append(st.buffer.push(Transition(s, a, s_next, done, r)))
            st.env_steps += 1
            if done:
                returns.append(ep_ret)
                ep_ret = 0.0
                s = env.reset()
            else:
                s = s_next
        _fill_support(st, np.array(slots), cfg, schedule, gen)
        losses = _improve(st, cfg, schedule, opt_f, opt_psi, rng, gen)
        st.n = n
        st.log.append({"n": n, "env_step": st.env_steps,
                       "return": float(np.mean(returns)) if returns else None, **losses})

    eval_ret = evaluate_policy(eps_psi, cfg, task, fc.eval_episodes, cfg.diffusion.n_steps_eval, gen)
    st.summary = {"iterations": st.n, "env_steps": st.env_steps, "eval_return": float(eval_ret.mean()),
                  "eval_return_se": float(eval_ret.std(ddof=1) / np.sqrt(len(eval_ret))) if len(eval_ret) > 1 else 0.0,
                  "eval_returns": eval_ret.tolist(), "q_method": fc.q_method}
    if out_dir is not None:
        write_finetune_artifacts(st, cfg, out_dir)
    return st


@torch.no_grad()
def _fill_support(st: FinetuneState, slots, cfg: RunConfig, schedule, gen, chunk: int = 8192):
    """K prior actions per newly stored state; exact forever since eps_theta is frozen."""
    K = cfg.finetune.K
    states = torch.as_tensor(to_net(st.buffer.states(slots)), dtype=torch.float32).repeat_interleave(K, 0)
    out = []
    for i in range(0, len(states), chunk):
        out.append(policy_actions(st.eps_theta, states[i:i + chunk], cfg.diffusion.n_steps_collect, schedule, gen,
                                  cfg.diffusion.order))
    st.support[slots] = torch.cat(out).view(len(slots), K, 2).numpy()


def _improve(st: FinetuneState, cfg: RunConfig, schedule, opt_f, opt_psi, rng, gen) -> dict:
    fc, B = cfg.finetune, cfg.model.batch
    acc = {"v_loss": 0.0, "q_loss": 0.0, "cep_loss": 0.0, "distill_loss": 0.0}
    for _ in range(fc.grad_steps):
        b = st.buffer.sample_nstep(B, rng)
        s = torch.as_tensor(to_net(b.s), dtype=torch.float32)
        out = iql_update(st.heads, s, torch.as_tensor(b.a, dtype=torch.float32),
                         torch.as_tensor(b.ret, dtype=torch.float32),
                         torch.as_tensor(b.discount * b.mask, dtype=torch.float32),
                         torch.as_tensor(to_net(b.s_boot), dtype=torch.float32),
                         torch.as_tensor(st.support[b.idx]), fc.beta, fc.q_method)
        acc["v_loss"] += out["v_loss"]
        acc["q_loss"] += out["q_loss"]
    for _ in range(fc.grad_steps):
        idx = rng.integers(0, len(st.buffer), fc.cep_batch)
        s = torch.as_tensor(to_net(st.buffer.states(idx)), dtype=torch.float32)
        acts = torch.as_tensor(st.support[idx])
        with torch.no_grad():
            q = st.heads.q(s.repeat_interleave(fc.K, 0), acts.reshape(-1, 2)).view(len(idx), fc.K)
        acc["cep_loss"] += cep_update(st.guidance, opt_f, s, acts, q, fc.beta, schedule, gen, cfg.diffusion.t_min)
    for _ in range(fc.grad_steps):
        idx = rng.integers(0, len(st.buffer), B)
        k = rng.integers(0, fc.K, B)
        s = torch.as_tensor(to_net(st.buffer.states(idx)), dtype=torch.float32)
        a = torch.as_tensor(st.support[idx, k])
        acc["distill_loss"] += distill_update(st.eps_psi, opt_psi, st.eps_theta, st.guidance, s, a, schedule, gen,
                                              cfg.diffusion.t_min)
    return {k: v / fc.grad_steps for k, v in acc.items()}


def write_finetune_artifacts(st: FinetuneState, cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    with open(out / "finetune_metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in st.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(st.summary, indent=2, sort_keys=True), encoding="utf-8")
    save_checkpoint(st.eps_psi, out / "distilled.ckpt")
    save_checkpoint(st.guidance, out / f"guidance_{st.n}.ckpt")
    return out


def run_finetune_ddpg(cfg: RunConfig, pretrain_dir, task: Optional[TaskReward] = None) -> dict:
    """Comparison path: keep training the pre-trained Gaussian behavior policy on the task reward."""
    cfg.validate()
    fc, pc = cfg.finetune, cfg.pretrain
    torch.manual_seed(cfg.seed)
    rng, gen = np.random.default_rng(cfg.seed), torch.Generator().manual_seed(cfg.seed)
    path = Path(pretrain_dir) / "actor_critic.ckpt"
    if not path.exists():
        raise CheckpointMissing(f"checkpoint not found: {path}")
    ac = load_checkpoint(ActorCritic(2, 2, cfg.model.hidden, cfg.model.lr, pc.stddev, pc.stddev_clip,
                                     pc.critic_tau), path)
    env = MazeEnv(resolve_maze(cfg.env.maze_spec), cfg.env.max_action_norm, cfg.env.episode_len)
    task = task or make_task(env, fc.goal, fc.reward_kind, fc.goal_radius)
    buf = ReplayBuffer(max(fc.budget, 1), 2, 2, mode="finetune", n_step=1, gamma=fc.gamma)
    s, ep_ret, returns = env.reset(), 0.0, []
    for step in range(fc.budget):
        a = ac.act(torch.as_tensor(to_net(s), dtype=torch.float32)[None], gen)[0].numpy().astype(float)
        s_next, done = env.step(a * cfg.env.max_action_norm)
        r = float(task(s_next))
        buf.push(Transition(s, a, s_next, done, r))
        ep_ret += r
        s = s_next
        if done:
            returns.append(ep_ret)
            ep_ret, s = 0.0, env.reset()
        if len(buf) >= cfg.model.batch and step % pc.sample_steps == 0:
            b = buf.sample_batch(cfg.model.batch, rng)
            ddpg_update(ac, torch.as_tensor(to_net(b.s), dtype=torch.float32), torch.as_tensor(b.a, dtype=torch.float32),
                        torch.as_tensor(b.r, dtype=torch.float32), torch.as_tensor(to_net(b.s_next), dtype=torch.float32),
                        fc.gamma, gen)
    return {"returns": returns, "mean_return_last": float(np.mean(returns[-50:])) if returns else 0.0}
