"""Reward-free pre-training: a DDPG behavior policy driven by the score-based intrinsic
reward, co-trained with a state diffusion model and a state-conditioned action diffusion model.

Networks see states mapped from [0, 1]^2 to [-1, 1]^2 and emit actions in [-1, 1]^2; the
environment receives ``action * max_action_norm``.
"""
from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .diffusion import EpsPredictor, NoiseSchedule, adam, denoise_loss, save_checkpoint
from .intrinsic import IntrinsicRewardConfig, RunningStd, r_score
from .maze import MazeEnv, resolve_maze
from .metrics import CoverageGrid
from .replay import ReplayBuffer, Transition


def to_net(s):
    return 2.0 * s - 1.0


def mlp(d_in: int, hidden: int, d_out: int, n_hidden: int = 2) -> nn.Sequential:
    layers, d = [], d_in
    for _ in range(n_hidden):
        layers += [nn.Linear(d, hidden), nn.ReLU()]
        d = hidden
    layers.append(nn.Linear(d, d_out))
    return nn.Sequential(*layers)


def trunk(d_in: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, hidden), nn.LayerNorm(hidden), nn.Tanh())


class Actor(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(trunk(state_dim, hidden), nn.Linear(hidden, hidden), nn.ReLU(),
                                 nn.Linear(hidden, action_dim))

    def pre_tanh(self, s):
        return self.net(s)

    def forward(self, s):
        return torch.tanh(self.net(s))


class Critic(nn.Module):
    """Two Q heads on a shared LayerNorm trunk; ``forward`` returns both."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int):
        super().__init__()
        self.trunk = trunk(state_dim + action_dim, hidden)
        self.q1 = mlp(hidden, hidden, 1, n_hidden=1)
        self.q2 = mlp(hidden, hidden, 1, n_hidden=1)

    def forward(self, s, a):
        h = self.trunk(torch.cat([s, a], dim=-1))
        return self.q1(h).squeeze(-1), self.q2(h).squeeze(-1)


class ActorCritic(nn.Module):
    """Deterministic tanh actor, twin-head critic and an EMA copy of the critic."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 256, lr: float = 1e-4,
                 stddev: float = 0.2, stddev_clip: float = 0.3, tau: float = 0.01, action_reg: float = 0.0):
        super().__init__()
        self.actor = Actor(state_dim, action_dim, hidden)
        self.critic = Critic(state_dim, action_dim, hidden)
        self.critic_target = copy.deepcopy(self.critic).requires_grad_(False)
        self.actor_opt = adam(self.actor.parameters(), lr)
        self.critic_opt = adam(self.critic.parameters(), lr)
        self.stddev, self.stddev_clip, self.tau = stddev, stddev_clip, tau
        self.action_reg = action_reg

    def q(self, s, a, target: bool = False):
        """Pessimistic value: the smaller of the two heads."""
        q1, q2 = (self.critic_target if target else self.critic)(s, a)
        return torch.minimum(q1, q2)

    def noisy_action(self, s, generator=None):
        mu = self.actor(s)
        noise = (self.stddev * torch.randn(mu.shape, generator=generator)).clamp(-self.stddev_clip, self.stddev_clip)
        return (mu + noise).clamp(-1.0, 1.0)

    @torch.no_grad()
    def act(self, s, generator=None, explore: bool = True):
        return self.noisy_action(s, generator) if explore else self.actor(s)

    @torch.no_grad()
    def soft_update(self):
        for p, tp in zip(self.critic.parameters(), self.critic_target.parameters()):
            tp.mul_(1.0 - self.tau).add_(self.tau * p)


def ddpg_update(ac: ActorCritic, s, a, r, s_next, gamma: float, generator=None, not_done=None) -> dict:
    """One critic step toward r + gamma Q_target(s', actor(s') + clipped noise), one actor step, then the EMA.

    ``gamma`` may be a per-sample tensor (n-step discounts)."""
    with torch.no_grad():
        a_next = ac.noisy_action(s_next, generator)
        mask = 1.0 if not_done is None else not_done
        target = r + gamma * mask * ac.q(s_next, a_next, target=True)
    q1, q2 = ac.critic(s, a)
    critic_loss = ((q1 - target) ** 2).mean() + ((q2 - target) ** 2).mean()
    ac.critic_opt.zero_grad()
    critic_loss.backward()
    ac.critic_opt.step()

    pre = ac.actor.pre_tanh(s)
    actor_loss = -ac.q(s, torch.tanh(pre)).mean()
    if ac.action_reg > 0:
        # keeps the actor out of tanh saturation, where its gradient vanishes
        actor_loss = actor_loss + ac.action_reg * (pre**2).mean()
    ac.actor_opt.zero_grad()
    actor_loss.backward()
    ac.actor_opt.step()
    ac.soft_update()
    return {"critic_loss": critic_loss.item(), "actor_loss": actor_loss.item()}


@dataclass
class PretrainState:
    env: MazeEnv
    buffer: ReplayBuffer
    state_model: EpsPredictor
    action_model: EpsPredictor
    agent: Optional[ActorCritic]
    coverage: CoverageGrid
    env_steps: int = 0
    update_steps: int = 0
    log: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)  # (step, x, y) for every visited state
    summary: dict = field(default_factory=dict)


def _seeded(seed: int):
    torch.manual_seed(seed)
    return np.random.default_rng(seed), torch.Generator().manual_seed(seed)


def make_models(cfg: RunConfig, state_dim: int = 2, action_dim: int = 2):
    m = cfg.model
    state_model = EpsPredictor(state_dim, 0, m.diffusion_hidden, m.diffusion_blocks)
    action_model = EpsPredictor(action_dim, state_dim, m.diffusion_hidden, m.diffusion_blocks)
    return state_model, action_model


def run_pretrain(cfg: RunConfig, out_dir=None) -> PretrainState:
    """Collect ``pretrain.total_steps`` transitions, alternating U update steps with S env steps."""
    cfg.validate()
    pc = cfg.pretrain
    rng, gen = _seeded(cfg.seed)
    env = MazeEnv(resolve_maze(cfg.env.maze_spec), cfg.env.max_action_norm, cfg.env.episode_len)
    schedule = NoiseSchedule(cfg.diffusion.beta0, cfg.diffusion.beta1)
    state_model, action_model = make_models(cfg)
    agent = None
    if pc.agent == "exdm":
        agent = ActorCritic(2, 2, cfg.model.hidden, cfg.model.lr, pc.stddev, pc.stddev_clip, pc.critic_tau,
                            pc.action_reg)
    opt_s = adam(state_model.parameters(), cfg.model.diffusion_lr)
    opt_a = adam(action_model.parameters(), cfg.model.diffusion_lr)
    icfg = IntrinsicRewardConfig(cfg.intrinsic.n_mc, cfg.intrinsic.normalize, cfg.intrinsic.clip, cfg.diffusion.t_min)
    rstd = RunningStd()
    st = PretrainState(env, ReplayBuffer(min(pc.buffer_capacity, max(pc.total_steps, 1)), 2, 2), state_model,
                       action_model, agent, CoverageGrid(env.spec))

    s = env.reset()
    _visit(st, s)
    last = {}
    while st.env_steps < pc.total_steps:
        if agent is not None and st.env_steps >= pc.seed_frames and len(st.buffer) >= cfg.model.batch:
            for _ in range(pc.update_steps):
                last = _update(st, cfg, schedule, opt_s, opt_a, icfg, rstd, rng, gen)
        for _ in range(pc.sample_steps):
            if st.env_steps >= pc.total_steps:
                break
            if agent is None or st.env_steps < pc.seed_frames:
                a = rng.uniform(-1.0, 1.0, 2)
            else:
                a = agent.act(torch.as_tensor(to_net(s), dtype=torch.float32)[None], gen)[0].numpy().astype(float)
            s_next, done = env.step(a * cfg.env.max_action_norm)
            st.buffer.push(Transition(s, a, s_next, done))
            st.env_steps += 1
            _visit(st, s_next)
            s = env.reset() if done else s_next
            if done:
                _visit(st, s)
            if st.env_steps % pc.log_every == 0:
                st.log.append({"step": st.env_steps, "coverage": st.coverage.coverage, **last})

    if pc.total_steps > 0:
        st.summary = _final_check(st, schedule, icfg, gen)
    if out_dir is not None:
        write_pretrain_artifacts(st, cfg, out_dir)
    return st


def _visit(st: PretrainState, s):
    st.coverage.add(s[None])
    st.trajectory.append((st.env_steps, float(s[0]), float(s[1])))


def _update(st, cfg, schedule, opt_s, opt_a, icfg, rstd, rng, gen) -> dict:
    b = st.buffer.sample_batch(cfg.model.batch, rng)
    s = torch.as_tensor(to_net(b.s), dtype=torch.float32)
    a = torch.as_tensor(b.a, dtype=torch.float32)

    loss_s = denoise_loss(st.state_model, s, None, schedule, gen, cfg.diffusion.t_min)
    opt_s.zero_grad()
    loss_s.backward()
    opt_s.step()
    loss_a = denoise_loss(st.action_model, a, s, schedule, gen, cfg.diffusion.t_min)
    opt_a.zero_grad()
    loss_a.backward()
    opt_a.step()

    # n-step intrinsic return: R_score of every state reached along the chain, scored by the freshly
    # updated state model. Episode ends are time limits, so chains stop there but still bootstrap.
    n, gamma = cfg.pretrain.n_step, cfg.pretrain.gamma
    slots, alive = st.buffer.chain(b.idx, n)
    reached = torch.as_tensor(to_net(st.buffer.gather_next(slots[alive])), dtype=torch.float32)
    r_raw = r_score(reached, st.state_model, icfg, gen, schedule)
    r_step = rstd.normalize(r_raw) if icfg.normalize == "running_std" else r_raw
    r_grid = torch.zeros(alive.shape)
    r_grid[torch.as_tensor(alive)] = r_step
    steps = alive.sum(1)
    ret = (r_grid * gamma ** torch.arange(n)).sum(1)
    s_boot = torch.as_tensor(to_net(st.buffer.gather_next(slots[np.arange(len(steps)), steps - 1])),
                             dtype=torch.float32)
    discount = torch.as_tensor(gamma**steps, dtype=torch.float32)
    losses = ddpg_update(st.agent, s, a, ret, s_boot, discount, gen)
    st.update_steps += 1
    return {"mean_intrinsic": float(r_raw.mean()), "state_diffusion_loss": loss_s.item(),
            "action_diffusion_loss": loss_a.item(), **losses}


def _final_check(st: PretrainState, schedule, icfg, gen) -> dict:
    """Mean R_score on the free-cell grid vs on visited states (the former should be at least as large)."""
    spec = st.env.spec
    free = [spec.cell_center(r, c) for r in range(spec.n_rows) for c in range(spec.n_cols) if spec.grid[r][c] != "#"]
    grid = torch.as_tensor(to_net(np.array(free)), dtype=torch.float32)
    visited = st.buffer.all().s_next
    idx = np.linspace(0, len(visited) - 1, min(len(visited), 2000)).astype(int)
    vis = torch.as_tensor(to_net(visited[idx]), dtype=torch.float32)
    cfg64 = IntrinsicRewardConfig(n_mc=16, t_min=icfg.t_min)
    r_free = float(r_score(grid, st.state_model, cfg64, gen, schedule).mean())
    r_vis = float(r_score(vis, st.state_model, cfg64, gen, schedule).mean())
    return {"coverage": st.coverage.coverage, "r_score_free_grid": r_free, "r_score_visited": r_vis,
            "env_steps": st.env_steps, "update_steps": st.update_steps}


def write_pretrain_artifacts(st: PretrainState, cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in st.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(out / "coverage_curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "coverage"])
        w.writerows([(row["step"], repr(row["coverage"])) for row in st.log])
    with open(out / "trajectories.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "x", "y"])
        w.writerows((k, repr(x), repr(y)) for k, x, y in st.trajectory)
    (out / "summary.json").write_text(json.dumps(st.summary, indent=2, sort_keys=True), encoding="utf-8")
    save_checkpoint(st.state_model, out / "state_diffusion.ckpt")
    save_checkpoint(st.action_model, out / "action_diffusion.ckpt")
    if st.agent is not None:
        save_checkpoint(st.agent, out / "actor_critic.ckpt")
    return out
