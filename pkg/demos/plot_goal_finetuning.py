"""
Steering a pre-trained diffusion policy toward a goal
=====================================================

Pre-train briefly, then fine-tune the action diffusion model on a sparse goal reward.
Each iteration collects data with the distilled model, fits Q/V heads, trains the
time-indexed energy contrastively and distills the guided noise predictor.
"""

import tempfile

import numpy as np
import torch
import matplotlib.pyplot as plt

from exdm.config import bundled_config
from exdm.finetune import evaluate_policy, load_pretrained_actions, run_finetune
from exdm.maze import MazeEnv, make_task, resolve_maze
from exdm.pretrain import run_pretrain

cfg = bundled_config("default").replace(**{"pretrain.total_steps": 10_000, "finetune.budget": 6000,
                                           "finetune.eval_episodes": 20})
pre = tempfile.mkdtemp()
run_pretrain(cfg, pre)

env = MazeEnv(resolve_maze(cfg.env.maze_spec), cfg.env.max_action_norm, cfg.env.episode_len)
task = make_task(env, cfg.finetune.goal, cfg.finetune.reward_kind, cfg.finetune.goal_radius)
prior = evaluate_policy(load_pretrained_actions(cfg, pre), cfg, task, 20, cfg.diffusion.n_steps_eval,
                        torch.Generator().manual_seed(0))

st = run_finetune(cfg, pre)
n = [r["n"] for r in st.log]
plt.plot(n, [r["return"] for r in st.log], "o-", label="collection return")
plt.axhline(prior.mean(), color="grey", ls=":", label="frozen prior")
plt.axhline(st.summary["eval_return"], color="k", ls="--", label="final evaluation")
plt.xlabel("iteration")
plt.ylabel("episodic return")
plt.legend()
plt.show()
