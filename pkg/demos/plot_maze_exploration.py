"""
Score-driven exploration of an open room
========================================

A short pre-training run next to the uniform-random baseline. Both see the same number of
environment steps; the coverage is the fraction of 0.01 x 0.01 free bins ever visited.
Bump ``STEPS`` to 50_000 for the full desk-scale run (a few minutes per run).
"""

import numpy as np
import matplotlib.pyplot as plt

from exdm.config import bundled_config
from exdm.pretrain import run_pretrain

STEPS = 10_000
cfg = bundled_config("default").replace(**{"pretrain.total_steps": STEPS, "pretrain.log_every": 500})

runs = {agent: run_pretrain(cfg.replace(**{"pretrain.agent": agent})) for agent in ("exdm", "random")}

fig, (ax0, ax1, ax2) = plt.subplots(1, 3, figsize=(12, 4))
for agent, st in runs.items():
    ax0.plot([r["step"] for r in st.log], [r["coverage"] for r in st.log], label=agent)
ax0.set_xlabel("env steps")
ax0.set_ylabel("coverage")
ax0.legend()

for ax, (agent, st) in zip((ax1, ax2), runs.items()):
    xy = np.array(st.trajectory)
    ax.scatter(xy[:, 1], xy[:, 2], c=xy[:, 0], s=0.3)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    ax.set_title(agent)
fig.tight_layout()
plt.show()

# the state model fits visited states better than the room as a whole
print(runs["exdm"].summary)
