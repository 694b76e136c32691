"""
Sampling a Gaussian with few solver steps
=========================================

The multistep solver is run against the exact noise predictor of a 1-D Gaussian,
so every bit of error comes from the discretization.
"""

import numpy as np
import torch
import matplotlib.pyplot as plt

from exdm.diffusion import NoiseSchedule, sample

schedule = NoiseSchedule(0.1, 20.0)
mu, s = 0.5, 0.6


def eps(x, t, cond=None):
    a, sg = schedule.alpha(t)[:, None], schedule.sigma(t)[:, None]
    return sg * (x - a * mu) / (a**2 * s**2 + sg**2)


steps = [1, 2, 3, 5, 8, 15, 25]
errors = {order: [] for order in (1, 3)}
for order in errors:
    for k in steps:
        x = sample(eps, schedule, k, (10_000, 1), generator=torch.Generator().manual_seed(0),
                   dtype=torch.float64, order=order)
        errors[order].append(abs(x.mean().item() - mu) + abs(x.std().item() - s))

# the third-order solver is flat past five steps; first order is still drifting at 25
for order, err in errors.items():
    plt.semilogy(steps, err, "o-", label=f"order {order}")
plt.axhline(3 * s / np.sqrt(10_000), color="grey", ls=":", label="3 SE of the mean")
plt.xlabel("solver steps")
plt.ylabel("|mean error| + |std error|")
plt.legend()
plt.show()
