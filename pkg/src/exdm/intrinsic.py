"""Score-based intrinsic reward: Monte Carlo denoising error of the state diffusion model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .diffusion import T_MIN, EpsFn, NoiseSchedule, perturb, sample_t


@dataclass(frozen=True)
class IntrinsicRewardConfig:
    n_mc: int = 8
    normalize: str = "running_std"  # or "none"
    clip: Optional[float] = None
    t_min: float = T_MIN

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if self.normalize not in ("none", "running_std"):
            raise ValueError(f"normalize must be 'none' or 'running_std', got {self.normalize!r}")


@torch.no_grad()
def r_score(states: torch.Tensor, model: EpsFn, cfg: IntrinsicRewardConfig = IntrinsicRewardConfig(),
            generator=None, schedule: NoiseSchedule = NoiseSchedule()) -> torch.Tensor:
    """Per-state mean over n_mc draws of ||eps_model(alpha_t s + sigma_t eps, t) - eps||^2."""
    b, d = states.shape
    x = states.repeat(cfg.n_mc, 1)  # draw-major: rows k*b .. k*b+b-1 hold draw k
    t = sample_t(x.shape[0], generator, cfg.t_min, states.dtype)
    eps = torch.randn(x.shape, generator=generator, dtype=states.dtype)
    err = ((model(perturb(schedule, x, t, eps), t, None) - eps) ** 2).sum(dim=-1)
    r = err.view(cfg.n_mc, b).mean(dim=0)
    if cfg.clip is not None:
        r = r.clamp(max=cfg.clip)
    return r


class RunningStd:
    """Streaming variance (pooled batch updates); ``normalize`` divides by the std, no centering."""

    def __init__(self, eps: float = 1e-6):
        self.eps = eps
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    @property
    def std(self) -> float:
        return float(np.sqrt(self.m2 / self.count)) if self.count else 1.0

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float).ravel()
        n = len(x)
        if n == 0:
            return
        bm = float(x.mean())
        bm2 = float(((x - bm) ** 2).sum())
        tot = self.count + n
        delta = bm - self.mean
        self.mean += delta * n / tot
        self.m2 += bm2 + delta**2 * self.count * n / tot
        self.count = tot

    def normalize(self, rewards):
        """Update with ``rewards`` then return rewards / max(std, eps)."""
        is_t = torch.is_tensor(rewards)
        arr = rewards.detach().cpu().numpy() if is_t else np.asarray(rewards, dtype=float)
        self.update(arr)
        scale = max(self.std, self.eps)
        return rewards / scale if is_t else arr / scale
