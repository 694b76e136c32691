"""VP-SDE diffusion: noise schedule, noise predictors, denoising loss and ODE samplers.

Noise-prediction callables share one signature, ``eps_fn(x_t, t, cond) -> eps`` with
``x_t`` of shape (B, d), ``t`` of shape (B,) and ``cond`` either None or (B, dc). Trained
networks (``EpsPredictor``) and closed-form predictors used in tests are interchangeable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from .errors import CheckpointMissing, EmptyBatch, NonFiniteGuidanceGradient, TOutOfRange

T_MIN = 1e-3

EpsFn = Callable[[torch.Tensor, torch.Tensor, Optional[torch.Tensor]], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule: log alpha_t = -(b1-b0) t^2 / 4 - b0 t / 2, sigma_t = sqrt(1 - alpha_t^2)."""

    beta0: float = 0.1
    beta1: float = 20.0

    def log_alpha(self, t):
        return -(self.beta1 - self.beta0) * t**2 / 4.0 - self.beta0 * t / 2.0

    def alpha(self, t):
        la = self.log_alpha(t)
        return torch.exp(la) if torch.is_tensor(la) else np.exp(la)

    def sigma(self, t):
        la = self.log_alpha(t)
        if torch.is_tensor(la):
            return torch.sqrt(-torch.expm1(2.0 * la))
        return np.sqrt(-np.expm1(2.0 * la))

    def log_snr(self, t):
        """lambda_t = log(alpha_t / sigma_t)."""
        la = self.log_alpha(t)
        if torch.is_tensor(la):
            return la - 0.5 * torch.log(-torch.expm1(2.0 * la))
        return la - 0.5 * np.log(-np.expm1(2.0 * la))

    def t_of_log_snr(self, lam):
        """Inverse of ``log_snr``."""
        lam = np.asarray(lam, dtype=float)
        log_alpha = -0.5 * np.logaddexp(0.0, -2.0 * lam)
        b = self.beta1 - self.beta0
        return (-self.beta0 / 2.0 + np.sqrt(self.beta0**2 / 4.0 - b * log_alpha)) / (b / 2.0)


def perturb(schedule: NoiseSchedule, x, t, eps):
    """x_t = alpha_t x + sigma_t eps; ``t`` is a scalar or broadcastable per-row tensor."""
    t_arr = t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise TOutOfRange(f"t must lie in [0, 1], got {t}")
    a, s = schedule.alpha(t), schedule.sigma(t)
    if not torch.is_tensor(a):
        a, s = float(a), float(s)
    if torch.is_tensor(a) and a.ndim == 1 and torch.is_tensor(x) and x.ndim == 2:
        a, s = a[:, None], s[:, None]
    return a * x + s * eps


def time_embedding(t: torch.Tensor, dim: int = 64) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = 1000.0 * t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResidualBlock(nn.Module):
    def __init__(self, hidden: int):
        super().__init__()
        self.norm = nn.LayerNorm(hidden)
        self.fc1 = nn.Linear(hidden, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.act = nn.Mish()

    def forward(self, h):
        return h + self.fc2(self.act(self.fc1(self.norm(h))))


class EpsPredictor(nn.Module):
    """Residual MLP noise predictor; inputs are [x, cond, sinusoidal(t)] concatenated."""

    def __init__(self, input_dim: int, cond_dim: int = 0, hidden: int = 256, n_blocks: int = 3,
                 time_dim: int = 64):
        super().__init__()
        self.input_dim, self.cond_dim, self.time_dim = input_dim, cond_dim, time_dim
        self.inp = nn.Linear(input_dim + cond_dim + time_dim, hidden)
        self.blocks = nn.Sequential(*[ResidualBlock(hidden) for _ in range(n_blocks)])
        self.out = nn.Sequential(nn.Mish(), nn.Linear(hidden, input_dim))

    def forward(self, x, t, cond=None):
        parts = [x] if cond is None or self.cond_dim == 0 else [x, cond]
        parts.append(time_embedding(t.to(x.dtype), self.time_dim))
        return self.out(self.blocks(self.inp(torch.cat(parts, dim=-1))))


class GuidanceNet(nn.Module):
    """Scalar time-indexed energy f(s, a_t, t) used as guidance."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 256, n_layers: int = 4,
                 time_dim: int = 64):
        super().__init__()
        self.time_dim = time_dim
        dims = [state_dim + action_dim + time_dim] + [hidden] * (n_layers - 1)
        layers = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(d_in, d_out), nn.SiLU()]
        layers.append(nn.Linear(dims[-1], 1))
        self.net = nn.Sequential(*layers)

    def forward(self, s, a_t, t):
        x = torch.cat([s, a_t, time_embedding(t.to(a_t.dtype), self.time_dim)], dim=-1)
        return self.net(x).squeeze(-1)


def sample_t(n: int, generator=None, t_min: float = T_MIN, dtype=torch.float32) -> torch.Tensor:
    return t_min + (1.0 - t_min) * torch.rand(n, generator=generator, dtype=dtype)


def denoise_loss(model: EpsFn, x: torch.Tensor, cond=None, schedule: NoiseSchedule = NoiseSchedule(),
                 generator=None, t_min: float = T_MIN, t=None, eps=None) -> torch.Tensor:
    """Mean over the batch of ||eps_model(x_t | cond, t) - eps||^2 with t ~ U[t_min, 1]."""
    if x.shape[0] == 0:
        raise EmptyBatch("denoise_loss needs at least one sample")
    if t is None:
        t = sample_t(x.shape[0], generator, t_min, x.dtype)
    if eps is None:
        eps = torch.randn(x.shape, generator=generator, dtype=x.dtype)
    x_t = perturb(schedule, x, t, eps)
    return ((model(x_t, t, cond) - eps) ** 2).sum(dim=-1).mean()


def time_grid(n_steps: int, t_end: float = T_MIN) -> np.ndarray:
    """n_steps + 1 times from 1 down to 0, quadratic in t down to ``t_end``; the final target is t = 0."""
    ts = np.linspace(1.0, np.sqrt(t_end), n_steps + 1) ** 2
    ts[0], ts[-1] = 1.0, 0.0
    return ts


def dpm_step(schedule: NoiseSchedule, x, eps, t: float, s: float, history=()):
    """Exponential-integrator step from time t to s < t in noise-prediction form.

    ``history`` holds earlier (t_i, eps_i) pairs, most recent last; with one or two of
    them the step uses the multistep 2nd/3rd-order correction, otherwise it is the
    first-order update x_s = (alpha_s/alpha_t) x_t - sigma_s (e^h - 1) eps_t.
    """
    a_t, sig_t = float(schedule.alpha(t)), float(schedule.sigma(t))
    if s == 0.0:
        # h -> inf: every correction term vanishes and the step returns the data estimate
        return (x - sig_t * eps) / a_t
    a_s, sig_s = float(schedule.alpha(s)), float(schedule.sigma(s))
    lam_t = float(schedule.log_snr(t))
    h = float(schedule.log_snr(s)) - lam_t
    phi1 = math.expm1(h)
    x_next = (a_s / a_t) * x - sig_s * phi1 * eps
    if len(history) == 1:
        t1, e1 = history[-1]
        r = (lam_t - float(schedule.log_snr(t1))) / h
        x_next = x_next - 0.5 * sig_s * phi1 * (eps - e1) / r
    elif len(history) >= 2:
        (t2, e2), (t1, e1) = history[-2], history[-1]
        lam1, lam2 = float(schedule.log_snr(t1)), float(schedule.log_snr(t2))
        r0, r1 = (lam_t - lam1) / h, (lam1 - lam2) / h
        d0, d1 = (eps - e1) / r0, (e1 - e2) / r1
        D1 = d0 + (d0 - d1) * r0 / (r0 + r1)
        D2 = (d0 - d1) / (r0 + r1)
        phi2 = phi1 / h - 1.0
        phi3 = phi2 / h - 0.5
        x_next = x_next - sig_s * phi2 * D1 - sig_s * phi3 * D2
    return x_next


@torch.no_grad()
def sample(eps_fn: EpsFn, schedule: NoiseSchedule, n_steps: int, shape, cond=None, generator=None,
           t_end: float = T_MIN, dtype=torch.float32, x1=None, order: int = 3) -> torch.Tensor:
    """Integrate the probability-flow ODE from x_1 ~ N(0, I) to t = 0 with a multistep DPM-Solver."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    x = torch.randn(shape, generator=generator, dtype=dtype) if x1 is None else x1.to(dtype)
    ts = time_grid(n_steps, t_end)
    history: list = []
    for t, s in zip(ts[:-1], ts[1:]):
        eps = eps_fn(x, torch.full((x.shape[0],), float(t), dtype=dtype), cond)
        x = dpm_step(schedule, x, eps, float(t), float(s), history[len(history) - (order - 1):] if order > 1 else ())
        history.append((float(t), eps))
    if not torch.isfinite(x).all():
        raise FloatingPointError("sampler produced non-finite values")
    return x


def guided_eps(eps_fn: EpsFn, guidance_fn, schedule: NoiseSchedule, x, t, cond):
    """eps_model - sigma_t * grad_x f(cond, x, t): the noise prediction of the energy-tilted density."""
    with torch.enable_grad():
        xg = x.detach().requires_grad_(True)
        f = guidance_fn(cond, xg, t)
        grad = torch.autograd.grad(f.sum(), xg, allow_unused=True)[0] if f.requires_grad else None
    if grad is None:
        grad = torch.zeros_like(x)
    if not torch.isfinite(grad).all():
        raise NonFiniteGuidanceGradient("guidance gradient is not finite")
    sig = schedule.sigma(t)[:, None]
    with torch.no_grad():
        return eps_fn(x, t, cond) - sig * grad


def guided_sample(eps_fn: EpsFn, guidance_fn, schedule: NoiseSchedule, n_steps: int, shape, cond=None,
                  generator=None, t_end: float = T_MIN, dtype=torch.float32, x1=None, order: int = 3) -> torch.Tensor:
    """``sample`` with the score shifted by the gradient of ``guidance_fn(cond, x_t, t)``."""
    def shifted(x, t, c):
        return guided_eps(eps_fn, guidance_fn, schedule, x, t, c)

    return sample(shifted, schedule, n_steps, shape, cond, generator, t_end, dtype, x1, order)


def adam(params, lr: float) -> torch.optim.Adam:
    # the fused kernel is several times faster than the per-tensor loop for these small nets
    return torch.optim.Adam(params, lr=lr, fused=True)


def save_checkpoint(module: nn.Module, path) -> None:
    torch.save(module.state_dict(), Path(path))


def load_checkpoint(module: nn.Module, path) -> nn.Module:
    path = Path(path)
    if not path.exists():
        raise CheckpointMissing(f"checkpoint not found: {path}")
    module.load_state_dict(torch.load(path, weights_only=True))
    return module
