"""Run configuration: sectioned dataclasses loaded from flat ``section.key = value`` text.

Lines starting with ``#`` are comments. Values are coerced to the declared field type;
tuples are written comma-separated (``finetune.goal = 0.7, 0.7``).
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigInvalid


@dataclass
class EnvConfig:
    maze_spec: str = "square_a"
    episode_len: int = 20
    max_action_norm: float = 0.05

    def validate(self):
        _positive(self, "episode_len", "max_action_norm")


@dataclass
class ModelConfig:
    hidden: int = 128            # actor / critic / IQL heads
    diffusion_hidden: int = 64
    diffusion_blocks: int = 3
    guidance_hidden: int = 256
    guidance_layers: int = 4
    lr: float = 1e-4
    diffusion_lr: float = 1e-4
    batch: int = 128

    def validate(self):
        _positive(self, "hidden", "diffusion_hidden", "diffusion_blocks", "guidance_hidden", "lr",
                  "diffusion_lr", "batch")
        if self.guidance_layers < 2:
            raise ConfigInvalid("model.guidance_layers must be >= 2")


@dataclass
class DiffusionConfig:
    beta0: float = 0.1
    beta1: float = 20.0
    n_steps_collect: int = 15
    n_steps_eval: int = 15
    order: int = 3
    t_min: float = 1e-3

    def validate(self):
        if not 0 <= self.beta0 < self.beta1:
            raise ConfigInvalid("diffusion: need 0 <= beta0 < beta1")
        _positive(self, "n_steps_collect", "n_steps_eval")
        if self.order not in (1, 2, 3):
            raise ConfigInvalid("diffusion.order must be 1, 2 or 3")
        if not 0 < self.t_min < 1:
            raise ConfigInvalid("diffusion.t_min must lie in (0, 1)")


@dataclass
class IntrinsicConfig:
    n_mc: int = 4
    normalize: str = "running_std"
    clip: Optional[float] = None

    def validate(self):
        _positive(self, "n_mc")
        if self.normalize not in ("none", "running_std"):
            raise ConfigInvalid("intrinsic.normalize must be 'none' or 'running_std'")


@dataclass
class PretrainConfig:
    agent: str = "exdm"          # or "random" for the uniform-action baseline
    total_steps: int = 50_000
    seed_frames: int = 4000
    update_steps: int = 1        # U
    sample_steps: int = 2        # S
    log_every: int = 1000
    gamma: float = 0.99
    n_step: int = 3
    critic_tau: float = 0.01
    stddev: float = 0.2
    stddev_clip: float = 0.3
    action_reg: float = 0.0      # weight of the pre-tanh L2 penalty on the actor
    buffer_capacity: int = 1_000_000

    def validate(self):
        if self.agent not in ("exdm", "random"):
            raise ConfigInvalid("pretrain.agent must be 'exdm' or 'random'")
        if self.total_steps < 0 or self.seed_frames < 0:
            raise ConfigInvalid("pretrain step counts must be >= 0")
        _positive(self, "update_steps", "sample_steps", "log_every", "n_step", "buffer_capacity")
        _unit(self, "gamma", "critic_tau")


@dataclass
class FinetuneConfig:
    goal: tuple = (0.75, 0.75)
    goal_radius: float = 0.1
    reward_kind: str = "sparse"
    budget: int = 20_000         # env steps
    iterations: Optional[int] = None  # N; default budget // steps_per_iter
    steps_per_iter: int = 1000
    grad_steps: int = 100        # per head per iteration
    lr: float = 3e-4             # Q/V heads and guidance network
    cep_batch: int = 64          # states per CEP step (each carries K actions)
    beta: float = 1.0
    expectile: float = 0.7
    K: int = 16
    q_method: str = "iql"        # or "in_sample_softmax"
    n_step: int = 3
    gamma: float = 0.99
    target_tau: float = 0.005
    eval_episodes: int = 50
    buffer_capacity: int = 1_000_000

    def validate(self):
        if len(self.goal) != 2:
            raise ConfigInvalid("finetune.goal must have two coordinates")
        if self.reward_kind not in ("sparse", "dense"):
            raise ConfigInvalid("finetune.reward_kind must be 'sparse' or 'dense'")
        if self.q_method not in ("iql", "in_sample_softmax"):
            raise ConfigInvalid("finetune.q_method must be 'iql' or 'in_sample_softmax'")
        if not 0.5 < self.expectile < 1.0:
            raise ConfigInvalid("finetune.expectile must lie in (0.5, 1)")
        if self.K < 2:
            raise ConfigInvalid("finetune.K must be >= 2")
        if self.budget < 0 or (self.iterations is not None and self.iterations < 0):
            raise ConfigInvalid("finetune budget/iterations must be >= 0")
        _positive(self, "goal_radius", "steps_per_iter", "grad_steps", "lr", "cep_batch", "beta", "n_step", "eval_episodes",
                  "buffer_capacity")
        _unit(self, "gamma", "target_tau")

    @property
    def n_iterations(self) -> int:
        return self.budget // self.steps_per_iter if self.iterations is None else self.iterations


@dataclass
class LabConfig:
    wendel_M: tuple = (2, 3, 4, 5, 6, 7, 8, 9, 10)
    wendel_trials: int = 100_000
    volume_S: tuple = (2, 3, 4)
    volume_samples: int = 400_000
    bound_cases: tuple = (2, 2, 2, 4, 2, 8, 3, 31, 3, 400)  # flattened (S, M) pairs
    bound_trials: int = 20_000
    hull_trials: int = 100
    spi_instances: int = 100
    spi_iterations: int = 50
    maxent_instances: int = 20
    maxent_A: tuple = (2, 4, 8)
    tolerance: float = 1e-9      # allowed decrease of J_f between iterations
    converge_tol: float = 1e-6   # distance of the last iterate from the soft optimum
    n_se: float = 3.0            # Monte Carlo acceptance band in standard errors

    def validate(self):
        if len(self.bound_cases) % 2:
            raise ConfigInvalid("lab.bound_cases must list (S, M) pairs")
        if self.wendel_trials < 1000 or self.bound_trials < 1000:
            raise ConfigInvalid("lab trial counts must be >= 1000")
        _positive(self, "volume_samples", "hull_trials", "spi_instances", "spi_iterations", "maxent_instances")
        if self.tolerance < 0 or self.converge_tol < 0 or self.n_se < 0:
            raise ConfigInvalid("lab tolerances must be >= 0")


@dataclass
class RunConfig:
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    intrinsic: IntrinsicConfig = field(default_factory=IntrinsicConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    lab: LabConfig = field(default_factory=LabConfig)

    def validate(self) -> "RunConfig":
        for f in dataclasses.fields(self):
            if f.name != "seed":
                getattr(self, f.name).validate()
        from .maze import BUNDLED_MAZES

        if self.env.maze_spec not in BUNDLED_MAZES and not Path(self.env.maze_spec).exists():
            raise ConfigInvalid(f"env.maze_spec {self.env.maze_spec!r} is neither bundled nor an existing file")
        return self

    def replace(self, **dotted) -> "RunConfig":
        """Copy with dotted overrides, e.g. ``cfg.replace(**{"pretrain.total_steps": 100})``."""
        out = dataclasses.replace(self, **{f.name: dataclasses.replace(getattr(self, f.name))
                                           for f in dataclasses.fields(self) if f.name != "seed"})
        for key, value in dotted.items():
            _assign(out, key, value)
        return out.validate()

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}"]
        for f in dataclasses.fields(self):
            if f.name == "seed":
                continue
            for sf in dataclasses.fields(getattr(self, f.name)):
                v = getattr(getattr(self, f.name), sf.name)
                text = ", ".join(str(x) for x in v) if isinstance(v, tuple) else ("none" if v is None else str(v))
                lines.append(f"{f.name}.{sf.name} = {text}")
        return "\n".join(lines) + "\n"


def _positive(obj, *names):
    for n in names:
        if not getattr(obj, n) > 0:
            raise ConfigInvalid(f"{type(obj).__name__}.{n} must be > 0, got {getattr(obj, n)!r}")


def _unit(obj, *names):
    for n in names:
        if not 0 < getattr(obj, n) < 1:
            raise ConfigInvalid(f"{type(obj).__name__}.{n} must lie in (0, 1), got {getattr(obj, n)!r}")


def _coerce(raw, typ, key):
    if isinstance(raw, str):
        raw = raw.strip()
    hints = typing.get_args(typ)
    if typ is Optional[float] or (hints and type(None) in hints):
        if isinstance(raw, str) and raw.lower() in ("none", ""):
            return None
        typ = next(h for h in hints if h is not type(None))
    try:
        if typ in (tuple, "tuple"):
            if isinstance(raw, str):
                parts = [p.strip() for p in raw.split(",") if p.strip()]
                return tuple(int(p) if p.lstrip("-").isdigit() else float(p) for p in parts)
            return tuple(raw)
        if typ is bool:
            return raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
        if typ is int:
            if isinstance(raw, str):
                f = float(raw.replace("_", ""))
                if f != int(f):
                    raise ValueError
                return int(f)
            return int(raw)
        if typ is float:
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from exc


def _assign(cfg: RunConfig, key: str, raw) -> None:
    if key == "seed":
        cfg.seed = _coerce(raw, int, key)
        return
    section, _, name = key.partition(".")
    sec = getattr(cfg, section, None) if section != "seed" else None
    if sec is None or not dataclasses.is_dataclass(sec) or not name:
        raise ConfigInvalid(f"unknown config key {key!r}")
    hints = typing.get_type_hints(type(sec))
    if name not in hints:
        raise ConfigInvalid(f"unknown config key {key!r}")
    setattr(sec, name, _coerce(raw, hints[name], key))


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        _assign(cfg, key, value)
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def bundled_config(name: str) -> RunConfig:
    """``default`` or ``paper_scale``."""
    text = resources.files("exdm").joinpath("configs").joinpath(f"{name}.cfg").read_text(encoding="utf-8")
    return parse_config(text)
