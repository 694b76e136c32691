"""Ring-buffer transition storage with uniform sampling and n-step returns."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BufferTooSmall, DimMismatch, ModeMismatch, PretrainModeHasNoRewards


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    done: bool
    r_ext: Optional[float] = None


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    r: Optional[np.ndarray]
    idx: np.ndarray

    def __len__(self):
        return len(self.idx)

    def transitions(self) -> list[Transition]:
        r = self.r if self.r is not None else [None] * len(self)
        return [Transition(self.s[i], self.a[i], self.s_next[i], bool(self.done[i]),
                           None if r[i] is None else float(r[i])) for i in range(len(self))]


@dataclass
class NStepBatch:
    s: np.ndarray
    a: np.ndarray
    ret: np.ndarray       # sum_i gamma^i r_i over the k <= n steps actually taken
    discount: np.ndarray  # gamma^k
    mask: np.ndarray      # 0 where the last step taken ended the episode
    s_boot: np.ndarray
    idx: np.ndarray
    boot_idx: np.ndarray  # slot whose s_next is s_boot


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int, mode: str = "pretrain",
                 n_step: int = 3, gamma: float = 0.99):
        if mode not in ("pretrain", "finetune"):
            raise ValueError(f"mode must be 'pretrain' or 'finetune', got {mode!r}")
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.capacity = int(capacity)
        self.state_dim, self.action_dim = state_dim, action_dim
        self.mode, self.n_step, self.gamma = mode, n_step, gamma
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, action_dim))
        self._s_next = np.zeros((capacity, state_dim))
        self._done = np.zeros(capacity, dtype=bool)
        self._r = np.zeros(capacity) if mode == "finetune" else None
        self._ptr = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, t: Transition) -> int:
        """Store ``t``; returns the slot it occupies (oldest entry evicted at capacity)."""
        if np.shape(t.s) != (self.state_dim,) or np.shape(t.s_next) != (self.state_dim,):
            raise DimMismatch(f"state dim {np.shape(t.s)} / {np.shape(t.s_next)} != ({self.state_dim},)")
        if np.shape(t.a) != (self.action_dim,):
            raise DimMismatch(f"action dim {np.shape(t.a)} != ({self.action_dim},)")
        if (t.r_ext is not None) != (self.mode == "finetune"):
            raise ModeMismatch(f"{self.mode} buffer got r_ext={t.r_ext!r}")
        i = self._ptr
        self._s[i], self._a[i], self._s_next[i], self._done[i] = t.s, t.a, t.s_next, t.done
        if self._r is not None:
            self._r[i] = t.r_ext
        self._ptr = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        return i

    def _check(self, m):
        if self._size < max(m, 1):
            raise BufferTooSmall(f"buffer holds {self._size} transitions, need {m}")

    def _gather(self, idx) -> Batch:
        return Batch(self._s[idx], self._a[idx], self._s_next[idx], self._done[idx],
                     None if self._r is None else self._r[idx], idx)

    def sample_batch(self, m: int, rng: np.random.Generator) -> Batch:
        """Uniform draws with replacement."""
        self._check(1)
        return self._gather(rng.integers(0, self._size, size=m))

    def all(self) -> Batch:
        """Every stored transition, oldest first."""
        start = self._ptr if self._size == self.capacity else 0
        idx = (start + np.arange(self._size)) % self.capacity
        return self._gather(idx)

    def sample_nstep(self, m: int, rng: np.random.Generator, n: Optional[int] = None) -> NStepBatch:
        if self.mode != "finetune":
            raise PretrainModeHasNoRewards("n-step returns need a finetune-mode buffer")
        n = self.n_step if n is None else n
        self._check(n)
        idx = rng.integers(0, self._size, size=m)
        slots, alive = self.chain(idx, n)
        powers = self.gamma ** np.arange(n)
        ret = (alive * powers * self._r[slots]).sum(1)
        steps = alive.sum(1)
        last = slots[np.arange(m), steps - 1]
        mask = np.where(self._done[last], 0.0, 1.0)
        return NStepBatch(self._s[idx], self._a[idx], ret, self.gamma ** steps, mask,
                          self._s_next[last], idx, last)

    def chain(self, idx, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Slots of the up-to-``n`` consecutive steps starting at each ``idx`` and a mask of the ones
        actually taken: a chain stops after an episode end or at the newest entry."""
        idx = np.asarray(idx)
        slots = (idx[:, None] + np.arange(n)) % self.capacity
        newest = (self._ptr - 1) % self.capacity
        alive = np.ones(slots.shape, dtype=bool)
        for k in range(1, n):
            prev = slots[:, k - 1]
            alive[:, k] = alive[:, k - 1] & ~self._done[prev] & (prev != newest)
        return slots, alive

    def gather_next(self, slots) -> np.ndarray:
        return self._s_next[slots]

    def states(self, slots) -> np.ndarray:
        return self._s[slots]

    def save(self, path) -> None:
        """Snapshot to ``path`` (numpy .npz container)."""
        arrays = dict(s=self._s, a=self._a, s_next=self._s_next, done=self._done,
                      meta=np.array([self.capacity, self.state_dim, self.action_dim, self.n_step,
                                     self._ptr, self._size]),
                      gamma=np.array(self.gamma), mode=np.array(self.mode))
        if self._r is not None:
            arrays["r"] = self._r
        with open(Path(path), "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with np.load(Path(path)) as z:
            cap, ds, da, n, ptr, size = (int(v) for v in z["meta"])
            buf = cls(cap, ds, da, mode=str(z["mode"]), n_step=n, gamma=float(z["gamma"]))
            buf._s[:], buf._a[:], buf._s_next[:], buf._done[:] = z["s"], z["a"], z["s_next"], z["done"]
            if buf._r is not None:
                buf._r[:] = z["r"]
            buf._ptr, buf._size = ptr, size
        return buf
