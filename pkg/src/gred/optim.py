"""Parameter store, Adam with decoupled weight decay, and checkpoint I/O.

The learning-rate schedule is linear warm-up to the peak over the first
``warmup`` steps (default: 5% of the total, rounded up) followed by cosine
annealing to zero at ``total`` steps; steps past the end stay at the final
cosine value.

Checkpoint format (version 1, all little-endian):

    magic  b"GREDCKPT"
    u32    version
    u32    tensor count
    per tensor:
        u32  name length, then UTF-8 name
        u8   weight-decay eligibility flag
        u32  ndim, then u64 per dimension
        f64  raw row-major data
    u8     optimizer-state flag
    if set:
        u64 step, u64 total steps, u64 warmup steps
        f64 peak lr, f64 weight decay, f64 beta1, f64 beta2, f64 eps
        per tensor (same order): f64 first-moment data, f64 second-moment data
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensor import Tensor

CKPT_MAGIC = b"GREDCKPT"
CKPT_VERSION = 1


class ParamStore:
    """Named trainable tensors with per-tensor weight-decay eligibility."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._decay: dict[str, bool] = {}

    def add(self, name: str, data: np.ndarray, decay: bool = True) -> Tensor:
        if name in self._params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._decay[name] = decay
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def decay_eligible(self, name: str) -> bool:
        return self._decay[name]

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy(), decay=self._decay[name])
        return out

    def copy_from(self, other: "ParamStore") -> None:
        if set(self._params) != set(other._params):
            raise ValidationError("parameter stores have different names")
        for name, t in other._params.items():
            self._params[name].data[...] = t.data


def lr_at(step: int, peak: float, total: int, warmup: int) -> float:
    """Learning rate at a 1-based step index."""
    if warmup < 1 or total < warmup:
        raise ValidationError(f"bad schedule: warmup={warmup}, total={total}")
    if step <= warmup:
        return peak * step / warmup
    if step >= total:
        step = total
    return peak * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / (total - warmup)))


@dataclass
class Adam:
    """Adam with decoupled weight decay and the warmup+cosine schedule."""

    params: ParamStore
    peak_lr: float
    weight_decay: float
    total_steps: int
    warmup_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.warmup_steps is None:
            self.warmup_steps = max(1, math.ceil(0.05 * self.total_steps))
        for name, t in self.params.items():
            self.m.setdefault(name, np.zeros_like(t.data))
            self.v.setdefault(name, np.zeros_like(t.data))

    def current_lr(self) -> float:
        return lr_at(max(self.step_count, 1), self.peak_lr, self.total_steps, self.warmup_steps)

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the lr used."""
        self.step_count += 1
        lr = lr_at(self.step_count, self.peak_lr, self.total_steps, self.warmup_steps)
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay and self.params.decay_eligible(name):
                update = update + self.weight_decay * t.data
            t.data -= lr * update
        return lr


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ParamStore, opt: Adam | None = None) -> None:
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        names = params.names()
        f.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", int(params.decay_eligible(name))))
            t = params[name]
            f.write(struct.pack("<I", t.data.ndim))
            for d in t.data.shape:
                f.write(struct.pack("<Q", d))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        f.write(struct.pack("<B", int(opt is not None)))
        if opt is not None:
            f.write(struct.pack("<QQQ", opt.step_count, opt.total_steps, opt.warmup_steps))
            f.write(struct.pack("<ddddd", opt.peak_lr, opt.weight_decay, opt.beta1, opt.beta2, opt.eps))
            for name in names:
                f.write(np.ascontiguousarray(opt.m[name], dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(opt.v[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, Adam | None]:
    with open(path, "rb") as f:
        if f.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        params = ParamStore()
        shapes: list[tuple[str, tuple]] = []
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (decay,) = struct.unpack("<B", f.read(1))
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            params.add(name, data.copy(), decay=bool(decay))
            shapes.append((name, shape))
        (has_opt,) = struct.unpack("<B", f.read(1))
        opt = None
        if has_opt:
            step, total, warmup = struct.unpack("<QQQ", f.read(24))
            peak, wd, b1, b2, eps = struct.unpack("<ddddd", f.read(40))
            opt = Adam(params, peak_lr=peak, weight_decay=wd, total_steps=int(total),
                       warmup_steps=int(warmup), beta1=b1, beta2=b2, eps=eps,
                       step_count=int(step))
            for name, shape in shapes:
                n = int(np.prod(shape)) if shape else 1
                opt.m[name] = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
                opt.v[name] = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
        return params, opt
