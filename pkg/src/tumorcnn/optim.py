"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class AdamW:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.004
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One in-place update of every parameter in ``params``.

        Gradients are validated before anything is touched, so a rejected
        step leaves parameters and moments unchanged.
        """
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise ContractError(f"non-finite gradient in parameter {name}")
        self.t += 1
        dt = next(iter(params.values())).dtype.type if params else np.float32
        lr, b1, b2 = dt(self.lr), dt(self.beta1), dt(self.beta2)
        c1 = dt(1.0 - self.beta1 ** self.t)
        c2 = dt(1.0 - self.beta2 ** self.t)
        eps, wd = dt(self.eps), dt(self.weight_decay)
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + eps)
            if wd:
                update += wd * p
            p -= lr * update

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moments and step counter under checkpoint names ``opt.<param>.m`` etc."""
        out = {}
        for name in self.m:
            out[f"opt.{name}.m"] = self.m[name]
            out[f"opt.{name}.v"] = self.v[name]
        out["opt.t"] = np.array(self.t, dtype=np.float32)
        return out

    def load_state(self, tensors: dict[str, np.ndarray], dtype=np.float32) -> None:
        self.t = int(tensors["opt.t"]) if "opt.t" in tensors else 0
        self.m, self.v = {}, {}
        for key, value in tensors.items():
            if key.startswith("opt.") and key.endswith(".m"):
                name = key[4:-2]
                self.m[name] = np.array(value, dtype=dtype)
                self.v[name] = np.array(tensors[f"opt.{name}.v"], dtype=dtype)


def zero_grads(model) -> None:
    model.zero_grads()
