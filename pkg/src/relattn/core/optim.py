"""Named parameter storage, gradient extraction and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DivergedError, ShapeError
from .autodiff import Tensor, backward, dropout_mask


class ParamStore:
    """Ordered mapping of slot name to a trainable :class:`Tensor`.

    Adam moment estimates live beside the values so that a store can be
    checkpointed or copied as one object.
    """

    def __init__(self, values: dict[str, np.ndarray] | None = None):
        self._slots: dict[str, Tensor] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step_count = 0
        for name, value in (values or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._slots:
            raise ConfigError(f"duplicate parameter slot {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True)
        self._slots[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._slots[name]

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def __iter__(self):
        return iter(self._slots)

    def __len__(self) -> int:
        return len(self._slots)

    def items(self):
        return self._slots.items()

    def zero_grad(self) -> None:
        for t in self._slots.values():
            t.grad = None

    def values_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._slots.items()}

    def set_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self._slots[k].data = np.array(v, dtype=np.float64, copy=True)

    def copy(self) -> "ParamStore":
        out = ParamStore(self.values_dict())
        out.moments = {k: (m.copy(), v.copy()) for k, (m, v) in self.moments.items()}
        out.step_count = self.step_count
        return out


def grad(loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Return d(loss)/d(slot) for every slot; unreached slots get zeros."""
    value = np.asarray(loss.data)
    if value.size != 1:
        raise ShapeError("loss must be a scalar")
    if not np.isfinite(value).all():
        raise DivergedError(f"loss is not finite ({float(value)})")
    params.zero_grad()
    backward(loss)
    out = {}
    for name, t in params.items():
        out[name] = np.zeros_like(t.data) if t.grad is None else t.grad
    params.zero_grad()
    return out


@dataclass
class AdamConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # per-slot learning rates; a key matches a slot equal to it or prefixed by "key."
    slot_lr: dict[str, float] = field(default_factory=dict)

    def lr_for(self, slot: str) -> float:
        for key, lr in self.slot_lr.items():
            if slot == key or slot.startswith(key + "."):
                return lr
        return self.lr


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], config: AdamConfig) -> ParamStore:
    """Apply one bias-corrected Adam update in place and return ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergedError(f"non-finite gradient in slot {name!r}", slot=name)
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {params[name].shape}")
    params.step_count += 1
    t = params.step_count
    b1, b2 = config.beta1, config.beta2
    for name, g in grads.items():
        m, v = params.moments.get(name, (np.zeros_like(g), np.zeros_like(g)))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        params.moments[name] = (m, v)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        params[name].data = params[name].data - config.lr_for(name) * m_hat / (np.sqrt(v_hat) + config.eps)
    return params


def dropout_apply(m, rate: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout.  Identity in eval mode or at rate 0.

    Accepts an array or a Tensor and returns the same kind.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return m
    if rng is None:
        raise ConfigError("dropout in training mode needs an explicit generator")
    shape = m.shape
    keep = dropout_mask(shape, rate, rng)
    return m * keep
