"""Adam optimization, inverted dropout, and training configuration.

All randomness anywhere in a run flows from one root seed, split per
purpose (init / dropout / task generation / evaluation) so any component
can be reproduced in isolation and reruns are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    keep_prob: float = 1.0          # inverted-dropout keep probability on hidden outputs
    batch_size: int = 20
    epochs: int = 1
    window: int = 32                # BPTT unroll length for stream training
    clip_norm: Optional[float] = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must be in (0, 1]")
        for name in ("batch_size", "epochs", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("betas must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    """First/second moment accumulators plus the hyperparameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float


def init_adam(params: dict[str, np.ndarray], learning_rate: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        step=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                state: AdamState) -> AdamState:
    """Standard bias-corrected update; mutates params and state in place.

    Keys are visited in sorted order so the update is deterministic
    regardless of dict construction order.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for k in sorted(params):
        g = grads[k]
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k!r}")
        state.m[k] *= state.beta1
        state.m[k] += (1.0 - state.beta1) * g
        state.v[k] *= state.beta2
        state.v[k] += (1.0 - state.beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        params[k] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


def dropout_mask(shape, keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: entries are 1/keep_prob with probability keep_prob, else 0.

    Meant for hidden-layer outputs feeding forward only; the recurrent
    path is never dropped.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must be in (0, 1]")
    if keep_prob == 1.0:
        return np.ones(shape)
    keep = rng.random(size=shape) < keep_prob
    return keep.astype(np.float64) / keep_prob


def clip_gradients(grads: dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm. No-op when max_norm is None.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items()))))
    if max_norm is not None and total > max_norm and total > 0.0:
        scale = max_norm / total
        for k in grads:
            grads[k] *= scale
    return total


def split_seeds(root_seed: int, n: int) -> list[np.random.Generator]:
    """Independent, reproducible generator streams derived from one root seed."""
    seq = np.random.SeedSequence(root_seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(n)]
