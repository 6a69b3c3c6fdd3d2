"""Adam and RMSProp updates plus weight clipping, all in place on a ParamStore."""
from __future__ import annotations

import numpy as np

from .core import ConsistencyError, GradReport, ParamStore

ADAM_BETAS = (0.9, 0.999)
RMSPROP_DECAY = 0.9
EPS = 1e-8


def optimizer_step(kind: str, params: ParamStore, grads: GradReport, lr: float,
                   betas: tuple[float, float] = ADAM_BETAS, decay: float = RMSPROP_DECAY,
                   eps: float = EPS) -> None:
    """Apply one ``adam`` or ``rmsprop`` update to every trainable entry.

    Optimizer state lives on the store and is reset when ``kind`` changes.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if kind not in ("adam", "rmsprop"):
        raise ValueError(f"unknown optimizer {kind!r}")
    g = grads.grads if isinstance(grads, GradReport) else grads
    extra = set(g) - set(params.names())
    if extra:
        raise ConsistencyError(f"gradients for unknown parameters: {sorted(extra)}")
    trainable = params.trainable()
    missing = [k for k in trainable if k not in g]
    if missing:
        raise ConsistencyError(f"missing gradients for trainable parameters: {missing}")

    if params.opt_kind != kind:
        params.opt_kind = kind
        params.opt_state = {}
        params.step_count = 0
    params.step_count += 1
    t = params.step_count

    for name, p in trainable.items():
        gr = g[name].astype(p.data.dtype, copy=False)
        st = params.opt_state.get(name)
        if kind == "adam":
            if st is None:
                st = params.opt_state[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            b1, b2 = betas
            st["m"] *= b1
            st["m"] += (1 - b1) * gr
            st["v"] *= b2
            st["v"] += (1 - b2) * gr * gr
            mhat = st["m"] / (1 - b1 ** t)
            vhat = st["v"] / (1 - b2 ** t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)
        else:
            if st is None:
                st = params.opt_state[name] = {"ms": np.zeros_like(p.data)}
            st["ms"] *= decay
            st["ms"] += (1 - decay) * gr * gr
            p.data -= (lr * gr / (np.sqrt(st["ms"]) + eps)).astype(p.data.dtype)


def clip_weights(params: ParamStore, c: float) -> None:
    """Project every trainable value into [-c, c]."""
    if c <= 0:
        raise ValueError(f"clip bound must be positive, got {c}")
    for p in params.trainable().values():
        np.clip(p.data, -c, c, out=p.data)
