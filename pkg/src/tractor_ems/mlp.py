"""Small rectifier MLP with hand-written backprop and Adam, used as the
action-value approximator. Weights are stored ``(fan_in, fan_out)`` and
inputs are row vectors, so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Layer list of ``(W, b)``. When built by :func:`init_mlp` every array is a
    view into one contiguous ``flat`` vector so optimiser steps are vectorised."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    flat: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    def copy(self) -> "MlpParams":
        out = _flat_like(self.sizes)
        for (ws, bs), (wd, bd) in zip(self.layers, out.layers):
            wd[...] = ws
            bd[...] = bs
        return out


def _flat_like(sizes) -> MlpParams:
    total = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    flat = np.zeros(total)
    layers = []
    k = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = flat[k:k + fan_in * fan_out].reshape(fan_in, fan_out)
        k += fan_in * fan_out
        b = flat[k:k + fan_out]
        k += fan_out
        layers.append((w, b))
    return MlpParams(layers, flat)


def init_mlp(sizes, rng: np.random.Generator) -> MlpParams:
    """He-style uniform fan-in init, zero biases."""
    params = _flat_like(list(sizes))
    for w, _ in params.layers:
        limit = np.sqrt(6.0 / w.shape[0])
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return params


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Q-values, shape ``(batch, n_out)``. Hidden layers use ReLU, output is linear."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite network input")
    return forward_unchecked(params, x)


def forward_unchecked(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """:func:`forward` for a trusted 2-D float batch (training hot path)."""
    h = x
    for w, b in params.layers[:-1]:
        h = h @ w
        h += b
        np.maximum(h, 0.0, out=h)
    w, b = params.layers[-1]
    return h @ w + b


def loss_and_grad(params: MlpParams, x: np.ndarray, actions: np.ndarray,
                  targets: np.ndarray, delta: float = 1.0):
    """Mean Huber loss between ``Q(x_i, actions_i)`` and ``targets_i``.

    Returns ``(loss, grads)``; ``grads`` is an :class:`MlpParams` of gradients.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=float)
    n = x.shape[0]
    n_out = params.layers[-1][0].shape[1]
    if actions.shape != (n,) or targets.shape != (n,):
        raise DomainError("need one action index and one target per sample")
    if np.any(actions < 0) or np.any(actions >= n_out):
        raise DomainError("action index out of range")
    if not np.all(np.isfinite(targets)):
        raise DomainError("non-finite target")
    return loss_and_grad_unchecked(params, x, actions, targets, delta)


def loss_and_grad_unchecked(params, x, actions, targets, delta=1.0):
    acts = [x]
    h = x
    for w, b in params.layers[:-1]:
        h = h @ w
        h += b
        np.maximum(h, 0.0, out=h)
        acts.append(h)
    w, b = params.layers[-1]
    q = h @ w + b

    n = x.shape[0]
    rows = np.arange(n)
    err = q[rows, actions] - targets
    abs_err = np.abs(err)
    quad = abs_err <= delta
    loss = float(np.mean(np.where(quad, 0.5 * err * err, delta * (abs_err - 0.5 * delta))))

    dout = np.zeros_like(q)
    dout[rows, actions] = np.clip(err, -delta, delta) / n

    grads = _flat_like(params.sizes)
    g = dout
    for i in range(len(params.layers) - 1, -1, -1):
        gw, gb = grads.layers[i]
        np.matmul(acts[i].T, g, out=gw)
        g.sum(axis=0, out=gb)
        if i > 0:
            g = g @ params.layers[i][0].T
            g *= acts[i] > 0
    return loss, grads


@dataclass
class OptState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: MlpParams | None = None
    v: MlpParams | None = None


def adam_init(params: MlpParams, lr: float = 1e-3) -> OptState:
    return OptState(lr=lr, m=_flat_like(params.sizes), v=_flat_like(params.sizes))


def _arrays(p: MlpParams, flat: bool) -> list[np.ndarray]:
    return [p.flat] if flat else [a for layer in p.layers for a in layer]


def adam_step(params: MlpParams, grads: MlpParams, opt: OptState) -> None:
    """Bias-corrected Adam update, in place."""
    if params.sizes != grads.sizes:
        raise DomainError(f"gradient shapes {grads.sizes} do not match {params.sizes}")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    step = opt.lr / (1.0 - b1**opt.t)
    c2 = 1.0 - b2**opt.t
    group = (params, grads, opt.m, opt.v)
    flat = all(p.flat is not None for p in group)
    for p, g, m, v in zip(*(_arrays(x, flat) for x in group)):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= step * m / (np.sqrt(v / c2) + opt.eps)


def sync_params(src: MlpParams, dst: MlpParams) -> None:
    """Hard copy ``src`` into ``dst`` in place."""
    if src.sizes != dst.sizes:
        raise DomainError(f"shape mismatch {src.sizes} vs {dst.sizes}")
    for (ws, bs), (wd, bd) in zip(src.layers, dst.layers):
        wd[...] = ws
        bd[...] = bs


def save_params(params: MlpParams, path) -> None:
    """Versioned ``.npz`` checkpoint; float64 arrays round-trip bit-exactly."""
    arrays = {"version": np.array(CHECKPOINT_VERSION), "sizes": np.array(params.sizes)}
    for i, (w, b) in enumerate(params.layers):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> MlpParams:
    with np.load(path) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {int(z['version'])}")
        params = _flat_like([int(k) for k in z["sizes"]])
        for i, (w, b) in enumerate(params.layers):
            w[...] = z[f"w{i}"]
            b[...] = z[f"b{i}"]
        return params
