"""Dense networks with hand-written backprop, plus an Adam optimizer.

Everything is float64. Weight matrices are stored ``(fan_in, fan_out)`` so a
batch ``x`` of shape ``(B, fan_in)`` maps through ``x @ W + b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "none")
HEADS = ("categorical", "scalar", "vector")


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    head: str = "vector"

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   list(self.activations), self.head)


def orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Semi-orthogonal matrix from the QR of a standard normal draw."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_mlp(dims: Sequence[int], head: str = "vector", seed: int | np.random.Generator = 0,
             activation: str = "tanh", hidden_gain: float = math.sqrt(2.0),
             out_std: float | None = None) -> Mlp:
    """Orthogonal init; biases zero.

    Hidden layers get gain ``hidden_gain``. When ``out_std`` is given the
    output layer is rescaled so its entries have that standard deviation
    (0.01 for actors, 1.0 for critics); otherwise it uses ``hidden_gain``.
    """
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError(f"invalid layer dims {list(dims)}")
    if head not in HEADS or activation not in ACTIVATIONS:
        raise ValueError(f"unknown head {head!r} or activation {activation!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    n_layers = len(dims) - 1
    for k in range(n_layers):
        fan_in, fan_out = dims[k], dims[k + 1]
        w = orthogonal(fan_in, fan_out, rng)
        if k == n_layers - 1 and out_std is not None:
            # entries of a semi-orthogonal matrix have RMS 1/sqrt(max(fan_in, fan_out))
            w = w * out_std * math.sqrt(max(fan_in, fan_out))
        else:
            w = w * hidden_gain
        weights.append(w)
        biases.append(np.zeros(fan_out))
    acts = [activation] * (n_layers - 1) + ["none"]
    return Mlp(weights, biases, acts, head)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the output and the per-layer cache ``[x, a1, a2, ...]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mlp.weights[0].shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != network input {mlp.weights[0].shape[0]}")
    cache = [x]
    h = x
    for w, b, kind in zip(mlp.weights, mlp.biases, mlp.activations):
        h = _act(h @ w + b, kind)
        cache.append(h)
    return h, cache


def predict(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    h = x
    for w, b, kind in zip(mlp.weights, mlp.biases, mlp.activations):
        h = h @ w + b
        if kind == "tanh":
            h = np.tanh(h)
        elif kind == "relu":
            h = np.maximum(h, 0.0)
    return h


def backward(mlp: Mlp, cache: list[np.ndarray] | None, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients in ``mlp.params()`` order, summed over the batch."""
    return backward_with_input(mlp, cache, grad_out)[0]


def backward_with_input(mlp: Mlp, cache: list[np.ndarray] | None,
                        grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Parameter gradients plus the gradient with respect to the input."""
    if not cache or len(cache) != len(mlp.weights) + 1:
        raise ValueError("backward needs the cache returned by forward")
    g = np.asarray(grad_out, dtype=np.float64)
    grads: list[np.ndarray] = []
    for k in range(len(mlp.weights) - 1, -1, -1):
        out = cache[k + 1]
        kind = mlp.activations[k]
        if kind == "tanh":
            g = g * (1.0 - out * out)
        elif kind == "relu":
            g = g * (out > 0.0)
        inp = cache[k]
        if inp.ndim == 1:
            dw = np.outer(inp, g)
            db = g.copy()
        else:
            dw = inp.T @ g
            db = g.sum(axis=0)
        grads.append(db)
        grads.append(dw)
        g = g @ mlp.weights[k].T
    grads.reverse()
    return grads, g


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float | None) -> tuple[list[np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return list(grads), norm
    scale = max_norm / (norm + 1e-12)
    return [g * scale for g in grads], norm


def annealed_lr(lr0: float, progress: float, anneal: bool = True) -> float:
    """Linear decay to zero; ``progress`` is the consumed fraction of the budget."""
    if not anneal:
        return lr0
    return lr0 * max(0.0, 1.0 - progress)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def opt_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             max_grad_norm: float | None = None, lr: float | None = None) -> float:
    """Clip to ``max_grad_norm`` then apply one Adam step in place.

    Returns the pre-clip global gradient norm.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer moments must align")
    for k, g in enumerate(grads):
        if g.shape != params[k].shape:
            raise ValueError(f"grad {k} shape {g.shape} != param shape {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {k} (shape {g.shape})")
    grads, norm = clip_by_global_norm(grads, max_grad_norm)
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm


# categorical helpers over several independent heads laid side by side

def split_heads(logits: np.ndarray, heads: Sequence[int]) -> list[np.ndarray]:
    out, k = [], 0
    for n in heads:
        out.append(logits[..., k:k + n])
        k += n
    return out


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_stats(logits: np.ndarray, actions: np.ndarray, heads: Sequence[int]):
    """Joint log-prob and entropy of multi-head actions.

    Returns ``(logp, entropy, logp_heads)`` where ``logp_heads`` holds the
    per-head log-softmax arrays (needed for gradients).
    """
    logps, ents, lsm = 0.0, 0.0, []
    for h, z in enumerate(split_heads(logits, heads)):
        ls = log_softmax(z)
        lsm.append(ls)
        a = actions[..., h]
        logps = logps + np.take_along_axis(ls, a[..., None], axis=-1)[..., 0]
        p = np.exp(ls)
        ents = ents - (p * ls).sum(axis=-1)
    return logps, ents, lsm
