"""Q-network: a two-hidden-layer ReLU MLP with dropout, trained by Adam.

Checkpoint layout (little-endian)::

    b"HQDN"  uint32 version  uint32 n_sizes  uint32 sizes[n_sizes]
    float32 W1[in, h1]  b1[h1]  W2[h1, h2]  b2[h2]  W3[h2, out]  b3[out]

Weight matrices are stored row-major with shape (fan_in, fan_out).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from hierdet.errors import FormatError, ShapeMismatch, StaleCache

MAGIC = b"HQDN"
FORMAT_VERSION = 1


class QNetwork:
    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], keep_prob: float = 0.8):
        if len(weights) != 3 or len(biases) != 3:
            raise ShapeMismatch("Q-network needs exactly two hidden layers and one output layer")
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"bias {b.shape} does not fit weight {w.shape}")
        for w_prev, w_next in zip(weights, weights[1:]):
            if w_prev.shape[1] != w_next.shape[0]:
                raise ShapeMismatch(f"layer widths {w_prev.shape} -> {w_next.shape} do not chain")
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
        self.weights = list(weights)
        self.biases = list(biases)
        self.keep_prob = keep_prob

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        """Parameters in checkpoint order: W1, b1, W2, b2, W3, b3."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.keep_prob)

    def astype(self, dtype) -> "QNetwork":
        return QNetwork([w.astype(dtype) for w in self.weights],
                        [b.astype(dtype) for b in self.biases], self.keep_prob)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x, mode="infer")[0]


def init_weights(sizes: Sequence[int], rng: np.random.Generator, keep_prob: float = 0.8,
                 dtype=np.float32) -> QNetwork:
    """Normal weights with standard deviation 1/sqrt(fan_in); zero biases."""
    if len(sizes) != 4 or any(int(s) < 1 for s in sizes):
        raise ShapeMismatch(f"expected sizes [input, hidden, hidden, output], got {list(sizes)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append((rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return QNetwork(weights, biases, keep_prob)


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list[np.ndarray]
    hidden: list[np.ndarray]
    masks: list[Optional[np.ndarray]]
    single: bool


def forward(net: QNetwork, x: np.ndarray, mode: str = "infer",
            rng: Optional[np.random.Generator] = None):
    """Q-values for one state (D,) or a batch (B, D).

    In ``train`` mode hidden units are dropped with probability
    ``1 - keep_prob`` and survivors scaled by ``1 / keep_prob``; the returned
    cache feeds ``backward``. ``infer`` mode returns ``(q, None)``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=net.weights[0].dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.sizes[0]:
        raise ShapeMismatch(f"state of shape {x.shape[1:]} does not match input size {net.sizes[0]}")
    drop = mode == "train" and net.keep_prob < 1.0
    if drop and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    pre, hidden, masks = [], [], []
    h = x
    for w, b in zip(net.weights[:2], net.biases[:2]):
        z = h @ w + b
        h = np.maximum(z, 0)
        mask = None
        if drop:
            mask = (rng.random(z.shape) < net.keep_prob).astype(z.dtype) / z.dtype.type(net.keep_prob)
            h = h * mask
        pre.append(z)
        hidden.append(h)
        masks.append(mask)
    q = h @ net.weights[2] + net.biases[2]
    if single:
        q = q[0]
    if mode == "infer":
        return q, None
    return q, ForwardCache(x, pre, hidden, masks, single)


def backward(net: QNetwork, cache: Optional[ForwardCache], action, td_error) -> list[np.ndarray]:
    """Gradients of ``sum(0.5 * td_error**2)`` over the chosen actions' outputs.

    Returned in checkpoint order (W1, b1, W2, b2, W3, b3). ``td_error`` is
    ``Q(s, a) - target``; other actions' outputs get no gradient.
    """
    if cache is None or not isinstance(cache, ForwardCache):
        raise StaleCache("backward needs the cache from a train-mode forward pass")
    if cache.x.shape[1] != net.sizes[0] or cache.pre[0].shape[1] != net.sizes[1]:
        raise StaleCache("cached activations do not belong to this network")
    batch = cache.x.shape[0]
    actions = np.atleast_1d(np.asarray(action, dtype=np.int64))
    td = np.atleast_1d(np.asarray(td_error, dtype=cache.x.dtype))
    if actions.shape != (batch,) or td.shape != (batch,):
        raise ShapeMismatch(f"need one action and td-error per sample (batch {batch})")
    dq = np.zeros((batch, net.sizes[-1]), dtype=cache.x.dtype)
    dq[np.arange(batch), actions] = td

    grads: list[np.ndarray] = [None] * 6  # type: ignore[list-item]
    grads[4] = cache.hidden[1].T @ dq
    grads[5] = dq.sum(axis=0)
    delta = dq @ net.weights[2].T
    for layer in (1, 0):
        if cache.masks[layer] is not None:
            delta = delta * cache.masks[layer]
        delta = delta * (cache.pre[layer] > 0)
        inputs = cache.hidden[0] if layer == 1 else cache.x
        grads[2 * layer] = inputs.T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer == 1:
            delta = delta @ net.weights[1].T
    return grads


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_network(cls, net: QNetwork, lr: float, **kw) -> "AdamState":
        zeros = [np.zeros(p.shape, dtype=np.float64) for p in net.params]
        return cls(lr=lr, m=zeros, v=[z.copy() for z in zeros], **kw)


def adam_step(net: QNetwork, grads: Sequence[np.ndarray], opt: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``net`` in place."""
    params = net.params
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeMismatch("gradient shapes do not match the network parameters")
    if len(opt.m) != len(params) or any(m.shape != p.shape for m, p in zip(opt.m, params)):
        raise ShapeMismatch("optimizer state does not match the network parameters")
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        g = np.asarray(g, dtype=np.float64)
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        update = opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        p -= update.astype(p.dtype)


def save(net: QNetwork) -> bytes:
    sizes = net.sizes
    header = MAGIC + struct.pack(f"<II{len(sizes)}I", FORMAT_VERSION, len(sizes), *sizes)
    body = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in net.params)
    return header + body


def load(data: bytes, keep_prob: float = 0.8) -> QNetwork:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("not a Q-network checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if n != 4 or len(data) < 12 + 4 * n:
        raise FormatError(f"checkpoint declares {n} layer sizes, expected 4")
    sizes = struct.unpack_from(f"<{n}I", data, 12)
    offset = 12 + 4 * n
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(fan_in, fan_out), (fan_out,)]
    expected = offset + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise FormatError(f"checkpoint is {len(data)} bytes, expected {expected}")
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        params.append(arr.astype(np.float32))
        offset += 4 * count
    return QNetwork(params[0::2], params[1::2], keep_prob)
