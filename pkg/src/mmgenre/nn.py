"""Small numpy layers with hand-written backward passes.

Every layer follows the same functional protocol::

    y, cache = layer.forward(x, training=False, rng=None)
    dx = layer.backward(dy, cache)

``backward`` accumulates parameter gradients into ``Parameter.grad`` and
returns the gradient with respect to the input.  Keeping the cache outside
the layer lets a frozen model score many inputs concurrently and lets the
sequence stage of an encoder run per sample without overwriting state.

All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class EmptySequenceError(ValueError):
    pass


class SequenceTooShortError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s) of {np.size(x)}")
    return x


@dataclass
class Parameter:
    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


# ---------------------------------------------------------------------------
# initialisation, optimiser, schedule


def _fans(shape) -> tuple[int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ValueError(f"xavier init needs at least 2 dims, got shape {shape}")
    receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[-2] * receptive, shape[-1] * receptive
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"zero fan size for shape {shape}")
    return fan_in, fan_out


def xavier_init(shape, rng_seed=None) -> np.ndarray:
    """Glorot-uniform draw.  ``rng_seed`` may be an int or a Generator.

    For a conv kernel ``(n, D_in, D_out)`` the fans are ``n*D_in`` and
    ``n*D_out``.
    """
    fan_in, fan_out = _fans(shape)
    rng = np.random.default_rng(rng_seed)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=tuple(shape))


def lr_schedule(lr0: float, epoch: int, decay: float = 1e-3) -> float:
    """Inverse-time decay: ``lr0 / (1 + decay * epoch)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return lr0 / (1.0 + decay * epoch)


def adam_step(p: Parameter, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Parameter:
    g = p.grad
    if not np.all(np.isfinite(g)):
        bad = np.argwhere(~np.isfinite(g))
        raise NonFiniteError(
            f"non-finite gradient in parameter {p.name or '?'} {p.shape}: "
            f"{len(bad)} entries, first at {tuple(bad[0])}, step {p.step_count}")
    p.step_count += 1
    t = p.step_count
    p.adam_m *= beta1
    p.adam_m += (1.0 - beta1) * g
    p.adam_v *= beta2
    p.adam_v += (1.0 - beta2) * g * g
    m_hat = p.adam_m / (1.0 - beta1 ** t)
    v_hat = p.adam_v / (1.0 - beta2 ** t)
    p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


class Adam:
    def __init__(self, params, lr0=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, decay=1e-3):
        self.params = list(params)
        self.lr0, self.beta1, self.beta2, self.eps, self.decay = lr0, beta1, beta2, eps, decay
        self.epoch = 0

    @property
    def lr(self) -> float:
        return lr_schedule(self.lr0, self.epoch, self.decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        lr = self.lr
        for p in self.params:
            adam_step(p, lr, self.beta1, self.beta2, self.eps)


# ---------------------------------------------------------------------------
# losses


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(z):
    return _sigmoid(np.asarray(z, dtype=np.float64))


def weighted_bce_loss(logits, labels, class_weights=None):
    """Mean weighted binary cross-entropy over every (sample, class) entry.

    The class weight multiplies the positive term only.  Returns
    ``(loss, dloss/dlogits)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError(f"logits {z.shape} vs labels {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if class_weights is None:
        cw = np.ones(z.shape[-1])
    else:
        cw = np.asarray(class_weights, dtype=np.float64)
        if cw.shape != (z.shape[-1],):
            raise ShapeError(f"class_weights {cw.shape} vs {z.shape[-1]} classes")
        if np.any(cw <= 0):
            raise ValueError("class weights must be strictly positive")
    check_finite(z, "logits")
    # -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
    per = cw * y * _softplus(-z) + (1.0 - y) * _softplus(z)
    n = z.size
    s = _sigmoid(z)
    grad = (cw * y * (s - 1.0) + (1.0 - y) * s) / n
    return float(per.sum() / n), grad


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce_loss(logits, labels):
    """Mean softmax cross-entropy; ``labels`` holds one class index per row."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"logits must be B x K, got {z.shape}")
    lab = np.asarray(labels)
    if lab.shape != (z.shape[0],):
        raise ShapeError(f"labels {lab.shape} vs batch {z.shape[0]}")
    if not np.issubdtype(lab.dtype, np.integer):
        if np.any(lab != np.round(lab)):
            raise ValueError("labels must be integer class indices")
        lab = lab.astype(np.int64)
    if np.any(lab < 0) or np.any(lab >= z.shape[1]):
        raise ValueError(f"label index outside [0, {z.shape[1]})")
    check_finite(z, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    nll = logsum - shifted[rows, lab]
    grad = softmax(z)
    grad[rows, lab] -= 1.0
    return float(nll.mean()), grad / z.shape[0]


# ---------------------------------------------------------------------------
# layers


class Layer:
    def params(self) -> list[Parameter]:
        return []

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def output_dim(self, input_dim: int) -> int:
        return input_dim


class Affine(Layer):
    """``x @ W + b`` for ``x`` of shape (B, D) or (D,)."""

    def __init__(self, in_dim, out_dim, rng=None, W=None, b=None):
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        if W is None:
            W = xavier_init((self.in_dim, self.out_dim), rng)
        self.W = Parameter(W, "W")
        self.b = Parameter(np.zeros(self.out_dim) if b is None else b, "b")
        if self.W.shape != (self.in_dim, self.out_dim) or self.b.shape != (self.out_dim,):
            raise ShapeError("affine parameter shapes do not match (in_dim, out_dim)")

    def params(self):
        return [self.W, self.b]

    def output_dim(self, input_dim):
        return self.out_dim

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"affine expects last dim {self.in_dim}, got {x.shape}")
        return x @ self.W.value + self.b.value, x

    def backward(self, dy, cache):
        x = cache
        if x.ndim == 1:
            self.W.grad += np.outer(x, dy)
            self.b.grad += dy
        else:
            self.W.grad += x.T @ dy
            self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value.T


def affine_forward(x, W, b):
    """Plain affine map, kept for callers that hold raw arrays."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[-1]:
        raise ShapeError(f"incompatible shapes x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


class Embedding(Layer):
    """Trainable lookup table: integer ids (T,) -> (T, dim).

    There is no input gradient; ``backward`` scatter-adds into the table.
    """

    def __init__(self, vocab_size, dim, rng=None, table=None):
        self.vocab_size, self.dim = int(vocab_size), int(dim)
        if table is None:
            table = xavier_init((self.vocab_size, self.dim), rng)
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (self.vocab_size, self.dim):
            raise ShapeError(f"embedding table {table.shape} != {(self.vocab_size, self.dim)}")
        self.E = Parameter(table, "E")

    def params(self):
        return [self.E]

    def output_dim(self, input_dim):
        return self.dim

    def forward(self, x, training=False, rng=None):
        ids = np.asarray(x)
        if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
            raise ShapeError(f"embedding expects a 1-D integer id array, got {ids.dtype} {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(f"token id out of range [0, {self.vocab_size})")
        return self.E.value[ids], ids

    def backward(self, dy, cache):
        np.add.at(self.E.grad, cache, dy)
        return None


class MeanPool(Layer):
    """Average over the time axis: (T, D) -> (D,).

    Each column is summed in sorted order, so the result is bit-identical
    under any permutation of the rows.
    """

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"mean pool expects (T, D), got {x.shape}")
        T = x.shape[0]
        if T == 0:
            raise EmptySequenceError("cannot pool an empty sequence")
        return np.sort(x, axis=0).sum(axis=0) / T, x.shape

    def backward(self, dy, cache):
        T, _ = cache
        return np.broadcast_to(dy / T, cache).copy()


def mean_pool_forward(x):
    return MeanPool().forward(x)[0]


class MaxPool(Layer):
    """Max over the time axis; ties route the gradient to the first maximum."""

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            raise EmptySequenceError("cannot pool an empty sequence")
        idx = x.argmax(axis=0)
        return x[idx, np.arange(x.shape[1])], (x.shape, idx)

    def backward(self, dy, cache):
        shape, idx = cache
        dx = np.zeros(shape)
        dx[idx, np.arange(shape[1])] = dy
        return dx


class TemporalConv(Layer):
    """Valid 1-D convolution along time with kernel (n, D_in, D_out)."""

    def __init__(self, width, in_dim, out_dim=None, stride=1, rng=None, kernel=None, bias=None):
        self.width, self.stride = int(width), int(stride)
        self.in_dim = int(in_dim)
        self.out_dim = self.in_dim if out_dim is None else int(out_dim)
        if self.width < 1 or self.stride < 1:
            raise ValueError("width and stride must be positive")
        shape = (self.width, self.in_dim, self.out_dim)
        self.kernel = Parameter(xavier_init(shape, rng) if kernel is None else kernel, "kernel")
        self.bias = Parameter(np.zeros(self.out_dim) if bias is None else bias, "bias")
        if self.kernel.shape != shape:
            raise ShapeError(f"kernel shape {self.kernel.shape} != {shape}")

    def params(self):
        return [self.kernel, self.bias]

    def output_dim(self, input_dim):
        return self.out_dim

    def out_length(self, T: int) -> int:
        if T < self.width:
            raise SequenceTooShortError(
                f"sequence of length {T} is shorter than conv width {self.width}")
        return (T - self.width) // self.stride + 1

    def _windows(self, T):
        T_out = self.out_length(T)
        return self.stride * np.arange(T_out)[:, None] + np.arange(self.width)[None, :]

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"temporal conv expects (T, {self.in_dim}), got {x.shape}")
        idx = self._windows(x.shape[0])
        win = x[idx]  # (T', n, D)
        y = np.einsum("tnd,nde->te", win, self.kernel.value) + self.bias.value
        return y, (x.shape, idx, win)

    def backward(self, dy, cache):
        shape, idx, win = cache
        self.kernel.grad += np.einsum("tnd,te->nde", win, dy)
        self.bias.grad += dy.sum(axis=0)
        dwin = np.einsum("te,nde->tnd", dy, self.kernel.value)
        dx = np.zeros(shape)
        np.add.at(dx, idx.ravel(), dwin.reshape(-1, shape[1]))
        return dx


def temporal_conv_forward(x, kernel, stride=1, bias=None):
    kernel = np.asarray(kernel, dtype=np.float64)
    n, d_in, d_out = kernel.shape
    layer = TemporalConv(n, d_in, d_out, stride, kernel=kernel, bias=bias)
    return layer.forward(x)[0]


class LSTM(Layer):
    """Single-direction LSTM returning the final hidden state.

    Gate layout in the fused weight matrix ``W`` of shape (D + H, 4H) is
    input, forget, output, candidate.  The forget-gate bias starts at 1.
    """

    def __init__(self, in_dim, hidden, rng=None, reverse=False, W=None, b=None):
        self.in_dim, self.hidden, self.reverse = int(in_dim), int(hidden), reverse
        H = self.hidden
        if W is None:
            W = xavier_init((self.in_dim + H, 4 * H), rng)
        if b is None:
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
        self.W = Parameter(W, "W")
        self.b = Parameter(b, "b")

    def params(self):
        return [self.W, self.b]

    def output_dim(self, input_dim):
        return self.hidden

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"LSTM expects (T, {self.in_dim}), got {x.shape}")
        if x.shape[0] == 0:
            raise EmptySequenceError("LSTM over an empty sequence")
        seq = x[::-1] if self.reverse else x
        H = self.hidden
        h = np.zeros(H)
        c = np.zeros(H)
        steps = []
        W, b = self.W.value, self.b.value
        for xt in seq:
            z = np.concatenate([xt, h])
            a = z @ W + b
            i = _sigmoid(a[:H])
            f = _sigmoid(a[H:2 * H])
            o = _sigmoid(a[2 * H:3 * H])
            g = np.tanh(a[3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((z, i, f, o, g, c_prev, tc))
        return h, (x.shape, steps)

    def backward(self, dy, cache):
        shape, steps = cache
        H, D = self.hidden, self.in_dim
        W = self.W.value
        dx = np.zeros(shape)
        dh = np.asarray(dy, dtype=np.float64).copy()
        dc = np.zeros(H)
        T = len(steps)
        for k in range(T - 1, -1, -1):
            z, i, f, o, g, c_prev, tc = steps[k]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            da = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                do * o * (1.0 - o),
                dg * (1.0 - g * g),
            ])
            self.W.grad += np.outer(z, da)
            self.b.grad += da
            dz = W @ da
            t = T - 1 - k if self.reverse else k
            dx[t] = dz[:D]
            dh = dz[D:]
            dc = dc * f
        return dx


class BiLSTM(Layer):
    """Forward and backward LSTMs; output is their final states concatenated."""

    def __init__(self, in_dim, hidden, rng=None):
        rng = np.random.default_rng(rng)
        self.fwd = LSTM(in_dim, hidden, rng)
        self.bwd = LSTM(in_dim, hidden, rng, reverse=True)
        self.hidden = int(hidden)

    def params(self):
        return self.fwd.params() + self.bwd.params()

    def output_dim(self, input_dim):
        return 2 * self.hidden

    def forward(self, x, training=False, rng=None):
        hf, cf = self.fwd.forward(x)
        hb, cb = self.bwd.forward(x)
        return np.concatenate([hf, hb]), (cf, cb)

    def backward(self, dy, cache):
        cf, cb = cache
        H = self.hidden
        return self.fwd.backward(dy[:H], cf) + self.bwd.backward(dy[H:], cb)


def lstm_forward(x, hidden, bidirectional=False, rng=None):
    layer = BiLSTM(np.shape(x)[1], hidden, rng) if bidirectional else LSTM(np.shape(x)[1], hidden, rng)
    return layer.forward(x)[0]


class Dropout(Layer):
    """Inverted dropout; identity outside training mode."""

    def __init__(self, rate=0.5):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = float(rate)

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if not training or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, dy, cache):
        return dy if cache is None else dy * cache


class Sigmoid(Layer):
    def forward(self, x, training=False, rng=None):
        y = sigmoid(x)
        return y, y

    def backward(self, dy, cache):
        return dy * cache * (1.0 - cache)


class Softmax(Layer):
    def forward(self, x, training=False, rng=None):
        y = softmax(x)
        return y, y

    def backward(self, dy, cache):
        y = cache
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


class LayerStack(Layer):
    """Layers applied in order; checks dimension compatibility up front."""

    def __init__(self, layers, input_dim=None):
        self.layers = list(layers)
        if input_dim is not None:
            d = int(input_dim)
            for layer in self.layers:
                expected = getattr(layer, "in_dim", None)
                if expected is not None and expected != d:
                    raise ShapeError(
                        f"{type(layer).__name__} expects input dim {expected}, receives {d}")
                d = layer.output_dim(d)
            self.out_dim = d

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, training=False, rng=None):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, training, rng)
            caches.append(c)
        return x, caches

    def backward(self, dy, cache):
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dy = layer.backward(dy, c)
        return dy

    def output_dim(self, input_dim):
        for layer in self.layers:
            input_dim = layer.output_dim(input_dim)
        return input_dim
