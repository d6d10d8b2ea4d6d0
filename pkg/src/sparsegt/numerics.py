"""Reverse-mode automatic differentiation on numpy arrays.

The tape is the closure graph: each op returns a Tensor holding its
inputs and a backward closure, and ``backward`` walks the graph in
reverse topological order accumulating gradients.  Arrays are at most
3-d; training runs in float32 and gradient checking in float64 (ops
preserve whatever dtype their inputs carry).

Also here because trainers need them next to the tape: the fused losses,
AdamW with a cosine learning-rate schedule, the binary checkpoint
format, and a central-difference gradient probe.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DivergenceError, FormatError, ShapeError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable taping inside the block (evaluation forward passes)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    """An ndarray with an optional gradient and a link back into the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        if self.data.ndim > 3:
            raise ShapeError(f"tensors are at most 3-d, got shape {self.data.shape}")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _acc(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # light sugar so network code reads like the math
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, dtype=np.float32) -> Tensor:
    """Trainable tensor in the given dtype."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _track(*ts) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in ts)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum out axes that broadcasting added or stretched."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable ``grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("backward on a tensor outside the tape")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# Ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, requires_grad=_track(a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a._acc(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(out.grad, b.data.shape))
        out._backward, out._parents = _bw, (a, b)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, requires_grad=_track(a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a._acc(_unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(out.grad * a.data, b.data.shape))
        out._backward, out._parents = _bw, (a, b)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul is 2-d only, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, requires_grad=_track(a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a._acc(out.grad @ b.data.T)
            if b.requires_grad:
                b._acc(a.data.T @ out.grad)
        out._backward, out._parents = _bw, (a, b)
    return out


def batched_matmul(a, b) -> Tensor:
    """(B,p,q) @ (B,q,r) -> (B,p,r) with matching batch dim."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"batched_matmul is 3-d only, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ShapeError(f"batched_matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data), requires_grad=_track(a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a._acc(np.matmul(out.grad, b.data.swapaxes(1, 2)))
            if b.requires_grad:
                b._acc(np.matmul(a.data.swapaxes(1, 2), out.grad))
        out._backward, out._parents = _bw, (a, b)
    return out


def gather_rows(t, idx) -> Tensor:
    """Select rows by index; backward scatter-adds."""
    t = as_tensor(t)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows wants a flat index array")
    out = Tensor(t.data[idx], requires_grad=_track(t))
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(t.data)
            np.add.at(g, idx, out.grad)
            t._acc(g)
        out._backward, out._parents = _bw, (t,)
    return out


def reshape(t, shape) -> Tensor:
    t = as_tensor(t)
    out = Tensor(t.data.reshape(shape), requires_grad=_track(t))
    if out.requires_grad:
        def _bw():
            t._acc(out.grad.reshape(t.data.shape))
        out._backward, out._parents = _bw, (t,)
    return out


def relu(t) -> Tensor:
    t = as_tensor(t)
    out = Tensor(np.maximum(t.data, 0), requires_grad=_track(t))
    if out.requires_grad:
        def _bw():
            t._acc(out.grad * (t.data > 0))
        out._backward, out._parents = _bw, (t,)
    return out


def dropout(t, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity at rate 0."""
    t = as_tensor(t)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return t
    keep = (rng.random(t.data.shape) >= rate).astype(t.data.dtype) / (1.0 - rate)
    out = Tensor(t.data * keep, requires_grad=_track(t))
    if out.requires_grad:
        def _bw():
            t._acc(out.grad * keep)
        out._backward, out._parents = _bw, (t,)
    return out


def mean_all(t) -> Tensor:
    t = as_tensor(t)
    out = Tensor(np.asarray(t.data.mean(), dtype=t.data.dtype), requires_grad=_track(t))
    if out.requires_grad:
        def _bw():
            t._acc(np.full_like(t.data, out.grad / t.data.size))
        out._backward, out._parents = _bw, (t,)
    return out


def masked_softmax(logits, mask, temperature: float = 1.0, clip: float = 8.0) -> Tensor:
    """Row softmax of clip(logits)/temperature over unmasked entries.

    Clipping happens before the temperature division, so annealing
    sharpens within a fixed logit budget.  Masked entries get exact
    zeros; a fully masked row is a contract violation, not a nan.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask)
    if logits.data.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} != logits shape {logits.data.shape}")
    if logits.data.ndim != 2:
        raise ShapeError("masked_softmax expects 2-d logits")
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    live = mask != 0
    if not live.any(axis=1).all():
        raise ContractError("masked_softmax row with no unmasked entries")
    z = np.clip(logits.data, -clip, clip) / temperature
    z = np.where(live, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    y = y.astype(logits.data.dtype)
    out = Tensor(y, requires_grad=_track(logits))
    if out.requires_grad:
        inside = (np.abs(logits.data) <= clip) & live
        def _bw():
            g = out.grad
            dot = (g * y).sum(axis=1, keepdims=True)
            dz = y * (g - dot) / temperature
            logits._acc(np.where(inside, dz, 0.0))
        out._backward, out._parents = _bw, (logits,)
    return out


def layer_norm(t, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with learnable scale and shift."""
    t, gamma, beta = as_tensor(t), as_tensor(gamma), as_tensor(beta)
    x = t.data
    if x.ndim != 2:
        raise ShapeError("layer_norm expects 2-d input")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data, requires_grad=_track(t, gamma, beta))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if beta.requires_grad:
                beta._acc(_unbroadcast(g, beta.data.shape))
            if gamma.requires_grad:
                gamma._acc(_unbroadcast(g * xhat, gamma.data.shape))
            if t.requires_grad:
                gx = g * gamma.data
                d = x.shape[1]
                s1 = gx.sum(axis=1, keepdims=True)
                s2 = (gx * xhat).sum(axis=1, keepdims=True)
                t._acc((inv / d) * (d * gx - s1 - xhat * s2))
        out._backward, out._parents = _bw, (t, gamma, beta)
    return out


def batch_norm(t, gamma, beta, running_mean, running_var, training: bool,
               stats_rows=None, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-feature normalization across rows.

    In training mode the statistics come from ``stats_rows`` (the rows
    that form the actual minibatch; other rows are support nodes) and the
    running buffers are updated in place.  Evaluation normalizes with the
    running buffers only, so a node's output never depends on what else
    is in its batch.
    """
    t, gamma, beta = as_tensor(t), as_tensor(gamma), as_tensor(beta)
    x = t.data
    if x.ndim != 2:
        raise ShapeError("batch_norm expects 2-d input")
    if training:
        rows = np.arange(x.shape[0]) if stats_rows is None else np.asarray(stats_rows)
        if rows.size == 0:
            raise ContractError("batch_norm with empty statistics row set")
        xs = x[rows]
        mu = xs.mean(axis=0)
        var = xs.var(axis=0)
        k = xs.shape[0]
        unbiased = var * (k / (k - 1)) if k > 1 else var
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        rows = None
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data, requires_grad=_track(t, gamma, beta))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if beta.requires_grad:
                beta._acc(_unbroadcast(g, beta.data.shape))
            if gamma.requires_grad:
                gamma._acc(_unbroadcast(g * xhat, gamma.data.shape))
            if t.requires_grad:
                gx = g * gamma.data
                dx = gx * inv
                if training:
                    # mu and var were computed on the stats rows but feed
                    # every row's output; route those paths back to the
                    # stats rows only.
                    k = rows.shape[0]
                    dmu = -(gx.sum(axis=0)) * inv
                    dvar = (gx * (x - mu)).sum(axis=0) * (-0.5) * inv ** 3
                    extra = (dmu + dvar * 2.0 * (x[rows] - mu)) / k
                    dx = dx.copy()
                    np.add.at(dx, rows, extra)
                t._acc(dx)
        out._backward, out._parents = _bw, (t, gamma, beta)
    return out


def normalize_rows(v, s, eps: float = 1e-6) -> Tensor:
    """Scale each row to length ``s``: row -> s * row / max(|row|, eps)."""
    v, s = as_tensor(v), as_tensor(s)
    x = v.data
    if x.ndim != 2:
        raise ShapeError("normalize_rows expects 2-d input")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    m = np.maximum(norms, eps)
    unit = x / m
    out = Tensor(s.data * unit, requires_grad=_track(v, s))
    if out.requires_grad:
        big = norms > eps
        def _bw():
            g = out.grad
            if s.requires_grad:
                s._acc(_unbroadcast(g * unit, s.data.shape))
            if v.requires_grad:
                sg = s.data * g
                proj = (x * sg).sum(axis=1, keepdims=True) / (m * m)
                dv = (sg - x * proj) / m
                dv_small = sg / m
                v._acc(np.where(big, dv, dv_small))
        out._backward, out._parents = _bw, (v, s)
    return out


# ---------------------------------------------------------------------------
# Losses and metrics


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of row-softmaxed logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    if z.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects 2-d logits")
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} for logits {z.shape}")
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    n = z.shape[0]
    loss_val = -logp[np.arange(n), labels].mean()
    out = Tensor(np.asarray(loss_val, dtype=z.dtype), requires_grad=_track(logits))
    if out.requires_grad:
        p = np.exp(logp)
        def _bw():
            g = p.copy()
            g[np.arange(n), labels] -= 1.0
            logits._acc(out.grad * g / n)
        out._backward, out._parents = _bw, (logits,)
    return out


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable form)."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=logits.data.dtype)
    z = logits.data
    if z.shape != t.shape:
        raise ShapeError(f"targets shape {t.shape} != logits shape {z.shape}")
    loss_val = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean()
    out = Tensor(np.asarray(loss_val, dtype=z.dtype), requires_grad=_track(logits))
    if out.requires_grad:
        sig = 1.0 / (1.0 + np.exp(-z))
        def _bw():
            logits._acc(out.grad * (sig - t) / z.size)
        out._backward, out._parents = _bw, (logits,)
    return out


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (or thresholded sigmoid) hits the label."""
    if logits.ndim == 2 and logits.shape[1] > 1:
        pred = logits.argmax(axis=1)
    else:
        pred = (logits.reshape(-1) > 0).astype(np.int64)
    return float((pred == labels.reshape(pred.shape)).mean())


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Binary AUC via the rank statistic; 0.5 when one class is absent."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    pos = labels == 1
    npos, nneg = int(pos.sum()), int((~pos).sum())
    if npos == 0 or nneg == 0:
        return 0.5
    import scipy.stats
    ranks = scipy.stats.rankdata(scores)
    return float((ranks[pos].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))


# ---------------------------------------------------------------------------
# Optimization


class CosineSchedule:
    """Cosine decay from base_lr to a 1% floor, with optional linear warmup."""

    def __init__(self, base_lr: float, total_epochs: int, warmup: int = 0,
                 min_ratio: float = 0.01):
        if total_epochs < 1:
            raise ContractError("schedule needs at least one epoch")
        if warmup >= total_epochs:
            raise ContractError("warmup must be shorter than the run")
        self.base_lr = base_lr
        self.total_epochs = total_epochs
        self.warmup = warmup
        self.min_ratio = min_ratio

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-indexed ``epoch``; the last epoch hits the floor."""
        if epoch <= self.warmup:
            return self.base_lr * epoch / self.warmup
        span = max(self.total_epochs - self.warmup, 1)
        progress = (epoch - self.warmup) / span
        factor = 0.5 * (1.0 + np.cos(np.pi * progress))
        return self.base_lr * max(factor, self.min_ratio)


class AdamW:
    """AdamW with decoupled weight decay over a named parameter list."""

    def __init__(self, named_params, schedule: CosineSchedule,
                 weight_decay: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.schedule = schedule
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def step(self, epoch: int) -> float:
        """One update at the scheduled rate for ``epoch``; returns the lr used."""
        lr = self.schedule.lr_at(epoch)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient in {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.data -= (lr * (mhat / (np.sqrt(vhat) + self.eps)
                             + self.weight_decay * p.data)).astype(p.data.dtype)
        return lr


# ---------------------------------------------------------------------------
# Checkpoints

_CKPT_MAGIC = b"SGTCKPT\x00"
_CKPT_VERSION = 1


def save_checkpoint(path, named_arrays: dict) -> None:
    """Binary dump: magic, version, count, then name/dims/float32-LE data."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(named_arrays)))
        for name, arr in named_arrays.items():
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off); off += 2
            name = blob[off:off + nlen].decode("utf-8"); off += nlen
            (ndim,) = struct.unpack_from("<B", blob, off); off += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, off); off += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
            off += 4 * size
            out[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from None
    return out


# ---------------------------------------------------------------------------
# Gradient probing


def finite_difference(loss_fn, tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference d(loss)/d(tensor), elementwise.

    ``loss_fn`` must rebuild the forward pass from current tensor values;
    it is called under no_grad, twice per element.
    """
    flat = tensor.data.reshape(-1)
    out = np.zeros_like(flat, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            hi = float(as_tensor(loss_fn()).data)
            flat[i] = keep - h
            lo = float(as_tensor(loss_fn()).data)
            flat[i] = keep
            out[i] = (hi - lo) / (2 * h)
    return out.reshape(tensor.data.shape)


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a-b| / max(|a|, |b|, floor) — the gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
