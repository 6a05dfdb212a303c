"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

Every differentiable op records one node on the active :class:`Tape`.
``backward`` walks the tape in exact reverse construction order, so a tape
is a valid topological order by construction. Outside an explicit
``with Tape():`` block ops record onto a module default tape, which is
replaced by a fresh one once it has been consumed by ``backward``.

There is no implicit broadcasting. Bias rows are added through
:func:`add_bias`; everything else requires equal shapes.
"""
import contextlib
import itertools

import numpy as np

from .errors import NonFiniteError, ShapeError, StaleTapeError, VocabularyError

DTYPE = np.float64

OPS = {}


def register_op(name):
    def deco(fn):
        OPS[name] = fn
        return fn
    return deco


class _SliceGrad:
    """Sparse gradient contribution: ``parent.grad[index] += value``."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


class Tape:
    _ids = itertools.count(1)

    def __init__(self):
        self.id = next(Tape._ids)
        self.nodes = []
        self.consumed = False
        self._prev = None

    def __enter__(self):
        self._prev = _state.tape
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        """Drop all nodes; tensors recorded here can no longer be differentiated."""
        self.nodes = []
        self.consumed = True

    def backward(self, loss):
        if self.consumed:
            raise StaleTapeError(f"tape {self.id} was already consumed; build a new graph")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise StaleTapeError("loss was not recorded on this tape")
        if not np.all(np.isfinite(loss.data)):
            raise NonFiniteError(f"non-finite loss {loss.data!r}")
        owned = set()
        loss.grad = np.ones_like(loss.data)
        owned.add(id(loss))
        for out, parents, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for p, gp in zip(parents, grads):
                if gp is None or not p.requires_grad:
                    continue
                pid = id(p)
                if isinstance(gp, _SliceGrad):
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)
                        owned.add(pid)
                    elif pid not in owned:
                        p.grad = p.grad.copy()
                        owned.add(pid)
                    p.grad[gp.index] += gp.value
                elif p.grad is None:
                    p.grad = gp
                elif pid in owned:
                    p.grad += gp
                else:
                    p.grad = p.grad + gp
                    owned.add(pid)
            if out._tape is self:
                # interior node; leaves keep their grads
                out.grad = None
        self.clear()
        if _state.tape is self and self._prev is None:
            _state.tape = Tape()


class _State:
    def __init__(self):
        self.tape = Tape()
        self.grad_enabled = True
        self.dropout = (0.0, None)


_state = _State()


def active_tape():
    return _state.tape


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def dropout_scope(rate, rng):
    """Enable :func:`dropout` with ``rate`` and mask generator ``rng`` for the enclosed block."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    prev = _state.dropout
    _state.dropout = (float(rate), rng)
    try:
        yield
    finally:
        _state.dropout = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def tape_id(self):
        return None if self._tape is None else self._tape.id

    @property
    def is_leaf(self):
        return self._tape is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None):
    t = Tensor(data, requires_grad=requires_grad, name=name)
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError("tensor data contains NaN or Inf")
    return t


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if not _state.grad_enabled:
        return out
    if not any(p.requires_grad for p in parents):
        return out
    tape = _state.tape
    if tape.consumed:
        raise StaleTapeError(f"tape {tape.id} was already consumed; open a new Tape to record")
    for p in parents:
        pt = p._tape
        if pt is not None and pt is not tape:
            if pt.consumed:
                raise StaleTapeError("input tensor belongs to a consumed tape")
            raise StaleTapeError("input tensor belongs to a different active tape")
    out.requires_grad = True
    out._tape = tape
    tape.nodes.append((out, parents, backward))
    return out


def backward(loss):
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss._tape is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return
    loss._tape.backward(loss)


# ---------------------------------------------------------------- linear algebra

@register_op("matmul")
def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)
    return _result(ad @ bd, (a, b), bw)


@register_op("linear")
def linear(x, w, b=None):
    """``x @ w.T + b`` over the last axis of ``x``; ``w`` is [out x in]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear dimension mismatch: x {x.shape}, weight {w.shape}")
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear bias shape {b.shape} != ({w.shape[0]},)")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out += b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ wd) if x.requires_grad else None
        gw = (g2.T @ xd.reshape(-1, xd.shape[-1])) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)
    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, bw)


@register_op("add_bias")
def add_bias(x, b):
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias {b.shape} does not fit rows of {x.shape}")

    def bw(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)
    return _result(x.data + b.data, (x, b), bw)


# ---------------------------------------------------------------- elementwise

def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ {a.shape} vs {b.shape}")


@register_op("add")
def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


@register_op("mul")
def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


@register_op("tanh")
def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


@register_op("dropout")
def dropout(a, rate=None, rng=None):
    """Inverted dropout; the identity unless a rate is given or a dropout scope is active."""
    a = _as_tensor(a)
    if rate is None:
        rate, rng = _state.dropout
    if not rate:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


@register_op("sigmoid")
def sigmoid(a):
    a = _as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


@register_op("scale")
def scale(a, s):
    a = _as_tensor(a)
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "mul": mul}


def elementwise(kind, a, b=None):
    if kind in _UNARY:
        if b is not None:
            raise ShapeError(f"{kind} takes one operand")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------- reductions / softmax

@register_op("sum")
def sum_all(a):
    a = _as_tensor(a)
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


@register_op("softmax_rows")
def softmax_rows(a, mask=None):
    """Softmax over the last axis; ``mask`` (bool, True = keep) zeroes entries."""
    a = _as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError(f"softmax_rows needs a non-empty last axis, got {a.shape}")
    z = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ShapeError(f"mask shape {mask.shape} != {z.shape}")
        if not mask.any(axis=-1).all():
            raise ShapeError("softmax_rows: a row is fully masked")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    return _result(y, (a,), bw)


# ---------------------------------------------------------------- shape plumbing

@register_op("concat_last_dim")
def concat_last_dim(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last_dim: leading dims differ {a.shape} vs {b.shape}")
    p = a.shape[-1]
    return _result(np.concatenate([a.data, b.data], axis=-1), (a, b),
                   lambda g: (g[..., :p], g[..., p:]))


@register_op("slice_last")
def slice_last(a, start, stop):
    a = _as_tensor(a)
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for last dim {a.shape[-1]}")
    idx = (Ellipsis, slice(start, stop))
    return _result(a.data[idx], (a,), lambda g: (_SliceGrad(idx, g),))


@register_op("reshape")
def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {old} to {shape}") from e
    return _result(out, (a,), lambda g: (g.reshape(old),))


@register_op("gather_rows")
def gather_rows(table, ids):
    """Embedding lookup. ``ids`` may have any shape; repeated ids accumulate grads."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows table must be 2-D, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    V, E = table.shape
    if ids.size:
        bad = ids[(ids < 0) | (ids >= V)]
        if bad.size:
            raise VocabularyError(f"token id {int(bad.reshape(-1)[0])} out of range for vocabulary of {V}")
    out = table.data[ids] if ids.size else np.zeros(ids.shape + (E,))

    def bw(g):
        gt = np.zeros((V, E))
        if ids.size:
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, E))
        return (gt,)
    return _result(out, (table,), bw)


@register_op("take_step")
def take_step(x, t):
    """``x[:, t]`` for a batch-major sequence tensor [B x N x C]."""
    x = _as_tensor(x)
    idx = (slice(None), t)
    return _result(x.data[idx], (x,), lambda g: (_SliceGrad(idx, g),))


@register_op("stack_steps")
def stack_steps(steps):
    """Stack T tensors of shape [B x C] into [B x T x C]."""
    steps = [_as_tensor(s) for s in steps]
    if not steps:
        raise ShapeError("stack_steps needs at least one step")
    shape = steps[0].shape
    for s in steps:
        if s.shape != shape:
            raise ShapeError(f"stack_steps: step shapes differ {shape} vs {s.shape}")
    out = np.stack([s.data for s in steps], axis=1)
    n = len(steps)
    return _result(out, tuple(steps), lambda g: tuple(g[:, t] for t in range(n)))


def _reversal_index(lengths, n):
    lengths = np.asarray(lengths, dtype=np.int64)
    t = np.arange(n)[None, :]
    L = lengths[:, None]
    return np.where(t < L, L - 1 - t, t)


@register_op("reverse_steps")
def reverse_steps(x, lengths):
    """Reverse each row of [B x N x C] within its own length; padding stays put."""
    x = _as_tensor(x)
    B, N = x.shape[0], x.shape[1]
    if len(lengths) != B or max(lengths) > N or min(lengths) < 1:
        raise ShapeError(f"reverse_steps lengths {list(lengths)} do not fit {x.shape}")
    perm = _reversal_index(lengths, N)
    rows = np.arange(B)[:, None]
    # the permutation is an involution, so backward applies it again
    return _result(x.data[rows, perm], (x,), lambda g: (g[rows, perm],))


@register_op("select_steps")
def select_steps(x, idx):
    """Row-wise ``x[b, idx[b]]`` for [B x N x C] -> [B x C]."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    B, N = x.shape[0], x.shape[1]
    if idx.shape != (B,) or idx.min() < 0 or idx.max() >= N:
        raise ShapeError(f"select_steps index {idx.tolist()} does not fit {x.shape}")
    key = (np.arange(B), idx)
    return _result(x.data[key], (x,), lambda g: (_SliceGrad(key, g),))


# ---------------------------------------------------------------- batched attention products

@register_op("bmv")
def bmv(A, v):
    """Batched matrix-vector: [B x N x C], [B x C] -> [B x N]."""
    A, v = _as_tensor(A), _as_tensor(v)
    if A.ndim != 3 or v.ndim != 2 or A.shape[0] != v.shape[0] or A.shape[2] != v.shape[1]:
        raise ShapeError(f"bmv dimension mismatch: {A.shape} x {v.shape}")
    Ad, vd = A.data, v.data

    def bw(g):
        gA = g[:, :, None] * vd[:, None, :] if A.requires_grad else None
        gv = (g[:, None, :] @ Ad)[:, 0, :] if v.requires_grad else None
        return gA, gv
    return _result((Ad @ vd[:, :, None])[:, :, 0], (A, v), bw)


@register_op("bvm")
def bvm(w, A):
    """Batched weighted sum of rows: [B x N], [B x N x C] -> [B x C]."""
    w, A = _as_tensor(w), _as_tensor(A)
    if A.ndim != 3 or w.ndim != 2 or A.shape[:2] != w.shape:
        raise ShapeError(f"bvm dimension mismatch: {w.shape} x {A.shape}")
    wd, Ad = w.data, A.data

    def bw(g):
        gw = (Ad @ g[:, :, None])[:, :, 0] if w.requires_grad else None
        gA = wd[:, :, None] * g[:, None, :] if A.requires_grad else None
        return gw, gA
    return _result((wd[:, None, :] @ Ad)[:, 0, :], (w, A), bw)


# ---------------------------------------------------------------- losses

def _row_mask(mask, n, what):
    if mask is None:
        return np.ones(n)
    m = np.asarray(mask, dtype=DTYPE).reshape(-1)
    if m.shape != (n,):
        raise ShapeError(f"{what}: mask length {m.shape[0]} != {n}")
    return m


@register_op("cross_entropy")
def cross_entropy(logits, targets, mask=None):
    """Mean over unmasked rows of ``-log softmax(logits)[target]``."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy logits must be [T x V], got {logits.shape}")
    T, V = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape != (T,):
        raise ShapeError(f"cross_entropy: {targets.shape[0]} targets for {T} rows")
    m = _row_mask(mask, T, "cross_entropy")
    count = m.sum()
    if count <= 0:
        raise ValueError("cross_entropy: every position is masked")
    # masked rows may carry PAD ids; only valid ids are required where counted
    tsafe = np.where(m > 0, targets, 0)
    bad = tsafe[(tsafe < 0) | (tsafe >= V)]
    if bad.size:
        raise VocabularyError(f"target id {int(bad[0])} out of range for {V} classes")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(T)
    nll = lse - shifted[rows, tsafe]
    loss = float((nll * m).sum() / count)
    if not np.isfinite(loss):
        raise NonFiniteError(f"cross_entropy produced {loss}")

    def bw(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, tsafe] -= 1.0
        p *= (m * (float(g) / count))[:, None]
        return (p,)
    return _result(np.array(loss), (logits,), bw)


@register_op("mse")
def mse(pred, target, mask=None):
    """Mean squared error over unmasked elements; ``mask`` selects rows of a 2-D pred."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_same(pred, target, "mse")
    d = pred.data - target.data
    if mask is None:
        m = np.ones(d.shape)
    else:
        rows = d.shape[0] if d.ndim else 1
        rm = _row_mask(mask, rows, "mse")
        m = np.broadcast_to(rm.reshape((rows,) + (1,) * (d.ndim - 1)), d.shape)
    count = m.sum()
    if count <= 0:
        raise ValueError("mse: every element is masked")
    loss = float((d * d * m).sum() / count)
    if not np.isfinite(loss):
        raise NonFiniteError(f"mse produced {loss}")

    def bw(g):
        gp = d * m * (2.0 * float(g) / count)
        return gp, -gp
    return _result(np.array(loss), (pred, target), bw)


# ---------------------------------------------------------------- verification

def grad_check(f, point, eps=1e-3):
    """Max relative error between backprop and a numerical gradient of ``f`` at ``point``.

    The numerical side is the fourth-order central stencil
    ``(f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h``; its truncation error
    is O(h^4), so a wide step keeps round-off small even for tiny gradients.
    Relative error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=DTYPE)
    x = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(x)
        tape.backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(base)
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for k in (-2, -1, 1, 2):
                flat[i] = orig + k * eps
                vals.append(f(Tensor(base)).item())
            flat[i] = orig
            nflat[i] = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * eps)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
