"""Dense float64 tensors with tape-based reverse-mode differentiation.

Just enough machinery for this model: 2-D matrices, 1-D vectors and
0-d scalars, a couple dozen ops, and Adam. Ops record onto the
innermost active :class:`Tape`; ``backward`` replays it in reverse.
Recording is per-thread, so evaluation workers can run tape-free
forwards concurrently while a training thread records.
"""

import threading

import numpy as np

from . import kernels as K
from .errors import ContractError, DimensionError

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager disabling tape recording on this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class watch_kinks:
    """Record how close every relu input comes to its kink.

    Finite-difference checks are only valid where the function is
    smooth over the probed interval; ``min_margin`` after a forward
    pass tells the caller whether any relu sat too close to zero for
    the step size used.
    """

    def __enter__(self):
        self.margins = []
        _state.kink_watch = self.margins
        return self

    def __exit__(self, *exc):
        _state.kink_watch = None
        return False

    def min_margin(self):
        return min(self.margins) if self.margins else float("inf")


class Tensor:
    """A contiguous float64 array plus a gradient slot.

    ``grad`` stays ``None`` until backward (or ``zero_grads``) touches
    it; contributions accumulate additively.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    # operator sugar; all routing goes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return rsub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("inputs", "outputs", "bwd")

    def __init__(self, inputs, outputs, bwd):
        self.inputs = inputs
        self.outputs = outputs
        self.bwd = bwd


class Tape:
    """Execution-ordered op record; reverse traversal is backward."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


def _record(inputs, outputs, bwd):
    # outputs inherit requires_grad from inputs; skip dead branches
    if not (_grad_enabled() and _tape_stack()):
        return
    if not any(t.requires_grad for t in inputs):
        return
    for out in outputs:
        out.requires_grad = True
    _tape_stack()[-1].nodes.append(_Node(inputs, outputs, bwd))


def backward(loss, tape, seed=1.0):
    """Populate ``grad`` on every tensor ``loss`` depends on.

    ``loss`` must be scalar. Grad contributions add onto whatever is
    already in the slots, so zero first when starting a fresh batch.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    loss.accumulate_grad(np.asarray(seed, dtype=np.float64))
    for node in reversed(tape.nodes):
        gs = [o.grad for o in node.outputs]
        if all(g is None for g in gs):
            continue
        gs = [
            np.zeros_like(o.data) if g is None else g
            for o, g in zip(node.outputs, gs)
        ]
        contribs = node.bwd(*gs)
        for t, c in zip(node.inputs, contribs):
            if t.requires_grad and c is not None:
                t.accumulate_grad(c)


# ---------------------------------------------------------------------------
# ops


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def matmul(a, b):
    """Matrix/vector product following numpy ``@`` rules for 1-D/2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise DimensionError(f"matmul supports 1-D/2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ bd.T, ad.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g * bd, g * ad  # 1-D · 1-D

    _record([a, b], [out], bwd)
    return out


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        out = Tensor(a.data + b.data)
        _record([a, b], [out], lambda g: (g, g))
        return out
    # matrix + row-vector bias
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(a.data + b.data)
        _record([a, b], [out], lambda g: (g, g.sum(axis=0)))
        return out
    if b.ndim == 0:
        out = Tensor(a.data + b.data)
        _record([a, b], [out], lambda g: (g, np.asarray(g.sum())))
        return out
    raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and b.ndim != 0:
        raise DimensionError(f"sub shapes incompatible: {a.shape} - {b.shape}")
    out = Tensor(a.data - b.data)
    if b.ndim == 0 and a.ndim != 0:
        _record([a, b], [out], lambda g: (g, np.asarray(-g.sum())))
    else:
        _record([a, b], [out], lambda g: (g, -g))
    return out


def rsub(const, t):
    t = _as_tensor(t)
    c = float(const)
    out = Tensor(c - t.data)
    _record([t], [out], lambda g: (-g,))
    return out


def mul(a, b):
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        out = Tensor(a.data * c)
        _record([a], [out], lambda g: (g * c,))
        return out
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    _record([a, b], [out], lambda g: (g * bd, g * ad))
    return out


def scale_rows(mat, vec):
    """Row-wise scaling: ``out[i, j] = mat[i, j] * vec[i]``."""
    mat, vec = _as_tensor(mat), _as_tensor(vec)
    if mat.ndim != 2 or vec.ndim != 1 or mat.shape[0] != vec.shape[0]:
        raise DimensionError(f"scale_rows: {mat.shape} by {vec.shape}")
    md, vd = mat.data, vec.data
    out = Tensor(md * vd[:, None])
    _record([mat, vec], [out],
            lambda g: (g * vd[:, None], (g * md).sum(axis=1)))
    return out


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)
    _record([x], [out], lambda g: (g * (1.0 - y * y),))
    return out


def relu(x):
    x = _as_tensor(x)
    watch = getattr(_state, "kink_watch", None)
    if watch is not None:
        watch.append(float(np.min(np.abs(x.data))))
    y = np.maximum(x.data, 0.0)
    out = Tensor(y)
    mask = x.data > 0.0
    _record([x], [out], lambda g: (g * mask,))
    return out


def sigmoid(x):
    x = _as_tensor(x)
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0.0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    _record([x], [out], lambda g: (g * y * (1.0 - y),))
    return out


def softmax(v):
    """Stable softmax over a 1-D tensor."""
    v = _as_tensor(v)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionError(f"softmax needs a nonempty vector, got {v.shape}")
    y2 = K.softmax_fwd(np.ascontiguousarray(v.data[None, :]))
    out = Tensor(y2[0])
    _record([v], [out],
            lambda g: (K.softmax_bwd(y2, np.ascontiguousarray(g[None, :]))[0],))
    return out


def softmax_rows(m):
    """Row-wise stable softmax over a 2-D tensor."""
    m = _as_tensor(m)
    if m.ndim != 2 or m.shape[1] < 1:
        raise DimensionError(f"softmax_rows needs a 2-D tensor, got {m.shape}")
    y = K.softmax_fwd(np.ascontiguousarray(m.data))
    out = Tensor(y)
    _record([m], [out],
            lambda g: (K.softmax_bwd(y, np.ascontiguousarray(g)),))
    return out


def l2_normalize(v, eps=1e-12):
    """v / (||v|| + eps); the eps guard maps zero to zero."""
    v = _as_tensor(v)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionError(f"l2_normalize needs a nonempty vector, got {v.shape}")
    y2, norms = K.l2norm_rows_fwd(np.ascontiguousarray(v.data[None, :]), eps)
    xd = np.ascontiguousarray(v.data[None, :])
    out = Tensor(y2[0])
    _record([v], [out],
            lambda g: (K.l2norm_rows_bwd(xd, norms, eps,
                                         np.ascontiguousarray(g[None, :]))[0],))
    return out


def l2_normalize_rows(m, eps=1e-12):
    m = _as_tensor(m)
    if m.ndim != 2:
        raise DimensionError(f"l2_normalize_rows needs a 2-D tensor, got {m.shape}")
    xd = np.ascontiguousarray(m.data)
    y, norms = K.l2norm_rows_fwd(xd, eps)
    out = Tensor(y)
    _record([m], [out],
            lambda g: (K.l2norm_rows_bwd(xd, norms, eps,
                                         np.ascontiguousarray(g)),))
    return out


def transpose(m):
    m = _as_tensor(m)
    if m.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {m.shape}")
    out = Tensor(m.data.T)
    _record([m], [out], lambda g: (g.T,))
    return out


def concat(parts):
    """Join 1-D tensors end to end."""
    parts = [_as_tensor(p) for p in parts]
    if not parts or any(p.ndim != 1 for p in parts):
        raise DimensionError("concat takes a nonempty list of vectors")
    out = Tensor(np.concatenate([p.data for p in parts]))
    sizes = [p.shape[0] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offs[i]:offs[i + 1]] for i in range(len(parts)))

    _record(parts, [out], bwd)
    return out


def hstack(parts):
    """Join 2-D tensors along columns."""
    parts = [_as_tensor(p) for p in parts]
    if not parts or any(p.ndim != 2 for p in parts):
        raise DimensionError("hstack takes a nonempty list of matrices")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise DimensionError("hstack row counts differ")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]
    offs = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(parts)))

    _record(parts, [out], bwd)
    return out


def stack_rows(vecs):
    """Stack 1-D tensors into a matrix, one per row."""
    vecs = [_as_tensor(v) for v in vecs]
    if not vecs or any(v.ndim != 1 for v in vecs):
        raise DimensionError("stack_rows takes a nonempty list of vectors")
    out = Tensor(np.stack([v.data for v in vecs]))
    _record(vecs, [out], lambda g: tuple(g[i] for i in range(len(vecs))))
    return out


def row(m, i):
    """Copy of row ``i`` as a vector; grad scatters back into the row."""
    m = _as_tensor(m)
    if m.ndim != 2:
        raise DimensionError(f"row needs a 2-D tensor, got {m.shape}")
    i = int(i)
    out = Tensor(m.data[i].copy())

    def bwd(g):
        gm = np.zeros_like(m.data)
        gm[i] = g
        return (gm,)

    _record([m], [out], bwd)
    return out


def gather_rows(m, idx):
    """Rows of ``m`` at integer ``idx``; grads scatter-add (ties allowed)."""
    m = _as_tensor(m)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(m.data[idx])

    def bwd(g):
        gm = np.zeros_like(m.data)
        np.add.at(gm, idx, g)
        return (gm,)

    _record([m], [out], bwd)
    return out


def pick(v, i):
    """Scalar element ``v[i]``."""
    v = _as_tensor(v)
    if v.ndim != 1:
        raise DimensionError(f"pick needs a vector, got {v.shape}")
    i = int(i)
    out = Tensor(v.data[i])

    def bwd(g):
        gv = np.zeros_like(v.data)
        gv[i] = g
        return (gv,)

    _record([v], [out], bwd)
    return out


def tsum(x):
    """Sum of all entries, as a scalar tensor."""
    x = _as_tensor(x)
    out = Tensor(x.data.sum())
    _record([x], [out], lambda g: (np.full_like(x.data, float(g)),))
    return out


def sum_scalars(scalars):
    """Sum a list of scalar tensors into one scalar."""
    scalars = [_as_tensor(s) for s in scalars]
    if not scalars:
        raise DimensionError("sum_scalars needs at least one term")
    out = Tensor(np.asarray(sum(float(s.data) for s in scalars)))
    _record(scalars, [out], lambda g: tuple(g for _ in scalars))
    return out


def mean_scalars(scalars):
    return mul(sum_scalars(scalars), 1.0 / len(scalars))


def lstm_cell(z, c_prev):
    """Fused LSTM cell: preactivations ``z`` (4H) and previous cell state.

    Gate order along ``z`` is input, forget, candidate, output. Returns
    the new hidden and cell state.
    """
    z, c_prev = _as_tensor(z), _as_tensor(c_prev)
    if z.ndim != 1 or c_prev.ndim != 1 or z.shape[0] != 4 * c_prev.shape[0]:
        raise DimensionError(f"lstm_cell: z {z.shape} vs c {c_prev.shape}")
    zd = np.ascontiguousarray(z.data)
    cd = np.ascontiguousarray(c_prev.data)
    h_new, c_new, cache = K.lstm_gates_fwd(zd, cd)
    h_t, c_t = Tensor(h_new), Tensor(c_new)

    def bwd(dh, dc):
        dz, dc_prev = K.lstm_gates_bwd(cache, cd,
                                       np.ascontiguousarray(dh),
                                       np.ascontiguousarray(dc))
        return dz, dc_prev

    _record([z, c_prev], [h_t, c_t], bwd)
    return h_t, c_t


def pair_score(u, v, w):
    """Additive-tanh attention table: ``out[i,j] = w . tanh(u_i + v_j)``."""
    u, v, w = _as_tensor(u), _as_tensor(v), _as_tensor(w)
    if u.ndim != 2 or v.ndim != 2 or w.ndim != 1:
        raise DimensionError("pair_score wants two matrices and a vector")
    if u.shape[1] != v.shape[1] or u.shape[1] != w.shape[0]:
        raise DimensionError(
            f"pair_score dims disagree: {u.shape}, {v.shape}, {w.shape}")
    ud = np.ascontiguousarray(u.data)
    vd = np.ascontiguousarray(v.data)
    wd = np.ascontiguousarray(w.data)
    a, t3 = K.pair_score_fwd(ud, vd, wd)
    out = Tensor(a)
    _record([u, v, w], [out],
            lambda g: K.pair_score_bwd(t3, wd, np.ascontiguousarray(g)))
    return out


def edge_prop(s, nu, b, edges):
    """Sum gated typed-edge messages into each receiving node.

    ``edges`` is the K-by-K integer code matrix; code 0 (no relation)
    sends nothing, code ``e`` uses gate ``nu[e-1]`` and bias ``b[e-1]``.
    """
    s, nu, b = _as_tensor(s), _as_tensor(nu), _as_tensor(b)
    edges = np.ascontiguousarray(edges, dtype=np.int64)
    if s.ndim != 2 or nu.ndim != 1 or b.ndim != 2:
        raise DimensionError("edge_prop wants matrix, vector, matrix")
    if b.shape != (nu.shape[0], s.shape[1]) or edges.shape != (s.shape[0],) * 2:
        raise DimensionError(
            f"edge_prop dims disagree: {s.shape}, {nu.shape}, {b.shape}, {edges.shape}")
    sd = np.ascontiguousarray(s.data)
    nd = np.ascontiguousarray(nu.data)
    bd = np.ascontiguousarray(b.data)
    out = Tensor(K.edge_prop_fwd(sd, nd, bd, edges))
    _record([s, nu, b], [out],
            lambda g: K.edge_prop_bwd(sd, nd, bd, edges,
                                      np.ascontiguousarray(g)))
    return out


BLEND_EPS = 1e-9


def blend(inner, m_prev, lam, p_prev, p_new):
    """Accumulator-normalized update of per-node memory rows.

    ``out_k = (lam_k * inner_k + p_prev_k * m_prev_k) / p_new_k`` with a
    hard pass-through of ``m_prev_k`` when ``p_new_k`` is (near) zero or
    ``lam_k`` is exactly zero, so untouched nodes keep bit-identical
    memories.
    """
    inner, m_prev = _as_tensor(inner), _as_tensor(m_prev)
    lam, p_prev, p_new = _as_tensor(lam), _as_tensor(p_prev), _as_tensor(p_new)
    kk = inner.shape[0]
    if m_prev.shape != inner.shape or lam.shape != (kk,) \
            or p_prev.shape != (kk,) or p_new.shape != (kk,):
        raise DimensionError("blend operand shapes disagree")
    idat = np.ascontiguousarray(inner.data)
    mdat = np.ascontiguousarray(m_prev.data)
    ld = np.ascontiguousarray(lam.data)
    ppd = np.ascontiguousarray(p_prev.data)
    pnd = np.ascontiguousarray(p_new.data)
    y = K.blend_fwd(idat, mdat, ld, ppd, pnd, BLEND_EPS)
    out = Tensor(y)
    _record([inner, m_prev, lam, p_prev, p_new], [out],
            lambda g: K.blend_bwd(idat, mdat, ld, ppd, pnd, y,
                                  np.ascontiguousarray(g), BLEND_EPS))
    return out


# ---------------------------------------------------------------------------
# parameters and Adam


class ParameterStore:
    """Ordered name -> Tensor map with gradient and Adam moment slots."""

    def __init__(self):
        self._entries = {}
        self._m = {}
        self._v = {}
        self.step_count = 0

    def add(self, name, data):
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._entries[name] = t
        return t

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def zero_grads(self):
        for t in self._entries.values():
            t.grad = np.zeros_like(t.data)

    def scale_grads(self, factor):
        for t in self._entries.values():
            if t.grad is not None:
                t.grad *= factor

    def total_size(self):
        return sum(t.data.size for t in self._entries.values())


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps_adam=1e-8):
    """One in-place Adam update over every parameter in the store.

    Gradients are left untouched; the caller zeroes them between
    steps. A missing gradient slot is a contract violation.
    """
    for name, t in store.items():
        if t.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    store.step_count += 1
    step = store.step_count
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for name, t in store.items():
        m = store._m.get(name)
        if m is None:
            m = store._m[name] = np.zeros_like(t.data)
            store._v[name] = np.zeros_like(t.data)
        v = store._v[name]
        g = t.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps_adam)
