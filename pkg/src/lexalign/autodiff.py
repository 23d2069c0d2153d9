"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every op computes its value eagerly and records a replayable tape node
(forward closure + backward closure), so a built graph can be
re-evaluated after perturbing a leaf. That replay path is what the
finite-difference checker uses: it differentiates the graph exactly as
recorded, selection steps and all.
"""

from __future__ import annotations

import json
import math
import numpy as np


class NonFiniteError(RuntimeError):
    """Raised when an op produces NaN or Inf."""


def _as_f64(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > 0 and not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)
    return a


class Tensor:
    """One node of the compute tape.

    Leaves are created with parameter()/constant(); interior nodes carry a
    forward closure over their parents' arrays and a backward closure that
    maps (output grad, output value, parent values) to per-parent grads.
    """

    __slots__ = ("data", "parents", "grad", "name", "trainable", "op", "_fwd", "_bwd")

    def __init__(self, data, parents=(), op="leaf", name=None, trainable=False,
                 fwd=None, bwd=None):
        self.data = data
        self.parents = tuple(parents)
        self.grad = None
        self.name = name
        self.trainable = trainable
        self.op = op
        self._fwd = fwd
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = self.name if self.name else self.op
        return f"Tensor({tag}, shape={self.data.shape})"


def parameter(data, name=None):
    """Trainable leaf."""
    return Tensor(_as_f64(data), name=name, trainable=True)


def constant(data, name=None):
    """Non-trainable leaf."""
    return Tensor(_as_f64(data), name=name, trainable=False)


def value(t):
    """Python float of a scalar tensor."""
    return float(t.data)


def _node(op, parents, fwd, bwd):
    data = fwd(*[p.data for p in parents])
    if not np.isfinite(data).all():
        names = ", ".join(p.name or p.op for p in parents)
        raise NonFiniteError(f"non-finite output in op '{op}' (inputs: {names})")
    return Tensor(data, parents, op=op, fwd=fwd, bwd=bwd)


def _unbroadcast(g, shape):
    # collapse gradient of a broadcast operand back to its own shape
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    sa, sb = a.data.shape, b.data.shape

    def fwd(x, y):
        return x + y

    def bwd(g, out, x, y):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node("add", (a, b), fwd, bwd)


def sub(a, b):
    sa, sb = a.data.shape, b.data.shape

    def fwd(x, y):
        return x - y

    def bwd(g, out, x, y):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node("sub", (a, b), fwd, bwd)


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    sa, sb = a.data.shape, b.data.shape

    def fwd(x, y):
        return x * y

    def bwd(g, out, x, y):
        return _unbroadcast(g * y, sa), _unbroadcast(g * x, sb)

    return _node("mul", (a, b), fwd, bwd)


def scalar_mul(a, c):
    c = float(c)

    def fwd(x):
        return x * c

    def bwd(g, out, x):
        return (g * c,)

    return _node("scalar_mul", (a,), fwd, bwd)


def add_scalar(a, c):
    c = float(c)

    def fwd(x):
        return x + c

    def bwd(g, out, x):
        return (g,)

    return _node("add_scalar", (a,), fwd, bwd)


def matmul(a, b):
    """Matrix product for 1-D/2-D operands; 1-D @ 1-D is a dot product."""
    na, nb = a.data.ndim, b.data.ndim

    def fwd(x, y):
        return np.asarray(x @ y)

    def bwd(g, out, x, y):
        if na == 1 and nb == 1:
            return g * y, g * x
        if na == 1 and nb == 2:
            return g @ y.T, np.outer(x, g)
        if na == 2 and nb == 1:
            return np.outer(g, y), x.T @ g
        return g @ y.T, x.T @ g

    return _node("matmul", (a, b), fwd, bwd)


def mean(a, axis=None):
    def fwd(x):
        return np.asarray(x.mean(axis=axis))

    def bwd(g, out, x):
        if axis is None:
            return (np.full_like(x, 1.0 / x.size) * g,)
        n = x.shape[axis]
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)

    return _node("mean", (a,), fwd, bwd)


def tsum(a, axis=None):
    def fwd(x):
        return np.asarray(x.sum(axis=axis))

    def bwd(g, out, x):
        if axis is None:
            return (np.full_like(x, 1.0) * g,)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node("sum", (a,), fwd, bwd)


# ------------------------------------------------------------- nonlinearities

def tanh(a):
    def fwd(x):
        return np.tanh(x)

    def bwd(g, out, x):
        return (g * (1.0 - out * out),)

    return _node("tanh", (a,), fwd, bwd)


def sigmoid(a):
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    def bwd(g, out, x):
        return (g * out * (1.0 - out),)

    return _node("sigmoid", (a,), fwd, bwd)


def relu(a):
    def fwd(x):
        return np.maximum(x, 0.0)

    def bwd(g, out, x):
        return (g * (x > 0.0),)

    return _node("relu", (a,), fwd, bwd)


# ------------------------------------------------------------------ reshaping

def concat(tensors, axis=0):
    shapes = [t.data.shape for t in tensors]

    def fwd(*xs):
        return np.concatenate(xs, axis=axis)

    def bwd(g, out, *xs):
        sizes = [s[axis] for s in shapes]
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=axis))

    return _node("concat", tuple(tensors), fwd, bwd)


def split(a, sizes, axis=0):
    """Split into len(sizes) tensors along axis; sizes must sum to the dim."""
    if sum(sizes) != a.data.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not sum to dim {a.data.shape[axis]}")
    outs = []
    offset = 0
    for sz in sizes:
        lo, hi = offset, offset + sz

        def fwd(x, lo=lo, hi=hi):
            idx = [slice(None)] * x.ndim
            idx[axis] = slice(lo, hi)
            return np.ascontiguousarray(x[tuple(idx)])

        def bwd(g, out, x, lo=lo, hi=hi):
            gx = np.zeros_like(x)
            idx = [slice(None)] * x.ndim
            idx[axis] = slice(lo, hi)
            gx[tuple(idx)] = g
            return (gx,)

        outs.append(_node("split", (a,), fwd, bwd))
        offset += sz
    return outs


def stack_rows(tensors):
    """Stack equal-length 1-D tensors into a matrix, one per row."""

    def fwd(*xs):
        return np.stack(xs, axis=0)

    def bwd(g, out, *xs):
        return tuple(np.ascontiguousarray(g[i]) for i in range(len(xs)))

    return _node("stack_rows", tuple(tensors), fwd, bwd)


def take_rows(a, indices):
    """Row gather: out[i] = a[indices[i]]. Duplicate indices accumulate grads."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("take_rows wants a 1-D index list")

    def fwd(x):
        return np.ascontiguousarray(x[idx])

    def bwd(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node("take_rows", (a,), fwd, bwd)


def take_elements(a, rows, cols):
    """Element gather from a matrix: out[k] = a[rows[k], cols[k]]."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)

    def fwd(x):
        return np.ascontiguousarray(x[r, c])

    def bwd(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, (r, c), g)
        return (gx,)

    return _node("take_elements", (a,), fwd, bwd)


# -------------------------------------------------------------- norms, scores

def l2_normalize(a):
    """Unit-normalize a vector, or each row of a matrix. Zero norm is an error."""
    nd = a.data.ndim

    def fwd(x):
        if nd == 1:
            n = np.linalg.norm(x)
            if n == 0.0:
                raise ValueError("l2_normalize of a zero vector")
            return x / n
        n = np.linalg.norm(x, axis=1, keepdims=True)
        if (n == 0.0).any():
            raise ValueError("l2_normalize of a zero row")
        return x / n

    def bwd(g, out, x):
        if nd == 1:
            n = np.linalg.norm(x)
            return ((g - out * np.dot(g, out)) / n,)
        n = np.linalg.norm(x, axis=1, keepdims=True)
        inner = (g * out).sum(axis=1, keepdims=True)
        return ((g - out * inner) / n,)

    return _node("l2_normalize", (a,), fwd, bwd)


def euclidean_norm(a):
    """Scalar L2 norm of all entries. Subgradient 0 at the origin."""

    def fwd(x):
        return np.asarray(np.linalg.norm(x))

    def bwd(g, out, x):
        n = float(out)
        if n == 0.0:
            return (np.zeros_like(x),)
        return (g * x / n,)

    return _node("euclidean_norm", (a,), fwd, bwd)


def transpose(a):
    def fwd(x):
        return x.T.copy()

    def bwd(g, out, x):
        return (g.T,)

    return _node("transpose", (a,), fwd, bwd)


def rownorm(a):
    """Per-row L2 norms of a matrix. Subgradient 0 for zero rows."""

    def fwd(x):
        return np.linalg.norm(x, axis=1)

    def bwd(g, out, x):
        n = out.copy()
        n[n == 0.0] = 1.0
        gx = (g / n)[:, None] * x
        gx[out == 0.0] = 0.0
        return (gx,)

    return _node("rownorm", (a,), fwd, bwd)


def cosine_distance(a, b):
    """1 - cos(a, b) for 1-D vectors. Zero vectors are an error."""

    def fwd(x, y):
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx == 0.0 or ny == 0.0:
            raise ValueError("cosine_distance with a zero vector")
        return np.asarray(1.0 - np.dot(x, y) / (nx * ny))

    def bwd(g, out, x, y):
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        c = np.dot(x, y) / (nx * ny)
        gx = -(y / (nx * ny) - c * x / (nx * nx))
        gy = -(x / (nx * ny) - c * y / (ny * ny))
        return g * gx, g * gy

    return _node("cosine_distance", (a, b), fwd, bwd)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of row-softmax against integer labels."""
    y = np.asarray(labels, dtype=np.int64)

    def fwd(x):
        m = x.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
        picked = x[np.arange(x.shape[0]), y]
        return np.asarray((lse - picked).mean())

    def bwd(g, out, x):
        m = x.max(axis=1, keepdims=True)
        e = np.exp(x - m)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(x.shape[0]), y] -= 1.0
        return (g * p / x.shape[0],)

    return _node("softmax_cross_entropy", (logits,), fwd, bwd)


def grad_reverse(a):
    """Identity forward; backward multiplies the gradient by -1.

    The recorded replay function is the linearization the backward
    actually differentiates, anchored at the build-time value: x0 + (x0 -
    x). At build it returns x unchanged; under replay a perturbation
    arrives downstream sign-flipped, so the finite-difference checker
    measures the same -1 sensitivity the backward reports (the anchor is
    frozen exactly like a mined selection)."""
    x0 = a.data.copy()

    def fwd(x):
        return 2.0 * x0 - x

    def bwd(g, out, x):
        return (-g,)

    return _node("grad_reverse", (a,), fwd, bwd)


# ------------------------------------------------------------------- composites

def affine(x, w, b):
    return add(matmul(x, w), b)


def gru_cell(x, h, p):
    """One step of a gated recurrent cell (reset + update gates).

    p maps {w_r,u_r,b_r,w_z,u_z,b_z,w_h,u_h,b_h} to tensors. Works on single
    vectors or on (B, D) batches.
    """
    r = sigmoid(add(add(matmul(x, p["w_r"]), matmul(h, p["u_r"])), p["b_r"]))
    z = sigmoid(add(add(matmul(x, p["w_z"]), matmul(h, p["u_z"])), p["b_z"]))
    hh = tanh(add(add(matmul(x, p["w_h"]), matmul(mul(r, h), p["u_h"])), p["b_h"]))
    keep = add_scalar(scalar_mul(z, -1.0), 1.0)
    return add(mul(keep, h), mul(z, hh))


def gru_scan(mats, p, hidden=None):
    """Final hidden states for a batch of variable-length sequences.

    mats: list of (T_b, D) tensors. One shared scan over max length; shorter
    sequences freeze their hidden state once exhausted (padded inputs are
    blended out, so no gradient leaks through padding). Returns (B, H).
    """
    if not mats:
        raise ValueError("gru_scan needs at least one sequence")
    lens = [m.data.shape[0] for m in mats]
    if min(lens) < 1:
        raise ValueError("empty sequence")
    b = len(mats)
    tmax = max(lens)
    hdim = p["u_r"].data.shape[0] if hidden is None else hidden
    x_all = mats[0] if b == 1 else concat(mats, axis=0)
    offs = np.concatenate([[0], np.cumsum(lens)])
    h = constant(np.zeros((b, hdim)), name="h0")
    for t in range(tmax):
        idx = [int(offs[k] + min(t, lens[k] - 1)) for k in range(b)]
        x_t = take_rows(x_all, idx)
        h_new = gru_cell(x_t, h, p)
        alive = np.array([1.0 if t < lens[k] else 0.0 for k in range(b)])
        if alive.all():
            h = h_new
        else:
            col = alive[:, None]
            h = add(mul(h_new, constant(col)), mul(h, constant(1.0 - col)))
    return h


# ------------------------------------------------------------------- backward

def _topo(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into .grad for every node under loss.

    Visits each node exactly once, in reverse topological order; grads of
    nodes in this graph are reset first, so repeated calls do not leak.
    """
    if loss.data.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    order = _topo(loss)
    for t in order:
        t.grad = None
    loss.grad = np.ones((), dtype=np.float64)
    for t in reversed(order):
        if t._bwd is None or t.grad is None:
            continue
        gs = t._bwd(t.grad, t.data, *[p.data for p in t.parents])
        for p, g in zip(t.parents, gs):
            if g is None:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g
    return loss


def trainable_leaves(loss):
    """Trainable leaf tensors reachable from a loss node, in graph order."""
    return [t for t in _topo(loss) if t.trainable and t._fwd is None]


def fd_check(loss, params=None, eps=1e-4):
    """Max relative error between autodiff grads and central differences.

    Replays the recorded tape around each perturbed parameter element, so
    data-dependent selections made at build time stay frozen. Relative
    error is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    order = _topo(loss)
    if params is None:
        params = [t for t in order if t.trainable and t._fwd is None]
    backward(loss)

    in_graph = {id(t) for t in order}
    children = {id(t): [] for t in order}
    for t in order:
        for p in t.parents:
            children[id(p)].append(t)
    pos = {id(t): i for i, t in enumerate(order)}

    worst = 0.0
    for leaf in params:
        if id(leaf) not in in_graph:
            continue
        dep = set()
        queue = [leaf]
        while queue:
            n = queue.pop()
            for c in children[id(n)]:
                if id(c) not in dep:
                    dep.add(id(c))
                    queue.append(c)
        dep_nodes = sorted((t for t in order if id(t) in dep), key=lambda t: pos[id(t)])
        saved = [(t, t.data) for t in dep_nodes]
        base = float(loss.data)

        flat = leaf.data.ravel()
        gad = leaf.grad.ravel() if leaf.grad is not None else np.zeros(flat.size)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            fp = _replay(dep_nodes, loss, base)
            flat[i] = keep - eps
            fm = _replay(dep_nodes, loss, base)
            flat[i] = keep
            gfd = (fp - fm) / (2.0 * eps)
            rel = abs(gad[i] - gfd) / max(1e-8, abs(gad[i]) + abs(gfd))
            worst = max(worst, rel)
        for t, d in saved:
            t.data = d
    return worst


def _replay(dep_nodes, loss, base):
    for t in dep_nodes:
        t.data = t._fwd(*[p.data for p in t.parents])
    return float(loss.data) if dep_nodes else base


# ------------------------------------------------------------------- optimizer

class Adam:
    """Adam over a named parameter dict, first-moment 0.9 / second 0.999."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[k]
            v = self._v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ------------------------------------------------------------------ checkpoint

_CKPT_MAGIC = "lexalign-ckpt v1"


def _fmt_float(x):
    return repr(float(x))


def save_checkpoint(path, params, meta=None):
    """Write named tensors as text: header, optional meta JSON, one row per
    tensor (name, shape, row-major values). repr() floats round-trip exactly,
    so save/load is bit-exact."""
    lines = [_CKPT_MAGIC]
    if meta is not None:
        lines.append("meta\t" + json.dumps(meta, sort_keys=True))
    for name, t in params.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        dims = ",".join(str(d) for d in arr.shape)
        vals = " ".join(_fmt_float(v) for v in arr.ravel())
        lines.append(f"tensor\t{name}\t{dims}\t{vals}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint. Returns (tensors, meta)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _CKPT_MAGIC:
        raise ValueError(f"{path} is not a recognized checkpoint")
    meta = None
    tensors = {}
    for line in lines[1:]:
        if not line:
            continue
        kind, rest = line.split("\t", 1)
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            name, dims, vals = rest.split("\t")
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            flat = np.array([float(v) for v in vals.split(" ")] if vals else [],
                            dtype=np.float64)
            n = math.prod(shape) if shape else 1
            if flat.size != n:
                raise ValueError(f"tensor {name}: {flat.size} values for shape {shape}")
            tensors[name] = flat.reshape(shape)
        else:
            raise ValueError(f"unknown checkpoint line kind: {kind}")
    return tensors, meta
