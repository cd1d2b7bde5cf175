"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape machine: `Tape.leaf` binds arrays as graph leaves, primitive
wrappers (`matmul`, `relu`, `channel_norm`, ...) append nodes, and
`backward` walks the tape once to produce gradients for every trainable
leaf. Tapes are single-use; rebuild the graph each iteration.

Values are plain ``numpy.ndarray`` of dtype float64. Wrappers accept
either `Var` handles or raw arrays (raw arrays are lifted to constant
leaves). When no tape is involved the wrappers evaluate eagerly and keep
nothing, which is the cheap path for inference.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ShapeMismatchError(ValueError):
    """A primitive was applied to inputs with incompatible shapes."""

    def __init__(self, prim: str, detail: str):
        super().__init__(f"{prim}: {detail}")
        self.prim = prim


class TapeReuseError(RuntimeError):
    """backward() was called twice on the same tape."""


class Var:
    """Handle to a value, optionally attached to a tape node."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape: "Tape | None" = None, index: int = -1):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        where = "eager" if self.tape is None else f"node {self.index}"
        return f"Var(shape={self.value.shape}, {where})"


class _Node:
    __slots__ = ("prim", "parents", "value", "attrs", "name", "trainable")

    def __init__(self, prim, parents, value, attrs=None, name=None, trainable=False):
        self.prim = prim          # primitive name, None for leaves
        self.parents = parents    # tuple of node indices
        self.value = value
        self.attrs = attrs
        self.name = name
        self.trainable = trainable


class Tape:
    """Append-only record of one forward computation.

    Single-use: after `backward` consumes it the tape rejects further
    backward passes. Nodes are stored in topological order by
    construction.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._names: set[str] = set()

    def leaf(self, value, name: str | None = None, trainable: bool = False) -> Var:
        """Bind an array as a graph leaf.

        Trainable leaves must carry a unique name; `backward` keys the
        gradient map by these names.
        """
        if trainable:
            if name is None:
                raise ValueError("trainable leaves need a name")
            if name in self._names:
                raise ValueError(f"duplicate trainable leaf name {name!r}")
            self._names.add(name)
        arr = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node(None, (), arr, name=name, trainable=trainable))
        return Var(arr, self, len(self.nodes) - 1)

    def constant(self, value) -> Var:
        return self.leaf(value)

    def __len__(self):
        return len(self.nodes)


class _Primitive:
    __slots__ = ("name", "fwd", "vjp")

    def __init__(self, name, fwd, vjp):
        self.name = name
        self.fwd = fwd    # fwd(values, attrs) -> array
        self.vjp = vjp    # vjp(g, values, out, attrs) -> tuple of arrays/None


PRIMITIVES: dict[str, _Primitive] = {}


def _register(name: str, fwd, vjp):
    PRIMITIVES[name] = _Primitive(name, fwd, vjp)


def forward(prim: str, inputs: Sequence[Var | np.ndarray], tape: Tape | None, **attrs) -> Var:
    """Apply a registered primitive, recording a node when a tape is given."""
    p = PRIMITIVES.get(prim)
    if p is None:
        raise KeyError(f"unknown primitive {prim!r}")
    if tape is None:
        for x in inputs:
            if isinstance(x, Var) and x.tape is not None:
                tape = x.tape
                break
    lifted = []
    for x in inputs:
        if isinstance(x, Var):
            if x.tape is not None and tape is not None and x.tape is not tape:
                raise ValueError(f"{prim}: inputs live on different tapes")
            if x.tape is None and tape is not None:
                x = tape.leaf(x.value)
            lifted.append(x)
        else:
            arr = np.asarray(x, dtype=np.float64)
            lifted.append(tape.leaf(arr) if tape is not None else Var(arr))
    values = tuple(x.value for x in lifted)
    attrs = dict(attrs)
    out = p.fwd(values, attrs)
    if tape is None:
        return Var(out)
    tape.nodes.append(_Node(prim, tuple(x.index for x in lifted), out, attrs))
    return Var(out, tape, len(tape.nodes) - 1)


def backward(tape: Tape, root: Var | None = None) -> dict[str, np.ndarray]:
    """Run the reverse pass, returning gradients for every trainable leaf.

    The root defaults to the last node and must hold a single scalar.
    Gradients accumulate over fan-out; trainable leaves unreachable from
    the root get zero gradients. The tape is consumed.
    """
    if tape.consumed:
        raise TapeReuseError("tape already consumed by backward(); rebuild the graph")
    tape.consumed = True
    nodes = tape.nodes
    if not nodes:
        raise ValueError("empty tape")
    root_idx = root.index if root is not None else len(nodes) - 1
    root_node = nodes[root_idx]
    if root_node.value.size != 1:
        raise ValueError(
            f"backward root must be scalar, got shape {root_node.value.shape}"
        )
    adjoint: list[np.ndarray | None] = [None] * len(nodes)
    adjoint[root_idx] = np.ones_like(root_node.value)
    grads: dict[str, np.ndarray] = {}
    for i in range(root_idx, -1, -1):
        g = adjoint[i]
        adjoint[i] = None
        node = nodes[i]
        if g is None:
            continue
        if node.prim is None:
            if node.trainable:
                grads[node.name] = g.reshape(node.value.shape)
            continue
        p = PRIMITIVES[node.prim]
        parent_values = tuple(nodes[j].value for j in node.parents)
        parent_grads = p.vjp(g, parent_values, node.value, node.attrs)
        node.value = None  # release forward storage as the pass retires nodes
        for j, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            adjoint[j] = pg if adjoint[j] is None else adjoint[j] + pg
    for node in nodes:
        if node.trainable and node.name not in grads:
            grads[node.name] = np.zeros_like(node.value)
    return grads


def grad_check(f: Callable[[Var], Var], point: np.ndarray, step: float = 1e-6) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    Returns ``max_i |analytic_i - numeric_i| / max(1, |numeric_i|)``.
    Callers should keep `point` away from relu kinks; the difference
    quotient is meaningless across them.
    """
    point = np.asarray(point, dtype=np.float64)
    tape = Tape()
    x = tape.leaf(point, name="__gc_point", trainable=True)
    out = f(x)
    if out.value.size != 1:
        raise ValueError("grad_check target must be scalar-valued")
    analytic = backward(tape)["__gc_point"]

    def evaluate(p: np.ndarray) -> float:
        t = Tape()
        return float(f(t.leaf(p, name="__gc_point", trainable=True)).value)

    numeric = np.zeros_like(point)
    flat_num = numeric.ravel()
    flat_pt = point.ravel()
    for i in range(flat_pt.size):
        bump = np.zeros_like(flat_pt)
        bump[i] = step
        hi = evaluate((flat_pt + bump).reshape(point.shape))
        lo = evaluate((flat_pt - bump).reshape(point.shape))
        flat_num[i] = (hi - lo) / (2.0 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max())


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

def _need_2d(prim, a, label):
    if a.ndim != 2:
        raise ShapeMismatchError(prim, f"{label} must be 2-D, got shape {a.shape}")


def _matmul_fwd(vals, attrs):
    a, b = vals
    _need_2d("matmul", a, "left operand")
    _need_2d("matmul", b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", f"inner dims differ: {a.shape} @ {b.shape}")
    return a @ b


def _matmul_vjp(g, vals, out, attrs):
    a, b = vals
    return g @ b.T, a.T @ g


_register("matmul", _matmul_fwd, _matmul_vjp)


def _same_shape(prim, vals):
    a, b = vals
    if a.shape != b.shape:
        raise ShapeMismatchError(prim, f"operand shapes differ: {a.shape} vs {b.shape}")


_register(
    "add",
    lambda vals, attrs: (_same_shape("add", vals), vals[0] + vals[1])[1],
    lambda g, vals, out, attrs: (g, g),
)
_register(
    "sub",
    lambda vals, attrs: (_same_shape("sub", vals), vals[0] - vals[1])[1],
    lambda g, vals, out, attrs: (g, -g),
)
_register(
    "scale",
    lambda vals, attrs: vals[0] * attrs["c"],
    lambda g, vals, out, attrs: (g * attrs["c"],),
)
_register(
    "relu",
    lambda vals, attrs: np.maximum(vals[0], 0.0),
    # subgradient 0 at the kink
    lambda g, vals, out, attrs: (g * (vals[0] > 0.0),),
)
_register(
    "sin",
    lambda vals, attrs: np.sin(vals[0]),
    lambda g, vals, out, attrs: (g * np.cos(vals[0]),),
)
_register(
    "sigmoid",
    lambda vals, attrs: expit(vals[0]),
    lambda g, vals, out, attrs: (g * out * (1.0 - out),),
)
_register(
    "softplus",
    lambda vals, attrs: np.logaddexp(0.0, vals[0]),
    lambda g, vals, out, attrs: (g * expit(vals[0]),),
)
_register(
    "sum_of_squares",
    lambda vals, attrs: np.asarray((vals[0] * vals[0]).sum()),
    lambda g, vals, out, attrs: (2.0 * float(g) * vals[0],),
)
_register(
    "mean",
    lambda vals, attrs: np.asarray(vals[0].mean()),
    lambda g, vals, out, attrs: (np.full(vals[0].shape, float(g) / vals[0].size),),
)


def _broadcast_add_fwd(vals, attrs):
    x, b = vals
    _need_2d("broadcast_add", x, "matrix operand")
    if b.shape != (x.shape[1],):
        raise ShapeMismatchError(
            "broadcast_add", f"bias shape {b.shape} does not match columns of {x.shape}"
        )
    return x + b


_register(
    "broadcast_add",
    _broadcast_add_fwd,
    lambda g, vals, out, attrs: (g, g.sum(axis=0)),
)


def _channel_norm_fwd(vals, attrs):
    x, gamma, beta = vals
    _need_2d("channel_norm", x, "input")
    n, k = x.shape
    if n == 0:
        raise ShapeMismatchError("channel_norm", "empty batch (N == 0)")
    if gamma.shape != (k,) or beta.shape != (k,):
        raise ShapeMismatchError(
            "channel_norm",
            f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match {k} channels",
        )
    frozen = attrs.get("frozen")
    if frozen is None:
        mu = x.mean(axis=0)
        var = x.var(axis=0)  # biased: the batch is the whole coordinate set
    else:
        mu, var = frozen
    attrs["_stats"] = (mu, var)
    istd = 1.0 / np.sqrt(var + attrs["eps"])
    return (x - mu) * istd * gamma + beta


def _channel_norm_vjp(g, vals, out, attrs):
    x, gamma, beta = vals
    mu, var = attrs["_stats"]
    istd = 1.0 / np.sqrt(var + attrs["eps"])
    xhat = (x - mu) * istd
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    if attrs.get("frozen") is None:
        dx = istd * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
    else:
        # statistics are constants: the map is elementwise affine in x
        dx = dxhat * istd
    return dx, dgamma, dbeta


_register("channel_norm", _channel_norm_fwd, _channel_norm_vjp)


def _axis_stencil(n: int):
    """Length-2n bilinear sampling stencil for 2x upsampling.

    Uses the half-pixel (align-corners-false) convention with edge
    clamping: src = (dst + 0.5)/2 - 0.5.
    """
    dst = np.arange(2 * n)
    src = (dst + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.clip(i0 + 1, 0, n - 1)
    i0 = np.clip(i0, 0, n - 1)
    return i0, i1, 1.0 - frac, frac


def _bilinear_upsample_fwd(vals, attrs):
    (x,) = vals
    h, w = attrs["h"], attrs["w"]
    _need_2d("bilinear_upsample", x, "input")
    if x.shape[0] != h * w:
        raise ShapeMismatchError(
            "bilinear_upsample", f"rows {x.shape[0]} != h*w = {h}*{w}"
        )
    k = x.shape[1]
    img = x.reshape(h, w, k)
    r0, r1, rw0, rw1 = _axis_stencil(h)
    c0, c1, cw0, cw1 = _axis_stencil(w)
    rows = img[r0] * rw0[:, None, None] + img[r1] * rw1[:, None, None]
    out = rows[:, c0] * cw0[None, :, None] + rows[:, c1] * cw1[None, :, None]
    return out.reshape(4 * h * w, k)


def _bilinear_upsample_vjp(g, vals, out, attrs):
    h, w = attrs["h"], attrs["w"]
    k = vals[0].shape[1]
    gg = g.reshape(2 * h, 2 * w, k)
    r0, r1, rw0, rw1 = _axis_stencil(h)
    c0, c1, cw0, cw1 = _axis_stencil(w)
    cols = np.zeros((2 * h, w, k))
    np.add.at(cols, (slice(None), c0), gg * cw0[None, :, None])
    np.add.at(cols, (slice(None), c1), gg * cw1[None, :, None])
    dx = np.zeros((h, w, k))
    np.add.at(dx, r0, cols * rw0[:, None, None])
    np.add.at(dx, r1, cols * rw1[:, None, None])
    return (dx.reshape(h * w, k),)


_register("bilinear_upsample", _bilinear_upsample_fwd, _bilinear_upsample_vjp)


def _downsample_box_fwd(vals, attrs):
    (x,) = vals
    h, w, f = attrs["h"], attrs["w"], attrs["f"]
    _need_2d("downsample_box", x, "input")
    if x.shape[0] != h * w:
        raise ShapeMismatchError("downsample_box", f"rows {x.shape[0]} != h*w = {h}*{w}")
    if h % f or w % f:
        raise ShapeMismatchError("downsample_box", f"factor {f} does not divide {h}x{w}")
    k = x.shape[1]
    blocks = x.reshape(h // f, f, w // f, f, k)
    return blocks.mean(axis=(1, 3)).reshape((h // f) * (w // f), k)


def _downsample_box_vjp(g, vals, out, attrs):
    h, w, f = attrs["h"], attrs["w"], attrs["f"]
    k = vals[0].shape[1]
    gg = g.reshape(h // f, 1, w // f, 1, k) / (f * f)
    dx = np.broadcast_to(gg, (h // f, f, w // f, f, k))
    return (dx.reshape(h * w, k).copy(),)


_register("downsample_box", _downsample_box_fwd, _downsample_box_vjp)


def _radon_apply_fwd(vals, attrs):
    (x,) = vals
    op = attrs["op"]
    if x.size != op.height * op.width:
        raise ShapeMismatchError(
            "radon_apply",
            f"image with {x.size} entries does not match {op.height}x{op.width} operator",
        )
    return op.apply(x.reshape(op.height, op.width))


def _radon_apply_vjp(g, vals, out, attrs):
    op = attrs["op"]
    return (op.adjoint(g).reshape(vals[0].shape),)


_register("radon_apply", _radon_apply_fwd, _radon_apply_vjp)

_register(
    "reshape",
    lambda vals, attrs: vals[0].reshape(attrs["shape"]),
    lambda g, vals, out, attrs: (g.reshape(vals[0].shape),),
)
_register(
    "transpose",
    lambda vals, attrs: (_need_2d("transpose", vals[0], "input"), vals[0].T.copy())[1],
    lambda g, vals, out, attrs: (g.T,),
)


# ---------------------------------------------------------------------------
# wrappers
# ---------------------------------------------------------------------------

def matmul(a, b, tape=None):
    return forward("matmul", (a, b), tape)


def add(a, b, tape=None):
    return forward("add", (a, b), tape)


def sub(a, b, tape=None):
    return forward("sub", (a, b), tape)


def scale(a, c: float, tape=None):
    return forward("scale", (a,), tape, c=float(c))


def relu(a, tape=None):
    return forward("relu", (a,), tape)


def sin(a, tape=None):
    return forward("sin", (a,), tape)


def sigmoid(a, tape=None):
    return forward("sigmoid", (a,), tape)


def softplus(a, tape=None):
    return forward("softplus", (a,), tape)


def channel_norm(x, gamma, beta, eps: float = 1e-5, frozen=None, tape=None):
    """Per-channel standardization over the batch with learned affine.

    `frozen`, when given as ``(mu, var)``, bypasses the batch statistics
    and differentiates the map as an elementwise affine.
    """
    return forward("channel_norm", (x, gamma, beta), tape, eps=float(eps), frozen=frozen)


def sum_of_squares(a, tape=None):
    return forward("sum_of_squares", (a,), tape)


def mean(a, tape=None):
    return forward("mean", (a,), tape)


def broadcast_add(x, b, tape=None):
    return forward("broadcast_add", (x, b), tape)


def bilinear_upsample(x, h: int, w: int, tape=None):
    return forward("bilinear_upsample", (x,), tape, h=int(h), w=int(w))


def downsample_box(x, h: int, w: int, f: int, tape=None):
    return forward("downsample_box", (x,), tape, h=int(h), w=int(w), f=int(f))


def radon_apply(x, op, tape=None):
    return forward("radon_apply", (x,), tape, op=op)


def reshape(x, shape, tape=None):
    return forward("reshape", (x,), tape, shape=tuple(shape))


def transpose(x, tape=None):
    return forward("transpose", (x,), tape)
