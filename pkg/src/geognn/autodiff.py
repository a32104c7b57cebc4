"""Reverse-mode differentiation on an explicit tape, float64 throughout.

Nodes are appended in evaluation order (so inputs always precede consumers)
and the backward sweep walks the list once in reverse. Primitives cover what
spherical message passing needs: matmul, elementwise arithmetic, row
slicing/gather with scatter-add backward, row normalization, clamp, the
trig/arc helpers, segmented softmax/sum over neighbor lists, dropout, and
fused classification/link losses.
"""

import numpy as np

from . import kernels
from .errors import NumericError, UnsupportedOpError, ValidationError


class Node:
    __slots__ = ("op", "inputs", "value", "backward", "meta")

    def __init__(self, op, inputs, value, backward=None, meta=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.backward = backward
        self.meta = meta


class Tensor:
    """Handle to one tape node; arithmetic operators append new nodes."""

    __slots__ = ("tape", "id")

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def value(self):
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.tape.nodes[self.id].value.shape

    def __add__(self, other):
        return self.tape.apply("add", self, other)

    def __sub__(self, other):
        return self.tape.apply("sub", self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return self.tape.apply("mul", self, other)
        return self.tape.apply("scale", self, c=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self.tape.apply("div", self, other)
        return self.tape.apply("scale", self, c=1.0 / float(other))


class Parameter:
    """Trainable array that persists across tapes; grad is filled by grad()."""

    def __init__(self, value, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.name = name


def _arr(x):
    return np.asarray(x, dtype=np.float64)


class Tape:
    def __init__(self):
        self.nodes = []
        self._param_leaves = {}  # id(Parameter) -> node id

    def _append(self, node):
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def constant(self, value):
        return self._append(Node("constant", (), _arr(value)))

    def leaf(self, param):
        """Register a Parameter once per tape; repeated calls share the node."""
        key = id(param)
        if key not in self._param_leaves:
            node = self._append(Node("parameter", (), param.value))
            self._param_leaves[key] = node.id
        return Tensor(self, self._param_leaves[key])

    def apply(self, op, *args, **kwargs):
        builder = _OPS.get(op)
        if builder is None:
            raise UnsupportedOpError(f"unsupported primitive: {op!r}")
        return builder(self, *args, **kwargs)

    def release(self):
        """Drop the graph now instead of waiting for a gc cycle pass.

        Backward closures hold Tensors that point back at this tape, so a
        finished tape is a reference cycle the allocator only reclaims on
        full collections; per-epoch callers release explicitly. Tensors
        into this tape are invalid afterwards.
        """
        self.nodes.clear()
        self._param_leaves.clear()


# each builder computes the primal immediately and registers a closure that
# maps (upstream grad, grads list) to accumulated input grads

def _acc(grads, idx, g):
    if grads[idx] is None:
        grads[idx] = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        grads[idx] = grads[idx] + g


def _op_add(tape, a, b):
    def backward(g, grads):
        _acc(grads, a.id, g)
        _acc(grads, b.id, g)

    return tape._append(Node("add", (a.id, b.id), a.value + b.value, backward))


def _op_sub(tape, a, b):
    def backward(g, grads):
        _acc(grads, a.id, g)
        _acc(grads, b.id, -g)

    return tape._append(Node("sub", (a.id, b.id), a.value - b.value, backward))


def _op_mul(tape, a, b):
    av, bv = a.value, b.value

    def backward(g, grads):
        _acc(grads, a.id, g * bv)
        _acc(grads, b.id, g * av)

    return tape._append(Node("mul", (a.id, b.id), av * bv, backward))


def _op_div(tape, a, b):
    av, bv = a.value, b.value
    out = av / bv

    def backward(g, grads):
        _acc(grads, a.id, g / bv)
        _acc(grads, b.id, -g * out / bv)

    return tape._append(Node("div", (a.id, b.id), out, backward))


def _op_scale(tape, a, c):
    def backward(g, grads):
        _acc(grads, a.id, g * c)

    return tape._append(Node("scale", (a.id,), a.value * c, backward))


def _op_matmul(tape, a, b, transpose_b=False):
    av, bv = a.value, b.value
    out = av @ (bv.T if transpose_b else bv)

    def backward(g, grads):
        if transpose_b:
            _acc(grads, a.id, g @ bv)
            _acc(grads, b.id, g.T @ av)
        else:
            _acc(grads, a.id, g @ bv.T)
            _acc(grads, b.id, av.T @ g)

    return tape._append(Node("matmul", (a.id, b.id), out, backward))


def _op_sum(tape, a):
    shape = a.value.shape

    def backward(g, grads):
        _acc(grads, a.id, np.full(shape, float(g)))

    return tape._append(Node("sum", (a.id,), np.float64(a.value.sum()), backward))


def _op_rowsum(tape, a):
    shape = a.value.shape

    def backward(g, grads):
        _acc(grads, a.id, np.broadcast_to(g[:, None], shape).copy())

    return tape._append(Node("rowsum", (a.id,), a.value.sum(axis=1), backward))


def _op_slice_rows(tape, a, index):
    """Row gather a[index]; backward scatter-adds into the source shape.

    Serves per-head weight slicing (contiguous index ranges) and edge-level
    gathers (anchor/neighbor indices) alike.
    """
    index = np.asarray(index, dtype=np.int64)
    shape = a.value.shape

    def backward(g, grads):
        out = np.zeros(shape)
        kernels.scatter_add_rows(out, index, np.ascontiguousarray(g))
        _acc(grads, a.id, out)

    return tape._append(Node("slice_rows", (a.id,), a.value[index], backward))


def _op_concat_cols(tape, parts):
    widths = [p.value.shape[1] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)
    ids = tuple(p.id for p in parts)

    def backward(g, grads):
        start = 0
        for pid, w in zip(ids, widths):
            _acc(grads, pid, g[:, start : start + w])
            start += w

    return tape._append(Node("concat_cols", ids, out, backward))


def _op_row_normalize(tape, a):
    """x/‖x‖ per row; rows with ‖x‖ < 1e-12 become e1 with zero gradient."""
    av = a.value
    norms = np.linalg.norm(av, axis=1)
    degenerate = norms < 1e-12
    safe = np.where(degenerate, 1.0, norms)
    out = av / safe[:, None]
    if degenerate.any():
        out = out.copy()
        out[degenerate] = 0.0
        out[degenerate, 0] = 1.0

    def backward(g, grads):
        dot = np.einsum("ij,ij->i", g, out)
        ga = (g - dot[:, None] * out) / safe[:, None]
        if degenerate.any():
            ga[degenerate] = 0.0
        _acc(grads, a.id, ga)

    return tape._append(
        Node(
            "row_normalize",
            (a.id,),
            out,
            backward,
            meta={"n_degenerate": int(degenerate.sum())},
        )
    )


def _op_rownorm(tape, a):
    """Per-row L2 norm; zero rows take the zero subgradient."""
    av = a.value
    norms = np.linalg.norm(av, axis=1)
    safe = np.where(norms < 1e-12, 1.0, norms)
    unit = av / safe[:, None]
    unit[norms < 1e-12] = 0.0

    def backward(g, grads):
        _acc(grads, a.id, g[:, None] * unit)

    return tape._append(Node("rownorm", (a.id,), norms, backward))


def _op_scale_rows(tape, a, s):
    """a[i, :] * s[i] with a (n,d) tensor and s (n,) tensor."""
    av, sv = a.value, s.value
    out = av * sv[:, None]

    def backward(g, grads):
        _acc(grads, a.id, g * sv[:, None])
        _acc(grads, s.id, np.einsum("ij,ij->i", g, av))

    return tape._append(Node("scale_rows", (a.id, s.id), out, backward))


def _op_clamp(tape, a, lo, hi):
    av = a.value
    inside = (av > lo) & (av < hi)  # gradient 0 at and outside the bounds

    def backward(g, grads):
        _acc(grads, a.id, g * inside)

    return tape._append(Node("clamp", (a.id,), np.clip(av, lo, hi), backward))


def _op_arccos(tape, a):
    av = a.value

    def backward(g, grads):
        _acc(grads, a.id, -g / np.sqrt(1.0 - av * av))

    return tape._append(Node("arccos", (a.id,), np.arccos(av), backward))


def _op_sin(tape, a):
    av = a.value

    def backward(g, grads):
        _acc(grads, a.id, g * np.cos(av))

    return tape._append(Node("sin", (a.id,), np.sin(av), backward))


def _op_cos(tape, a):
    av = a.value

    def backward(g, grads):
        _acc(grads, a.id, -g * np.sin(av))

    return tape._append(Node("cos", (a.id,), np.cos(av), backward))


def _op_exp(tape, a):
    out = np.exp(a.value)

    def backward(g, grads):
        _acc(grads, a.id, g * out)

    return tape._append(Node("exp", (a.id,), out, backward))


def _op_log(tape, a):
    av = a.value

    def backward(g, grads):
        _acc(grads, a.id, g / av)

    return tape._append(Node("log", (a.id,), np.log(av), backward))


def _op_arc_scale(tape, a):
    from . import sphere

    av = a.value

    def backward(g, grads):
        _acc(grads, a.id, g * sphere.arc_scale_derivative(av))

    return tape._append(Node("arc_scale", (a.id,), sphere.arc_scale(av), backward))


def _op_sinc(tape, a):
    from . import sphere

    av = a.value

    def backward(g, grads):
        _acc(grads, a.id, g * sphere.sinc_derivative(av))

    return tape._append(Node("sinc", (a.id,), sphere.sinc(av), backward))


def _op_segment_softmax(tape, a, offsets):
    offsets = np.asarray(offsets, dtype=np.int64)
    out = kernels.segment_softmax(np.ascontiguousarray(a.value), offsets)

    def backward(g, grads):
        _acc(
            grads,
            a.id,
            kernels.segment_softmax_backward(out, np.ascontiguousarray(g), offsets),
        )

    return tape._append(Node("segment_softmax", (a.id,), out, backward))


def _op_segment_sum(tape, a, offsets, anchors):
    offsets = np.asarray(offsets, dtype=np.int64)
    anchors = np.asarray(anchors, dtype=np.int64)
    out = kernels.segment_sum(np.ascontiguousarray(a.value), offsets)

    def backward(g, grads):
        _acc(grads, a.id, g[anchors])

    return tape._append(Node("segment_sum", (a.id,), out, backward))


def _op_dropout(tape, a, p, rng):
    """Inverted dropout: mask then scale by 1/(1-p). Caller skips it in eval."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(a.value.shape) >= p) / (1.0 - p)

    def backward(g, grads):
        _acc(grads, a.id, g * keep)

    return tape._append(Node("dropout", (a.id,), a.value * keep, backward))


def _op_cross_entropy(tape, logits, labels):
    """Mean softmax cross-entropy, fused for numerical stability."""
    z = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    expz = np.exp(z - zmax)
    denom = expz.sum(axis=1, keepdims=True)
    softmax = expz / denom
    lse = np.log(denom[:, 0]) + zmax[:, 0]
    loss = np.float64(np.mean(lse - z[np.arange(n), labels]))

    def backward(g, grads):
        ga = softmax.copy()
        ga[np.arange(n), labels] -= 1.0
        _acc(grads, logits.id, ga * (float(g) / n))

    return tape._append(Node("cross_entropy", (logits.id,), loss, backward))


def _op_bce_with_logits(tape, scores, targets):
    """Mean binary cross-entropy on raw scores, overflow-safe."""
    s = scores.value
    t = np.asarray(targets, dtype=np.float64)
    loss = np.float64(
        np.mean(np.maximum(s, 0.0) - s * t + np.log1p(np.exp(-np.abs(s))))
    )
    sigmoid = 1.0 / (1.0 + np.exp(-s))

    def backward(g, grads):
        _acc(grads, scores.id, (sigmoid - t) * (float(g) / s.size))

    return tape._append(Node("bce_with_logits", (scores.id,), loss, backward))


_OPS = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "div": _op_div,
    "scale": _op_scale,
    "matmul": _op_matmul,
    "sum": _op_sum,
    "rowsum": _op_rowsum,
    "slice_rows": _op_slice_rows,
    "concat_cols": _op_concat_cols,
    "row_normalize": _op_row_normalize,
    "rownorm": _op_rownorm,
    "scale_rows": _op_scale_rows,
    "clamp": _op_clamp,
    "arccos": _op_arccos,
    "sin": _op_sin,
    "cos": _op_cos,
    "exp": _op_exp,
    "log": _op_log,
    "arc_scale": _op_arc_scale,
    "sinc": _op_sinc,
    "segment_softmax": _op_segment_softmax,
    "segment_sum": _op_segment_sum,
    "dropout": _op_dropout,
    "cross_entropy": _op_cross_entropy,
    "bce_with_logits": _op_bce_with_logits,
}


def grad(loss, params):
    """Backward from a scalar loss; fills param.grad (zeros if unreached)."""
    if loss.value.shape != ():
        raise ValidationError(
            f"contract violation: loss must be scalar, got shape {loss.value.shape}"
        )
    tape = loss.tape
    grads = [None] * len(tape.nodes)
    grads[loss.id] = np.ones(())
    for nid in range(loss.id, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward is not None:
            node.backward(g, grads)
    for param in params:
        leaf = tape._param_leaves.get(id(param))
        if leaf is None or grads[leaf] is None:
            param.grad = np.zeros_like(param.value)
        else:
            param.grad = grads[leaf]
    return [param.grad for param in params]


def check_gradients(loss_builder, params, h=1e-5):
    """Max relative error between tape gradients and central differences.

    loss_builder must rebuild the loss deterministically from the current
    parameter values (fresh tape each call).
    """
    if not h > 0:
        raise ValidationError(f"h must be > 0, got {h}")
    loss = loss_builder()
    if not np.isfinite(loss.value):
        raise NumericError(f"loss is not finite: {loss.value}")
    grad(loss, params)
    analytic = [param.grad.copy() for param in params]
    loss.tape.release()

    def probe():
        built = loss_builder()
        value = float(built.value)
        built.tape.release()
        return value

    worst = 0.0
    for param, ga in zip(params, analytic):
        flat = param.value.reshape(-1)
        gflat = ga.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            up = probe()
            flat[idx] = keep - h
            down = probe()
            flat[idx] = keep
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss is not finite during finite differences")
            fd = (up - down) / (2.0 * h)
            err = abs(gflat[idx] - fd) / max(abs(gflat[idx]), abs(fd), 1e-12)
            worst = max(worst, err)
    return worst


class AdamState:
    def __init__(self, shape, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(param, state):
    """Bias-corrected Adam update in place; clears the gradient."""
    if param.grad is None:
        raise ValidationError("contract violation: gradient not populated")
    if param.grad.shape != param.value.shape:
        raise ValidationError(
            f"contract violation: grad shape {param.grad.shape} "
            f"!= value shape {param.value.shape}"
        )
    g = param.grad
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.grad = None


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.states = [
            AdamState(p.value.shape, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for p in self.params
        ]

    def step(self):
        for param, state in zip(self.params, self.states):
            adam_step(param, state)
