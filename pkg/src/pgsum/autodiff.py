"""Dense float64 tensors with tape-based reverse-mode differentiation.

This is deliberately minimal: it covers exactly the operations the
encoder/decoder/attention/copy machinery needs (matrix products, the usual
pointwise nonlinearities, masked softmax, slicing, gather/scatter) and a
finite-difference gradient checker. Everything is float64; at desk scale
correctness matters more than speed, and tight gradient-check tolerances
need the precision.

Recording is explicit: operations append backward rules to the innermost
active ``Tape`` (``with Tape() as tape: ...``). With no tape active, every
operation is a plain forward evaluation, which is what decoding and metric
code use.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

# Floor for log() inputs. The losses take logs of probabilities that can
# reach 0 exactly; the clamp keeps them finite.
LOG_EPS = 1e-10

# Cap for exp() inputs, just under the float64 overflow threshold (~709.8),
# so finite inputs can never produce inf.
EXP_MAX = 700.0


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``grad`` is populated (additively) by ``backward``; call ``zero_grad``
    between optimization steps. Values are treated as immutable once used
    in a recorded operation; the optimizer mutates parameter data only
    between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    """One recorded operation: output tensor, inputs, and its vjp rule."""

    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...],
                 vjp: Callable[[np.ndarray], tuple]):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of operations for one forward pass.

    Nodes are appended in execution order, so the list is already
    topologically sorted and reverse iteration is reverse-topological.
    One tape per training step; tapes are not shared across threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make_output(data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out._from_op = True
        tape.nodes.append(_Node(out, inputs, vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Each call contributes exactly one gradient of ``loss``; repeated calls
    without ``zero_grad`` therefore add up. Pass-local buffers are used for
    intermediate tensors so earlier passes cannot contaminate later ones.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if not loss._from_op and loss.requires_grad:
        # Loss is itself a leaf parameter; its own gradient is 1.
        _leaf_accumulate(loss, grads[id(loss)])
    for node in reversed(tape.nodes):
        gout = grads.get(id(node.out))
        if gout is None:
            continue
        for inp, g in zip(node.inputs, node.vjp(gout)):
            if g is None or not inp.requires_grad:
                continue
            if inp._from_op:
                buf = grads.get(id(inp))
                grads[id(inp)] = g if buf is None else buf + g
            else:
                _leaf_accumulate(inp, g)


def _leaf_accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.reshape(t.data.shape)


# ---------------------------------------------------------------------------
# Elementwise operations (equal shapes, or one single-element operand)
# ---------------------------------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    # Reduce a full-shape gradient back onto a single-element operand.
    if t.shape == g.shape:
        return g
    return np.sum(g).reshape(t.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    def vjp(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)
    return _make_output(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    def vjp(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)
    return _make_output(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    a_data, b_data = a.data, b.data
    def vjp(g):
        return _unbroadcast(g * b_data, a), _unbroadcast(g * a_data, b)
    return _make_output(a_data * b_data, (a, b), vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    def vjp(g):
        return ((1.0 - y * y) * g,)
    return _make_output(y, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) never overflows, so both where-branches stay finite.
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    def vjp(g):
        return (y * (1.0 - y) * g,)
    return _make_output(y, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    y = np.exp(np.minimum(x.data, EXP_MAX))
    capped = x.data >= EXP_MAX
    def vjp(g):
        return (np.where(capped, 0.0, y) * g,)
    return _make_output(y, (x,), vjp)


def log(x: Tensor) -> Tensor:
    """Natural log of the input clamped below at LOG_EPS."""
    clamped = np.maximum(x.data, LOG_EPS)
    below = x.data < LOG_EPS
    def vjp(g):
        return (np.where(below, 0.0, g / clamped),)
    return _make_output(np.log(clamped), (x,), vjp)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; the gradient follows the smaller operand (a on ties)."""
    _binary_shapes(a, b, "minimum")
    take_a = a.data <= b.data
    def vjp(g):
        return (_unbroadcast(np.where(take_a, g, 0.0), a),
                _unbroadcast(np.where(take_a, 0.0, g), b))
    return _make_output(np.minimum(a.data, b.data), (a, b), vjp)


_ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log,
                "add": add, "mul": mul, "sub": sub}


def elementwise(op: str, *inputs: Tensor) -> Tensor:
    """Dispatch by name; convenience wrapper over the pointwise functions."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# Linear algebra and structural operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's 1-D promotion rules.

    Supports 2D@2D, 1D@2D (row vector), 2D@1D (column vector) and 1D@1D
    (dot product, scalar output). Gradients are computed in the promoted
    2-D space and squeezed back.
    """
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    a2 = a.data if a.data.ndim == 2 else a.data.reshape(1, -1)
    b2 = b.data if b.data.ndim == 2 else b.data.reshape(-1, 1)
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out2 = a2 @ b2
    # Squeeze the promoted axes the way np.matmul would.
    out = out2
    if a.data.ndim == 1:
        out = out[0]
    if b.data.ndim == 1:
        out = out[..., 0] if a.data.ndim == 1 else out[:, 0]
    if a.data.ndim == 1 and b.data.ndim == 1:
        out = np.asarray(out).reshape(())

    def vjp(g):
        g2 = np.asarray(g, dtype=np.float64)
        if a.data.ndim == 1 and b.data.ndim == 1:
            g2 = g2.reshape(1, 1)
        elif a.data.ndim == 1:
            g2 = g2.reshape(1, -1)
        elif b.data.ndim == 1:
            g2 = g2.reshape(-1, 1)
        ga = (g2 @ b2.T).reshape(a.data.shape)
        gb = (a2.T @ g2).reshape(b.data.shape)
        return ga, gb

    return _make_output(np.asarray(out), (a, b), vjp)


def softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Probability vector over a 1-D logit vector, max-subtracted for stability.

    ``mask`` marks attendable positions with True; masked positions get
    probability exactly 0 and receive no gradient.
    """
    d = logits.data
    if d.ndim != 1:
        raise ShapeError(f"softmax expects a 1-D tensor, got shape {logits.shape}")
    if d.size < 1:
        raise ShapeError("softmax of an empty vector")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d.shape:
            raise ShapeError(f"softmax mask shape {mask.shape} != logits shape {d.shape}")
        if not mask.any():
            raise ValueError("softmax: all positions are masked")
    if mask is None:
        shifted = d - d.max()
        e = np.exp(shifted)
    else:
        finite = d[mask]
        shifted = d - finite.max()
        e = np.where(mask, np.exp(shifted, where=mask, out=np.zeros_like(d)), 0.0)
    y = e / e.sum()

    def vjp(g):
        gy = g * y
        gl = gy - y * gy.sum()
        if mask is not None:
            gl = np.where(mask, gl, 0.0)
        return (gl,)

    return _make_output(y, (logits,), vjp)


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.data.shape
    def vjp(g):
        return (np.full(shape, float(g)),)
    return _make_output(np.asarray(x.data.sum()), (x,), vjp)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    parts = list(parts)
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat expects 1-D tensors, got shape {p.shape}")
    sizes = [p.data.size for p in parts]
    offsets = np.cumsum([0] + sizes)
    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))
    return _make_output(np.concatenate([p.data for p in parts]), tuple(parts), vjp)


def narrow(x: Tensor, start: int, length: int) -> Tensor:
    """Contiguous 1-D slice [start, start+length)."""
    if x.data.ndim != 1:
        raise ShapeError(f"narrow expects a 1-D tensor, got shape {x.shape}")
    if start < 0 or start + length > x.data.size:
        raise ShapeError(f"narrow range [{start}, {start + length}) out of bounds "
                         f"for size {x.data.size}")
    size = x.data.size
    def vjp(g):
        full = np.zeros(size)
        full[start:start + length] = g
        return (full,)
    return _make_output(x.data[start:start + length].copy(), (x,), vjp)


def take_row(m: Tensor, i: int) -> Tensor:
    """Row i of a 2-D tensor (embedding lookup)."""
    if m.data.ndim != 2:
        raise ShapeError(f"take_row expects a 2-D tensor, got shape {m.shape}")
    if not 0 <= i < m.data.shape[0]:
        raise ShapeError(f"row {i} out of range for shape {m.shape}")
    shape = m.data.shape
    def vjp(g):
        full = np.zeros(shape)
        full[i] = g
        return (full,)
    return _make_output(m.data[i].copy(), (m,), vjp)


def take_rows(m: Tensor, indices: Sequence[int]) -> Tensor:
    """Rows of a 2-D tensor at ``indices`` (batched embedding lookup).

    One backward pass allocates a single full-shape gradient for ``m``
    regardless of how many rows were taken; repeated indices accumulate.
    """
    if m.data.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D tensor, got shape {m.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= m.data.shape[0]):
        raise ShapeError(f"row index out of range for shape {m.shape}")
    shape = m.data.shape
    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)
    return _make_output(m.data[idx].copy(), (m,), vjp)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors into a 2-D matrix."""
    rows = list(rows)
    if not rows:
        raise ShapeError("stack_rows of an empty sequence")
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != rows[0].data.shape:
            raise ShapeError("stack_rows expects equal-length 1-D tensors")
    def vjp(g):
        return tuple(g[i] for i in range(len(rows)))
    return _make_output(np.stack([r.data for r in rows]), tuple(rows), vjp)


def add_rows(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-k vector to every row of an [n, k] matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.size:
        raise ShapeError(f"add_rows: incompatible shapes {m.shape} and {v.shape}")
    def vjp(g):
        return g, g.sum(axis=0)
    return _make_output(m.data + v.data[None, :], (m, v), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    def vjp(g):
        return (g.reshape(old),)
    return _make_output(x.data.reshape(shape), (x,), vjp)


def gather(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Pick entries of a 1-D tensor at the given indices."""
    if x.data.ndim != 1:
        raise ShapeError(f"gather expects a 1-D tensor, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.size):
        raise ShapeError(f"gather index out of range for size {x.data.size}")
    size = x.data.size
    def vjp(g):
        full = np.zeros(size)
        np.add.at(full, idx, g)
        return (full,)
    return _make_output(x.data[idx], (x,), vjp)


def scatter_add(values: Tensor, indices: Sequence[int], size: int) -> Tensor:
    """Sum entries of ``values`` into a zero vector of ``size`` at ``indices``.

    Repeated indices accumulate, which is what folds attention mass on
    repeated source tokens onto a single id.
    """
    if values.data.ndim != 1:
        raise ShapeError(f"scatter_add expects 1-D values, got shape {values.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != values.data.shape:
        raise ShapeError(f"scatter_add: {idx.size} indices for {values.data.size} values")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ShapeError(f"scatter_add index out of range for size {size}")
    out = np.zeros(size)
    np.add.at(out, idx, values.data)
    def vjp(g):
        return (g[idx],)
    return _make_output(out, (values,), vjp)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def _named_tensors(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, dict):
        return list(params.items())
    if hasattr(params, "named"):
        return list(params.named())
    return list(params)


def grad_check(f: Callable[[], Tensor], params, epsilon: float = 1e-5,
               samples: int = 50, seed: int = 0) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must recompute the scalar loss from the current parameter values
    each call. One coordinate per parameter is always probed (so every
    named array is covered when ``samples`` allows); the rest are drawn
    uniformly over the remaining coordinates. Returns the max relative
    error, leaving the assertion to the caller. Parameter ``.grad`` buffers
    are clobbered.

    The error denominator floors at 1e-6: coordinates where both gradients
    are smaller than that are compared on an absolute scale, since central
    differences carry ~|f|*1e-16/(2*epsilon) of roundoff noise and a pure
    ratio would amplify it into false alarms.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    named = _named_tensors(params)
    rng = np.random.default_rng(seed)

    for _, t in named:
        t.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in named}

    coords: list[tuple[int, int]] = []
    for pi, (_, t) in enumerate(named):
        if t.data.size and len(coords) < samples:
            coords.append((pi, int(rng.integers(t.data.size))))
    sizes = np.array([t.data.size for _, t in named])
    total = int(sizes.sum())
    bounds = np.cumsum(sizes)
    while len(coords) < samples and total:
        flat = int(rng.integers(total))
        pi = int(np.searchsorted(bounds, flat, side="right"))
        coords.append((pi, flat - (int(bounds[pi - 1]) if pi else 0)))

    max_rel = 0.0
    for pi, flat in coords:
        name, t = named[pi]
        orig = t.data.flat[flat]
        t.data.flat[flat] = orig + epsilon
        f_plus = f().item()
        t.data.flat[flat] = orig - epsilon
        f_minus = f().item()
        t.data.flat[flat] = orig
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        a = float(analytic[name].flat[flat])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel
