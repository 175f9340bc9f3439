"""Dense-tensor reverse-mode autodiff on a single recording tape.

Design notes that the rest of the package relies on:

* Tensors wrap numpy arrays and are immutable once they sit on the tape;
  only leaf gradients mutate, and only inside ``backward``.
* The tape has two modes. While suspended, ops run as plain numpy and
  append nothing, so a suspended forward allocates no autodiff state at
  all. That is what keeps pass-one of sub-cube training cheap.
* Gradients accumulate additively across backward calls and are cleared
  only by an explicit ``zero_grad``. Sub-cube training depends on this:
  each cube's backward adds into the same parameter gradients.
* The tape's MemoryMeter counts bytes the graph keeps alive: every node's
  output buffer plus any freshly allocated saved buffers. Arrays that are
  mere references to a parent's output or to a leaf are free, since they
  are alive regardless of the tape.
"""

from __future__ import annotations

import struct
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "MemoryMeter",
    "tape",
    "no_grad",
    "grad_meter",
    "record",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "matmul",
    "tsum",
    "reshape",
    "concat",
    "slice_view",
    "assemble",
    "detach",
    "backward",
    "write_tensor_blob",
    "read_tensor_blob",
]

_DTYPES = (np.float32, np.float64)


class MemoryMeter:
    """Byte counter with a high-water mark."""

    def __init__(self) -> None:
        self.live_bytes = 0
        self.peak_bytes = 0
        self.allocations = 0

    def alloc(self, nbytes: int) -> None:
        self.live_bytes += nbytes
        self.allocations += 1
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes

    def free(self, nbytes: int) -> None:
        self.live_bytes -= nbytes
        assert self.live_bytes >= 0, "memory meter went negative"

    def reset_peak(self) -> None:
        self.peak_bytes = self.live_bytes


# Gradient-buffer allocations are metered separately from tape bytes so the
# suspended-mode purity property (zero grad allocations) can be asserted.
grad_meter = MemoryMeter()


class _Node:
    __slots__ = ("parents", "backward_fn", "retained_bytes", "op")

    def __init__(self, parents, backward_fn, retained_bytes, op):
        self.parents = parents  # list of ("node", id) | ("leaf", Tensor)
        self.backward_fn = backward_fn
        self.retained_bytes = retained_bytes
        self.op = op


class Tape:
    """Ordered op records; node order is topological by construction."""

    RECORDING = "recording"
    SUSPENDED = "suspended"

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.mode = Tape.RECORDING
        self.meter = MemoryMeter()

    @property
    def recording(self) -> bool:
        return self.mode == Tape.RECORDING

    def push(self, node: _Node) -> int:
        assert self.recording, "attempted to record on a suspended tape"
        self.nodes.append(node)
        self.meter.alloc(node.retained_bytes)
        return len(self.nodes) - 1

    def clear(self) -> None:
        """Drop all nodes. Leaf gradients are untouched."""
        for n in self.nodes:
            self.meter.free(n.retained_bytes)
        self.nodes.clear()


_TAPE = Tape()


def tape() -> Tape:
    return _TAPE


class no_grad:
    """Context manager suspending the tape (forward without tracking)."""

    def __enter__(self):
        self._prev = _TAPE.mode
        _TAPE.mode = Tape.SUSPENDED
        return self

    def __exit__(self, *exc):
        _TAPE.mode = self._prev
        return False


class Tensor:
    """A dense array, optionally differentiable.

    ``node_id`` is set when the tensor was produced by a recorded op;
    leaves (parameters, constants promoted with requires_grad) have none.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None, node_id: Optional[int] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _ensure_grad(self) -> np.ndarray:
        assert self.requires_grad
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
            grad_meter.alloc(self.grad.nbytes)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def detach(self) -> "Tensor":
        return detach(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _tracked(t: Tensor) -> bool:
    """A tensor participates in differentiation if it is a graph node or a grad leaf."""
    return t.node_id is not None or t.requires_grad


def _parent_ref(t: Tensor):
    if t.node_id is not None:
        return ("node", t.node_id)
    return ("leaf", t)


def record(
    out_data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    extra_bytes: int = 0,
    op: str = "",
) -> Tensor:
    """Wrap a forward result, appending a tape node when appropriate.

    ``backward_fn(g)`` must return one gradient array (or None) per parent,
    in order. ``extra_bytes`` counts saved buffers that were freshly
    allocated for the backward; referencing parent data costs nothing.

    This is the extension point other modules use to register fused ops
    (convolutions, losses) with hand-derived backward rules.
    """
    if _TAPE.recording and any(_tracked(p) for p in parents):
        refs = [_parent_ref(p) for p in parents if _tracked(p)]
        # backward_fn returns grads aligned with the full parent list; keep a mask
        mask = [_tracked(p) for p in parents]

        def masked_backward(g, _fn=backward_fn, _mask=mask):
            grads = _fn(g)
            return [gr for gr, m in zip(grads, _mask) if m]

        node = _Node(refs, masked_backward, out_data.nbytes + extra_bytes, op)
        nid = _TAPE.push(node)
        return Tensor(out_data, requires_grad=True, node_id=nid)
    return Tensor(out_data)


# ---------------------------------------------------------------------------
# elementwise ops


def _broadcastable(a_shape, b_shape) -> bool:
    if len(a_shape) != len(b_shape):
        return False
    return all(x == y or x == 1 or y == 1 for x, y in zip(a_shape, b_shape))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape and not _broadcastable(a.data.shape, b.data.shape):
        raise ValueError(f"{op}: shapes {a.data.shape} and {b.data.shape} are not broadcastable")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_binary(a, b, "add")
    out = a.data + b.data
    return record(out, [a, b], lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)), op="add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_binary(a, b, "sub")
    out = a.data - b.data
    return record(out, [a, b], lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)), op="sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_binary(a, b, "mul")
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape))

    return record(out, [a, b], bwd, op="mul")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def bwd(g):
        return (g * (a.data > 0),)

    return record(out, [a], bwd, op="relu")


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic, used on and off the tape."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = stable_sigmoid(a.data)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return record(out, [a], bwd, op="sigmoid")


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return record(out, [a, b], bwd, op="matmul")


def tsum(a) -> Tensor:
    """Sum to a scalar; backward broadcasts the seed."""
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(), dtype=a.data.dtype).reshape(())

    def bwd(g):
        return (np.broadcast_to(np.asarray(g, dtype=a.data.dtype), a.data.shape).copy(),)

    return record(out, [a], bwd, op="sum")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return record(out, [a], bwd, op="reshape")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record(out, tensors, bwd, op="concat")


# ---------------------------------------------------------------------------
# structural ops: slicing and block assembly


def slice_view(t, offsets: Sequence[int], extents: Sequence[int]) -> Tensor:
    """Copy out a sub-block; backward scatters into the source region."""
    t = _as_tensor(t)
    if len(offsets) != t.data.ndim or len(extents) != t.data.ndim:
        raise ValueError(f"slice_view: need {t.data.ndim} offsets/extents, got {len(offsets)}/{len(extents)}")
    for d, (o, e, n) in enumerate(zip(offsets, extents, t.data.shape)):
        if o < 0 or e <= 0 or o + e > n:
            raise ValueError(f"slice_view: dimension {d} out of bounds (offset {o}, extent {e}, size {n})")
    sl = tuple(slice(o, o + e) for o, e in zip(offsets, extents))
    out = np.ascontiguousarray(t.data[sl])

    def bwd(g):
        full = np.zeros_like(t.data)
        full[sl] = g
        return (full,)

    return record(out, [t], bwd, op="slice")


def assemble(blocks: Sequence[Tensor], partition) -> Tensor:
    """Write each block at its partition offset; exact inverse of slicing.

    Blocks are ordered like ``partition.offsets`` and cover the volume
    exactly once each. Leading (batch, channel) dims are carried through.
    """
    if len(blocks) != len(partition.offsets):
        raise ValueError(
            f"assemble: got {len(blocks)} blocks for {len(partition.offsets)} partition cells"
        )
    blocks = [_as_tensor(b) for b in blocks]
    cube = tuple(partition.cube_extents)
    lead = blocks[0].data.shape[:-3]
    for i, b in enumerate(blocks):
        if b.data.shape[-3:] != cube:
            raise ValueError(f"assemble: block {i} has extents {b.data.shape[-3:]}, expected {cube}")
        if b.data.shape[:-3] != lead:
            raise ValueError(f"assemble: block {i} leading dims {b.data.shape[:-3]} differ from {lead}")
    out_shape = lead + tuple(partition.volume_extents)
    out = np.empty(out_shape, dtype=blocks[0].data.dtype)
    slices = []
    for (z, y, x), b in zip(partition.offsets, blocks):
        sl = (Ellipsis, slice(z, z + cube[0]), slice(y, y + cube[1]), slice(x, x + cube[2]))
        out[sl] = b.data
        slices.append(sl)

    def bwd(g):
        return tuple(np.ascontiguousarray(g[sl]) for sl in slices)

    return record(out, blocks, bwd, op="assemble")


def detach(t: Tensor) -> Tensor:
    """Same values, no gradient requirement, no tape node."""
    t = _as_tensor(t)
    return Tensor(t.data)


# ---------------------------------------------------------------------------
# backward


def backward(root: Tensor, seed) -> None:
    """Accumulate d(root)/d(leaf) * seed into every reachable leaf's grad."""
    if root.node_id is None:
        raise ValueError("backward: root tensor is not on the tape")
    seed = np.asarray(seed, dtype=root.data.dtype)
    if seed.shape != root.data.shape:
        raise ValueError(f"backward: seed shape {seed.shape} does not match root shape {root.data.shape}")

    nodes = _TAPE.nodes
    # reachable set, walking parent links
    reachable = set()
    stack = [root.node_id]
    while stack:
        nid = stack.pop()
        if nid in reachable:
            continue
        reachable.add(nid)
        for kind, ref in nodes[nid].parents:
            if kind == "node":
                stack.append(ref)

    grads: dict[int, np.ndarray] = {root.node_id: seed}
    for nid in sorted(reachable, reverse=True):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        parent_grads = node.backward_fn(g)
        for (kind, ref), pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if kind == "leaf":
                if ref.requires_grad:
                    ref._ensure_grad()
                    ref.grad += pg
            else:
                if ref in grads:
                    grads[ref] += pg
                else:
                    grads[ref] = pg


# ---------------------------------------------------------------------------
# tensor checkpoint blob: magic "VXT1", dtype code u8, rank u8,
# extents u64 little-endian, then raw row-major data.

_MAGIC = b"VXT1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_tensor_blob(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")
    head = _MAGIC + struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype("<" + arr.dtype.str[1:]).tobytes()


def read_tensor_blob(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one blob starting at ``offset``; returns (array, next_offset)."""
    if buf[offset : offset + 4] != _MAGIC:
        raise ValueError("tensor blob: bad magic")
    code, rank = struct.unpack_from("<BB", buf, offset + 4)
    if code not in _CODE_DTYPES:
        raise ValueError(f"tensor blob: unknown dtype code {code}")
    shape = struct.unpack_from(f"<{rank}Q", buf, offset + 6)
    dtype = _CODE_DTYPES[code]
    start = offset + 6 + 8 * rank
    count = int(np.prod(shape)) if rank else 1
    end = start + count * dtype.itemsize
    if end > len(buf):
        raise ValueError("tensor blob: truncated payload")
    arr = np.frombuffer(buf[start:end], dtype="<" + dtype.str[1:]).reshape(shape).astype(dtype)
    return arr, end
