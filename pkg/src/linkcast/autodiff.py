"""Dense float64 tensors with taped reverse-mode differentiation.

Sized for small graph and recurrent models: 1-D/2-D arrays, a define-by-run
tape rebuilt on every forward pass, and gradients accumulated additively into
persistent parameter slots.  A tape and the tensors recorded on it belong to
one thread for the duration of a forward/backward pass; parameters may be
handed between threads but never mutated concurrently.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "matmul",
    "add",
    "mul",
    "affine",
    "scale",
    "concat",
    "row_softmax",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "dropout",
    "bce",
    "sum_all",
    "gather_rows",
    "segment_sum",
    "segment_softmax",
    "block_sum_cols",
    "expand_cols",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]

BCE_CLAMP = 1e-12


class Tensor:
    """A dense float64 array plus a gradient slot filled by ``Tape.backward``."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """Named trainable tensor whose grad persists and accumulates additively."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = str(name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


# Innermost tape records; ops run tapeless (forward only) when the stack is
# empty, which is how evaluation and finite-difference probes stay cheap.
_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives; reverse replay yields gradients."""

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._results: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if not _TAPES or _TAPES[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a non-innermost tape")
        _TAPES.pop()
        return False

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], pull: Callable) -> None:
        self._entries.append((out, parents, pull))
        self._results.add(id(out))

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, out: Tensor) -> None:
        """Accumulate d(out)/d(leaf) into ``.grad`` of every leaf on this tape.

        Leaves are parameters and input tensors (anything not produced by an
        op on this tape); intermediate gradients stay internal.  ``out`` must
        be a 1-element tensor produced on this tape.  Repeated calls without a
        grad reset keep adding, so two backwards double every gradient entry
        exactly.
        """
        if out.data.size != 1:
            raise ValueError(
                f"backward requires a 1-element tensor, got shape {out.data.shape}"
            )
        if id(out) not in self._results:
            raise ValueError("backward target was not produced on this tape")
        pending: dict[int, tuple[Tensor, np.ndarray]] = {
            id(out): (out, np.ones_like(out.data))
        }
        for res, parents, pull in reversed(self._entries):
            got = pending.pop(id(res), None)
            if got is None:
                continue
            g = got[1]
            for parent, pg in zip(parents, pull(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = (parent, pending[key][1] + pg)
                else:
                    pending[key] = (parent, pg)
        for node, g in pending.values():
            _accumulate(node, g)


def _accumulate(node: Tensor, g: np.ndarray) -> None:
    if node.grad is None:
        # copy: g may be (or alias) a buffer shared with another leaf
        node.grad = np.array(g)
    else:
        node.grad += g


def _scatter_rows(values: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum ``values`` rows into ``n_rows`` buckets; one-hot matmul beats ufunc.at."""
    onehot = np.zeros((n_rows, idx.size))
    onehot[idx, np.arange(idx.size)] = 1.0
    return onehot @ values


def _emit(op: str, data: np.ndarray, parents: tuple[Tensor, ...], pull: Callable) -> Tensor:
    _require_finite(op, data)
    out = Tensor(data)
    if _TAPES:
        _TAPES[-1]._record(out, parents, pull)
    return out


def _require_finite(op: str, arr: np.ndarray) -> None:
    # sum() is a cheap screen: NaN/inf in the data poisons it.  Confirm with
    # the exact check before raising so a merely huge-but-finite sum passes.
    if arr.size and not np.isfinite(arr.sum()):
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"{op}: non-finite values in result")


def _shape_error(op: str, *shapes) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,k)@(k,n) -> (m,n) or (m,k)@(k,) -> (m,)."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2) or ad.shape[1] != bd.shape[0]:
        raise _shape_error("matmul", ad.shape, bd.shape)
    out = ad @ bd

    if bd.ndim == 2:
        def pull(g):
            return g @ bd.T, ad.T @ g
    else:
        def pull(g):
            return np.outer(g, bd), ad.T @ g

    return _emit("matmul", out, (a, b), pull)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over a's rows."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        def pull(g):
            return g, g
    elif ad.ndim == 2 and (bd.shape == (ad.shape[1],) or bd.shape == (1, ad.shape[1])):
        def pull(g):
            return g, g.sum(axis=0).reshape(bd.shape)
    else:
        raise _shape_error("add", ad.shape, bd.shape)
    return _emit("add", ad + bd, (a, b), pull)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a row vector (cols,) or a column (rows,1)."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        def pull(g):
            return g * bd, g * ad
    elif ad.ndim == 2 and bd.shape == (ad.shape[1],):
        def pull(g):
            return g * bd, (g * ad).sum(axis=0)
    elif ad.ndim == 2 and bd.shape == (ad.shape[0], 1):
        def pull(g):
            return g * bd, (g * ad).sum(axis=1, keepdims=True)
    else:
        raise _shape_error("mul", ad.shape, bd.shape)
    return _emit("mul", ad * bd, (a, b), pull)


def affine(x: Tensor, w: Tensor, h: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Fused gate pre-activation x@w + h@u + b (recurrent layers hit this hard)."""
    xd, wd, hd, ud, bd = x.data, w.data, h.data, u.data, b.data
    ok = (
        xd.ndim == 2 and wd.ndim == 2 and hd.ndim == 2 and ud.ndim == 2
        and xd.shape[1] == wd.shape[0] and hd.shape[1] == ud.shape[0]
        and xd.shape[0] == hd.shape[0] and wd.shape[1] == ud.shape[1]
        and bd.shape == (wd.shape[1],)
    )
    if not ok:
        raise _shape_error("affine", xd.shape, wd.shape, hd.shape, ud.shape, bd.shape)
    out = xd @ wd + hd @ ud + bd

    def pull(g):
        return g @ wd.T, xd.T @ g, g @ ud.T, hd.T @ g, g.sum(axis=0)

    return _emit("affine", out, (x, w, h, u, b), pull)


def scale(a: Tensor, factor: float) -> Tensor:
    c = float(factor)

    def pull(g):
        return (g * c,)

    return _emit("scale", a.data * c, (a,), pull)


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or axis not in (0, 1):
        raise _shape_error("concat", ad.shape, bd.shape)
    other = 1 - axis
    if ad.shape[other] != bd.shape[other]:
        raise _shape_error("concat", ad.shape, bd.shape)
    split = ad.shape[axis]

    def pull(g):
        if axis == 1:
            return g[:, :split], g[:, split:]
        return g[:split], g[split:]

    return _emit("concat", np.concatenate([ad, bd], axis=axis), (a, b), pull)


def row_softmax(a: Tensor) -> Tensor:
    """Numerically stabilized softmax along the last axis of a 2-D tensor."""
    ad = a.data
    if ad.ndim != 2:
        raise _shape_error("row_softmax", ad.shape)
    shifted = ad - ad.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def pull(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _emit("row_softmax", out, (a,), pull)


def sigmoid(a: Tensor) -> Tensor:
    # sigma(x) = (1 + tanh(x/2)) / 2: one vectorized op, stable at both tails
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def pull(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (a,), pull)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def pull(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", out, (a,), pull)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    ad = a.data
    slope = np.where(ad > 0, 1.0, alpha)

    def pull(g):
        return (g * slope,)

    return _emit("leaky_relu", ad * slope, (a,), pull)


def dropout(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by an externally supplied mask so forward passes replay exactly.

    The mask carries the inverse keep-probability scaling; callers draw it from
    their own seeded generator.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.data.shape:
        raise _shape_error("dropout", a.data.shape, mask.shape)

    def pull(g):
        return (g * mask,)

    return _emit("dropout", a.data * mask, (a,), pull)


def bce(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0,1} targets.

    Scores are clamped to [BCE_CLAMP, 1-BCE_CLAMP]; the clamped region
    contributes zero gradient.
    """
    y = np.asarray(targets, dtype=np.float64)
    s = scores.data
    if s.shape != y.shape:
        raise _shape_error("bce", s.shape, y.shape)
    if s.size == 0:
        raise ValueError("bce: empty input")
    lo, hi = BCE_CLAMP, 1.0 - BCE_CLAMP
    sc = np.clip(s, lo, hi)
    loss = -(y * np.log(sc) + (1.0 - y) * np.log1p(-sc)).mean()
    inside = (s > lo) & (s < hi)
    n = s.size

    def pull(g):
        ds = np.where(inside, (sc - y) / (sc * (1.0 - sc)) / n, 0.0)
        return (g * ds,)

    return _emit("bce", np.asarray(loss), (scores,), pull)


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def pull(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum_all", np.asarray(a.data.sum()), (a,), pull)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows by integer index; backward scatter-adds into the source."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer) or idx.ndim != 1:
        raise ValueError(f"gather_rows: index must be a 1-D integer array, got {idx.dtype}")
    ad = a.data
    if ad.ndim != 2:
        raise _shape_error("gather_rows", ad.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= ad.shape[0]):
        raise ValueError(f"gather_rows: index out of range for {ad.shape[0]} rows")
    n_rows = ad.shape[0]

    def pull(g):
        return (_scatter_rows(g, idx, n_rows),)

    return _emit("gather_rows", ad[idx], (a,), pull)


def _check_segments(op: str, a: Tensor, segments: np.ndarray, n_segments: int) -> np.ndarray:
    seg = np.asarray(segments)
    if not np.issubdtype(seg.dtype, np.integer) or seg.ndim != 1:
        raise ValueError(f"{op}: segments must be a 1-D integer array")
    if a.data.ndim != 2 or a.data.shape[0] != seg.shape[0]:
        raise _shape_error(op, a.data.shape, seg.shape)
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise ValueError(f"{op}: segment id out of range for {n_segments} segments")
    return seg


def segment_sum(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows into ``n_segments`` buckets given per-row segment ids."""
    seg = _check_segments("segment_sum", a, segments, n_segments)
    out = _scatter_rows(a.data, seg, n_segments)

    def pull(g):
        return (g[seg],)

    return _emit("segment_sum", out, (a,), pull)


def segment_softmax(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Column-wise softmax within row segments (max-shifted for stability).

    Rows sharing a segment id compete; each column is normalized
    independently.  Empty segments simply contribute no rows.
    """
    seg = _check_segments("segment_softmax", a, segments, n_segments)
    ad = a.data
    cols = ad.shape[1]
    seg_max = np.full((n_segments, cols), -np.inf)
    np.maximum.at(seg_max, seg, ad)
    e = np.exp(ad - seg_max[seg])
    denom = _scatter_rows(e, seg, n_segments)
    out = e / denom[seg]

    def pull(g):
        weighted = _scatter_rows(out * g, seg, n_segments)
        return (out * (g - weighted[seg]),)

    return _emit("segment_softmax", out, (a,), pull)


def block_sum_cols(a: Tensor, n_blocks: int) -> Tensor:
    """Sum contiguous column blocks: (r, n_blocks*k) -> (r, n_blocks)."""
    ad = a.data
    if ad.ndim != 2 or n_blocks <= 0 or ad.shape[1] % n_blocks:
        raise _shape_error(f"block_sum_cols(n_blocks={n_blocks})", ad.shape)
    k = ad.shape[1] // n_blocks
    out = ad.reshape(ad.shape[0], n_blocks, k).sum(axis=2)

    def pull(g):
        return (np.repeat(g, k, axis=1),)

    return _emit("block_sum_cols", out, (a,), pull)


def expand_cols(a: Tensor, repeats: int) -> Tensor:
    """Repeat each column ``repeats`` times: (r, c) -> (r, c*repeats)."""
    ad = a.data
    if ad.ndim != 2 or repeats <= 0:
        raise _shape_error(f"expand_cols(repeats={repeats})", ad.shape)
    out = np.repeat(ad, repeats, axis=1)

    def pull(g):
        return (g.reshape(ad.shape[0], ad.shape[1], repeats).sum(axis=2),)

    return _emit("expand_cols", out, (a,), pull)


# ---------------------------------------------------------------------------
# validation harness


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-5,
    sample_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare taped gradients of ``f()`` against central finite differences.

    Returns the max over checked parameter entries of
    ``|analytic - numeric| / max(1, |analytic|)``.  ``f`` must be
    deterministic and must not manage tapes itself.  For large models,
    ``sample_per_param`` caps the entries probed per parameter (seeded via
    ``rng``); by default every entry is checked.
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
    if out.data.size != 1:
        raise ValueError("grad_check objective must be scalar")
    tape.backward(out)
    analytic = {id(p): p.grad.copy() for p in params}

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if sample_per_param is not None and n > sample_per_param:
            entries = rng.choice(n, size=sample_per_param, replace=False)
        else:
            entries = range(n)
        a_flat = analytic[id(p)].reshape(-1)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = _probe(f, p.name)
            flat[i] = orig - eps
            f_minus = _probe(f, p.name)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
            if err > worst:
                worst = err
    return worst


def _probe(f: Callable[[], Tensor], param_name: str) -> float:
    try:
        value = float(f().data)
    except FloatingPointError as exc:
        raise ValueError(
            f"objective became non-finite while perturbing {param_name!r}: {exc}"
        ) from exc
    if not math.isfinite(value):
        raise ValueError(f"objective became non-finite while perturbing {param_name!r}")
    return value


# ---------------------------------------------------------------------------
# checkpoint format: a version line, a metadata line, then a flat list of
# (name, shape, row-major float64 values) records.  Round-trips byte-exactly.

_CKPT_VERSION = b"linkcast-checkpoint-v1\n"


def save_checkpoint(path, arrays, meta: Mapping | None = None) -> None:
    """Write named float64 arrays (Parameters or a name->array mapping)."""
    if isinstance(arrays, Mapping):
        records = [(str(k), np.asarray(v, dtype=np.float64)) for k, v in arrays.items()]
    else:
        records = [(p.name, p.data) for p in arrays]
    names = [n for n, _ in records]
    if len(set(names)) != len(names):
        raise ValueError("checkpoint: duplicate parameter names")
    meta_line = json.dumps(dict(meta or {}), sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(_CKPT_VERSION)
        fh.write(meta_line)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as (ordered name->array dict, metadata dict)."""
    with open(path, "rb") as fh:
        version = fh.readline()
        if version != _CKPT_VERSION:
            raise ValueError(f"checkpoint: unsupported version tag {version!r}")
        meta = json.loads(fh.readline().decode())
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n_vals = int(np.prod(shape)) if ndim else 1
            buf = fh.read(8 * n_vals)
            if len(buf) != 8 * n_vals:
                raise ValueError(f"checkpoint: truncated values for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out, meta
