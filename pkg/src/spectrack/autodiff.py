"""Dense float64 tensors with reverse-mode differentiation.

The op set is sized for a small token-sequence transformer: affine maps,
layer norm, softmax attention, two convolution flavours, and pointwise
nonlinearities. Everything runs in double precision so analytic gradients
can be held against central finite differences at tight tolerances.

Graphs are plain Python object graphs: each op produces a fresh Tensor that
remembers its parents and a vector-Jacobian closure. `backward` walks the
graph once per call and accumulates into `.grad` on every tensor that has
`requires_grad` set, so repeated calls without `zero_grads` sum gradients.
The engine is single-threaded by design; share nothing across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError

Array = np.ndarray

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """A float64 ndarray plus the bookkeeping reverse mode needs."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple["Tensor", ...] = ()
        self._vjp: Callable[[Array], tuple[Array | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def constant(values) -> Tensor:
    """A tensor that never tracks gradients (targets, masks, fixed geometry)."""
    return Tensor(values, requires_grad=False)


def _live(t: Tensor) -> bool:
    return t.requires_grad or t._vjp is not None


def _node(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(_live(p) for p in parents):
        out._parents = parents
        out._vjp = vjp
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _node(a.data + float(c), (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU with its analytic derivative."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def vjp(g: Array):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        return (g * d,)

    return _node(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "maximum")
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)
    return _node(out, (a, b), lambda g: (g * take_a, g * ~take_a))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "minimum")
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)
    return _node(out, (a, b), lambda g: (g * take_a, g * ~take_a))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast a 1-D bias over the last axis. The only broadcast in the engine."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit input {x.shape}")

    def vjp(g: Array):
        return (g, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _node(x.data + b.data, (x, b), vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add_bias(matmul(x, w), b)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy() if g.shape != shape else g,))


def mean_over_tokens(x: Tensor) -> Tensor:
    """Mean over axis 0 (the token axis), keeping the axis with length 1."""
    n = x.shape[0]
    out = x.data.mean(axis=0, keepdims=True)
    shape = x.shape

    def vjp(g: Array):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _node(out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not fit last dim of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g: Array):
        dbeta = g.reshape(-1, d).sum(axis=0)
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return (dx, dgamma, dbeta)

    return _node(out, (x, gamma, beta), vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: Array):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# shape surgery


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from exc
    return _node(out, (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: axes {axes} are not a permutation of {x.ndim} dims")
    inverse = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """A contiguous slice [start, start+length) along one axis."""
    n = x.shape[axis]
    if start < 0 or length < 0 or start + length > n:
        raise DimensionError(f"narrow: slice [{start}, {start + length}) exceeds axis of size {n}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    shape = x.shape

    def vjp(g: Array):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _node(x.data[index].copy(), (x,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ContractError("concat of an empty sequence")
    sizes = [p.shape[axis] for p in parts]
    for p in parts[1:]:
        if p.ndim != parts[0].ndim:
            raise DimensionError(f"concat: rank mismatch {parts[0].shape} vs {p.shape}")
        for ax in range(p.ndim):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise DimensionError(f"concat: shapes {parts[0].shape} and {p.shape} differ off-axis")
    out = np.concatenate([p.data for p in parts], axis=axis)

    def vjp(g: Array):
        grads = []
        offset = 0
        for s in sizes:
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + s)
            grads.append(g[tuple(index)])
            offset += s
        return tuple(grads)

    return _node(out, tuple(parts), vjp)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split: sizes {tuple(sizes)} do not cover axis of size {x.shape[axis]}")
    pieces = []
    offset = 0
    for s in sizes:
        pieces.append(narrow(x, axis, offset, s))
        offset += s
    return pieces


# ---------------------------------------------------------------------------
# attention and convolutions


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention over [tokens, d_model] inputs."""
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"attention: q/k/v shapes differ, {q.shape}/{k.shape}/{v.shape}")
    if q.ndim != 2:
        raise DimensionError(f"attention expects [tokens, d_model], got {q.shape}")
    n, d = q.shape
    if heads < 1 or d % heads != 0:
        raise DimensionError(f"attention: {heads} heads do not divide width {d}")
    dh = d // heads
    inv_sqrt = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(heads):
        qh = narrow(q, 1, h * dh, dh)
        kh = narrow(k, 1, h * dh, dh)
        vh = narrow(v, 1, h * dh, dh)
        scores = scale(matmul(qh, permute(kh, (1, 0))), inv_sqrt)
        outs.append(matmul(softmax(scores), vh))
    return concat(outs, axis=1)


_CONV2D_INDEX_CACHE: dict[tuple[int, int, int, int], tuple[Array, Array]] = {}


def _conv2d_indices(h: int, w: int, kh: int, kw: int) -> tuple[Array, Array]:
    key = (h, w, kh, kw)
    cached = _CONV2D_INDEX_CACHE.get(key)
    if cached is None:
        oy, ox = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        ky, kx = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
        ii = oy.reshape(-1, 1) + ky.reshape(1, -1)
        jj = ox.reshape(-1, 1) + kx.reshape(1, -1)
        cached = (ii, jj)
        _CONV2D_INDEX_CACHE[key] = cached
    return cached


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1, zero same-padded 2-D convolution on a [H, W, C_in] map.

    Kernel layout [kh, kw, C_in, C_out] with odd kh/kw. Implemented as an
    im2col matmul so forward and the weight vjp are single GEMMs.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected x [H,W,Cin] and w [kh,kw,Cin,Cout], got {x.shape}, {w.shape}")
    h, wd, cin = x.shape
    kh, kw, cin_w, cout = w.shape
    if cin_w != cin:
        raise DimensionError(f"conv2d: kernel C_in {cin_w} does not match input C_in {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: even kernel {kh}x{kw} has no symmetric same-padding")
    if b.shape != (cout,):
        raise DimensionError(f"conv2d: bias {b.shape} does not fit {cout} output channels")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    ii, jj = _conv2d_indices(h, wd, kh, kw)
    cols = xp[ii, jj, :].reshape(h * wd, kh * kw * cin)
    wm = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wm + b.data).reshape(h, wd, cout)

    def vjp(g: Array):
        gm = g.reshape(h * wd, cout)
        dw = (cols.T @ gm).reshape(kh, kw, cin, cout)
        db = gm.sum(axis=0)
        dcols = (gm @ wm.T).reshape(h * wd, kh * kw, cin)
        dxp = np.zeros_like(xp)
        np.add.at(dxp, (ii, jj), dcols)
        dx = dxp[ph: ph + h, pw: pw + wd, :]
        return (dx, dw, db)

    return _node(out, (x, w, b), vjp)


def depthwise_conv1d(x: Tensor, taps: Tensor) -> Tensor:
    """Per-channel 1-D convolution along the token axis, zero same-padded.

    x is [N, D], taps is [k, D] with odd k; channel d is filtered by taps[:, d].
    """
    if x.ndim != 2 or taps.ndim != 2:
        raise DimensionError(f"depthwise_conv1d: expected x [N,D] and taps [k,D], got {x.shape}, {taps.shape}")
    n, d = x.shape
    k, d_t = taps.shape
    if d_t != d:
        raise DimensionError(f"depthwise_conv1d: taps width {d_t} does not match {d} channels")
    if k % 2 == 0:
        raise DimensionError(f"depthwise_conv1d: even tap count {k} has no symmetric padding")
    p = k // 2
    xp = np.pad(x.data, ((p, p), (0, 0)))
    windows = np.stack([xp[i: i + n] for i in range(k)], axis=0)  # [k, N, D]
    out = np.einsum("knd,kd->nd", windows, taps.data)

    def vjp(g: Array):
        dtaps = np.einsum("knd,nd->kd", windows, g)
        dxp = np.zeros_like(xp)
        for i in range(k):
            dxp[i: i + n] += g * taps.data[i]
        return (dxp[p: p + n], dtaps)

    return _node(out, (x, taps), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering, iterative so graph depth is unbounded."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate `.grad` with d(loss)/d(tensor) for every requires_grad tensor.

    The loss must be scalar. Each call adds into existing `.grad` values;
    call `zero_grads` between optimisation steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    flows: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not _live(parent):
                continue
            key = id(parent)
            if key in flows:
                flows[key] = flows[key] + pg
            else:
                flows[key] = pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# finite-difference validation


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    checked: int
    flagged: int
    max_rel_error: float
    mean_rel_error: float
    tol: float
    passed: bool
    worst_index: tuple[int, ...] | None
    flagged_indices: list[tuple[int, ...]]

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (
            f"{state}: {self.checked} coords checked, {self.flagged} flagged as kinks, "
            f"max rel err {self.max_rel_error:.3e} (tol {self.tol:.1e})"
        )


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | Array,
    h: float = 1e-6,
    tol: float = 1e-4,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar-valued f against central differences.

    Coordinates where the one-sided differences disagree (a kink under the
    probe, e.g. relu or abs at zero) are flagged and excluded rather than
    failed. `sample` limits the check to that many seeded-random coordinates;
    by default every coordinate is probed.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check expects f to return a scalar Tensor")
    backward(out)
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad
    f0 = float(out.data.reshape(()))

    def probe(idx: tuple[int, ...], delta: float) -> float:
        pert = base.copy()
        pert[idx] += delta
        val = f(Tensor(pert))
        return float(val.data.reshape(()))

    all_indices = list(np.ndindex(base.shape)) if base.shape else [()]
    if sample is not None and sample < len(all_indices):
        gen = rng if rng is not None else np.random.default_rng(0)
        chosen = gen.choice(len(all_indices), size=sample, replace=False)
        indices = [all_indices[i] for i in sorted(chosen)]
    else:
        indices = all_indices

    checked = 0
    flagged: list[tuple[int, ...]] = []
    max_rel = 0.0
    sum_rel = 0.0
    worst: tuple[int, ...] | None = None
    for idx in indices:
        fp = probe(idx, +h)
        fm = probe(idx, -h)
        d_plus = (fp - f0) / h
        d_minus = (f0 - fm) / h
        margin = 1e-3 * max(1.0, abs(d_plus), abs(d_minus))
        if abs(d_plus - d_minus) > margin:
            flagged.append(idx)
            continue
        numeric = (fp - fm) / (2.0 * h)
        a = float(analytic[idx])
        rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-3)
        checked += 1
        sum_rel += rel
        if rel > max_rel:
            max_rel = rel
            worst = idx

    mean_rel = sum_rel / checked if checked else 0.0
    return GradCheckReport(
        checked=checked,
        flagged=len(flagged),
        max_rel_error=max_rel,
        mean_rel_error=mean_rel,
        tol=tol,
        passed=max_rel <= tol,
        worst_index=worst,
        flagged_indices=flagged,
    )


# ---------------------------------------------------------------------------
# checkpoints: flat float64 binary plus a JSON index


def save_checkpoint(arrays: Mapping[str, "Tensor | Array"], path: str | Path) -> tuple[Path, Path]:
    """Write name->array pairs as one flat float64 blob plus a JSON index.

    `path` may carry .bin/.json or no suffix; both files are derived from it.
    Returns (bin_path, json_path).
    """
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    json_path = path.with_suffix(".json")
    index: dict[str, dict] = {}
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, value in arrays.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(arr.tobytes())
            index[name] = {"shape": list(arr.shape), "offset": offset}
            offset += arr.nbytes
    json_path.write_text(json.dumps({"dtype": "float64", "order": "C", "tensors": index}, indent=1))
    return bin_path, json_path


def load_checkpoint(path: str | Path) -> dict[str, Array]:
    path = Path(path)
    json_path = path.with_suffix(".json")
    bin_path = path.with_suffix(".bin")
    meta = json.loads(json_path.read_text())
    if meta.get("dtype") != "float64":
        raise ContractError(f"checkpoint {json_path} has unsupported dtype {meta.get('dtype')!r}")
    blob = bin_path.read_bytes()
    out: dict[str, Array] = {}
    for name, entry in meta["tensors"].items():
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=np.float64, count=count, offset=int(entry["offset"]))
        out[name] = arr.reshape(shape).copy()
    return out
