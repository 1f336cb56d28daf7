"""Minimal tape-based reverse-mode autodiff over dense numpy buffers.

The op set is exactly what the compressor network needs: matmul (2-D and
batched 3-D), additions, scaling, token stack/slice/reshape, relu, row
softmax, and batch normalization. Each forward op records one node on the
active tape; `Tape.backward` replays the nodes in exact reverse order, so
gradients are bit-reproducible. Outputs are checked for NaN/Inf after every
op. Training graphs run in float32; the finite-difference checker runs the
same graph in float64, where central differences are trustworthy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NumericError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    """A dense array plus its slot in the recording tape."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data: np.ndarray, tape: "Tape"):
        self.data = data
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of ops for one forward computation.

    One tape belongs to one logical execution context; independent tapes may
    run in parallel but a single tape is never shared between writers.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._nodes: list[_Node] = []
        self._leaves: list[Tensor] = []

    def tensor(self, values: np.ndarray | float) -> Tensor:
        """Wrap an array as a leaf of the graph."""
        data = np.asarray(values, dtype=self.dtype)
        t = Tensor(data, self)
        self._leaves.append(t)
        return t

    def record(
        self,
        out_data: np.ndarray,
        parents: Sequence[Tensor],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> Tensor:
        """Append one op; `backward_fn(out_grad)` must return one gradient per parent.

        Public so that composite primitives (e.g. the pairwise training loss)
        can define their own analytic backward without widening the core op set.
        """
        if not np.all(np.isfinite(out_data)):
            raise NumericError("op produced non-finite values")
        out = Tensor(np.asarray(out_data, dtype=self.dtype), self)
        self._nodes.append(_Node(out, tuple(parents), backward_fn))
        return out

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of a scalar loss into every tensor's `.grad`.

        Grads are reset first, so calling backward twice on the same tape
        yields bit-identical results. Leaves that do not influence the loss
        end up with zero gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        for node in self._nodes:
            node.out.grad = None
        for leaf in self._leaves:
            leaf.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg
        for leaf in self._leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2-D x 2-D, 3-D x 2-D (shared rhs), or batched 3-D x 3-D."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes do not conform: {ad.shape} x {bd.shape}")
    if ad.ndim == 2 and bd.ndim == 2:
        def back(g):
            return g @ bd.T, ad.T @ g
    elif ad.ndim == 3 and bd.ndim == 2:
        def back(g):
            k, n = bd.shape
            return g @ bd.T, ad.reshape(-1, k).T @ g.reshape(-1, n)
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul batch sizes differ: {ad.shape} x {bd.shape}")
        def back(g):
            return g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g
    else:
        raise ShapeError(f"unsupported matmul ranks: {ad.shape} x {bd.shape}")
    return a.tape.record(ad @ bd, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may also be a 1-D bias broadcast over leading axes."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        return a.tape.record(ad + bd, (a, b), lambda g: (g, g))
    if bd.ndim == 1 and ad.ndim >= 1 and ad.shape[-1] == bd.shape[0]:
        def back(g):
            return g, g.reshape(-1, bd.shape[0]).sum(axis=0)
        return a.tape.record(ad + bd, (a, b), back)
    raise ShapeError(f"add shapes do not conform: {ad.shape} + {bd.shape}")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = a.tape.dtype.type(c)
    return a.tape.record(a.data * c, (a,), lambda g: (g * c,))


def concat_tokens(parts: Sequence[Tensor]) -> Tensor:
    """Stack rank-2 (batch, features) tensors into a (batch, tokens, features) sequence."""
    if not parts:
        raise ShapeError("concat_tokens needs at least one token")
    shapes = {p.data.shape for p in parts}
    if len(shapes) != 1 or parts[0].data.ndim != 2:
        raise ShapeError(f"concat_tokens needs equal (batch, features) shapes, got {sorted(shapes)}")
    out = np.stack([p.data for p in parts], axis=1)
    return parts[0].tape.record(out, tuple(parts), lambda g: tuple(g[:, i] for i in range(len(parts))))


def slice_token(t: Tensor, index: int) -> Tensor:
    """Extract token `index` from a (batch, tokens, features) sequence."""
    if t.data.ndim != 3:
        raise ShapeError(f"slice_token expects a rank-3 sequence, got shape {t.data.shape}")
    def back(g):
        full = np.zeros_like(t.data)
        full[:, index] = g
        return (full,)
    return t.tape.record(t.data[:, index].copy(), (t,), back)


def concat_features(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last (feature) axis; used to join attention heads."""
    if not parts:
        raise ShapeError("concat_features needs at least one part")
    widths = [p.data.shape[-1] for p in parts]
    bounds = np.cumsum([0] + widths)
    def back(g):
        return tuple(g[..., bounds[i]: bounds[i + 1]] for i in range(len(parts)))
    out = np.concatenate([p.data for p in parts], axis=-1)
    return parts[0].tape.record(out, tuple(parts), back)


def swap_last_axes(t: Tensor) -> Tensor:
    """Transpose the trailing two axes (for attention key transposition)."""
    return t.tape.record(t.data.swapaxes(-1, -2).copy(), (t,), lambda g: (g.swapaxes(-1, -2),))


def flatten_tokens(t: Tensor) -> Tensor:
    """(batch, tokens, features) -> (batch*tokens, features), for per-token layers."""
    b, n, f = t.data.shape
    return t.tape.record(t.data.reshape(b * n, f), (t,), lambda g: (g.reshape(b, n, f),))


def unflatten_tokens(t: Tensor, tokens: int) -> Tensor:
    """Inverse of `flatten_tokens`."""
    bn, f = t.data.shape
    if bn % tokens:
        raise ShapeError(f"cannot unflatten {bn} rows into {tokens} tokens")
    return t.tape.record(t.data.reshape(bn // tokens, tokens, f), (t,), lambda g: (g.reshape(bn, f),))


def relu(t: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at exactly 0 is 0."""
    out = np.maximum(t.data, 0)
    mask = out > 0
    return t.tape.record(out, (t,), lambda g: (g * mask,))


def softmax_rows(t: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    return t.tape.record(y, (t,), back)


def batchnorm(
    t: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    mode: str,
    eps: float = 1e-5,
    momentum: float = 0.1,
    update_running: bool = True,
) -> Tensor:
    """Batch normalization over a (batch, features) tensor.

    Train mode normalizes by the batch mean / biased batch variance and, when
    `update_running` is set, folds them into the running statistics with the
    given momentum. Infer mode uses the running statistics, so the output of
    a frozen model is independent of batch composition.
    """
    x = t.data
    if x.ndim != 2:
        raise ShapeError(f"batchnorm expects (batch, features), got shape {x.shape}")
    n = x.shape[0]
    if mode == "train":
        if n < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_running:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.astype(running_mean.dtype)
            running_var *= 1.0 - momentum
            running_var += momentum * var.astype(running_var.dtype)
    elif mode == "infer":
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x - mean) * inv
    out = gamma.data * xhat + beta.data

    if mode == "train":
        def back(g):
            dxhat = g * gamma.data
            dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        def back(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)
    return t.tape.record(out, (t, gamma, beta), back)


@dataclass
class FiniteDiffReport:
    """Max relative error between analytic and central-difference gradients."""

    per_param: dict[str, float]
    tol: float
    h: float
    max_rel_error: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.max_rel_error = max(self.per_param.values(), default=0.0)
        self.passed = self.max_rel_error < self.tol


def finite_diff_check(
    value_fn: Callable[[dict[str, np.ndarray]], float],
    grad_fn: Callable[[dict[str, np.ndarray]], dict[str, np.ndarray]],
    params: dict[str, np.ndarray],
    *,
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-10,
) -> FiniteDiffReport:
    """Compare analytic gradients against central finite differences.

    `value_fn` must be a deterministic map from the float64 parameter dict to
    a scalar; relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    Coordinates where analytic and numeric agree within `atol` absolutely
    count as exact: central differences carry rounding noise of roughly
    |f|*eps/(2h), so a truly zero gradient measures as ~1e-12 rather than 0,
    and dividing that by the 1e-8 floor would report a spurious mismatch.
    """
    params = {k: np.asarray(v, dtype=np.float64).copy() for k, v in params.items()}
    analytic = grad_fn(params)
    per_param: dict[str, float] = {}
    for name, p in params.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        worst = 0.0
        flat = p.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value_fn(params)
            flat[i] = orig - h
            down = value_fn(params)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            ai = a.ravel()[i]
            if abs(ai - numeric) <= atol:
                continue
            rel = abs(ai - numeric) / max(1e-8, abs(ai) + abs(numeric))
            worst = max(worst, rel)
        per_param[name] = worst
    return FiniteDiffReport(per_param=per_param, tol=tol, h=h)
