"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward closure on the output
node; ``Tensor.backward()`` walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that
requires them.  Gradients of shared subexpressions add up.  All values
are 64-bit floats and nothing here touches global random state, so a
computation is bit-reproducible from its inputs.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

Array = np.ndarray

TRAIN = "train"
EVAL = "eval"


def _as_f64(x) -> Array:
    # canonical C layout: numpy reductions round differently per memory
    # order, which would leak array history into otherwise equal values
    return np.asarray(x, dtype=np.float64, order="C")


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------

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
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- graph traversal -----------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor with no differentiable inputs")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return mul(self, 1.0 / float(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
    return out


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum gradient g down to `shape` (the pre-broadcast operand shape)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data + b.data, (a, b))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            _accum(a, _unbroadcast(gy, a.data.shape))
            _accum(b, _unbroadcast(gy, b.data.shape))
        out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data * b.data, (a, b))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            _accum(a, _unbroadcast(gy * b.data, a.data.shape))
            _accum(b, _unbroadcast(gy * a.data, b.data.shape))
        out._backward = backward
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = _node(np.exp(x.data), (x,))
    if out.requires_grad:
        y = out.data
        def backward(gy: Array) -> None:
            _accum(x, gy * y)
        out._backward = backward
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    out = _node(np.log(x.data), (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            _accum(x, gy / x.data)
        out._backward = backward
    return out


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    root = np.sqrt(x.data)
    out = _node(root, (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            # subgradient 0 where the input is exactly 0
            safe = np.where(root > 0.0, root, 1.0)
            _accum(x, gy * np.where(root > 0.0, 0.5 / safe, 0.0))
        out._backward = backward
    return out


def absolute(x) -> Tensor:
    x = as_tensor(x)
    out = _node(np.abs(x.data), (x,))
    if out.requires_grad:
        sign = np.sign(x.data)
        def backward(gy: Array) -> None:
            _accum(x, gy * sign)
        out._backward = backward
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the range."""
    x = as_tensor(x)
    out = _node(np.clip(x.data, lo, hi), (x,))
    if out.requires_grad:
        inside = (x.data >= lo) & (x.data <= hi)
        def backward(gy: Array) -> None:
            _accum(x, gy * inside)
        out._backward = backward
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = _node(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        mask = x.data > 0.0
        def backward(gy: Array) -> None:
            _accum(x, gy * mask)
        out._backward = backward
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    y = np.where(d >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = _node(y, (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            _accum(x, gy * y * (1.0 - y))
        out._backward = backward
    return out


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid}


def apply_activation(kind: str, input) -> Tensor:
    """Dispatch to a named elementwise activation ('relu' or 'sigmoid')."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of "
                         f"{sorted(_ACTIVATIONS)}") from None
    return fn(input)


# -- reductions and shaping -------------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _node(x.data.sum(axis=axis, keepdims=keepdims), (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = gy
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
        out._backward = backward
    return out


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def sorted_sum(x, axis: int) -> Tensor:
    """Sum along `axis` with the summation order fixed by sorting.

    The float result is then invariant to any permutation of the
    elements along that axis, which keeps whole training runs
    bit-reproducible under class relabeling.  Used for every reduction
    over a class-indexed axis.
    """
    x = as_tensor(x)
    ordered = np.ascontiguousarray(np.sort(x.data, axis=axis))
    out = _node(ordered.sum(axis=axis), (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = np.expand_dims(gy, axis)
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
        out._backward = backward
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = _node(x.data.reshape(shape), (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            _accum(x, gy.reshape(x.data.shape))
        out._backward = backward
    return out


def gather_rows(x, indices) -> Tensor:
    """Pick rows x[indices]; duplicate indices accumulate gradient."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    out = _node(x.data[idx], (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = np.zeros_like(x.data)
            np.add.at(g, idx, gy)
            _accum(x, g)
        out._backward = backward
    return out


def gather_along_last(x, indices) -> Tensor:
    """x[i, indices[i]] for a 2-D tensor; returns a 1-D tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"gather_along_last expects 2-D input, got {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    rows = np.arange(x.data.shape[0])
    out = _node(x.data[rows, idx], (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = np.zeros_like(x.data)
            np.add.at(g, (rows, idx), gy)
            _accum(x, g)
        out._backward = backward
    return out


# -- softmax family ----------------------------------------------------------


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.sort(e, axis=axis).sum(axis=axis, keepdims=True)
    ls = shifted - np.log(denom)
    out = _node(ls, (x,))
    if out.requires_grad:
        soft = e / denom
        def backward(gy: Array) -> None:
            # total = sum_j gy_j; exact whenever gy is one-hot sparse
            total = np.sort(gy, axis=axis).sum(axis=axis, keepdims=True)
            _accum(x, gy - soft * total)
        out._backward = backward
    return out


def softmax(x, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


# -- neural-network layers ---------------------------------------------------


def linear(x, weight, bias) -> Tensor:
    """x @ weight.T + bias with weight of shape [d_out, d_in]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    single = x.ndim == 1
    xd = x.data[None, :] if single else x.data
    if xd.ndim != 2 or xd.shape[1] != weight.data.shape[1]:
        raise ValueError(f"linear: input {x.shape} does not match weight {weight.shape}")
    y = xd @ weight.data.T + bias.data
    out = _node(y[0] if single else y, (x, weight, bias))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = gy[None, :] if single else gy
            _accum(weight, g.T @ xd)
            _accum(bias, g.sum(axis=0))
            gx = g @ weight.data
            _accum(x, gx[0] if single else gx)
        out._backward = backward
    return out


def class_scores(x, weight, bias) -> Tensor:
    """Linear layer whose output axis indexes classes.

    Forward matches ``linear``; the input-gradient reduction over the
    class axis runs in sorted order so training stays bit-identical
    when class rows are permuted.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    single = x.ndim == 1
    xd = x.data[None, :] if single else x.data
    if xd.ndim != 2 or xd.shape[1] != weight.data.shape[1]:
        raise ValueError(f"class_scores: input {x.shape} does not match weight {weight.shape}")
    y = xd @ weight.data.T + bias.data
    out = _node(y[0] if single else y, (x, weight, bias))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = gy[None, :] if single else gy
            _accum(weight, g.T @ xd)
            _accum(bias, g.sum(axis=0))
            prods = g[:, :, None] * weight.data[None, :, :]   # [B, N, d_in]
            gx = np.sort(prods, axis=1).sum(axis=1)
            _accum(x, gx[0] if single else gx)
        out._backward = backward
    return out


def _promote_cl(x: Tensor) -> tuple[Array, bool]:
    if x.ndim == 2:
        return x.data[None, :, :], True
    if x.ndim == 3:
        return x.data, False
    raise ValueError(f"expected [channels, length] or [batch, channels, length], got {x.shape}")


def conv1d(x, kernels, bias, stride: int = 1) -> Tensor:
    """Valid (no padding) 1-D cross-correlation.

    x: [c_in, L] or [batch, c_in, L]; kernels: [c_out, c_in, k]; bias: [c_out].
    Output length is (L - k)//stride + 1.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    xd, single = _promote_cl(x)
    b, c_in, length = xd.shape
    c_out, kc_in, k = kernels.data.shape
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    if kc_in != c_in:
        raise ValueError(f"conv1d: input has {c_in} channels, kernels expect {kc_in}")
    if k > length:
        raise ValueError(f"conv1d: kernel {k} longer than input {length}")
    l_out = (length - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xd, k, axis=2)[:, :, ::stride, :]
    cols = windows.transpose(0, 2, 1, 3).reshape(b * l_out, c_in * k)
    kmat = kernels.data.reshape(c_out, c_in * k)
    y = (cols @ kmat.T).reshape(b, l_out, c_out).transpose(0, 2, 1) + bias.data[None, :, None]
    out = _node(y[0] if single else y, (x, kernels, bias))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = gy[None, :, :] if single else gy
            g2 = g.transpose(0, 2, 1).reshape(b * l_out, c_out)
            _accum(bias, g.sum(axis=(0, 2)))
            _accum(kernels, (g2.T @ cols).reshape(c_out, c_in, k))
            if x.requires_grad:
                gcols = (g2 @ kmat).reshape(b, l_out, c_in, k)
                if stride == 1:
                    # full correlation with flipped kernels, as one matmul
                    gpad = np.zeros((b, c_out, length + k - 1))
                    gpad[:, :, k - 1:k - 1 + l_out] = g
                    gwin = np.lib.stride_tricks.sliding_window_view(gpad, k, axis=2)
                    gw = gwin.transpose(0, 2, 1, 3).reshape(b * length, c_out * k)
                    kflip = kernels.data[:, :, ::-1].transpose(1, 0, 2).reshape(c_in, c_out * k)
                    gx = (gw @ kflip.T).reshape(b, length, c_in).transpose(0, 2, 1)
                else:
                    gx = np.zeros_like(xd)
                    pos = np.arange(l_out)[:, None] * stride + np.arange(k)[None, :]
                    np.add.at(gx, (np.arange(b)[:, None, None, None],
                                   np.arange(c_in)[None, None, :, None],
                                   pos[None, :, None, :]),
                              gcols.transpose(0, 1, 2, 3))
                _accum(x, gx[0] if single else gx)
        out._backward = backward
    return out


def maxpool1d(x, window: int, stride: int) -> Tensor:
    """1-D max pooling; gradient flows to the first maximal element."""
    x = as_tensor(x)
    xd, single = _promote_cl(x)
    b, c, length = xd.shape
    if window < 1 or stride < 1:
        raise ValueError("maxpool1d: window and stride must be >= 1")
    if window > length:
        raise ValueError(f"maxpool1d: window {window} longer than input {length}")
    l_out = (length - window) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xd, window, axis=2)[:, :, ::stride, :]
    arg = win.argmax(axis=3)   # first occurrence on ties
    y = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    out = _node(y[0] if single else y, (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = gy[None, :, :] if single else gy
            gx = np.zeros_like(xd)
            if stride >= window:
                # windows never overlap: write positions are unique
                used = l_out * stride
                region = gx[:, :, : used - (stride - window)]
                view = np.lib.stride_tricks.as_strided(
                    region, shape=(b, c, l_out, window),
                    strides=region.strides[:2] + (region.strides[2] * stride, region.strides[2]),
                )
                np.put_along_axis(view, arg[..., None], g[..., None], axis=3)
            else:
                pos = arg + np.arange(l_out)[None, None, :] * stride
                np.add.at(gx, (np.arange(b)[:, None, None],
                               np.arange(c)[None, :, None], pos), g)
            _accum(x, gx[0] if single else gx)
        out._backward = backward
    return out


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train masks and rescales by 1/(1-rate), eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"dropout mode must be '{TRAIN}' or '{EVAL}', got {mode!r}")
    x = as_tensor(x)
    if mode == EVAL or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.data.shape) >= rate) * scale
    out = _node(x.data * mask, (x,))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            _accum(x, gy * mask)
        out._backward = backward
    return out


# -- metric-learning primitives ----------------------------------------------


def pairwise_sqdist(x, centers) -> Tensor:
    """Squared Euclidean distances from each row of x to each center.

    x: [p] or [B, p]; centers: [N, p]; result: [N] or [B, N].  The
    gradient reduction over the center axis uses sorted-order
    summation (see sorted_sum).
    """
    x, centers = as_tensor(x), as_tensor(centers)
    single = x.ndim == 1
    xd = x.data[None, :] if single else x.data
    cd = centers.data
    if xd.shape[1] != cd.shape[1]:
        raise ValueError(f"pairwise_sqdist: dim mismatch {x.shape} vs {centers.shape}")
    diff = xd[:, None, :] - cd[None, :, :]      # [B, N, p]
    d2 = (diff * diff).sum(axis=2)
    out = _node(d2[0] if single else d2, (x, centers))
    if out.requires_grad:
        def backward(gy: Array) -> None:
            g = gy[None, :] if single else gy
            gx = 2.0 * np.sort(g[:, :, None] * diff, axis=1).sum(axis=1)
            _accum(x, gx[0] if single else gx)
            _accum(centers, -2.0 * np.einsum("bn,bnp->np", g, diff))
        out._backward = backward
    return out


def pairwise_l1_separation(centers) -> Tensor:
    """Sum of L1 distances over unordered row pairs, counted once each."""
    centers = as_tensor(centers)
    cd = centers.data
    if cd.ndim != 2:
        raise ValueError(f"pairwise_l1_separation expects [N, p], got {centers.shape}")
    n = cd.shape[0]
    ii, jj = np.triu_indices(n, k=1)
    per_pair = np.abs(cd[ii] - cd[jj]).sum(axis=1)
    total = np.sort(per_pair).sum() if per_pair.size else 0.0
    out = _node(total, (centers,))
    if out.requires_grad:
        # sign counts are small exact integers, so any accumulation
        # order gives the same float gradient
        sign = np.sign(cd[:, None, :] - cd[None, :, :])
        counts = sign.sum(axis=1)
        def backward(gy: Array) -> None:
            _accum(centers, float(gy) * counts)
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss node."""
    loss.backward()


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
