"""Forward/backward kernels for every layer the network uses.

Activations are laid out as (batch, channels, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Function, Tensor, is_grad_enabled

BN_EPS = 1e-3
BN_MOMENTUM = 0.99
CCE_EPS = 1e-7


# ---------------------------------------------------------------------------
# shape helpers


def _pads(padding: str | int, k: int, dilation: int) -> tuple[int, int]:
    """(before, after) zero padding along one spatial axis."""
    if padding == "valid":
        return 0, 0
    if padding == "same":
        total = (k - 1) * dilation
        return total // 2, total - total // 2
    if isinstance(padding, int) and padding >= 0:
        return padding, padding
    raise ContractError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")


def conv_output_size(size: int, k: int, stride: int = 1, padding: str | int = "valid", dilation: int = 1) -> int:
    before, after = _pads(padding, k, dilation)
    effective = (k - 1) * dilation + 1
    return (size + before + after - effective) // stride + 1


def _check_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ContractError(f"{what} must be 4-D (N, C, H, W); got shape {x.shape}")


def _pad_input(x: np.ndarray, k: int, stride: int, padding, dilation: int):
    N, C, H, W = x.shape
    ph = _pads(padding, k, dilation)
    pw = ph
    effective = (k - 1) * dilation + 1
    Ho = (H + ph[0] + ph[1] - effective) // stride + 1
    Wo = (W + pw[0] + pw[1] - effective) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise DimensionError(
            f"input {H}x{W} is smaller than the effective kernel extent {effective} "
            f"(k={k}, dilation={dilation}, padding={padding!r})"
        )
    if ph == (0, 0):
        xp = x
    else:
        xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    return xp, Ho, Wo, ph


def _window(xp: np.ndarray, i: int, j: int, stride: int, dilation: int, Ho: int, Wo: int) -> np.ndarray:
    y0, x0 = i * dilation, j * dilation
    return xp[:, :, y0 : y0 + stride * (Ho - 1) + 1 : stride, x0 : x0 + stride * (Wo - 1) + 1 : stride]


def _window_slices(i: int, j: int, stride: int, dilation: int, Ho: int, Wo: int):
    y0, x0 = i * dilation, j * dilation
    return (
        slice(None),
        slice(None),
        slice(y0, y0 + stride * (Ho - 1) + 1, stride),
        slice(x0, x0 + stride * (Wo - 1) + 1, stride),
    )


def _unpad(g: np.ndarray, ph: tuple[int, int], H: int, W: int) -> np.ndarray:
    return g[:, :, ph[0] : ph[0] + H, ph[0] : ph[0] + W]


# ---------------------------------------------------------------------------
# convolutions


class Conv2d(Function):
    name = "conv2d"

    def __init__(self, stride: int = 1, padding="valid", dilation: int = 1):
        super().__init__()
        if stride < 1 or dilation < 1:
            raise ContractError("stride and dilation must be positive")
        self.stride, self.padding, self.dilation = stride, padding, dilation

    def forward(self, x, w, b):
        _check_4d(x, "conv2d input")
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ContractError(f"conv2d kernel must have shape (F, C, k, k); got {w.shape}")
        F, C, k, _ = w.shape
        if x.shape[1] != C:
            raise ContractError(f"conv2d channel axis mismatch: input has {x.shape[1]} channels, kernel expects {C}")
        if b.shape != (F,):
            raise ContractError(f"conv2d bias axis mismatch: expected ({F},), got {b.shape}")
        N, _, H, W = x.shape
        s, d = self.stride, self.dilation
        xp, Ho, Wo, ph = _pad_input(x, k, s, self.padding, d)
        cols = np.empty((C, k, k, N, Ho, Wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = _window(xp, i, j, s, d, Ho, Wo).transpose(1, 0, 2, 3)
        cols = cols.reshape(C * k * k, N * Ho * Wo)
        out = (w.reshape(F, -1) @ cols).reshape(F, N, Ho, Wo).transpose(1, 0, 2, 3)
        out = out + b.reshape(1, F, 1, 1)
        self.ctx = (cols, w, x.shape, xp.shape, ph, Ho, Wo)
        return out

    def backward(self, grad):
        cols, w, xshape, xpshape, ph, Ho, Wo = self.ctx
        F, C, k, _ = w.shape
        N, _, H, W = xshape
        s, d = self.stride, self.dilation
        g2 = grad.transpose(1, 0, 2, 3).reshape(F, -1)
        dw = (g2 @ cols.T).reshape(w.shape)
        db = grad.sum(axis=(0, 2, 3))
        dx = None
        if self.inputs[0].requires_grad:
            dcols = (w.reshape(F, -1).T @ g2).reshape(C, k, k, N, Ho, Wo)
            dxp = np.zeros(xpshape, dtype=grad.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[_window_slices(i, j, s, d, Ho, Wo)] += dcols[:, i, j].transpose(1, 0, 2, 3)
            dx = _unpad(dxp, ph, H, W)
        return dx, dw, db


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding="same", dilation: int = 1) -> Tensor:
    """Multi-filter 2-D convolution (cross-correlation) with optional dilation."""
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding, dilation=dilation)


class Conv1x1(Function):
    name = "conv1x1"

    def forward(self, x, w, b):
        _check_4d(x, "conv1x1 input")
        if w.ndim != 4 or w.shape[2:] != (1, 1):
            raise ContractError(f"conv1x1 kernel must have shape (F, C, 1, 1); got {w.shape}")
        F, C = w.shape[:2]
        if x.shape[1] != C:
            raise ContractError(f"conv1x1 channel axis mismatch: input has {x.shape[1]} channels, kernel expects {C}")
        if b.shape != (F,):
            raise ContractError(f"conv1x1 bias axis mismatch: expected ({F},), got {b.shape}")
        N, _, H, W = x.shape
        xf = x.reshape(N, C, H * W)
        self.ctx = (xf, w, x.shape)
        out = np.matmul(w.reshape(F, C), xf) + b.reshape(1, F, 1)
        return out.reshape(N, F, H, W)

    def backward(self, grad):
        xf, w, xshape = self.ctx
        F, C = w.shape[:2]
        N, _, H, W = xshape
        gf = grad.reshape(N, F, H * W)
        dw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        db = gf.sum(axis=(0, 2))
        dx = None
        if self.inputs[0].requires_grad:
            dx = np.matmul(w.reshape(F, C).T, gf).reshape(xshape)
        return dx, dw, db


def conv1x1(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Pointwise channel mixing; equals ``conv2d`` with a 1x1 kernel."""
    return Conv1x1.apply(x, kernel, bias)


class DepthwiseConv2d(Function):
    """One k x k spatial filter per input channel, no bias, no channel mixing."""

    name = "depthwise"

    def __init__(self, padding="same", dilation: int = 1):
        super().__init__()
        self.padding, self.dilation = padding, dilation

    def forward(self, x, w):
        _check_4d(x, "depthwise input")
        if w.ndim != 3 or w.shape[1] != w.shape[2]:
            raise ContractError(f"depthwise kernel must have shape (C, k, k); got {w.shape}")
        C, k, _ = w.shape
        if x.shape[1] != C:
            raise ContractError(
                f"depthwise channel axis mismatch: input has {x.shape[1]} channels, kernel has {C} planes"
            )
        d = self.dilation
        xp, Ho, Wo, ph = _pad_input(x, k, 1, self.padding, d)
        out = np.zeros((x.shape[0], C, Ho, Wo), dtype=np.result_type(x, w))
        for i in range(k):
            for j in range(k):
                out += w[:, i, j].reshape(1, C, 1, 1) * _window(xp, i, j, 1, d, Ho, Wo)
        self.ctx = (xp, w, x.shape, ph, Ho, Wo)
        return out

    def backward(self, grad):
        xp, w, xshape, ph, Ho, Wo = self.ctx
        C, k, _ = w.shape
        d = self.dilation
        dw = np.empty_like(w)
        need_dx = self.inputs[0].requires_grad
        dxp = np.zeros(xp.shape, dtype=grad.dtype) if need_dx else None
        for i in range(k):
            for j in range(k):
                win = _window(xp, i, j, 1, d, Ho, Wo)
                dw[:, i, j] = np.einsum("nchw,nchw->c", grad, win)
                if need_dx:
                    dxp[_window_slices(i, j, 1, d, Ho, Wo)] += grad * w[:, i, j].reshape(1, C, 1, 1)
        dx = _unpad(dxp, ph, xshape[2], xshape[3]) if need_dx else None
        return dx, dw


def depthwise(x: Tensor, kernel: Tensor, padding="same", dilation: int = 1) -> Tensor:
    return DepthwiseConv2d.apply(x, kernel, padding=padding, dilation=dilation)


def depthwise_conv2d(
    x: Tensor, depth_kernel: Tensor, point_kernel: Tensor, bias: Tensor, padding="same"
) -> Tensor:
    """Depthwise-separable convolution: per-channel k x k, then 1x1 mixing."""
    if depth_kernel.ndim != 3 or x.ndim != 4 or depth_kernel.shape[0] != x.shape[1]:
        raise ContractError(
            f"depthwise kernel planes {depth_kernel.shape[:1]} do not match input channels "
            f"{x.shape[1:2] if x.ndim == 4 else x.shape}"
        )
    return conv1x1(depthwise(x, depth_kernel, padding=padding), point_kernel, bias)


# ---------------------------------------------------------------------------
# elementwise, pooling, normalization


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return (grad * self.mask,)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


class MaxPool2d(Function):
    name = "maxpool"

    def __init__(self, window: int = 2):
        super().__init__()
        self.window = window

    def forward(self, x):
        _check_4d(x, "max_pool2d input")
        p = self.window
        N, C, H, W = x.shape
        if H < p or W < p:
            raise DimensionError(f"max_pool2d needs spatial extent >= {p}; got {H}x{W}")
        Ho, Wo = H // p, W // p
        win = (
            x[:, :, : Ho * p, : Wo * p]
            .reshape(N, C, Ho, p, Wo, p)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(N, C, Ho, Wo, p * p)
        )
        # argmax returns the first maximal element; window flattening is row-major
        idx = win.argmax(axis=-1)
        self.ctx = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        idx, xshape = self.ctx
        p = self.window
        N, C, H, W = xshape
        Ho, Wo = grad.shape[2:]
        onehot = np.zeros((N, C, Ho, Wo, p * p), dtype=grad.dtype)
        np.put_along_axis(onehot, idx[..., None], grad[..., None], axis=-1)
        dx = np.zeros(xshape, dtype=grad.dtype)
        dx[:, :, : Ho * p, : Wo * p] = (
            onehot.reshape(N, C, Ho, Wo, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho * p, Wo * p)
        )
        return (dx,)


def max_pool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride == window); odd trailing rows/columns are dropped."""
    return MaxPool2d.apply(x, window=window)


class GlobalAvgPool(Function):
    name = "gap"

    def forward(self, x):
        _check_4d(x, "global_avg_pool input")
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        N, C, H, W = self.shape
        return (np.broadcast_to(grad[:, :, None, None] / (H * W), self.shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def create(cls, channels: int, dtype=np.float64, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


class BatchNorm(Function):
    name = "batchnorm"

    def __init__(self, train: bool, eps: float, mean=None, var=None):
        super().__init__()
        self.train, self.eps = train, eps
        self.run_mean, self.run_var = mean, var

    def forward(self, x, gamma, beta):
        shape = (1, -1, 1, 1)
        if self.train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
        else:
            mean, var = self.run_mean.astype(x.dtype), self.run_var.astype(x.dtype)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        self.ctx = (xhat, inv_std, gamma)
        self.batch_mean, self.batch_var = mean, var
        return gamma.reshape(shape) * xhat + beta.reshape(shape)

    def backward(self, grad):
        xhat, inv_std, gamma = self.ctx
        shape = (1, -1, 1, 1)
        dgamma = (grad * xhat).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        dxhat = grad * gamma.reshape(shape)
        if self.train:
            m = grad.shape[0] * grad.shape[2] * grad.shape[3]
            dx = (
                inv_std.reshape(shape)
                / m
                * (
                    m * dxhat
                    - dxhat.sum(axis=(0, 2, 3)).reshape(shape)
                    - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
                )
            )
        else:
            dx = dxhat * inv_std.reshape(shape)
        return dx, dgamma, dbeta


def batch_norm(x: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel normalization; train mode also updates running statistics."""
    if mode not in ("train", "infer"):
        raise ContractError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ContractError(
            f"batch_norm channel axis mismatch: state has {state.channels} channels, input shape {x.shape}"
        )
    train = mode == "train"
    out, fn = BatchNorm.call(
        x, state.gamma, state.beta, train=train, eps=state.eps, mean=state.running_mean, var=state.running_var
    )
    if train:
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * fn.batch_mean
        state.running_var[...] = m * state.running_var + (1 - m) * fn.batch_var
    return out


# ---------------------------------------------------------------------------
# structural ops


class Concat(Function):
    name = "concat"

    def forward(self, *xs):
        ref = xs[0]
        for x in xs[1:]:
            if x.ndim != ref.ndim or x.shape[:1] + x.shape[2:] != ref.shape[:1] + ref.shape[2:]:
                raise ContractError(f"concat extent mismatch outside the channel axis: {ref.shape} vs {x.shape}")
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=1))


def concat_channels(*xs: Tensor) -> Tensor:
    """Concatenate along axis 1 (works for (N, C) and (N, C, H, W))."""
    return Concat.apply(*xs)


class Add(Function):
    name = "add"

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ContractError(f"add requires identical shapes; got {a.shape} and {b.shape}")
        return a + b

    def backward(self, grad):
        return grad, grad


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


class SliceChannels(Function):
    name = "slice"

    def __init__(self, start: int, stop: int):
        super().__init__()
        self.start, self.stop = start, stop

    def forward(self, x):
        self.shape = x.shape
        return x[:, self.start : self.stop].copy()

    def backward(self, grad):
        dx = np.zeros(self.shape, dtype=grad.dtype)
        dx[:, self.start : self.stop] = grad
        return (dx,)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    return SliceChannels.apply(x, start=start, stop=stop)


class Sum(Function):
    name = "sum"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.full(self.shape, grad, dtype=grad.dtype),)


def tensor_sum(x: Tensor) -> Tensor:
    return Sum.apply(x)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ContractError(f"mul requires identical shapes; got {a.shape} and {b.shape}")
        self.ctx = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self.ctx
        return grad * b, grad * a


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


# ---------------------------------------------------------------------------
# classifier head and loss


class Linear(Function):
    name = "linear"

    def forward(self, x, w, b):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ContractError(f"linear feature axis mismatch: input {x.shape}, weights {w.shape}")
        if b.shape != (w.shape[0],):
            raise ContractError(f"linear bias axis mismatch: expected ({w.shape[0]},), got {b.shape}")
        self.ctx = (x, w)
        return x @ w.T + b

    def backward(self, grad):
        x, w = self.ctx
        return grad @ w, grad.T @ x, grad.sum(axis=0)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    return Linear.apply(x, weights, bias)


class Softmax(Function):
    name = "softmax"

    def forward(self, z):
        if z.ndim != 2:
            raise ContractError(f"softmax expects (N, K) logits; got {z.shape}")
        e = np.exp(z - z.max(axis=1, keepdims=True))
        self.p = e / e.sum(axis=1, keepdims=True)
        return self.p

    def backward(self, grad):
        p = self.p
        return (p * (grad - (grad * p).sum(axis=1, keepdims=True)),)


def softmax(logits: Tensor) -> Tensor:
    return Softmax.apply(logits)


def dense_softmax(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map to K logits followed by a numerically stable softmax."""
    if weights.ndim == 2 and weights.shape[0] < 2:
        raise ContractError("dense_softmax needs at least 2 output classes")
    return softmax(linear(x, weights, bias))


class CrossEntropy(Function):
    name = "cce"

    def __init__(self, eps: float = CCE_EPS):
        super().__init__()
        self.eps = eps

    def forward(self, p, y):
        N = p.shape[0]
        self.ctx = (p, y)
        clipped = np.clip(p, self.eps, 1.0)
        return np.asarray(-(y * np.log(clipped)).sum() / N, dtype=p.dtype)

    def backward(self, grad):
        p, y = self.ctx
        N = p.shape[0]
        inside = (p >= self.eps) & (p <= 1.0)
        dp = np.where(inside, -y / np.maximum(p, self.eps), 0.0) * (grad / N)
        return dp.astype(p.dtype, copy=False), None


def validate_onehot(onehot: np.ndarray, k: int | None = None) -> None:
    if onehot.ndim != 2 or (k is not None and onehot.shape[1] != k):
        raise ContractError(f"one-hot targets must be (N, K); got {onehot.shape}")
    ok = np.all((onehot == 0) | (onehot == 1), axis=1) & (onehot.sum(axis=1) == 1)
    if not ok.all():
        raise ContractError(f"invalid one-hot row {int(np.argmin(ok))}")


def cce_loss(probs: Tensor, onehot: Tensor | np.ndarray) -> Tensor:
    """Mean categorical cross-entropy with probabilities clamped to [1e-7, 1]."""
    y = onehot.data if isinstance(onehot, Tensor) else np.asarray(onehot)
    validate_onehot(y, probs.shape[1])
    if y.shape[0] != probs.shape[0]:
        raise ContractError(f"batch axis mismatch: probs {probs.shape}, targets {y.shape}")
    return CrossEntropy.apply(probs, Tensor(y.astype(probs.dtype)))


def one_hot(labels: np.ndarray, k: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], k), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "CCE_EPS",
    "BatchNormState",
    "add",
    "batch_norm",
    "cce_loss",
    "concat_channels",
    "conv1x1",
    "conv2d",
    "conv_output_size",
    "dense_softmax",
    "depthwise",
    "depthwise_conv2d",
    "global_avg_pool",
    "is_grad_enabled",
    "linear",
    "max_pool2d",
    "mul",
    "one_hot",
    "relu",
    "slice_channels",
    "softmax",
    "tensor_sum",
    "validate_onehot",
]
