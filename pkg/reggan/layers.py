#!/usr/bin/env python3
"""Minimal reverse-mode differentiation over convolutional layers.

Every layer records what it needs during forward() and consumes it in
backward(), which returns the gradient w.r.t. the layer input and accumulates
gradients w.r.t. the layer parameters in layer.grads. Arrays use the
(batch, channels, height, width) layout.
"""
import typing

import numpy as np

ParamList = typing.List[typing.Tuple[str, np.ndarray]]

# -----------------------------------------------------------------------------


class Layer:
    """Base class for differentiable layers"""

    def __init__(self):
        self.params: typing.Dict[str, np.ndarray] = {}
        self.grads: typing.Dict[str, np.ndarray] = {}
        self.buffers: typing.Dict[str, np.ndarray] = {}
        self.training = True
        self._recorded = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Compute output and record state for backward()"""
        raise NotImplementedError()

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. input; accumulates parameter gradients"""
        raise NotImplementedError()

    def children(self) -> typing.List[typing.Tuple[str, "Layer"]]:
        """Named sub-layers"""
        return []

    def named_params(self, prefix: str = "") -> ParamList:
        """Parameters in deterministic order"""
        named = [(prefix + name, value) for name, value in self.params.items()]
        for child_name, child in self.children():
            named.extend(child.named_params(f"{prefix}{child_name}."))

        return named

    def named_grads(self, prefix: str = "") -> ParamList:
        """Parameter gradients, in the same order as named_params()"""
        named = [(prefix + name, self.grads[name]) for name in self.params]
        for child_name, child in self.children():
            named.extend(child.named_grads(f"{prefix}{child_name}."))

        return named

    def named_buffers(self, prefix: str = "") -> ParamList:
        """Non-learnable state (e.g., running statistics)"""
        named = [(prefix + name, value) for name, value in self.buffers.items()]
        for child_name, child in self.children():
            named.extend(child.named_buffers(f"{prefix}{child_name}."))

        return named

    def zero_grad(self):
        """Reset accumulated parameter gradients"""
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)

        for _, child in self.children():
            child.zero_grad()

    def train(self):
        """Use batch statistics"""
        self.training = True
        for _, child in self.children():
            child.train()

    def eval(self):
        """Use frozen running statistics"""
        self.training = False
        for _, child in self.children():
            child.eval()

    def _check_recorded(self):
        if not self._recorded:
            raise RuntimeError(
                f"{type(self).__name__}.backward() called without a recorded forward pass"
            )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


def kaiming_normal(
    rng: np.random.Generator, shape: typing.Tuple[int, ...], fan_in: int
) -> np.ndarray:
    """Fan-in scaled normal initialization for ReLU-family networks"""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


# -----------------------------------------------------------------------------


class Conv2d(Layer):
    """Square-kernel 2-D convolution with zero padding"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel_size: int = 3,
        stride: int = 1,
        padding: typing.Optional[int] = None,
        zero_init: bool = False,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = (kernel_size // 2) if padding is None else padding

        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            weight = np.zeros(shape)
        else:
            weight = kaiming_normal(rng, shape, in_channels * kernel_size * kernel_size)

        self.params["weight"] = weight
        self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

        self._cols: typing.Optional[np.ndarray] = None
        self._input_shape: typing.Tuple[int, ...] = ()
        self._out_hw: typing.Tuple[int, int] = (0, 0)

    def output_size(self, size: int) -> int:
        """Spatial output size for an input size"""
        return (size + 2 * self.padding - self.kernel_size) // self.stride + 1

    def _tap(self, i: int, j: int, out_h: int, out_w: int) -> typing.Tuple[slice, slice]:
        """Padded-input rows and columns under kernel tap (i, j)"""
        s = self.stride
        return (
            slice(i, i + s * (out_h - 1) + 1, s),
            slice(j, j + s * (out_w - 1) + 1, s),
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        num, channels, height, width = x.shape
        if channels != self.in_channels:
            raise ValueError(
                f"Expected {self.in_channels} input channels, got {channels}"
            )

        k, p = self.kernel_size, self.padding
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        out_h, out_w = self.output_size(height), self.output_size(width)

        # im2col: (C * k * k, N * Ho * Wo), one block copy per kernel tap
        cols = np.empty((channels, k, k, num, out_h, out_w))
        for i in range(k):
            for j in range(k):
                rows, columns = self._tap(i, j, out_h, out_w)
                cols[:, i, j] = padded[:, :, rows, columns].transpose(1, 0, 2, 3)

        cols = cols.reshape(channels * k * k, -1)
        weight = self.params["weight"].reshape(self.out_channels, -1)
        out = weight @ cols + self.params["bias"][:, None]

        self._cols = cols
        self._input_shape = x.shape
        self._out_hw = (out_h, out_w)
        self._recorded = True

        return np.ascontiguousarray(
            out.reshape(self.out_channels, num, out_h, out_w).transpose(1, 0, 2, 3)
        )

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        assert self._cols is not None

        num, channels, height, width = self._input_shape
        out_h, out_w = self._out_hw
        k, p = self.kernel_size, self.padding

        grad_rows = grad.transpose(1, 0, 2, 3).reshape(self.out_channels, -1)
        weight = self.params["weight"].reshape(self.out_channels, -1)

        self.grads["weight"] += (grad_rows @ self._cols.T).reshape(
            self.params["weight"].shape
        )
        self.grads["bias"] += grad_rows.sum(axis=1)

        # col2im
        grad_cols = (weight.T @ grad_rows).reshape(channels, k, k, num, out_h, out_w)
        grad_padded = np.zeros((num, channels, height + 2 * p, width + 2 * p))
        for i in range(k):
            for j in range(k):
                rows, columns = self._tap(i, j, out_h, out_w)
                grad_padded[:, :, rows, columns] += grad_cols[:, i, j].transpose(1, 0, 2, 3)

        return grad_padded[:, :, p : p + height, p : p + width]


class BatchNorm2d(Layer):
    """Per-channel batch normalization with running statistics"""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps

        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

        self._x_hat: typing.Optional[np.ndarray] = None
        self._inv_std: typing.Optional[np.ndarray] = None
        self._batch_mode = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))

            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]

        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]

        self._x_hat = x_hat
        self._inv_std = inv_std
        self._batch_mode = self.training
        self._recorded = True

        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]

        return gamma * x_hat + beta

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        assert (self._x_hat is not None) and (self._inv_std is not None)

        x_hat = self._x_hat
        self.grads["gamma"] += np.sum(grad * x_hat, axis=(0, 2, 3))
        self.grads["beta"] += np.sum(grad, axis=(0, 2, 3))

        grad_x_hat = grad * self.params["gamma"][None, :, None, None]
        inv_std = self._inv_std[None, :, None, None]

        if not self._batch_mode:
            return grad_x_hat * inv_std

        count = x_hat.shape[0] * x_hat.shape[2] * x_hat.shape[3]
        sum_grad = grad_x_hat.sum(axis=(0, 2, 3), keepdims=True)
        sum_grad_x_hat = (grad_x_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)

        return (inv_std / count) * (count * grad_x_hat - sum_grad - x_hat * sum_grad_x_hat)


class Dense(Layer):
    """Fully connected layer on (batch, features)"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features

        self.params["weight"] = kaiming_normal(
            rng, (out_features, in_features), in_features
        )
        self.params["bias"] = np.zeros(out_features)
        self.zero_grad()

        self._x: typing.Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.in_features:
            raise ValueError(f"Expected {self.in_features} features, got {x.shape[1]}")

        self._x = x
        self._recorded = True

        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        assert self._x is not None

        self.grads["weight"] += grad.T @ self._x
        self.grads["bias"] += grad.sum(axis=0)

        return grad @ self.params["weight"]


# -----------------------------------------------------------------------------
# Activations and reshaping
# -----------------------------------------------------------------------------


class ReLU(Layer):
    """max(x, 0)"""

    def __init__(self):
        super().__init__()
        self._positive: typing.Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._positive = x > 0
        self._recorded = True
        return np.where(self._positive, x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        return np.where(self._positive, grad, 0.0)


class LeakyReLU(Layer):
    """x for x > 0, slope * x otherwise"""

    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope
        self._positive: typing.Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._positive = x > 0
        self._recorded = True
        return np.where(self._positive, x, self.slope * x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        return np.where(self._positive, grad, self.slope * grad)


class Tanh(Layer):
    """scale * tanh(x)"""

    def __init__(self, scale: float = 1.0):
        super().__init__()
        self.scale = scale
        self._y: typing.Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        self._recorded = True
        return self.scale * self._y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        assert self._y is not None
        return grad * self.scale * (1.0 - self._y * self._y)


class Sigmoid(Layer):
    """Logistic function"""

    def __init__(self):
        super().__init__()
        self._y: typing.Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        # Numerically stable in both tails
        e = np.exp(-np.abs(x))
        self._y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        self._recorded = True
        return self._y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        assert self._y is not None
        return grad * self._y * (1.0 - self._y)


class Flatten(Layer):
    """(N, C, H, W) -> (N, C * H * W)"""

    def __init__(self):
        super().__init__()
        self._shape: typing.Tuple[int, ...] = ()

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        self._recorded = True
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        return grad.reshape(self._shape)


# -----------------------------------------------------------------------------
# Containers
# -----------------------------------------------------------------------------


class Sequential(Layer):
    """Chain of layers"""

    def __init__(self, layers: typing.Iterable[Layer]):
        super().__init__()
        self.layers = list(layers)

    def children(self) -> typing.List[typing.Tuple[str, Layer]]:
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)

        self._recorded = True
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

        return grad


class Residual(Layer):
    """x + body(x)"""

    def __init__(self, body: Layer):
        super().__init__()
        self.body = body

    def children(self) -> typing.List[typing.Tuple[str, Layer]]:
        return [("body", self.body)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._recorded = True
        return x + self.body.forward(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._check_recorded()
        return grad + self.body.backward(grad)
