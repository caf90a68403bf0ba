"""Numpy layers with exact analytic backward passes.

Data layout is NHWC. Convolutions use TF-style "same" padding so output
spatial size is ceil(input / stride). Forward passes cache what backward
needs; call order must therefore be forward-then-backward per batch.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


def _same_padding(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _im2col(xp, kh, kw, stride):
    n, hp, wp, c = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, oh, ow, kh, kw, c),
        (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]),
    )
    return np.ascontiguousarray(win).reshape(n, oh, ow, kh * kw * c), oh, ow


class Conv2d:
    """2-D convolution, same padding, optional stride, He-normal init."""

    def __init__(self, name, kh, kw, cin, cout, stride=1, rng=None, dtype=np.float32):
        self.name = name
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        self.stride = stride
        self.dtype = dtype
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (kh * kw * cin))
        self.kernel = (scale * rng.standard_normal((kh, kw, cin, cout))).astype(dtype)
        self.bias = np.zeros(cout, dtype=dtype)
        self.d_kernel = np.zeros_like(self.kernel)
        self.d_bias = np.zeros_like(self.bias)
        self._cache = None

    def params(self):
        return [(f"{self.name}/kernel", self.kernel), (f"{self.name}/bias", self.bias)]

    def grads(self):
        return [(f"{self.name}/kernel", self.d_kernel), (f"{self.name}/bias", self.d_bias)]

    def forward(self, x):
        if x.shape[3] != self.cin:
            raise ContractError(f"{self.name}: got {x.shape[3]} channels, expected {self.cin}")
        ph = _same_padding(x.shape[1], self.kh, self.stride)
        pw = _same_padding(x.shape[2], self.kw, self.stride)
        xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
        cols, oh, ow = _im2col(xp, self.kh, self.kw, self.stride)
        y = cols @ self.kernel.reshape(-1, self.cout) + self.bias
        self._cache = (x.shape, xp.shape, ph, pw, cols)
        return y.reshape(x.shape[0], oh, ow, self.cout)

    def backward(self, dy):
        x_shape, xp_shape, ph, pw, cols = self._cache
        n, oh, ow, _ = dy.shape
        dy_flat = dy.reshape(-1, self.cout)
        self.d_kernel = (cols.reshape(-1, cols.shape[-1]).T @ dy_flat).reshape(self.kernel.shape)
        self.d_bias = dy_flat.sum(axis=0)
        dcols = (dy_flat @ self.kernel.reshape(-1, self.cout).T).reshape(
            n, oh, ow, self.kh, self.kw, self.cin
        )
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        s = self.stride
        for i in range(self.kh):
            for j in range(self.kw):
                dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, ph[0]:ph[0] + x_shape[1], pw[0]:pw[0] + x_shape[2], :]


class ReLU:
    def __init__(self, name="relu"):
        self.name = name
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class ResidualBlock:
    """Two same-size 3x3 convolutions with a skip connection.

    A strided block (or a channel change) routes the skip through a 1x1
    projection convolution; otherwise the skip is the identity. ReLU after
    the first convolution and after the addition.
    """

    def __init__(self, name, cin, cout, stride=1, rng=None, dtype=np.float32):
        self.name = name
        self.conv1 = Conv2d(f"{name}/conv1", 3, 3, cin, cout, stride=stride, rng=rng, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(f"{name}/conv2", 3, 3, cout, cout, stride=1, rng=rng, dtype=dtype)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = Conv2d(f"{name}/proj", 1, 1, cin, cout, stride=stride, rng=rng, dtype=dtype)
        self.relu2 = ReLU()

    def params(self):
        out = self.conv1.params() + self.conv2.params()
        if self.proj is not None:
            out += self.proj.params()
        return out

    def grads(self):
        out = self.conv1.grads() + self.conv2.grads()
        if self.proj is not None:
            out += self.proj.grads()
        return out

    def forward(self, x):
        h = self.conv2.forward(self.relu1.forward(self.conv1.forward(x)))
        skip = self.proj.forward(x) if self.proj is not None else x
        return self.relu2.forward(h + skip)

    def backward(self, dy):
        dz = self.relu2.backward(dy)
        dx = self.conv1.backward(self.relu1.backward(self.conv2.backward(dz)))
        if self.proj is not None:
            dx = dx + self.proj.backward(dz)
        else:
            dx = dx + dz
        return dx


class GlobalAvgPool:
    def __init__(self, name="gap"):
        self.name = name
        self._shape = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        n, h, w, c = self._shape
        return np.broadcast_to(dy[:, None, None, :], self._shape).copy() / (h * w)


class Dense:
    def __init__(self, name, cin, cout, rng=None, dtype=np.float32):
        self.name = name
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (cin + cout))
        self.weight = (scale * rng.standard_normal((cin, cout))).astype(dtype)
        self.bias = np.zeros(cout, dtype=dtype)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return [(f"{self.name}/weight", self.weight), (f"{self.name}/bias", self.bias)]

    def grads(self):
        return [(f"{self.name}/weight", self.d_weight), (f"{self.name}/bias", self.d_bias)]

    def forward(self, x):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, dy):
        self.d_weight = self._x.T @ dy
        self.d_bias = dy.sum(axis=0)
        return dy @ self.weight.T


class L2Normalize:
    """Row-wise x / max(||x||, floor); the floor guards the all-zero input."""

    def __init__(self, name="l2norm", norm_floor=1e-12):
        self.name = name
        self.norm_floor = norm_floor
        self._cache = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        safe = np.maximum(norms, self.norm_floor)
        y = x / safe
        self._cache = (y, safe, norms > self.norm_floor)
        return y

    def backward(self, dy):
        y, safe, above = self._cache
        # Above the floor: d(x/||x||) = (dy - y * <y, dy>) / ||x||.
        inner = np.sum(y * dy, axis=1, keepdims=True)
        dx_above = (dy - y * inner) / safe
        dx_below = dy / safe
        return np.where(above, dx_above, dx_below)
