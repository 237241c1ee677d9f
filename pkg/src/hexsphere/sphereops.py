"""Operations on signals stored as five (C, 2W, W) component grids."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .mesh import AlphaMaps, get_alpha

# positions of w1..w7 inside the 3x3 kernel for the two neighbor orientations
W1_TAPS = [(0, 1), (0, 0), (1, 0), (2, 1), (2, 2), (1, 2), (1, 1)]
W2_TAPS = [(1, 2), (0, 1), (0, 0), (1, 0), (2, 1), (2, 2), (1, 1)]


@dataclass(frozen=True, eq=False)
class SphereTensor:
    r: int
    data: np.ndarray  # (5, C, 2W, W) float32

    def __post_init__(self):
        d = self.data
        W = 2**self.r
        if d.ndim != 4 or d.shape[0] != 5 or d.shape[2:] != (2 * W, W):
            raise ValueError(f"expected (5, C, {2 * W}, {W}) data for level {self.r}, got {d.shape}")
        if d.dtype != T.DTYPE:
            object.__setattr__(self, "data", d.astype(T.DTYPE))

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def W(self) -> int:
        return 2**self.r

    def component(self, i: int) -> np.ndarray:
        return self.data[i]

    @classmethod
    def zeros(cls, r: int, channels: int) -> "SphereTensor":
        W = 2**r
        return cls(r, np.zeros((5, channels, 2 * W, W), T.DTYPE))

    def rotate(self, k: int = 1) -> "SphereTensor":
        """Shift components by k places eastward (a 72k degree rotation)."""
        return SphereTensor(self.r, np.roll(self.data, k, axis=0))


@dataclass(frozen=True, eq=False)
class HexKernelBank:
    """Seven weights per (out, in) channel pair, ordered w1..w7, plus bias."""

    weights: np.ndarray  # (C_out, C_in, 7)
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.weights.ndim != 3 or self.weights.shape[2] != 7:
            raise ValueError(f"hex weights must be (C_out, C_in, 7), got {self.weights.shape}")
        if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias length must equal C_out")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    def kernel(self, taps) -> np.ndarray:
        k = np.zeros(self.weights.shape[:2] + (3, 3), T.DTYPE)
        for j, (y, x) in enumerate(taps):
            k[:, :, y, x] = self.weights[:, :, j]
        return k

    @classmethod
    def from_3x3(cls, k: np.ndarray, bias=None) -> "HexKernelBank":
        """Read the seven hex taps out of a 3x3 kernel laid out like W1."""
        w = np.stack([k[:, :, y, x] for y, x in W1_TAPS], axis=-1)
        return cls(w.astype(T.DTYPE), bias)


def _idx(start, stop, step=1):
    return np.arange(start, stop, step, dtype=np.int64)


def pad_west(x: np.ndarray) -> np.ndarray:
    """(5, C, 2W, W) -> (5, C, 2W+1, W+1): prepend the row and column shared
    with the western neighbor component."""
    _, C, H, W = x.shape
    west = np.roll(x, 1, axis=0)
    out = np.zeros((5, C, H + 1, W + 1), x.dtype)
    out[:, :, 1:, 1:] = x
    # top row: last column of the western component, upper half, reversed
    out[:, :, 0, :W] = west[:, :, _idx(W - 1, -1, -1), W - 1]
    # left column: west component's last column (lower half) then its last row
    out[:, :, 1:W + 1, 0] = west[:, :, _idx(W, 2 * W), W - 1]
    out[:, :, W + 1:2 * W, 0] = west[:, :, 2 * W - 1, _idx(W - 2, -1, -1)]
    return out


def pad_full(x: np.ndarray) -> np.ndarray:
    """(5, C, 2W, W) -> (5, C, 2W+2, W+2): west padding plus the bottom row
    and right column taken from the eastern neighbor component."""
    _, C, H, W = x.shape
    east = np.roll(x, -1, axis=0)
    out = np.zeros((5, C, H + 2, W + 2), x.dtype)
    out[:, :, :H + 1, :W + 1] = pad_west(x)
    out[:, :, H + 1, 1:W + 1] = east[:, :, _idx(2 * W - 1, W - 1, -1), 0]
    out[:, :, 1:W + 1, W + 1] = east[:, :, 0, _idx(W - 1, -1, -1)]
    out[:, :, W + 1:, W + 1] = east[:, :, _idx(0, W + 1), 0]
    return out


def pad(x: SphereTensor, mode: str = "full") -> np.ndarray:
    if mode == "full":
        return pad_full(x.data)
    if mode == "west":
        return pad_west(x.data)
    raise ValueError(f"unknown padding mode {mode!r}")


def _alpha(x: SphereTensor, alpha: AlphaMaps | None) -> np.ndarray:
    if alpha is None:
        alpha = get_alpha(x.r)
    if alpha.r != x.r:
        raise ValueError(f"alpha maps are for level {alpha.r}, tensor is level {x.r}")
    return alpha.as_float32()[:, None]


def hexconv(x: SphereTensor, bank: HexKernelBank, alpha: AlphaMaps | None = None) -> SphereTensor:
    """Hexagonal convolution: two 3x3 convolutions with the hex taps in both
    neighbor orientations, blended per vertex by alpha."""
    if bank.c_in != x.channels:
        raise ValueError(f"kernel expects {bank.c_in} input channels, tensor has {x.channels}")
    a = _alpha(x, alpha)
    k = np.concatenate([bank.kernel(W1_TAPS), bank.kernel(W2_TAPS)])
    both = T.conv2d_valid(pad_full(x.data), k)
    f1, f2 = both[:, :bank.c_out], both[:, bank.c_out:]
    out = a * f1 + (T.DTYPE(1) - a) * f2
    if bank.bias is not None:
        out += bank.bias.astype(T.DTYPE)[None, :, None, None]
    return SphereTensor(x.r, out)


def sphere_pool(x: SphereTensor, mode: str = "max") -> SphereTensor:
    """Level r -> r-1.  Every coarse vertex pools itself with its n1, n2 and
    n3 neighbors, which is a plain 2x2 window on each component."""
    if x.r < 1:
        raise ValueError("cannot pool below level 0")
    return SphereTensor(x.r - 1, T.pool2x2(x.data, mode))


def sphere_upsample(x: SphereTensor) -> SphereTensor:
    """Level r -> r+1 by bilinear interpolation on the west-padded grid."""
    up = T.upsample2x_bilinear(pad_west(x.data))
    return SphereTensor(x.r + 1, np.ascontiguousarray(up[:, :, 1:-1, 1:-1]))


def pointwise_conv(x: SphereTensor, w: np.ndarray, bias: np.ndarray | None = None) -> SphereTensor:
    w = np.asarray(w, T.DTYPE)
    if w.ndim == 4:
        w = w[:, :, 0, 0]
    w = np.ascontiguousarray(w)
    if w.shape[1] != x.channels:
        raise ValueError(f"pointwise weights expect {w.shape[1]} channels, tensor has {x.channels}")
    d = x.data
    y = np.matmul(w, d.reshape(5, d.shape[1], -1)).reshape(5, w.shape[0], *d.shape[2:])
    if bias is not None:
        y += np.asarray(bias, T.DTYPE)[None, :, None, None]
    return SphereTensor(x.r, y)


def hexconv_transpose(x: SphereTensor, w: np.ndarray, bias: np.ndarray | None = None) -> SphereTensor:
    """Transposed hex convolution: upsample, then a pointwise convolution."""
    return pointwise_conv(sphere_upsample(x), w, bias)


def batchnorm(x: SphereTensor, gamma, beta, mean, var, eps: float = 1e-5) -> SphereTensor:
    return SphereTensor(x.r, T.batchnorm_inference(x.data, gamma, beta, mean, var, eps))


def relu(x: SphereTensor) -> SphereTensor:
    return SphereTensor(x.r, T.relu(x.data))


def concat(xs: list[SphereTensor]) -> SphereTensor:
    if len({t.r for t in xs}) != 1:
        raise ValueError("cannot concatenate tensors of different levels")
    return SphereTensor(xs[0].r, np.concatenate([t.data for t in xs], axis=1))


# ---------------------------------------------------------------------------
# file format: JSON header line {"r", "channels"} then five .ten records


def save_sphere(path, x: SphereTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(json.dumps({"r": x.r, "channels": x.channels}).encode() + b"\n")
        for i in range(5):
            T.write_ten(fh, x.data[i])


def load_sphere(path) -> SphereTensor:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline())
            r, c = int(header["r"]), int(header["channels"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed sphere tensor header") from exc
        comps = [T.read_ten(fh) for _ in range(5)]
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after sphere tensor")
    data = np.stack(comps)
    if data.shape[1] != c:
        raise ValueError(f"{path}: header says {c} channels, payload has {data.shape[1]}")
    return SphereTensor(r, data)
