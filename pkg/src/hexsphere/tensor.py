"""Dense float32 tensor operations on (C, H, W) or (N, C, H, W) arrays."""

from __future__ import annotations

import json
from typing import BinaryIO

import numpy as np

DTYPE = np.float32


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def conv2d_valid(x: np.ndarray, k: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Cross-correlation without padding, stride 1.

    ``x`` is (C_in, H, W) or (N, C_in, H, W); ``k`` is (C_out, C_in, kh, kw).
    Taps whose weights are all zero are skipped.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or k.ndim != 4:
        raise ValueError("conv2d_valid expects (N, C, H, W) input and (O, I, kh, kw) kernel")
    n, ci, h, w = x.shape
    co, ki, kh, kw = k.shape
    if ki != ci:
        raise ValueError(f"kernel expects {ki} input channels, tensor has {ci}")
    ho, wo = h - kh + 1, w - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError("input smaller than kernel")
    out = np.zeros((n, co, ho * wo), dtype=DTYPE)
    for dy in range(kh):
        for dx in range(kw):
            # contiguous operands keep matmul on the BLAS path
            tap = np.ascontiguousarray(k[:, :, dy, dx], dtype=DTYPE)
            if not tap.any():
                continue
            patch = x[:, :, dy:dy + ho, dx:dx + wo].reshape(n, ci, ho * wo)
            out += np.matmul(tap, patch)
    out = out.reshape(n, co, ho, wo)
    if bias is not None:
        out += np.asarray(bias, dtype=DTYPE)[None, :, None, None]
    return out[0] if squeeze else out


def pool2x2(x: np.ndarray, mode: str = "max") -> np.ndarray:
    """2x2 pooling with stride 2 over the last two axes (even sizes only)."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"pool2x2 needs even spatial size, got {h}x{w}")
    a, b = x[..., 0::2, 0::2], x[..., 0::2, 1::2]
    c, d = x[..., 1::2, 0::2], x[..., 1::2, 1::2]
    if mode == "max":
        return np.maximum(np.maximum(a, b), np.maximum(c, d))
    if mode == "avg":
        # pairwise sums keep constants exact
        return ((a + b) + (c + d)) * DTYPE(0.25)
    raise ValueError(f"unknown pooling mode {mode!r}")


def _upsample_axis(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    shape = list(x.shape)
    shape[axis] = 2 * n
    out = np.empty(shape, dtype=x.dtype)
    even = [slice(None)] * x.ndim
    odd = [slice(None)] * x.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    out[tuple(even)] = x
    lo = np.take(x, np.arange(n), axis=axis)
    hi = np.take(x, np.minimum(np.arange(n) + 1, n - 1), axis=axis)
    out[tuple(odd)] = (lo + hi) * DTYPE(0.5)
    return out


def upsample2x_bilinear(x: np.ndarray) -> np.ndarray:
    """Bilinear 2x upsampling of the last two axes.

    Output index k samples source coordinate k / 2, so even outputs copy the
    source exactly and odd outputs average two neighbors (edge clamped).
    """
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError("upsample2x_bilinear needs at least 2x2 input")
    return _upsample_axis(_upsample_axis(x, x.ndim - 2), x.ndim - 1)


def batchnorm_inference(x: np.ndarray, gamma, beta, mean, var, eps: float = 1e-5,
                        channel_axis: int = -3) -> np.ndarray:
    shape = [1] * x.ndim
    shape[channel_axis] = -1
    scale = (np.asarray(gamma, np.float64) / np.sqrt(np.asarray(var, np.float64) + eps))
    shift = np.asarray(beta, np.float64) - np.asarray(mean, np.float64) * scale
    return x * scale.astype(DTYPE).reshape(shape) + shift.astype(DTYPE).reshape(shape)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, DTYPE(0))


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    y = w.astype(DTYPE) @ x.astype(DTYPE)
    return y if b is None else y + b.astype(DTYPE)


# ---------------------------------------------------------------------------
# .ten files: one JSON header line, then raw little-endian float32


def write_ten(fh: BinaryIO, x: np.ndarray) -> None:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        raise TypeError("only float tensors can be stored")
    header = json.dumps({"shape": list(x.shape), "dtype": "f32"})
    fh.write(header.encode() + b"\n")
    fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_ten(fh: BinaryIO) -> np.ndarray:
    line = fh.readline()
    if not line:
        raise ValueError("missing tensor header")
    try:
        header = json.loads(line)
        shape = [int(s) for s in header["shape"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"malformed tensor header: {line[:80]!r}") from exc
    if header.get("dtype") != "f32":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("tensor payload is truncated")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(DTYPE)


def save_tensor(path, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_ten(fh, x)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        x = read_ten(fh)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after tensor payload")
    return x
