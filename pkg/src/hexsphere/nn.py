"""Network specs, weight storage and forward inference.

Parameter layout conventions (these decide the reference totals):

* every HexConv and 1x1 convolution carries a bias, BN contributes gamma
  and beta (running statistics are stored but not counted);
* a network stores hex filters either as 7 taps or as a 3x3 kernel whose
  W1-layout taps are used (``NetworkSpec.hex_storage`` 7 or 9);
* ResBlock bottleneck width is given per row; a decoder ResBlock with
  ``tail`` set is followed by a 1x1 convolution + BN + ReLU at the new level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import sphereops as S
from . import tensor as T
from .sphereops import HexKernelBank, SphereTensor

KINDS = ("HexConv", "ResBlock", "Encoder", "Decoder", "HexConvT", "MaxPool", "Dense", "Pointwise")
BN_EPS = 1e-5
TRAINABLE = ("hex", "conv1x1", "bias", "bn_gamma", "bn_beta", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    level: int
    a: int
    b: int | None = None
    c: int = 0
    s: float = 1
    concat_skip: bool = False
    push_skip: bool = False
    bn: bool = False
    relu: bool = False
    tail: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.s not in (1, 2, 0.5):
            raise ValueError(f"stride must be 1, 2 or 0.5, got {self.s}")
        if (self.b is not None) != (self.kind in ("ResBlock", "Decoder")):
            raise ValueError(f"{self.kind}: bottleneck width given iff the block has one")

    @property
    def out_level(self) -> int:
        return self.level - 1 if self.s == 2 else self.level + 1 if self.s == 0.5 else self.level


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    in_channels: int
    hex_storage: int = 7
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def in_level(self) -> int:
        return self.layers[0].level

    def at_level(self, level: int) -> "NetworkSpec":
        """Same network shifted to take input at ``level``."""
        d = level - self.in_level
        layers = tuple(replace(l, level=l.level + d) for l in self.layers)
        if min(l.level for l in layers) < 0 or min(l.out_level for l in layers) < 0:
            raise ValueError(f"{self.name} cannot run with input level {level}")
        return replace(self, layers=layers)


# ---------------------------------------------------------------------------
# architectures


def build_hexrunet_c(level: int = 4) -> NetworkSpec:
    """Classifier: HexConv, two strided ResBlocks, global max pool, dense."""
    L = level
    layers = (
        LayerSpec("HexConv", L, 1, c=16),
        LayerSpec("ResBlock", L, 16, 16, 64, s=2),
        LayerSpec("ResBlock", L - 1, 64, 64, 256, s=2),
        LayerSpec("MaxPool", L - 2, 256, c=256),
        LayerSpec("Dense", L - 2, 256, c=10),
    )
    return NetworkSpec("hexrunet-c", layers, 1, hex_storage=7)


def build_hexrunet(in_ch: int = 4, base: int = 16, out_ch: int = 13, level: int = 5) -> NetworkSpec:
    """Residual U-Net with five stride-2 stages and concatenated skips."""
    f = base
    L = level
    enc = [(f, 2 * f), (2 * f, 4 * f), (4 * f, 8 * f), (8 * f, 16 * f), (16 * f, 16 * f)]
    layers = [LayerSpec("HexConv", L, in_ch, c=f, push_skip=True)]
    for k, (a, c) in enumerate(enc):
        layers.append(LayerSpec("ResBlock", L - k, a, a, c, s=2, push_skip=k < 4))
    lo = L - 5
    layers.append(LayerSpec("HexConvT", lo, 16 * f, c=16 * f, s=0.5))
    dec = [(16 * f, 8 * f), (8 * f, 4 * f), (4 * f, 2 * f), (2 * f, f)]
    for k, (a, c) in enumerate(dec):
        layers.append(LayerSpec("ResBlock", lo + 1 + k, 2 * a, c, c, s=0.5, concat_skip=True, tail=True))
    layers.append(LayerSpec("ResBlock", L, 2 * f, f, f, concat_skip=True))
    layers.append(LayerSpec("Pointwise", L, f, c=out_ch))
    return NetworkSpec(f"hexrunet-{f}", tuple(layers), in_ch, hex_storage=9,
                       meta={"base": f, "out_ch": out_ch})


def build_hexunet(in_ch: int = 3, out_ch: int = 13, level: int = 6) -> NetworkSpec:
    """Plain U-Net: four encoder blocks, four decoder blocks, two HexConvs."""
    L = level
    chans = [in_ch, 32, 64, 128, 256]
    layers = [LayerSpec("Encoder", L - k, chans[k], c=chans[k + 1], s=2, push_skip=True) for k in range(4)]
    dec = [(256, 512, 256), (512, 256, 128), (256, 128, 64), (128, 64, 32)]
    for k, (a, b, c) in enumerate(dec):
        layers.append(LayerSpec("Decoder", L - 4 + k, a, b, c, s=0.5, concat_skip=k > 0))
    layers += [
        LayerSpec("HexConv", L, 64, c=32, concat_skip=True, bn=True, relu=True),
        LayerSpec("HexConv", L, 32, c=32, bn=True, relu=True),
        LayerSpec("Pointwise", L, 32, c=out_ch),
    ]
    return NetworkSpec("hexunet", tuple(layers), in_ch, hex_storage=9, meta={"out_ch": out_ch})


def build(arch: str, base: int = 16, in_ch: int | None = None, out_ch: int | None = None,
          level: int | None = None) -> NetworkSpec:
    arch = arch.lower()
    if arch == "hexrunet-c":
        spec = build_hexrunet_c()
    elif arch == "hexrunet":
        spec = build_hexrunet(4 if in_ch is None else in_ch, base, 13 if out_ch is None else out_ch)
    elif arch == "hexunet":
        spec = build_hexunet(3 if in_ch is None else in_ch, 13 if out_ch is None else out_ch)
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return spec if level is None else spec.at_level(level)


# ---------------------------------------------------------------------------
# parameter layout


def _hex_shape(spec: NetworkSpec, co: int, ci: int) -> tuple:
    return (co, ci, 7) if spec.hex_storage == 7 else (co, ci, 3, 3)


def _conv(prefix, shape, role):
    return [(f"{prefix}.weight", shape, role), (f"{prefix}.bias", (shape[0],), "bias")]


def _bn(prefix, c):
    return [(f"{prefix}.bn.{p}", (c,), f"bn_{p}") for p in ("gamma", "beta", "mean", "var")]


def layer_params(spec: NetworkSpec, idx: int, layer: LayerSpec) -> list[tuple[str, tuple, str]]:
    p = f"{idx:02d}.{layer.kind.lower()}"
    a, b, c = layer.a, layer.b, layer.c
    hexs = lambda q, co, ci: _conv(f"{p}.{q}", _hex_shape(spec, co, ci), "hex")
    pw = lambda q, co, ci: _conv(f"{p}.{q}", (co, ci), "conv1x1")
    bn = lambda q, ch: _bn(f"{p}.{q}", ch)
    k = layer.kind
    if k == "HexConv":
        out = hexs("hex", c, a) + (bn("hex", c) if layer.bn else [])
    elif k == "ResBlock":
        out = (pw("short", c, a) + bn("short", c) + pw("in", b, a) + bn("in", b)
               + hexs("hex", b, b) + bn("hex", b) + pw("out", c, b) + bn("out", c))
        if layer.tail:
            out += pw("tail", c, c) + bn("tail", c)
    elif k == "Encoder":
        out = hexs("hex1", c, a) + bn("hex1", c) + hexs("hex2", c, c) + bn("hex2", c)
    elif k == "Decoder":
        out = (hexs("hex1", b, a) + bn("hex1", b) + hexs("hex2", b, b) + bn("hex2", b)
               + pw("proj", c, b) + bn("proj", c))
    elif k in ("HexConvT", "Pointwise"):
        out = pw("conv", c, a) + (bn("conv", c) if layer.bn else [])
    elif k == "Dense":
        out = [(f"{p}.weight", (c, a), "dense"), (f"{p}.bias", (c,), "bias")]
    else:
        out = []
    return out


def param_layout(spec: NetworkSpec) -> list[tuple[str, tuple, str]]:
    return [e for i, l in enumerate(spec.layers) for e in layer_params(spec, i, l)]


def count_params(spec: NetworkSpec) -> int:
    return sum(math.prod(s) for _, s, role in param_layout(spec) if role in TRAINABLE)


def param_audit(spec: NetworkSpec) -> list[dict]:
    rows = []
    for i, l in enumerate(spec.layers):
        n = sum(math.prod(s) for _, s, role in layer_params(spec, i, l) if role in TRAINABLE)
        rows.append({"index": i, "kind": l.kind, "level": l.level, "a": l.a, "b": l.b, "c": l.c,
                     "s": l.s, "concat_skip": l.concat_skip, "params": n})
    return rows


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True, eq=False)
class WeightStore:
    arrays: dict[str, np.ndarray]
    roles: dict[str, str]

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.arrays[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def flatten(self, trainable_only: bool = True) -> np.ndarray:
        parts = [a.ravel() for n, a in self.arrays.items()
                 if not trainable_only or self.roles[n] in TRAINABLE]
        return np.concatenate(parts) if parts else np.zeros(0, T.DTYPE)

    def validate(self, spec: NetworkSpec) -> None:
        for name, shape, _ in param_layout(spec):
            if name not in self.arrays:
                raise ValueError(f"weights lack parameter {name!r}")
            if self.arrays[name].shape != tuple(shape):
                raise ValueError(f"{name}: expected shape {tuple(shape)}, got {self.arrays[name].shape}")


def init_weights(spec: NetworkSpec, seed: int = 0, zero: bool = False) -> WeightStore:
    """He-normal weights, zero biases, identity BN.  ``zero`` gives all-zero
    weights and biases (BN still identity)."""
    rng = np.random.default_rng(seed)
    arrays, roles = {}, {}
    for name, shape, role in param_layout(spec):
        if role in ("bias", "bn_beta", "bn_mean"):
            a = np.zeros(shape)
        elif role in ("bn_gamma", "bn_var"):
            a = np.ones(shape)
        elif zero:
            a = np.zeros(shape)
        else:
            fan_in = shape[1] * (7 if role == "hex" else 1)
            gain = 1.0 if role == "dense" else 2.0
            a = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
            if role == "hex" and len(shape) == 4:
                a[:, :, 0, 2] = 0.0
                a[:, :, 2, 0] = 0.0
        arrays[name] = a.astype(T.DTYPE)
        roles[name] = role
    return WeightStore(arrays, roles)


def save_weights(store: WeightStore, directory, spec: NetworkSpec | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i, (name, arr) in enumerate(store.arrays.items()):
        fname = f"p{i:04d}.ten"
        T.save_tensor(d / fname, arr)
        entries[name] = {"file": fname, "shape": list(arr.shape), "role": store.roles[name]}
    manifest = {"format": "hexsphere-weights", "version": 1, "params": entries}
    if spec is not None:
        manifest["network"] = spec.name
        manifest["hex_storage"] = spec.hex_storage
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_weights(directory) -> tuple[WeightStore, dict]:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
        entries = manifest["params"]
    except (OSError, ValueError, KeyError) as exc:
        raise ValueError(f"{d}: missing or malformed weight manifest") from exc
    arrays, roles = {}, {}
    for name, e in entries.items():
        arr = T.load_tensor(d / e["file"])
        if list(arr.shape) != list(e["shape"]):
            raise ValueError(f"{name}: blob shape {arr.shape} disagrees with manifest {e['shape']}")
        arrays[name] = arr
        roles[name] = e["role"]
    return WeightStore(arrays, roles), manifest


# ---------------------------------------------------------------------------
# weight transfer from 3x3 perspective kernels

SIN60 = math.sin(math.pi / 3)


def transfer_weights(p: np.ndarray) -> np.ndarray:
    """(..., 3, 3) perspective kernels -> (..., 7) hex taps w1..w7."""
    p = np.asarray(p, np.float64)
    if p.shape[-2:] != (3, 3):
        raise ValueError("perspective kernels must end in a 3x3 block")
    if not np.all(np.isfinite(p)):
        raise ValueError("perspective kernel has non-finite entries")
    q = p.reshape(p.shape[:-2] + (9,))
    p1, p2, p3, p4, p5, p6, p7, p8, p9 = (q[..., i] for i in range(9))
    s = SIN60
    w = [
        p2,
        s * (p1 + p4) / 2 + (1 - s) * (p2 + p5) / 2,
        s * (p4 + p7) / 2 + (1 - s) * (p5 + p8) / 2,
        p8,
        s * (p6 + p9) / 2 + (1 - s) * (p5 + p8) / 2,
        s * (p3 + p6) / 2 + (1 - s) * (p2 + p5) / 2,
        p5,
    ]
    return np.stack(w, axis=-1)


def hex_to_3x3(w: np.ndarray) -> np.ndarray:
    """Place hex taps into the W1 layout of a 3x3 kernel (corners zero)."""
    out = np.zeros(w.shape[:-1] + (3, 3), w.dtype)
    for j, (y, x) in enumerate(S.W1_TAPS):
        out[..., y, x] = w[..., j]
    return out


def transfer_store(store: WeightStore, hex_storage: int = 9) -> WeightStore:
    """Convert every 3x3 hex blob of a container from perspective weights."""
    arrays = dict(store.arrays)
    for name, arr in store.arrays.items():
        if store.roles[name] == "hex" and arr.shape[-2:] == (3, 3):
            w = transfer_weights(arr)
            arrays[name] = (hex_to_3x3(w) if hex_storage == 9 else w).astype(T.DTYPE)
    return WeightStore(arrays, dict(store.roles))


# ---------------------------------------------------------------------------
# forward


class _Params:
    def __init__(self, store: WeightStore, prefix: str):
        self.store, self.prefix = store, prefix

    def __call__(self, name):
        return self.store[f"{self.prefix}.{name}"]

    def bank(self, q) -> HexKernelBank:
        w, b = self(f"{q}.weight"), self(f"{q}.bias")
        if w.ndim == 4:
            return HexKernelBank.from_3x3(w, b)
        return HexKernelBank(w, b)

    def bn(self, x: SphereTensor, q) -> SphereTensor:
        g = [self(f"{q}.bn.{k}") for k in ("gamma", "beta", "mean", "var")]
        if g[0].shape[0] != x.channels:
            raise ValueError(f"{self.prefix}.{q}: BN has {g[0].shape[0]} channels, tensor has {x.channels}")
        return S.batchnorm(x, *g, eps=BN_EPS)

    def pw(self, x: SphereTensor, q) -> SphereTensor:
        return S.pointwise_conv(x, self(f"{q}.weight"), self(f"{q}.bias"))

    def hex(self, x: SphereTensor, q) -> SphereTensor:
        return S.hexconv(x, self.bank(q))


def _resample(x: SphereTensor, s) -> SphereTensor:
    if s == 2:
        return S.sphere_pool(x, "max")
    if s == 0.5:
        return S.sphere_upsample(x)
    return x


def resblock_forward(x: SphereTensor, params: _Params, s, tail: bool = False) -> SphereTensor:
    if s not in (1, 2, 0.5):
        raise ValueError(f"stride must be 1, 2 or 0.5, got {s}")
    b1 = params.bn(_resample(params.pw(x, "short"), s), "short")
    b2 = S.relu(params.bn(_resample(params.pw(x, "in"), s), "in"))
    b2 = S.relu(params.bn(params.hex(b2, "hex"), "hex"))
    b2 = params.bn(params.pw(b2, "out"), "out")
    y = S.relu(SphereTensor(b1.r, b1.data + b2.data))
    if tail:
        y = S.relu(params.bn(params.pw(y, "tail"), "tail"))
    return y


def encoder_forward(x: SphereTensor, params: _Params) -> tuple[SphereTensor, SphereTensor]:
    """Returns (pooled output, pre-pool skip)."""
    y = S.relu(params.bn(params.hex(x, "hex1"), "hex1"))
    y = S.relu(params.bn(params.hex(y, "hex2"), "hex2"))
    return S.sphere_pool(y, "max"), y


def decoder_forward(x: SphereTensor, params: _Params) -> SphereTensor:
    y = S.relu(params.bn(params.hex(x, "hex1"), "hex1"))
    y = S.relu(params.bn(params.hex(y, "hex2"), "hex2"))
    y = S.sphere_upsample(y)
    return S.relu(params.bn(params.pw(y, "proj"), "proj"))


def forward(spec: NetworkSpec, store: WeightStore, x: SphereTensor,
            trace: Callable[[int, LayerSpec, object], None] | None = None):
    """Run the network.  Segmentation nets return a SphereTensor, the
    classifier returns a logit vector.  ``trace`` sees every layer output."""
    skips: list[SphereTensor] = []
    cur = x
    for i, layer in enumerate(spec.layers):
        where = f"layer {i} ({layer.kind})"
        if isinstance(cur, SphereTensor):
            if layer.concat_skip:
                if not skips:
                    raise ValueError(f"{where}: no skip tensor to concatenate")
                skip = skips.pop()
                if skip.r != cur.r:
                    raise ValueError(f"{where}: skip is level {skip.r}, input is level {cur.r}")
                cur = S.concat([cur, skip])
            if cur.r != layer.level:
                raise ValueError(f"{where}: expects level {layer.level}, got {cur.r}")
            if cur.channels != layer.a:
                raise ValueError(f"{where}: expects {layer.a} channels, got {cur.channels}")
        p = _Params(store, f"{i:02d}.{layer.kind.lower()}")
        k = layer.kind
        if k == "HexConv":
            cur = p.hex(cur, "hex")
            if layer.bn:
                cur = p.bn(cur, "hex")
            if layer.relu:
                cur = S.relu(cur)
        elif k == "ResBlock":
            cur = resblock_forward(cur, p, layer.s, layer.tail)
        elif k == "Encoder":
            cur, skip = encoder_forward(cur, p)
            skips.append(skip)
        elif k == "Decoder":
            cur = decoder_forward(cur, p)
        elif k == "HexConvT":
            cur = S.hexconv_transpose(cur, p("conv.weight"), p("conv.bias"))
            if layer.bn:
                cur = p.bn(cur, "conv")
        elif k == "Pointwise":
            cur = p.pw(cur, "conv")
        elif k == "MaxPool":
            cur = cur.data.max(axis=(0, 2, 3))
        elif k == "Dense":
            if np.ndim(cur) != 1 or cur.shape[0] != layer.a:
                raise ValueError(f"{where}: expects a {layer.a}-vector")
            cur = T.dense(cur, p("weight"), p("bias"))
        if layer.push_skip and k != "Encoder":
            skips.append(cur)
        if trace is not None:
            trace(i, layer, cur)
    return cur
