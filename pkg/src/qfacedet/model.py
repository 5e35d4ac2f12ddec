"""Detector graphs: construction, execution, storage formats and model files.

A :class:`ModelGraph` is an ordered list of :class:`Layer` nodes plus named
weight blobs. The builder realises a MobileNetV2 backbone truncated at one
of two breakpoints and topped with a ``5 * A``-channel detection head:

* ``OutA`` - head on ``block_13_expand_relu`` (stride 16, 576 * alpha ch.)
* ``OutB`` - head on ``out_relu`` (stride 32, 1280 ch.)
* ``OutC`` - head on ``concat(A, upsample2x(B))`` (stride 16)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .detection import AnchorSet, HeadMap, default_anchors
from .fixedpoint import QFormat, dequantize_array, quantize_array
from .nn import PadSpec, QTensor


FORMAT_VERSION = "qdm1"
OUT_STRATEGIES = ("OutA", "OutB", "OutC")
OPS = ("conv", "depthwise", "relu6", "add", "upsample", "concat", "head")
STORAGE_FORMATS = ("fp32", "fp16", "qformat")

# (expansion, output channels, repeats, first stride)
MOBILENET_V2_BLOCKS = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)
LAST_CONV_CHANNELS = 1280


class ModelFormatError(ValueError):
    """Malformed or incompatible model file."""


def make_divisible(value: float, divisor: int = 8) -> int:
    """Round to the nearest multiple of ``divisor`` (never below ``divisor``)."""
    return max(divisor, int(value + divisor / 2) // divisor * divisor)


@dataclass(frozen=True)
class Layer:
    name: str
    op: str
    inputs: tuple[str, ...]
    channels: int
    kernel: int = 1
    stride: int = 1
    pad: PadSpec | None = None
    tag: str = ""

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown layer op {self.op!r}")

    @property
    def kernel_name(self) -> str:
        return f"{self.name}/kernel"

    @property
    def bias_name(self) -> str:
        return f"{self.name}/bias"

    @property
    def has_kernel(self) -> bool:
        return self.op in ("conv", "depthwise", "head")


@dataclass(frozen=True)
class ModelConfig:
    alpha: float = 1.0
    out_strategy: str = "OutA"
    anchors: AnchorSet = field(default_factory=default_anchors)
    input_hw: tuple[int, int] = (224, 224)
    frozen_until: int = 98

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.out_strategy not in OUT_STRATEGIES:
            raise ValueError(f"unknown output strategy {self.out_strategy!r}; expected one of {OUT_STRATEGIES}")


@dataclass(frozen=True)
class ModelGraph:
    config: ModelConfig
    layers: tuple[Layer, ...]
    weights: dict
    storage_format: str = "fp32"
    weight_fmt: QFormat | None = None
    activation_fmt: QFormat | None = None

    def __post_init__(self):
        if self.storage_format not in STORAGE_FORMATS:
            raise ValueError(f"unknown storage format {self.storage_format!r}")
        if (self.storage_format == "qformat") != (self.weight_fmt is not None):
            raise ValueError("weight_fmt must be set exactly when storage_format is 'qformat'")
        object.__setattr__(self, "layers", tuple(self.layers))

    # -- structure ---------------------------------------------------------

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def tagged(self, tag: str) -> Layer:
        for layer in self.layers:
            if layer.tag == tag:
                return layer
        raise KeyError(tag)

    @property
    def head(self) -> Layer:
        heads = [layer for layer in self.layers if layer.op == "head"]
        if len(heads) != 1:
            raise ValueError(f"graph has {len(heads)} head layers, expected exactly one")
        return heads[0]

    @property
    def anchors(self) -> AnchorSet:
        return self.config.anchors

    def layer_ids(self) -> list[str]:
        """Stable identifiers whose lexical order is graph order."""
        return [f"{i:03d}_{layer.name}" for i, layer in enumerate(self.layers)]

    def strides(self) -> dict[str, int]:
        acc = {"input": 1}
        for layer in self.layers:
            if layer.op in ("conv", "depthwise", "head"):
                acc[layer.name] = acc[layer.inputs[0]] * layer.stride
            elif layer.op == "upsample":
                acc[layer.name] = acc[layer.inputs[0]] // 2
            else:
                acc[layer.name] = acc[layer.inputs[0]]
        return acc

    @property
    def head_stride(self) -> int:
        return self.strides()[self.head.name]

    def infer_shapes(self, input_hw=None, in_channels: int = 3) -> dict[str, tuple[int, int, int]]:
        """Per-layer ``(height, width, channels)``; raises on inconsistent chains."""
        h, w = input_hw or self.config.input_hw
        shapes = {"input": (h, w, in_channels)}
        for layer in self.layers:
            src = [shapes[i] for i in layer.inputs]
            ih, iw, ic = src[0]
            if layer.has_kernel:
                kshape = self.weights[layer.kernel_name].shape
                expect = ic if layer.op != "depthwise" else 1
                if layer.op != "depthwise" and kshape[2] != ic:
                    raise ValueError(f"{layer.name}: kernel expects {kshape[2]} channels, input has {ic}")
                if layer.op == "depthwise" and (kshape[2] != ic or kshape[3] != expect):
                    raise ValueError(f"{layer.name}: depthwise kernel {kshape} vs {ic} channels")
                t, b, l, r = (layer.pad or PadSpec.valid()).resolve(ih, iw)
                oh = (ih + t + b - layer.kernel) // layer.stride + 1
                ow = (iw + l + r - layer.kernel) // layer.stride + 1
                shapes[layer.name] = (oh, ow, layer.channels)
            elif layer.op == "add":
                if src[0] != src[1]:
                    raise ValueError(f"{layer.name}: cannot add {src[0]} and {src[1]}")
                shapes[layer.name] = src[0]
            elif layer.op == "upsample":
                shapes[layer.name] = (2 * ih, 2 * iw, ic)
            elif layer.op == "concat":
                bh, bw, bc = src[1]
                if not (0 <= bh - ih <= 1 and 0 <= bw - iw <= 1):
                    raise ValueError(f"{layer.name}: cannot concatenate {src[0]} and {src[1]}")
                shapes[layer.name] = (ih, iw, ic + bc)
            else:
                shapes[layer.name] = src[0]
            if layer.channels != shapes[layer.name][2]:
                raise ValueError(f"{layer.name}: declared {layer.channels} channels, got {shapes[layer.name][2]}")
        return shapes

    def validate(self):
        head = self.head
        if head.channels != 5 * len(self.anchors):
            raise ValueError(f"head has {head.channels} channels, expected 5 x {len(self.anchors)}")
        self.infer_shapes()
        return self

    # -- weights -------------------------------------------------------------

    def float_weight(self, name: str) -> np.ndarray:
        """Weight widened to float64 regardless of storage format."""
        w = self.weights[name]
        if self.storage_format == "qformat":
            return dequantize_array(w, self.weight_fmt)
        return w.astype(np.float64)

    def q_weight(self, name: str) -> QTensor:
        if self.storage_format != "qformat":
            raise ValueError("fixed-point execution needs a Q-format model; quantize it first")
        return QTensor(self.weights[name], self.weight_fmt)

    def with_weights(self, weights: dict) -> "ModelGraph":
        merged = dict(self.weights)
        for name, value in weights.items():
            if name not in merged:
                raise KeyError(name)
            if np.shape(value) != merged[name].shape:
                raise ValueError(f"{name}: shape {np.shape(value)} != {merged[name].shape}")
            merged[name] = np.asarray(value).astype(merged[name].dtype)
        return replace(self, weights=merged)

    def parameter_count(self) -> int:
        return parameter_count(self)

    # -- execution -------------------------------------------------------------

    @property
    def default_mode(self) -> str:
        if self.storage_format == "qformat" and self.activation_fmt is not None:
            return "fixed"
        return "float"

    def forward(self, x, mode: str | None = None, observer: Callable | None = None) -> np.ndarray:
        """Run the graph on an NHWC float batch and return the head output.

        ``mode="fixed"`` runs every layer in integer arithmetic at the
        model's activation format; the result is dequantized. ``observer``
        is called as ``observer(layer_index, layer, activation)`` with the
        float view of every intermediate activation.
        """
        mode = mode or self.default_mode
        x = nn.as_tensor(x)
        if mode == "float":
            step, to_float = self._float_step, lambda v: v
            value = x
        elif mode == "fixed":
            if self.activation_fmt is None:
                raise ValueError("fixed-point execution needs an activation format")
            step, to_float = self._fixed_step, QTensor.dequantize
            value = QTensor.from_float(x, self.activation_fmt)
        else:
            raise ValueError(f"unknown execution mode {mode!r}")

        last_use = {}
        for i, layer in enumerate(self.layers):
            for name in layer.inputs:
                last_use[name] = i
        env = {"input": value}
        out = None
        for i, layer in enumerate(self.layers):
            out = step(layer, [env[name] for name in layer.inputs])
            env[layer.name] = out
            if observer is not None:
                observer(i, layer, to_float(out))
            for name in layer.inputs:
                if last_use[name] == i:
                    del env[name]
        return to_float(out)

    def _float_step(self, layer: Layer, args):
        op = layer.op
        if op == "conv":
            return nn.conv2d(args[0], self.float_weight(layer.kernel_name), layer.stride, layer.pad)
        if op == "depthwise":
            return nn.depthwise_conv2d(args[0], self.float_weight(layer.kernel_name), layer.stride, layer.pad)
        if op == "head":
            y = nn.conv2d(args[0], self.float_weight(layer.kernel_name), layer.stride, layer.pad)
            return y + self.float_weight(layer.bias_name)
        if op == "relu6":
            return nn.relu6(args[0])
        if op == "add":
            return nn.add(args[0], args[1])
        if op == "upsample":
            return nn.upsample2x_bilinear(args[0])
        a, b = args
        return nn.concat_channels(a, nn.crop_to(b, a.shape[1], a.shape[2]))

    def _fixed_step(self, layer: Layer, args):
        op, fmt = layer.op, self.activation_fmt
        if op == "conv":
            return nn.conv2d_fixed(args[0], self.q_weight(layer.kernel_name), layer.stride, layer.pad, fmt)
        if op == "depthwise":
            return nn.depthwise_conv2d_fixed(args[0], self.q_weight(layer.kernel_name), layer.stride, layer.pad, fmt)
        if op == "head":
            return nn.conv2d_fixed(args[0], self.q_weight(layer.kernel_name), layer.stride, layer.pad, fmt,
                                   bias=self.q_weight(layer.bias_name))
        if op == "relu6":
            return nn.relu6_fixed(args[0])
        if op == "add":
            return nn.add_fixed(args[0], args[1])
        if op == "upsample":
            return nn.upsample2x_fixed(args[0])
        a, b = args
        return nn.concat_fixed(a, nn.crop_to(b, a.shape[1], a.shape[2]))

    def head_map(self, x, mode: str | None = None) -> HeadMap:
        x = nn.as_tensor(x)
        if x.shape[0] != 1:
            raise ValueError("head_map expects a single image")
        return HeadMap(self.forward(x, mode)[0], self.head_stride, self.anchors)


class GraphBuilder:
    """Incrementally assemble layers and draw their weights from one RNG.

    Weights default to ``uniform(-0.5, 0.5)`` stored as float32; pass
    ``init`` to override (it receives ``(rng, shape)``).
    """

    def __init__(self, in_channels: int = 3, seed: int = 0, init: Callable | None = None):
        self.rng = np.random.default_rng(seed)
        self.init = init or (lambda rng, shape: rng.uniform(-0.5, 0.5, shape))
        self.layers: list[Layer] = []
        self.weights: dict[str, np.ndarray] = {}
        self.channels = {"input": in_channels}

    def _new(self, shape):
        return np.asarray(self.init(self.rng, shape), dtype=np.float64).astype(np.float32)

    def _push(self, layer: Layer) -> str:
        if layer.name in self.channels:
            raise ValueError(f"duplicate layer name {layer.name!r}")
        self.layers.append(layer)
        self.channels[layer.name] = layer.channels
        return layer.name

    @staticmethod
    def _default_pad(kernel, stride):
        return None if kernel == 1 else PadSpec.same(kernel, stride)

    def conv(self, x, channels, kernel=1, stride=1, pad=None, name=None, tag=""):
        name = name or f"conv{len(self.layers)}"
        cin = self.channels[x]
        self.weights[f"{name}/kernel"] = self._new((kernel, kernel, cin, channels))
        return self._push(Layer(name, "conv", (x,), channels, kernel, stride,
                                pad or self._default_pad(kernel, stride), tag))

    def depthwise(self, x, kernel=3, stride=1, pad=None, name=None, tag=""):
        name = name or f"depthwise{len(self.layers)}"
        c = self.channels[x]
        self.weights[f"{name}/kernel"] = self._new((kernel, kernel, c, 1))
        return self._push(Layer(name, "depthwise", (x,), c, kernel, stride,
                                pad or self._default_pad(kernel, stride), tag))

    def relu6(self, x, name=None, tag=""):
        return self._push(Layer(name or f"{x}_relu", "relu6", (x,), self.channels[x], tag=tag))

    def add(self, a, b, name=None, tag=""):
        return self._push(Layer(name or f"add{len(self.layers)}", "add", (a, b), self.channels[a], tag=tag))

    def upsample(self, x, name=None, tag=""):
        return self._push(Layer(name or f"{x}_up", "upsample", (x,), self.channels[x], tag=tag))

    def concat(self, a, b, name=None, tag=""):
        return self._push(Layer(name or f"concat{len(self.layers)}", "concat", (a, b),
                                self.channels[a] + self.channels[b], tag=tag))

    def head(self, x, n_anchors, kernel=1, name="head"):
        cin = self.channels[x]
        cout = 5 * n_anchors
        self.weights[f"{name}/kernel"] = self._new((kernel, kernel, cin, cout))
        self.weights[f"{name}/bias"] = self._new((cout,))
        return self._push(Layer(name, "head", (x,), cout, kernel, 1, self._default_pad(kernel, 1), "head"))

    def inverted_residual(self, x, expansion, channels, stride, prefix, expand_tag=""):
        cin = self.channels[x]
        h = x
        if expansion != 1:
            h = self.conv(h, cin * expansion, 1, name=f"{prefix}_expand")
            h = self.relu6(h, name=f"{prefix}_expand_relu", tag=expand_tag)
        h = self.depthwise(h, 3, stride, name=f"{prefix}_depthwise")
        h = self.relu6(h, name=f"{prefix}_depthwise_relu")
        h = self.conv(h, channels, 1, name=f"{prefix}_project")
        if stride == 1 and cin == channels:
            h = self.add(x, h, name=f"{prefix}_add")
        return h

    def build(self, config: ModelConfig | None = None) -> ModelGraph:
        return ModelGraph(config or ModelConfig(), tuple(self.layers), dict(self.weights))


def mobilenet_v2(b: GraphBuilder, x: str, alpha: float, stop_at_breakpoint_a: bool = False) -> str:
    """Append the MobileNetV2 feature extractor; returns the last layer name.

    ``block_13_expand_relu`` is tagged ``breakpoint_A`` and ``out_relu``
    ``breakpoint_B``. Backbone convolutions carry no bias.
    """
    h = b.conv(x, make_divisible(32 * alpha), 3, 2, name="Conv1")
    h = b.relu6(h, name="Conv1_relu")
    block = 0
    for expansion, channels, repeats, first_stride in MOBILENET_V2_BLOCKS:
        for r in range(repeats):
            prefix = "expanded_conv" if block == 0 else f"block_{block}"
            tag = "breakpoint_A" if block == 13 else ""
            if block == 13 and stop_at_breakpoint_a:
                e = b.conv(h, b.channels[h] * expansion, 1, name=f"{prefix}_expand")
                return b.relu6(e, name=f"{prefix}_expand_relu", tag=tag)
            h = b.inverted_residual(h, expansion, make_divisible(channels * alpha),
                                    first_stride if r == 0 else 1, prefix, expand_tag=tag)
            block += 1
    last = LAST_CONV_CHANNELS if alpha <= 1.0 else make_divisible(LAST_CONV_CHANNELS * alpha)
    h = b.conv(h, last, 1, name="Conv_1")
    return b.relu6(h, name="out_relu", tag="breakpoint_B")


def build_detector(cfg: ModelConfig, seed: int = 0, weights: dict | None = None) -> ModelGraph:
    """Build a MobileNetV2 detector for ``cfg`` with seeded random weights."""
    b = GraphBuilder(3, seed)
    if cfg.out_strategy == "OutA":
        feat = mobilenet_v2(b, "input", cfg.alpha, stop_at_breakpoint_a=True)
    else:
        feat = mobilenet_v2(b, "input", cfg.alpha)
        if cfg.out_strategy == "OutC":
            up = b.upsample(feat, name="breakpoint_B_up")
            feat = b.concat("block_13_expand_relu", up, name="breakpoint_concat")
    b.head(feat, len(cfg.anchors))
    g = b.build(cfg)
    if weights is not None:
        g = g.with_weights(weights)
    return g.validate()


# ------------------------------------------------------------------ accounting

MIB = 1 << 20


def parameter_count(g: ModelGraph) -> int:
    return int(sum(w.size for w in g.weights.values()))


def bytes_per_weight(fmt) -> float:
    if fmt == "fp32":
        return 4.0
    if fmt == "fp16":
        return 2.0
    if isinstance(fmt, QFormat):
        return fmt.word_bits / 8.0
    if isinstance(fmt, int):
        return fmt / 8.0
    raise ValueError(f"unknown storage format {fmt!r}")


def storage_size(g: ModelGraph, fmt=None) -> int:
    """Bytes needed to store every parameter in ``fmt`` (default: the model's own)."""
    if fmt is None:
        fmt = g.weight_fmt if g.storage_format == "qformat" else g.storage_format
    return int(np.ceil(parameter_count(g) * bytes_per_weight(fmt)))


def to_mib(n_bytes: int) -> float:
    return n_bytes / MIB


def cast_storage(g: ModelGraph, fmt, saturate: bool = True) -> ModelGraph:
    """Re-store the weights of an fp32 model as fp16 or in a Q-format."""
    if g.storage_format != "fp32":
        raise ValueError(f"cast_storage needs an fp32 source, model is {g.storage_format}")
    if fmt == "fp32":
        return g
    if fmt == "fp16":
        weights = {k: v.astype(np.float16) for k, v in g.weights.items()}
        return replace(g, weights=weights, storage_format="fp16")
    if not isinstance(fmt, QFormat):
        raise ValueError(f"unknown storage format {fmt!r}")
    weights = {}
    for name, w in g.weights.items():
        if not saturate and (w.min(initial=0) < fmt.min_value or w.max(initial=0) > fmt.max_value):
            raise OverflowError(f"{name}: weights outside the {fmt} range")
        weights[name] = quantize_array(w, fmt)
    return replace(g, weights=weights, storage_format="qformat", weight_fmt=fmt)


# ------------------------------------------------------------------ model files


def _raw_dtype(g: ModelGraph) -> np.dtype:
    if g.storage_format == "fp32":
        return np.dtype("<f4")
    if g.storage_format == "fp16":
        return np.dtype("<f2")
    for nbytes in (1, 2, 4, 8):
        if g.weight_fmt.word_bits <= 8 * nbytes:
            return np.dtype(f"<i{nbytes}")
    raise ValueError("word too wide")


def _fmt_text(fmt: QFormat | None) -> str:
    return "-" if fmt is None else f"{fmt.m} {fmt.n}"


def _layer_line(layer: Layer) -> str:
    pad = layer.pad.encode() if layer.pad is not None else "-"
    return (f"layer {layer.name} {layer.op} inputs={','.join(layer.inputs)} channels={layer.channels} "
            f"kernel={layer.kernel} stride={layer.stride} pad={pad} tag={layer.tag or '-'}")


def serialize_model(g: ModelGraph) -> bytes:
    cfg = g.config
    dtype = _raw_dtype(g)
    lines = [
        FORMAT_VERSION,
        f"storage {g.storage_format}",
        f"weight_format {_fmt_text(g.weight_fmt)}",
        f"activation_format {_fmt_text(g.activation_fmt)}",
        f"alpha {cfg.alpha!r}",
        f"out_strategy {cfg.out_strategy}",
        f"input_hw {cfg.input_hw[0]} {cfg.input_hw[1]}",
        f"frozen_until {cfg.frozen_until}",
        f"anchors {len(cfg.anchors)}",
    ]
    lines += [f"anchor {a.id} {a.w!r} {a.h!r}" for a in cfg.anchors]
    lines.append(f"layers {len(g.layers)}")
    lines += [_layer_line(layer) for layer in g.layers]
    lines.append(f"blobs {len(g.weights)}")
    blobs, offset = [], 0
    for name in sorted(g.weights):
        data = np.ascontiguousarray(g.weights[name]).astype(dtype).tobytes()
        shape = ",".join(str(d) for d in g.weights[name].shape) or "-"
        lines.append(f"blob {name} {dtype.str} {shape} {offset} {len(data)}")
        blobs.append(data)
        offset += len(data)
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)


def save_model(g: ModelGraph, path) -> None:
    Path(path).write_bytes(serialize_model(g))


def _parse_fmt(parts, where) -> QFormat | None:
    if parts == ["-"]:
        return None
    if len(parts) != 2:
        raise ModelFormatError(f"malformed format record at byte {where}")
    return QFormat(int(parts[0]), int(parts[1]))


def deserialize_model(data: bytes) -> ModelGraph:
    pos = 0

    def next_line():
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise ModelFormatError(f"truncated manifest at byte {pos}")
        start, pos = pos, end + 1
        try:
            return start, data[start:end].decode("ascii")
        except UnicodeDecodeError:
            raise ModelFormatError(f"non-text manifest line at byte {start}") from None

    def expect(key):
        start, line = next_line()
        parts = line.split(" ")
        if parts[0] != key:
            raise ModelFormatError(f"expected {key!r} at byte {start}, found {line[:40]!r}")
        return start, parts[1:]

    start, version = next_line()
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"version mismatch: file is {version[:16]!r}, reader expects {FORMAT_VERSION!r}")
    try:
        _, (storage,) = expect("storage")
        where, parts = expect("weight_format")
        weight_fmt = _parse_fmt(parts, where)
        where, parts = expect("activation_format")
        activation_fmt = _parse_fmt(parts, where)
        _, (alpha,) = expect("alpha")
        _, (strategy,) = expect("out_strategy")
        _, (ih, iw) = expect("input_hw")
        _, (frozen,) = expect("frozen_until")
        _, (n_anchors,) = expect("anchors")
        anchors = []
        for _ in range(int(n_anchors)):
            _, (aid, aw, ah) = expect("anchor")
            anchors.append((int(aid), float(aw), float(ah)))
        _, (n_layers,) = expect("layers")
        layers = []
        for _ in range(int(n_layers)):
            where, parts = expect("layer")
            name, op, *kv = parts
            attrs = dict(item.split("=", 1) for item in kv)
            kernel, stride = int(attrs["kernel"]), int(attrs["stride"])
            pad = None if attrs["pad"] == "-" else PadSpec.decode(attrs["pad"], kernel, stride)
            layers.append(Layer(name, op, tuple(attrs["inputs"].split(",")), int(attrs["channels"]),
                                kernel, stride, pad, "" if attrs["tag"] == "-" else attrs["tag"]))
        _, (n_blobs,) = expect("blobs")
        specs = []
        for _ in range(int(n_blobs)):
            where, (name, dtype, shape, off, nbytes) = expect("blob")
            dims = () if shape == "-" else tuple(int(d) for d in shape.split(","))
            specs.append((where, name, np.dtype(dtype), dims, int(off), int(nbytes)))
        expect("end")
    except ModelFormatError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed manifest near byte {pos}: {exc}") from None

    base = pos
    weights = {}
    for where, name, dtype, dims, off, nbytes in specs:
        if nbytes != int(np.prod(dims, dtype=np.int64)) * dtype.itemsize:
            raise ModelFormatError(f"blob {name!r} size disagrees with its shape (record at byte {where})")
        if base + off + nbytes > len(data):
            raise ModelFormatError(
                f"truncated weight blob {name!r}: needs bytes {base + off}..{base + off + nbytes}, file has {len(data)}"
            )
        weights[name] = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)),
                                      offset=base + off).reshape(dims).astype(dtype.newbyteorder("="))
        if dtype.kind == "i":
            weights[name] = weights[name].astype(np.int64)

    cfg = ModelConfig(float(alpha), strategy, AnchorSet.from_sizes([(w, h) for _, w, h in anchors]),
                      (int(ih), int(iw)), int(frozen))
    try:
        return ModelGraph(cfg, tuple(layers), weights, storage, weight_fmt, activation_fmt)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def load_model(path) -> ModelGraph:
    return deserialize_model(Path(path).read_bytes())
