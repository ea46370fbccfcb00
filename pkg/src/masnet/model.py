"""Architecture registry, parameter storage and checkpoint serialization."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptCheckpoint, InvalidArgument

CONV2D = "conv2d"
MAS_BLOCK = "mas_block"
RESIDUAL_MAS_BLOCK = "residual_mas_block"
LAYER_KINDS = (CONV2D, MAS_BLOCK, RESIDUAL_MAS_BLOCK)

BN_EPS = 1e-5

ARCH_IDS = (
    "llasnet-8", "llasnet-15",
    "masnet-9", "masnet-16", "masnet-22", "masnet-28", "masnet-34",
    "masnet-r-9", "masnet-r-16", "masnet-r-22", "masnet-r-28", "masnet-r-34",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel_t: int = 1
    kernel_f: int = 1
    dilation_t: int = 1
    dilation_f: int = 1
    has_batchnorm: bool = True
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidArgument(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "linear"):
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        for name in ("in_channels", "out_channels", "kernel_t", "kernel_f",
                     "dilation_t", "dilation_f"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be positive")
        if self.kernel_t % 2 == 0 or self.kernel_f % 2 == 0:
            raise InvalidArgument("kernel sizes must be odd")
        if (self.kernel_f - 1) * self.dilation_f % 2:
            raise InvalidArgument("total frequency padding must be even")
        if self.kind == RESIDUAL_MAS_BLOCK and self.in_channels != self.out_channels:
            raise InvalidArgument("residual block needs in_channels == out_channels")

    @property
    def time_history(self):
        """Past frames needed on the time axis: (kernel_t - 1) * dilation_t."""
        return (self.kernel_t - 1) * self.dilation_t

    @property
    def freq_pad(self):
        return (self.kernel_f - 1) * self.dilation_f // 2

    @property
    def is_mas(self):
        return self.kind in (MAS_BLOCK, RESIDUAL_MAS_BLOCK)

    @property
    def has_bias(self):
        return self.kind == CONV2D and not self.has_batchnorm

    def parameter_shapes(self):
        """Ordered mapping of parameter name -> shape for this layer."""
        shapes = {}
        cin, cout = self.in_channels, self.out_channels
        if self.is_mas:
            shapes["dw_weight"] = (cin, 1, self.kernel_t, self.kernel_f)
            shapes.update(_bn_shapes("dw_bn", cin))
            shapes["pw_weight"] = (cout, cin, 1, 1)
            shapes.update(_bn_shapes("pw_bn", cout))
        else:
            shapes["weight"] = (cout, cin, self.kernel_t, self.kernel_f)
            if self.has_batchnorm:
                shapes.update(_bn_shapes("bn", cout))
            else:
                shapes["bias"] = (cout,)
        return shapes


def _bn_shapes(prefix, ch):
    return {f"{prefix}_{n}": (ch,) for n in ("gamma", "beta", "running_mean", "running_var")}


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple
    freq_bins: int = 129
    input_channels: int = 2
    output_channels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_spec(self)

    @property
    def n_fft(self):
        return 2 * (self.freq_bins - 1)

    def to_text(self):
        """Canonical one-line-per-field text; parsed back by :func:`spec_from_text`."""
        lines = [f"name={self.name}", f"freq_bins={self.freq_bins}",
                 f"input_channels={self.input_channels}",
                 f"output_channels={self.output_channels}"]
        for l in self.layers:
            lines.append(
                f"layer={l.kind},{l.in_channels},{l.out_channels},{l.kernel_t},{l.kernel_f},"
                f"{l.dilation_t},{l.dilation_f},{int(l.has_batchnorm)},{l.activation}")
        return "\n".join(lines) + "\n"


def validate_spec(spec):
    layers = spec.layers
    if not layers:
        return
    if layers[0].in_channels != spec.input_channels:
        raise InvalidArgument("first layer must consume the input channels")
    if layers[-1].out_channels != spec.output_channels:
        raise InvalidArgument("last layer must produce the output channels")
    for a, b in zip(layers, layers[1:]):
        if a.out_channels != b.in_channels:
            raise InvalidArgument("inconsistent channel chain")
    last = layers[-1]
    if last.activation != "linear" or last.has_batchnorm:
        raise InvalidArgument("output layer must be linear without batchnorm")


def spec_from_text(text):
    fields = {}
    layers = []
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "layer":
            kind, cin, cout, kt, kf, dt, df, bn, act = value.split(",")
            layers.append(LayerSpec(kind, int(cin), int(cout), int(kt), int(kf),
                                    int(dt), int(df), bool(int(bn)), act))
        else:
            fields[key] = value
    return NetworkSpec(fields["name"], tuple(layers), int(fields["freq_bins"]),
                       int(fields["input_channels"]), int(fields["output_channels"]))


# (kernel_t, kernel_f, dilation_t, dilation_f) rows shared by both families
_FRONT = [(1, 7, 1, 1), (7, 1, 1, 1)]
_TIME_DILATED = [(5, 5, d, 1) for d in (1, 2, 4, 8, 16)]
_TIME_32 = [(5, 5, 32, 1)]
_SQUARE_DILATED = [(5, 5, d, d) for d in (1, 2, 4, 8, 16, 32)]


def _head_rows(full):
    rows = _FRONT + _TIME_DILATED
    if full:
        rows = rows + _TIME_32 + _SQUARE_DILATED
    return rows


def _llasnet(name, full, width, freq_bins):
    layers = []
    cin = 2
    for kt, kf, dt, df in _head_rows(full):
        layers.append(LayerSpec(CONV2D, cin, width, kt, kf, dt, df))
        cin = width
    layers.append(LayerSpec(CONV2D, width, 2, has_batchnorm=False, activation="linear"))
    return NetworkSpec(name, layers, freq_bins)


def _masnet(name, rows, width, freq_bins, residual):
    kind = RESIDUAL_MAS_BLOCK if residual else MAS_BLOCK
    layers = [LayerSpec(CONV2D, 2, width, has_batchnorm=False, activation="linear")]
    # input conv only expands channels: linear, biased, no batchnorm
    for kt, kf, dt, df in rows:
        layers.append(LayerSpec(kind, width, width, kt, kf, dt, df))
    layers.append(LayerSpec(CONV2D, width, 2, has_batchnorm=False, activation="linear"))
    return NetworkSpec(name, layers, freq_bins)


def build_spec(arch_id, width=32, freq_bins=129):
    """Layer list for a registry architecture.

    ``width`` scales the hidden channel count (32 in the published
    configurations); ``freq_bins`` sets the frequency grid the network runs on.
    """
    if arch_id not in ARCH_IDS:
        raise InvalidArgument(f"unknown model {arch_id!r}; valid ids: {', '.join(ARCH_IDS)}")
    family, _, depth = arch_id.rpartition("-")
    depth = int(depth)
    if family == "llasnet":
        return _llasnet(arch_id, depth == 15, width, freq_bins)
    residual = family == "masnet-r"
    if depth == 9:
        rows = _head_rows(False)
    else:
        rows = _head_rows(True) + _SQUARE_DILATED * ((depth - 16) // 6)
    return _masnet(arch_id, rows, width, freq_bins, residual)


def tiny_masnet(width=8, n_blocks=6, freq_bins=33, residual=False):
    """Small MASnet for desk-scale experiments: the first ``n_blocks`` MAS rows."""
    rows = (_head_rows(True) + _SQUARE_DILATED * 3)[:n_blocks]
    name = f"tiny-masnet-{width}x{n_blocks}"
    return _masnet(name, rows, width, freq_bins, residual)


@dataclass
class Network:
    spec: NetworkSpec
    params: list = field(default_factory=list)  # one {name: ndarray} dict per layer
    mode: str = "eval"
    generation: int = field(default=0, compare=False)  # bumped on every optimiser step

    def __post_init__(self):
        if len(self.params) != len(self.spec.layers):
            raise InvalidArgument("one parameter dict per layer required")
        for i, (layer, p) in enumerate(zip(self.spec.layers, self.params)):
            shapes = layer.parameter_shapes()
            if list(p) != list(shapes):
                raise InvalidArgument(f"layer {i}: parameter names {list(p)} != {list(shapes)}")
            for name, shape in shapes.items():
                if p[name].shape != shape:
                    raise InvalidArgument(
                        f"layer {i} {name}: shape {p[name].shape} != {shape}")

    @property
    def dtype(self):
        for p in self.params:
            for v in p.values():
                return v.dtype
        return np.dtype(np.float32)

    def astype(self, dtype):
        params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return Network(self.spec, params, self.mode)

    def copy(self):
        return self.astype(self.dtype)

    def named_parameters(self):
        """Yield (layer index, name, array) in declaration order."""
        for i, p in enumerate(self.params):
            for name, v in p.items():
                yield i, name, v

    def trainable(self):
        for i, name, v in self.named_parameters():
            if "running" not in name:
                yield i, name, v


def init_network(spec, seed=0, dtype=np.float32, zero_output=False):
    """He-normal weights, identity batchnorm, zero biases.

    ``zero_output`` zeroes the final linear projection so the initial mask is
    exactly 0 (the training recipe uses this; the random draws are unchanged).
    """
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec.layers:
        p = {}
        for name, shape in layer.parameter_shapes().items():
            if name.endswith("weight"):
                fan_in = int(np.prod(shape[1:]))
                p[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
            elif name.endswith(("gamma", "running_var")):
                p[name] = np.ones(shape, dtype=dtype)
            else:
                p[name] = np.zeros(shape, dtype=dtype)
        params.append(p)
    if zero_output and params:
        for v in params[-1].values():
            v[...] = 0
    return Network(spec, params)


MAGIC = b"MASN"
VERSION = 1


def checkpoint_bytes(net):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    text = net.spec.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for i, name, v in net.named_parameters():
        key = f"{i}.{name}".encode("utf-8")
        buf.write(struct.pack("<I", len(key)))
        buf.write(key)
        buf.write(struct.pack("<I", v.ndim))
        buf.write(struct.pack(f"<{v.ndim}I", *v.shape))
        buf.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(net, path):
    data = checkpoint_bytes(net)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def network_from_bytes(data):
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    version = r.u32()
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    try:
        spec = spec_from_text(r.take(r.u32()).decode("utf-8"))
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"bad spec block: {exc}") from exc
    params = []
    for i, layer in enumerate(spec.layers):
        p = {}
        for name, shape in layer.parameter_shapes().items():
            key = r.take(r.u32()).decode("utf-8", errors="replace")
            if key != f"{i}.{name}":
                raise CorruptCheckpoint(f"expected tensor {i}.{name}, found {key}")
            rank = r.u32()
            if rank != len(shape):
                raise CorruptCheckpoint(f"tensor {key}: rank {rank} != {len(shape)}")
            dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
            if tuple(dims) != shape:
                raise CorruptCheckpoint(f"tensor {key}: shape {dims} != {shape}")
            n = int(np.prod(shape))
            p[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        params.append(p)
    if r.pos != len(data):
        raise CorruptCheckpoint("trailing bytes after last tensor")
    for p in params:
        for name, v in p.items():
            if name.endswith("running_var") and np.any(v < 0):
                raise CorruptCheckpoint("negative running variance")
    return Network(spec, params)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return network_from_bytes(data)
