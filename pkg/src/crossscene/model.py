"""The patch classifier: attention-gated feature extractor + two affine heads.

The extractor has three convolutional units; the second one is preceded by a
center-attention block that scores every spatial position against a query
built from the patch's central spectrum and uses the result to gate a
depthwise-convolution stream (residual overall).  Two classification heads
with identical shapes but disjoint parameters sit on the pooled feature: the
main head drives classification and pseudo-label generation, the secondary
head absorbs pseudo-label supervision during self-training.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine as E
from .engine import Parameter

BLOCK_VARIANTS = ("a", "b", "c", "d")


@dataclass
class CenterAttentionConfig:
    """Placement of the activation inside the block, and the score divisor.

    variant: 'a' no activation, 'b' after the key map, 'c' after the
    depthwise convolution, 'd' after key and value maps (default).
    """

    variant: str = "d"
    scale_divisor: str = "sqrt_patch"  # or "sqrt_channels"

    def validate(self):
        if self.variant not in BLOCK_VARIANTS:
            raise ValueError(f"unknown block variant {self.variant!r}")
        if self.scale_divisor not in ("sqrt_patch", "sqrt_channels"):
            raise ValueError(f"unknown scale divisor {self.scale_divisor!r}")


@dataclass
class ExtractorConfig:
    input_bands: int
    patch_size: int
    unit_channels: tuple = (32, 64, 32)
    use_attention: bool = True
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    feature_mode: str = "pool"  # or "flatten"

    def validate(self):
        w1, w2, w3 = self.unit_channels
        if not (w2 == 2 * w1 and w1 == w3):
            raise ValueError(f"unit channels must satisfy w2 = 2*w1 = 2*w3, got {self.unit_channels}")
        if self.patch_size % 2 == 0:
            raise ValueError("patch size must be odd")
        if self.feature_mode not in ("pool", "flatten"):
            raise ValueError(f"unknown feature mode {self.feature_mode!r}")

    @property
    def feature_dim(self):
        if self.feature_mode == "flatten":
            return self.unit_channels[2] * self.patch_size * self.patch_size
        return self.unit_channels[2]


def kaiming_normal(rng, shape, fan_in, slope=0.01, dtype=np.float32):
    """Fan-in Kaiming-normal draw with the leaky-rectifier gain."""
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    std = gain / math.sqrt(fan_in)
    return (std * rng.standard_normal(shape)).astype(dtype)


class Linear:
    def __init__(self, d_in, d_out, rng, dtype, prefix, slope=0.01):
        self.weight = Parameter(kaiming_normal(rng, (d_in, d_out), d_in, slope, dtype),
                                name=f"{prefix}.weight")
        self.bias = Parameter(np.zeros(d_out, dtype=dtype), name=f"{prefix}.bias")

    def __call__(self, x):
        return E.affine(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class Conv2d:
    def __init__(self, c_in, c_out, rng, dtype, prefix, slope=0.01):
        self.weight = Parameter(kaiming_normal(rng, (c_out, c_in, 3, 3), c_in * 9, slope, dtype),
                                name=f"{prefix}.weight")
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), name=f"{prefix}.bias")

    def __call__(self, x):
        return E.conv2d(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class BatchNorm2d:
    """Per-channel batch norm; scale starts at 1, shift at 0."""

    def __init__(self, channels, dtype, prefix, eps=1e-5, momentum=0.1):
        self.gamma = Parameter(np.ones(channels, dtype=dtype), name=f"{prefix}.scale")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), name=f"{prefix}.shift")
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.eps = eps
        self.momentum = momentum
        self.prefix = prefix

    def __call__(self, x, training, update_running=True):
        return E.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              training=training, momentum=self.momentum, eps=self.eps,
                              update_running=update_running)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.prefix}.running_mean", self.running_mean),
                (f"{self.prefix}.running_var", self.running_var)]


class CenterAttentionBlock:
    """Gate a depthwise-conv stream by per-position similarity to the center.

    Key and value maps are position-wise linear layers; the query is a linear
    map of the central spectrum.  Scores are plain scaled inner products (no
    softmax); the gated stream is added back onto the input.
    """

    def __init__(self, channels, config, rng, dtype, prefix):
        config.validate()
        self.config = config
        self.channels = channels
        self.key = Linear(channels, channels, rng, dtype, f"{prefix}.key")
        self.value = Linear(channels, channels, rng, dtype, f"{prefix}.value")
        self.query = Linear(channels, channels, rng, dtype, f"{prefix}.query")
        self.dw_kernel = Parameter(kaiming_normal(rng, (channels, 3, 3), 9, dtype=dtype),
                                   name=f"{prefix}.dw_kernel")

    def __call__(self, x):
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"block built for {self.channels} channels, got {c}")
        if h != w or h % 2 == 0:
            raise ValueError("block needs square odd spatial dims")
        variant = self.config.variant
        p = h * w

        flat = E.reshape(E.transpose(x, (0, 2, 3, 1)), (n * p, c))
        k = self.key(flat)
        if variant in ("b", "d"):
            k = E.gelu(k)
        v = self.value(flat)
        if variant == "d":
            v = E.gelu(v)
        q = self.query(E.center_pixel(x))  # (n, c)

        scores = E.tsum(E.mul(E.reshape(k, (n, p, c)), E.reshape(q, (n, 1, c))), axis=2)
        divisor = math.sqrt(h) if self.config.scale_divisor == "sqrt_patch" else math.sqrt(c)
        gate = E.mul(E.reshape(v, (n, p, c)),
                     E.reshape(E.scale(scores, 1.0 / divisor), (n, p, 1)))
        gate_map = E.transpose(E.reshape(gate, (n, h, w, c)), (0, 3, 1, 2))

        conv_stream = E.depthwise_conv2d(x, self.dw_kernel)
        if variant == "c":
            conv_stream = E.gelu(conv_stream)
        return E.add(E.mul(gate_map, conv_stream), x)

    def parameters(self):
        return (self.key.parameters() + self.value.parameters()
                + self.query.parameters() + [self.dw_kernel])


class FeatureExtractor:
    """Three conv+BN+LeakyReLU units; the attention block precedes unit 2."""

    def __init__(self, config, attention, rng, dtype):
        config.validate()
        self.config = config
        w1, w2, w3 = config.unit_channels
        kw = dict(eps=config.bn_eps, momentum=config.bn_momentum)
        self.conv1 = Conv2d(config.input_bands, w1, rng, dtype, "extractor.conv1", config.leaky_slope)
        self.bn1 = BatchNorm2d(w1, dtype, "extractor.bn1", **kw)
        self.block = None
        if config.use_attention:
            self.block = CenterAttentionBlock(w1, attention, rng, dtype, "extractor.attn")
        self.conv2 = Conv2d(w1, w2, rng, dtype, "extractor.conv2", config.leaky_slope)
        self.bn2 = BatchNorm2d(w2, dtype, "extractor.bn2", **kw)
        self.conv3 = Conv2d(w2, w3, rng, dtype, "extractor.conv3", config.leaky_slope)
        self.bn3 = BatchNorm2d(w3, dtype, "extractor.bn3", **kw)

    def __call__(self, patches, training):
        """patches: Tensor (n, ps, ps, bands) -> features (n, feature_dim)."""
        if patches.shape[3] != self.config.input_bands:
            raise ValueError(
                f"extractor built for {self.config.input_bands} bands, got {patches.shape[3]}")
        slope = self.config.leaky_slope
        h = E.transpose(patches, (0, 3, 1, 2))
        h = E.leaky_relu(self.bn1(self.conv1(h), training), slope)
        if self.block is not None:
            h = self.block(h)
        h = E.leaky_relu(self.bn2(self.conv2(h), training), slope)
        h = E.leaky_relu(self.bn3(self.conv3(h), training), slope)
        if self.config.feature_mode == "flatten":
            n = h.shape[0]
            return E.reshape(h, (n, -1))
        return E.avg_pool2d(h)

    def parameters(self):
        params = self.conv1.parameters() + self.bn1.parameters()
        if self.block is not None:
            params += self.block.parameters()
        params += self.conv2.parameters() + self.bn2.parameters()
        params += self.conv3.parameters() + self.bn3.parameters()
        return params

    def buffers(self):
        return self.bn1.buffers() + self.bn2.buffers() + self.bn3.buffers()


class DualHeadClassifier:
    """Extractor + main head (`cls`) + pseudo head (`psd`), disjoint parameters."""

    def __init__(self, extractor_config, attention_config, num_classes, seed,
                 dtype=np.float32):
        self.num_classes = num_classes
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x90D)))
        self.extractor = FeatureExtractor(extractor_config, attention_config, rng, self.dtype)
        fd = extractor_config.feature_dim
        self.head_cls = Linear(fd, num_classes, rng, self.dtype, "head_cls")
        self.head_psd = Linear(fd, num_classes, rng, self.dtype, "head_psd")

    # -- forward surfaces ----------------------------------------------

    def features(self, patches, training):
        return self.extractor(patches, training)

    def head_logits(self, z, head="cls"):
        if head == "cls":
            return self.head_cls(z)
        if head == "psd":
            return self.head_psd(z)
        raise ValueError(f"unknown head {head!r}")

    def head_forward(self, z, head="cls"):
        """Probability vectors (softmax rows) from the requested head."""
        return E.softmax(self.head_logits(z, head))

    def predict(self, patches):
        """Hard labels (1..C) via extractor + main head, eval-mode statistics."""
        z = self.features(patches, training=False)
        logits = self.head_logits(z, "cls")
        return np.argmax(logits.data, axis=1) + 1

    # -- parameter plumbing ----------------------------------------------

    def parameters(self):
        return (self.extractor.parameters()
                + self.head_cls.parameters() + self.head_psd.parameters())

    def named_parameters(self):
        return OrderedDict((p.name, p) for p in self.parameters())

    def named_state(self):
        """Parameters plus BN running buffers, in a stable order."""
        state = OrderedDict((p.name, p.data) for p in self.parameters())
        for name, buf in self.extractor.buffers():
            state[name] = buf
        return state


# -- checkpoints --------------------------------------------------------------

_DTYPE_TAGS = {"float32": "f32", "float64": "f64"}
_TAG_DTYPES = {"f32": np.float32, "f64": np.float64}


def save_checkpoint(model, bin_path, index_path=None):
    """Flat binary of named tensors + JSON index; bit-exact round trip."""
    bin_path = Path(bin_path)
    index_path = Path(index_path) if index_path else bin_path.with_name("index.json")
    index = OrderedDict()
    offset = 0
    blobs = []
    for name, arr in model.named_state().items():
        raw = np.ascontiguousarray(arr).tobytes()
        index[name] = {"offset": offset, "shape": list(arr.shape),
                       "dtype": _DTYPE_TAGS[arr.dtype.name]}
        blobs.append(raw)
        offset += len(raw)
    bin_path.write_bytes(b"".join(blobs))
    index_path.write_text(json.dumps(index, indent=1) + "\n")
    return bin_path, index_path


def load_checkpoint(model, bin_path, index_path=None):
    """Restore named tensors in place; shapes and names must match exactly."""
    bin_path = Path(bin_path)
    index_path = Path(index_path) if index_path else bin_path.with_name("index.json")
    index = json.loads(index_path.read_text())
    raw = bin_path.read_bytes()
    state = model.named_state()
    if set(index) != set(state):
        missing = set(state) - set(index)
        extra = set(index) - set(state)
        raise ValueError(f"checkpoint/model mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, entry in index.items():
        arr = state[name]
        dtype = np.dtype(_TAG_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        if shape != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: {shape} vs {arr.shape}")
        n = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        start = entry["offset"]
        loaded = np.frombuffer(raw[start : start + n], dtype=dtype).reshape(shape)
        arr[...] = loaded.astype(arr.dtype)
    return model
