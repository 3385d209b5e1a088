"""The 1D encoder-decoder network: configuration grid, build, run, differentiate.

Architecture layout
-------------------
``depth`` encoder blocks, one bottleneck, ``depth`` decoder blocks and a
linear single-channel output conv. The encoder variant selects the conv stage
used by every encoder block *and* by the front of the bottleneck:

* ``A``: conv(s=1) + maxpool(s=2)
* ``B``: conv(s=1) + conv(s=2)
* ``C``: conv(s=1) x2 + maxpool(s=2)

The bottleneck is the variant's down stage followed by a stride-2 transposed
conv; each decoder block concatenates the matching encoder skip, applies two
stride-1 convs and upsamples with a stride-2 transposed conv. Every conv
except the output conv is followed by batchnorm + ReLU; transposed convs get
a ReLU only. Channel widths double per level from ``base_channels``.

With 240 input bands the spatial trace at depth 3 is
240 -> 120 -> 60 -> 30 -> 15 -> 30 -> 60 -> 120 -> 240.
"""

import copy
from dataclasses import dataclass

import numpy as np

from . import ops
from .layers import (
    BatchNorm1D,
    Conv1D,
    ConvTranspose1D,
    MaxPool1D,
    ReLU,
    he_uniform,
)

DEPTH_NAMES = ("I", "II", "III", "IV")
VARIANTS = ("A", "B", "C")


@dataclass(frozen=True)
class ArchitectureConfig:
    """One point of the 4 x 3 ablation grid (depths I-IV, variants A/B/C)."""

    depth: int
    variant: str
    base_channels: int = 16
    kernel_size: int = 3
    bands: int = 240

    def __post_init__(self):
        if not 0 <= self.depth <= 3:
            raise ops.ConfigError(f"depth must be 0..3, got {self.depth}")
        if self.variant not in VARIANTS:
            raise ops.ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.base_channels < 1:
            raise ops.ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ops.ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.bands % (2 ** (self.depth + 1)):
            raise ops.ConfigError(
                f"bands ({self.bands}) must be divisible by 2^(depth+1) "
                f"= {2 ** (self.depth + 1)}"
            )

    @property
    def name(self):
        return f"{DEPTH_NAMES[self.depth]}-{self.variant}"

    def to_dict(self):
        return {
            "depth": self.depth, "variant": self.variant,
            "base_channels": self.base_channels,
            "kernel_size": self.kernel_size, "bands": self.bands,
        }


def ablation_grid(base_channels=16, kernel_size=3, bands=240):
    """All 12 grid configs in table order: depth-major, variant-minor."""
    return [
        ArchitectureConfig(d, v, base_channels, kernel_size, bands)
        for d in range(4)
        for v in VARIANTS
    ]


@dataclass(frozen=True)
class PlanEntry:
    """One layer of the architecture plan with its shape bookkeeping."""

    block: str
    name: str     # qualified, e.g. "enc1.conv2"
    kind: str     # conv | convtr | bn | relu | pool
    cin: int
    cout: int
    k: int
    stride: int
    in_len: int
    out_len: int


def _down_stage(entries, block, variant, cin, cout, k, length):
    """Conv stage + downsample shared by encoder blocks and the bottleneck."""

    def conv(idx, ci, co, stride, lin):
        lout = -(-lin // stride)
        entries.append(PlanEntry(block, f"{block}.conv{idx}", "conv",
                                 ci, co, k, stride, lin, lout))
        entries.append(PlanEntry(block, f"{block}.bn{idx}", "bn",
                                 co, co, 0, 1, lout, lout))
        entries.append(PlanEntry(block, f"{block}.relu{idx}", "relu",
                                 co, co, 0, 1, lout, lout))
        return lout

    if variant == "A":
        length = conv(1, cin, cout, 1, length)
        entries.append(PlanEntry(block, f"{block}.pool", "pool",
                                 cout, cout, 0, 2, length, length // 2))
        length //= 2
    elif variant == "B":
        length = conv(1, cin, cout, 1, length)
        length = conv(2, cout, cout, 2, length)
    else:  # C
        length = conv(1, cin, cout, 1, length)
        length = conv(2, cout, cout, 1, length)
        entries.append(PlanEntry(block, f"{block}.pool", "pool",
                                 cout, cout, 0, 2, length, length // 2))
        length //= 2
    return length


def layer_plan(config):
    """Flat layer list for a config, in forward order (skips excluded)."""
    n, base, k = config.depth, config.base_channels, config.kernel_size
    width = lambda level: base * 2 ** level  # level 0 is the outermost
    entries = []
    length = config.bands

    cin = 1
    for i in range(n):
        cout = width(i)
        length = _down_stage(entries, f"enc{i + 1}", config.variant,
                             cin, cout, k, length)
        cin = cout

    bott_width = base * 2 ** n
    up_out = width(max(n - 1, 0))
    length = _down_stage(entries, "bott", config.variant,
                         cin, bott_width, k, length)
    entries.append(PlanEntry("bott", "bott.up", "convtr",
                             bott_width, up_out, k, 2, length, 2 * length))
    entries.append(PlanEntry("bott", "bott.uprelu", "relu",
                             up_out, up_out, 0, 1, 2 * length, 2 * length))
    length *= 2

    for j in range(n):
        level = n - 1 - j
        s = width(level)
        block = f"dec{j + 1}"
        # concat with the encoder skip doubles the channels, costs nothing
        for idx, ci in ((1, 2 * s), (2, s)):
            entries.append(PlanEntry(block, f"{block}.conv{idx}", "conv",
                                     ci, s, k, 1, length, length))
            entries.append(PlanEntry(block, f"{block}.bn{idx}", "bn",
                                     s, s, 0, 1, length, length))
            entries.append(PlanEntry(block, f"{block}.relu{idx}", "relu",
                                     s, s, 0, 1, length, length))
        up_out = width(max(level - 1, 0))
        entries.append(PlanEntry(block, f"{block}.up", "convtr",
                                 s, up_out, k, 2, length, 2 * length))
        entries.append(PlanEntry(block, f"{block}.uprelu", "relu",
                                 up_out, up_out, 0, 1, 2 * length, 2 * length))
        length *= 2

    entries.append(PlanEntry("out", "out.conv", "conv",
                             up_out, 1, k, 1, length, length))
    return entries


def _instantiate(entry, rng, dtype):
    k = entry.k
    if entry.kind == "conv":
        w = he_uniform(rng, (entry.cout, entry.cin, k), entry.cin * k, dtype)
        return Conv1D(w, np.zeros(entry.cout, dtype), entry.stride, entry.name)
    if entry.kind == "convtr":
        w = he_uniform(rng, (entry.cin, entry.cout, k), entry.cin * k, dtype)
        return ConvTranspose1D(w, np.zeros(entry.cout, dtype), entry.stride, entry.name)
    if entry.kind == "bn":
        c = entry.cout
        return BatchNorm1D(np.ones(c, dtype), np.zeros(c, dtype),
                           np.zeros(c, dtype), np.ones(c, dtype), name=entry.name)
    if entry.kind == "relu":
        return ReLU(entry.name)
    if entry.kind == "pool":
        return MaxPool1D(entry.name)
    raise ValueError(entry.kind)


class Model:
    """A built network: blocks of layers plus the skip topology."""

    def __init__(self, config, seed, encoders, bottleneck, decoders, out_conv,
                 dtype=np.float32):
        self.config = config
        self.seed = seed
        self.encoders = encoders
        self.bottleneck = bottleneck
        self.decoders = decoders
        self.out_conv = out_conv
        self.dtype = np.dtype(dtype)

    # ---- structure walking -------------------------------------------------

    def iter_layers(self):
        for block in self.encoders:
            yield from block
        yield from self.bottleneck
        for block in self.decoders:
            yield from block
        yield self.out_conv

    def named_params(self):
        """(name, array) pairs for every trainable parameter, forward order."""
        out = []
        for layer in self.iter_layers():
            for p in layer.param_names:
                out.append((f"{layer.name}.{p}", getattr(layer, p)))
        return out

    def named_stats(self):
        out = []
        for layer in self.iter_layers():
            for p in layer.stat_names:
                out.append((f"{layer.name}.{p}", getattr(layer, p)))
        return out

    def set_tensor(self, name, value):
        layer_name, attr = name.rsplit(".", 1)
        for layer in self.iter_layers():
            if layer.name == layer_name:
                current = getattr(layer, attr)
                if current.shape != value.shape:
                    raise ops.ShapeError(
                        f"tensor {name}: stored shape {value.shape} != "
                        f"expected {current.shape}"
                    )
                setattr(layer, attr, value)
                return
        raise KeyError(name)

    def clone(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        """A copy of the model with every tensor cast to ``dtype``."""
        dtype = np.dtype(dtype)
        out = self.clone()
        out.dtype = dtype
        for layer in out.iter_layers():
            for p in layer.param_names + layer.stat_names:
                setattr(layer, p, getattr(layer, p).astype(dtype))
        return out

    def n_params(self):
        return sum(int(a.size) for _, a in self.named_params())

    # ---- running the network -----------------------------------------------

    def _as_batch(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, None, :]
        elif x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != 1:
            raise ops.ShapeError(f"expected (batch, bands) input, got {x.shape}")
        if x.shape[2] != self.config.bands:
            raise ops.ShapeError(
                f"input length {x.shape[2]} != configured bands {self.config.bands}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in model input")
        return x

    @staticmethod
    def _run_chain(block, x, training, update_stats, caches):
        for layer in block:
            if isinstance(layer, BatchNorm1D):
                x, c = layer.forward(x, training, update_stats)
            else:
                x, c = layer.forward(x, training)
            if caches is not None:
                caches.append(c)
        return x

    def forward(self, x, training=False, update_stats=True, with_cache=False):
        """Run the network; training mode uses batch statistics.

        Returns the output with the same leading shape as the input, or
        ``(output, cache)`` when ``with_cache`` is set (needed by backward).
        """
        ndim = np.ndim(x)
        h = self._as_batch(x)
        caches = {"enc": [], "bott": [], "dec": [], "dec_split": []} if with_cache else None
        skips = []
        for enc in self.encoders:
            block_cache = [] if with_cache else None
            h = self._run_chain(enc, h, training, update_stats, block_cache)
            if with_cache:
                caches["enc"].append(block_cache)
            skips.append(h)
        block_cache = [] if with_cache else None
        h = self._run_chain(self.bottleneck, h, training, update_stats, block_cache)
        if with_cache:
            caches["bott"] = block_cache
        for j, dec in enumerate(self.decoders):
            skip = skips[len(skips) - 1 - j]
            if with_cache:
                caches["dec_split"].append(h.shape[1])
            h = ops.concat_channels(h, skip)
            block_cache = [] if with_cache else None
            h = self._run_chain(dec, h, training, update_stats, block_cache)
            if with_cache:
                caches["dec"].append(block_cache)
        y, out_cache = self.out_conv.forward(h, training)
        if with_cache:
            caches["out"] = out_cache
            return self._like_input(y, ndim), caches
        return self._like_input(y, ndim)

    @staticmethod
    def _like_input(y, ndim):
        if ndim == 1:
            return y[0, 0]
        if ndim == 2:
            return y[:, 0, :]
        return y

    def backward(self, cache, grad_y):
        """Backpropagate a loss gradient through a cached training forward.

        Returns ``(param_grads, input_grad)`` where ``param_grads`` maps
        parameter names to gradient arrays. The skip gradient is the sum of
        the decoder (concat) path and the downstream encoder path.
        """
        if not isinstance(cache, dict) or "out" not in cache:
            raise ValueError("backward needs the cache of a training-mode forward")
        grads = {}

        def store(layer, pgrads):
            for pname, g in pgrads.items():
                grads[f"{layer.name}.{pname}"] = g

        g = np.asarray(grad_y, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None, None, :]
        elif g.ndim == 2:
            g = g[:, None, :]

        g, pg = self.out_conv.backward(g, cache["out"])
        store(self.out_conv, pg)

        skip_grads = [None] * len(self.encoders)
        for j in range(len(self.decoders) - 1, -1, -1):
            block = self.decoders[j]
            block_cache = cache["dec"][j]
            for layer, lcache in zip(reversed(block), reversed(block_cache)):
                g, pg = layer.backward(g, lcache)
                store(layer, pg)
            g, g_skip = ops.concat_channels_backward(g, cache["dec_split"][j])
            skip_grads[len(self.encoders) - 1 - j] = g_skip

        for layer, lcache in zip(reversed(self.bottleneck), reversed(cache["bott"])):
            g, pg = layer.backward(g, lcache)
            store(layer, pg)

        for i in range(len(self.encoders) - 1, -1, -1):
            if skip_grads[i] is not None:
                g = g + skip_grads[i]
            for layer, lcache in zip(reversed(self.encoders[i]), reversed(cache["enc"][i])):
                g, pg = layer.backward(g, lcache)
                store(layer, pg)
        return grads, g[:, 0, :]


def build_model(config, seed, dtype=np.float32):
    """Instantiate a model from its config with seeded fan-in uniform init."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    plan = layer_plan(config)
    encoders = [[] for _ in range(config.depth)]
    bottleneck, decoders, out = [], [[] for _ in range(config.depth)], []
    for entry in plan:
        layer = _instantiate(entry, rng, dtype)
        if entry.block.startswith("enc"):
            encoders[int(entry.block[3:]) - 1].append(layer)
        elif entry.block == "bott":
            bottleneck.append(layer)
        elif entry.block.startswith("dec"):
            decoders[int(entry.block[3:]) - 1].append(layer)
        else:
            out.append(layer)
    return Model(config, seed, encoders, bottleneck, decoders, out[0], dtype)
