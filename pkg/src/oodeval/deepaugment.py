"""Image augmentation by distorting an image-to-image network mid-flight.

Images pass through a small stack of 3x3 convolutions (channel plan
3-16-16-16-3, stride 1, padding 1) whose weights and feedforward signals are
randomly distorted: weights can be negated, zeroed, flipped/transposed or
scaled before the pass, and after every block the signal can get dropout, a
GELU, random sign flips, or a spatial mirror.  The identity-initialized
network with no distortions reproduces its input bit-exactly, which anchors
the whole pipeline's tests.

All randomness derives from named substreams of one seed, keyed by image
index, so runs are reproducible byte-for-byte and images can be processed in
any order.
"""

from __future__ import annotations

import importlib.resources
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from . import tensorio
from .errors import ConfigError, OodevalError, ShapeError, ValidationError

CHANNEL_PLAN = (3, 16, 16, 16, 3)
KERNEL_SIZE = 3

WEIGHT_OPS = ("negate_weights", "zero_weights", "flip_transpose_weights",
              "scale_weights")
SIGNAL_OPS = ("dropout", "gelu", "negate_signal_random_mask", "flip_signal")

DEFAULT_RATES = {
    "negate_weight_rate": 0.1,   # fraction of filters whose kernel is negated
    "zero_weight_rate": 0.1,     # fraction of kernel entries zeroed
    "dropout_rate": 0.1,         # fraction of activations dropped, no rescale
    "signal_negate_rate": 0.05,  # fraction of activations sign-flipped
    "scale_low": 0.5,
    "scale_high": 2.0,
}

_REFRESH_STREAM = 0
_WEIGHT_STREAM = 1
_SIGNAL_STREAM = 2

NETWORK_BUNDLE_VERSION = 1
_DEFAULT_BUNDLE = "default_random_weights"


@dataclass
class ConvLayer:
    kernel: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray    # (c_out,)


@dataclass
class Img2ImgNet:
    layers: list[ConvLayer]

    @property
    def n_blocks(self) -> int:
        return len(self.layers)

    def copy(self) -> "Img2ImgNet":
        return Img2ImgNet([ConvLayer(l.kernel.copy(), l.bias.copy())
                           for l in self.layers])


@dataclass(frozen=True)
class DistortionOp:
    name: str
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


def identity_network() -> Img2ImgNet:
    """Network whose clean forward pass is exactly the identity on RGB input."""
    layers = []
    for c_in, c_out in zip(CHANNEL_PLAN[:-1], CHANNEL_PLAN[1:]):
        kernel = np.zeros((KERNEL_SIZE, KERNEL_SIZE, c_in, c_out))
        center = KERNEL_SIZE // 2
        for c in range(min(c_in, c_out)):
            kernel[center, center, c, c] = 1.0
        layers.append(ConvLayer(kernel=kernel, bias=np.zeros(c_out)))
    return Img2ImgNet(layers)


def perturbed_identity_network(seed: int, sigma: float = 0.05) -> Img2ImgNet:
    """Identity network plus Gaussian kernel noise; used to build the bundle."""
    rng = np.random.default_rng(seed)
    net = identity_network()
    for layer in net.layers:
        layer.kernel = layer.kernel + sigma * rng.standard_normal(layer.kernel.shape)
    return net


def save_network(net: Img2ImgNet, directory) -> None:
    """Persist a network as an NPY bundle (one kernel/bias pair per layer)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, layer in enumerate(net.layers):
        tensorio.write_array(directory / f"layer{i:02d}_kernel.npy", layer.kernel)
        tensorio.write_array(directory / f"layer{i:02d}_bias.npy", layer.bias)
    meta = {
        "version": NETWORK_BUNDLE_VERSION,
        "n_layers": net.n_blocks,
        "channel_plan": [net.layers[0].kernel.shape[2]]
                        + [l.kernel.shape[3] for l in net.layers],
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")


def load_network(directory) -> Img2ImgNet:
    """Load an NPY weight bundle written by :func:`save_network`."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{directory}: not a weight bundle ({exc})") from exc
    if meta.get("version") != NETWORK_BUNDLE_VERSION:
        raise ConfigError(f"{directory}: unsupported bundle version")
    layers = []
    for i in range(int(meta["n_layers"])):
        kernel = tensorio.read_array(directory / f"layer{i:02d}_kernel.npy")
        bias = tensorio.read_array(directory / f"layer{i:02d}_bias.npy")
        if kernel.ndim != 4 or bias.ndim != 1 or kernel.shape[3] != bias.shape[0]:
            raise ConfigError(f"{directory}: layer {i} has inconsistent shapes")
        if layers and layers[-1].kernel.shape[3] != kernel.shape[2]:
            raise ConfigError(f"{directory}: layer {i} breaks the channel chain")
        layers.append(ConvLayer(kernel=kernel.astype(np.float64),
                                bias=bias.astype(np.float64)))
    net = Img2ImgNet(layers)
    if net.layers[0].kernel.shape[2] != 3 or net.layers[-1].kernel.shape[3] != 3:
        raise ConfigError(f"{directory}: network must map 3 channels to 3 channels")
    return net


def default_random_network() -> Img2ImgNet:
    """The seeded random-init bundle shipped with the package."""
    root = importlib.resources.files("oodeval") / "data" / _DEFAULT_BUNDLE
    return load_network(root)


def conv_forward(feature_map: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Stride-1 cross-correlation with symmetric zero padding, plus bias.

    Output spatial dims equal input dims.
    """
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3:
        raise ShapeError(f"expected (H, W, C) input, got shape {feature_map.shape}")
    kernel, bias = layer.kernel, layer.bias
    if feature_map.shape[2] != kernel.shape[2]:
        raise ShapeError(
            f"input has {feature_map.shape[2]} channels, kernel expects "
            f"{kernel.shape[2]}"
        )
    kh, kw = kernel.shape[:2]
    height, width = feature_map.shape[:2]
    padded = np.pad(feature_map, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    out = np.zeros((height, width, kernel.shape[3]))
    for dy in range(kh):
        for dx in range(kw):
            out += padded[dy:dy + height, dx:dx + width, :] @ kernel[dy, dx]
    return out + bias


def _merged_rates(rates) -> dict:
    merged = dict(DEFAULT_RATES)
    if rates:
        unknown = set(rates) - set(DEFAULT_RATES)
        if unknown:
            raise ConfigError(f"unknown rate parameters: {sorted(unknown)}")
        merged.update(rates)
    return merged


def sample_weight_distortions(rng, rates=None) -> list[DistortionOp]:
    """Uniformly sampled (possibly empty) subset of the weight distortions.

    Each op is included independently with probability 1/2; per-op scalar
    parameters are drawn here, while masks are drawn at application time.
    """
    rates = _merged_rates(rates)
    ops = []
    for name in WEIGHT_OPS:
        if rng.random() >= 0.5:
            continue
        if name == "negate_weights":
            ops.append(DistortionOp(name, {"rate": rates["negate_weight_rate"]}))
        elif name == "zero_weights":
            ops.append(DistortionOp(name, {"rate": rates["zero_weight_rate"]}))
        elif name == "flip_transpose_weights":
            ops.append(DistortionOp(name))
        else:
            factor = rng.uniform(rates["scale_low"], rates["scale_high"])
            ops.append(DistortionOp(name, {"factor": float(factor)}))
    return ops


def sample_signal_distortions(rng, n_blocks: int, rates=None) -> list[list[DistortionOp]]:
    """Per-block subsets of the signal distortions (independent coin per op)."""
    rates = _merged_rates(rates)
    per_block = []
    for _ in range(n_blocks):
        ops = []
        for name in SIGNAL_OPS:
            if rng.random() >= 0.5:
                continue
            if name == "dropout":
                ops.append(DistortionOp(name, {"rate": rates["dropout_rate"]}))
            elif name == "gelu":
                ops.append(DistortionOp(name))
            elif name == "negate_signal_random_mask":
                ops.append(DistortionOp(name, {"rate": rates["signal_negate_rate"]}))
            else:
                ops.append(DistortionOp(name, {"axis": int(rng.integers(2))}))
        per_block.append(ops)
    return per_block


def apply_weight_distortions(net: Img2ImgNet, weight_ops, rng) -> Img2ImgNet:
    """Return a distorted copy of ``net`` with the ops applied in given order."""
    net = net.copy()
    for op in weight_ops:
        if op.name == "negate_weights":
            for layer in net.layers:
                mask = rng.random(layer.kernel.shape[3]) < op.params["rate"]
                layer.kernel[..., mask] *= -1.0
        elif op.name == "zero_weights":
            for layer in net.layers:
                mask = rng.random(layer.kernel.shape) < op.params["rate"]
                layer.kernel[mask] = 0.0
        elif op.name == "flip_transpose_weights":
            for layer in net.layers:
                if rng.random() < 0.5:
                    layer.kernel = layer.kernel[::-1, ::-1].copy()
                if rng.random() < 0.5 and layer.kernel.shape[2] == layer.kernel.shape[3]:
                    layer.kernel = layer.kernel.swapaxes(2, 3).copy()
        elif op.name == "scale_weights":
            # One randomly chosen layer, so the end-to-end gain of the conv
            # stack changes by exactly the drawn factor rather than factor^L.
            layer = net.layers[int(rng.integers(len(net.layers)))]
            layer.kernel *= op.params["factor"]
        else:
            raise ConfigError(f"unknown weight distortion {op.name!r}")
    return net


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def apply_signal_op(x: np.ndarray, op: DistortionOp, rng) -> np.ndarray:
    if op.name == "dropout":
        if rng is None:
            raise ConfigError("dropout needs an rng")
        return x * (rng.random(x.shape) >= op.params["rate"])
    if op.name == "gelu":
        return gelu(x)
    if op.name == "negate_signal_random_mask":
        if rng is None:
            raise ConfigError("negate_signal_random_mask needs an rng")
        return np.where(rng.random(x.shape) < op.params["rate"], -x, x)
    if op.name == "flip_signal":
        axis = op.params["axis"]
        if axis not in (0, 1):
            raise ConfigError(f"flip axis must be 0 or 1, got {axis}")
        return np.flip(x, axis=axis)
    raise ConfigError(f"unknown signal distortion {op.name!r}")


def deepaugment_forward(net: Img2ImgNet, image: np.ndarray, signal_ops,
                        rng=None) -> np.ndarray:
    """One distorted forward pass; output is clamped to [0, 1].

    ``signal_ops`` holds one op list per block, applied after that block in
    order.  With the identity network and no ops the output equals the input
    bit-exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValidationError("image contains non-finite values")
    signal_ops = list(signal_ops)
    if len(signal_ops) != net.n_blocks:
        raise ConfigError(
            f"got signal ops for {len(signal_ops)} blocks, network has "
            f"{net.n_blocks}"
        )
    x = image
    for layer, block_ops in zip(net.layers, signal_ops):
        x = conv_forward(x, layer)
        for op in block_ops:
            x = apply_signal_op(x, op, rng)
    return np.clip(x, 0.0, 1.0)


def _stream(seed: int, stream: int, index: int):
    return np.random.default_rng([int(seed), stream, index])


def _resolve_base_net(weights) -> Img2ImgNet:
    if weights is None or weights == "random":
        return default_random_network()
    if weights == "identity":
        return identity_network()
    if isinstance(weights, Img2ImgNet):
        return weights
    return load_network(weights)


class _NetworkSampler:
    """Refresh bookkeeping: which images resample the distorted network."""

    def __init__(self, base_net, seed, refresh_prob, rates):
        self.base_net = base_net
        self.seed = seed
        self.refresh_prob = refresh_prob
        self.rates = rates
        self.net = None
        self.refreshes = []

    def net_for(self, index: int) -> Img2ImgNet:
        refresh = index == 0 or (
            _stream(self.seed, _REFRESH_STREAM, index).random() < self.refresh_prob
        )
        if refresh:
            rng = _stream(self.seed, _WEIGHT_STREAM, index)
            ops = sample_weight_distortions(rng, self.rates)
            self.net = apply_weight_distortions(self.base_net, ops, rng)
            self.refreshes.append(
                {"image_index": index, "weight_ops": [op.as_dict() for op in ops]}
            )
        return self.net


def augment_arrays(images, seed: int, refresh_prob: float = 0.05,
                   weights="random", rates=None):
    """Augment in-memory images; returns (outputs, run report).

    The distorted network is sampled once up front and resampled with
    probability ``refresh_prob`` before each subsequent image; fresh signal
    distortions are sampled for every image.  (seed, input order) fully
    determine every draw.
    """
    if not 0.0 <= refresh_prob <= 1.0:
        raise ConfigError(f"refresh probability must be in [0, 1], got {refresh_prob}")
    images = list(images)
    if not images:
        raise ConfigError("image source is empty")
    rates = _merged_rates(rates)
    base_net = _resolve_base_net(weights)
    sampler = _NetworkSampler(base_net, seed, refresh_prob, rates)
    outputs = []
    records = []
    for index, image in enumerate(images):
        net = sampler.net_for(index)
        rng = _stream(seed, _SIGNAL_STREAM, index)
        signal_ops = sample_signal_distortions(rng, net.n_blocks, rates)
        outputs.append(deepaugment_forward(net, image, signal_ops, rng))
        records.append({
            "index": index,
            "signal_ops": [[op.as_dict() for op in block] for block in signal_ops],
        })
    report = {
        "version": 1,
        "seed": int(seed),
        "refresh_prob": float(refresh_prob),
        "n_images": len(outputs),
        "refreshes": sampler.refreshes,
        "images": records,
        "skipped": [],
    }
    return outputs, report


def augment_directory(in_dir, out_dir, seed: int, refresh_prob: float = 0.05,
                      weights="random", rates=None) -> dict:
    """Augment every PNG under ``in_dir`` into ``out_dir``; returns the report.

    Files are processed in sorted-name order; unreadable images are skipped
    with a warning and recorded in the report.  A skipped index still
    consumes its substreams and refresh decision, so the remaining outputs do
    not depend on the bad file's content.
    """
    if not 0.0 <= refresh_prob <= 1.0:
        raise ConfigError(f"refresh probability must be in [0, 1], got {refresh_prob}")
    in_dir = Path(in_dir)
    out_dir = Path(out_dir)
    if not in_dir.is_dir():
        raise ConfigError(f"input directory {in_dir} does not exist")
    paths = sorted(p for p in in_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise ConfigError(f"no PNG images under {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    rates = _merged_rates(rates)
    base_net = _resolve_base_net(weights)
    sampler = _NetworkSampler(base_net, seed, refresh_prob, rates)
    records = []
    skipped = []
    for index, path in enumerate(paths):
        net = sampler.net_for(index)
        rng = _stream(seed, _SIGNAL_STREAM, index)
        signal_ops = sample_signal_distortions(rng, net.n_blocks, rates)
        try:
            image = tensorio.read_image(path)
        except OodevalError as exc:
            warnings.warn(f"skipping {path.name}: {exc}", stacklevel=2)
            skipped.append({"id": path.name, "reason": str(exc)})
            continue
        out_path = out_dir / path.name
        tensorio.write_image(out_path, deepaugment_forward(net, image, signal_ops, rng))
        records.append({
            "id": path.name,
            "index": index,
            "output": path.name,  # relative to the output directory
            "signal_ops": [[op.as_dict() for op in block] for block in signal_ops],
        })
    return {
        "version": 1,
        "seed": int(seed),
        "refresh_prob": float(refresh_prob),
        "weights": weights if isinstance(weights, str) else "custom",
        "n_images": len(paths),
        "refreshes": sampler.refreshes,
        "images": records,
        "skipped": skipped,
    }
