"""Shallow U-Net with densely connected dilated-convolution blocks.

Layout for ``n_levels=2`` and dilations ``(1, 2, 4)``::

    stem 3x3 -> dense block (level 0) ----------------- skip -----+
                     |                                            |
                stride-2 conv -> dense block (level 1)            |
                                      |                           |
                        nearest x2 upsample -> 3x3 conv -> concat +-> 3x3 conv -> 1x1 head

A dense block runs one 3x3 convolution per dilation; each convolution sees the
concatenation of the block input and every earlier output of the block, and
the block emits the concatenation of all its convolution outputs. Only the
stem depends on ``in_channels``.

Parameters live in a flat ``name -> tensor`` mapping so training, gradient
checks and checkpoints all address them the same way.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import LABEL_VALUES
from .errors import ConfigurationError, FormatError, ShapeError
from .seeds import derive_seed

N_CLASSES = 4
DICE_EPS = 1.0
# Output bias starts at log class frequencies (background, core, edema, enhancing).
# The loss only scores foreground classes, so with a neutral start the core class
# tends to absorb the background and training stalls.
HEAD_BIAS_PRIOR = (0.85, 0.04, 0.08, 0.03)
_CLASS_TO_LABEL = np.array(LABEL_VALUES, dtype=np.uint8)


@dataclass(frozen=True)
class ModelSpec:
    in_channels: int = 4
    n_classes: int = N_CLASSES
    base_width: int = 12
    n_levels: int = 2
    dense_block_dilations: tuple[int, ...] = (1, 2, 4)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dense_block_dilations", tuple(int(d) for d in self.dense_block_dilations))

    def validate(self) -> None:
        if self.in_channels not in (4, 5):
            raise ConfigurationError(f"in_channels must be 4 or 5, got {self.in_channels}")
        if self.n_classes != N_CLASSES:
            raise ConfigurationError(f"n_classes is fixed at {N_CLASSES}, got {self.n_classes}")
        if self.base_width < 1 or self.n_levels < 1:
            raise ConfigurationError("base_width and n_levels must be positive")
        if not self.dense_block_dilations or min(self.dense_block_dilations) < 1:
            raise ConfigurationError(f"dilations must be positive, got {self.dense_block_dilations}")

    def width(self, level: int) -> int:
        return self.base_width * 2**level

    def block_out(self, level: int) -> int:
        return self.width(level) * len(self.dense_block_dilations)


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; a pure function of the spec."""
    spec.validate()
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name: str, cin: int, cout: int, k: int = 3) -> None:
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    conv("stem", spec.in_channels, spec.base_width)
    cin = spec.base_width
    for level in range(spec.n_levels):
        w = spec.width(level)
        if level > 0:
            conv(f"down{level - 1}", spec.block_out(level - 1), w)
            cin = w
        for i, _ in enumerate(spec.dense_block_dilations):
            conv(f"enc{level}.dense{i}", cin + i * w, w)
    for level in reversed(range(spec.n_levels - 1)):
        w = spec.width(level)
        conv(f"up{level}", spec.block_out(level + 1), w)
        conv(f"dec{level}", w + spec.block_out(level), w)
    head_in = spec.width(0) if spec.n_levels > 1 else spec.block_out(0)
    conv("head", head_in, spec.n_classes, k=1)
    return shapes


@dataclass
class ModelState:
    spec: ModelSpec
    parameters: dict[str, torch.Tensor] = field(repr=False)

    def to(self, dtype: torch.dtype) -> ModelState:
        return ModelState(self.spec, {k: v.detach().to(dtype).clone() for k, v in self.parameters.items()})

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.parameters.items()}

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(v).all()) for v in self.parameters.values())


def init_model(spec: ModelSpec, dtype: torch.dtype = torch.float32) -> ModelState:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero hidden biases, prior head bias.

    Each tensor draws from its own stream keyed by parameter name, so layers
    shared between the 4- and 5-channel variants start identical.
    """
    params = {}
    for name, shape in parameter_shapes(spec).items():
        if name == "head.bias":
            params[name] = torch.log(torch.tensor(HEAD_BIAS_PRIOR, dtype=torch.float64)).to(dtype)
            continue
        if name.endswith(".bias"):
            params[name] = torch.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        rng = np.random.default_rng(derive_seed(spec.seed, "init", name))
        params[name] = torch.from_numpy(rng.uniform(-bound, bound, size=shape)).to(dtype)
    return ModelState(spec, params)


def _conv(x: torch.Tensor, p: Mapping[str, torch.Tensor], name: str,
          dilation: int = 1, stride: int = 1) -> torch.Tensor:
    w = p[f"{name}.weight"]
    pad = dilation * (w.shape[-1] // 2)
    return F.conv2d(x, w, p[f"{name}.bias"], stride=stride, padding=pad, dilation=dilation)


def logits(spec: ModelSpec, params: Mapping[str, torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    """Batched forward pass ``(N, C, H, W) -> (N, n_classes, H, W)`` on torch tensors."""
    act = F.silu
    h = act(_conv(x, params, "stem"))
    skips = []
    for level in range(spec.n_levels):
        if level > 0:
            h = act(_conv(h, params, f"down{level - 1}", stride=2))
        feats = [h]
        outs = []
        for i, d in enumerate(spec.dense_block_dilations):
            y = act(_conv(torch.cat(feats, 1), params, f"enc{level}.dense{i}", dilation=d))
            feats.append(y)
            outs.append(y)
        h = torch.cat(outs, 1)
        skips.append(h)
    for level in reversed(range(spec.n_levels - 1)):
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = act(_conv(h, params, f"up{level}"))
        h = act(_conv(torch.cat([h, skips[level]], 1), params, f"dec{level}"))
    return _conv(h, params, "head")


def check_input(spec: ModelSpec, shape: tuple[int, ...]) -> None:
    if len(shape) != 3:
        raise ShapeError(f"expected a (channels, height, width) volume, got shape {shape}")
    if shape[0] != spec.in_channels:
        raise ShapeError(f"expected {spec.in_channels} input channels, got {shape[0]}")
    factor = 2 ** (spec.n_levels - 1)
    if shape[1] % factor or shape[2] % factor:
        raise ShapeError(f"spatial dims {shape[1:]} must be divisible by {factor}")


@dataclass
class Prediction:
    class_probabilities: np.ndarray  # (n_classes, H, W)

    @property
    def hard_labels(self) -> np.ndarray:
        return _CLASS_TO_LABEL[np.argmax(self.class_probabilities, axis=0)]


def forward(state: ModelState, image: np.ndarray) -> Prediction:
    check_input(state.spec, image.shape)
    dtype = next(iter(state.parameters.values())).dtype
    x = torch.as_tensor(np.asarray(image), dtype=dtype)[None]
    with torch.no_grad():
        probs = torch.softmax(logits(state.spec, state.parameters, x), dim=1)[0]
    return Prediction(probs.numpy())


def predict_labels(state: ModelState, images: np.ndarray) -> np.ndarray:
    """Hard BraTS labels for a batch ``(N, C, H, W)``."""
    for image in images:
        check_input(state.spec, image.shape)
    dtype = next(iter(state.parameters.values())).dtype
    with torch.no_grad():
        out = logits(state.spec, state.parameters, torch.as_tensor(images, dtype=dtype))
    return _CLASS_TO_LABEL[out.argmax(1).numpy()]


def one_hot(labels: np.ndarray) -> np.ndarray:
    """``(…, H, W)`` BraTS labels to ``(…, n_classes, H, W)`` float one-hot."""
    labels = np.asarray(labels)
    onehot = np.stack([labels == v for v in LABEL_VALUES], axis=-3)
    return onehot.astype(np.float64)


def soft_dice_loss(probs: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Mean foreground soft Dice loss per sample; inputs ``(N, n_classes, H, W)``, returns ``(N,)``."""
    dims = tuple(range(2, probs.ndim))
    p, t = probs[:, 1:], target[:, 1:]
    dice = (2.0 * (p * t).sum(dims) + eps) / (p.sum(dims) + t.sum(dims) + eps)
    return (1.0 - dice).mean(1)


def loss(prediction: Prediction, labels: np.ndarray) -> float:
    probs = np.asarray(prediction.class_probabilities)
    if probs.shape[1:] != np.shape(labels):
        raise ShapeError(f"prediction dims {probs.shape[1:]} do not match labels {np.shape(labels)}")
    value = soft_dice_loss(torch.as_tensor(probs, dtype=torch.float64)[None],
                           torch.as_tensor(one_hot(labels))[None])
    return float(value[0])


def batch_loss(spec: ModelSpec, params: Mapping[str, torch.Tensor],
               images: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    probs = torch.softmax(logits(spec, params, images), dim=1)
    return soft_dice_loss(probs, targets).mean()


def backward(state: ModelState, image: np.ndarray, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of the soft Dice loss of one subject w.r.t. every parameter."""
    check_input(state.spec, image.shape)
    if image.shape[1:] != np.shape(labels):
        raise ShapeError(f"image dims {image.shape[1:]} do not match labels {np.shape(labels)}")
    params = {k: v.detach().clone().requires_grad_(True) for k, v in state.parameters.items()}
    dtype = next(iter(params.values())).dtype
    x = torch.as_tensor(np.asarray(image), dtype=dtype)[None]
    t = torch.as_tensor(one_hot(labels), dtype=dtype)[None]
    value = batch_loss(state.spec, params, x, t)
    grads = torch.autograd.grad(value, list(params.values()))
    return {k: g.numpy() for k, g in zip(params, grads)}


# -- checkpoint file ----------------------------------------------------------
# Text header of key=value lines, an index of "name<TAB>shape<TAB>offset<TAB>count"
# lines, then raw little-endian float32 blobs. Offsets are relative to the first
# byte after the "[data]" line.

_MAGIC = "gradeseg-checkpoint 1"


def save_checkpoint(state: ModelState, path: str | os.PathLike,
                    extra: Mapping[str, object] | None = None) -> None:
    spec = state.spec
    header = [_MAGIC]
    for f in fields(spec):
        value = getattr(spec, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        header.append(f"{f.name}={value}")
    for key, value in (extra or {}).items():
        header.append(f"{key}={value}")
    header.append("[index]")
    blobs = []
    offset = 0
    for name, tensor in state.parameters.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        header.append(f"{name}\t{'x'.join(map(str, arr.shape))}\t{offset}\t{arr.size}")
        blobs.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    header.append("[data]")
    Path(path).write_bytes(("\n".join(header) + "\n").encode("utf-8") + b"".join(blobs))


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelState, dict[str, str]]:
    """Return the state plus any extra header entries (e.g. ``epoch``)."""
    raw = Path(path).read_bytes()
    marker = b"\n[data]\n"
    cut = raw.find(marker)
    if cut < 0 or not raw.startswith(_MAGIC.encode()):
        raise FormatError(f"{path}: not a checkpoint file")
    lines = raw[:cut].decode("utf-8").split("\n")[1:]
    data = raw[cut + len(marker):]
    split = lines.index("[index]")
    meta = dict(line.split("=", 1) for line in lines[:split])
    kwargs = {}
    for f in fields(ModelSpec):
        if f.name not in meta:
            raise FormatError(f"{f.name}: missing from checkpoint header")
        value = meta.pop(f.name)
        kwargs[f.name] = tuple(int(v) for v in value.split(",")) if f.name == "dense_block_dilations" else int(value)
    spec = ModelSpec(**kwargs)
    expected = parameter_shapes(spec)
    params = {}
    for line in lines[split + 1:]:
        name, shape_text, offset, count = line.split("\t")
        shape = tuple(int(s) for s in shape_text.split("x"))
        if expected.get(name) != shape:
            raise FormatError(f"{name}: shape {shape} does not match spec ({expected.get(name)})")
        start, count = int(offset), int(count)
        blob = data[start:start + 4 * count]
        if len(blob) != 4 * count:
            raise FormatError(f"{name}: truncated parameter data")
        params[name] = torch.from_numpy(np.frombuffer(blob, dtype="<f4").reshape(shape).copy())
    missing = set(expected) - set(params)
    if missing:
        raise FormatError(f"{sorted(missing)[0]}: missing from checkpoint index")
    return ModelState(spec, {k: params[k] for k in expected}), meta


def with_seed(spec: ModelSpec, seed: int) -> ModelSpec:
    return replace(spec, seed=seed)
