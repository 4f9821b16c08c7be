"""Unsupervised training of the unrolled network, and checkpoint I/O.

Each sample runs the four descent steps from a noise-perturbed content image,
evaluates the full objective against a per-style target, backpropagates to
every weight and takes one Adam step. Styles rotate round-robin across
samples; the conv stacks are shared, the style matrices are per style. A
held-out split provides a per-epoch validation curve.
"""

from __future__ import annotations

import copy
import csv
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import imagecodec
from .network import (
    CHANNELS,
    NUM_STEPS,
    StyleParams,
    UnrolledModel,
    descent_step,
)
from .perceptual import (
    DEFAULT_CHANNELS,
    FeatureExtractor,
    LossWeights,
    StyleTarget,
    build_style_target,
    default_extractor,
    extract_features,
    total_loss,
)
from .solver import DivergenceError
from .tensor import (
    ConvLayer,
    GradTape,
    NonFiniteError,
    Tensor,
    backward,
    xavier_init,
    xavier_init_rng,
)

__all__ = [
    "AdamState", "TrainConfig", "TrainResult", "adam_step", "load_checkpoint",
    "load_content_set", "load_extractor", "save_checkpoint", "save_extractor",
    "train", "write_training_log", "xavier_init", "xavier_init_rng",
]


@dataclass
class AdamState:
    """First/second moment accumulators mirroring a parameter list."""

    params: list[Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(state: AdamState, grads: list[np.ndarray], lr: float):
    """One bias-corrected Adam update, in place on the tracked parameters."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient; Adam step aborted")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v, g in zip(state.params, state.m, state.v, grads):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainConfig:
    """Desk-scale defaults; the full-scale run used 17 epochs at side 320."""

    epochs: int = 2
    side: int = 64
    lam_c: float = 0.025
    lam_tv: float = 0.5
    lr: float = 1e-5
    batch_size: int = 1
    noise_bound: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr < 0 or self.noise_bound < 0:
            raise ValueError("epochs, lr and noise bound must be >= 0")
        if self.side <= 0 or self.side % 8:
            raise ValueError("side must be a positive multiple of 8")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")


def _resize_axis(n_in, n_out):
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    t = src - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, 1.0 - t, t


def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centers bilinear resize of a (c, h, w) array."""
    _, h, w = data.shape
    r0, r1, wr0, wr1 = _resize_axis(h, out_h)
    c0, c1, wc0, wc1 = _resize_axis(w, out_w)
    rows = data[:, r0, :] * wr0[None, :, None] + data[:, r1, :] * wr1[None, :, None]
    return rows[:, :, c0] * wc0[None, None, :] + rows[:, :, c1] * wc1[None, None, :]


def load_content_set(directory, side: int):
    """Decode, center-crop square and resize every image in a directory.

    Files are taken in lexicographic name order; undecodable files are
    skipped with a warning. Returns (images, names).
    """
    import os
    names = sorted(os.listdir(directory))
    images, kept = [], []
    for name in names:
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            continue
        try:
            img = imagecodec.read_image(path)
        except imagecodec.CodecError as exc:
            warnings.warn(f"skipping undecodable image {name}: {exc}")
            continue
        s = min(img.height, img.width)
        top = (img.height - s) // 2
        left = (img.width - s) // 2
        square = img.data[:, top:top + s, left:left + s]
        images.append(Tensor(np.clip(resize_bilinear(square, side, side), 0.0, 1.0)))
        kept.append(name)
    if not images:
        raise ValueError(f"no decodable images in {directory}")
    return images, kept


@dataclass
class EpochRow:
    epoch: int
    total: float
    content: float
    style: float
    tv: float


@dataclass
class TrainResult:
    model: UnrolledModel
    rows: list[EpochRow]
    targets: list[StyleTarget]
    val_names: list[str]


def _forward_net(img: Tensor, model, style_i) -> Tensor:
    x = img
    for t in range(NUM_STEPS):
        x = descent_step(x, t, model, style_i)
    return x


def _validation_row(epoch, model, val_imgs, val_feats, targets, fe, weights):
    acc = np.zeros(4)
    for i, img in enumerate(val_imgs):
        style_i = i % len(targets)
        x4 = _forward_net(img, model, style_i)
        _, parts = total_loss(x4, val_feats[i], targets[style_i], fe, weights,
                              return_parts=True)
        acc += (parts.total, parts.content, parts.style, parts.tv)
    acc /= len(val_imgs)
    return EpochRow(epoch, *(float(a) for a in acc))


def train(model: UnrolledModel, styles, contents_dir, cfg: TrainConfig) -> TrainResult:
    """Train in place; returns the model plus the per-epoch validation curve.

    styles: list of (image, optional binary mask) pairs, one entry per style
    slot in the model. Row 0 of the curve is the pre-training loss. The run
    is bit-deterministic given (seed, cfg, file set); on divergence the last
    end-of-epoch snapshot is attached to the raised error.
    """
    if not styles:
        raise ValueError("need at least one style")
    if len(styles) != model.n_styles:
        raise ValueError(f"model has {model.n_styles} style slots, "
                         f"got {len(styles)} styles")
    fe = default_extractor(model.extractor_seed)
    targets = []
    for i, (style_img, style_mask) in enumerate(styles):
        target = build_style_target(style_img, fe, style_mask)
        model.styles[i].lam_s = target.lam_s
        model.styles[i].target_grams = [g.copy() for g in target.grams]
        targets.append(target)
    weights = LossWeights(cfg.lam_c, cfg.lam_tv)

    images, names = load_content_set(contents_dir, cfg.side)
    n_val = max(1, len(images) // 10)
    train_imgs, val_imgs = images[:-n_val] or images[-n_val:], images[-n_val:]
    val_names = names[-n_val:]
    train_feats = [extract_features(img, fe) for img in train_imgs]
    val_feats = [extract_features(img, fe) for img in val_imgs]

    params = model.parameters()
    adam = AdamState(params)
    ss = np.random.SeedSequence(cfg.seed)
    shuffle_rng, noise_rng = (np.random.default_rng(s) for s in ss.spawn(2))

    rows = [_validation_row(0, model, val_imgs, val_feats, targets, fe, weights)]
    last_good = copy.deepcopy(model)
    sample_counter = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_imgs))
        try:
            for idx in order:
                img = train_imgs[idx]
                style_i = sample_counter % len(targets)
                sample_counter += 1
                amp = noise_rng.uniform(0.0, cfg.noise_bound)
                noise = noise_rng.uniform(-amp, amp, size=img.data.shape)
                with GradTape() as tape:
                    x4 = _forward_net(Tensor(img.data + noise), model, style_i)
                    loss = total_loss(x4, train_feats[idx], targets[style_i],
                                      fe, weights)
                    grads = backward(tape, loss)
                grad_list = [grads.get(p, np.zeros_like(p.data)) for p in params]
                adam_step(adam, grad_list, cfg.lr)
            rows.append(_validation_row(epoch, model, val_imgs, val_feats,
                                        targets, fe, weights))
        except NonFiniteError as exc:
            err = DivergenceError(
                f"training diverged in epoch {epoch}: {exc}")
            err.last_good = last_good
            raise err from exc
        last_good = copy.deepcopy(model)
    return TrainResult(model, rows, targets, val_names)


def write_training_log(path, rows: list[EpochRow]):
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "val_total", "val_content", "val_style",
                         "val_tv"])
        for row in rows:
            writer.writerow([row.epoch, repr(row.total), repr(row.content),
                             repr(row.style), repr(row.tv)])


# ---------------------------------------------------------------------------
# checkpoint container
#
# Layout (little-endian):
#   magic "UNRL" | u16 version | u16 section | u16 n_levels | u16 reserved
#   u32 channels[n_levels] | u32 n_styles | u64 extractor_seed
#   u32 style_layer_mask | u32 content_layer_mask      (extractor sections)
#   per style: f64 lam_s
#   per style: u32 n_gram_layers, then per layer u32 side + f64 side^2 entries
#   f32 weight payload in fixed order: forward convs in depth order (kernel
#   then bias), backward convs in depth order, then per style the matrices
#   in (step, level) lexicographic order.

MAGIC = b"UNRL"
VERSION = 1
SECTION_MODEL = 1
SECTION_EXTRACTOR = 2


class CheckpointError(ValueError):
    """Unreadable, wrong-version or wrong-shape checkpoint file."""


def _pack_header(section, channels, n_styles, extractor_seed,
                 style_mask=0, content_mask=0):
    buf = bytearray(MAGIC)
    buf += struct.pack("<HHHH", VERSION, section, len(channels), 0)
    buf += struct.pack(f"<{len(channels)}I", *channels)
    buf += struct.pack("<IQ", n_styles, extractor_seed)
    buf += struct.pack("<II", style_mask, content_mask)
    return buf


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated file")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def take_array(self, count, dtype):
        size = count * np.dtype(dtype).itemsize
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated file")
        arr = np.frombuffer(self.buf, dtype=dtype, count=count,
                            offset=self.pos)
        self.pos += size
        return arr


def _read_header(reader, expect_section):
    magic = bytes(reader.take("<4s")[0])
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    version, section, n_levels, _ = reader.take("<HHHH")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    if section != expect_section:
        raise CheckpointError(f"wrong section tag {section}, "
                              f"expected {expect_section}")
    channels = reader.take(f"<{n_levels}I")
    n_styles, extractor_seed = reader.take("<IQ")
    style_mask, content_mask = reader.take("<II")
    return channels, n_styles, extractor_seed, style_mask, content_mask


def _model_weight_arrays(model: UnrolledModel):
    arrays = []
    for layer in model.fwd + model.bwd:
        arrays.append(layer.kernel.data)
        arrays.append(layer.bias.data)
    for style in model.styles:
        for t in range(NUM_STEPS):
            for l in range(len(CHANNELS)):
                arrays.append(style.h[t][l].data)
    return arrays


def save_checkpoint(model: UnrolledModel, path):
    """Serialize all weights (32-bit) and per-style metadata."""
    buf = _pack_header(SECTION_MODEL, CHANNELS, model.n_styles,
                       model.extractor_seed)
    for style in model.styles:
        buf += struct.pack("<d", style.lam_s)
    for style in model.styles:
        grams = style.target_grams or []
        buf += struct.pack("<I", len(grams))
        for g in grams:
            buf += struct.pack("<I", g.shape[0])
            buf += np.ascontiguousarray(g, dtype="<f8").tobytes()
    for arr in _model_weight_arrays(model):
        buf += arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_checkpoint(path) -> UnrolledModel:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    channels, n_styles, extractor_seed, _, _ = _read_header(
        reader, SECTION_MODEL)
    if tuple(channels) != CHANNELS:
        raise CheckpointError(f"unsupported channel schedule {channels}")
    lam_s = [reader.take("<d")[0] for _ in range(n_styles)]
    all_grams = []
    for _ in range(n_styles):
        n_layers = reader.take("<I")[0]
        grams = []
        for _ in range(n_layers):
            side = reader.take("<I")[0]
            grams.append(reader.take_array(side * side, "<f8")
                         .astype(np.float64).reshape(side, side))
        all_grams.append(grams)

    def take_weights(shape):
        arr = reader.take_array(int(np.prod(shape)), "<f4")
        return Tensor(arr.astype(np.float64).reshape(shape))

    fwd, bwd = [], []
    in_ch = 3
    for out_ch in CHANNELS:
        fwd.append(ConvLayer(take_weights((out_ch, in_ch, 3, 3)),
                             take_weights((out_ch,)), relu=True))
        in_ch = out_ch
    rev = (3,) + CHANNELS[:-1]
    for i in range(len(CHANNELS) - 1, -1, -1):
        bwd.append(ConvLayer(take_weights((rev[i], CHANNELS[i], 3, 3)),
                             take_weights((rev[i],)), relu=i > 0))
    styles = []
    for s in range(n_styles):
        h = [[take_weights((c, c)) for c in CHANNELS] for _ in range(NUM_STEPS)]
        styles.append(StyleParams(h, lam_s[s], all_grams[s] or None))
    if reader.pos != len(reader.buf):
        raise CheckpointError(
            f"{len(reader.buf) - reader.pos} unexpected trailing bytes")
    return UnrolledModel(fwd, bwd, styles, extractor_seed=extractor_seed)


def save_extractor(fe: FeatureExtractor, path):
    """Extractor weights in the shared container, distinct section tag."""
    def mask(levels):
        return sum(1 << l for l in levels)

    buf = _pack_header(SECTION_EXTRACTOR, fe.channel_counts, 0, fe.seed,
                       mask(fe.style_layers), mask(fe.content_layers))
    for layer in fe.layers:
        buf += layer.kernel.data.astype("<f4").tobytes()
        buf += layer.bias.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_extractor(path) -> FeatureExtractor:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    channels, _, seed, style_mask, content_mask = _read_header(
        reader, SECTION_EXTRACTOR)
    layers = []
    in_ch = 3
    for out_ch in channels:
        kernel = reader.take_array(out_ch * in_ch * 9, "<f4")
        bias = reader.take_array(out_ch, "<f4")
        layers.append(ConvLayer(
            Tensor(kernel.astype(np.float64).reshape(out_ch, in_ch, 3, 3)),
            Tensor(bias.astype(np.float64)), relu=True))
        in_ch = out_ch
    if reader.pos != len(reader.buf):
        raise CheckpointError(
            f"{len(reader.buf) - reader.pos} unexpected trailing bytes")
    unmask = lambda m: tuple(l for l in range(len(channels)) if m >> l & 1)
    return FeatureExtractor(layers, unmask(style_mask), unmask(content_mask),
                            seed=seed)
