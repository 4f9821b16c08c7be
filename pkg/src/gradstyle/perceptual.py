"""Feature extraction and the style-transfer objective.

The total objective combines a content term, a (optionally masked) Gram-matrix
style term and a squared total-variation term, all evaluated on the clipped
image. The feature extractor is pluggable: the default is a small seeded
5-level conv+pool pyramid that is deterministic and dependency-free; weights
trained elsewhere can be loaded through the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConvLayer,
    Tensor,
    avg_pool2,
    clip_unit,
    conv2d_reflect,
    lincomb,
    masked_gram,
    sqsum,
    tv,
    xavier_init_rng,
)


class DegenerateMaskError(ValueError):
    """A propagated mask has empty support at some pyramid level."""


DEFAULT_CHANNELS = (8, 16, 32, 64, 64)


@dataclass
class FeatureExtractor:
    """Fixed-weight conv/pool pyramid producing one feature map per level.

    Levels are separated by 2x2 average pooling, so level l runs at 1/2^(l)
    of the input resolution (level 0 at full resolution). style_layers and
    content_layers are 0-based level indices.
    """

    layers: list[ConvLayer]
    style_layers: tuple[int, ...]
    content_layers: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.style_layers or not self.content_layers:
            raise ValueError("need at least one style layer and one content layer")

    @property
    def depth(self):
        return len(self.layers)

    @property
    def channel_counts(self):
        return tuple(layer.out_ch for layer in self.layers)


def default_extractor(seed: int = 0) -> FeatureExtractor:
    """5-level extractor with channels (8, 16, 32, 64, 64), seeded Xavier weights.

    Style statistics are read from all five levels, content from the fourth.
    Biases are zero, so the extractor is positively homogeneous.
    """
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = 3
    for out_ch in DEFAULT_CHANNELS:
        kernel = Tensor(xavier_init_rng(rng, (out_ch, in_ch, 3, 3)))
        bias = Tensor(np.zeros(out_ch))
        layers.append(ConvLayer(kernel, bias, relu=True))
        in_ch = out_ch
    return FeatureExtractor(layers, style_layers=(0, 1, 2, 3, 4),
                            content_layers=(3,), seed=seed)


def extract_features(x: Tensor, fe: FeatureExtractor) -> list[Tensor]:
    """One feature map per level; deterministic for fixed weights."""
    if x.channels != 3:
        raise ValueError(f"expected a 3-channel image, got {x.channels}")
    div = 2 ** (fe.depth - 1)
    if x.height % div or x.width % div:
        raise ValueError(
            f"spatial dims {x.height}x{x.width} not divisible by {div}")
    feats = []
    cur = x
    for i, layer in enumerate(fe.layers):
        cur = conv2d_reflect(cur, layer)
        feats.append(cur)
        if i + 1 < fe.depth:
            cur = avg_pool2(cur)
    return feats


# ---------------------------------------------------------------------------
# masks


@dataclass
class MaskPyramid:
    """Per-level flat 0/1 pixel weights with cached traces."""

    masks: list[np.ndarray]
    traces: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.traces:
            self.traces = [float(m.sum()) for m in self.masks]

    @property
    def levels(self):
        return len(self.masks)


def build_mask_pyramid(mask: np.ndarray, levels: int) -> MaskPyramid:
    """Propagate a full-resolution binary mask down a halving pyramid.

    Each level is the block mean of the original mask at that resolution,
    thresholded at 0.5 with ties mapping to 1. Raises if any level ends up
    empty.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError("mask must be a 2-D image")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask entries must be 0 or 1")
    out = []
    cur = mask
    for lvl in range(levels):
        if lvl > 0:
            h, w = cur.shape
            if h % 2 or w % 2:
                raise ValueError("mask dims must halve cleanly at every level")
            cur = cur.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
        binary = (cur >= 0.5).astype(np.float64)
        if binary.sum() <= 0:
            raise DegenerateMaskError(f"mask is empty at pyramid level {lvl}")
        out.append(binary.reshape(-1))
    return MaskPyramid(out)


def propagate_mask(mask: np.ndarray, fe: FeatureExtractor) -> MaskPyramid:
    """Mask pyramid matching the extractor's level resolutions."""
    return build_mask_pyramid(mask, fe.depth)


# ---------------------------------------------------------------------------
# Gram matrices and style targets


def gram(f: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Normalized channel Gram of a feature map, optionally pixel-masked.

    With an all-ones mask this equals the unmasked form exactly.
    """
    return masked_gram(f, mask)


@dataclass
class StyleTarget:
    """Per-style-layer normalized Gram matrices plus the auto style weight."""

    grams: list[np.ndarray]
    lam_s: float

    def __post_init__(self):
        if self.lam_s <= 0:
            raise ValueError("style weight must be positive")


def style_weight_auto(style: Tensor, fe: FeatureExtractor,
                      style_mask: np.ndarray | None = None) -> float:
    """Reciprocal of the mean squared Gram energy of the style image.

    Normalizing by this value gives different styles a comparable initial
    pull. Scaling the style features by s scales the result by s^-4.
    """
    grams = _style_grams(style, fe, style_mask)
    return _weight_from_grams(grams, fe)


def _style_grams(style, fe, style_mask):
    pyramid = propagate_mask(style_mask, fe) if style_mask is not None else None
    feats = extract_features(style, fe)
    grams = []
    for i, lvl in enumerate(fe.style_layers):
        m = pyramid.masks[lvl] if pyramid is not None else None
        grams.append(gram(feats[lvl], m).data)
    return grams

def _weight_from_grams(grams, fe):
    acc = 0.0
    for g in grams:
        c = g.shape[0]
        acc += np.sum(g * g) / (c * c)
    acc /= len(fe.style_layers)
    if acc <= 0.0:
        raise ValueError("style image has all-zero Gram matrices; "
                         "style weight is undefined")
    return float(1.0 / acc)


def build_style_target(style: Tensor, fe: FeatureExtractor,
                       style_mask: np.ndarray | None = None) -> StyleTarget:
    grams = _style_grams(style, fe, style_mask)
    return StyleTarget(grams, _weight_from_grams(grams, fe))


# ---------------------------------------------------------------------------
# loss terms


def content_loss(x_feats: list[Tensor], c_feats: list[Tensor],
                 fe: FeatureExtractor) -> Tensor:
    """Mean over content layers of ||F - C||_F^2 / (pixels * channels)."""
    total = None
    for lvl in fe.content_layers:
        f, c = x_feats[lvl], c_feats[lvl]
        if f.shape != c.shape:
            raise ValueError(f"content layer {lvl} shape mismatch: "
                             f"{f.shape} vs {c.shape}")
        n = f.height * f.width
        term = sqsum(lincomb(f, c, 1.0, -1.0))
        scale = 1.0 / (len(fe.content_layers) * n * f.channels)
        total = lincomb(term, a=scale) if total is None else \
            lincomb(total, term, 1.0, scale)
    return total


def style_loss(x_feats: list[Tensor], target: StyleTarget, fe: FeatureExtractor,
               content_masks: MaskPyramid | None = None) -> Tensor:
    """Mean over style layers of ||Gram(F) - G||_F^2 / channels^2.

    content_masks, when given, restrict the Gram of the current features to a
    semantic region; the stored target Grams already carry the style-side
    masking.
    """
    total = None
    for i, lvl in enumerate(fe.style_layers):
        f = x_feats[lvl]
        m = content_masks.masks[lvl] if content_masks is not None else None
        g = gram(f, m)
        tgt = Tensor(target.grams[i])
        if g.shape != tgt.shape:
            raise ValueError(f"style layer {lvl}: Gram {g.shape} vs "
                             f"target {tgt.shape}")
        term = sqsum(lincomb(g, tgt, 1.0, -1.0))
        scale = 1.0 / (len(fe.style_layers) * f.channels ** 2)
        total = lincomb(term, a=scale) if total is None else \
            lincomb(total, term, 1.0, scale)
    return total


def tv_loss(x: Tensor) -> Tensor:
    """Anisotropic squared total variation of an image."""
    if x.channels != 3:
        raise ValueError("tv_loss expects a 3-channel image")
    return tv(x)


@dataclass
class LossWeights:
    lam_c: float = 0.025
    lam_tv: float = 0.5


@dataclass
class LossParts:
    total: float
    content: float
    style: float
    tv: float


def total_loss(x4: Tensor, c_feats: list[Tensor], target: StyleTarget,
               fe: FeatureExtractor, weights: LossWeights = LossWeights(),
               content_masks: MaskPyramid | None = None,
               return_parts: bool = False):
    """Full training objective evaluated on the clipped image.

    lam_c * content + lam_s * style + lam_tv * tv, with lam_s taken from the
    style target. Differentiable through the tape w.r.t. x4 and any upstream
    weights; pixels outside [0, 1] receive zero gradient from the clip.
    """
    y = clip_unit(x4)
    feats = extract_features(y, fe)
    lc = content_loss(feats, c_feats, fe)
    ls = style_loss(feats, target, fe, content_masks)
    ltv = tv_loss(y)
    total = lincomb(lincomb(lc, ls, weights.lam_c, target.lam_s),
                    ltv, 1.0, weights.lam_tv)
    if not return_parts:
        return total
    parts = LossParts(total.item(), lc.item(), ls.item(), ltv.item())
    return total, parts
