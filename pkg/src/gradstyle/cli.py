"""Command-line surface: train, stylize, compare, inspect.

Every run writes a sidecar manifest (`key=value` lines) with the fully
resolved configuration so it can be reproduced bit-for-bit. Exit codes:
0 success, 2 invalid flags, 3 I/O or file-format failure, 4 numeric
divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .graphfilter import build_pyramid
from .imagecodec import CodecError, read_image, write_image
from .network import (
    NUM_STEPS,
    InferenceOptions,
    descent_step,
    init_model,
    pad_to_multiple8,
    param_count,
    stylize,
)
from .tensor import Tensor
from .perceptual import (
    LossWeights,
    StyleTarget,
    default_extractor,
    extract_features,
    total_loss,
)
from .solver import DescentConfig, DivergenceError, grad_descent_stylize
from .training import (
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gradstyle",
        description="Fast style transfer via a trainable unrolled descent "
                    "network, with runtime photorealistic restructuring.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a content directory")
    p.add_argument("--contents", required=True, help="directory of content images")
    p.add_argument("--style", required=True, action="append",
                   help="style image (repeat for multiple styles)")
    p.add_argument("--style-mask", action="append", default=None,
                   help="binary mask for the matching --style ('none' to skip)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stylize", help="stylize one image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--style-id", type=int, default=0)
    p.add_argument("--alpha", type=float, default=None,
                   help="transfer intensity (default 1.0, or 1.2 with --photoreal)")
    p.add_argument("--photoreal", action="store_true",
                   help="graph-filter the descent directions at runtime")
    p.add_argument("--lambda-star-frac", type=float, default=0.2)
    p.add_argument("--cheb-order", type=int, default=5)
    p.add_argument("--matting-eps", type=float, default=1e-5)
    p.add_argument("--content-mask", default=None)
    p.add_argument("--blend-mask", default=None)
    p.add_argument("--guided-filter", action="store_true")
    p.add_argument("--gf-radius", type=int, default=8)
    p.add_argument("--gf-eps", type=float, default=1e-4)

    p = sub.add_parser("compare",
                       help="gradient-descent loss trajectory vs the network")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--style-id", type=int, default=0)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--init", choices=("content", "noise"), default="content")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")

    p = sub.add_parser("inspect", help="print parameter counts of a checkpoint")
    p.add_argument("--model", required=True)
    return parser


def _write_manifest(path, entries: dict):
    lines = [f"{k}={entries[k]}" for k in sorted(entries)]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_mask(path, soft: bool) -> np.ndarray:
    img = read_image(path)
    lum = img.data.mean(axis=0)
    return lum if soft else (lum >= 0.5).astype(np.float64)


def _checked_style_id(model, style_id):
    if not 0 <= style_id < model.n_styles:
        raise StyleIdError(f"style id {style_id} out of range "
                           f"(model has {model.n_styles} styles)")
    return style_id


class StyleIdError(ValueError):
    pass


def _cmd_train(args) -> int:
    masks = args.style_mask or []
    if masks and len(masks) != len(args.style):
        raise StyleIdError("--style-mask count must match --style count")
    styles = []
    for i, style_path in enumerate(args.style):
        # style images (and their masks) are mirror-padded so the extractor's
        # full pyramid fits regardless of the source size
        style_img = read_image(style_path)
        padded = _pad_for_loss(style_img.data, 16)
        mask = None
        if masks and masks[i].lower() != "none":
            mask = _pad_for_loss(_read_mask(masks[i], soft=False)[None], 16)[0]
        styles.append((Tensor(padded), mask))
    cfg = TrainConfig(epochs=args.epochs, side=args.size, seed=args.seed)
    model = init_model(seed=args.seed, n_styles=len(styles))
    try:
        result = train(model, styles, args.contents, cfg)
    except DivergenceError as err:
        save_checkpoint(err.last_good, args.out)
        print(f"gradstyle: {err} (last good checkpoint saved)", file=sys.stderr)
        return EXIT_DIVERGED
    save_checkpoint(result.model, args.out)
    write_training_log(f"{args.out}.log.csv", result.rows)
    manifest = {
        "command": "train", "contents": args.contents, "out": args.out,
        "epochs": cfg.epochs, "size": cfg.side, "seed": cfg.seed,
        "lam_c": cfg.lam_c, "lam_tv": cfg.lam_tv, "lr": cfg.lr,
        "noise_bound": cfg.noise_bound, "extractor_seed": model.extractor_seed,
        "n_styles": len(styles),
    }
    for i, style_path in enumerate(args.style):
        manifest[f"style{i}"] = style_path
        manifest[f"style{i}.mask"] = masks[i] if masks else "none"
        manifest[f"style{i}.lam_s"] = repr(result.model.styles[i].lam_s)
    _write_manifest(f"{args.out}.manifest", manifest)
    return EXIT_OK


def _cmd_stylize(args) -> int:
    model = load_checkpoint(args.model)
    style_id = _checked_style_id(model, args.style_id)
    content = read_image(args.input)
    alpha = args.alpha if args.alpha is not None else (
        1.2 if args.photoreal else 1.0)
    hooks = None
    lam_info = {}
    if args.photoreal:
        padded = Tensor(pad_to_multiple8(content.data))
        hooks = build_pyramid(padded, epsilon=args.matting_eps,
                              order=args.cheb_order,
                              lambda_frac=args.lambda_star_frac)
        for lvl, filt in enumerate(hooks.filters):
            if filt is None:  # level too small for a matting window
                lam_info[f"level{lvl}.filter"] = "identity"
            else:
                lam_info[f"level{lvl}.lambda_max"] = repr(filt.lambda_max)
                lam_info[f"level{lvl}.lambda_star"] = repr(filt.lambda_star)
    opts = InferenceOptions(
        alpha=alpha,
        content_mask=(_read_mask(args.content_mask, soft=False)
                      if args.content_mask else None),
        blend_mask=(_read_mask(args.blend_mask, soft=True)
                    if args.blend_mask else None),
        filter_hooks=hooks,
        guided=args.guided_filter,
        gf_radius=args.gf_radius,
        gf_eps=args.gf_eps,
    )
    out = stylize(content, model, style_id, opts)
    write_image(args.output, out)
    manifest = {
        "command": "stylize", "model": args.model, "input": args.input,
        "output": args.output, "style_id": style_id, "alpha": repr(alpha),
        "photoreal": args.photoreal, "cheb_order": args.cheb_order,
        "lambda_star_frac": repr(args.lambda_star_frac),
        "matting_eps": repr(args.matting_eps),
        "content_mask": args.content_mask or "none",
        "blend_mask": args.blend_mask or "none",
        "guided_filter": args.guided_filter, "gf_radius": args.gf_radius,
        "gf_eps": repr(args.gf_eps),
        "style_lam_s": repr(model.styles[style_id].lam_s),
        **lam_info,
    }
    _write_manifest(f"{args.output}.manifest", manifest)
    return EXIT_OK


def _pad_for_loss(data: np.ndarray, multiple: int) -> np.ndarray:
    c, h, w = data.shape
    nh, nw = -(-h // multiple) * multiple, -(-w // multiple) * multiple
    if (nh, nw) == (h, w):
        return data
    ri = np.concatenate([np.arange(h), 2 * (h - 1) - np.arange(h, nh)])
    ci = np.concatenate([np.arange(w), 2 * (w - 1) - np.arange(w, nw)])
    return data[:, ri[:, None], ci[None, :]]


def _cmd_compare(args) -> int:
    model = load_checkpoint(args.model)
    style_id = _checked_style_id(model, args.style_id)
    style = model.styles[style_id]
    if not style.target_grams:
        raise CheckpointError("checkpoint carries no style Gram targets; "
                              "retrain to enable compare")
    target = StyleTarget(style.target_grams, style.lam_s)
    fe = default_extractor(model.extractor_seed)
    content = read_image(args.input)
    # both paths run on the same mirror-padded image so losses are comparable
    padded = Tensor(_pad_for_loss(content.data, 2 ** (fe.depth - 1)))
    cfg = DescentConfig(iters=args.iters, mu=args.mu, init=args.init,
                        seed=args.seed)
    result = grad_descent_stylize(padded, target, fe, cfg)

    x = padded
    for t in range(NUM_STEPS):
        x = descent_step(x, t, model, style_id)
    c_feats = extract_features(padded, fe)
    _, net_parts = total_loss(x, c_feats, target, fe, LossWeights(),
                              return_parts=True)

    rows = [("gd", r.iter, r.total, r.content, r.style, r.tv)
            for r in result.trajectory]
    rows.append(("network", NUM_STEPS, net_parts.total, net_parts.content,
                 net_parts.style, net_parts.tv))
    out_fh = open(args.out, "w", newline="", encoding="ascii") if args.out \
        else sys.stdout
    try:
        writer = csv.writer(out_fh)
        writer.writerow(["method", "iter", "total", "content", "style", "tv"])
        for method, it, total, lc, ls, ltv in rows:
            writer.writerow([method, it, repr(total), repr(lc), repr(ls),
                             repr(ltv)])
    finally:
        if args.out:
            out_fh.close()
    if args.out:
        _write_manifest(f"{args.out}.manifest", {
            "command": "compare", "model": args.model, "input": args.input,
            "style_id": style_id, "iters": args.iters,
            "mu": repr(result.mu), "init": args.init, "seed": args.seed,
            "lam_s": repr(target.lam_s), "out": args.out,
        })
    return EXIT_OK


def _cmd_inspect(args) -> int:
    model = load_checkpoint(args.model)
    fb, per_iter, total = param_count(model)
    print(f"{fb} / {per_iter} / {total}")
    print(f"forward+backward conv weights: {fb}")
    print(f"style weights per step: {per_iter}")
    print(f"total ({model.n_styles} style(s), {NUM_STEPS} steps): {total}")
    for i, style in enumerate(model.styles):
        sizes = "+".join(str(h.data.shape[0]) + "^2" for h in style.h[0])
        print(f"style {i}: {NUM_STEPS}x{len(style.h[0])} matrices ({sizes}), "
              f"lam_s={style.lam_s!r}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "stylize": _cmd_stylize,
    "compare": _cmd_compare,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StyleIdError as err:
        print(f"gradstyle: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CodecError, CheckpointError, ValueError) as err:
        print(f"gradstyle: {err}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as err:
        print(f"gradstyle: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
