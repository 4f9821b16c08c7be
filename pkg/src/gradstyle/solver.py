"""Plain and projected gradient descent on the full objective.

This is the slow optimization path the unrolled network approximates: start
from the content image (or noise), repeatedly step against the gradient of
the objective, optionally projecting every iterate onto the bandlimited
subspace of a graph Laplacian. Emits the loss trajectory for comparisons
against the network.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .perceptual import (
    FeatureExtractor,
    LossWeights,
    StyleTarget,
    extract_features,
    total_loss,
)
from .tensor import GradTape, NonFiniteError, Tensor, backward

INIT_MODES = ("content", "content+noise", "noise")
MU_GRID = (1e-2, 1e-1, 1.0, 10.0, 100.0)


class DivergenceError(RuntimeError):
    """An iterative run produced a non-finite loss."""


@dataclass
class DescentConfig:
    iters: int
    mu: float | None = None          # None: 5-point geometric grid search
    lam_c: float = 0.025
    lam_tv: float = 0.5
    init: str = "content"
    noise_bound: float = 0.1
    seed: int = 0
    projector: object | None = None  # callable on per-channel flat vectors
    use_adam: bool = False

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError("iteration count must be >= 0")
        if self.mu is not None and self.mu <= 0:
            raise ValueError("stepsize must be positive")
        if self.init not in INIT_MODES:
            raise ValueError(f"init mode must be one of {INIT_MODES}")


@dataclass
class TrajectoryRow:
    iter: int
    total: float
    content: float
    style: float
    tv: float


@dataclass
class DescentResult:
    image: Tensor
    trajectory: list[TrajectoryRow]
    mu: float
    iterates: list[Tensor] = field(default_factory=list)


def _init_image(content: Tensor, cfg: DescentConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "content":
        return content.data.copy()
    if cfg.init == "content+noise":
        amp = rng.uniform(0.0, cfg.noise_bound)
        return content.data + rng.uniform(-amp, amp, size=content.data.shape)
    return rng.uniform(0.0, 1.0, size=content.data.shape)


def _project(x: np.ndarray, projector) -> np.ndarray:
    c, h, w = x.shape
    flat = x.reshape(c, h * w)
    return np.stack([projector(flat[i]) for i in range(c)]).reshape(c, h, w)


def _loss_and_grad(x: Tensor, c_feats, target, fe, weights):
    with GradTape() as tape:
        loss, parts = total_loss(x, c_feats, target, fe, weights,
                                 return_parts=True)
        grads = backward(tape, loss)
    return parts, grads[x]


def _run(content: Tensor, target: StyleTarget, fe: FeatureExtractor,
         cfg: DescentConfig, project: bool, keep_iterates: bool) -> DescentResult:
    weights = LossWeights(cfg.lam_c, cfg.lam_tv)
    c_feats = extract_features(content, fe)
    x_data = _init_image(content, cfg)
    if project:
        if cfg.projector is None:
            raise ValueError("projected descent needs cfg.projector")
        x_data = _project(x_data, cfg.projector)
    mu = cfg.mu if cfg.mu is not None else _pick_mu(
        x_data, c_feats, target, fe, weights, cfg)
    x = Tensor(x_data)
    trajectory: list[TrajectoryRow] = []
    iterates = [x] if keep_iterates else []
    adam_m = adam_v = None
    try:
        for t in range(cfg.iters):
            parts, g = _loss_and_grad(x, c_feats, target, fe, weights)
            trajectory.append(TrajectoryRow(t, parts.total, parts.content,
                                            parts.style, parts.tv))
            if cfg.use_adam:
                if adam_m is None:
                    adam_m, adam_v = np.zeros_like(g), np.zeros_like(g)
                adam_m = 0.9 * adam_m + 0.1 * g
                adam_v = 0.999 * adam_v + 0.001 * g * g
                mh = adam_m / (1.0 - 0.9 ** (t + 1))
                vh = adam_v / (1.0 - 0.999 ** (t + 1))
                step = mh / (np.sqrt(vh) + 1e-8)
            else:
                step = g
            new_data = x.data - mu * step
            if project:
                new_data = _project(new_data, cfg.projector)
            x = Tensor(new_data)
            if keep_iterates:
                iterates.append(x)
        _, parts = total_loss(x, c_feats, target, fe, weights,
                              return_parts=True)
    except NonFiniteError as exc:
        raise DivergenceError(
            f"loss became non-finite at iteration {len(trajectory)} "
            f"(mu={mu:g}, init={cfg.init!r}): {exc}") from exc
    trajectory.append(TrajectoryRow(cfg.iters, parts.total, parts.content,
                                    parts.style, parts.tv))
    return DescentResult(x, trajectory, mu, iterates)


def _pick_mu(x0_data, c_feats, target, fe, weights, cfg) -> float:
    """Smallest grid stepsize achieving the best loss after a probe run.

    The probe mirrors the requested run (capped at 10 iterations) so a
    stepsize that looks good for a couple of steps but then oscillates is
    rejected.
    """
    probe_steps = min(max(cfg.iters, 1), 10)
    best_mu, best_loss = MU_GRID[0], np.inf
    for mu in MU_GRID:
        x = Tensor(x0_data.copy())
        try:
            for _ in range(probe_steps):
                _, g = _loss_and_grad(x, c_feats, target, fe, weights)
                nd = x.data - mu * g
                if cfg.projector is not None:
                    nd = _project(nd, cfg.projector)
                x = Tensor(nd)
            _, parts = total_loss(x, c_feats, target, fe, weights,
                                  return_parts=True)
            loss = parts.total
        except NonFiniteError:
            loss = np.inf
        if loss < best_loss:
            best_mu, best_loss = mu, loss
    return best_mu


def grad_descent_stylize(content: Tensor, target: StyleTarget,
                         fe: FeatureExtractor, cfg: DescentConfig,
                         keep_iterates: bool = False) -> DescentResult:
    """Gradient descent on the objective; trajectory has one row per iterate."""
    return _run(content, target, fe, cfg, project=False,
                keep_iterates=keep_iterates)


def projected_grad_descent(content: Tensor, target: StyleTarget,
                           fe: FeatureExtractor, cfg: DescentConfig,
                           keep_iterates: bool = False) -> DescentResult:
    """Projected variant: the init and every update pass through cfg.projector."""
    return _run(content, target, fe, cfg, project=True,
                keep_iterates=keep_iterates)


def write_trajectory_csv(rows: list[TrajectoryRow], path):
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "total", "content", "style", "tv"])
        for row in rows:
            writer.writerow([row.iter, repr(row.total), repr(row.content),
                             repr(row.style), repr(row.tv)])
