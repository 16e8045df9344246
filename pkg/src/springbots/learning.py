"""Backpropagation through the simulation and the normalized gradient step."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .controller import ControllerParams, init_params, n_inputs
from .lattice import Morphology
from .simulator import SimConfig, _arrays, _ground, default_friction, friction_code
from .terrain import Terrain


class UnstableRollout(RuntimeError):
    """The forward rollout produced a non-finite value or a degenerate spring."""


@dataclass(frozen=True)
class LearnConfig:
    iterations: int = 35
    lr_scale: float = 25.0
    eps: float = 1e-6
    max_lr: float = 10.0
    init_gain: float = 0.3
    checkpoint_stride: int = 1


@dataclass
class TrainResult:
    losses: np.ndarray
    lrs: np.ndarray
    grad_norms: np.ndarray
    best_params: ControllerParams | None = field(repr=False)
    best_iteration: int
    valid: bool

    @property
    def fitness(self) -> float:
        """Best displacement over iterations; NaN if none finished."""
        finite = self.losses[np.isfinite(self.losses)]
        return float(-finite.min()) if finite.size else float("nan")

    @property
    def initial_performance(self) -> float:
        return float(-self.losses[0])

    def write_log(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss", "lr", "grad_norm"])
            for i, (loss, lr, gn) in enumerate(zip(self.losses, self.lrs, self.grad_norms)):
                w.writerow([i, repr(float(loss)), repr(float(lr)), repr(float(gn))])


def gradient(
    morphology: Morphology,
    params: ControllerParams,
    terrain: Terrain | None,
    config: SimConfig = SimConfig(),
    friction_mode: str | None = None,
    checkpoint_stride: int = 1,
    objective: np.ndarray | None = None,
) -> tuple[float, ControllerParams]:
    """Loss and its exact reverse-mode gradient with respect to the controller.

    ``checkpoint_stride`` > 1 stores only every n-th state and regenerates
    the rest during the backward sweep. ``objective`` replaces the default
    loss (negated CoM x-displacement) by ``sum(objective * (x_T - x_0))``
    for an (M, 2) weight array.

    Raises:
        UnstableRollout: if the forward pass goes non-finite.
    """
    w1, b1, w2, b2, springs, rest, act_idx = _arrays(morphology, params)
    lines, ground = _ground(terrain)
    mode = friction_code(friction_mode or default_friction(terrain))
    M = morphology.n_masses
    if objective is None:
        objective = np.zeros((M, 2))
        objective[:, 0] = -1.0 / M
    objective = np.ascontiguousarray(objective, dtype=np.float64).reshape(M, 2)
    g = ControllerParams(np.zeros_like(w1), np.zeros_like(b1), np.zeros_like(w2), np.zeros_like(b2))
    loss, status = K.loss_and_grad(
        np.ascontiguousarray(morphology.positions, dtype=np.float64),
        config.steps, config.vector(), w1, b1, w2, b2, springs, rest, act_idx,
        lines, ground, mode, max(1, int(checkpoint_stride)), objective, g.w1, g.b1, g.w2, g.b2,
    )
    if status != K.OK:
        raise UnstableRollout(f"rollout unstable (status {status})")
    return float(loss), g


def learning_rate(grads, c: float = 25.0, eps: float = 1e-6, max_lr: float | None = None) -> float:
    """``c / (sqrt(sum g^2) + eps)``, optionally capped at ``max_lr``."""
    flat = grads.flat() if isinstance(grads, ControllerParams) else np.asarray(grads, dtype=np.float64)
    lr = c / (math.sqrt(float(np.dot(flat, flat))) + eps)
    if max_lr is not None:
        lr = min(lr, max_lr)
    return lr


def train(
    morphology: Morphology,
    terrain: Terrain | None,
    config: SimConfig = SimConfig(),
    learn_config: LearnConfig = LearnConfig(),
    rng: np.random.Generator | None = None,
    friction_mode: str | None = None,
    params: ControllerParams | None = None,
) -> TrainResult:
    """Gradient descent on a fresh random controller.

    Each iteration rolls out the current controller, records its loss and
    steps against the gradient. An unstable rollout ends training and marks
    the result invalid.
    """
    if params is None:
        if rng is None:
            raise ValueError("train needs an rng or initial params")
        params = init_params(rng, n_inputs(morphology.n_masses), morphology.n_active, learn_config.init_gain)
    n = learn_config.iterations
    losses = np.full(n, np.nan)
    lrs = np.full(n, np.nan)
    norms = np.full(n, np.nan)
    best, best_it, valid = None, -1, True
    for it in range(n):
        try:
            loss, g = gradient(morphology, params, terrain, config, friction_mode, learn_config.checkpoint_stride)
        except UnstableRollout:
            valid = False
            break
        flat_g = g.flat()
        if not (math.isfinite(loss) and np.isfinite(flat_g).all()):
            losses[it] = loss
            valid = False
            break
        losses[it] = loss
        norms[it] = float(np.linalg.norm(flat_g))
        lrs[it] = learning_rate(flat_g, learn_config.lr_scale, learn_config.eps, learn_config.max_lr)
        if best is None or loss < losses[best_it]:
            best, best_it = params.copy(), it
        params = params.with_flat(params.flat() - lrs[it] * flat_g)
    return TrainResult(losses, lrs, norms, best, best_it, valid)
