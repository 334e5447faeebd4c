"""Parameter-shift gradients, Adam, and VQE trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantum import ROTATIONS
from .tasks import TaskInstance, task_loss


class OptimizationError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 500
    window: int = 10
    tol: float = 1e-4

    def __post_init__(self):
        # max_steps == 0 is allowed: it evaluates the initial loss only
        if self.window < 1 or self.max_steps < 0 or 0 < self.max_steps < self.window:
            raise ValueError("need window >= 1 and max_steps either 0 or >= window")
        if self.lr <= 0 or self.eps <= 0 or self.tol <= 0:
            raise ValueError("rates and tolerances must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class AdamState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def start(cls, theta) -> "AdamState":
        theta = np.array(theta, dtype=float)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta), 0)


@dataclass
class Trajectory:
    losses: np.ndarray
    final_theta: np.ndarray
    converged_step: int | None


def adam_step(state: AdamState, grad, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.theta.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {state.theta.shape}")
    step = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**step)
    v_hat = v / (1 - beta2**step)
    theta = state.theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(theta, m, v, step)


def parameter_shift_grad(task: TaskInstance, theta, with_loss: bool = False):
    """Exact gradient from +-pi/2 shifted losses, evaluated as one batch.

    With ``with_loss`` the unshifted loss is returned too, from the same batch.
    """
    theta = np.asarray(theta, dtype=float)
    for g in task.layout.parameterized:
        if g.kind not in ROTATIONS:
            raise ValueError(f"parameter shift does not support {g.kind}")
    p = theta.size
    shifts = np.concatenate([np.eye(p), -np.eye(p)]) * (np.pi / 2)
    batch = np.vstack([theta[None, :] + shifts, theta[None, :]])
    losses = np.asarray(task_loss(task, batch))
    grad = (losses[:p] - losses[p : 2 * p]) / 2
    return (grad, float(losses[-1])) if with_loss else grad


def detect_convergence(losses, w: int = 10, tau: float = 1e-4) -> int | None:
    """Smallest ``s >= w`` whose window ``losses[s-w..s]`` spans less than ``tau``."""
    if w < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(losses, dtype=float)
    if x.size <= w:
        return None
    windows = np.lib.stride_tricks.sliding_window_view(x, w + 1)
    spread = windows.max(axis=1) - windows.min(axis=1)
    hits = np.flatnonzero(spread < tau)
    return int(hits[0]) + w if hits.size else None


def optimize(task: TaskInstance, theta0, cfg: OptimizerConfig = OptimizerConfig()) -> Trajectory:
    """Run Adam for ``cfg.max_steps`` steps, recording every loss."""
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (task.n_params,):
        raise ValueError(f"{task.family.value} expects {task.n_params} angles, got {theta0.shape}")
    state = AdamState.start(theta0)
    losses = np.empty(cfg.max_steps + 1)
    for k in range(cfg.max_steps + 1):
        if k < cfg.max_steps:
            grad, losses[k] = parameter_shift_grad(task, state.theta, with_loss=True)
        if k == 0 or k == cfg.max_steps:
            # endpoints use the unbatched path so they match task_loss bit-for-bit
            losses[k] = task_loss(task, state.theta)
        if not np.isfinite(losses[k]):
            raise OptimizationError("non-finite loss", k)
        if k < cfg.max_steps:
            state = adam_step(state, grad, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return Trajectory(losses, state.theta, detect_convergence(losses, cfg.window, cfg.tol))
