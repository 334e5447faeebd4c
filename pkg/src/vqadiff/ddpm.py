"""DDPM core: linear schedule, forward noising, CFG sampling, and training."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import DenoiserArch, DenoiserParams, init_denoiser
from .encoding import ParamGrid
from .vqe import AdamState, adam_step

CHECKPOINT_SCHEMA = 1


class DiffusionError(RuntimeError):
    pass


class TrainingDiverged(DiffusionError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    guidance: float = 10.0
    p_uncond: float = 0.1
    epochs: int = 500
    lr: float = 5e-5
    batch_size: int = 64

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        if not 0 <= self.p_uncond <= 1:
            raise ValueError("p_uncond must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.guidance < 0:
            raise ValueError("epochs, batch size, lr must be positive and guidance non-negative")


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # index t-1 for t = 1..T
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise DiffusionError(f"timestep outside 1..{self.T}")
        return t


def linear_schedule(cfg: DiffusionConfig = DiffusionConfig()) -> NoiseSchedule:
    T = cfg.T
    if T < 2:
        raise DiffusionError("linear schedule needs T >= 2")
    t = np.arange(1, T + 1)
    betas = cfg.beta_start + (t - 1) * (cfg.beta_end - cfg.beta_start) / (T - 1)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas, alphas, alpha_bars)


def _col(v, like):
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape + (1,) * (np.ndim(like) - v.ndim))


def forward_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; ``t`` may be per-row."""
    t = sched.check_t(t)
    ab = sched.alpha_bars[t - 1]
    x0 = np.asarray(x0, dtype=float)
    return _col(np.sqrt(ab), x0) * x0 + _col(np.sqrt(1.0 - ab), x0) * np.asarray(eps, dtype=float)


def forward_chain(x0, t: int, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Noise ``x0`` one step at a time, ``t`` times (the unrolled Markov chain)."""
    x = np.asarray(x0, dtype=float)
    for s in range(1, t + 1):
        b = sched.betas[s - 1]
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.standard_normal(x.shape)
    return x


def training_step(denoiser, x0, c, sched: NoiseSchedule, cfg: DiffusionConfig, rng: np.random.Generator):
    """Noise a batch at random timesteps and score the noise prediction.

    Returns ``(loss, grad)`` with ``loss`` the mean squared error over rows and
    cells and ``grad`` its exact gradient w.r.t. the flat denoiser weights.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    B, D = x0.shape
    if B == 0:
        raise DiffusionError("empty batch")
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal((B, D))
    use_null = rng.random(B) < cfg.p_uncond
    xt = forward_sample(x0, t, eps, sched)
    pred, cache = denoiser.predict(xt, t, c, use_null)
    diff = pred - eps
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise DiffusionError("non-finite training loss")
    grad = denoiser.grad(cache, 2.0 * diff / diff.size)
    return loss, grad


def cfg_epsilon(denoiser, x_t, t, c, g: float) -> np.ndarray:
    """Guided noise ``eps_u + g (eps_c - eps_u)``, written so g=0 and g=1 are exact."""
    x_t = np.atleast_2d(x_t)
    eps_c, _ = denoiser.predict(x_t, t, c, False)
    eps_u, _ = denoiser.predict(x_t, t, c, True)
    return (1.0 - g) * eps_u + g * eps_c


def reverse_step(x_t, t: int, eps_hat, sched: NoiseSchedule, rng: np.random.Generator, mask=None) -> np.ndarray:
    """One ancestral step with fixed variance ``beta_t``; no noise at ``t = 1``."""
    t = int(sched.check_t(t))
    b, a, ab = sched.betas[t - 1], sched.alphas[t - 1], sched.alpha_bars[t - 1]
    x_t = np.asarray(x_t, dtype=float)
    mean = (x_t - b / np.sqrt(1.0 - ab) * np.asarray(eps_hat, dtype=float)) / np.sqrt(a)
    if t == 1:
        return mean
    z = rng.standard_normal(x_t.shape)
    if mask is not None:
        z = z * mask
    return mean + np.sqrt(b) * z


def sample_vectors(denoiser, c, sched: NoiseSchedule, g: float, rng: np.random.Generator) -> np.ndarray:
    """Draw one normalized parameter vector per row of ``c``."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    D = denoiser.arch.input_dim
    x = rng.standard_normal((c.shape[0], D))
    for t in range(sched.T, 0, -1):
        eps_hat = cfg_epsilon(denoiser, x, t, c, g)
        x = reverse_step(x, t, eps_hat, sched, rng)
        if not np.all(np.isfinite(x)):
            raise DiffusionError(f"non-finite sample at t={t}")
    return x


def sample_parameters(denoiser, c, sched: NoiseSchedule, g: float, rng: np.random.Generator, mask: np.ndarray):
    """Sample a normalized grid (or a list of grids for 2-D ``c``) shaped like ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() != denoiser.arch.input_dim:
        raise DiffusionError("mask occupancy does not match the network input size")
    xs = sample_vectors(denoiser, c, sched, g, rng)
    grids = []
    for x in xs:
        vals = np.zeros(mask.shape)
        vals[mask] = x
        grids.append(ParamGrid(vals, mask, normalized=True))
    return grids[0] if np.ndim(c) == 1 else grids


@dataclass
class TrainedModel:
    params: DenoiserParams
    config: DiffusionConfig
    history: list[float]
    seed: int
    family: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.config)


def cosine_lr(peak: float, step: int, total: int) -> float:
    return 0.5 * peak * (1.0 + np.cos(np.pi * step / total))


def train_model(
    x0: np.ndarray,
    cond: np.ndarray,
    cfg: DiffusionConfig = DiffusionConfig(),
    seed: int = 0,
    arch: DenoiserArch | None = None,
    family: str = "",
    log=None,
) -> TrainedModel:
    """Fit a denoiser on normalized parameter vectors ``x0`` (N, D) with features ``cond`` (N, 16)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    cond = np.atleast_2d(np.asarray(cond, dtype=float))
    n = x0.shape[0]
    if n == 0 or x0.size == 0:
        raise DiffusionError("training set is empty")
    if cond.shape[0] != n:
        raise DiffusionError("one conditioning row per training example is required")
    arch = arch or DenoiserArch(input_dim=x0.shape[1])
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    params = init_denoiser(arch, int(init_seq.generate_state(1)[0]))
    rng = np.random.default_rng(train_seq)
    sched = linear_schedule(cfg)
    per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * per_epoch
    opt = AdamState.start(params.flat)
    history: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = training_step(params, x0[idx], cond[idx], sched, cfg, rng)
            acc += loss * len(idx)
            opt = adam_step(opt, grad, cosine_lr(cfg.lr, step, total))
            params = params.with_flat(opt.theta)
            step += 1
        history.append(acc / n)
        if log is not None:
            log(epoch, history[-1])
        if history[-1] > 1e3 or not np.isfinite(history[-1]):
            raise TrainingDiverged(f"training diverged at epoch {epoch}", history)
    return TrainedModel(params, cfg, history, seed, family, {"arch": asdict(arch)})


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: TrainedModel, path) -> None:
    """JSON checkpoint; floats are written with shortest round-trip repr."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "family": model.family,
        "seed": model.seed,
        "config": asdict(model.config),
        "schedule": {"T": model.config.T, "beta_1": model.config.beta_start, "beta_T": model.config.beta_end},
        "arch": asdict(model.params.arch),
        "loss_history": [float(v) for v in model.history],
        "meta": model.meta,
        "weights": [float(v) for v in model.params.flat],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("schema_version")
    if version != CHECKPOINT_SCHEMA:
        raise DiffusionError(f"checkpoint schema {version} is not supported (expected {CHECKPOINT_SCHEMA})")
    arch = DenoiserArch(**doc["arch"])
    params = DenoiserParams(arch, np.array(doc["weights"], dtype=float))
    return TrainedModel(params, DiffusionConfig(**doc["config"]), doc["loss_history"], doc["seed"], doc["family"], doc.get("meta", {}))
