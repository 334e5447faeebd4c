"""Run configuration: INI-style file with sections, overridden by command-line flags.

Example::

    [run]
    family = xyz
    workers = 2

    [optimizer]
    lr = 0.05
    max_steps = 500

    [diffusion]
    epochs = 200
    batch_size = 8
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .ddpm import DiffusionConfig
from .vqe import OptimizerConfig


class ConfigError(ValueError):
    pass


# (section, key) -> (argparse dest, type)
OPTIONS: dict[tuple[str, str], tuple[str, type]] = {
    ("run", "family"): ("family", str),
    ("run", "workers"): ("workers", int),
    ("run", "out"): ("out", str),
    ("dataset", "n"): ("n", int),
    ("dataset", "seed"): ("seed", int),
    ("dataset", "preset"): ("preset", str),
    ("split", "ratio"): ("ratio", float),
    ("split", "seed"): ("split_seed", int),
    ("optimizer", "lr"): ("opt_lr", float),
    ("optimizer", "beta1"): ("opt_beta1", float),
    ("optimizer", "beta2"): ("opt_beta2", float),
    ("optimizer", "eps"): ("opt_eps", float),
    ("optimizer", "max_steps"): ("max_steps", int),
    ("optimizer", "window"): ("window", int),
    ("optimizer", "tol"): ("tol", float),
    ("diffusion", "T"): ("T", int),
    ("diffusion", "beta_start"): ("beta_start", float),
    ("diffusion", "beta_end"): ("beta_end", float),
    ("diffusion", "guidance"): ("g", float),
    ("diffusion", "p_uncond"): ("p_uncond", float),
    ("diffusion", "epochs"): ("epochs", int),
    ("diffusion", "lr"): ("lr", float),
    ("diffusion", "batch_size"): ("batch_size", int),
    ("diffusion", "seed"): ("train_seed", int),
    ("denoiser", "hidden"): ("hidden", int),
    ("denoiser", "blocks"): ("blocks", int),
    ("denoiser", "time_dim"): ("time_dim", int),
    ("denoiser", "cond_dim"): ("cond_dim", int),
    ("eval", "seed"): ("eval_seed", int),
}


def read_config(path) -> dict:
    """Parse a config file into argparse defaults keyed by dest."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            spec = OPTIONS.get((section, key))
            if spec is None:
                raise ConfigError(f"{path}: unknown option [{section}] {key}")
            dest, typ = spec
            try:
                out[dest] = typ(raw)
            except ValueError:
                raise ConfigError(f"{path}: [{section}] {key} = {raw!r} is not a valid {typ.__name__}") from None
    return out


def optimizer_config(ns) -> OptimizerConfig:
    try:
        return OptimizerConfig(
            lr=ns.opt_lr, beta1=ns.opt_beta1, beta2=ns.opt_beta2, eps=ns.opt_eps,
            max_steps=ns.max_steps, window=ns.window, tol=ns.tol,
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None


def diffusion_config(ns) -> DiffusionConfig:
    try:
        return DiffusionConfig(
            T=ns.T, beta_start=ns.beta_start, beta_end=ns.beta_end, guidance=ns.g,
            p_uncond=ns.p_uncond, epochs=ns.epochs, lr=ns.lr, batch_size=ns.batch_size,
        )
    except ValueError as exc:
        raise ConfigError(f"diffusion: {exc}") from None
