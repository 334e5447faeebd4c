"""Quick oracle-backed checks runnable from the command line (``vqadiff selftest``)."""

from __future__ import annotations

import numpy as np

from .ddpm import DiffusionConfig, cfg_epsilon, linear_schedule
from .denoiser import DenoiserArch, init_denoiser
from .encoding import decode_grid, encode_grid
from .quantum import Observable, expectation, ground_energy, hermitian_exp, pauli_matrix
from .tasks import QPULSE_DEFAULT, TaskFamily, build_task, task_loss
from .vqe import parameter_shift_grad

_EXAMPLE_PARAMS = {
    TaskFamily.XYZ_1D: (2, 1, 0.5),
    TaskFamily.FH_1D: (0.5, 1),
    TaskFamily.TFI_2D: (0.2, 3),
    TaskFamily.Q_PULSE: QPULSE_DEFAULT,
    TaskFamily.RANDOM_VQE: (0.5, 0, 0, 3, 3, 1.0, 3, 1, 1, 3),
}


def random_observable(rng, n: int, n_terms: int = 4) -> Observable:
    terms = tuple((float(rng.normal()), "".join(rng.choice(list("IXYZ"), n))) for _ in range(n_terms))
    return Observable(n, terms)


def random_state(rng, n: int) -> np.ndarray:
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return psi / np.linalg.norm(psi)


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _check_expectation(rng):
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 5))
        obs, psi = random_observable(rng, n), random_state(rng, n)
        dense = np.vdot(psi, pauli_matrix(obs) @ psi).real
        worst = max(worst, abs(expectation(psi, obs) - dense))
    return worst < 1e-10, f"max |delta| = {worst:.2e}"


def _check_ground_energy(rng):
    obs = build_task("xyz", (2, 1, 0.5)).observable
    ref = np.linalg.eigvalsh(pauli_matrix(obs))[0]
    err = abs(ground_energy(obs) - ref)
    return err < 1e-8, f"|lanczos - eigvalsh| = {err:.2e}"


def _check_exp(rng):
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    H = (A + A.conj().T) / 2
    w, V = np.linalg.eigh(H)
    ref = V @ np.diag(np.exp(-1j * w * 0.7)) @ V.conj().T
    err = np.max(np.abs(hermitian_exp(H, 0.7) - ref))
    return err < 1e-10, f"max entry error = {err:.2e}"


def _check_shift(rng):
    worst = 0.0
    for fam, params in _EXAMPLE_PARAMS.items():
        task = build_task(fam, params)
        theta = rng.uniform(-np.pi, np.pi, task.n_params)
        ps = parameter_shift_grad(task, theta)
        fd = central_difference(lambda th: task_loss(task, th), theta)
        worst = max(worst, float(np.max(np.abs(ps - fd) / np.maximum(np.abs(fd), 1e-3))))
    return worst < 1e-6, f"max rel error = {worst:.2e}"


def _check_schedule(rng):
    s = linear_schedule(DiffusionConfig())
    ok = s.betas[0] == 1e-4 and abs(s.betas[-1] - 0.02) < 1e-15
    ok &= bool(np.all(np.diff(s.alpha_bars) < 0))
    ok &= bool(np.all(s.alpha_bars[1:] == s.alphas[1:] * s.alpha_bars[:-1]))
    return ok, f"abar_T = {s.alpha_bars[-1]:.6f}"


def _check_denoiser_grad(rng):
    arch = DenoiserArch(input_dim=4, hidden=8, blocks=1, time_dim=4, cond_dim=4)
    p = init_denoiser(arch, 1)
    p = p.with_flat(p.flat + 0.1 * rng.normal(size=p.size))
    x, c = rng.normal(size=(3, 4)), rng.normal(size=(3, 16))
    t, null = np.array([1, 5, 9]), np.array([False, True, False])
    up = rng.normal(size=(3, 4))
    _, cache = p.predict(x, t, c, null)
    g = p.grad(cache, up)
    f = lambda w: float(np.sum(up * p.with_flat(w).predict(x, t, c, null)[0]))  # noqa: E731
    fd = central_difference(f, p.flat, 1e-6)
    err = float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)))
    return err < 1e-4, f"max rel error = {err:.2e}"


def _check_cfg(rng):
    arch = DenoiserArch(input_dim=8, hidden=16, blocks=2)
    p = init_denoiser(arch, 0)
    p = p.with_flat(p.flat + 0.05 * rng.normal(size=p.size))
    x, c = rng.normal(size=(2, 8)), rng.normal(size=(2, 16))
    cond, _ = p.predict(x, 7, c, False)
    unc, _ = p.predict(x, 7, c, True)
    ok = np.array_equal(cfg_epsilon(p, x, 7, c, 1.0), cond) and np.array_equal(cfg_epsilon(p, x, 7, c, 0.0), unc)
    return bool(ok), "g=1 conditional, g=0 unconditional"


def _check_encoding(rng):
    for fam, params in _EXAMPLE_PARAMS.items():
        layout = build_task(fam, params).layout
        theta = rng.uniform(-10, 10, layout.n_params)
        if not np.array_equal(decode_grid(layout, encode_grid(layout, theta)), theta):
            return False, f"{fam.value} round-trip failed"
    return True, "all five layouts"


CHECKS = [
    ("expectation vs dense matrix", _check_expectation),
    ("lanczos ground energy", _check_ground_energy),
    ("hermitian exponential", _check_exp),
    ("parameter shift vs finite differences", _check_shift),
    ("noise schedule", _check_schedule),
    ("denoiser backward vs finite differences", _check_denoiser_grad),
    ("guidance degeneracies", _check_cfg),
    ("grid encode/decode", _check_encoding),
]


def run_selftest(seed: int = 0, echo=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, check in CHECKS:
        ok, detail = check(rng)
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
