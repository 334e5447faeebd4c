"""Noise-prediction network: a conditional residual MLP with hand-written backprop.

Inputs are the noisy occupied grid cells ``x_t`` (B, D), integer timesteps
``t`` (B,), and conditioning features ``c`` (B, 16). Rows flagged in
``use_null`` swap the projected condition for a learned null embedding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tasks import COND_DIM


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserArch:
    input_dim: int
    hidden: int = 128
    blocks: int = 4
    time_dim: int = 32
    cond_dim: int = 32
    cond_in: int = COND_DIM

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even for the sinusoidal embedding")

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        h, d = self.hidden, self.input_dim
        out = [
            ("W_in", (h, d)),
            ("b_in", (h,)),
            ("W_time", (h, self.time_dim)),
            ("b_time", (h,)),
            ("W_cond", (self.cond_dim, self.cond_in)),
            ("b_cond", (self.cond_dim,)),
            ("null", (self.cond_dim,)),
            ("W_emb", (h, self.cond_dim)),
        ]
        for i in range(self.blocks):
            out += [(f"W1_{i}", (h, h)), (f"b1_{i}", (h,)), (f"W2_{i}", (h, h)), (f"b2_{i}", (h,))]
        out += [("W_out", (d, h)), ("b_out", (d,))]
        return out


def sinusoidal_embed(t, dim: int, T: int | None = None) -> np.ndarray:
    """Interleaved ``(sin(t w_k), cos(t w_k))`` with ``w_k = 10000**(-2k/dim)``."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    t = np.asarray(t, dtype=float)
    if T is not None and (np.any(t < 0) or np.any(t > T)):
        raise ValueError(f"timestep outside 0..{T}")
    omega = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    ang = t[..., None] * omega
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


class DenoiserParams:
    """Flat weight vector plus named views into it."""

    def __init__(self, arch: DenoiserArch, flat: np.ndarray | None = None):
        self.arch = arch
        self._slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        pos = 0
        for name, shape in arch.shapes():
            size = int(np.prod(shape))
            self._slices[name] = (slice(pos, pos + size), shape)
            pos += size
        self.size = pos
        if flat is None:
            flat = np.zeros(pos)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (pos,):
            raise ShapeError(f"flat weights have shape {flat.shape}, arch needs ({pos},)")
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.flat[sl].reshape(shape)

    def names(self):
        return list(self._slices)

    def view(self, vec: np.ndarray, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return vec[sl].reshape(shape)

    def with_flat(self, flat: np.ndarray) -> "DenoiserParams":
        return DenoiserParams(self.arch, flat)

    # -- network ----------------------------------------------------------

    def predict(self, x, t, c, use_null=None):
        """Forward pass returning ``(eps_hat, cache)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        B, D = x.shape
        if D != self.arch.input_dim:
            raise ShapeError(f"input has {D} cells, network expects {self.arch.input_dim}")
        t = np.broadcast_to(np.asarray(t), (B,))
        if use_null is None:
            use_null = np.zeros(B, dtype=bool)
        use_null = np.broadcast_to(np.asarray(use_null, dtype=bool), (B,))
        if c is None:
            c = np.zeros((B, self.arch.cond_in))
            use_null = np.ones(B, dtype=bool)
        c = np.broadcast_to(np.asarray(c, dtype=float), (B, self.arch.cond_in))

        temb = sinusoidal_embed(t, self.arch.time_dim)
        cproj = c @ self["W_cond"].T + self["b_cond"]
        emb = np.where(use_null[:, None], self["null"], cproj)
        h = x @ self["W_in"].T + self["b_in"] + temb @ self["W_time"].T + self["b_time"] + emb @ self["W_emb"].T
        hs, acts = [h], []
        for i in range(self.arch.blocks):
            a = h @ self[f"W1_{i}"].T + self[f"b1_{i}"]
            s = a * _sigmoid(a)
            h = h + s @ self[f"W2_{i}"].T + self[f"b2_{i}"]
            acts.append((a, s))
            hs.append(h)
        out = h @ self["W_out"].T + self["b_out"]
        cache = (x, c, temb, emb, use_null, hs, acts)
        return out, cache

    def grad(self, cache, dout) -> np.ndarray:
        """Reverse-mode gradient of ``sum(dout * eps_hat)`` w.r.t. the flat weights."""
        x, c, temb, emb, use_null, hs, acts = cache
        dout = np.asarray(dout, dtype=float)
        if dout.shape != (x.shape[0], self.arch.input_dim):
            raise ShapeError(f"upstream gradient shape {dout.shape} does not match output")
        g = np.zeros(self.size)
        V = lambda name: self.view(g, name)  # noqa: E731

        V("W_out")[...] = dout.T @ hs[-1]
        V("b_out")[...] = dout.sum(0)
        dh = dout @ self["W_out"]
        for i in reversed(range(self.arch.blocks)):
            a, s = acts[i]
            V(f"W2_{i}")[...] = dh.T @ s
            V(f"b2_{i}")[...] = dh.sum(0)
            ds = dh @ self[f"W2_{i}"]
            sig = _sigmoid(a)
            da = ds * sig * (1.0 + a * (1.0 - sig))
            V(f"W1_{i}")[...] = da.T @ hs[i]
            V(f"b1_{i}")[...] = da.sum(0)
            dh = dh + da @ self[f"W1_{i}"]
        V("W_in")[...] = dh.T @ x
        V("b_in")[...] = dh.sum(0)
        V("W_time")[...] = dh.T @ temb
        V("b_time")[...] = dh.sum(0)
        V("W_emb")[...] = dh.T @ emb
        demb = dh @ self["W_emb"]
        real = ~use_null
        V("W_cond")[...] = demb[real].T @ c[real]
        V("b_cond")[...] = demb[real].sum(0)
        V("null")[...] = demb[use_null].sum(0)
        return g


def init_denoiser(arch: DenoiserArch, seed: int = 0) -> DenoiserParams:
    """Variance-scaled hidden weights, zero biases, zero output projection."""
    rng = np.random.default_rng(seed)
    p = DenoiserParams(arch)
    for name, shape in arch.shapes():
        if name == "null":
            p.view(p.flat, name)[...] = rng.normal(0.0, np.sqrt(1.0 / arch.cond_dim), shape)
        elif name.startswith("W") and name != "W_out":
            p.view(p.flat, name)[...] = rng.normal(0.0, np.sqrt(2.0 / shape[1]), shape)
    return p


def denoiser_forward(params: DenoiserParams, x, t, c=None) -> np.ndarray:
    """Predicted noise; ``c=None`` selects the null embedding."""
    out, _ = params.predict(x, t, c)
    return out


def denoiser_backward(params: DenoiserParams, x, t, c, upstream) -> np.ndarray:
    """Parameter gradient of ``sum(upstream * denoiser_forward(...))``."""
    _, cache = params.predict(x, t, c)
    return params.grad(cache, np.atleast_2d(upstream))
