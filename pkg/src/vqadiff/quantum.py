"""Exact statevector simulation for small circuits.

States are plain complex128 numpy arrays of length ``2**n``; leading axes are
treated as batch axes. Qubit 0 is the leftmost symbol of a Pauli string and
the most-significant bit of the basis index.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

MAX_DENSE_QUBITS = 10
MAX_UNITARY_QUBITS = 4
MAX_EXP_DIM = 16

GATE_KINDS = ("RX", "RY", "RZ", "CNOT")
ROTATIONS = ("RX", "RY", "RZ")

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class SimulationError(ValueError):
    """Invalid input to a simulator routine."""


class ConvergenceError(RuntimeError):
    """An iterative routine stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class Observable:
    """Real-weighted sum of Pauli strings, e.g. ``[(0.5, "IIZZ"), (1.0, "ZXXZ")]``."""

    n_qubits: int
    terms: tuple[tuple[float, str], ...]

    def __post_init__(self):
        if self.n_qubits < 1:
            raise SimulationError("observable needs at least one qubit")
        if not self.terms:
            raise SimulationError("observable has no terms")
        clean = []
        for coef, ops in self.terms:
            coef = float(coef)
            if not np.isfinite(coef):
                raise SimulationError(f"non-finite coefficient on {ops!r}")
            if len(ops) != self.n_qubits or set(ops) - set("IXYZ"):
                raise SimulationError(f"bad Pauli string {ops!r} for {self.n_qubits} qubits")
            clean.append((coef, ops))
        object.__setattr__(self, "terms", tuple(clean))

    @cached_property
    def _groups(self) -> tuple[tuple[int, np.ndarray], ...]:
        # Terms sharing an X/Y flip mask collapse into one diagonal weight vector:
        # H|i> = sum_x w_x(i) |i ^ x>.
        n = self.n_qubits
        idx = np.arange(2**n)
        groups: dict[int, np.ndarray] = {}
        for coef, ops in self.terms:
            xmask = 0
            phase = np.ones(2**n, dtype=complex)
            for q, p in enumerate(ops):
                bit = (idx >> (n - 1 - q)) & 1
                sign = 1 - 2 * bit
                if p in "XY":
                    xmask |= 1 << (n - 1 - q)
                if p == "Y":
                    phase = phase * (1j * sign)
                elif p == "Z":
                    phase = phase * sign
            groups.setdefault(xmask, np.zeros(2**n, dtype=complex))
            groups[xmask] += coef * phase
        return tuple((x, w) for x, w in groups.items())


@dataclass(frozen=True)
class GateOp:
    """One gate. Rotations either read ``theta[param]`` or carry a fixed ``angle``."""

    kind: str
    target: int
    control: int | None = None
    param: int | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise SimulationError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CNOT":
            if self.control is None or self.control == self.target:
                raise SimulationError(f"CNOT needs a control distinct from target: {self}")
            if self.param is not None or self.angle is not None:
                raise SimulationError(f"CNOT carries no parameter: {self}")
        else:
            if self.control is not None:
                raise SimulationError(f"{self.kind} takes no control qubit")
            if (self.param is None) == (self.angle is None):
                raise SimulationError(f"{self.kind} needs exactly one of param / angle: {self}")


@dataclass(frozen=True)
class CircuitLayout:
    n_qubits: int
    gates: tuple[GateOp, ...]
    n_params: int
    depth: int = 1

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        used = []
        for g in self.gates:
            for q in (g.target, g.control):
                if q is not None and not 0 <= q < self.n_qubits:
                    raise SimulationError(f"gate {g} addresses qubit {q} outside 0..{self.n_qubits - 1}")
            if g.param is not None:
                used.append(g.param)
        if sorted(used) != list(range(self.n_params)):
            raise SimulationError("parameter indices must cover 0..n_params-1 exactly once")

    @cached_property
    def parameterized(self) -> tuple[GateOp, ...]:
        return tuple(g for g in self.gates if g.param is not None)


def _check_theta(layout: CircuitLayout, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (layout.n_params,):
        raise SimulationError(f"expected {layout.n_params} parameters, got shape {theta.shape}")
    return theta


def zero_state(n_qubits: int) -> np.ndarray:
    psi = np.zeros(2**n_qubits, dtype=complex)
    psi[0] = 1.0
    return psi


def _rotate(psi: np.ndarray, kind: str, q: int, n: int, angle) -> np.ndarray:
    """Apply a rotation on qubit ``q``; ``angle`` broadcasts against the batch axes."""
    batch = psi.shape[:-1]
    view = psi.reshape(batch + (2**q, 2, 2 ** (n - q - 1)))
    a = np.asarray(angle, dtype=float).reshape(np.shape(angle) + (1, 1))
    if a.ndim > 2:
        # per-item angles on the first batch axis
        a = a.reshape(a.shape[:1] + (1,) * (len(batch) - 1) + (1, 1))
    s0 = view[..., 0, :]
    s1 = view[..., 1, :]
    out = np.empty_like(view)
    c, s = np.cos(a / 2), np.sin(a / 2)
    if kind == "RX":
        out[..., 0, :] = c * s0 - 1j * s * s1
        out[..., 1, :] = c * s1 - 1j * s * s0
    elif kind == "RY":
        out[..., 0, :] = c * s0 - s * s1
        out[..., 1, :] = s * s0 + c * s1
    else:
        out[..., 0, :] = (c - 1j * s) * s0
        out[..., 1, :] = (c + 1j * s) * s1
    return out.reshape(psi.shape)


def _cnot_perm(control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(2**n)
    cbit = (idx >> (n - 1 - control)) & 1
    return idx ^ (cbit << (n - 1 - target))


def _n_qubits_of(psi: np.ndarray) -> int:
    dim = psi.shape[-1]
    n = dim.bit_length() - 1
    if dim < 1 or 2**n != dim:
        raise SimulationError(f"state length {dim} is not a power of two")
    return n


def apply_gate(state: np.ndarray, gate: GateOp, theta=()) -> np.ndarray:
    """Apply ``gate`` to ``state`` (any leading batch axes).

    ``theta`` is a parameter vector, or a ``(B, n_params)`` matrix giving one
    vector per item along the first batch axis.
    """
    psi = np.asarray(state, dtype=complex)
    n = _n_qubits_of(psi)
    for q in (gate.target, gate.control):
        if q is not None and q >= n:
            raise SimulationError(f"gate {gate} addresses qubit {q} on a {n}-qubit state")
    if gate.kind == "CNOT":
        return psi[..., _cnot_perm(gate.control, gate.target, n)]
    if gate.param is None:
        angle = gate.angle
    else:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0 or gate.param >= theta.shape[-1]:
            raise SimulationError(
                f"gate {gate.kind} on qubit {gate.target} reads parameter {gate.param}, "
                f"but only {0 if theta.ndim == 0 else theta.shape[-1]} are given"
            )
        angle = theta[..., gate.param]
    return _rotate(psi, gate.kind, gate.target, n, angle)


class _Compiled:
    """Layout with CNOT permutations precomputed, for the hot optimization loop."""

    def __init__(self, layout: CircuitLayout):
        n = layout.n_qubits
        self.n = n
        self.steps = []
        for g in layout.gates:
            if g.kind == "CNOT":
                self.steps.append(("P", _cnot_perm(g.control, g.target, n)))
            else:
                self.steps.append((g.kind, g))


_compiled_cache: dict[int, tuple[CircuitLayout, _Compiled]] = {}


def _compiled(layout: CircuitLayout) -> _Compiled:
    hit = _compiled_cache.get(id(layout))
    if hit is None or hit[0] is not layout:
        if len(_compiled_cache) > 256:
            _compiled_cache.clear()
        hit = (layout, _Compiled(layout))
        _compiled_cache[id(layout)] = hit
    return hit[1]


def evolve(layout: CircuitLayout, theta, initial: np.ndarray) -> np.ndarray:
    """Run the layout on ``initial`` states.

    With ``theta`` of shape ``(B, P)`` the initial states must have a leading
    batch axis of length ``B`` (or 1) and each item uses its own row.
    """
    theta = _check_theta(layout, theta)
    comp = _compiled(layout)
    psi = np.asarray(initial, dtype=complex)
    if theta.ndim == 2 and psi.shape[0] != theta.shape[0]:
        psi = np.broadcast_to(psi, (theta.shape[0],) + psi.shape[1:]).copy()
    for kind, op in comp.steps:
        if kind == "P":
            psi = psi[..., op]
        else:
            angle = op.angle if op.param is None else theta[..., op.param]
            psi = _rotate(psi, kind, op.target, comp.n, angle)
    return psi


def run_circuit(layout: CircuitLayout, theta) -> np.ndarray:
    """Statevector after applying every gate to ``|0...0>``.

    A 2-D ``theta`` returns one state per row.
    """
    theta = _check_theta(layout, theta)
    psi0 = zero_state(layout.n_qubits)
    if theta.ndim == 2:
        psi0 = np.broadcast_to(psi0, (theta.shape[0], psi0.size))
    return evolve(layout, theta, psi0)


def expectation(state: np.ndarray, obs: Observable) -> float | np.ndarray:
    """``<psi|H|psi>`` computed term-group by term-group without a dense matrix."""
    psi = np.asarray(state, dtype=complex)
    if _n_qubits_of(psi) != obs.n_qubits:
        raise SimulationError(f"state has {_n_qubits_of(psi)} qubits, observable {obs.n_qubits}")
    idx = np.arange(psi.shape[-1])
    total = np.zeros(psi.shape[:-1], dtype=complex)
    for xmask, w in obs._groups:
        partner = psi if xmask == 0 else psi[..., idx ^ xmask]
        total = total + np.sum(partner.conj() * w * psi, axis=-1)
    residue = np.max(np.abs(total.imag)) if total.size else 0.0
    if residue > 1e-8:
        raise ArithmeticError(f"expectation has imaginary residue {residue:.3e}")
    out = total.real
    return float(out) if out.ndim == 0 else out


def pauli_matrix(obs: Observable) -> np.ndarray:
    """Dense ``2**n x 2**n`` matrix of the observable."""
    if obs.n_qubits > MAX_DENSE_QUBITS:
        raise SimulationError(f"dense matrix capped at {MAX_DENSE_QUBITS} qubits")
    dim = 2**obs.n_qubits
    H = np.zeros((dim, dim), dtype=complex)
    for coef, ops in obs.terms:
        m = np.ones((1, 1), dtype=complex)
        for p in ops:
            m = np.kron(m, _PAULI[p])
        H += coef * m
    return H


def lanczos_smallest(H: np.ndarray, tol: float = 1e-8, seed: int = 0) -> tuple[float, np.ndarray]:
    """Smallest eigenpair of a Hermitian matrix by Lanczos with full reorthogonalization."""
    dim = H.shape[0]
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    Q = np.zeros((dim, dim), dtype=complex)
    alphas: list[float] = []
    betas: list[float] = []
    residual = np.inf
    for k in range(dim):
        Q[:, k] = q
        w = H @ q
        alpha = float(np.real(np.vdot(q, w)))
        w = w - alpha * q - (betas[-1] * Q[:, k - 1] if k else 0)
        # full reorthogonalization, twice for stability
        for _ in range(2):
            w = w - Q[:, : k + 1] @ (Q[:, : k + 1].conj().T @ w)
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        evals, evecs = np.linalg.eigh(T)
        lam = float(evals[0])
        v = Q[:, : k + 1] @ evecs[:, 0]
        v /= np.linalg.norm(v)
        residual = float(np.linalg.norm(H @ v - lam * v))
        if residual < tol:
            return lam, v
        if beta < 1e-12:
            break
        betas.append(beta)
        q = w / beta
    raise ConvergenceError("Lanczos did not reach tolerance", residual)


def ground_energy(obs: Observable) -> float:
    """Smallest eigenvalue of the observable."""
    if obs.n_qubits > MAX_DENSE_QUBITS:
        raise SimulationError(f"ground energy capped at {MAX_DENSE_QUBITS} qubits")
    H = pauli_matrix(obs)
    if not np.any(H):
        return 0.0
    return lanczos_smallest(H)[0]


def gate_matrix(gate: GateOp, theta, n_qubits: int) -> np.ndarray:
    """Full ``2**n`` matrix of a single gate."""
    dim = 2**n_qubits
    return apply_gate(np.eye(dim, dtype=complex), gate, theta).T


def circuit_unitary(layout: CircuitLayout, theta) -> np.ndarray:
    """Product of per-gate matrices in application order."""
    if layout.n_qubits > MAX_UNITARY_QUBITS:
        raise SimulationError(f"circuit unitary capped at {MAX_UNITARY_QUBITS} qubits")
    theta = _check_theta(layout, theta)
    U = np.eye(2**layout.n_qubits, dtype=complex)
    for g in layout.gates:
        U = gate_matrix(g, theta, layout.n_qubits) @ U
    return U


def circuit_unitaries(layout: CircuitLayout, thetas: np.ndarray) -> np.ndarray:
    """Batched unitaries ``(B, d, d)`` built by evolving every basis state at once."""
    thetas = _check_theta(layout, np.atleast_2d(thetas))
    dim = 2**layout.n_qubits
    basis = np.broadcast_to(np.eye(dim, dtype=complex), (thetas.shape[0], dim, dim))
    cols = evolve(layout, thetas, basis)
    return np.swapaxes(cols, -1, -2)


def hermitian_exp(H: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t)`` by scaling and squaring a truncated Taylor series."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise SimulationError("hermitian_exp needs a square matrix")
    if H.shape[0] > MAX_EXP_DIM:
        raise SimulationError(f"hermitian_exp capped at dimension {MAX_EXP_DIM}")
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-10:
        raise SimulationError("hermitian_exp input is not Hermitian")
    A = -1j * t * H
    norm = np.linalg.norm(A, 1)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.25)))) if norm > 0.25 else 0
    A = A / 2**squarings
    dim = H.shape[0]
    U = np.eye(dim, dtype=complex)
    term = np.eye(dim, dtype=complex)
    for k in range(1, 20):
        term = term @ A / k
        U = U + term
    for _ in range(squarings):
        U = U @ U
    return U


def gate_fidelity(U: np.ndarray, V: np.ndarray) -> float:
    """Phase-insensitive overlap ``|Tr(U^dagger V)| / d``."""
    U = np.asarray(U)
    V = np.asarray(V)
    if U.shape != V.shape or U.shape[-1] != U.shape[-2]:
        raise SimulationError(f"fidelity of mismatched shapes {U.shape} and {V.shape}")
    d = U.shape[-1]
    tr = np.einsum("...ij,...ij->...", U.conj(), V)
    out = np.minimum(np.abs(tr) / d, 1.0)
    return float(out) if out.ndim == 0 else out
