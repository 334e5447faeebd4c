"""The five task families: Hamiltonians / targets, fixed ansatz layouts, losses, prompts."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .quantum import (
    CircuitLayout,
    GateOp,
    Observable,
    circuit_unitaries,
    expectation,
    gate_fidelity,
    hermitian_exp,
    pauli_matrix,
    run_circuit,
)

COND_DIM = 16
PAULI_CODES = "IXYZ"
QPULSE_DEFAULT = (0.3, 0.2, 0.4, 1.0)
TFI_ROWS, TFI_COLS = 2, 4


class TaskError(ValueError):
    pass


class TaskFamily(str, enum.Enum):
    XYZ_1D = "xyz"
    FH_1D = "fh"
    TFI_2D = "tfi"
    Q_PULSE = "qpulse"
    RANDOM_VQE = "random_vqe"

    @classmethod
    def parse(cls, name) -> "TaskFamily":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"1d_xyz": "xyz", "1d_fh": "fh", "2d_tfi": "tfi", "q_pulse": "qpulse", "random": "random_vqe"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise TaskError(f"unknown task family {name!r}") from None


N_PARAMS = {
    TaskFamily.XYZ_1D: 8,
    TaskFamily.FH_1D: 8,
    TaskFamily.TFI_2D: 16,
    TaskFamily.Q_PULSE: 24,
    TaskFamily.RANDOM_VQE: 48,
}

# published corpus sizes per family
PUBLISHED_INSTANCES = {
    TaskFamily.XYZ_1D: 2000,
    TaskFamily.FH_1D: 1000,
    TaskFamily.TFI_2D: 1000,
    TaskFamily.Q_PULSE: 8285,
    TaskFamily.RANDOM_VQE: 2800,
}


@dataclass(frozen=True)
class TaskInstance:
    family: TaskFamily
    params: tuple[float, ...]
    seed: int
    layout: CircuitLayout
    prompt: str
    observable: Observable | None = None
    target_unitary: np.ndarray | None = field(default=None, compare=False)

    @property
    def n_params(self) -> int:
        return self.layout.n_params


# -- layouts -----------------------------------------------------------------


def _ry_ring_layout(n_qubits: int, layers: int) -> CircuitLayout:
    gates, k = [], 0
    for _ in range(layers):
        for q in range(n_qubits):
            gates.append(GateOp("RY", q, param=k))
            k += 1
        for q in range(n_qubits):
            gates.append(GateOp("CNOT", (q + 1) % n_qubits, control=q))
    return CircuitLayout(n_qubits, tuple(gates), k, depth=layers)


# Entangler for the XYZ chain. A plain CNOT ring between the two RY layers
# cannot get within 4% (of the spectral range) of the periodic-chain ground
# state; this block reaches ~1%.
XYZ_ENTANGLER = ((3, 1), (3, 2), (0, 3), (3, 1), (1, 2))


def _ry_block_layout(n_qubits: int, entangler) -> CircuitLayout:
    gates = [GateOp("RY", q, param=q) for q in range(n_qubits)]
    gates += [GateOp("CNOT", t, control=c) for c, t in entangler]
    gates += [GateOp("RY", q, param=n_qubits + q) for q in range(n_qubits)]
    return CircuitLayout(n_qubits, tuple(gates), 2 * n_qubits, depth=2)


def _rot_ladder_layout(n_qubits: int, layers: int) -> CircuitLayout:
    gates, k = [], 0
    for _ in range(layers):
        for q in range(n_qubits):
            for kind in ("RX", "RY", "RZ"):
                gates.append(GateOp(kind, q, param=k))
                k += 1
        for q in range(n_qubits - 1):
            gates.append(GateOp("CNOT", q + 1, control=q))
    return CircuitLayout(n_qubits, tuple(gates), k, depth=layers)


def _pulse_layout(h0_zi: float, h0_iz: float, t: float, blocks: int = 4) -> CircuitLayout:
    # drift exp(-i (a ZI + b IZ) dt) == RZ_0(2 a dt) RZ_1(2 b dt)
    dt = t / blocks
    gates, k = [], 0
    for _ in range(blocks):
        for q in range(2):
            for kind in ("RX", "RY", "RZ"):
                gates.append(GateOp(kind, q, param=k))
                k += 1
        gates.append(GateOp("RZ", 0, angle=2 * h0_zi * dt))
        gates.append(GateOp("RZ", 1, angle=2 * h0_iz * dt))
    return CircuitLayout(2, tuple(gates), k, depth=blocks)


# -- Hamiltonians ------------------------------------------------------------


def _two_site(n: int, i: int, j: int, a: str, b: str) -> str:
    ops = ["I"] * n
    ops[i], ops[j] = a, b
    return "".join(ops)


def _merge(terms: list[tuple[float, str]]) -> tuple[tuple[float, str], ...]:
    merged: dict[str, float] = {}
    for c, s in terms:
        merged[s] = merged.get(s, 0.0) + c
    return tuple((c, s) for s, c in merged.items())


def xyz_hamiltonian(j1: float, j2: float, j3: float, n: int = 4) -> Observable:
    """Periodic Heisenberg XYZ chain (bond ``n-1 -> 0`` included)."""
    terms = []
    for i in range(n):
        k = (i + 1) % n
        terms += [
            (j1, _two_site(n, i, k, "X", "X")),
            (j2, _two_site(n, i, k, "Y", "Y")),
            (j3, _two_site(n, i, k, "Z", "Z")),
        ]
    return Observable(n, tuple(terms))


def fermi_hubbard_hamiltonian(t: float, u: float, n: int = 4) -> Observable:
    """Spinless open-chain Fermi-Hubbard model after Jordan-Wigner mapping.

    hopping  -t (c+_i c_{i+1} + h.c.)  ->  -(t/2)(X_i X_{i+1} + Y_i Y_{i+1})
    n_i n_{i+1} with n = (I - Z)/2     ->  (I - Z_i - Z_{i+1} + Z_i Z_{i+1}) / 4
    """
    terms = []
    ident = "I" * n
    for i in range(n - 1):
        terms += [
            (-t / 2, _two_site(n, i, i + 1, "X", "X")),
            (-t / 2, _two_site(n, i, i + 1, "Y", "Y")),
        ]
    for i in range(n - 1):
        zi = ident[:i] + "Z" + ident[i + 1 :]
        zj = ident[: i + 1] + "Z" + ident[i + 2 :]
        terms += [
            (u / 4, ident),
            (-u / 4, zi),
            (-u / 4, zj),
            (u / 4, _two_site(n, i, i + 1, "Z", "Z")),
        ]
    return Observable(n, _merge(terms))


def tfi_edges(rows: int = TFI_ROWS, cols: int = TFI_COLS) -> list[tuple[int, int]]:
    """Nearest-neighbour bonds of an open ``rows x cols`` grid, row-major qubit order."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            q = r * cols + c
            if c + 1 < cols:
                edges.append((q, q + 1))
            if r + 1 < rows:
                edges.append((q, q + cols))
    return sorted(edges)


def tfi_hamiltonian(j: float, mu: float) -> Observable:
    n = TFI_ROWS * TFI_COLS
    terms = [(-j, _two_site(n, a, b, "Z", "Z")) for a, b in tfi_edges()]
    ident = "I" * n
    terms += [(-mu, ident[:i] + "Z" + ident[i + 1 :]) for i in range(n)]
    return Observable(n, tuple(terms))


def pulse_target(h0_zi: float, h0_iz: float, h1_xi: float, t: float) -> np.ndarray:
    H = pauli_matrix(Observable(2, ((h0_zi, "ZI"), (h0_iz, "IZ"), (h1_xi, "XI"))))
    return hermitian_exp(H, t)


def random_pauli_terms(seed: int, n: int = 4) -> tuple[float, ...]:
    """Draw 1 or 2 random non-identity Pauli strings, flattened as (coef, code_0..code_{n-1})*."""
    rng = np.random.default_rng(seed)
    n_terms = int(rng.integers(1, 3))
    flat: list[float] = []
    for _ in range(n_terms):
        coef = float(rng.uniform(-1.0, 1.0))
        codes = rng.integers(0, 4, size=n)
        while not codes.any():
            codes = rng.integers(0, 4, size=n)
        flat += [coef] + [float(c) for c in codes]
    return tuple(flat)


def _decode_random_terms(params: tuple[float, ...], n: int = 4) -> list[tuple[float, str]]:
    width = n + 1
    if not params or len(params) % width:
        raise TaskError(f"random_vqe params must be (coef, {n} codes) groups, got {len(params)} values")
    terms = []
    for i in range(0, len(params), width):
        coef, codes = params[i], params[i + 1 : i + width]
        if any(c not in (0, 1, 2, 3) for c in codes):
            raise TaskError(f"Pauli codes must be 0..3, got {codes}")
        terms.append((coef, "".join(PAULI_CODES[int(c)] for c in codes)))
    return terms


# -- prompts -----------------------------------------------------------------


def fmt_num(x: float) -> str:
    """Shortest decimal that round-trips, without a trailing ``.0``."""
    s = repr(float(x) + 0.0)
    return s[:-2] if s.endswith(".0") else s


def _tuple_str(vals) -> str:
    return "(" + ", ".join(fmt_num(v) for v in vals) + ")"


def prompt_text(task: TaskInstance) -> str:
    f, p = task.family, task.params
    if f is TaskFamily.XYZ_1D:
        return f"(J_1, J_2, J_3) = {_tuple_str(p)}"
    if f is TaskFamily.FH_1D:
        return f"(t, U) = {_tuple_str(p)}"
    if f is TaskFamily.TFI_2D:
        return f"(j, μ) = {_tuple_str(p)}"
    if f is TaskFamily.Q_PULSE:
        a, b, c, _ = p
        return f"h_0 = {fmt_num(a)} ZI + {fmt_num(b)} IZ; h_1 = {fmt_num(c)} XI; U_t = e^{{-iHt}}"
    parts = []
    for i, (coef, ops) in enumerate(_decode_random_terms(p)):
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = ops if mag == 1.0 else f"{fmt_num(mag)} · {ops}"
        if i == 0:
            parts.append(("-" if coef < 0 else "") + body)
        else:
            parts.append(f" {sign} {body}")
    return "Hamiltonian = " + "".join(parts)


# -- construction ------------------------------------------------------------

_ARITY = {TaskFamily.XYZ_1D: 3, TaskFamily.FH_1D: 2, TaskFamily.TFI_2D: 2, TaskFamily.Q_PULSE: 4}


def build_task(family, params=(), seed: int = 0) -> TaskInstance:
    """Build a task instance.

    ``params`` per family: xyz (J1, J2, J3); fh (t, U); tfi (j, mu);
    qpulse (h0_ZI, h0_IZ, h1_XI, t); random_vqe flattened (coef, 4 Pauli codes)
    groups, or empty to draw the terms from ``seed``.
    """
    family = TaskFamily.parse(family)
    params = tuple(float(v) for v in np.asarray(params, dtype=float).ravel())
    if family in _ARITY and len(params) != _ARITY[family]:
        raise TaskError(f"{family.value} expects {_ARITY[family]} parameters, got {len(params)}")
    if not all(np.isfinite(params)):
        raise TaskError("task parameters must be finite")
    obs = target = None
    if family is TaskFamily.XYZ_1D:
        obs, layout = xyz_hamiltonian(*params), _ry_block_layout(4, XYZ_ENTANGLER)
    elif family is TaskFamily.FH_1D:
        obs, layout = fermi_hubbard_hamiltonian(*params), _ry_ring_layout(4, 2)
    elif family is TaskFamily.TFI_2D:
        obs, layout = tfi_hamiltonian(*params), _ry_ring_layout(TFI_ROWS * TFI_COLS, 2)
    elif family is TaskFamily.Q_PULSE:
        a, b, c, t = params
        target, layout = pulse_target(a, b, c, t), _pulse_layout(a, b, t)
    else:
        if not params:
            params = random_pauli_terms(seed)
        obs, layout = Observable(4, tuple(_decode_random_terms(params))), _rot_ladder_layout(4, 4)
    task = TaskInstance(family, params, int(seed), layout, "", obs, target)
    object.__setattr__(task, "prompt", prompt_text(task))
    return task


def task_loss(task: TaskInstance, theta) -> float | np.ndarray:
    """Energy for Hamiltonian tasks; gate infidelity ``1 - F**2`` for qpulse.

    A 2-D ``theta`` evaluates one loss per row.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (task.n_params,):
        raise TaskError(f"{task.family.value} expects {task.n_params} angles, got shape {theta.shape}")
    if task.family is TaskFamily.Q_PULSE:
        V = circuit_unitaries(task.layout, np.atleast_2d(theta))
        infid = 1.0 - gate_fidelity(np.broadcast_to(task.target_unitary, V.shape), V) ** 2
        return float(infid[0]) if theta.ndim == 1 else infid
    return expectation(run_circuit(task.layout, theta), task.observable)


def conditioning_features(task: TaskInstance) -> np.ndarray:
    """Numeric stand-in for the prompt embedding, zero-padded to ``COND_DIM``."""
    vals = np.asarray(task.params, dtype=float)
    if vals.size > COND_DIM:
        raise TaskError(f"{vals.size} conditioning values exceed {COND_DIM} slots")
    out = np.zeros(COND_DIM)
    out[: vals.size] = vals
    return out
