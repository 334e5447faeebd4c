"""Random vs. diffusion initialization: initial loss and convergence steps.

Report files written by :func:`emit_report`:

``comparison.csv``
    family, scheme_a, scheme_b, n_instances, initial_loss_a, initial_loss_b,
    delta_initial_loss (a - b), steps_a, steps_b, delta_steps_pct
    (100 * (a - b) / a), paired_step_diff (mean of per-instance a - b),
    unconverged_a, unconverged_b. Positive deltas favour scheme b.
``initial_losses.csv``
    scheme, id, initial_loss, converged_step (blank if never converged)
``initial_loss_hist.csv``
    scheme, bin_lo, bin_hi, count (bins shared across schemes)
``loss_curve_<scheme>.csv``
    step, mean, min, max over instances; one row per optimizer step
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ddpm import TrainedModel, sample_vectors
from .encoding import vector_to_theta
from .tasks import conditioning_features, task_loss
from .vqe import OptimizerConfig, optimize


class EvaluationError(ValueError):
    pass


@dataclass
class EvalMetrics:
    scheme: str
    family: str
    ids: list[int]
    initial_losses: np.ndarray
    steps: list[int | None]
    trajectories: np.ndarray  # (n_instances, max_steps + 1)
    max_steps: int

    @property
    def steps_filled(self) -> np.ndarray:
        return np.array([self.max_steps if s is None else s for s in self.steps], dtype=float)

    @property
    def mean_initial_loss(self) -> float:
        return float(np.mean(self.initial_losses))

    @property
    def mean_steps(self) -> float:
        return float(np.mean(self.steps_filled))

    @property
    def n_unconverged(self) -> int:
        return sum(s is None for s in self.steps)

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "family": self.family,
            "ids": list(self.ids),
            "initial_losses": [float(v) for v in self.initial_losses],
            "steps": list(self.steps),
            "max_steps": self.max_steps,
            "trajectories": [[float(v) for v in row] for row in self.trajectories],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalMetrics":
        return cls(
            doc["scheme"],
            doc["family"],
            list(doc["ids"]),
            np.array(doc["initial_losses"], dtype=float),
            list(doc["steps"]),
            np.array(doc["trajectories"], dtype=float).reshape(len(doc["ids"]), -1),
            int(doc["max_steps"]),
        )


@dataclass
class ComparisonRow:
    family: str
    scheme_a: str
    scheme_b: str
    n_instances: int
    initial_loss_a: float
    initial_loss_b: float
    delta_initial_loss: float
    steps_a: float
    steps_b: float
    delta_steps_pct: float
    paired_step_diff: float
    unconverged_a: int
    unconverged_b: int


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow] = field(default_factory=list)


# -- initializers --------------------------------------------------------------


class RandomInit:
    """Uniform angles in [-pi, pi), one stream per record id."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def __call__(self, tasks, records) -> list[np.ndarray]:
        return [np.random.default_rng([self.seed, r.id]).uniform(-np.pi, np.pi, t.n_params) for t, r in zip(tasks, records)]


class ModelInit:
    """One guided diffusion sample per instance, denormalized and decoded."""

    name = "diffusion"

    def __init__(self, model: TrainedModel, seed: int = 0, guidance: float | None = None):
        self.model = model
        self.seed = seed
        self.guidance = model.config.guidance if guidance is None else guidance

    def __call__(self, tasks, records) -> list[np.ndarray]:
        if self.model.family and any(t.family.value != self.model.family for t in tasks):
            raise EvaluationError(f"model trained on {self.model.family!r} cannot initialize other families")
        cond = np.array([conditioning_features(t) for t in tasks])
        rng = np.random.default_rng(self.seed)
        xs = sample_vectors(self.model.params, cond, self.model.schedule, self.guidance, rng)
        return [vector_to_theta(t.layout, x) for t, x in zip(tasks, xs)]


def _run_one(args):
    task, theta0, cfg = args
    traj = optimize(task, theta0, cfg)
    return traj.losses, traj.converged_step


def evaluate_initializer(records, init, cfg: OptimizerConfig = OptimizerConfig(), workers: int = 1, scheme: str | None = None) -> EvalMetrics:
    """Initialize every test instance with ``init`` and optimize it."""
    records = list(records)
    if not records:
        raise EvaluationError("no test instances to evaluate")
    families = {r.family for r in records}
    if len(families) != 1:
        raise EvaluationError(f"test records mix families {sorted(families)}")
    tasks = [r.task() for r in records]
    thetas = init(tasks, records)
    initial = np.array([task_loss(t, th) for t, th in zip(tasks, thetas)], dtype=float)
    if not np.all(np.isfinite(initial)):
        raise EvaluationError("initializer produced a non-finite loss")
    jobs = [(t, np.asarray(th, dtype=float), cfg) for t, th in zip(tasks, thetas)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    trajs = np.array([res[0] for res in results])
    return EvalMetrics(
        scheme=scheme or getattr(init, "name", "custom"),
        family=families.pop(),
        ids=[r.id for r in records],
        initial_losses=initial,
        steps=[res[1] for res in results],
        trajectories=trajs,
        max_steps=cfg.max_steps,
    )


def compare_schemes(a: EvalMetrics, b: EvalMetrics) -> ComparisonReport:
    """Deltas are ``a - b``: positive means ``b`` did better."""
    if a.family != b.family:
        raise EvaluationError(f"cannot compare {a.family} with {b.family}")
    if list(a.ids) != list(b.ids):
        raise EvaluationError("schemes were evaluated on different instances")
    sa, sb = a.mean_steps, b.mean_steps
    row = ComparisonRow(
        family=a.family,
        scheme_a=a.scheme,
        scheme_b=b.scheme,
        n_instances=len(a.ids),
        initial_loss_a=a.mean_initial_loss,
        initial_loss_b=b.mean_initial_loss,
        delta_initial_loss=a.mean_initial_loss - b.mean_initial_loss,
        steps_a=sa,
        steps_b=sb,
        delta_steps_pct=100.0 * (sa - sb) / sa if sa else 0.0,
        paired_step_diff=float(np.mean(a.steps_filled - b.steps_filled)),
        unconverged_a=a.n_unconverged,
        unconverged_b=b.n_unconverged,
    )
    return ComparisonReport([row])


# -- files -----------------------------------------------------------------------

_ROW_TYPES = {k: v.type for k, v in ComparisonRow.__dataclass_fields__.items()}


def write_comparison(report: ComparisonReport, path) -> None:
    names = list(ComparisonRow.__dataclass_fields__)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in report.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(row).values()])


def read_comparison(path) -> ComparisonReport:
    casts = {"int": int, "float": float, "str": str}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            rows.append(ComparisonRow(**{k: casts[_ROW_TYPES[k]](v) for k, v in raw.items()}))
    return ComparisonReport(rows)


def loss_curve(m: EvalMetrics) -> np.ndarray:
    """(step, mean, min, max) per optimizer step."""
    tr = m.trajectories
    steps = np.arange(tr.shape[1])
    return np.column_stack([steps, tr.mean(0), tr.min(0), tr.max(0)])


def emit_report(report: ComparisonReport, metrics: list[EvalMetrics], outdir, bins: int = 20) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "comparison.csv"]
    write_comparison(report, written[0])

    path = out / "initial_losses.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "id", "initial_loss", "converged_step"])
        for m in metrics:
            for i, loss, s in zip(m.ids, m.initial_losses, m.steps):
                w.writerow([m.scheme, i, repr(float(loss)), "" if s is None else s])
    written.append(path)

    allv = np.concatenate([m.initial_losses for m in metrics])
    lo, hi = float(allv.min()), float(allv.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    path = out / "initial_loss_hist.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "bin_lo", "bin_hi", "count"])
        for m in metrics:
            counts, _ = np.histogram(m.initial_losses, edges)
            for k in range(bins):
                w.writerow([m.scheme, repr(float(edges[k])), repr(float(edges[k + 1])), int(counts[k])])
    written.append(path)

    for m in metrics:
        path = out / f"loss_curve_{m.scheme}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "mean", "min", "max"])
            for step, mean, mn, mx in loss_curve(m):
                w.writerow([int(step), repr(float(mean)), repr(float(mn)), repr(float(mx))])
        written.append(path)
    return written


def save_metrics(m: EvalMetrics, path) -> None:
    Path(path).write_text(json.dumps(m.to_json(), sort_keys=True) + "\n", encoding="utf-8")


def load_metrics(path) -> EvalMetrics:
    return EvalMetrics.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
