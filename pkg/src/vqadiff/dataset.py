"""Corpora of optimized ansatz parameters: generation, JSON-lines persistence, splits.

Record file: one JSON object per line, keys

    schema_version, id, family, params, seed, prompt, conditioning,
    theta_opt, final_loss, converged_step, generator, checksum

``checksum`` is the SHA-256 of the canonical (sorted-key) JSON of every other
field. Floats are written with the shortest repr that round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .tasks import (
    PUBLISHED_INSTANCES,
    PAULI_CODES,
    TaskFamily,
    build_task,
    conditioning_features,
    task_loss,
)
from .vqe import OptimizerConfig, optimize

SCHEMA_VERSION = 1
GENERATOR = f"vqadiff-{__version__}"

DESK_INSTANCES = {
    TaskFamily.XYZ_1D: 200,
    TaskFamily.FH_1D: 200,
    TaskFamily.TFI_2D: 100,
    TaskFamily.Q_PULSE: 200,
    TaskFamily.RANDOM_VQE: 100,
}
PRESETS = {"published": PUBLISHED_INSTANCES, "desk": DESK_INSTANCES}


class DatasetError(ValueError):
    pass


class SchemaVersionError(DatasetError):
    pass


@dataclass
class DatasetRecord:
    id: int
    family: str
    params: list[float]
    seed: int
    prompt: str
    conditioning: list[float]
    theta_opt: list[float]
    final_loss: float
    converged_step: int | None
    generator: str = GENERATOR
    schema_version: int = SCHEMA_VERSION

    def body(self) -> dict:
        return asdict(self)

    def checksum(self) -> str:
        blob = json.dumps(self.body(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def to_line(self) -> str:
        doc = self.body()
        doc["checksum"] = self.checksum()
        return json.dumps(doc, sort_keys=True, ensure_ascii=False)

    def task(self):
        return build_task(self.family, self.params, self.seed)


@dataclass
class SplitManifest:
    train: list[int]
    test: list[int]
    seed: int
    ratio: float
    schema_version: int = SCHEMA_VERSION

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SplitManifest":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("schema_version", 0) > SCHEMA_VERSION:
            raise SchemaVersionError(f"split manifest schema {doc['schema_version']} is newer than {SCHEMA_VERSION}")
        return cls(**doc)


# -- generation ----------------------------------------------------------------


def sample_task_params(family, rng: np.random.Generator) -> tuple[float, ...]:
    """Draw problem parameters; the published example prompts lie inside these ranges."""
    family = TaskFamily.parse(family)
    if family is TaskFamily.XYZ_1D:
        return tuple(rng.uniform(0.0, 2.0, 3))
    if family is TaskFamily.FH_1D:
        return (rng.uniform(0.1, 1.0), rng.uniform(0.0, 2.0))
    if family is TaskFamily.TFI_2D:
        return (rng.uniform(0.0, 1.0), rng.uniform(0.0, 4.0))
    if family is TaskFamily.Q_PULSE:
        h0 = rng.uniform(0.0, 0.5, 2)
        return (h0[0], h0[1], rng.uniform(0.1, 0.5), rng.uniform(0.5, 2.0))
    flat: list[float] = []
    for _ in range(int(rng.integers(1, 3))):
        codes = rng.integers(0, len(PAULI_CODES), size=4)
        while not codes.any():
            codes = rng.integers(0, len(PAULI_CODES), size=4)
        flat += [rng.uniform(-1.0, 1.0)] + [float(v) for v in codes]
    return tuple(flat)


def instance_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def initial_angles(n_params: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 1]).uniform(-np.pi, np.pi, n_params)


def generate_instance(family, params, seed: int, cfg: OptimizerConfig = OptimizerConfig(), index: int = 0) -> DatasetRecord:
    task = build_task(family, params, seed)
    traj = optimize(task, initial_angles(task.n_params, seed), cfg)
    final = float(task_loss(task, traj.final_theta))
    if not math.isfinite(final):
        raise DatasetError(f"instance {index}: optimization ended at a non-finite loss")
    return DatasetRecord(
        id=index,
        family=task.family.value,
        params=[float(v) for v in task.params],
        seed=int(seed),
        prompt=task.prompt,
        conditioning=[float(v) for v in conditioning_features(task)],
        theta_opt=[float(v) for v in traj.final_theta],
        final_loss=final,
        converged_step=traj.converged_step,
    )


def _generate_one(args) -> DatasetRecord:
    family, master_seed, index, cfg = args
    seed = instance_seed(master_seed, index)
    params = sample_task_params(family, np.random.default_rng([seed, 0]))
    return generate_instance(family, params, seed, cfg, index)


def generate_dataset(family, n: int, master_seed: int, cfg: OptimizerConfig = OptimizerConfig(), workers: int = 1, progress=None) -> list[DatasetRecord]:
    """``n`` records with per-instance seeds derived from ``master_seed`` and the record id."""
    if n < 1:
        raise DatasetError("need at least one instance")
    family = TaskFamily.parse(family)
    jobs = [(family, master_seed, i, cfg) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            it = pool.map(_generate_one, jobs, chunksize=max(1, n // (4 * workers)))
            records = []
            for rec in it:
                records.append(rec)
                if progress:
                    progress(len(records), n)
        return records
    records = []
    for job in jobs:
        records.append(_generate_one(job))
        if progress:
            progress(len(records), n)
    return records


def split_dataset(records, ratio: float = 0.7, seed: int = 0) -> SplitManifest:
    ids = [r.id if isinstance(r, DatasetRecord) else int(r) for r in records]
    if len(ids) < 2:
        raise DatasetError("need at least two records to split")
    if not 0 < ratio < 1:
        raise DatasetError("ratio must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = max(1, min(len(ids) - 1, math.floor(ratio * len(ids))))
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])
    return SplitManifest(train, test, seed, ratio)


# -- persistence ---------------------------------------------------------------


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_line() + "\n")


def write_manifest(records, path, master_seed: int, cfg: OptimizerConfig, family) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "generator": GENERATOR,
        "family": TaskFamily.parse(family).value,
        "count": len(records),
        "master_seed": master_seed,
        "optimizer": asdict(cfg),
        "ids": [r.id for r in records],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


_FIELDS = set(DatasetRecord.__dataclass_fields__)


def parse_record(line: str, lineno: int = 0, verify_loss: bool = True) -> DatasetRecord:
    where = f"line {lineno}"
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{where}: malformed JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise DatasetError(f"{where}: expected a JSON object")
    version = doc.get("schema_version")
    if not isinstance(version, int):
        raise DatasetError(f"{where}: missing schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{where}: record schema {version}, this reader understands {SCHEMA_VERSION}")
    checksum = doc.pop("checksum", None)
    if set(doc) != _FIELDS:
        raise DatasetError(f"{where}: unexpected field set {sorted(set(doc) ^ _FIELDS)}")
    rec = DatasetRecord(**doc)
    if checksum != rec.checksum():
        raise DatasetError(f"{where}: checksum mismatch")
    try:
        task = rec.task()
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from None
    if len(rec.theta_opt) != task.n_params:
        raise DatasetError(f"{where}: theta_opt has {len(rec.theta_opt)} entries, layout needs {task.n_params}")
    if verify_loss:
        loss = float(task_loss(task, rec.theta_opt))
        if abs(loss - rec.final_loss) > 1e-9:
            raise DatasetError(f"{where}: stored final_loss {rec.final_loss} != recomputed {loss}")
    return rec


def load_records(path, verify_loss: bool = True) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                records.append(parse_record(line, lineno, verify_loss))
    return records


def select(records, ids) -> list[DatasetRecord]:
    by_id = {r.id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DatasetError(f"ids not present in records: {missing[:5]}")
    return [by_id[i] for i in ids]
