from __future__ import annotations

import csv

import numpy as np
import pytest

from vqadiff.dataset import generate_dataset, generate_instance
from vqadiff.ddpm import DiffusionConfig, train_model
from vqadiff.denoiser import DenoiserArch
from vqadiff.encoding import theta_to_vector
from vqadiff.evaluation import (
    EvalMetrics,
    EvaluationError,
    ModelInit,
    RandomInit,
    compare_schemes,
    emit_report,
    evaluate_initializer,
    load_metrics,
    read_comparison,
    save_metrics,
)
from vqadiff.tasks import task_loss
from vqadiff.vqe import OptimizerConfig

CFG = OptimizerConfig(max_steps=60)


@pytest.fixture(scope="module")
def records():
    return generate_dataset("fh", 6, master_seed=2, cfg=CFG)


@pytest.fixture(scope="module")
def model(records):
    x0 = np.array([theta_to_vector(r.task().layout, r.theta_opt) for r in records])
    cond = np.array([r.conditioning for r in records])
    return train_model(x0, cond, DiffusionConfig(epochs=3, batch_size=4, T=20), 0, DenoiserArch(8, hidden=16, blocks=1), "fh")


def _metrics(scheme, initial, steps, max_steps=10, family="xyz"):
    n = len(initial)
    return EvalMetrics(scheme, family, list(range(n)), np.array(initial, float), steps, np.zeros((n, max_steps + 1)), max_steps)


def test_random_init_on_qpulse_is_near_one():
    recs = generate_dataset("qpulse", 30, master_seed=5, cfg=OptimizerConfig(max_steps=10))
    m = evaluate_initializer(recs, RandomInit(0), OptimizerConfig(max_steps=10))
    assert 0.9 <= m.mean_initial_loss <= 1.0


def test_stationary_initializer_converges_at_window():
    recs = [generate_instance("xyz", (0, 0, 0), s, CFG, i) for i, s in enumerate((1, 2))]
    stored = lambda tasks, rs: [np.array(r.theta_opt) for r in rs]  # noqa: E731
    m = evaluate_initializer(recs, stored, CFG, scheme="stored")
    assert m.steps == [CFG.window, CFG.window] and m.scheme == "stored"


def test_errors(records, model):
    with pytest.raises(EvaluationError):
        evaluate_initializer([], RandomInit(0), CFG)
    other = generate_dataset("xyz", 1, master_seed=0, cfg=CFG)
    with pytest.raises(EvaluationError):
        evaluate_initializer(records[:1] + other, RandomInit(0), CFG)
    with pytest.raises(EvaluationError):
        evaluate_initializer(other, ModelInit(model, 0), CFG)


def test_initial_loss_is_first_trajectory_point(records, model):
    for init in (RandomInit(1), ModelInit(model, 1)):
        m = evaluate_initializer(records, init, CFG)
        assert np.array_equal(m.initial_losses, m.trajectories[:, 0])
        assert m.trajectories.shape == (6, CFG.max_steps + 1)
        assert m.mean_initial_loss == pytest.approx(np.mean(m.initial_losses), abs=1e-12)


def test_model_init_is_seeded_and_uses_guidance(records, model):
    tasks = [r.task() for r in records]
    a, b = ModelInit(model, 4)(tasks, records), ModelInit(model, 4)(tasks, records)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert ModelInit(model, 0).guidance == model.config.guidance
    assert ModelInit(model, 0, guidance=2.0).guidance == 2.0
    for t, th in zip(tasks, a):
        assert np.isfinite(task_loss(t, th))


def test_evaluation_does_not_mutate(records):
    before = [r.to_line() for r in records]
    evaluate_initializer(records, RandomInit(0), CFG)
    assert [r.to_line() for r in records] == before


def test_worker_independent(records):
    a = evaluate_initializer(records, RandomInit(3), CFG)
    b = evaluate_initializer(records, RandomInit(3), CFG, workers=2)
    assert np.array_equal(a.trajectories, b.trajectories) and a.steps == b.steps


def test_unconverged_counted_at_max_steps():
    m = _metrics("random", [1.0, 2.0], [4, None])
    assert m.mean_steps == 7.0 and m.n_unconverged == 1


def test_compare_identical():
    a = _metrics("random", [1.0, 2.0], [4, 6])
    row = compare_schemes(a, _metrics("diffusion", [1.0, 2.0], [4, 6])).rows[0]
    assert row.delta_initial_loss == 0 and row.delta_steps_pct == 0 and row.paired_step_diff == 0


def test_compare_published_tfi_row():
    # random vs diffusion means from the published 2D TFI comparison
    a = _metrics("random", [-3.23], [235.93], max_steps=500)
    b = _metrics("diffusion", [-12.18], [180.83], max_steps=500)
    row = compare_schemes(a, b).rows[0]
    assert row.delta_steps_pct == pytest.approx(23.4, abs=0.05)
    assert row.delta_initial_loss == pytest.approx(8.95, abs=1e-12)


def test_compare_mismatch():
    with pytest.raises(EvaluationError):
        compare_schemes(_metrics("a", [1.0], [1]), _metrics("b", [1.0, 2.0], [1, 2]))
    with pytest.raises(EvaluationError):
        compare_schemes(_metrics("a", [1.0], [1]), _metrics("b", [1.0], [1], family="fh"))


def test_report_files(tmp_path, records):
    a = evaluate_initializer(records, RandomInit(0), CFG)
    b = evaluate_initializer(records, RandomInit(1), CFG, scheme="random_b")
    report = compare_schemes(a, b)
    written = emit_report(report, [a, b], tmp_path)
    assert {p.name for p in written} == {
        "comparison.csv", "initial_losses.csv", "initial_loss_hist.csv", "loss_curve_random.csv", "loss_curve_random_b.csv",
    }
    assert read_comparison(tmp_path / "comparison.csv") == report
    with open(tmp_path / "loss_curve_random.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == CFG.max_steps + 1
    for r in rows:
        assert float(r["min"]) <= float(r["mean"]) <= float(r["max"])
    with open(tmp_path / "initial_loss_hist.csv") as fh:
        hist = list(csv.DictReader(fh))
    assert sum(int(h["count"]) for h in hist if h["scheme"] == "random") == len(records)


def test_metrics_round_trip(tmp_path, records):
    m = evaluate_initializer(records[:2], RandomInit(0), CFG)
    save_metrics(m, tmp_path / "m.json")
    back = load_metrics(tmp_path / "m.json")
    assert np.array_equal(back.trajectories, m.trajectories) and back.steps == m.steps and back.ids == m.ids

