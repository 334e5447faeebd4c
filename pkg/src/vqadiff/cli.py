"""Command-line pipeline: gen-dataset, split, train, sample, eval, compare, selftest.

Exit codes: 0 success, 1 runtime failure, 2 usage error (unknown flag or
subcommand), 3 missing input file, 4 configuration violation, 5 corrupt or
incompatible data file. The default output directory is ``$VQADIFF_OUT`` or
``./runs``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, diffusion_config, optimizer_config, read_config
from .dataset import (
    PRESETS,
    SCHEMA_VERSION,
    DatasetError,
    SplitManifest,
    generate_dataset,
    load_records,
    select,
    split_dataset,
    write_manifest,
    write_records,
)
from .ddpm import CHECKPOINT_SCHEMA, DiffusionError, load_checkpoint, sample_vectors, save_checkpoint, train_model
from .denoiser import DenoiserArch
from .encoding import theta_to_vector, vector_to_theta
from .evaluation import (
    ModelInit,
    RandomInit,
    compare_schemes,
    emit_report,
    evaluate_initializer,
    load_metrics,
    save_metrics,
)
from .tasks import TaskError, TaskFamily, build_task, conditioning_features, task_loss

log = logging.getLogger("vqadiff")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3, 4, 5


def _add_optimizer(p):
    g = p.add_argument_group("VQE optimizer")
    g.add_argument("--opt-lr", dest="opt_lr", type=float, default=0.05)
    g.add_argument("--opt-beta1", dest="opt_beta1", type=float, default=0.9)
    g.add_argument("--opt-beta2", dest="opt_beta2", type=float, default=0.999)
    g.add_argument("--opt-eps", dest="opt_eps", type=float, default=1e-8)
    g.add_argument("--max-steps", type=int, default=500)
    g.add_argument("--window", type=int, default=10, help="convergence window")
    g.add_argument("--tol", type=float, default=1e-4, help="convergence tolerance")


def _add_diffusion(p):
    g = p.add_argument_group("diffusion")
    g.add_argument("--T", dest="T", type=int, default=100)
    g.add_argument("--beta-start", type=float, default=1e-4)
    g.add_argument("--beta-end", type=float, default=0.02)
    g.add_argument("--g", dest="g", type=float, default=10.0, help="guidance scale")
    g.add_argument("--p-uncond", type=float, default=0.1, help="condition dropout probability")
    g.add_argument("--epochs", type=int, default=500)
    g.add_argument("--lr", type=float, default=5e-5, help="peak learning rate")
    g.add_argument("--batch-size", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override it")
    common.add_argument("--out", default=os.environ.get("VQADIFF_OUT", "runs"), help="output directory")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vqadiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", parents=[common], help="optimize random task instances")
    p.add_argument("--family", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS), help="instance count preset (desk or published)")
    p.add_argument("--seed", type=int, default=0)
    _add_optimizer(p)

    p = sub.add_parser("split", parents=[common], help="train/test split manifest")
    p.add_argument("--records", required=True)
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--split-seed", "--seed", dest="split_seed", type=int, default=0)

    p = sub.add_parser("train", parents=[common], help="train a diffusion initializer")
    p.add_argument("--records", required=True)
    p.add_argument("--split", help="split manifest; its train ids are used")
    p.add_argument("--family")
    p.add_argument("--train-seed", "--seed", dest="train_seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--time-dim", type=int, default=32)
    p.add_argument("--cond-dim", type=int, default=32)
    _add_diffusion(p)

    p = sub.add_parser("sample", parents=[common], help="sample initial angles for given task parameters")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--params", required=True, help="comma-separated task parameters, e.g. 2,1,0.5")
    p.add_argument("--n-samples", type=int, default=1)
    p.add_argument("--g", dest="g", type=float, help="guidance scale (default: checkpoint value)")
    p.add_argument("--eval-seed", "--seed", dest="eval_seed", type=int, default=0)

    p = sub.add_parser("eval", parents=[common], help="evaluate an initializer on the test split")
    p.add_argument("--records", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--scheme", choices=["random", "diffusion"], required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--g", dest="g", type=float)
    p.add_argument("--eval-seed", "--seed", dest="eval_seed", type=int, default=0)
    _add_optimizer(p)

    p = sub.add_parser("compare", parents=[common], help="compare two metric files and write the report")
    p.add_argument("--a", required=True, help="baseline metrics (e.g. random)")
    p.add_argument("--b", required=True, help="candidate metrics (e.g. diffusion)")

    p = sub.add_parser("selftest", parents=[common], help="run the oracle-backed invariant checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _need(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _provenance(ns, out: Path, extra=None, tag: str = "") -> None:
    snap = {k: v for k, v in sorted(vars(ns).items()) if k not in {"verbose", "workers"}}
    doc = {
        "command": ns.command,
        "version": __version__,
        "schemas": {"records": SCHEMA_VERSION, "checkpoint": CHECKPOINT_SCHEMA},
        "config": snap,
    }
    if extra:
        doc.update(extra)
    (out / f"provenance_{ns.command}{tag}.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _split_records(ns):
    records = load_records(_need(ns.records))
    if getattr(ns, "split", None):
        manifest = SplitManifest.load(_need(ns.split))
        return records, manifest
    return records, None


def cmd_gen_dataset(ns, out: Path) -> int:
    family = TaskFamily.parse(ns.family)
    n = ns.n if ns.n is not None else (PRESETS[ns.preset][family] if ns.preset else None)
    if n is None or n < 1:
        raise ConfigError("gen-dataset needs --n >= 1 or --preset")
    cfg = optimizer_config(ns)
    progress = (lambda i, tot: log.info("instance %d/%d", i, tot)) if ns.verbose else None
    records = generate_dataset(family, n, ns.seed, cfg, workers=ns.workers, progress=progress)
    write_records(records, out / "records.jsonl")
    write_manifest(records, out / "manifest.json", ns.seed, cfg, family)
    _provenance(ns, out, {"seeds": {"master": ns.seed}})
    print(f"wrote {len(records)} {family.value} records to {out / 'records.jsonl'}")
    return EXIT_OK


def cmd_split(ns, out: Path) -> int:
    records = load_records(_need(ns.records), verify_loss=False)
    manifest = split_dataset(records, ns.ratio, ns.split_seed)
    manifest.save(out / "split.json")
    _provenance(ns, out, {"seeds": {"split": ns.split_seed}})
    print(f"train {len(manifest.train)} / test {len(manifest.test)} -> {out / 'split.json'}")
    return EXIT_OK


def cmd_train(ns, out: Path) -> int:
    records, manifest = _split_records(ns)
    train = select(records, manifest.train) if manifest else records
    families = {r.family for r in train}
    if len(families) != 1:
        raise ConfigError(f"training records must share one family, found {sorted(families)}")
    family = families.pop()
    if ns.family and TaskFamily.parse(ns.family).value != family:
        raise ConfigError(f"--family {ns.family} does not match records ({family})")
    cfg = diffusion_config(ns)
    x0 = np.array([theta_to_vector(r.task().layout, r.theta_opt) for r in train])
    cond = np.array([r.conditioning for r in train])
    try:
        arch = DenoiserArch(x0.shape[1], ns.hidden, ns.blocks, ns.time_dim, ns.cond_dim)
    except ValueError as exc:
        raise ConfigError(f"denoiser: {exc}") from None
    logger = (lambda e, l: log.info("epoch %d loss %.6f", e, l)) if ns.verbose else None
    model = train_model(x0, cond, cfg, ns.train_seed, arch, family, log=logger)
    model.meta["n_train"] = len(train)
    save_checkpoint(model, out / "checkpoint.json")
    with open(out / "loss_history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, l in enumerate(model.history):
            w.writerow([e, repr(float(l))])
    _provenance(ns, out, {"seeds": {"train": ns.train_seed}})
    print(f"trained {family} model on {len(train)} records; final epoch loss {model.history[-1]:.6f}")
    return EXIT_OK


def cmd_sample(ns, out: Path) -> int:
    model = load_checkpoint(_need(ns.checkpoint))
    try:
        params = [float(v) for v in ns.params.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--params must be comma-separated numbers, got {ns.params!r}") from None
    task = build_task(model.family, params)
    g = model.config.guidance if ns.g is None else ns.g
    cond = np.tile(conditioning_features(task), (ns.n_samples, 1))
    xs = sample_vectors(model.params, cond, model.schedule, g, np.random.default_rng(ns.eval_seed))
    with open(out / "samples.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "loss"] + [f"theta_{k}" for k in range(task.n_params)])
        for i, x in enumerate(xs):
            theta = vector_to_theta(task.layout, x)
            loss = float(task_loss(task, theta))
            w.writerow([i, repr(loss)] + [repr(float(v)) for v in theta])
            print(f"sample {i}: loss {loss:.6f} theta {' '.join(f'{v:.6f}' for v in theta)}")
    _provenance(ns, out, {"seeds": {"sample": ns.eval_seed}, "prompt": task.prompt})
    return EXIT_OK


def cmd_eval(ns, out: Path) -> int:
    records, manifest = _split_records(ns)
    test = select(records, manifest.test)
    cfg = optimizer_config(ns)
    if ns.scheme == "random":
        init = RandomInit(ns.eval_seed)
    else:
        if not ns.checkpoint:
            raise ConfigError("--scheme diffusion needs --checkpoint")
        init = ModelInit(load_checkpoint(_need(ns.checkpoint)), ns.eval_seed, ns.g)
    metrics = evaluate_initializer(test, init, cfg, workers=ns.workers)
    save_metrics(metrics, out / f"metrics_{metrics.scheme}.json")
    _provenance(ns, out, {"seeds": {"eval": ns.eval_seed}}, tag=f"_{metrics.scheme}")
    print(
        f"{metrics.scheme}: mean initial loss {metrics.mean_initial_loss:.6f}, "
        f"mean convergence steps {metrics.mean_steps:.2f} ({metrics.n_unconverged} unconverged)"
    )
    return EXIT_OK


def cmd_compare(ns, out: Path) -> int:
    a, b = load_metrics(_need(ns.a)), load_metrics(_need(ns.b))
    if a.scheme == b.scheme:
        b.scheme = b.scheme + "_b"
    report = compare_schemes(a, b)
    emit_report(report, [a, b], out)
    _provenance(ns, out)
    row = report.rows[0]
    print(
        f"{row.family}: initial loss {row.initial_loss_a:.4f} -> {row.initial_loss_b:.4f} "
        f"(delta {row.delta_initial_loss:.4f}); steps {row.steps_a:.2f} -> {row.steps_b:.2f} "
        f"(delta {row.delta_steps_pct:.1f}%)"
    )
    return EXIT_OK


def cmd_selftest(ns, out: Path) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(ns.seed) else EXIT_FAIL


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "split": cmd_split,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "selftest": cmd_selftest,
}


def run_command(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        # config values become parser defaults so explicit flags still win
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            defaults = read_config(known.config)
            for action in parser._subparsers._group_actions[0].choices.values():
                dests = {a.dest for a in action._actions}
                action.set_defaults(**{k: v for k, v in defaults.items() if k in dests})
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    out = Path(ns.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[ns.command](ns, out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, TaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DiffusionError, ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
