"""Command-line entry points.

    emrbench run <config.toml>     run the configured benchmark studies
    emrbench synth <config.toml>   write a synthetic cohort to CSV files
    emrbench check                 numerical self-tests (gradients, AUROC, ...)
    emrbench report <bundle.json>  re-render report and plot CSVs from a bundle

Exit codes: 0 success, 1 bad config or input, 2 runtime invariant
violation (including failed self-tests). Malformed command lines exit 2
through argparse.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from .catalog import CatalogError, catalog_from_rows
from .cohort import make_partition
from .evaluate import auroc, load_bundle, render_from_bundle
from .ingest import Disposition, EncounterMeta, IngestError, LongRecord, Unit
from .nn import (
    bce_loss,
    build_model,
    finite_difference_gradients,
    load_model,
    make_arch,
    save_model,
)
from .experiment import (
    ConfigError,
    load_experiment_config,
    run_experiment,
)
from .pivot import flatten_matrix, pivot_encounter
from .synth import write_cohort
from .train import TrainConfig, run_schedule
from .transform import fit_standardizer, impute, pooled_internal_moments, standardize


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> float:
    """Worst per-tensor normwise relative error between two gradient sets."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = max(float(np.linalg.norm(n)), 1e-12)
        worst = max(worst, float(np.linalg.norm(a - n)) / denom)
    return worst


def _check_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(1234)
    cases = [
        ("lr", make_arch("lr", 5), (6, 5)),
        ("mlp", make_arch("mlp", 5, (4, 3)), (6, 5)),
        ("rnn", make_arch("rnn", 3, (3,)), (2, 4, 3)),
    ]
    worst = 0.0
    for _, arch, shape in cases:
        model = build_model(arch, rng)
        X = rng.normal(size=shape)
        y = rng.integers(0, 2, size=shape[0]).astype(float)
        if arch.kind == "rnn":
            loss_fn = lambda: model.loss_and_grads(X, y)[0]  # noqa: E731
            _, grads = model.loss_and_grads(X, y)
        else:
            loss_fn = lambda: model.loss_and_grads(X, y)[0]  # noqa: E731
            _, grads = model.loss_and_grads(X, y)
        numeric = finite_difference_gradients(loss_fn, model.params, step=1e-4)
        worst = max(worst, max_relative_error(grads, numeric))
    ok = worst < 1e-4
    return ok, f"max relative gradient error {worst:.3g}"


def _pairwise_auroc(labels: np.ndarray, scores: np.ndarray) -> float:
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        wins += float(np.sum(p > neg)) + 0.5 * float(np.sum(p == neg))
    return wins / (pos.size * neg.size)


def _check_auroc() -> tuple[bool, str]:
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(2, 400))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.normal(size=n), 2)  # rounding forces ties
        worst = max(worst, abs(auroc(labels, scores) - _pairwise_auroc(labels, scores)))
    ok = worst < 1e-12
    return ok, f"max |fast - pairwise| = {worst:.3g}"


_CHECK_CATALOG = [
    "heart_rate,vital,hr,20,300,,",
    "lactate,lab,,0,30,,",
    "dopamine,drug,,,,60,Cardiotonic Agents",
]


def _check_pipeline() -> tuple[bool, str]:
    catalog = catalog_from_rows(_CHECK_CATALOG)
    rng = np.random.default_rng(7)
    records = []
    for t in sorted(rng.uniform(0, 48, 30).round(3)):
        col = int(rng.integers(0, 3))
        records.append(LongRecord("p1", "e1", float(t), col, float(rng.uniform(1, 20))))
    matrix, _ = pivot_encounter(records, catalog.width)
    back = flatten_matrix(matrix)
    seen = {(t, c): v for _, _, t, c, v in records}
    if {(t, c): v for t, c, v in back} != seen:
        return False, "pivot/flatten round trip lost cells"

    params = fit_standardizer([matrix], catalog)
    z = standardize(matrix, params, catalog)
    mean, std, _ = pooled_internal_moments([z], catalog)
    if not (np.all(np.abs(mean) < 1e-9)):
        return False, f"standardized training mean off: {mean}"
    imp = impute(z, catalog)
    again = impute(imp, catalog)
    if not np.array_equal(imp.values, again.values):
        return False, "imputation is not idempotent"

    metas = []
    for i in range(60):
        unit = Unit.PICU if i % 4 else Unit.CTICU
        metas.append(
            EncounterMeta(
                encounter_id=f"e{i}",
                patient_id=f"p{i // 2}",
                unit=unit,
                disposition=Disposition.SURVIVED,
                length_of_stay=24.0,
            )
        )
    try:
        make_partition(metas, seed=3)
        return False, "partition accepted a patient spanning both units"
    except ValueError:
        pass
    metas = [m for m in metas if m.unit is Unit.PICU]
    partition = make_partition(metas, seed=3)
    per_patient: dict[str, set] = {}
    for m in metas:
        per_patient.setdefault(m.patient_id, set()).add(
            partition.assignments[m.encounter_id]
        )
    if any(len(splits) > 1 for splits in per_patient.values()):
        return False, "a patient's encounters landed in different splits"
    return True, "pivot, standardize, impute, partition all consistent"


class _ScriptedTask:
    """Schedule-checking stub: canned validation losses, no real training."""

    def __init__(self, curve):
        self.curve = curve
        self.epoch = 0
        self.lr = 1e-3
        self.reductions = 0

    def run_epoch(self, epoch: int) -> float:
        self.epoch = epoch
        return 0.0

    def validation_loss(self) -> float:
        return self.curve[min(self.epoch - 1, len(self.curve) - 1)]

    def snapshot(self):
        return self.epoch

    def restore(self, state) -> None:
        self.restored = state

    def reduce_learning_rate(self, factor: float) -> None:
        self.lr /= factor
        self.reductions += 1

    @property
    def learning_rate(self) -> float:
        return self.lr


def _check_schedule() -> tuple[bool, str]:
    cfg = TrainConfig(patience=15, max_reductions=2, max_epochs=500)
    task = _ScriptedTask([1.0])
    history = run_schedule(task, cfg)
    expected = (
        history.best_epoch == 1
        and history.epochs_run == 46
        and history.reduction_epochs == [16, 31]
        and task.restored == 1
        and history.stop_reason == "patience"
    )
    if not expected:
        return False, (
            f"constant curve gave best={history.best_epoch} "
            f"epochs={history.epochs_run} reductions={history.reduction_epochs}"
        )
    return True, "patience windows and restoration behave as specified"


def _check_checkpoint() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    model = build_model(make_arch("rnn", 4, (3, 2)), rng)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.ckpt"
        save_model(model, path)
        loaded = load_model(path)
    for name, value in model.params.items():
        if not np.array_equal(value, loaded.params[name]):
            return False, f"parameter {name} changed across save/load"
    return True, "checkpoint round trip is bit exact"


def _check_determinism() -> tuple[bool, str]:
    a = build_model(make_arch("mlp", 6, (5,)), np.random.default_rng([3, 0]))
    b = build_model(make_arch("mlp", 6, (5,)), np.random.default_rng([3, 0]))
    X = np.random.default_rng(0).normal(size=(4, 6))
    y = np.array([0.0, 1.0, 1.0, 0.0])
    la = bce_loss(a.forward(X), y)
    lb = bce_loss(b.forward(X), y)
    if la != lb or any(
        not np.array_equal(a.params[k], b.params[k]) for k in a.params
    ):
        return False, "same seed produced different models"
    return True, "seeded initialization is reproducible"


CHECKS = [
    ("gradients", _check_gradients),
    ("auroc", _check_auroc),
    ("pipeline", _check_pipeline),
    ("schedule", _check_schedule),
    ("checkpoint", _check_checkpoint),
    ("determinism", _check_determinism),
]


def _cmd_check(_args) -> int:
    failed = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as err:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(err).__name__}: {err}"
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return 2 if failed else 0


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config)
    bundle = run_experiment(
        cfg, out_dir=args.out, workers=args.workers, seed_offset=args.seed_offset
    )
    out = Path(args.out)
    print(f"wrote {out / 'bundle.json'}")
    rows = bundle["runs"]
    studies = sorted({r["study"] for r in rows})
    for study in studies:
        print(f"  report_{study}.csv")
    return 0


def _cmd_synth(args) -> int:
    cfg = load_experiment_config(args.config)
    if cfg.synth is None:
        raise ConfigError("synth requires a [synth] table in the config")
    from .catalog import load_catalog

    catalog = load_catalog(cfg.catalog)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events_path = cfg.synth_events_out or out / "events.csv"
    meta_path = cfg.synth_meta_out or out / "meta.csv"
    summary = write_cohort(cfg.synth, catalog, events_path, meta_path)
    print(f"wrote {events_path} ({summary['events']} events)")
    print(f"wrote {meta_path} ({summary['encounters']} encounters)")
    for unit, entry in sorted(summary["units"].items()):
        print(
            f"  {unit}: {entry['patients']} patients, "
            f"{entry['encounters']} encounters, {entry['deaths']} deaths"
        )
    return 0


def _cmd_report(args) -> int:
    bundle = load_bundle(args.bundle)
    out = args.out if args.out is not None else Path(args.bundle).parent
    written = render_from_bundle(bundle, out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emrbench",
        description="EMR data-quality benchmark for mortality models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured benchmark")
    run.add_argument("config", help="experiment TOML file")
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--workers", type=int, default=1, help="parallel workers")
    run.add_argument(
        "--seed-offset", type=int, default=0, help="added to every model seed"
    )
    run.set_defaults(fn=_cmd_run)

    synth = sub.add_parser("synth", help="write a synthetic cohort to CSVs")
    synth.add_argument("config", help="config TOML with a [synth] table")
    synth.add_argument("--out", default=".", help="directory for default outputs")
    synth.set_defaults(fn=_cmd_synth)

    check = sub.add_parser("check", help="run numerical self-tests")
    check.set_defaults(fn=_cmd_check)

    report = sub.add_parser("report", help="re-render CSVs from a bundle")
    report.add_argument("bundle", help="bundle.json from a previous run")
    report.add_argument("--out", default=None, help="output directory")
    report.set_defaults(fn=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CatalogError, IngestError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except RuntimeError as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
