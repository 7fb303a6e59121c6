"""Benchmark orchestration: config files, the permutation grid, result bundles.

A run starts from one TOML config naming a variable catalog and either a
pair of event/meta CSVs or an inline synthetic-cohort table. The grid is
organized as studies that each vary one axis away from a shared baseline
(full training set, combined inputs, drugs as charted): training-set
fraction, input type, and drug encoding. Identical permutation rows are
trained once and reported under every study that contains them.

All results land in one JSON bundle with sorted keys and no volatile
fields, so re-running a config reproduces the file byte for byte; report
and plot CSVs are rendered from the bundle, never alongside it.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .catalog import VariableCatalog, load_catalog
from .cohort import (
    DEFAULT_FRACTIONS,
    DrugEncoding,
    InputType,
    Partition,
    PermutationSpec,
    Split,
    encode_drugs,
    make_partition,
    select_inputs,
    subsample_training,
)
from .evaluate import (
    RunResult,
    auroc_of_scores,
    render_from_bundle,
    save_bundle,
    score_encounters,
)
from .ingest import (
    EncounterMeta,
    LongRecord,
    curate_records,
    drop_out_of_encounter,
    parse_events,
    parse_meta,
)
from .nn import build_model, make_arch, save_model
from .pivot import PatientMatrix, pivot_all
from .synth import SynthConfig, generate
from .train import TrainConfig, train_model
from .transform import fit_standardizer, impute, save_params_csv, standardize

BUNDLE_SCHEMA_VERSION = 1

STUDY_TRAINING_FRACTION = "training_fraction"
STUDY_INPUT_TYPE = "input_type"
STUDY_DRUG_FIDELITY = "drug_fidelity"
ALL_STUDIES = (STUDY_TRAINING_FRACTION, STUDY_INPUT_TYPE, STUDY_DRUG_FIDELITY)

MODEL_KINDS = ("lr", "mlp", "rnn")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass(frozen=True)
class ExperimentConfig:
    catalog: Path
    events: Path | None = None
    meta: Path | None = None
    synth: SynthConfig | None = None
    synth_events_out: Path | None = None
    synth_meta_out: Path | None = None
    seed: int = 0
    model_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    models: tuple[str, ...] = MODEL_KINDS
    studies: tuple[str, ...] = ALL_STUDIES
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    input_types: tuple[InputType, ...] = (
        InputType.COMBINED,
        InputType.INTERNALS,
        InputType.EXTERNALS,
    )
    drug_encodings: tuple[DrugEncoding, ...] = (
        DrugEncoding.NONE,
        DrugEncoding.BINARY,
        DrugEncoding.MESH,
    )
    mlp_hidden: tuple[int, ...] = (256, 256)
    rnn_hidden: tuple[int, ...] | None = None  # None: one layer per input width
    train: TrainConfig = TrainConfig()
    horizon_hours: float = 12.0
    # fit standardization on the full training set even for fraction rows
    reuse_full_standardizer: bool = False

    def __post_init__(self) -> None:
        have_files = self.events is not None or self.meta is not None
        if have_files and (self.events is None or self.meta is None):
            raise ConfigError("events and meta files must be given together")
        if have_files == (self.synth is not None):
            raise ConfigError(
                "exactly one data source required: events+meta files or a "
                "[synth] table"
            )
        if not self.model_seeds:
            raise ConfigError("model_seeds must not be empty")
        if len(set(self.model_seeds)) != len(self.model_seeds):
            raise ConfigError("model_seeds must be distinct")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"unknown model {m!r}; expected one of {MODEL_KINDS}")
        if not self.models:
            raise ConfigError("models must not be empty")
        for s in self.studies:
            if s not in ALL_STUDIES:
                raise ConfigError(f"unknown study {s!r}; expected one of {ALL_STUDIES}")
        if len(set(self.fractions)) != len(self.fractions):
            raise ConfigError("fractions must be distinct")
        for f in self.fractions:
            if not 0 < f <= 1:
                raise ConfigError(f"fractions must be in (0, 1], got {f}")
        if self.horizon_hours <= 0:
            raise ConfigError("horizon_hours must be > 0")


def _require_keys(table: Mapping, allowed: set[str], section: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")


def _synth_from_table(table: Mapping) -> tuple[SynthConfig, Path | None, Path | None]:
    table = dict(table)
    events_out = table.pop("events_out", None)
    meta_out = table.pop("meta_out", None)
    fields = {f.name for f in dataclasses.fields(SynthConfig)}
    _require_keys(table, fields, "synth")
    try:
        cfg = SynthConfig(**table)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad [synth] table: {err}") from err
    return (
        cfg,
        Path(events_out) if events_out is not None else None,
        Path(meta_out) if meta_out is not None else None,
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse a TOML experiment config; paths resolve against its directory."""
    path = Path(path)
    with open(path, "rb") as handle:
        try:
            doc = tomllib.load(handle)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from err
    _require_keys(doc, {"data", "run", "model", "train", "synth"}, "root")
    base = path.parent

    data = doc.get("data", {})
    _require_keys(data, {"catalog", "events", "meta"}, "data")
    if "catalog" not in data:
        raise ConfigError("[data] must name a catalog file")

    def _resolve(p: str | None) -> Path | None:
        return (base / p).resolve() if p is not None else None

    synth = None
    synth_events_out = synth_meta_out = None
    if "synth" in doc:
        synth, synth_events_out, synth_meta_out = _synth_from_table(doc["synth"])
        synth_events_out = (
            (base / synth_events_out).resolve() if synth_events_out else None
        )
        synth_meta_out = (base / synth_meta_out).resolve() if synth_meta_out else None

    run = doc.get("run", {})
    _require_keys(
        run,
        {
            "seed",
            "model_seeds",
            "models",
            "studies",
            "fractions",
            "input_types",
            "drug_encodings",
            "horizon_hours",
            "reuse_full_standardizer",
        },
        "run",
    )
    model = doc.get("model", {})
    _require_keys(model, {"mlp_hidden", "rnn_hidden"}, "model")

    train_table = doc.get("train", {})
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    _require_keys(train_table, fields, "train")
    try:
        train = TrainConfig(**train_table)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad [train] table: {err}") from err

    kwargs: dict = {
        "catalog": _resolve(data["catalog"]),
        "events": _resolve(data.get("events")),
        "meta": _resolve(data.get("meta")),
        "synth": synth,
        "synth_events_out": synth_events_out,
        "synth_meta_out": synth_meta_out,
        "train": train,
    }
    try:
        if "seed" in run:
            kwargs["seed"] = int(run["seed"])
        if "model_seeds" in run:
            kwargs["model_seeds"] = tuple(int(s) for s in run["model_seeds"])
        if "models" in run:
            kwargs["models"] = tuple(run["models"])
        if "studies" in run:
            kwargs["studies"] = tuple(run["studies"])
        if "fractions" in run:
            kwargs["fractions"] = tuple(float(f) for f in run["fractions"])
        if "input_types" in run:
            kwargs["input_types"] = tuple(InputType(t) for t in run["input_types"])
        if "drug_encodings" in run:
            kwargs["drug_encodings"] = tuple(
                DrugEncoding(d) for d in run["drug_encodings"]
            )
        if "horizon_hours" in run:
            kwargs["horizon_hours"] = float(run["horizon_hours"])
        if "reuse_full_standardizer" in run:
            kwargs["reuse_full_standardizer"] = bool(run["reuse_full_standardizer"])
        if "mlp_hidden" in model:
            kwargs["mlp_hidden"] = tuple(int(h) for h in model["mlp_hidden"])
        if "rnn_hidden" in model:
            kwargs["rnn_hidden"] = tuple(int(h) for h in model["rnn_hidden"]) or None
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


@dataclass
class PreparedData:
    """Catalog, cohort, patient-level partition, and raw pivoted matrices."""

    catalog: VariableCatalog
    metas: list[EncounterMeta]
    labels: dict[str, int]
    partition: Partition
    raw: dict[str, PatientMatrix]
    source_info: dict


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    catalog = load_catalog(cfg.catalog)
    if cfg.synth is not None:
        records, metas = generate(cfg.synth, catalog)
        source_info = {"source": "synthetic", "events": len(records)}
    else:
        records, stats = parse_events(cfg.events, catalog)
        records = curate_records(records, catalog, stats)
        metas = parse_meta(cfg.meta)
        records = drop_out_of_encounter(records, metas, stats)
        source_info = {"source": "files", "ingest": stats.as_dict()}
    matrices, collisions = pivot_all(records, catalog.width)
    # Encounters that never charted anything cannot be scored; drop them.
    kept = [m for m in metas if m.encounter_id in matrices]
    source_info["cell_collisions"] = collisions
    source_info["empty_encounters"] = len(metas) - len(kept)
    if not kept:
        raise ConfigError("no encounter has any events")
    partition = make_partition(kept, cfg.seed)
    labels = {m.encounter_id: m.label for m in kept}
    return PreparedData(
        catalog=catalog,
        metas=kept,
        labels=labels,
        partition=partition,
        raw=matrices,
        source_info=source_info,
    )


def spec_slug(spec: PermutationSpec) -> str:
    return (
        f"f{spec.training_fraction:g}_{spec.input_type.value}"
        f"_{spec.drug_encoding.value}"
    )


def study_rows(cfg: ExperimentConfig) -> dict[PermutationSpec, list[tuple[str, str, int]]]:
    """Map each distinct permutation row to its (study, label, index) slots."""
    rows: dict[PermutationSpec, list[tuple[str, str, int]]] = {}

    def add(spec: PermutationSpec, study: str, label: str, index: int) -> None:
        rows.setdefault(spec, []).append((study, label, index))

    for study in cfg.studies:
        if study == STUDY_TRAINING_FRACTION:
            for i, f in enumerate(cfg.fractions):
                add(PermutationSpec(training_fraction=f), study, repr(float(f)), i)
        elif study == STUDY_INPUT_TYPE:
            for i, t in enumerate(cfg.input_types):
                add(PermutationSpec(input_type=t), study, t.value, i)
        elif study == STUDY_DRUG_FIDELITY:
            for i, d in enumerate(cfg.drug_encodings):
                add(PermutationSpec(drug_encoding=d), study, d.value, i)
    return rows


def transform_split(
    raw: Mapping[str, PatientMatrix],
    encounter_ids: Sequence[str],
    params,
    catalog: VariableCatalog,
) -> dict[str, PatientMatrix]:
    return {
        eid: impute(standardize(raw[eid], params, catalog), catalog)
        for eid in encounter_ids
    }


def apply_spec(
    matrices: Mapping[str, PatientMatrix],
    spec: PermutationSpec,
    catalog: VariableCatalog,
) -> dict[str, PatientMatrix]:
    """Drug encoding and input selection on already-imputed matrices."""
    if spec.drug_encoding is not DrugEncoding.NONE and spec.input_type is not (
        InputType.COMBINED
    ):
        raise ConfigError(
            "a permutation row may vary input type or drug encoding, not both"
        )
    out = {}
    for eid, m in matrices.items():
        m = encode_drugs(m, catalog, spec.drug_encoding)
        m = select_inputs(m, catalog, spec.input_type)
        out[eid] = m
    return out


def _check_no_leakage(partition: Partition, train_ids: set[str]) -> None:
    held_out = (
        set(partition.encounters(Split.VALIDATION))
        | set(partition.encounters(Split.TEST_PICU))
        | set(partition.encounters(Split.TEST_CTICU))
    )
    overlap = train_ids & held_out
    if overlap:
        raise RuntimeError(
            f"training subset leaks into held-out splits: {sorted(overlap)[:5]}"
        )


def _train_eval_task(payload: dict) -> dict:
    """Train one (permutation, model, seed) cell and score both test sets.

    Top-level function so worker processes can receive it; everything it
    needs arrives in the payload.  Failures re-raise tagged with the run
    coordinates so a dead cell in a long grid is identifiable.
    """
    try:
        return _train_eval_cell(payload)
    except Exception as err:
        label = f"{payload['slug']}/{payload['kind']}/s{payload['run_seed']}"
        message = f"run {label}: {err}"
        try:
            tagged = type(err)(message)
        except TypeError:
            tagged = RuntimeError(message)
        raise tagged from err


def _train_eval_cell(payload: dict) -> dict:
    spec_label: str = payload["slug"]
    kind: str = payload["kind"]
    run_seed: int = payload["run_seed"]
    train_cfg: TrainConfig = payload["train_cfg"]
    matrices: dict[str, dict[str, PatientMatrix]] = payload["matrices"]
    labels: dict[str, int] = payload["labels"]
    width = next(iter(matrices["train"].values())).width
    arch = make_arch(kind, width, payload["hidden"])
    model = build_model(arch, np.random.default_rng([run_seed, 0]))
    history = train_model(
        model,
        list(matrices["train"].values()),
        list(matrices["validation"].values()),
        labels,
        train_cfg,
        run_seed,
    )
    out_dir: Path | None = payload["runs_dir"]
    if out_dir is not None:
        stem = f"{spec_label}_{kind}_s{run_seed}"
        history.to_csv(out_dir / f"{stem}_history.csv")
        save_model(model, out_dir / f"{stem}.ckpt")
    result: dict = {
        "training": {
            "best_epoch": history.best_epoch,
            "best_val_loss": history.best_val_loss,
            "epochs_run": history.epochs_run,
            "stop_reason": history.stop_reason,
        },
        "tests": {},
    }
    for test_name in ("picu", "cticu"):
        split_matrices = matrices[f"test_{test_name}"]
        if not split_matrices:
            continue
        scores = score_encounters(
            model,
            list(split_matrices.values()),
            labels,
            horizon=payload["horizon"],
        )
        result["tests"][test_name] = {
            "auroc": auroc_of_scores(scores),
            "n_encounters": len(scores),
            "n_post_horizon": sum(s.post_horizon for s in scores),
        }
    return result


def _jsonify(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonify(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (tuple, list)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    workers: int = 1,
    seed_offset: int = 0,
) -> dict:
    """Run the configured studies end to end; returns the result bundle.

    Writes bundle.json, per-study report CSVs, plot CSVs, partition.csv,
    per-fraction standardization CSVs, and per-run histories/checkpoints
    under ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)

    prepared = prepare_data(cfg)
    partition = prepared.partition
    partition.to_csv(out / "partition.csv")
    catalog = prepared.catalog

    rows = study_rows(cfg)
    specs = list(rows)

    split_ids = {
        "validation": partition.encounters(Split.VALIDATION),
        "test_picu": partition.encounters(Split.TEST_PICU),
        "test_cticu": partition.encounters(Split.TEST_CTICU),
    }

    # Standardization and imputation depend only on the training fraction.
    fraction_cache: dict[float, tuple] = {}

    def imputed_for_fraction(fraction: float):
        if fraction not in fraction_cache:
            train_ids = subsample_training(partition, fraction, cfg.seed)
            _check_no_leakage(partition, train_ids)
            fit_ids = (
                partition.encounters(Split.TRAIN)
                if cfg.reuse_full_standardizer
                else sorted(train_ids)
            )
            params = fit_standardizer(
                [prepared.raw[eid] for eid in fit_ids], catalog
            )
            save_params_csv(
                params, catalog, out / f"standardization_f{fraction:g}.csv"
            )
            imputed = {
                "train": transform_split(
                    prepared.raw, sorted(train_ids), params, catalog
                ),
            }
            for name, ids in split_ids.items():
                imputed[name] = transform_split(prepared.raw, ids, params, catalog)
            fraction_cache[fraction] = (params, imputed)
        return fraction_cache[fraction]

    results: list[RunResult] = []
    training_info: dict[str, dict] = {}

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for spec in specs:
            _, imputed = imputed_for_fraction(spec.training_fraction)
            spec_matrices = {
                name: apply_spec(split, spec, catalog)
                for name, split in imputed.items()
            }
            slug = spec_slug(spec)
            tasks = []
            for kind in cfg.models:
                hidden: tuple[int, ...] | None
                if kind == "lr":
                    hidden = ()
                elif kind == "mlp":
                    hidden = cfg.mlp_hidden
                else:
                    hidden = cfg.rnn_hidden
                for model_seed in cfg.model_seeds:
                    payload = {
                        "slug": slug,
                        "kind": kind,
                        "run_seed": model_seed + seed_offset,
                        "train_cfg": cfg.train,
                        "matrices": spec_matrices,
                        "labels": prepared.labels,
                        "hidden": hidden,
                        "horizon": cfg.horizon_hours,
                        "runs_dir": runs_dir,
                    }
                    tasks.append((kind, model_seed, payload))
            if pool is not None:
                outcomes = list(pool.map(_train_eval_task, [p for _, _, p in tasks]))
            else:
                outcomes = [_train_eval_task(p) for _, _, p in tasks]
            for (kind, model_seed, _), outcome in zip(tasks, outcomes):
                training_info[f"{slug}/{kind}/s{model_seed}"] = outcome["training"]
                for study, label, index in rows[spec]:
                    for test_name, cell in outcome["tests"].items():
                        results.append(
                            RunResult(
                                study=study,
                                row_label=label,
                                row_index=index,
                                model=kind,
                                test_set=test_name,
                                seed=model_seed,
                                auroc=cell["auroc"],
                                n_encounters=cell["n_encounters"],
                                n_post_horizon=cell["n_post_horizon"],
                            )
                        )
    finally:
        if pool is not None:
            pool.shutdown()

    results.sort(
        key=lambda r: (
            ALL_STUDIES.index(r.study),
            r.row_index,
            MODEL_KINDS.index(r.model),
            r.test_set,
            r.seed,
        )
    )
    bundle = {
        "schema_version": BUNDLE_SCHEMA_VERSION,
        "config": _jsonify(cfg),
        "seed_offset": seed_offset,
        "data": {
            **prepared.source_info,
            "n_encounters": len(prepared.metas),
            "n_patients": len({m.patient_id for m in prepared.metas}),
            "width": catalog.width,
            "partition": partition.counts(),
        },
        "runs": [r.as_dict() for r in results],
        "training": training_info,
    }
    save_bundle(bundle, out / "bundle.json")
    render_from_bundle(bundle, out)
    return bundle
