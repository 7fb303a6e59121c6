"""Config parsing, study grid assembly, end-to-end runs, and the CLI."""

import shutil
from pathlib import Path

import numpy as np
import pytest

from emrbench import experiment
from emrbench.cli import main
from emrbench.cohort import DrugEncoding, InputType, PermutationSpec
from emrbench.evaluate import load_bundle
from emrbench.experiment import (
    ALL_STUDIES,
    BUNDLE_SCHEMA_VERSION,
    ConfigError,
    ExperimentConfig,
    MODEL_KINDS,
    apply_spec,
    load_experiment_config,
    prepare_data,
    run_experiment,
    spec_slug,
    study_rows,
)
from emrbench.ingest import EVENT_HEADER, META_HEADER, LongRecord
from emrbench.nn import load_model
from emrbench.synth import SynthConfig
from emrbench.train import HISTORY_HEADER, TrainConfig
from emrbench.transform import fit_standardizer, impute, standardize

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[data]
catalog = "cat.csv"

[synth]
seed = 1
"""


def write_config(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_minimal_synth_config_defaults(self, tmp_path):
        cfg = load_experiment_config(write_config(tmp_path, MINIMAL))
        assert cfg.synth == SynthConfig(seed=1)
        assert cfg.events is None and cfg.meta is None
        assert cfg.catalog == (tmp_path / "cat.csv").resolve()
        assert cfg.seed == 0
        assert cfg.model_seeds == (0, 1, 2, 3, 4)
        assert cfg.models == MODEL_KINDS
        assert cfg.studies == ALL_STUDIES
        assert cfg.fractions == (1.0, 0.75, 0.50, 0.25, 0.10)
        assert cfg.mlp_hidden == (256, 256)
        assert cfg.rnn_hidden is None
        assert cfg.train == TrainConfig()
        assert cfg.horizon_hours == 12.0

    def test_accepts_str_path(self, tmp_path):
        path = write_config(tmp_path, MINIMAL)
        assert load_experiment_config(str(path)).synth is not None

    def test_paths_resolve_against_config_dir(self, tmp_path):
        nested = tmp_path / "a" / "b"
        nested.mkdir(parents=True)
        text = """
[data]
catalog = "../cat.csv"
events = "data/events.csv"
meta = "data/meta.csv"
"""
        cfg = load_experiment_config(write_config(nested, text))
        assert cfg.catalog == (tmp_path / "a" / "cat.csv").resolve()
        assert cfg.events == (nested / "data" / "events.csv").resolve()
        assert cfg.meta == (nested / "data" / "meta.csv").resolve()
        assert cfg.synth is None

    def test_requires_some_data_source(self, tmp_path):
        with pytest.raises(ConfigError, match="exactly one data source"):
            load_experiment_config(
                write_config(tmp_path, '[data]\ncatalog = "c.csv"\n')
            )

    def test_rejects_both_data_sources(self, tmp_path):
        text = """
[data]
catalog = "c.csv"
events = "e.csv"
meta = "m.csv"

[synth]
seed = 0
"""
        with pytest.raises(ConfigError, match="exactly one data source"):
            load_experiment_config(write_config(tmp_path, text))

    def test_events_without_meta(self, tmp_path):
        text = '[data]\ncatalog = "c.csv"\nevents = "e.csv"\n'
        with pytest.raises(ConfigError, match="given together"):
            load_experiment_config(write_config(tmp_path, text))

    def test_catalog_required(self, tmp_path):
        with pytest.raises(ConfigError, match="catalog"):
            load_experiment_config(write_config(tmp_path, "[synth]\nseed = 1\n"))

    def test_bad_toml_syntax(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(write_config(tmp_path, "[data\ncatalog ="))

    @pytest.mark.parametrize(
        "text, section",
        [
            (MINIMAL + "\n[extra]\nx = 1\n", "root"),
            ('[data]\ncatalog = "c.csv"\nbogus = 1\n\n[synth]\nseed = 0\n', "data"),
            (MINIMAL + "\n[run]\nbogus = 1\n", "run"),
            (MINIMAL + "\n[model]\nbogus = 1\n", "model"),
            (MINIMAL + "\n[train]\nbogus = 1\n", "train"),
            ('[data]\ncatalog = "c.csv"\n\n[synth]\nbogus = 1\n', "synth"),
        ],
    )
    def test_unknown_keys_rejected(self, tmp_path, text, section):
        with pytest.raises(ConfigError, match=rf"unknown keys in \[{section}\]"):
            load_experiment_config(write_config(tmp_path, text))

    def test_run_and_model_tables_flow_through(self, tmp_path):
        text = """
[data]
catalog = "c.csv"

[synth]
seed = 4
n_picu_patients = 50
treatment_signal = 0.7

[run]
seed = 9
model_seeds = [3, 4]
models = ["lr", "rnn"]
studies = ["input_type"]
fractions = [1.0, 0.25]
input_types = ["combined", "externals"]
drug_encodings = ["none", "mesh"]
horizon_hours = 6.0

[model]
mlp_hidden = [8, 8]
rnn_hidden = [5]

[train]
batch_size = 16
patience = 3
learning_rate = 0.01
"""
        cfg = load_experiment_config(write_config(tmp_path, text))
        assert cfg.synth.n_picu_patients == 50
        assert cfg.synth.treatment_signal == 0.7
        assert cfg.seed == 9
        assert cfg.model_seeds == (3, 4)
        assert cfg.models == ("lr", "rnn")
        assert cfg.studies == ("input_type",)
        assert cfg.fractions == (1.0, 0.25)
        assert cfg.input_types == (InputType.COMBINED, InputType.EXTERNALS)
        assert cfg.drug_encodings == (DrugEncoding.NONE, DrugEncoding.MESH)
        assert cfg.horizon_hours == 6.0
        assert cfg.mlp_hidden == (8, 8)
        assert cfg.rnn_hidden == (5,)
        assert cfg.train.batch_size == 16
        assert cfg.train.patience == 3
        assert cfg.train.learning_rate == 0.01
        # unset train keys keep their defaults
        assert cfg.train.max_reductions == 2

    def test_empty_rnn_hidden_means_default(self, tmp_path):
        text = MINIMAL + "\n[model]\nrnn_hidden = []\n"
        assert load_experiment_config(write_config(tmp_path, text)).rnn_hidden is None

    def test_reuse_full_standardizer_flag(self, tmp_path):
        default = load_experiment_config(write_config(tmp_path, MINIMAL))
        assert not default.reuse_full_standardizer
        text = MINIMAL + "\n[run]\nreuse_full_standardizer = true\n"
        cfg = load_experiment_config(write_config(tmp_path, text))
        assert cfg.reuse_full_standardizer

    @pytest.mark.parametrize(
        "text, match",
        [
            (MINIMAL + "\n[train]\npatience = 0\n", r"bad \[train\]"),
            (
                '[data]\ncatalog = "c.csv"\n\n[synth]\nmortality_picu = 1.5\n',
                r"bad \[synth\]",
            ),
            (MINIMAL + '\n[run]\nmodels = ["svm"]\n', "unknown model"),
            (MINIMAL + '\n[run]\nstudies = ["dosage"]\n', "unknown study"),
            (MINIMAL + "\n[run]\nmodel_seeds = [1, 1]\n", "distinct"),
            (MINIMAL + "\n[run]\nmodel_seeds = []\n", "not be empty"),
            (MINIMAL + "\n[run]\nfractions = [0.5, 0.5]\n", "distinct"),
            (MINIMAL + "\n[run]\nfractions = [0.0]\n", r"in \(0, 1\]"),
            (MINIMAL + "\n[run]\nfractions = [1.5]\n", r"in \(0, 1\]"),
            (MINIMAL + "\n[run]\nhorizon_hours = 0\n", "horizon_hours"),
            (MINIMAL + '\n[run]\ninput_types = ["both"]\n', "not a valid"),
            (MINIMAL + '\n[run]\ndrug_encodings = ["raw"]\n', "not a valid"),
        ],
    )
    def test_invalid_values_become_config_errors(self, tmp_path, text, match):
        with pytest.raises(ConfigError, match=match):
            load_experiment_config(write_config(tmp_path, text))


class TestStudyGrid:
    def _cfg(self, **kwargs):
        kwargs.setdefault("catalog", Path("c.csv"))
        kwargs.setdefault("synth", SynthConfig())
        return ExperimentConfig(**kwargs)

    def test_baseline_row_shared_across_studies(self):
        cfg = self._cfg(fractions=(1.0, 0.5))
        rows = study_rows(cfg)
        # 2 fractions + 3 input types + 3 drug encodings = 8 slots, but the
        # baseline (full set, combined, charted doses) fills one slot in each
        # study, so only 6 distinct rows are trained.
        assert sum(len(v) for v in rows.values()) == 8
        assert len(rows) == 6
        assert rows[PermutationSpec()] == [
            ("training_fraction", "1.0", 0),
            ("input_type", "combined", 0),
            ("drug_fidelity", "none", 0),
        ]

    def test_non_baseline_rows_have_one_slot(self):
        cfg = self._cfg(fractions=(1.0, 0.5))
        rows = study_rows(cfg)
        spec = PermutationSpec(training_fraction=0.5)
        assert rows[spec] == [("training_fraction", "0.5", 1)]
        spec = PermutationSpec(input_type=InputType.EXTERNALS)
        assert rows[spec] == [("input_type", "externals", 2)]
        spec = PermutationSpec(drug_encoding=DrugEncoding.MESH)
        assert rows[spec] == [("drug_fidelity", "mesh", 2)]

    def test_single_study_grid(self):
        cfg = self._cfg(studies=("training_fraction",), fractions=(1.0, 0.75, 0.5))
        rows = study_rows(cfg)
        assert len(rows) == 3
        labels = [slots[0][1] for slots in rows.values()]
        assert labels == ["1.0", "0.75", "0.5"]

    @pytest.mark.parametrize(
        "spec, slug",
        [
            (PermutationSpec(), "f1_combined_none"),
            (PermutationSpec(training_fraction=0.25), "f0.25_combined_none"),
            (PermutationSpec(training_fraction=0.1), "f0.1_combined_none"),
            (PermutationSpec(input_type=InputType.INTERNALS), "f1_internals_none"),
            (PermutationSpec(drug_encoding=DrugEncoding.MESH), "f1_combined_mesh"),
        ],
    )
    def test_spec_slug(self, spec, slug):
        assert spec_slug(spec) == slug


class TestApplySpec:
    @pytest.fixture
    def imputed(self, demo_catalog):
        rng = np.random.default_rng(3)
        records = []
        for t in (0.0, 4.0, 8.0):
            for col in range(demo_catalog.width):
                if rng.random() < 0.7:
                    records.append(
                        LongRecord("p1", "e1", t, col, float(rng.uniform(0.5, 5.0)))
                    )
        from emrbench.pivot import pivot_encounter

        raw, _ = pivot_encounter(records, demo_catalog.width)
        params = fit_standardizer([raw], demo_catalog)
        return {"e1": impute(standardize(raw, params, demo_catalog), demo_catalog)}

    def test_varying_both_axes_rejected(self, imputed, demo_catalog):
        spec = PermutationSpec(
            input_type=InputType.INTERNALS, drug_encoding=DrugEncoding.BINARY
        )
        with pytest.raises(ConfigError, match="not both"):
            apply_spec(imputed, spec, demo_catalog)

    def test_baseline_keeps_width(self, imputed, demo_catalog):
        out = apply_spec(imputed, PermutationSpec(), demo_catalog)
        assert out["e1"].width == demo_catalog.width

    def test_input_selection_narrows_width(self, imputed, demo_catalog):
        internals = apply_spec(
            imputed, PermutationSpec(input_type=InputType.INTERNALS), demo_catalog
        )
        externals = apply_spec(
            imputed, PermutationSpec(input_type=InputType.EXTERNALS), demo_catalog
        )
        assert internals["e1"].width == 14  # 8 vitals + 6 labs
        assert externals["e1"].width == 6  # 4 drugs + 2 interventions

    def test_binary_encoding_keeps_width(self, imputed, demo_catalog):
        out = apply_spec(
            imputed, PermutationSpec(drug_encoding=DrugEncoding.BINARY), demo_catalog
        )
        assert out["e1"].width == demo_catalog.width
        drug_cols = [
            i for i, v in enumerate(demo_catalog.specs) if v.kind.value == "drug"
        ]
        assert set(np.unique(out["e1"].values[:, drug_cols])) <= {0.0, 1.0}


class TestPrepareData:
    def test_synthetic_source(self, tmp_path):
        cfg = ExperimentConfig(
            catalog=CONFIGS / "demo_catalog.csv",
            synth=SynthConfig(seed=2, n_picu_patients=30, n_cticu_patients=8),
        )
        prepared = prepare_data(cfg)
        assert prepared.source_info["source"] == "synthetic"
        ids = {m.encounter_id for m in prepared.metas}
        assert set(prepared.raw) == ids
        assert set(prepared.labels) == ids
        counts = prepared.partition.counts()
        assert set(counts) == {"train", "validation", "test_picu", "test_cticu"}
        assert sum(counts.values()) == len(prepared.metas)

    def test_empty_event_file_rejected(self, tmp_path):
        events = tmp_path / "events.csv"
        events.write_text(",".join(EVENT_HEADER) + "\n")
        meta = tmp_path / "meta.csv"
        meta.write_text(
            ",".join(META_HEADER)
            + "\np1,e1,PICU,survived,24.0\np2,e2,PICU,died,48.0\n"
        )
        cfg = ExperimentConfig(
            catalog=CONFIGS / "demo_catalog.csv", events=events, meta=meta
        )
        with pytest.raises(ConfigError, match="no encounter has any events"):
            prepare_data(cfg)


TINY_RUN = """
[data]
catalog = "demo_catalog.csv"

[synth]
seed = 11
n_picu_patients = 40
n_cticu_patients = 12
mortality_picu = 0.35
mortality_cticu = 0.35
los_median_hours = 18.0
los_min_hours = 6.0
los_max_hours = 30.0
round_interval_hours = 6.0

[run]
seed = 1
model_seeds = [0]
models = ["lr"]
studies = ["training_fraction", "input_type"]
fractions = [1.0, 0.5]

[train]
batch_size = 32
patience = 2
max_reductions = 0
max_epochs = 3
"""

TINY_SLUGS = (
    "f1_combined_none",
    "f0.5_combined_none",
    "f1_internals_none",
    "f1_externals_none",
)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    shutil.copy(CONFIGS / "demo_catalog.csv", root / "demo_catalog.csv")
    cfg_path = write_config(root, TINY_RUN)
    out = root / "results"
    bundle = run_experiment(load_experiment_config(cfg_path), out)
    return cfg_path, out, bundle


class TestRunExperiment:
    def test_bundle_file_round_trips(self, tiny_run):
        _, out, bundle = tiny_run
        assert load_bundle(out / "bundle.json") == bundle

    def test_bundle_header(self, tiny_run):
        _, _, bundle = tiny_run
        assert bundle["schema_version"] == BUNDLE_SCHEMA_VERSION
        assert bundle["data"]["source"] == "synthetic"
        assert bundle["data"]["width"] == 20
        counts = bundle["data"]["partition"]
        assert bundle["data"]["n_encounters"] == sum(counts.values())
        assert bundle["config"]["models"] == ["lr"]
        assert bundle["config"]["fractions"] == [1.0, 0.5]

    def test_artifacts_on_disk(self, tiny_run):
        _, out, _ = tiny_run
        for name in (
            "bundle.json",
            "partition.csv",
            "standardization_f1.csv",
            "standardization_f0.5.csv",
            "report_training_fraction.csv",
            "report_input_type.csv",
        ):
            assert (out / name).is_file(), name
        for slug in TINY_SLUGS:
            assert (out / "runs" / f"{slug}_lr_s0_history.csv").is_file()
            assert (out / "runs" / f"{slug}_lr_s0.ckpt").is_file()
        assert list((out / "plots").glob("*.csv"))

    def test_run_rows(self, tiny_run):
        _, _, bundle = tiny_run
        rows = bundle["runs"]
        # 5 study slots x 2 test sets x 1 seed
        assert len(rows) == 10
        assert all(0.0 <= r["auroc"] <= 1.0 for r in rows)
        assert {r["test_set"] for r in rows} == {"picu", "cticu"}
        frac = [r for r in rows if r["study"] == "training_fraction"]
        assert [r["row_label"] for r in frac] == ["1.0"] * 2 + ["0.5"] * 2
        inputs = [r for r in rows if r["study"] == "input_type"]
        assert [r["row_label"] for r in inputs] == [
            "combined",
            "combined",
            "internals",
            "internals",
            "externals",
            "externals",
        ]
        # rows come sorted by (study order, row, model, test set, seed)
        assert rows == frac + inputs

    def test_baseline_trained_once(self, tiny_run):
        _, _, bundle = tiny_run
        assert sorted(bundle["training"]) == sorted(
            f"{slug}/lr/s0" for slug in TINY_SLUGS
        )
        by_key = {
            (r["study"], r["row_label"], r["test_set"]): r["auroc"]
            for r in bundle["runs"]
        }
        assert (
            by_key[("training_fraction", "1.0", "picu")]
            == by_key[("input_type", "combined", "picu")]
        )

    def test_test_set_sizes_match_partition(self, tiny_run):
        _, _, bundle = tiny_run
        counts = bundle["data"]["partition"]
        for row in bundle["runs"]:
            assert row["n_encounters"] == counts[f"test_{row['test_set']}"]

    def test_history_and_checkpoint_artifacts(self, tiny_run):
        _, out, _ = tiny_run
        history = (out / "runs" / "f1_combined_none_lr_s0_history.csv").read_text()
        assert history.splitlines()[0] == HISTORY_HEADER
        model = load_model(out / "runs" / "f1_externals_none_lr_s0.ckpt")
        assert model.arch.kind == "lr"
        assert model.arch.input_width == 6

    def test_training_metadata(self, tiny_run):
        _, _, bundle = tiny_run
        for entry in bundle["training"].values():
            assert entry["stop_reason"] in ("patience", "max_epochs")
            assert 1 <= entry["best_epoch"] <= entry["epochs_run"] <= 3
            assert entry["best_val_loss"] > 0

    def test_reuse_full_standardizer_behavior(self, tiny_run, tmp_path):
        _, out, _ = tiny_run
        text = TINY_RUN.replace(
            "[run]\nseed = 1",
            "[run]\nseed = 1\nreuse_full_standardizer = true",
        )
        assert "reuse_full_standardizer" in text
        shutil.copy(CONFIGS / "demo_catalog.csv", tmp_path / "demo_catalog.csv")
        reuse_cfg = write_config(tmp_path, text, name="reuse.toml")
        bundle_out = tmp_path / "reuse"
        run_experiment(load_experiment_config(reuse_cfg), bundle_out)
        full = (bundle_out / "standardization_f1.csv").read_bytes()
        half = (bundle_out / "standardization_f0.5.csv").read_bytes()
        assert full == half
        # without the flag, the half-fraction fit differs
        assert (out / "standardization_f1.csv").read_bytes() != (
            out / "standardization_f0.5.csv"
        ).read_bytes()

    def test_worker_pool_matches_sequential(self, tiny_run, tmp_path):
        cfg_path, out, _ = tiny_run
        cfg = load_experiment_config(cfg_path)
        pooled = tmp_path / "pooled"
        run_experiment(cfg, pooled, workers=2)
        assert (pooled / "bundle.json").read_bytes() == (
            out / "bundle.json"
        ).read_bytes()

    def test_seed_offset_renames_runs(self, tiny_run, tmp_path):
        cfg_path, _, _ = tiny_run
        cfg = load_experiment_config(cfg_path)
        out = tmp_path / "offset"
        bundle = run_experiment(cfg, out, seed_offset=5)
        assert (out / "runs" / "f1_combined_none_lr_s5.ckpt").is_file()
        assert bundle["seed_offset"] == 5
        # reported rows keep the configured seed label
        assert {r["seed"] for r in bundle["runs"]} == {0}

    def test_failures_carry_run_coordinates(self, tiny_run, tmp_path, monkeypatch):
        cfg_path, _, _ = tiny_run
        cfg = load_experiment_config(cfg_path)

        def explode(payload):
            raise ValueError("boom")

        monkeypatch.setattr(experiment, "_train_eval_cell", explode)
        with pytest.raises(ValueError, match=r"^run f1_combined_none/lr/s0: boom$"):
            run_experiment(cfg, tmp_path / "dead")

    def test_unclonable_failure_falls_back_to_runtime_error(
        self, tiny_run, tmp_path, monkeypatch
    ):
        cfg_path, _, _ = tiny_run
        cfg = load_experiment_config(cfg_path)

        class TwoArg(Exception):
            def __init__(self, a, b):
                super().__init__(a, b)

        def explode(payload):
            raise TwoArg("boom", 7)

        monkeypatch.setattr(experiment, "_train_eval_cell", explode)
        with pytest.raises(RuntimeError, match=r"^run f1_combined_none/lr/s0: "):
            run_experiment(cfg, tmp_path / "dead")


class TestCli:
    def test_run_reproduces_bundle_byte_for_byte(self, tiny_run, tmp_path, capsys):
        cfg_path, out, _ = tiny_run
        out2 = tmp_path / "again"
        assert main(["run", str(cfg_path), "--out", str(out2)]) == 0
        assert "bundle.json" in capsys.readouterr().out
        assert (out2 / "bundle.json").read_bytes() == (out / "bundle.json").read_bytes()

    def test_report_rerenders_identical_csvs(self, tiny_run, capsys):
        _, out, _ = tiny_run
        report = out / "report_input_type.csv"
        before = report.read_bytes()
        report.unlink()
        assert main(["report", str(out / "bundle.json")]) == 0
        assert report.read_bytes() == before
        assert "report_input_type.csv" in capsys.readouterr().out

    def test_report_to_other_directory(self, tiny_run, tmp_path):
        _, out, _ = tiny_run
        dest = tmp_path / "rendered"
        assert main(["report", str(out / "bundle.json"), "--out", str(dest)]) == 0
        assert (dest / "report_training_fraction.csv").read_bytes() == (
            out / "report_training_fraction.csv"
        ).read_bytes()

    def test_synth_writes_cohort(self, tmp_path, capsys):
        shutil.copy(CONFIGS / "demo_catalog.csv", tmp_path / "demo_catalog.csv")
        text = """
[data]
catalog = "demo_catalog.csv"

[synth]
seed = 6
n_picu_patients = 8
n_cticu_patients = 3
"""
        cfg_path = write_config(tmp_path, text)
        out = tmp_path / "cohort"
        assert main(["synth", str(cfg_path), "--out", str(out)]) == 0
        captured = capsys.readouterr().out
        assert "events.csv" in captured and "meta.csv" in captured
        events = (out / "events.csv").read_text().splitlines()
        assert events[0] == ",".join(EVENT_HEADER)
        meta = (out / "meta.csv").read_text().splitlines()
        assert meta[0].startswith(",".join(META_HEADER))
        assert len(meta) >= 12  # one row per encounter

    def test_synth_output_paths_from_config(self, tmp_path):
        shutil.copy(CONFIGS / "demo_catalog.csv", tmp_path / "demo_catalog.csv")
        text = """
[data]
catalog = "demo_catalog.csv"

[synth]
seed = 6
n_picu_patients = 5
events_out = "ev.csv"
meta_out = "me.csv"
"""
        cfg_path = write_config(tmp_path, text)
        assert main(["synth", str(cfg_path), "--out", str(tmp_path / "unused")]) == 0
        assert (tmp_path / "ev.csv").is_file()
        assert (tmp_path / "me.csv").is_file()

    def test_synth_without_table_is_config_error(self, tmp_path, capsys):
        text = '[data]\ncatalog = "c.csv"\nevents = "e.csv"\nmeta = "m.csv"\n'
        cfg_path = write_config(tmp_path, text)
        assert main(["synth", str(cfg_path)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_config_exits_1(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.toml")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_config_exits_1(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, MINIMAL + "\n[run]\nbogus = 1\n")
        assert main(["run", str(cfg_path)]) == 1
        assert "unknown keys" in capsys.readouterr().err

    def test_bad_toml_exits_1(self, tmp_path):
        assert main(["run", str(write_config(tmp_path, "[data\n"))]) == 1

    @pytest.mark.parametrize("argv", [[], ["frobnicate"]])
    def test_usage_errors_exit_2(self, argv, capsys):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
        capsys.readouterr()

    def test_check_command_passes(self, capsys):
        assert main(["check"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 6
        assert all(line.startswith("PASS") for line in lines)

    def test_failed_check_exits_2(self, monkeypatch, capsys):
        from emrbench import cli

        monkeypatch.setattr(cli, "CHECKS", [("doom", lambda: (False, "scripted"))])
        assert main(["check"]) == 2
        assert "FAIL doom" in capsys.readouterr().out

    def test_invariant_violation_exits_2(self, monkeypatch, capsys, tmp_path):
        from emrbench import cli

        def boom(_cfg, **_kw):
            raise RuntimeError("leak detected")

        monkeypatch.setattr(cli, "run_experiment", boom)
        cfg_path = write_config(tmp_path, MINIMAL)
        assert main(["run", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
        assert "invariant violation" in capsys.readouterr().err
