"""Scoring and reporting: AUROC, the 12-hour scoring rule, and result files.

AUROC is computed exactly from tied Mann-Whitney ranks: the probability
that a random positive outscores a random negative, with ties counting
one half. Scores come from the last charted row at or before the scoring
horizon (slice models) or from the final output of the sequence truncated
at the horizon (sequence model).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .nn import LSTMModel, Model, clamp_probs
from .pivot import MatrixState, PatientMatrix
from .train import pad_sequences

DEFAULT_HORIZON_HOURS = 12.0

REPORT_HEADER = "row_label,model,test_set,auroc_mean,auroc_std,n_seeds"
PLOT_HEADER = "x,auroc_mean,auroc_std"

MODEL_ORDER = ("lr", "mlp", "rnn")
TEST_SET_ORDER = ("picu", "cticu")

BUNDLE_SCHEMA_VERSION = 1


def tied_average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks; equal scores share the average of their rank block."""
    scores = np.asarray(scores, dtype=float)
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    averages = ends - (counts - 1) / 2.0
    return averages[inverse]


def auroc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Exact area under the ROC curve for binary labels.

    Equals (wins + ties/2) / (positives * negatives) over all
    positive-negative pairs, computed in O(n log n) via average ranks.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape:
        raise ValueError(
            f"shape mismatch: labels {labels.shape} vs scores {scores.shape}"
        )
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    pos = labels > 0.5
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0:
        raise ValueError("AUROC undefined: no positive labels")
    if n_neg == 0:
        raise ValueError("AUROC undefined: no negative labels")
    ranks = tied_average_ranks(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def aggregate(values: Sequence[float]) -> tuple[float, float | None]:
    """Mean and population standard deviation; std is None below 2 values."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("nothing to aggregate")
    mean = float(arr.mean())
    std = float(arr.std()) if arr.size >= 2 else None
    return mean, std


@dataclass(frozen=True)
class EncounterScore:
    encounter_id: str
    label: int
    prob: float
    post_horizon: bool  # no charted row at or before the horizon


def _horizon_cut(matrix: PatientMatrix, horizon: float) -> tuple[int, bool]:
    """Number of rows to keep; falls back to the first row when none fit."""
    if matrix.state is not MatrixState.IMPUTED:
        raise ValueError(f"{matrix.encounter_id}: expected an imputed matrix")
    keep = int(np.searchsorted(matrix.times, horizon, side="right"))
    if keep == 0:
        return 1, True
    return keep, False


def predict_at_horizon(
    model: Model, matrix: PatientMatrix, horizon: float = DEFAULT_HORIZON_HOURS
) -> tuple[float, bool]:
    """Mortality probability for one encounter under the horizon rule."""
    keep, fallback = _horizon_cut(matrix, horizon)
    if isinstance(model, LSTMModel):
        probs = model.predict_sequence(matrix.values[:keep])
        return float(probs[-1]), fallback
    prob = model.predict_proba(matrix.values[keep - 1 : keep])
    return float(prob[0]), fallback


def score_encounters(
    model: Model,
    matrices: Sequence[PatientMatrix],
    labels: Mapping[str, int],
    horizon: float = DEFAULT_HORIZON_HOURS,
    batch_size: int = 256,
) -> list[EncounterScore]:
    """Horizon-rule probabilities for a set of encounters.

    Sequence scoring is batched with padding; the score is read at each
    sequence's own final timestep, so padding never affects it.
    """
    cuts = [_horizon_cut(m, horizon) for m in matrices]
    scores: list[EncounterScore] = []
    if isinstance(model, LSTMModel):
        for start in range(0, len(matrices), batch_size):
            chunk = matrices[start : start + batch_size]
            chunk_cuts = cuts[start : start + batch_size]
            seqs = [m.values[:keep] for m, (keep, _) in zip(chunk, chunk_cuts)]
            X, _ = pad_sequences(seqs)
            probs = clamp_probs(model.forward(X))
            for i, (m, (keep, fallback)) in enumerate(zip(chunk, chunk_cuts)):
                scores.append(
                    EncounterScore(
                        encounter_id=m.encounter_id,
                        label=int(labels[m.encounter_id]),
                        prob=float(probs[i, keep - 1]),
                        post_horizon=fallback,
                    )
                )
    else:
        rows = np.vstack(
            [m.values[keep - 1] for m, (keep, _) in zip(matrices, cuts)]
        )
        probs = model.predict_proba(rows)
        for i, (m, (_, fallback)) in enumerate(zip(matrices, cuts)):
            scores.append(
                EncounterScore(
                    encounter_id=m.encounter_id,
                    label=int(labels[m.encounter_id]),
                    prob=float(probs[i]),
                    post_horizon=fallback,
                )
            )
    return scores


def auroc_of_scores(scores: Sequence[EncounterScore]) -> float:
    labels = np.array([s.label for s in scores])
    probs = np.array([s.prob for s in scores])
    return auroc(labels, probs)


@dataclass(frozen=True)
class RunResult:
    """One (study row, model, test set, seed) cell of the benchmark."""

    study: str
    row_label: str
    row_index: int
    model: str
    test_set: str
    seed: int
    auroc: float
    n_encounters: int
    n_post_horizon: int

    def as_dict(self) -> dict:
        return {
            "study": self.study,
            "row_label": self.row_label,
            "row_index": self.row_index,
            "model": self.model,
            "test_set": self.test_set,
            "seed": self.seed,
            "auroc": self.auroc,
            "n_encounters": self.n_encounters,
            "n_post_horizon": self.n_post_horizon,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunResult":
        return cls(
            study=d["study"],
            row_label=d["row_label"],
            row_index=int(d["row_index"]),
            model=d["model"],
            test_set=d["test_set"],
            seed=int(d["seed"]),
            auroc=float(d["auroc"]),
            n_encounters=int(d["n_encounters"]),
            n_post_horizon=int(d["n_post_horizon"]),
        )


@dataclass(frozen=True)
class ReportRow:
    row_label: str
    model: str
    test_set: str
    auroc_mean: float
    auroc_std: float | None
    n_seeds: int


def _run_sort_key(run: RunResult) -> tuple:
    return (
        run.row_index,
        MODEL_ORDER.index(run.model),
        TEST_SET_ORDER.index(run.test_set),
        run.seed,
    )


def summarize_study(runs: Sequence[RunResult]) -> list[ReportRow]:
    """Collapse seeds into mean/std rows, in row/model/test-set order."""
    groups: dict[tuple, list[RunResult]] = {}
    for run in runs:
        groups.setdefault(
            (run.row_index, run.row_label, run.model, run.test_set), []
        ).append(run)
    rows = []
    for key in sorted(
        groups,
        key=lambda k: (k[0], MODEL_ORDER.index(k[2]), TEST_SET_ORDER.index(k[3])),
    ):
        _, row_label, model, test_set = key
        aurocs = [r.auroc for r in sorted(groups[key], key=lambda r: r.seed)]
        mean, std = aggregate(aurocs)
        rows.append(
            ReportRow(
                row_label=row_label,
                model=model,
                test_set=test_set,
                auroc_mean=mean,
                auroc_std=std,
                n_seeds=len(aurocs),
            )
        )
    return rows


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_report_csv(rows: Iterable[ReportRow], path: str | Path) -> None:
    lines = [REPORT_HEADER]
    for r in rows:
        lines.append(
            f"{r.row_label},{r.model},{r.test_set},"
            f"{_fmt(r.auroc_mean)},{_fmt(r.auroc_std)},{r.n_seeds}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_plot_csv(rows: Iterable[ReportRow], path: str | Path) -> None:
    """One curve: x is the study row label, y the seed-mean AUROC."""
    lines = [PLOT_HEADER]
    for r in rows:
        lines.append(f"{r.row_label},{_fmt(r.auroc_mean)},{_fmt(r.auroc_std)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_bundle(bundle: dict, path: str | Path) -> None:
    """Canonical JSON: sorted keys, fixed separators, trailing newline.

    Identical results serialize to identical bytes; nothing time- or
    machine-dependent may be placed in the bundle.
    """
    text = json.dumps(bundle, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_bundle(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def render_from_bundle(bundle: Mapping, out_dir: str | Path) -> list[Path]:
    """Regenerate every report and plot CSV from a result bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(exist_ok=True)
    runs = [RunResult.from_dict(d) for d in bundle["runs"]]
    studies: dict[str, list[RunResult]] = {}
    for run in runs:
        studies.setdefault(run.study, []).append(run)
    written = []
    for study in sorted(studies):
        rows = summarize_study(sorted(studies[study], key=_run_sort_key))
        report_path = out / f"report_{study}.csv"
        write_report_csv(rows, report_path)
        written.append(report_path)
        for model in MODEL_ORDER:
            for test_set in TEST_SET_ORDER:
                subset = [
                    r for r in rows if r.model == model and r.test_set == test_set
                ]
                if not subset:
                    continue
                plot_path = out / "plots" / f"{study}_{model}_{test_set}.csv"
                write_plot_csv(subset, plot_path)
                written.append(plot_path)
    return written
