"""Patient-level partitioning and the three data-permutation generators.

Permutations degrade the processed cohort along three axes: training-set
fraction (size), input types (internals vs externals), and drug-data
fidelity (real-valued dose, binary indicator, or MeSH-heading rollup).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import VariableCatalog, VariableKind
from .ingest import EncounterMeta, Unit
from .pivot import MatrixState, PatientMatrix


class Split(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST_PICU = "test_picu"
    TEST_CTICU = "test_cticu"


class InputType(Enum):
    COMBINED = "combined"
    INTERNALS = "internals"
    EXTERNALS = "externals"


class DrugEncoding(Enum):
    NONE = "none"
    BINARY = "binary"
    MESH = "mesh"


@dataclass(frozen=True)
class PermutationSpec:
    """One row of a permutation study; the default is the baseline."""

    training_fraction: float = 1.0
    input_type: InputType = InputType.COMBINED
    drug_encoding: DrugEncoding = DrugEncoding.NONE

    def __post_init__(self) -> None:
        if not 0 < self.training_fraction <= 1:
            raise ValueError(
                f"training_fraction must be in (0, 1], got {self.training_fraction}"
            )

    @property
    def is_baseline(self) -> bool:
        return (
            self.training_fraction == 1.0
            and self.input_type is InputType.COMBINED
            and self.drug_encoding is DrugEncoding.NONE
        )


BASELINE = PermutationSpec()

# Default training-set fractions, largest to smallest.
DEFAULT_FRACTIONS = (1.0, 0.75, 0.50, 0.25, 0.10)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class Partition:
    """encounter_id -> split assignment, plus the seed that produced it."""

    assignments: dict[str, Split]
    seed: int

    def encounters(self, split: Split) -> list[str]:
        return sorted(e for e, s in self.assignments.items() if s is split)

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in Split}
        for split in self.assignments.values():
            out[split.value] += 1
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["encounter_id", "split"])
            for encounter_id in sorted(self.assignments):
                writer.writerow([encounter_id, self.assignments[encounter_id].value])


def make_partition(metas: Sequence[EncounterMeta], seed: int) -> Partition:
    """Patient-level split: PICU patients 50/25/25, all CTICU held out.

    Patient ids are sorted, shuffled by a generator seeded with ``seed``,
    and cut at round-half-up boundaries, so the assignment depends only on
    (metas, seed). Every encounter inherits its patient's split.
    """
    if not metas:
        raise ValueError("cannot partition an empty cohort")
    picu_patients: set[str] = set()
    cticu_patients: set[str] = set()
    for meta in metas:
        if meta.unit is Unit.PICU:
            picu_patients.add(meta.patient_id)
        else:
            cticu_patients.add(meta.patient_id)
    spanning = picu_patients & cticu_patients
    if spanning:
        raise ValueError(
            "patients with encounters in both units make a patient-level "
            f"split ambiguous: {sorted(spanning)[:5]}"
        )

    ordered = sorted(picu_patients)
    rng = np.random.default_rng(seed)
    ordered = [ordered[i] for i in rng.permutation(len(ordered))]
    n = len(ordered)
    n_train = round_half_up(0.50 * n)
    n_val = round_half_up(0.25 * n)
    split_of_patient: dict[str, Split] = {}
    for i, patient in enumerate(ordered):
        if i < n_train:
            split_of_patient[patient] = Split.TRAIN
        elif i < n_train + n_val:
            split_of_patient[patient] = Split.VALIDATION
        else:
            split_of_patient[patient] = Split.TEST_PICU

    assignments: dict[str, Split] = {}
    for meta in metas:
        if meta.unit is Unit.CTICU:
            assignments[meta.encounter_id] = Split.TEST_CTICU
        else:
            assignments[meta.encounter_id] = split_of_patient[meta.patient_id]
    return Partition(assignments=assignments, seed=seed)


def subsample_training(partition: Partition, fraction: float, seed: int) -> set[str]:
    """Seeded uniform subset of train encounters, nested across fractions.

    For a fixed seed the subsets are prefixes of one permutation, so
    subsample(f1) is contained in subsample(f2) whenever f1 <= f2. The
    subset size is round-half-up(fraction * |train|).
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    train_ids = partition.encounters(Split.TRAIN)
    if fraction == 1.0:
        return set(train_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train_ids))
    k = round_half_up(fraction * len(train_ids))
    return {train_ids[i] for i in order[:k]}


def input_type_columns(catalog: VariableCatalog, input_type: InputType) -> np.ndarray:
    """Column indices (catalog order) selected by an input type."""
    if input_type is InputType.COMBINED:
        return np.arange(catalog.width)
    mask = (
        catalog.internal_mask
        if input_type is InputType.INTERNALS
        else catalog.external_mask
    )
    return np.flatnonzero(mask)


def select_inputs(
    matrix: PatientMatrix, catalog: VariableCatalog, input_type: InputType
) -> PatientMatrix:
    """Restrict an imputed matrix to the selected variable kinds."""
    if matrix.state is not MatrixState.IMPUTED:
        raise ValueError(
            f"{matrix.encounter_id}: input selection expects an imputed matrix"
        )
    if input_type is InputType.COMBINED:
        return matrix
    cols = input_type_columns(catalog, input_type)
    if cols.size == 0:
        raise ValueError(f"no {input_type.value} columns in catalog")
    return matrix.copy_with(
        values=matrix.values[:, cols].copy(), state=MatrixState.IMPUTED
    )


def mesh_column_layout(
    catalog: VariableCatalog,
) -> tuple[list[int], list[int], list[tuple[str, list[int]]]]:
    """Column plan for MeSH encoding.

    Returns (non-drug column indices, unmapped drug column indices, and
    (heading, member column indices) pairs sorted by heading).
    """
    drug = catalog.drug_mask
    non_drug = [i for i in range(catalog.width) if not drug[i]]
    groups = catalog.mesh_groups()
    mapped = {i for members in groups.values() for i in members}
    unmapped = [i for i in range(catalog.width) if drug[i] and i not in mapped]
    headings = sorted(groups.items())
    return non_drug, unmapped, headings


def encoded_column_names(
    catalog: VariableCatalog, scheme: DrugEncoding
) -> list[str]:
    """Output column names after drug encoding; mirrors encode_drugs order."""
    if scheme in (DrugEncoding.NONE, DrugEncoding.BINARY):
        return list(catalog.names)
    non_drug, unmapped, headings = mesh_column_layout(catalog)
    names = [catalog.names[i] for i in non_drug]
    names.extend(catalog.names[i] for i in unmapped)
    names.extend(heading for heading, _ in headings)
    return names


def encode_drugs(
    matrix: PatientMatrix, catalog: VariableCatalog, scheme: DrugEncoding
) -> PatientMatrix:
    """Re-encode drug columns of an imputed matrix.

    Binary replaces each drug cell with a 0/1 presence indicator. MeSH
    collapses mapped drugs into one column per heading (cell = max over
    member drugs); unmapped drugs keep their own columns, placed between
    the untouched non-drug columns and the heading columns.
    """
    if matrix.state is not MatrixState.IMPUTED:
        raise ValueError(
            f"{matrix.encounter_id}: drug encoding expects an imputed matrix"
        )
    if matrix.width != catalog.width:
        raise ValueError(
            f"{matrix.encounter_id}: width {matrix.width} does not match "
            f"catalog {catalog.width}"
        )
    if scheme is DrugEncoding.NONE:
        return matrix
    if scheme is DrugEncoding.BINARY:
        out = matrix.values.copy()
        drug = catalog.drug_mask
        out[:, drug] = (out[:, drug] > 0).astype(float)
        return matrix.copy_with(values=out, state=MatrixState.IMPUTED)

    non_drug, unmapped, headings = mesh_column_layout(catalog)
    if not headings:
        raise ValueError("MeSH encoding requested but no drug has a mesh_heading")
    parts = [matrix.values[:, non_drug]]
    if unmapped:
        parts.append(matrix.values[:, unmapped])
    for _, members in headings:
        parts.append(matrix.values[:, members].max(axis=1, keepdims=True))
    out = np.hstack(parts) if parts else matrix.values[:, :0]
    return matrix.copy_with(values=out, state=MatrixState.IMPUTED)
