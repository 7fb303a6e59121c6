"""Reshaping one encounter's long records into a time-by-variable matrix.

Rows are the encounter's distinct event times in increasing order, columns
follow the catalog, and unobserved cells are NaN. No resampling: rows stay
at the native charting times.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import VariableCatalog
from .ingest import LongRecord


class MatrixState(Enum):
    RAW = "raw"
    STANDARDIZED = "standardized"
    IMPUTED = "imputed"


@dataclass
class PatientMatrix:
    """Per-encounter time-by-variable grid; NaN marks an empty cell."""

    encounter_id: str
    times: np.ndarray  # (n_rows,) strictly increasing, hours since admission
    values: np.ndarray  # (n_rows, width) float64
    state: MatrixState = MatrixState.RAW

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def filled_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def validate(self) -> None:
        if self.times.shape != (self.values.shape[0],):
            raise ValueError(
                f"{self.encounter_id}: times shape {self.times.shape} does not "
                f"match {self.values.shape[0]} rows"
            )
        if self.n_rows:
            if not np.all(np.diff(self.times) > 0):
                raise ValueError(f"{self.encounter_id}: times not strictly increasing")
            if self.times[0] < 0:
                raise ValueError(f"{self.encounter_id}: negative event time")
        if self.state is MatrixState.IMPUTED and np.isnan(self.values).any():
            raise ValueError(f"{self.encounter_id}: imputed matrix has empty cells")
        finite = np.isfinite(self.values) | np.isnan(self.values)
        if not finite.all():
            raise ValueError(f"{self.encounter_id}: non-finite cell values")

    def copy_with(self, values: np.ndarray, state: MatrixState) -> "PatientMatrix":
        return PatientMatrix(
            encounter_id=self.encounter_id,
            times=self.times,
            values=values,
            state=state,
        )


def pivot_encounter(
    records: Sequence[LongRecord],
    width: int,
    encounter_id: str | None = None,
) -> tuple[PatientMatrix, int]:
    """Pivot one encounter's records into a raw PatientMatrix.

    Returns the matrix and the number of (time, column) collisions; on a
    collision the record latest in input order wins. Records from mixed
    encounters raise ValueError.
    """
    if records:
        ids = {r.encounter_id for r in records}
        if len(ids) > 1:
            raise ValueError(f"records from multiple encounters: {sorted(ids)}")
        found = next(iter(ids))
        if encounter_id is not None and encounter_id != found:
            raise ValueError(
                f"records belong to {found!r}, expected {encounter_id!r}"
            )
        encounter_id = found
    elif encounter_id is None:
        encounter_id = ""

    times = np.array(sorted({r.time for r in records}), dtype=float)
    row_of = {t: i for i, t in enumerate(times)}
    values = np.full((len(times), width), np.nan)
    collisions = 0
    for record in records:
        row = row_of[record.time]
        if not np.isnan(values[row, record.column]):
            collisions += 1
        values[row, record.column] = record.value
    matrix = PatientMatrix(
        encounter_id=encounter_id, times=times, values=values, state=MatrixState.RAW
    )
    matrix.validate()
    return matrix, collisions


def flatten_matrix(matrix: PatientMatrix) -> list[tuple[float, int, float]]:
    """Enumerate filled cells as (time, column, value), row-major order."""
    rows, cols = np.nonzero(matrix.filled_mask)
    return [
        (float(matrix.times[r]), int(c), float(matrix.values[r, c]))
        for r, c in zip(rows, cols)
    ]


def matrix_to_csv(
    matrix: PatientMatrix, catalog: VariableCatalog, path: str | Path
) -> None:
    """Debug dump: times as first column, canonical names as header."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["time_hours", *catalog.names])
        for i in range(matrix.n_rows):
            row = [repr(float(matrix.times[i]))]
            for value in matrix.values[i]:
                row.append("" if np.isnan(value) else repr(float(value)))
            writer.writerow(row)


def group_by_encounter(records: Iterable[LongRecord]) -> dict[str, list[LongRecord]]:
    """Split a record stream by encounter, preserving input order within each."""
    groups: dict[str, list[LongRecord]] = {}
    for record in records:
        groups.setdefault(record.encounter_id, []).append(record)
    return groups


def pivot_all(
    records: Iterable[LongRecord], width: int
) -> tuple[dict[str, PatientMatrix], int]:
    """Pivot every encounter present in the record stream.

    Returns matrices keyed by encounter id plus the total collision count.
    """
    matrices = {}
    collisions = 0
    for encounter_id, group in group_by_encounter(records).items():
        matrix, n = pivot_encounter(group, width, encounter_id)
        matrices[encounter_id] = matrix
        collisions += n
    return matrices, collisions
