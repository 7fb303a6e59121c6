"""Standardization and imputation of patient matrices.

Internals become z-scores with mean/std fitted on training-set cells only;
externals are scaled by their treatment upper limit into [0, 1]. Imputation
forward-fills internals from the first measurement onward, zero-fills
internals before it (zero equals the training mean in z-space), and
zero-fills externals (zero means no treatment).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import VariableCatalog
from .pivot import MatrixState, PatientMatrix


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column scaling fitted on the training split.

    ``mean``/``std`` apply to internal columns (population std, divisor N);
    a column with no or constant training data is flagged degenerate and
    carries std 1 so the map stays defined. ``limit`` mirrors the catalog's
    treatment upper limit for external columns and is NaN for internals.
    """

    mean: np.ndarray  # (width,), 0.0 on external columns
    std: np.ndarray  # (width,), 1.0 on external columns
    degenerate: np.ndarray  # (width,) bool, meaningful on internals only
    limit: np.ndarray  # (width,), NaN on internal columns

    @property
    def width(self) -> int:
        return self.mean.shape[0]


def fit_standardizer(
    train_matrices: Sequence[PatientMatrix], catalog: VariableCatalog
) -> StandardizationParams:
    """Pool filled internal cells across training encounters; fit mean/std.

    Two passes keep the population variance exact for constant columns.
    """
    if not train_matrices:
        raise ValueError("cannot fit standardizer on an empty training set")
    width = catalog.width
    for m in train_matrices:
        if m.state is not MatrixState.RAW:
            raise ValueError(f"{m.encounter_id}: expected raw matrix, got {m.state.value}")
        if m.width != width:
            raise ValueError(
                f"{m.encounter_id}: width {m.width} does not match catalog {width}"
            )

    count = np.zeros(width)
    total = np.zeros(width)
    for m in train_matrices:
        filled = m.filled_mask
        count += filled.sum(axis=0)
        total += np.where(filled, m.values, 0.0).sum(axis=0)
    seen = count > 0
    mean = np.where(seen, total / np.maximum(count, 1), 0.0)

    sq_dev = np.zeros(width)
    for m in train_matrices:
        filled = m.filled_mask
        dev = np.where(filled, m.values - mean, 0.0)
        sq_dev += (dev * dev).sum(axis=0)
    variance = sq_dev / np.maximum(count, 1)

    internal = catalog.internal_mask
    degenerate = internal & (~seen | (variance == 0.0))
    std = np.where(internal & ~degenerate, np.sqrt(variance), 1.0)

    mean = np.where(internal, mean, 0.0)
    std = np.where(internal, std, 1.0)
    return StandardizationParams(
        mean=mean,
        std=std,
        degenerate=degenerate & internal,
        limit=catalog.treatment_limits,
    )


def standardize(
    matrix: PatientMatrix,
    params: StandardizationParams,
    catalog: VariableCatalog,
) -> PatientMatrix:
    """Z-score internals, scale externals into [0, 1]; empty cells stay empty."""
    if matrix.state is not MatrixState.RAW:
        raise ValueError(
            f"{matrix.encounter_id}: expected raw matrix, got {matrix.state.value}"
        )
    if matrix.width != params.width:
        raise ValueError(
            f"{matrix.encounter_id}: width {matrix.width} does not match "
            f"params width {params.width}"
        )
    internal = catalog.internal_mask
    out = matrix.values.copy()
    out[:, internal] = (out[:, internal] - params.mean[internal]) / params.std[internal]
    external = ~internal
    if external.any():
        scaled = out[:, external] / params.limit[external]
        out[:, external] = np.clip(scaled, 0.0, 1.0)
    return matrix.copy_with(values=out, state=MatrixState.STANDARDIZED)


def impute(matrix: PatientMatrix, catalog: VariableCatalog) -> PatientMatrix:
    """Fill every empty cell; idempotent and never alters filled cells.

    Internals: forward fill after the first measurement, zero before it and
    for never-measured columns. Externals: zero (absence of treatment).
    """
    if matrix.state is MatrixState.RAW:
        raise ValueError(f"{matrix.encounter_id}: impute expects a standardized matrix")
    values = matrix.values
    n_rows, width = values.shape
    if n_rows == 0:
        return matrix.copy_with(values=values.copy(), state=MatrixState.IMPUTED)

    filled = ~np.isnan(values)
    # Row index of the most recent filled cell at or above each row, -1 if none.
    last = np.where(filled, np.arange(n_rows)[:, None], -1)
    np.maximum.accumulate(last, axis=0, out=last)
    gathered = np.take_along_axis(values, np.clip(last, 0, None), axis=0)
    out = np.where(last >= 0, gathered, 0.0)

    external = catalog.external_mask
    if external.any():
        ext = values[:, external]
        out[:, external] = np.where(np.isnan(ext), 0.0, ext)
    result = matrix.copy_with(values=out, state=MatrixState.IMPUTED)
    result.validate()
    return result


def save_params_csv(
    params: StandardizationParams, catalog: VariableCatalog, path: str | Path
) -> None:
    """Audit artifact: fitted mean/std per internal column."""
    internal = catalog.internal_mask
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["column", "mean", "std", "degenerate"])
        for idx, name in enumerate(catalog.names):
            if not internal[idx]:
                continue
            writer.writerow(
                [
                    name,
                    repr(float(params.mean[idx])),
                    repr(float(params.std[idx])),
                    int(params.degenerate[idx]),
                ]
            )


def pooled_internal_moments(
    matrices: Iterable[PatientMatrix], catalog: VariableCatalog
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean, population std, count) of filled cells per internal column.

    Used to verify that standardizing the fitting set recenters it.
    """
    cols = np.flatnonzero(catalog.internal_mask)
    pools: list[list[float]] = [[] for _ in cols]
    for m in matrices:
        for out_idx, col in enumerate(cols):
            column = m.values[:, col]
            pools[out_idx].extend(column[~np.isnan(column)].tolist())
    mean = np.array([np.mean(p) if p else np.nan for p in pools])
    std = np.array([np.std(p) if p else np.nan for p in pools])
    count = np.array([len(p) for p in pools])
    return mean, std, count
