"""Parsing and curation of long-format EMR event and metadata files.

Event rows resolve their variable name against the catalog and become
LongRecords; unresolvable or unparseable rows are dropped and counted by
reason. Curation clamps out-of-range values into the catalog limits.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, NamedTuple

from .catalog import VariableCatalog, VariableKind

EVENT_HEADER = ["patient_id", "encounter_id", "time_hours", "variable", "value"]
META_HEADER = ["patient_id", "encounter_id", "unit", "disposition", "length_of_stay_hours"]


class IngestError(ValueError):
    """Structurally malformed event or metadata file."""


class Unit(Enum):
    PICU = "PICU"
    CTICU = "CTICU"


class Disposition(Enum):
    SURVIVED = "survived"
    DIED = "died"

    @property
    def label(self) -> int:
        """Training label: 1 for in-ICU death."""
        return 1 if self is Disposition.DIED else 0


class LongRecord(NamedTuple):
    """One timestamped observation or treatment event for one encounter."""

    patient_id: str
    encounter_id: str
    time: float  # hours since encounter admission
    column: int  # catalog column index
    value: float  # variable-native units


@dataclass(frozen=True)
class EncounterMeta:
    encounter_id: str
    patient_id: str
    unit: Unit
    disposition: Disposition
    length_of_stay: float  # hours
    statics: dict[str, float] = field(default_factory=dict)

    @property
    def label(self) -> int:
        return self.disposition.label


@dataclass
class IngestStats:
    """Per-reason drop and clamp accounting for one ingest pass."""

    rows_total: int = 0
    records_emitted: int = 0
    unresolved: int = 0
    non_numeric: int = 0
    bad_time: int = 0
    post_discharge: int = 0
    unknown_encounter: int = 0
    values_clamped: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def rows_dropped(self) -> int:
        return self.unresolved + self.non_numeric + self.bad_time


def _open_text(stream: str | Path | IO) -> IO[str]:
    if isinstance(stream, (str, Path)):
        return open(stream, "r", encoding="utf-8", newline="")
    if isinstance(stream, io.TextIOBase):
        return stream
    if hasattr(stream, "read"):
        return io.TextIOWrapper(stream, encoding="utf-8", newline="")
    raise TypeError(f"expected path or readable stream, got {type(stream)!r}")


def parse_events(
    stream: str | Path | IO, catalog: VariableCatalog
) -> tuple[list[LongRecord], IngestStats]:
    """Parse the event CSV into LongRecords, preserving input order.

    Rows whose variable name does not resolve, or whose value/time is not
    a finite number (time must also be >= 0), are dropped and counted.
    A structurally broken row (wrong field count) raises IngestError.
    """
    handle = _open_text(stream)
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty event file") from None
    if [h.strip() for h in header] != EVENT_HEADER:
        raise IngestError(
            f"row 1: expected header {','.join(EVENT_HEADER)}, got {','.join(header)}"
        )
    records: list[LongRecord] = []
    stats = IngestStats()
    for row in reader:
        rownum = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(EVENT_HEADER):
            raise IngestError(
                f"row {rownum}: expected {len(EVENT_HEADER)} fields, got {len(row)}"
            )
        stats.rows_total += 1
        patient_id, encounter_id, time_token, name, value_token = row
        column = catalog.resolve(name)
        if column is None:
            stats.unresolved += 1
            continue
        try:
            time = float(time_token)
        except ValueError:
            stats.bad_time += 1
            continue
        if not math.isfinite(time) or time < 0:
            stats.bad_time += 1
            continue
        try:
            value = float(value_token)
        except ValueError:
            stats.non_numeric += 1
            continue
        if not math.isfinite(value):
            stats.non_numeric += 1
            continue
        records.append(
            LongRecord(patient_id.strip(), encounter_id.strip(), time, column, value)
        )
        stats.records_emitted += 1
    return records, stats


def curate(record: LongRecord, catalog: VariableCatalog) -> LongRecord:
    """Clamp one record's value into its catalog limits.

    Internals clamp into [min_value, max_value]; externals clamp into
    [0, treatment_upper_limit]. In-range values pass through unchanged,
    which makes curation idempotent.
    """
    spec = catalog.specs[record.column]
    if spec.kind.is_internal:
        lo, hi = spec.min_value, spec.max_value
    else:
        lo, hi = 0.0, spec.treatment_upper_limit
    value = min(max(record.value, lo), hi)
    if value == record.value:
        return record
    return record._replace(value=value)


def curate_records(
    records: Iterable[LongRecord],
    catalog: VariableCatalog,
    stats: IngestStats | None = None,
) -> list[LongRecord]:
    """Curate a batch of records, counting clamp events."""
    out = []
    clamped = 0
    for record in records:
        curated = curate(record, catalog)
        if curated is not record:
            clamped += 1
        out.append(curated)
    if stats is not None:
        stats.values_clamped += clamped
    return out


def parse_meta(stream: str | Path | IO) -> list[EncounterMeta]:
    """Parse the encounter metadata CSV.

    Fixed columns are followed by optional ``name=value`` static fields.
    Unknown unit/disposition tokens, non-positive lengths of stay, and
    duplicate encounter ids raise IngestError with the row number.
    """
    handle = _open_text(stream)
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty metadata file") from None
    if [h.strip() for h in header[: len(META_HEADER)]] != META_HEADER:
        raise IngestError(
            f"row 1: expected header starting {','.join(META_HEADER)}, "
            f"got {','.join(header)}"
        )
    metas: list[EncounterMeta] = []
    seen: dict[str, int] = {}
    for row in reader:
        rownum = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(META_HEADER):
            raise IngestError(
                f"row {rownum}: expected at least {len(META_HEADER)} fields, "
                f"got {len(row)}"
            )
        patient_id, encounter_id, unit_token, dispo_token, los_token = row[:5]
        encounter_id = encounter_id.strip()
        try:
            unit = Unit(unit_token.strip().upper())
        except ValueError:
            raise IngestError(f"row {rownum}: unknown unit {unit_token!r}") from None
        try:
            disposition = Disposition(dispo_token.strip().lower())
        except ValueError:
            raise IngestError(
                f"row {rownum}: unknown disposition {dispo_token!r}"
            ) from None
        try:
            los = float(los_token)
        except ValueError:
            raise IngestError(
                f"row {rownum}: length_of_stay_hours is not a number: {los_token!r}"
            ) from None
        if not math.isfinite(los) or los <= 0:
            raise IngestError(f"row {rownum}: length_of_stay_hours must be > 0")
        if encounter_id in seen:
            raise IngestError(
                f"row {rownum}: duplicate encounter_id {encounter_id!r} "
                f"(first seen at row {seen[encounter_id]})"
            )
        seen[encounter_id] = rownum
        statics: dict[str, float] = {}
        for extra in row[5:]:
            extra = extra.strip()
            if not extra:
                continue
            name, sep, value_token = extra.partition("=")
            if not sep:
                raise IngestError(
                    f"row {rownum}: static field {extra!r} is not name=value"
                )
            try:
                statics[name.strip()] = float(value_token)
            except ValueError:
                raise IngestError(
                    f"row {rownum}: static {name!r} is not a number: {value_token!r}"
                ) from None
        metas.append(
            EncounterMeta(
                encounter_id=encounter_id,
                patient_id=patient_id.strip(),
                unit=unit,
                disposition=disposition,
                length_of_stay=los,
                statics=statics,
            )
        )
    return metas


def drop_out_of_encounter(
    records: Iterable[LongRecord],
    metas: Iterable[EncounterMeta],
    stats: IngestStats | None = None,
) -> list[LongRecord]:
    """Drop records after discharge or belonging to unknown encounters.

    Events timestamped past the encounter's length of stay cannot belong
    to it; both drops are counted.
    """
    los_by_encounter = {m.encounter_id: m.length_of_stay for m in metas}
    kept = []
    post_discharge = 0
    unknown = 0
    for record in records:
        los = los_by_encounter.get(record.encounter_id)
        if los is None:
            unknown += 1
            continue
        if record.time > los:
            post_discharge += 1
            continue
        kept.append(record)
    if stats is not None:
        stats.post_discharge += post_discharge
        stats.unknown_encounter += unknown
    return kept
