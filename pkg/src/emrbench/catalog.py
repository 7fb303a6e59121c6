"""Variable dictionary: canonical names, kinds, limits, and MeSH headings.

The catalog is loaded once from a CSV file and fixes the column order of
every patient matrix in a run. Vitals and labs ("internals") carry
physiologic clamp limits; drugs and interventions ("externals") carry a
positive upper limit used to scale doses into [0, 1]. Drugs may optionally
map to a MeSH heading; several drugs may share one heading.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

CATALOG_HEADER = [
    "canonical_name",
    "kind",
    "aliases",
    "min_value",
    "max_value",
    "treatment_upper_limit",
    "mesh_heading",
]


class CatalogError(ValueError):
    """Malformed or internally inconsistent catalog file."""


class VariableKind(Enum):
    VITAL = "vital"
    LAB = "lab"
    DRUG = "drug"
    INTERVENTION = "intervention"

    @property
    def is_internal(self) -> bool:
        """Vitals and labs describe patient state."""
        return self in (VariableKind.VITAL, VariableKind.LAB)

    @property
    def is_external(self) -> bool:
        """Drugs and interventions describe treatments applied."""
        return not self.is_internal


def normalize_name(name: str) -> str:
    """Trim and case-fold a variable name for exact-match lookup."""
    return name.strip().casefold()


@dataclass(frozen=True)
class VariableSpec:
    """One catalog entry.

    ``min_value``/``max_value`` are the physiologic clamp limits for
    internals (required, min < max). ``treatment_upper_limit`` is required
    and positive for externals and must be absent for internals. A drug
    with no ``mesh_heading`` is considered explicitly unmapped.
    """

    canonical_name: str
    kind: VariableKind
    aliases: frozenset[str] = frozenset()
    min_value: float | None = None
    max_value: float | None = None
    treatment_upper_limit: float | None = None
    mesh_heading: str | None = None

    def __post_init__(self) -> None:
        name = self.canonical_name.strip()
        if not name:
            raise CatalogError("variable with empty canonical name")
        if self.kind.is_internal:
            if self.min_value is None or self.max_value is None:
                raise CatalogError(f"{name}: internals need min_value and max_value")
            if not self.min_value < self.max_value:
                raise CatalogError(
                    f"{name}: min_value {self.min_value} must be < max_value {self.max_value}"
                )
            if self.treatment_upper_limit is not None:
                raise CatalogError(f"{name}: treatment_upper_limit is external-only")
        else:
            if self.treatment_upper_limit is None:
                raise CatalogError(f"{name}: externals need a treatment_upper_limit")
            if not self.treatment_upper_limit > 0:
                raise CatalogError(
                    f"{name}: treatment_upper_limit must be > 0, "
                    f"got {self.treatment_upper_limit}"
                )
        if self.mesh_heading is not None and self.kind is not VariableKind.DRUG:
            raise CatalogError(f"{name}: mesh_heading is drug-only")


@dataclass(frozen=True)
class VariableCatalog:
    """Ordered, immutable variable dictionary.

    The order of ``specs`` defines the column index of each variable in
    every patient matrix of the run.
    """

    specs: tuple[VariableSpec, ...]
    _lookup: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        lookup: dict[str, int] = {}
        owner: dict[str, str] = {}
        for idx, spec in enumerate(self.specs):
            names = {normalize_name(spec.canonical_name)}
            names.update(normalize_name(a) for a in spec.aliases)
            for name in names:
                if name in lookup:
                    raise CatalogError(
                        f"name {name!r} claimed by both "
                        f"{owner[name]!r} and {spec.canonical_name!r}"
                    )
                lookup[name] = idx
                owner[name] = spec.canonical_name
        object.__setattr__(self, "_lookup", lookup)

    @property
    def width(self) -> int:
        return len(self.specs)

    def __len__(self) -> int:
        return len(self.specs)

    def resolve(self, raw_name: str) -> int | None:
        """Column index for a canonical name or alias; None if unknown."""
        return self._lookup.get(normalize_name(raw_name))

    def index_of(self, canonical_name: str) -> int:
        idx = self.resolve(canonical_name)
        if idx is None or self.specs[idx].canonical_name != canonical_name:
            raise KeyError(canonical_name)
        return idx

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.canonical_name for s in self.specs)

    @property
    def kinds(self) -> tuple[VariableKind, ...]:
        return tuple(s.kind for s in self.specs)

    @property
    def internal_mask(self) -> np.ndarray:
        return np.array([s.kind.is_internal for s in self.specs], dtype=bool)

    @property
    def external_mask(self) -> np.ndarray:
        return ~self.internal_mask

    @property
    def drug_mask(self) -> np.ndarray:
        return np.array([s.kind is VariableKind.DRUG for s in self.specs], dtype=bool)

    @property
    def min_values(self) -> np.ndarray:
        """Lower clamp per column; externals clamp at 0."""
        return np.array(
            [s.min_value if s.kind.is_internal else 0.0 for s in self.specs],
            dtype=float,
        )

    @property
    def max_values(self) -> np.ndarray:
        """Upper clamp per column; externals clamp at their treatment limit."""
        return np.array(
            [
                s.max_value if s.kind.is_internal else s.treatment_upper_limit
                for s in self.specs
            ],
            dtype=float,
        )

    @property
    def treatment_limits(self) -> np.ndarray:
        """Treatment upper limit per column, NaN for internals."""
        return np.array(
            [
                s.treatment_upper_limit if s.kind.is_external else np.nan
                for s in self.specs
            ],
            dtype=float,
        )

    def restrict(self, kinds: Iterable[VariableKind]) -> "VariableCatalog":
        """Sub-catalog with only the given kinds, order preserved."""
        wanted = set(kinds)
        kept = tuple(s for s in self.specs if s.kind in wanted)
        return VariableCatalog(specs=kept)

    def mesh_groups(self) -> dict[str, list[int]]:
        """mesh_heading -> member drug column indices (catalog order)."""
        groups: dict[str, list[int]] = {}
        for idx, spec in enumerate(self.specs):
            if spec.kind is VariableKind.DRUG and spec.mesh_heading is not None:
                groups.setdefault(spec.mesh_heading, []).append(idx)
        return groups


_KIND_TOKENS = {k.value: k for k in VariableKind}


def _parse_optional_float(token: str, line: int, column: str) -> float | None:
    token = token.strip()
    if not token:
        return None
    try:
        return float(token)
    except ValueError:
        raise CatalogError(f"line {line}: {column} is not a number: {token!r}") from None


def load_catalog(path: str | Path | TextIO) -> VariableCatalog:
    """Load a catalog CSV (see CATALOG_HEADER); column order = file order."""
    if hasattr(path, "read"):
        return _read_catalog(path)  # type: ignore[arg-type]
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return _read_catalog(handle)


def _read_catalog(handle: TextIO) -> VariableCatalog:
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise CatalogError("empty catalog file") from None
    if [h.strip() for h in header] != CATALOG_HEADER:
        raise CatalogError(
            f"line 1: expected header {','.join(CATALOG_HEADER)}, "
            f"got {','.join(header)}"
        )
    specs = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(CATALOG_HEADER):
            raise CatalogError(
                f"line {line}: expected {len(CATALOG_HEADER)} fields, got {len(row)}"
            )
        name, kind_token, aliases_token, min_t, max_t, limit_t, mesh_t = row
        kind = _KIND_TOKENS.get(kind_token.strip().lower())
        if kind is None:
            raise CatalogError(f"line {line}: unknown kind {kind_token!r}")
        aliases = frozenset(
            a.strip() for a in aliases_token.split("|") if a.strip()
        )
        try:
            spec = VariableSpec(
                canonical_name=name.strip(),
                kind=kind,
                aliases=aliases,
                min_value=_parse_optional_float(min_t, line, "min_value"),
                max_value=_parse_optional_float(max_t, line, "max_value"),
                treatment_upper_limit=_parse_optional_float(
                    limit_t, line, "treatment_upper_limit"
                ),
                mesh_heading=mesh_t.strip() or None,
            )
        except CatalogError as err:
            raise CatalogError(f"line {line}: {err}") from None
        specs.append(spec)
    return VariableCatalog(specs=tuple(specs))


def save_catalog(catalog: VariableCatalog, path: str | Path) -> None:
    """Write a catalog back out in the documented CSV format."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CATALOG_HEADER)
        for spec in catalog.specs:
            writer.writerow(
                [
                    spec.canonical_name,
                    spec.kind.value,
                    "|".join(sorted(spec.aliases)),
                    "" if spec.min_value is None else repr(spec.min_value),
                    "" if spec.max_value is None else repr(spec.max_value),
                    ""
                    if spec.treatment_upper_limit is None
                    else repr(spec.treatment_upper_limit),
                    spec.mesh_heading or "",
                ]
            )


def catalog_from_rows(rows: Iterable[str]) -> VariableCatalog:
    """Convenience: parse catalog CSV given as an iterable of lines."""
    return _read_catalog(io.StringIO("\n".join([",".join(CATALOG_HEADER), *rows])))
