"""Synthetic ICU cohort generator.

Each patient carries a latent severity drawn from a standard logistic
distribution; encounters inherit it with patient-level noise. Severity
drives where vitals and labs sit relative to their reference ranges and
how densely the chart is sampled. A second, independent per-encounter
axis models the treatment-responsive part of the illness: treatments are
started in response to a blend of overall severity and this axis, and the
axis feeds the mortality latent with its own weight. Internals therefore
see one component of risk and externals see a noisy blend of both, so
combining input types genuinely adds information instead of duplicating
it. Bisection on the outcome-link intercept hits the requested per-unit
mortality rate exactly in expectation, for any slope.

`signal_strength` scales only the latent-to-mortality slope. At zero the
dispositions are independent coin flips, so every feature, including
charting density, is uninformative by construction.

`unit_shift` degrades the CTICU cohort relative to the PICU one: severity
loadings on half the internal variables are scaled down (weakening any
ranking learned from them, which a pure additive shift would not do),
reference centers move, treatment propensities drift toward
severity-independent prescribing, and the outcome link itself flattens,
so even an oracle ranks CTICU encounters worse than PICU ones.

Everything is deterministic given the seed: the cohort uses one seeded
stream and each encounter's event stream uses its own generator keyed by
(seed, unit, patient, encounter), so meta-only generation stays consistent
with full generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import VariableCatalog, VariableKind
from .ingest import Disposition, EncounterMeta, LongRecord, Unit, EVENT_HEADER, META_HEADER


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_picu_patients: int = 400
    n_cticu_patients: int = 0
    mortality_picu: float = 0.0485
    mortality_cticu: float = 0.0332
    signal_strength: float = 1.0
    mortality_slope: float = 1.3
    internal_signal: float = 0.35  # severity loading on internals, in z units
    external_signal: float = 0.7  # treatment-propensity slope on its latent
    treatment_signal: float = 0.5  # mortality weight of the treatment axis
    external_mix: float = 0.25  # severity bleed into treatment decisions
    unit_shift: float = 0.0
    extra_encounter_rate: float = 0.0  # Poisson mean for repeat encounters
    patient_noise: float = 0.5  # encounter-level severity noise scale
    los_median_hours: float = 48.0
    los_sigma: float = 0.6
    los_min_hours: float = 6.0
    los_max_hours: float = 336.0
    round_interval_hours: float = 3.0
    density_gain: float = 1.0  # charting densification with severity
    vital_prob: float = 0.9
    lab_prob: float = 0.35
    treatment_prob: float = 0.5  # per-round charting prob while active
    treatment_base_logit: float = -1.2
    observation_noise: float = 0.8  # per-observation noise, in z units
    baseline_noise: float = 0.4  # per-encounter offset, in z units

    def __post_init__(self) -> None:
        if self.n_picu_patients < 0 or self.n_cticu_patients < 0:
            raise ValueError("patient counts must be >= 0")
        if self.n_picu_patients + self.n_cticu_patients < 1:
            raise ValueError("need at least one patient")
        for name in ("mortality_picu", "mortality_cticu"):
            rate = getattr(self, name)
            if not 0 < rate < 1:
                raise ValueError(f"{name} must be in (0, 1), got {rate}")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")
        if self.treatment_signal < 0:
            raise ValueError("treatment_signal must be >= 0")
        if self.external_mix < 0:
            raise ValueError("external_mix must be >= 0")
        if not 0 <= self.unit_shift <= 1:
            raise ValueError("unit_shift must be in [0, 1]")
        if self.extra_encounter_rate < 0:
            raise ValueError("extra_encounter_rate must be >= 0")
        if not 0 < self.los_min_hours <= self.los_max_hours:
            raise ValueError("need 0 < los_min_hours <= los_max_hours")
        if self.round_interval_hours <= 0:
            raise ValueError("round_interval_hours must be > 0")
        for name in ("vital_prob", "lab_prob", "treatment_prob"):
            p = getattr(self, name)
            if not 0 < p <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {p}")


@dataclass(frozen=True)
class SynthEncounter:
    """Meta plus the latent state needed to synthesize its events."""

    meta: EncounterMeta
    severity: float  # drives internals, charting density, and the outcome
    treatment_axis: float  # second outcome component, seen only by externals
    rng_key: tuple[int, int, int]  # (unit index, patient index, encounter index)

    @property
    def shift_applies(self) -> bool:
        return self.meta.unit is Unit.CTICU


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def calibrate_intercept(
    severities: np.ndarray, slope: float, target_rate: float
) -> float:
    """Intercept a with mean(sigmoid(a + slope*s)) == target_rate.

    The mean is strictly increasing in a, so plain bisection converges;
    run to float64 exhaustion for reproducibility.
    """
    severities = np.asarray(severities, dtype=float)
    lo, hi = -80.0, 80.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(np.mean(_sigmoid(mid + slope * severities))) < target_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_UNIT_TABLE = (
    (Unit.PICU, "p", "n_picu_patients", "mortality_picu"),
    (Unit.CTICU, "c", "n_cticu_patients", "mortality_cticu"),
)


def draw_cohort(cfg: SynthConfig) -> list[SynthEncounter]:
    """Patients, encounters, severities, lengths of stay, and dispositions."""
    rng = np.random.default_rng([cfg.seed, 0])
    out: list[SynthEncounter] = []
    for unit_idx, (unit, prefix, count_attr, rate_attr) in enumerate(_UNIT_TABLE):
        n_patients = getattr(cfg, count_attr)
        if n_patients == 0:
            continue
        patient_sev = rng.logistic(0.0, 1.0, n_patients)
        extras = (
            rng.poisson(cfg.extra_encounter_rate, n_patients)
            if cfg.extra_encounter_rate > 0
            else np.zeros(n_patients, dtype=int)
        )
        n_enc = extras + 1
        total = int(n_enc.sum())
        sev = np.repeat(patient_sev, n_enc) + cfg.patient_noise * rng.logistic(
            0.0, 1.0, total
        )
        axis = rng.logistic(0.0, 1.0, total)
        los = np.clip(
            rng.lognormal(math.log(cfg.los_median_hours), cfg.los_sigma, total),
            cfg.los_min_hours,
            cfg.los_max_hours,
        ).round(4)
        shift = cfg.unit_shift if unit is Unit.CTICU else 0.0
        slope = cfg.signal_strength * cfg.mortality_slope * (1.0 - 0.5 * shift)
        latent = sev + cfg.treatment_signal * axis
        intercept = calibrate_intercept(latent, slope, getattr(cfg, rate_attr))
        died = rng.random(total) < _sigmoid(intercept + slope * latent)

        pad = max(5, len(str(n_patients)))
        k = 0
        for p in range(n_patients):
            pid = f"{prefix}{p:0{pad}d}"
            for j in range(int(n_enc[p])):
                out.append(
                    SynthEncounter(
                        meta=EncounterMeta(
                            encounter_id=f"{pid}e{j + 1}",
                            patient_id=pid,
                            unit=unit,
                            disposition=(
                                Disposition.DIED if died[k] else Disposition.SURVIVED
                            ),
                            length_of_stay=float(los[k]),
                        ),
                        severity=float(sev[k]),
                        treatment_axis=float(axis[k]),
                        rng_key=(unit_idx, p, j),
                    )
                )
                k += 1
    return out


def generate_metas(cfg: SynthConfig) -> list[EncounterMeta]:
    """Cohort metadata only; identical to the metas of a full generation."""
    return [enc.meta for enc in draw_cohort(cfg)]


@dataclass(frozen=True)
class _FeatureModel:
    """Per-catalog constants of the generative model."""

    internal_idx: np.ndarray
    centers: np.ndarray
    sigmas: np.ndarray
    directions: np.ndarray  # alternating +1/-1 severity direction
    coefs: np.ndarray  # per-variable loading multiplier
    chart_prob: np.ndarray  # per-round charting probability
    shift_scale: np.ndarray  # loading multiplier mask under unit shift
    shift_dir: np.ndarray  # center displacement direction under unit shift
    mins: np.ndarray
    maxs: np.ndarray
    external_idx: np.ndarray
    ext_coefs: np.ndarray
    limits: np.ndarray


def _feature_model(cfg: SynthConfig, catalog: VariableCatalog) -> _FeatureModel:
    internal_idx = np.flatnonzero(catalog.internal_mask)
    mins = catalog.min_values[internal_idx]
    maxs = catalog.max_values[internal_idx]
    k = internal_idx.size
    j = np.arange(k)
    directions = np.where(j % 2 == 0, 1.0, -1.0)
    coefs = 0.55 + 0.5 * ((j * 0.37) % 1.0)
    kinds = catalog.kinds
    vital = np.array(
        [kinds[i] is VariableKind.VITAL for i in internal_idx], dtype=bool
    )
    chart_prob = np.where(vital, cfg.vital_prob, cfg.lab_prob)
    shift_scale = np.where(j < (k + 1) // 2, 1.0, 0.0)  # first half loses loading
    shift_dir = np.where(j % 2 == 0, -1.0, 1.0)

    external_idx = np.flatnonzero(catalog.external_mask)
    m = np.arange(external_idx.size)
    ext_coefs = 0.7 + 0.6 * ((m * 0.53) % 1.0)
    limits = catalog.treatment_limits[external_idx]
    return _FeatureModel(
        internal_idx=internal_idx,
        centers=0.5 * (mins + maxs),
        sigmas=(maxs - mins) / 10.0,
        directions=directions,
        coefs=coefs,
        chart_prob=chart_prob,
        shift_scale=shift_scale,
        shift_dir=shift_dir,
        mins=mins,
        maxs=maxs,
        external_idx=external_idx,
        ext_coefs=ext_coefs,
        limits=limits,
    )


_MAX_ROUNDS = 500


def _round_times(
    rng: np.random.Generator, cfg: SynthConfig, severity: float, los: float
) -> np.ndarray:
    """Charting round times: admission at 0, then severity-dense arrivals."""
    density = 1.0 + cfg.density_gain * float(_sigmoid(severity))
    gap_mean = cfg.round_interval_hours / density
    n_draw = min(_MAX_ROUNDS, int(los / gap_mean * 2.0) + 20)
    gaps = rng.exponential(gap_mean, n_draw)
    arrivals = np.cumsum(gaps)
    times = np.concatenate([[0.0], arrivals[arrivals <= los]])[:_MAX_ROUNDS]
    return np.unique(np.round(times, 4))


def _encounter_events(
    enc: SynthEncounter,
    cfg: SynthConfig,
    fm: _FeatureModel,
    width: int,
) -> list[LongRecord]:
    rng = np.random.default_rng([cfg.seed, 1, *enc.rng_key])
    s = enc.severity
    shift = cfg.unit_shift if enc.shift_applies else 0.0
    times = _round_times(rng, cfg, s, enc.meta.length_of_stay)
    n_rounds = times.size

    centers = fm.centers + shift * 0.8 * fm.sigmas * fm.shift_dir
    loadings = cfg.internal_signal * fm.coefs * (1.0 - shift * fm.shift_scale)
    severity_term = fm.directions * loadings * s
    baseline = rng.normal(0.0, cfg.baseline_noise, fm.internal_idx.size)
    charted = rng.random((n_rounds, fm.internal_idx.size)) < fm.chart_prob
    charted[0, :] = True  # admission round charts every internal
    noise = rng.normal(0.0, cfg.observation_noise, charted.shape)
    values = centers + fm.sigmas * (severity_term + baseline + noise)
    values = np.round(np.clip(values, fm.mins, fm.maxs), 6)

    n_ext = fm.external_idx.size
    if n_ext:
        x = cfg.external_mix * s + enc.treatment_axis
        propensity = (cfg.treatment_base_logit + 1.5 * shift) + (
            cfg.external_signal * fm.ext_coefs * (1.0 - 0.5 * shift)
        ) * x
        active = rng.random(n_ext) < _sigmoid(propensity)
        given = (rng.random((n_rounds, n_ext)) < cfg.treatment_prob) & active
        doses = np.round(fm.limits * rng.uniform(0.3, 1.0, (n_rounds, n_ext)), 6)

    cells = np.full((n_rounds, width), np.nan)
    filled = np.zeros((n_rounds, width), dtype=bool)
    cells[:, fm.internal_idx] = values
    filled[:, fm.internal_idx] = charted
    if n_ext:
        cells[:, fm.external_idx] = doses
        filled[:, fm.external_idx] = given

    rows, cols = np.nonzero(filled)
    pid = enc.meta.patient_id
    eid = enc.meta.encounter_id
    return [
        LongRecord(pid, eid, float(times[r]), int(c), float(cells[r, c]))
        for r, c in zip(rows, cols)
    ]


def generate(
    cfg: SynthConfig, catalog: VariableCatalog
) -> tuple[list[LongRecord], list[EncounterMeta]]:
    """Full cohort: curated-range event records plus encounter metadata.

    Records come out encounter by encounter, time-ascending within an
    encounter and catalog-ordered within a charting round. All values are
    inside catalog ranges, so ingest curation passes them through.
    """
    if not catalog.internal_mask.any():
        raise ValueError("catalog has no internal variables to synthesize")
    encounters = draw_cohort(cfg)
    fm = _feature_model(cfg, catalog)
    records: list[LongRecord] = []
    for enc in encounters:
        records.extend(_encounter_events(enc, cfg, fm, catalog.width))
    return records, [enc.meta for enc in encounters]


def write_events_csv(
    records: Sequence[LongRecord], catalog: VariableCatalog, path: str | Path
) -> None:
    names = catalog.names
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(EVENT_HEADER) + "\n")
        for r in records:
            handle.write(
                f"{r.patient_id},{r.encounter_id},{r.time!r},"
                f"{names[r.column]},{r.value!r}\n"
            )


def write_meta_csv(metas: Sequence[EncounterMeta], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(META_HEADER) + "\n")
        for m in metas:
            row = (
                f"{m.patient_id},{m.encounter_id},{m.unit.value},"
                f"{m.disposition.value},{m.length_of_stay!r}"
            )
            for key in sorted(m.statics):
                row += f",{key}={m.statics[key]!r}"
            handle.write(row + "\n")


def cohort_summary(
    records: Sequence[LongRecord], metas: Sequence[EncounterMeta]
) -> dict:
    by_unit: dict[str, dict[str, int]] = {}
    for m in metas:
        entry = by_unit.setdefault(
            m.unit.value, {"patients": 0, "encounters": 0, "deaths": 0}
        )
        entry["encounters"] += 1
        entry["deaths"] += m.label
    for unit in by_unit:
        patients = {m.patient_id for m in metas if m.unit.value == unit}
        by_unit[unit]["patients"] = len(patients)
    return {
        "events": len(records),
        "encounters": len(metas),
        "patients": len({m.patient_id for m in metas}),
        "units": by_unit,
    }


def write_cohort(
    cfg: SynthConfig,
    catalog: VariableCatalog,
    events_path: str | Path,
    meta_path: str | Path,
) -> dict:
    """Generate and write both CSVs; returns a count summary."""
    records, metas = generate(cfg, catalog)
    write_events_csv(records, catalog, events_path)
    write_meta_csv(metas, meta_path)
    return cohort_summary(records, metas)
