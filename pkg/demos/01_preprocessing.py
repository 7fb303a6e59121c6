"""
From chart events to model-ready matrices
=========================================

Walks the whole preprocessing chain on a small synthetic cohort: variable
catalog, long-format events, pivoting to per-encounter matrices, patient
level splits, standardization fit on the training set only, imputation,
and the input-type / drug-encoding views used by the permutation studies.

Run with:  python3 demos/01_preprocessing.py
"""

import tempfile
from pathlib import Path

import numpy as np

from emrbench import (
    DrugEncoding,
    InputType,
    SynthConfig,
    Split,
    encode_drugs,
    encoded_column_names,
    fit_standardizer,
    generate,
    impute,
    load_catalog,
    make_partition,
    pivot_all,
    pooled_internal_moments,
    select_inputs,
    standardize,
    subsample_training,
)

###############################################################################
# The variable catalog declares every column of the patient matrix: vitals
# and labs ("internals", describing the patient) carry plausibility ranges,
# drugs and interventions ("externals", describing care) carry an upper
# dose limit and optionally a MeSH heading for coarse drug rollups.

catalog = load_catalog(Path(__file__).resolve().parent.parent / "configs" / "demo_catalog.csv")
print(f"catalog: {catalog.width} variables, "
      f"{int(catalog.internal_mask.sum())} internal / "
      f"{int((~catalog.internal_mask).sum())} external")

###############################################################################
# Synthesize a small two-unit cohort. Every event is one (patient,
# encounter, time, variable, value) row, exactly what an EMR export looks
# like after alias normalization.

cfg = SynthConfig(seed=7, n_picu_patients=80, n_cticu_patients=20,
                  mortality_picu=0.2, mortality_cticu=0.2)
records, metas = generate(cfg, catalog)
print(f"cohort: {len(metas)} encounters, {len(records)} events")
print("first event:", records[0])

###############################################################################
# Pivot long records into one matrix per encounter: rows are the distinct
# charting times, columns follow catalog order, unobserved cells stay NaN.

matrices, collisions = pivot_all(records, catalog.width)
first = metas[0].encounter_id
m = matrices[first]
print(f"\n{first}: {m.values.shape[0]} time rows x {m.values.shape[1]} columns, "
      f"{np.isnan(m.values).mean():.0%} empty, {collisions} collisions overall")

###############################################################################
# Split at the patient level so no patient contributes to both training and
# evaluation: PICU patients go 50/25/25 into train/validation/test, and the
# whole CTICU cohort is a held-out transfer test set.

partition = make_partition(metas, seed=0)
print("\npartition:", partition.counts())

# training-set subsampling for the fraction study is a seeded nested prefix:
# the 25% subset is contained in the 50% subset, and so on
half = subsample_training(partition, 0.5, seed=0)
quarter = subsample_training(partition, 0.25, seed=0)
print(f"fraction subsets: |50%|={len(half)}, |25%|={len(quarter)}, "
      f"nested={quarter <= half}")

###############################################################################
# Standardization is fit on training encounters only. Internals get
# z-scored with the pooled training mean/std; externals are divided by
# their catalog dose limit and clipped into [0, 1].

train_ids = sorted(partition.encounters(Split.TRAIN))
params = fit_standardizer([matrices[e] for e in train_ids], catalog)
standardized = {e: standardize(matrices[e], params, catalog) for e in matrices}

mean, std, count = pooled_internal_moments(
    [standardized[e] for e in train_ids], catalog)
print(f"\npooled training internals after standardize: "
      f"|mean|<={np.nanmax(np.abs(mean)):.2e}, |std-1|<={np.nanmax(np.abs(std - 1)):.2e}")

###############################################################################
# Imputation makes the matrices dense: internals forward-fill from the
# last measurement (zero, the training mean, before the first one);
# externals become zero wherever nothing was charted, i.e. "no dose".
# The operation is idempotent, so re-imputing changes nothing.

imputed = {e: impute(z, catalog) for e, z in standardized.items()}
z = imputed[first]
print(f"\nafter impute: {np.isnan(z.values).sum()} NaNs left, "
      f"idempotent={np.array_equal(impute(z, catalog).values, z.values)}")

###############################################################################
# The permutation studies re-slice these matrices. Input-type rows keep
# only internal or only external columns; drug-encoding rows swap dose
# fractions for binary flags or MeSH-heading maxima.

internals_only = select_inputs(z, catalog, InputType.INTERNALS)
externals_only = select_inputs(z, catalog, InputType.EXTERNALS)
print(f"\ninput views: combined {z.width}, internals {internals_only.width}, "
      f"externals {externals_only.width} columns")

for enc in (DrugEncoding.NONE, DrugEncoding.BINARY, DrugEncoding.MESH):
    view = encode_drugs(z, catalog, enc)
    names = encoded_column_names(catalog, enc)
    print(f"drug encoding {enc.value:6s}: {view.width} columns, last 3 = {names[-3:]}")

###############################################################################
# Everything serializes to plain CSV for inspection.

out = Path(tempfile.mkdtemp(prefix="emrbench-demo01-"))
partition.to_csv(out / "partition.csv")
print(f"\nwrote {out / 'partition.csv'}")
print((out / "partition.csv").read_text().splitlines()[0])
