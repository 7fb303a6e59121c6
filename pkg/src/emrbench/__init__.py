"""EMR data-quality benchmark for in-ICU mortality models.

A numpy-only pipeline that turns timestamped chart events into per-patient
matrices, trains logistic-regression, feed-forward, and LSTM classifiers
from scratch, and measures how AUROC responds to training-set size, input
types, and drug-encoding fidelity, including transfer to a held-out
cardiothoracic unit. A synthetic cohort generator with controllable
signal strength makes the whole benchmark runnable at desk scale.
"""

from .catalog import (
    CatalogError,
    VariableCatalog,
    VariableKind,
    VariableSpec,
    catalog_from_rows,
    load_catalog,
    save_catalog,
)
from .cohort import (
    BASELINE,
    DEFAULT_FRACTIONS,
    DrugEncoding,
    InputType,
    Partition,
    PermutationSpec,
    Split,
    encode_drugs,
    encoded_column_names,
    make_partition,
    round_half_up,
    select_inputs,
    subsample_training,
)
from .evaluate import (
    EncounterScore,
    ReportRow,
    RunResult,
    aggregate,
    auroc,
    load_bundle,
    predict_at_horizon,
    render_from_bundle,
    save_bundle,
    score_encounters,
    summarize_study,
    tied_average_ranks,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    load_experiment_config,
    prepare_data,
    run_experiment,
)
from .ingest import (
    Disposition,
    EncounterMeta,
    IngestError,
    IngestStats,
    LongRecord,
    Unit,
    curate,
    curate_records,
    drop_out_of_encounter,
    parse_events,
    parse_meta,
)
from .nn import (
    LSTMModel,
    MLPModel,
    ModelArch,
    RMSPropState,
    bce_loss,
    build_model,
    finite_difference_gradients,
    glorot_uniform,
    load_model,
    make_arch,
    parameter_count,
    rmsprop_step,
    save_model,
    sequence_dropout,
    sigmoid,
)
from .pivot import (
    MatrixState,
    PatientMatrix,
    flatten_matrix,
    group_by_encounter,
    pivot_all,
    pivot_encounter,
)
from .synth import SynthConfig, draw_cohort, generate, generate_metas, write_cohort
from .train import (
    TrainConfig,
    TrainHistory,
    pad_sequences,
    run_schedule,
    train_model,
)
from .transform import (
    StandardizationParams,
    fit_standardizer,
    impute,
    pooled_internal_moments,
    standardize,
)

__version__ = "0.1.0"
