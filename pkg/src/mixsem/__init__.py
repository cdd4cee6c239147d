"""Finite mixture structural equation models with mixed response types."""

from .model import (
    CENTERING_TOL,
    LOGISTIC_SD,
    BinaryEqParams,
    DataRecord,
    Dataset,
    DegenerateSigmaError,
    GaussianEqParams,
    LatentStructure,
    ModelSpec,
    OrdinalEqParams,
    ParameterSet,
    binary_prob,
    class_conditional_log_lik,
    correlation_from_sigma,
    count_parameters,
    gaussian_log_density,
    mixture_log_lik,
    ordinal_category_probs,
    per_record_log_lik,
)
from .em import (
    EmConfig,
    EstimationError,
    FitResult,
    MStepError,
    PosteriorMatrix,
    center_support_points,
    e_step,
    fit_multistart,
    initialize,
    m_step_binary,
    m_step_gaussian,
    m_step_ordinal,
    run_em,
    update_weights,
)
from .inference import (
    InferenceReport,
    SelectionTable,
    bic,
    build_report,
    class_contrasts,
    classify,
    observed_information,
    pack_parameters,
    score_vector,
    select_k,
    standard_errors,
    unpack_parameters,
)
from .dataio import (
    EncodedDesign,
    IngestionError,
    IngestionReport,
    SchemaConfig,
    SchemaError,
    build_model_spec,
    encode_design,
    load_csv,
    read_results,
    simulate,
    write_dataset_csv,
    write_results,
)

__version__ = "0.1.0"
