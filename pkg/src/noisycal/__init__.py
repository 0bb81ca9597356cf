"""Conformal prediction sets that stay valid under label contamination.

Calibration labels observed through a known (or estimated) column-stochastic
transition matrix bias the usual split-conformal quantile.  This package
estimates the induced inflation of the empirical coverage, corrects it with
either a finite-sample optimized bound or an asymptotic Monte-Carlo
estimate, and calibrates thresholds whose marginal coverage is certified
despite the contamination.
"""

from .calibrate import (
    OPTIMISTIC_CAVEAT,
    CalibrationMethod,
    PredictionSet,
    ThresholdResult,
    adaptive_threshold,
    evaluate,
    optimistic_threshold,
    prediction_sets,
    standard_threshold,
)
from .cli import (
    METHODS,
    ExperimentConfig,
    correction_report,
    main,
    read_experiment_config,
    run_from_scores,
    run_synthetic,
)
from .correction import (
    BetaVector,
    CnEstimate,
    CorrectionMethod,
    CorrectionReport,
    GridCovariance,
    b_term,
    c_of_n,
    cn_envelope,
    delta_asy,
    delta_fs,
    delta_fs_special,
    delta_star_star_bound,
    estimate_covariance,
    omega_matrix,
    richardson,
    simulate_gbb_sup,
    upper_bound_diagnostics,
)
from .empirical import (
    CalibrationSet,
    EmpiricalCdfs,
    InflationCurve,
    build_cdfs,
    delta_hat,
    psi_sup_oracle,
    psi_values,
)
from .errors import (
    CholeskyFailure,
    DegenerateData,
    DimensionMismatch,
    EmptyClass,
    FileFormatError,
    InsufficientVertices,
    InvalidProbability,
    InvalidSpec,
    LadderMismatch,
    LengthMismatch,
    MissingClass,
    NoisycalError,
    SingularM,
    SingularTransition,
    SolverFailure,
)
from .noise_model import (
    ContaminationSpec,
    Family,
    TransitionMatrix,
    TwoLevelDerived,
    build_transition,
    closed_form_inverse,
    estimate_transition,
    sample_noisy_labels,
    transition_from_matrix,
    two_level_constants,
)
from .scores import (
    ScoreMatrix,
    aps_scores,
    one_minus_prob_scores,
    prediction_set,
    validate_probability_rows,
)
from .synth import (
    SoftmaxModel,
    SynthConfig,
    generate,
    predict_probs,
    train_softmax,
)

__version__ = "0.1.0"
