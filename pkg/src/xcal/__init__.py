"""Top-k calibration measurement and post-hoc recalibration for extreme
multi-label classifiers: ECE@k / ACE / Brier / NLL metrics with
reliability-diagram data, isotonic (PAV) and Platt recalibration under a
k-fold protocol, and analytic synthetic worlds for validation."""

__version__ = "0.1.0"

from .core import (
    DenseScoreMatrix,
    GroundTruth,
    MinMaxSquash,
    PredictionBlock,
    TopKPredictions,
    TruthBlock,
    minmax_squash,
    select_top_k,
    sigmoid_link,
)
from .calibrate import (
    IsotonicModel,
    PlattModel,
    apply_isotonic,
    apply_platt,
    fit_isotonic,
    fit_platt,
)
from .metrics import (
    BrierDecomposition,
    ReliabilityBins,
    StreamingEvaluator,
    ace_at_k,
    brier,
    brier_decomposition,
    confidence_histogram,
    ece_at_k,
    marginal_ece,
    ndcg_at_k,
    nll,
    precision_at_k,
)
from .pipeline import (
    CalibrationConfig,
    FoldAssignment,
    assign_folds,
    evaluate_report,
    joint_calibrate,
    kfold_recalibrate,
    separate_calibrate,
)
from .synth import Distortion, SyntheticWorld, analytic_ece, distort, generate_world

__all__ = [
    "DenseScoreMatrix", "GroundTruth", "MinMaxSquash", "PredictionBlock",
    "TopKPredictions", "TruthBlock", "minmax_squash", "select_top_k", "sigmoid_link",
    "IsotonicModel", "PlattModel", "apply_isotonic", "apply_platt",
    "fit_isotonic", "fit_platt",
    "BrierDecomposition", "ReliabilityBins", "StreamingEvaluator",
    "ace_at_k", "brier", "brier_decomposition", "confidence_histogram",
    "ece_at_k", "marginal_ece", "ndcg_at_k", "nll", "precision_at_k",
    "CalibrationConfig", "FoldAssignment", "assign_folds", "evaluate_report",
    "joint_calibrate", "kfold_recalibrate", "separate_calibrate",
    "Distortion", "SyntheticWorld", "analytic_ece", "distort", "generate_world",
]
