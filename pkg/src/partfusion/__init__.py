"""Pose-invariant identity recognition by fusing part-level classifiers.

The package trains one linear classifier per body part on whatever subset of
instances that part fires on, lifts every sparse posterior onto the full
identity set by blending with a dense global posterior, and combines the
lifted posteriors with learned per-part weights. Detection-to-instance
matching, evaluation protocols, and a synthetic benchmark round it out.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .data import (
    Dataset,
    FeatureMatrix,
    Instance,
    PartInfo,
    PartRegistry,
    build_coverage,
    l2_normalize_rows,
    load_index,
    make_registry,
    read_features,
    write_features,
    write_index,
)
from .fusion import (
    FusionWeights,
    ProbabilityTable,
    WeightLearningInfo,
    coverage_mass,
    fill_sparsity,
    fill_sparsity_rows,
    fuse,
    fuse_matrix,
    learn_weights,
    predict,
    read_prob_table,
    read_weights,
    write_prob_table,
    write_weights,
)
from .geometry import (
    DEFAULT_BODY_EXTRAPOLATION,
    BBox,
    BodyExtrapolation,
    GeometryError,
    body_from_head,
    iou,
)
from .matching import (
    Assignment,
    Detection,
    activations_per_instance,
    load_detections,
    match_bruteforce,
    match_detections,
    normalize_scores,
    write_detections,
)
from .protocols import (
    EvalReport,
    ReferenceModels,
    build_identity_embedding,
    eval_ablation,
    eval_faces_split,
    eval_oneshot,
    eval_recognition,
    eval_recognition_no_fill,
    eval_retrieval,
    learn_fusion_weights,
    run_retrieval_protocol,
    stratified_half_split,
    train_reference_models,
    write_report,
)
from .svm import (
    LinearModel,
    TrainConfig,
    hinge_objective,
    hinge_subgradient,
    load_model,
    predict_classes,
    save_model,
    score,
    softmax,
    train_binary,
    train_multiclass,
)
from .synth import SynthConfig, SynthData, generate, planted_config, write_synth

__all__ = [
    "__version__",
    "Assignment",
    "BBox",
    "BodyExtrapolation",
    "Dataset",
    "DEFAULT_BODY_EXTRAPOLATION",
    "Detection",
    "EvalReport",
    "FeatureMatrix",
    "FusionWeights",
    "GeometryError",
    "Instance",
    "LinearModel",
    "PartInfo",
    "PartRegistry",
    "ProbabilityTable",
    "ReferenceModels",
    "SynthConfig",
    "SynthData",
    "TrainConfig",
    "WeightLearningInfo",
    "activations_per_instance",
    "body_from_head",
    "build_coverage",
    "build_identity_embedding",
    "coverage_mass",
    "eval_ablation",
    "eval_faces_split",
    "eval_oneshot",
    "eval_recognition",
    "eval_recognition_no_fill",
    "eval_retrieval",
    "fill_sparsity",
    "fill_sparsity_rows",
    "fuse",
    "fuse_matrix",
    "generate",
    "hinge_objective",
    "hinge_subgradient",
    "iou",
    "l2_normalize_rows",
    "learn_fusion_weights",
    "learn_weights",
    "load_detections",
    "load_index",
    "load_model",
    "make_registry",
    "match_bruteforce",
    "match_detections",
    "normalize_scores",
    "planted_config",
    "predict",
    "predict_classes",
    "read_features",
    "read_prob_table",
    "read_weights",
    "run_retrieval_protocol",
    "save_model",
    "score",
    "softmax",
    "stratified_half_split",
    "train_binary",
    "train_multiclass",
    "train_reference_models",
    "write_detections",
    "write_features",
    "write_index",
    "write_prob_table",
    "write_report",
    "write_weights",
]
