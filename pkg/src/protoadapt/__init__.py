"""Few-shot domain adaptation for 1-D vibration fault diagnosis.

A small NumPy-backed autodiff core, a Siamese convolutional feature
extractor with prototypical and traditional classification heads, and a
training pipeline that adapts a source-domain model to a target domain
from a handful of labelled target windows.
"""

from .tensor import (
    Tensor,
    as_tensor,
    apply_activation,
    backward,
    conv1d,
    dropout,
    linear,
    log_softmax,
    maxpool1d,
    relu,
    sigmoid,
    softmax,
    zero_grads,
)
from .network import (
    CONV_BLOCKS,
    FEATURE_DIM,
    PROTO_DIM,
    PROTOTYPICAL,
    TRADITIONAL,
    WINDOW_LEN,
    ModelParams,
    extract_features,
    init_model,
    layer_output_lengths,
    load_checkpoint,
    permute_class_parameters,
    predict_label,
    project_to_prototype_space,
    save_checkpoint,
)
from .losses import (
    LossConfig,
    PairBatch,
    binary_cross_entropy,
    categorical_ce,
    combined_loss,
    distance_loss,
    pair_similarity,
    proto_class_loss,
    proto_loss_lcb,
    prototype_assignment,
    softmax_cross_entropy,
)
from .optim import AdaDeltaState, adadelta_step
from .data import (
    Dataset,
    DomainParams,
    LabeledWindow,
    RawSignal,
    SynthSpec,
    load_manifest,
    permute_labels,
    sample_pairs,
    select_few_shot,
    slide_window,
    synth_generate,
    synth_signal,
    write_manifest,
)
from .pipeline import (
    CTM,
    FPM,
    FTM,
    EvalReport,
    TrainConfig,
    TrainingLog,
    evaluate,
    export_features,
    fine_tune,
    predict,
    run_experiment,
    train,
)
from .config import ConfigError, RunConfig, load_run_config
from .cli import run_cli

__version__ = "0.1.0"

__all__ = [
    "Tensor", "as_tensor", "apply_activation", "backward", "conv1d", "dropout",
    "linear", "log_softmax", "maxpool1d", "relu", "sigmoid", "softmax",
    "zero_grads",
    "CONV_BLOCKS", "FEATURE_DIM", "PROTO_DIM", "PROTOTYPICAL", "TRADITIONAL",
    "WINDOW_LEN", "ModelParams", "extract_features", "init_model",
    "layer_output_lengths", "load_checkpoint", "permute_class_parameters",
    "predict_label", "project_to_prototype_space", "save_checkpoint",
    "LossConfig", "PairBatch", "binary_cross_entropy", "categorical_ce",
    "combined_loss", "distance_loss", "pair_similarity", "proto_class_loss",
    "proto_loss_lcb", "prototype_assignment", "softmax_cross_entropy",
    "AdaDeltaState", "adadelta_step",
    "Dataset", "DomainParams", "LabeledWindow", "RawSignal", "SynthSpec",
    "load_manifest", "permute_labels", "sample_pairs", "select_few_shot",
    "slide_window", "synth_generate", "synth_signal", "write_manifest",
    "CTM", "FPM", "FTM", "EvalReport", "TrainConfig", "TrainingLog",
    "evaluate", "export_features", "fine_tune", "predict", "run_experiment",
    "train",
    "ConfigError", "RunConfig", "load_run_config",
    "run_cli",
    "__version__",
]
