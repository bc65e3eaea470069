"""resadapt: embedding-space domain adaptation.

Zero-shot cosine classification over prompt-keyed text anchors, optional
domain-prior prompts, pseudo-label self-training of per-class task
residuals, and shared/specific residual disentangling for label-free
multi-source domain generalization.  Operates entirely on precomputed
embeddings; hot kernels run in a compiled extension when built, with a
numpy fallback selected at import.
"""

from . import errors
from .backend import available_backends, backend_name
from .classifier import (
    ClassAnchorSet,
    Prediction,
    PromptKey,
    accuracy,
    batch_probs,
    classify,
    classify_batch,
    predict_labels,
    render_prompt,
)
from .core import cosine_sim, l2_normalize, softmax_scaled
from .dg import (
    DisentangledResidual,
    MultiDomainBank,
    dg_adapted_anchors,
    inference_anchors,
    train_common_baseline,
    train_disentangled,
)
from .selftrain import (
    OptimizerState,
    PseudoLabelSet,
    TaskResidual,
    TrainConfig,
    adam_step,
    adapted_anchors,
    generate_pseudo_labels,
    loss_gradient,
    self_training_loss,
    train_task_residual,
)
from .synth import SynthConfig, SynthProblem, oracle_accuracy, save_problem
from .synth import generate as generate_problem

__version__ = "0.1.0"

__all__ = [
    "ClassAnchorSet",
    "DisentangledResidual",
    "MultiDomainBank",
    "OptimizerState",
    "Prediction",
    "PromptKey",
    "PseudoLabelSet",
    "SynthConfig",
    "SynthProblem",
    "TaskResidual",
    "TrainConfig",
    "accuracy",
    "adam_step",
    "adapted_anchors",
    "available_backends",
    "backend_name",
    "batch_probs",
    "classify",
    "classify_batch",
    "cosine_sim",
    "dg_adapted_anchors",
    "errors",
    "generate_problem",
    "generate_pseudo_labels",
    "inference_anchors",
    "l2_normalize",
    "loss_gradient",
    "oracle_accuracy",
    "predict_labels",
    "render_prompt",
    "save_problem",
    "self_training_loss",
    "softmax_scaled",
    "train_common_baseline",
    "train_disentangled",
    "train_task_residual",
]
