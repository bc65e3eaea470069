"""Pseudo-label self-training of per-class task residuals.

Pipeline: the zero-shot classifier assigns each unlabeled sample its
argmax class; samples whose top probability clears the confidence
threshold gamma are retained; a per-class additive residual on the text
anchors is then trained to minimize the mean cross-entropy against those
pseudo-labels.  The residual starts at zero, so step 0 reproduces
zero-shot behavior exactly and any improvement is a measured delta.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .classifier import ClassAnchorSet, batch_probs
from .core import as_matrix, check_tau
from .errors import ConfigInvalid, DimMismatch, NoRetainedSamples


@dataclass
class TrainConfig:
    """Optimizer and filtering settings.

    Defaults: learning rate 3e-4, batch size 64, Adam(0.9, 0.999, 1e-8)
    with bias correction, confidence threshold 0.5, temperature 0.01.
    Pseudo-labels are generated once before training; set
    refresh_pseudo_labels_each_epoch to regenerate them per epoch from the
    current adapted anchors (ablation knob, off by default).
    """

    learning_rate: float = 3e-4
    batch_size: int = 64
    epochs: int = 5
    gamma: float = 0.5
    tau: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    refresh_pseudo_labels_each_epoch: bool = False

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigInvalid(f"gamma must be in [0, 1], got {self.gamma}")
        if self.batch_size < 1:
            raise ConfigInvalid(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigInvalid(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigInvalid(f"learning_rate must be > 0, got {self.learning_rate}")
        check_tau(self.tau)
        if not (0.0 <= self.adam_beta1 < 1.0) or not (0.0 <= self.adam_beta2 < 1.0):
            raise ConfigInvalid("adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ConfigInvalid("adam_epsilon must be > 0")


@dataclass
class PseudoLabelSet:
    """Retained sample indices with their assigned labels and confidences."""

    sample_indices: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    gamma: float
    total_candidates: int

    def __post_init__(self):
        self.sample_indices = np.asarray(self.sample_indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        n = self.sample_indices.shape[0]
        if self.labels.shape[0] != n or self.confidences.shape[0] != n:
            raise ConfigInvalid("index, label and confidence sequences must align")
        if n > self.total_candidates:
            raise ConfigInvalid("retained more samples than candidates")
        if n and self.confidences.min() < self.gamma:
            raise ConfigInvalid("confidence below gamma in a retained set")
        if n and self.labels.min() < 0:
            raise ConfigInvalid("negative class label")

    @property
    def retained_count(self) -> int:
        return int(self.sample_indices.shape[0])

    def __len__(self) -> int:
        return self.retained_count


@dataclass
class TaskResidual:
    """Per-class additive offsets on the anchor rows; the only trained weights."""

    values: np.ndarray

    def __post_init__(self):
        self.values = as_matrix(self.values)

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> "TaskResidual":
        return cls(np.zeros((num_classes, dim), dtype=np.float32))

    @property
    def shape(self):
        return self.values.shape


@dataclass
class OptimizerState:
    """Adam moment tables matching a residual's shape."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        self.first_moment = as_matrix(self.first_moment)
        self.second_moment = as_matrix(self.second_moment)
        if self.first_moment.shape != self.second_moment.shape:
            raise DimMismatch("moment tables must share a shape")
        if self.second_moment.size and self.second_moment.min() < 0:
            raise ConfigInvalid("second moment must be nonnegative")

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> "OptimizerState":
        z = np.zeros((num_classes, dim), dtype=np.float32)
        return cls(z, z.copy(), 0)


def generate_pseudo_labels(bank, anchors: ClassAnchorSet, tau, gamma) -> PseudoLabelSet:
    """Assign argmax labels and keep samples with confidence >= gamma.

    Labels always come from the anchors as given (callers pass the base,
    zero-residual set for the standard recipe).
    """
    if not (0.0 <= gamma <= 1.0):
        raise ConfigInvalid(f"gamma must be in [0, 1], got {gamma}")
    m = as_matrix(bank, dim=anchors.dim)
    n = m.shape[0]
    if n == 0:
        return PseudoLabelSet(np.zeros(0, np.int64), np.zeros(0, np.int64),
                              np.zeros(0, np.float64), gamma, 0)
    probs = batch_probs(m, anchors, tau)
    labels = probs.argmax(axis=1).astype(np.int64)
    conf = probs.max(axis=1)
    keep = np.flatnonzero(conf >= gamma).astype(np.int64)
    return PseudoLabelSet(keep, labels[keep], conf[keep], gamma, n)


def adapted_anchors(anchors: ClassAnchorSet, residual: TaskResidual) -> ClassAnchorSet:
    """Anchor set shifted by the residual: row i becomes t_i + r_i.

    Degenerate adapted rows are not rejected here; they surface at use.
    """
    if residual.values.shape != anchors.anchors.shape:
        raise DimMismatch(
            f"residual shape {residual.values.shape} != anchors {anchors.anchors.shape}"
        )
    return anchors.with_anchors(anchors.anchors + residual.values, check_norms=False)


def _gather_batch(bank_m, pseudo: PseudoLabelSet, rows: np.ndarray):
    x = np.ascontiguousarray(bank_m[pseudo.sample_indices[rows]])
    y = pseudo.labels[rows]
    return x, y


def _check_pseudo(bank_m, pseudo: PseudoLabelSet, num_classes: int):
    if len(pseudo) == 0:
        return
    if pseudo.sample_indices.max() >= bank_m.shape[0] or pseudo.sample_indices.min() < 0:
        raise DimMismatch("pseudo-label indices outside the bank")
    if pseudo.labels.max() >= num_classes:
        raise DimMismatch(f"pseudo-label class outside [0, {num_classes})")


def _adapted64(anchors: ClassAnchorSet, residual: TaskResidual) -> np.ndarray:
    """Adapted anchor table at float64: storage is float32, the sum t + r
    is formed at full precision so gradients match the 64-bit shadow."""
    if residual.values.shape != anchors.anchors.shape:
        raise DimMismatch(
            f"residual shape {residual.values.shape} != anchors {anchors.anchors.shape}"
        )
    return anchors.anchors.astype(np.float64) + residual.values.astype(np.float64)


def self_training_loss(bank, pseudo: PseudoLabelSet, anchors: ClassAnchorSet,
                       residual: TaskResidual, tau) -> float:
    """Mean -log p(pseudo-label) over the retained samples.

    Probabilities use the residual-adapted anchors through the same kernel
    arithmetic as the classifier, so at zero residual this equals the mean
    negative log of the zero-shot confidences exactly.  Empty retained set
    is 0 by convention.
    """
    t = check_tau(tau)
    m = as_matrix(bank, dim=anchors.dim)
    adapted = _adapted64(anchors, residual)
    _check_pseudo(m, pseudo, anchors.num_classes)
    if len(pseudo) == 0:
        return 0.0
    x, y = _gather_batch(m, pseudo, np.arange(len(pseudo)))
    nll, _ = backend.ce_loss_grad(x, y, adapted, t, False)
    return float(nll.mean())


def loss_gradient(bank, pseudo: PseudoLabelSet, anchors: ClassAnchorSet,
                  residual: TaskResidual, tau) -> np.ndarray:
    """d(self_training_loss)/d(residual) as a (K, D) float32 matrix.

    Differentiates through the normalization of (t_i + r_i) inside the
    cosine, not just the dot product.
    """
    t = check_tau(tau)
    m = as_matrix(bank, dim=anchors.dim)
    adapted = _adapted64(anchors, residual)
    _check_pseudo(m, pseudo, anchors.num_classes)
    k, d = anchors.anchors.shape
    if len(pseudo) == 0:
        return np.zeros((k, d), dtype=np.float32)
    x, y = _gather_batch(m, pseudo, np.arange(len(pseudo)))
    _, grad = backend.ce_loss_grad(x, y, adapted, t, True)
    return grad.astype(np.float32)


def adam_step(residual: TaskResidual, grad, state: OptimizerState,
              cfg: TrainConfig):
    """One Adam update with bias correction.  Returns (residual, state).

    Inputs are not mutated; math runs in float64 and lands back in float32.
    """
    g32 = as_matrix(grad)
    if g32.shape != residual.values.shape or g32.shape != state.first_moment.shape:
        raise DimMismatch("gradient, residual and optimizer state shapes must match")
    t = state.step_count + 1
    g = g32.astype(np.float64)
    m = state.first_moment.astype(np.float64)
    v = state.second_moment.astype(np.float64)
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * (g * g)
    m_hat = m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = v / (1.0 - cfg.adam_beta2 ** t)
    step = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    new_values = (residual.values.astype(np.float64) - step).astype(np.float32)
    new_state = OptimizerState(m.astype(np.float32), v.astype(np.float32), t)
    return TaskResidual(new_values), new_state


def _batch_loss_grad(bank_m, pseudo, adapted64, rows, tau):
    """Shared batch step for the trainers: summed NLL plus float32 gradient.

    adapted64 is the float64 residual-adapted anchor table.
    """
    x, y = _gather_batch(bank_m, pseudo, rows)
    nll, grad = backend.ce_loss_grad(x, y, adapted64, tau, True)
    return float(nll.sum()), grad.astype(np.float32)


def train_task_residual(bank, anchors: ClassAnchorSet, cfg: TrainConfig):
    """Self-train a task residual against pseudo-labels.

    Pseudo-labels come from the zero-residual anchors (regenerated per
    epoch from the adapted anchors only when the refresh flag is set).
    Each epoch shuffles the retained samples with the seeded generator and
    applies one Adam step per batch.  Returns (residual, log) where log
    has one entry per completed epoch: epoch index, retained count, mean
    loss over the samples visited that epoch.

    Raises NoRetainedSamples when gamma filters out everything up front.
    """
    m = as_matrix(bank, dim=anchors.dim)
    if m.shape[0] == 0:
        raise NoRetainedSamples(cfg.gamma, None)
    pseudo = generate_pseudo_labels(m, anchors, cfg.tau, cfg.gamma)
    if len(pseudo) == 0:
        probs = batch_probs(m, anchors, cfg.tau)
        raise NoRetainedSamples(cfg.gamma, float(probs.max(axis=1).max()))

    k, d = anchors.anchors.shape
    residual = TaskResidual.zeros(k, d)
    state = OptimizerState.zeros(k, d)
    anchors64 = anchors.anchors.astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    log = []
    for epoch in range(cfg.epochs):
        if cfg.refresh_pseudo_labels_each_epoch and epoch > 0:
            pseudo = generate_pseudo_labels(
                m, adapted_anchors(anchors, residual), cfg.tau, cfg.gamma)
            if len(pseudo) == 0:
                log.append({"epoch": epoch, "retained": 0, "mean_loss": 0.0,
                            "note": "refresh retained no samples; stopped"})
                break
        n = len(pseudo)
        order = rng.permutation(n)
        total_nll = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            if rows.size == 0:
                continue
            adapted64 = anchors64 + residual.values.astype(np.float64)
            nll_sum, grad = _batch_loss_grad(m, pseudo, adapted64, rows, cfg.tau)
            residual, state = adam_step(residual, grad, state, cfg)
            total_nll += nll_sum
        log.append({"epoch": epoch, "retained": n, "mean_loss": total_nll / n})
    return residual, log
