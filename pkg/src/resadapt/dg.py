"""Label-free multi-source domain generalization via residual disentangling.

Training splits the task residual into one table shared by all domains
plus one table per domain; every batch comes from a single domain, so the
batch loss sees anchors t + r_shared + r_specific[domain].  Because the
two tables enter through a plain sum, a batch's gradient with respect to
the shared table equals its gradient with respect to the active specific
table, entrywise.  Inference uses the shared table only.
"""

from dataclasses import dataclass

import numpy as np

from .classifier import ClassAnchorSet, batch_probs
from .core import as_matrix
from .errors import (
    ConfigInvalid,
    DimMismatch,
    DomainIndexOutOfRange,
    NoRetainedSamples,
)
from .selftrain import (
    OptimizerState,
    TaskResidual,
    TrainConfig,
    _batch_loss_grad,
    adam_step,
    generate_pseudo_labels,
    train_task_residual,
)


@dataclass
class MultiDomainBank:
    """Embedding banks for several domains sharing one dimension."""

    banks: list
    domain_names: list

    def __post_init__(self):
        self.banks = [as_matrix(b) for b in self.banks]
        self.domain_names = [str(n) for n in self.domain_names]
        if not self.banks:
            raise ConfigInvalid("need at least one domain bank")
        if len(self.banks) != len(self.domain_names):
            raise ConfigInvalid("one name per bank required")
        if len(set(self.domain_names)) != len(self.domain_names):
            raise ConfigInvalid("domain names must be unique")
        dims = {b.shape[1] for b in self.banks}
        if len(dims) != 1:
            raise DimMismatch(f"domains disagree on dimension: {sorted(dims)}")

    @property
    def num_domains(self) -> int:
        return len(self.banks)

    @property
    def dim(self) -> int:
        return int(self.banks[0].shape[1])


@dataclass
class DisentangledResidual:
    """One shared residual table plus one specific table per domain."""

    shared: np.ndarray
    specific: list
    domain_names: list

    def __post_init__(self):
        self.shared = as_matrix(self.shared)
        self.specific = [as_matrix(s) for s in self.specific]
        self.domain_names = [str(n) for n in self.domain_names]
        if len(self.specific) != len(self.domain_names):
            raise ConfigInvalid("one specific table per domain name required")
        for s in self.specific:
            if s.shape != self.shared.shape:
                raise DimMismatch("specific table shape differs from shared")

    @classmethod
    def zeros(cls, num_classes: int, dim: int, domain_names) -> "DisentangledResidual":
        names = list(domain_names)
        z = np.zeros((num_classes, dim), dtype=np.float32)
        return cls(z, [z.copy() for _ in names], names)

    @property
    def num_domains(self) -> int:
        return len(self.specific)


def dg_adapted_anchors(anchors: ClassAnchorSet, res: DisentangledResidual,
                       domain: int) -> ClassAnchorSet:
    """Training-time anchors for one domain: t + shared + specific[domain]."""
    if not (0 <= domain < res.num_domains):
        raise DomainIndexOutOfRange(
            f"domain {domain} outside [0, {res.num_domains})")
    if res.shared.shape != anchors.anchors.shape:
        raise DimMismatch(
            f"residual shape {res.shared.shape} != anchors {anchors.anchors.shape}")
    values = (anchors.anchors + res.shared) + res.specific[domain]
    return anchors.with_anchors(values, check_norms=False)


def inference_anchors(anchors: ClassAnchorSet,
                      res: DisentangledResidual) -> ClassAnchorSet:
    """Inference-time anchors: t + shared.  Ignores every specific table."""
    if res.shared.shape != anchors.anchors.shape:
        raise DimMismatch(
            f"residual shape {res.shared.shape} != anchors {anchors.anchors.shape}")
    return anchors.with_anchors(anchors.anchors + res.shared, check_norms=False)


def _domain_pseudo_sets(data: MultiDomainBank, anchors: ClassAnchorSet,
                        cfg: TrainConfig):
    """Per-domain pseudo-labels from the zero-residual anchors."""
    sets = []
    warnings = []
    for name, bank in zip(data.domain_names, data.banks):
        pseudo = generate_pseudo_labels(bank, anchors, cfg.tau, cfg.gamma)
        if len(pseudo) == 0:
            warnings.append(f"domain {name!r} retained no samples; dropped from rotation")
        sets.append(pseudo)
    if all(len(p) == 0 for p in sets):
        best = 0.0
        for bank in data.banks:
            if bank.shape[0]:
                best = max(best, float(batch_probs(bank, anchors, cfg.tau).max()))
        raise NoRetainedSamples(cfg.gamma, best if best > 0 else None)
    return sets, warnings


def train_disentangled(data: MultiDomainBank, anchors: ClassAnchorSet,
                       cfg: TrainConfig, freeze_specific: bool = False,
                       on_batch=None):
    """Train shared + per-domain specific residuals on unlabeled domains.

    Batches are single-domain; active domains are visited round-robin,
    each shuffled internally by the seeded generator.  The batch gradient
    is applied to the shared table and (unless freeze_specific) to that
    domain's specific table, through independent Adam states.

    With a single domain and freeze_specific=True this reproduces
    train_task_residual bit for bit: same pseudo-labels, same shuffles,
    same arithmetic (adding a zero specific table preserves float bits).

    on_batch, when given, is called as on_batch(domain_index, shared_grad,
    specific_grad) after each batch; the two gradients are the same array
    by construction.  Returns (DisentangledResidual, log).
    """
    if data.dim != anchors.dim:
        raise DimMismatch(f"bank dim {data.dim} != anchor dim {anchors.dim}")
    pseudo_sets, warnings = _domain_pseudo_sets(data, anchors, cfg)
    active = [i for i, p in enumerate(pseudo_sets) if len(p) > 0]

    k, d = anchors.anchors.shape
    res = DisentangledResidual.zeros(k, d, data.domain_names)
    shared = TaskResidual.zeros(k, d)
    shared_state = OptimizerState.zeros(k, d)
    specific = [TaskResidual.zeros(k, d) for _ in data.banks]
    specific_states = [OptimizerState.zeros(k, d) for _ in data.banks]

    anchors64 = anchors.anchors.astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    log = []
    retained = {name: len(p) for name, p in zip(data.domain_names, pseudo_sets)}
    for epoch in range(cfg.epochs):
        # One shuffle per active domain, in domain order, so the generator
        # call sequence is reproducible.
        queues = []
        for i in active:
            order = rng.permutation(len(pseudo_sets[i]))
            chunks = [order[s:s + cfg.batch_size]
                      for s in range(0, order.shape[0], cfg.batch_size)]
            queues.append((i, chunks))
        total_nll = 0.0
        total_seen = 0
        step = 0
        while any(chunks for _, chunks in queues):
            i, chunks = queues[step % len(queues)]
            step += 1
            if not chunks:
                continue
            rows = chunks.pop(0)
            pseudo = pseudo_sets[i]
            adapted64 = (anchors64 + shared.values.astype(np.float64)) \
                + specific[i].values.astype(np.float64)
            nll_sum, grad = _batch_loss_grad(
                data.banks[i], pseudo, adapted64, rows, cfg.tau)
            if on_batch is not None:
                on_batch(i, grad, grad)
            shared, shared_state = adam_step(shared, grad, shared_state, cfg)
            if not freeze_specific:
                specific[i], specific_states[i] = adam_step(
                    specific[i], grad, specific_states[i], cfg)
            total_nll += nll_sum
            total_seen += rows.size
        log.append({
            "epoch": epoch,
            "retained": dict(retained),
            "mean_loss": total_nll / total_seen if total_seen else 0.0,
        })
    res = DisentangledResidual(shared.values,
                               [s.values for s in specific],
                               list(data.domain_names))
    return res, {"epochs": log, "warnings": warnings}


def train_common_baseline(data: MultiDomainBank, anchors: ClassAnchorSet,
                          cfg: TrainConfig):
    """Pool every domain and train one common task residual.

    Domains are pooled in sorted-name order, so the result is independent
    of the order the banks were supplied in.  Returns (TaskResidual, log).
    """
    order = sorted(range(data.num_domains), key=lambda i: data.domain_names[i])
    pooled = np.vstack([data.banks[i] for i in order])
    return train_task_residual(pooled, anchors, cfg)
