"""Seeded synthetic multi-domain classification problems in embedding space.

Stands in for DomainNet/OfficeHome at desk scale: class prototypes live on
the unit sphere, each domain perturbs them, samples scatter around the
domain prototypes, and the classifier's anchors are noisy copies of the
base prototypes.  Gaussian perturbation + renormalization is used instead
of exact von Mises-Fisher sampling; simpler, seedable, and adequate for
property tests.

Ground-truth labels are carried for evaluation only; trainers see
unlabeled banks.
"""

from dataclasses import dataclass

import numpy as np

from .classifier import ClassAnchorSet
from .core import NORM_EPS
from .dg import MultiDomainBank
from .errors import ConfigInvalid, DomainIndexOutOfRange
from . import backend

DEFAULT_TEMPLATE = "a photo of a {class}"


@dataclass
class SynthConfig:
    num_classes: int = 5
    dim: int = 32
    num_domains: int = 1
    samples_per_class_per_domain: int = 100
    class_separation: float = 1.0
    domain_shift: float = 0.3
    noise: float = 0.4
    anchor_noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigInvalid(f"need >= 2 classes, got {self.num_classes}")
        if self.dim < 2:
            raise ConfigInvalid(f"need dim >= 2, got {self.dim}")
        if self.num_domains < 1:
            raise ConfigInvalid(f"need >= 1 domain, got {self.num_domains}")
        if self.samples_per_class_per_domain < 1:
            raise ConfigInvalid("need >= 1 sample per class per domain")
        for name in ("class_separation", "domain_shift", "noise", "anchor_noise"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be nonnegative")


@dataclass
class SynthProblem:
    """Generated instance: anchors, per-domain banks + labels, true prototypes."""

    anchors: ClassAnchorSet
    domains: MultiDomainBank
    labels: list
    true_prototypes: list
    config: SynthConfig

    def domain_labels(self, domain: int) -> np.ndarray:
        return self.labels[domain]


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("kd,kd->k", m, m))
    if norms.min() <= NORM_EPS:
        raise ConfigInvalid(
            "generated a near-zero vector; adjust separation/shift/noise")
    return m / norms[:, None]


def generate(cfg: SynthConfig) -> SynthProblem:
    """Deterministically generate a problem from the config.

    Draw order is fixed (prototypes, anchors, domain offsets, samples), so
    identical configs yield identical bytes.
    """
    rng = np.random.default_rng(cfg.seed)
    k, d = cfg.num_classes, cfg.dim

    raw = _unit_rows(rng.standard_normal((k, d)))
    mean_dir = raw.mean(axis=0)
    mn = float(np.sqrt(np.dot(mean_dir, mean_dir)))
    if mn <= NORM_EPS:
        mean_dir = np.zeros(d)
        mean_dir[0] = 1.0
    else:
        mean_dir = mean_dir / mn
    # class_separation scales each draw's offset from the shared mean
    # direction: 0 collapses all prototypes, 1 keeps the raw draws.
    protos = _unit_rows(mean_dir[None, :] + cfg.class_separation * (raw - mean_dir[None, :]))

    anchor_pert = rng.standard_normal((k, d))
    anchor_rows = _unit_rows(protos + cfg.anchor_noise * anchor_pert)

    domain_protos = []
    for _ in range(cfg.num_domains):
        g = _unit_rows(rng.standard_normal((k, d)))
        domain_protos.append(_unit_rows(protos + cfg.domain_shift * g))

    banks = []
    labels = []
    m = cfg.samples_per_class_per_domain
    for n in range(cfg.num_domains):
        rows = []
        labs = []
        for c in range(k):
            e = rng.standard_normal((m, d))
            rows.append(_unit_rows(domain_protos[n][c][None, :] + cfg.noise * e))
            labs.extend([c] * m)
        banks.append(np.vstack(rows).astype(np.float32))
        labels.append(np.asarray(labs, dtype=np.int64))

    class_names = [f"class_{c:02d}" for c in range(k)]
    anchors = ClassAnchorSet.from_prompts(
        class_names, anchor_rows.astype(np.float32), DEFAULT_TEMPLATE)
    domains = MultiDomainBank(banks, [f"domain_{n}" for n in range(cfg.num_domains)])
    prototypes = [p.astype(np.float32) for p in domain_protos]
    return SynthProblem(anchors, domains, labels, prototypes, cfg)


def save_problem(problem: SynthProblem, outdir) -> "Path":
    """Materialize a problem as banks + labels + manifest in a directory.

    CLI workflows are then identical for synthetic and exported real data.
    Returns the manifest path.
    """
    from pathlib import Path

    from . import io_formats

    root = Path(outdir)
    root.mkdir(parents=True, exist_ok=True)
    io_formats.write_bank(problem.anchors.anchors, root / "anchors.emb")
    splits = []
    for name, bank, labels in zip(problem.domains.domain_names,
                                  problem.domains.banks, problem.labels):
        bank_name = f"bank_{name}.emb"
        labels_name = f"labels_{name}.lbl"
        io_formats.write_bank(bank, root / bank_name)
        io_formats.write_labels(labels, root / labels_name)
        splits.append({"name": name, "bank_path": bank_name,
                       "labels_path": labels_name, "domain_name": name})
    doc = {
        "class_names": list(problem.anchors.class_names),
        "prompt_template": DEFAULT_TEMPLATE,
        "anchors": {"plain": "anchors.emb"},
        "splits": splits,
    }
    manifest_path = root / "manifest.json"
    io_formats.write_manifest(doc, manifest_path)
    return manifest_path


def oracle_accuracy(problem: SynthProblem, domain: int) -> float:
    """Accuracy of the nearest-true-prototype cosine classifier on a domain.

    Upper reference: it sees the actual domain prototypes the samples were
    scattered around, which no adapted classifier gets to observe.
    """
    if not (0 <= domain < problem.domains.num_domains):
        raise DomainIndexOutOfRange(
            f"domain {domain} outside [0, {problem.domains.num_domains})")
    bank = problem.domains.banks[domain]
    scores = backend.cosine_scores(bank, problem.true_prototypes[domain])
    pred = scores.argmax(axis=1)
    return float((pred == problem.labels[domain]).mean())
