"""Zero-shot classification over prompt-keyed class anchors.

The classifier is a bank of text-anchor embeddings, one per class; an
image embedding is scored by cosine similarity against each anchor and
the scores pass through a temperature softmax.  A "domain prior" run is
nothing special at this layer: it just loads an anchor set whose prompts
carried a domain description.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .core import NORM_EPS, as_matrix, as_vec, check_tau
from .errors import (
    DegenerateVector,
    DimMismatch,
    EmptyEvaluation,
    LengthMismatch,
    MalformedTemplate,
    ManifestInvalid,
)

CLASS_PLACEHOLDER = "{class}"
DOMAIN_PLACEHOLDER = "{domain}"


def render_prompt(template: str, class_name: str,
                  domain_description: str | None = None) -> str:
    """Render a prompt template into the key text for one class.

    "{class}" must occur exactly once.  "{domain}" is substituted when a
    domain description is given; without one, the placeholder and one
    adjacent space are removed, so "a {domain} photo of a {class}"
    degrades to "a photo of a {class}".  Deterministic: same inputs,
    byte-identical output.
    """
    if template.count(CLASS_PLACEHOLDER) != 1:
        raise MalformedTemplate(
            f"template must contain {CLASS_PLACEHOLDER!r} exactly once: {template!r}"
        )
    if domain_description is not None:
        out = template.replace(DOMAIN_PLACEHOLDER, domain_description)
    else:
        out = template.replace(" " + DOMAIN_PLACEHOLDER, "")
        out = out.replace(DOMAIN_PLACEHOLDER + " ", "")
        out = out.replace(DOMAIN_PLACEHOLDER, "")
    return out.replace(CLASS_PLACEHOLDER, class_name)


@dataclass(frozen=True)
class PromptKey:
    """One class's prompt: template plus the substitutions."""

    template: str
    class_name: str
    domain_description: str | None = None

    def render(self) -> str:
        return render_prompt(self.template, self.class_name, self.domain_description)


class ClassAnchorSet:
    """Ordered class names with their anchor embeddings and rendered prompts.

    Args:
        class_names: K unique names, K >= 2.
        anchors: (K, D) float32 anchor matrix.
        prompt_keys: the K rendered prompt texts that produced the anchors.
        check_norms: reject degenerate rows now.  Residual-adapted sets are
            built with check_norms=False; degeneracy then surfaces at use,
            inside the scoring kernels.
    """

    def __init__(self, class_names, anchors, prompt_keys, *, check_norms=True):
        self.class_names = [str(c) for c in class_names]
        self.anchors = as_matrix(anchors)
        self.prompt_keys = [str(p) for p in prompt_keys]
        k = len(self.class_names)
        if k < 2:
            raise ManifestInvalid(f"need at least 2 classes, got {k}")
        if len(set(self.class_names)) != k:
            raise ManifestInvalid("class names must be unique")
        if self.anchors.shape[0] != k:
            raise DimMismatch(
                f"{k} class names but {self.anchors.shape[0]} anchor rows"
            )
        if len(self.prompt_keys) != k:
            raise DimMismatch(f"{k} class names but {len(self.prompt_keys)} prompt keys")
        if check_norms:
            a64 = self.anchors.astype(np.float64)
            norms = np.sqrt(np.einsum("kd,kd->k", a64, a64))
            if norms.min() <= NORM_EPS:
                bad = int(norms.argmin())
                raise DegenerateVector(
                    f"anchor row {bad} ({self.class_names[bad]!r}) has norm <= 1e-12"
                )

    @classmethod
    def from_prompts(cls, class_names, anchors, template,
                     domain_description=None, **kwargs):
        keys = [render_prompt(template, c, domain_description) for c in class_names]
        return cls(class_names, anchors, keys, **kwargs)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return int(self.anchors.shape[1])

    def with_anchors(self, anchors, *, check_norms=False) -> "ClassAnchorSet":
        """Copy of this set with replaced anchor rows (names/keys preserved)."""
        return ClassAnchorSet(self.class_names, anchors, self.prompt_keys,
                              check_norms=check_norms)


@dataclass(frozen=True, eq=False)
class Prediction:
    """Per-sample output: full distribution, argmax label, its probability."""

    probs: np.ndarray
    label: int
    confidence: float


def batch_probs(bank, anchors: ClassAnchorSet, tau) -> np.ndarray:
    """(N, K) float64 class probabilities for every row of the bank."""
    t = check_tau(tau)
    m = as_matrix(bank, dim=anchors.dim)
    scores = backend.cosine_scores(m, anchors.anchors)
    return backend.softmax_rows(scores, t)


def classify_batch(bank, anchors: ClassAnchorSet, tau) -> list[Prediction]:
    """Classify every bank row.  Ties break to the lowest class index."""
    probs = batch_probs(bank, anchors, tau)
    out = []
    for row in probs:
        label = int(np.argmax(row))
        out.append(Prediction(probs=row, label=label, confidence=float(row[label])))
    return out


def classify(f, anchors: ClassAnchorSet, tau) -> Prediction:
    """Classify a single embedding (same code path as classify_batch)."""
    v = as_vec(f)
    return classify_batch(v.reshape(1, -1), anchors, tau)[0]


def predict_labels(bank, anchors: ClassAnchorSet, tau) -> np.ndarray:
    """Argmax labels only, as an (N,) int64 array."""
    probs = batch_probs(bank, anchors, tau)
    if probs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return probs.argmax(axis=1).astype(np.int64)


def accuracy(predictions, labels) -> float:
    """Fraction of predictions whose label matches.

    Accepts Prediction objects or plain label integers.
    """
    preds = [int(getattr(p, "label", p)) for p in predictions]
    labs = [int(l) for l in labels]
    if len(preds) != len(labs):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labs)} labels")
    if not preds:
        raise EmptyEvaluation("cannot score an empty prediction set")
    hits = sum(1 for p, l in zip(preds, labs) if p == l)
    return hits / len(preds)
