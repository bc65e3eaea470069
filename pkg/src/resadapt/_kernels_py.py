"""Pure-numpy kernels: cosine score matrix, row softmax, masked-CE loss and
its gradient with respect to the class anchors.

Semantics mirror the compiled extension.  Banks arrive as float32 storage;
anchor tables are coerced to float64 (exact for float32 storage) so the
residual-adapted sum t + r can be formed at full precision by callers.
Per-row results never depend on batch size: einsum keeps each output
element's accumulation order fixed, so a one-row call is bit-identical to
the matching row of a full-batch call.  Reductions across samples use
numpy's pairwise summation; the compiled backend sums sequentially.  Both
are deterministic, they just differ in the last ulp from each other.
"""

import numpy as np

from .core import NORM_EPS
from .errors import DegenerateVector, DimMismatch

NAME = "numpy"


def _row_norms(m64: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("nd,nd->n", m64, m64))


def _checked_inputs(bank, anchors):
    x = np.asarray(bank, dtype=np.float32).astype(np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    if x.shape[1] != a.shape[1]:
        raise DimMismatch(f"bank dim {x.shape[1]} != anchor dim {a.shape[1]}")
    na = _row_norms(a)
    if a.shape[0] and na.min() <= NORM_EPS:
        raise DegenerateVector("anchor row with norm <= 1e-12")
    nx = _row_norms(x)
    if x.shape[0] and nx.min() <= NORM_EPS:
        raise DegenerateVector("embedding row with norm <= 1e-12")
    return x, a, nx, na


def cosine_scores(bank: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Cosine similarity of every bank row against every anchor row.

    Args:
        bank: (N, D) float32 storage.
        anchors: (K, D), float32 storage or a float64 adapted table.

    Returns:
        (N, K) float64 cosine matrix.
    """
    x, a, nx, na = _checked_inputs(bank, anchors)
    dots = np.einsum("nd,kd->nk", x, a)
    return dots / (nx[:, None] * na[None, :])


def softmax_rows(scores: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax along axis 1 with max-subtraction (float64)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[0] == 0:
        return np.zeros_like(s)
    z = (s - s.max(axis=1, keepdims=True)) / tau
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def ce_loss_grad(bank, labels, anchors, tau, want_grad=True):
    """Per-sample negative log-likelihood and the anchor gradient.

    The probabilities go through exactly the same arithmetic as
    cosine_scores + softmax_rows, so a zero residual reproduces zero-shot
    outputs bit for bit.

    Args:
        bank: (B, D) float32 sample embeddings.
        labels: (B,) int64 target class per sample.
        anchors: (K, D) float64 residual-adapted class anchors.
        tau: softmax temperature.
        want_grad: skip the gradient when False.

    Returns:
        (nll, grad): nll is (B,) float64 of -log p(label); grad is
        (K, D) float64, d(mean nll)/d(anchors), or None if not requested.
    """
    B = bank.shape[0]
    K = anchors.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != B:
        raise DimMismatch(f"{B} samples but {labels.shape[0]} labels")
    if B and (labels.min() < 0 or labels.max() >= K):
        raise DimMismatch(f"label outside [0, {K})")
    if B == 0:
        grad = np.zeros((K, anchors.shape[1]), dtype=np.float64) if want_grad else None
        return np.zeros(0, dtype=np.float64), grad

    x, a, nx, na = _checked_inputs(bank, anchors)
    s = np.einsum("nd,kd->nk", x, a) / (nx[:, None] * na[None, :])
    p = softmax_rows(s, tau)
    rows = np.arange(B)
    nll = -np.log(p[rows, labels])
    if not want_grad:
        return nll, None

    xhat = x / nx[:, None]
    ahat = a / na[:, None]
    # d(mean nll)/d(score[n, k]) = (p - onehot) / (B * tau); the score is
    # cos(f_n, a_k), whose derivative in a_k is (xhat_n - s a_khat) / |a_k|.
    g = p.copy()
    g[rows, labels] -= 1.0
    g /= B * tau
    w = np.einsum("nk,nd->kd", g, xhat)
    c = np.einsum("nk,nk->k", g, s)
    grad = (w - c[:, None] * ahat) / na[:, None]
    return nll, grad
