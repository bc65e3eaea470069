"""Finite-difference verification of the analytic residual gradient.

The reference loss here is a deliberately plain float64 re-statement of
the objective (cosine scores of samples against residual-shifted anchors,
temperature softmax, mean NLL of the pseudo-labels); it shares no code
with the kernels it checks.  Central differences on that shadow loss are
compared coordinate-by-coordinate against loss_gradient.
"""

import os

import numpy as np

from .classifier import ClassAnchorSet
from .errors import GradientMismatch
from .selftrain import PseudoLabelSet, TaskResidual, generate_pseudo_labels, loss_gradient

# Test-harness hook: set RESADAPT_GRADCHECK_FLIP_SIGN to negate the
# analytic gradient before comparison (negative control for the suite).
_FLIP_ENV = "RESADAPT_GRADCHECK_FLIP_SIGN"


def shadow_loss(bank64, indices, labels, anchors64, residual64, tau) -> float:
    """Float64 reference of the self-training loss.  No kernel reuse."""
    a = anchors64 + residual64
    an = np.linalg.norm(a, axis=1)
    x = bank64[indices]
    xn = np.linalg.norm(x, axis=1)
    scores = (x @ a.T) / (xn[:, None] * an[None, :])
    z = (scores - scores.max(axis=1, keepdims=True)) / tau
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    picked = p[np.arange(len(indices)), labels]
    return float(-np.log(picked).mean())


def fd_gradient(bank, pseudo: PseudoLabelSet, anchors: ClassAnchorSet,
                residual: TaskResidual, tau, step=1e-3) -> np.ndarray:
    """Central finite differences of the shadow loss on float64 copies.

    Fourth-order central stencil: at step 1e-3 the plain two-point stencil
    leaves O(step^2) truncation above the 1e-4 relative tolerance on
    small-magnitude coordinates, which would flag correct gradients.
    """
    bank64 = np.asarray(bank, dtype=np.float64)
    anchors64 = anchors.anchors.astype(np.float64)
    r0 = residual.values.astype(np.float64)
    idx = pseudo.sample_indices
    labs = pseudo.labels

    def at(r):
        return shadow_loss(bank64, idx, labs, anchors64, r, tau)

    out = np.zeros_like(r0)
    for k in range(r0.shape[0]):
        for d in range(r0.shape[1]):
            r = r0.copy()
            vals = []
            for off in (2 * step, step, -step, -2 * step):
                r[k, d] = r0[k, d] + off
                vals.append(at(r))
            out[k, d] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * step)
    return out


def random_instance(seed: int, max_classes=5, max_dim=16, max_samples=32,
                    gamma=0.25):
    """One seeded problem: bank, pseudo-labels, anchors, residual, tau."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, max_classes + 1))
    d = int(rng.integers(2, max_dim + 1))
    n = int(rng.integers(4, max_samples + 1))
    bank = rng.standard_normal((n, d)).astype(np.float32)
    anchor_rows = rng.standard_normal((k, d)).astype(np.float32)
    tau = float(rng.uniform(0.2, 1.0))
    anchors = ClassAnchorSet([f"c{i}" for i in range(k)], anchor_rows,
                             [f"prompt {i}" for i in range(k)])
    pseudo = generate_pseudo_labels(bank, anchors, tau, gamma)
    if len(pseudo) == 0:
        pseudo = generate_pseudo_labels(bank, anchors, tau, 0.0)
    residual = TaskResidual((0.1 * rng.standard_normal((k, d))).astype(np.float32))
    return bank, pseudo, anchors, residual, tau


def run_gradcheck(instances=20, seed=0, max_classes=5, max_dim=16,
                  max_samples=32, step=1e-3, tolerance=1e-4,
                  fd_floor=1e-8) -> dict:
    """Compare analytic vs finite-difference gradients over seeded instances.

    Returns a report dict; raises GradientMismatch (carrying the worst
    coordinate) if any checked coordinate exceeds the tolerance.
    Coordinates with |FD| <= fd_floor are skipped.
    """
    flip = bool(os.environ.get(_FLIP_ENV))
    worst = {"rel_err": 0.0}
    results = []
    for i in range(instances):
        bank, pseudo, anchors, residual, tau = random_instance(
            seed + i, max_classes, max_dim, max_samples)
        analytic = loss_gradient(bank, pseudo, anchors, residual, tau).astype(np.float64)
        if flip:
            analytic = -analytic
        fd = fd_gradient(bank, pseudo, anchors, residual, tau, step)
        mask = np.abs(fd) > fd_floor
        rel = np.zeros_like(fd)
        rel[mask] = np.abs(analytic[mask] - fd[mask]) / np.abs(fd[mask])
        max_rel = float(rel.max()) if mask.any() else 0.0
        results.append({
            "instance": i,
            "seed": seed + i,
            "classes": anchors.num_classes,
            "dim": anchors.dim,
            "retained": len(pseudo),
            "tau": tau,
            "checked_coords": int(mask.sum()),
            "max_rel_err": max_rel,
        })
        if max_rel > worst["rel_err"]:
            k, d = np.unravel_index(int(rel.argmax()), rel.shape)
            worst = {
                "rel_err": max_rel,
                "instance": i,
                "coordinate": [int(k), int(d)],
                "analytic": float(analytic[k, d]),
                "fd": float(fd[k, d]),
            }
    report = {
        "instances": results,
        "tolerance": tolerance,
        "step": step,
        "max_rel_err": worst["rel_err"],
        "worst": worst,
        "passed": worst["rel_err"] <= tolerance,
    }
    if not report["passed"]:
        raise GradientMismatch(
            f"gradient check failed: instance {worst['instance']}, coordinate "
            f"{tuple(worst['coordinate'])}, analytic {worst['analytic']:.9g} vs "
            f"finite-difference {worst['fd']:.9g} "
            f"(relative error {worst['rel_err']:.3g} > {tolerance:g})",
            worst=worst,
        )
    return report
