"""Analytic gradient vs finite differences.

The oracle here is written in this file, independent of the package's own
gradcheck module: a direct float64 statement of the objective and a
fourth-order central stencil around it.
"""

import os

import numpy as np
import pytest

from resadapt.classifier import ClassAnchorSet
from resadapt.errors import GradientMismatch
from resadapt.gradcheck import run_gradcheck
from resadapt.selftrain import (
    PseudoLabelSet,
    TaskResidual,
    generate_pseudo_labels,
    loss_gradient,
    self_training_loss,
)


def oracle_loss(bank, pseudo, anchors, residual_values64, tau):
    """Independent float64 restatement of the self-training objective."""
    a = anchors.anchors.astype(np.float64) + residual_values64
    x = np.asarray(bank, dtype=np.float64)[pseudo.sample_indices]
    sims = np.zeros((x.shape[0], a.shape[0]))
    for i in range(x.shape[0]):
        for k in range(a.shape[0]):
            sims[i, k] = np.dot(x[i], a[k]) / (
                np.linalg.norm(x[i]) * np.linalg.norm(a[k]))
    z = np.exp((sims - sims.max(axis=1, keepdims=True)) / tau)
    probs = z / z.sum(axis=1, keepdims=True)
    picked = probs[np.arange(x.shape[0]), pseudo.labels]
    return float(np.mean(-np.log(picked)))


def oracle_fd(bank, pseudo, anchors, residual, tau, step=1e-3):
    """Fourth-order central differences of oracle_loss, float64 shadow."""
    r0 = residual.values.astype(np.float64)
    out = np.zeros_like(r0)
    for k in range(r0.shape[0]):
        for d in range(r0.shape[1]):
            vals = []
            for off in (2 * step, step, -step, -2 * step):
                r = r0.copy()
                r[k, d] += off
                vals.append(oracle_loss(bank, pseudo, anchors, r, tau))
            out[k, d] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * step)
    return out


def _instance(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    d = int(rng.integers(2, 17))
    n = int(rng.integers(4, 33))
    bank = rng.standard_normal((n, d)).astype(np.float32)
    rows = rng.standard_normal((k, d)).astype(np.float32)
    anchors = ClassAnchorSet([f"c{i}" for i in range(k)], rows,
                             [f"p{i}" for i in range(k)])
    tau = float(rng.uniform(0.2, 1.0))
    pseudo = generate_pseudo_labels(bank, anchors, tau, 0.25)
    if len(pseudo) == 0:
        pseudo = generate_pseudo_labels(bank, anchors, tau, 0.0)
    residual = TaskResidual((0.1 * rng.standard_normal((k, d))).astype(np.float32))
    return bank, pseudo, anchors, residual, tau


def test_loss_matches_oracle():
    bank, pseudo, anchors, residual, tau = _instance(3)
    ours = self_training_loss(bank, pseudo, anchors, residual, tau)
    theirs = oracle_loss(bank, pseudo, anchors,
                         residual.values.astype(np.float64), tau)
    assert ours == pytest.approx(theirs, rel=1e-12)


def test_gradient_matches_fd_on_seeded_instance():
    bank, pseudo, anchors, residual, tau = _instance(42)
    analytic = loss_gradient(bank, pseudo, anchors, residual, tau).astype(np.float64)
    fd = oracle_fd(bank, pseudo, anchors, residual, tau)
    mask = np.abs(fd) > 1e-8
    rel = np.abs(analytic[mask] - fd[mask]) / np.abs(fd[mask])
    assert rel.max() < 1e-4


def test_two_class_hand_case():
    # one sample on anchor 0, pseudo-label 0: pushing anchor 0 toward the
    # sample and anchor 1 away must both appear in the gradient sign
    anchors = ClassAnchorSet(["x", "y"], np.array([[1, 0], [0, 1]], np.float32),
                             ["px", "py"])
    bank = np.array([[1, 0]], np.float32)
    pseudo = PseudoLabelSet(np.array([0]), np.array([0]), np.array([0.7]),
                            gamma=0.5, total_candidates=1)
    g = loss_gradient(bank, pseudo, anchors, TaskResidual.zeros(2, 2), 1.0)
    # anchor 0 sits exactly on the sample: cosine there is at its maximum,
    # so the label-anchor gradient vanishes along feasible directions and
    # the off-class anchor is pushed away from the sample along +x
    assert g[1, 0] > 0
    fd = oracle_fd(bank, pseudo, anchors, TaskResidual.zeros(2, 2), 1.0)
    mask = np.abs(fd) > 1e-8
    rel = np.abs(g.astype(np.float64)[mask] - fd[mask]) / np.abs(fd[mask])
    assert rel.max() < 1e-4


def test_package_gradcheck_passes():
    report = run_gradcheck(instances=5, seed=100)
    assert report["passed"]
    assert report["max_rel_err"] < 1e-4
    assert len(report["instances"]) == 5


def test_package_gradcheck_negative_control(monkeypatch):
    monkeypatch.setenv("RESADAPT_GRADCHECK_FLIP_SIGN", "1")
    with pytest.raises(GradientMismatch) as err:
        run_gradcheck(instances=2, seed=0)
    assert err.value.worst is not None
    assert "relative error" in str(err.value)
