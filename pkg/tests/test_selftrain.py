"""Pseudo-labeling, the masked CE loss, Adam, and the training loop."""

import math

import numpy as np
import pytest

from resadapt.classifier import ClassAnchorSet, batch_probs, predict_labels
from resadapt.errors import ConfigInvalid, DimMismatch, NoRetainedSamples
from resadapt.selftrain import (
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
from tests.conftest import make_anchor_set


def _axes_anchor_set():
    return ClassAnchorSet(["x", "y"], np.array([[1, 0], [0, 1]], np.float32),
                          ["px", "py"])


class TestTrainConfig:
    def test_defaults_match_declared_values(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 3e-4
        assert cfg.batch_size == 64
        assert cfg.gamma == 0.5
        assert cfg.tau == 0.01
        assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon) == (0.9, 0.999, 1e-8)

    @pytest.mark.parametrize("kwargs", [
        {"gamma": 1.1}, {"gamma": -0.1}, {"batch_size": 0}, {"epochs": -1},
        {"learning_rate": 0.0}, {"tau": 0.0}, {"adam_beta1": 1.0},
        {"adam_epsilon": 0.0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigInvalid):
            TrainConfig(**kwargs)


class TestGeneratePseudoLabels:
    def test_confident_sample_retained(self):
        # softmax((1,0)/tau) = (0.9, 0.1) at tau = 1/ln 9
        tau = 1.0 / math.log(9.0)
        f = np.array([[1, 0]], np.float32)
        ps = generate_pseudo_labels(f, _axes_anchor_set(), tau, 0.8)
        assert len(ps) == 1
        assert ps.labels[0] == 0
        assert ps.confidences[0] == pytest.approx(0.9, abs=1e-7)

    def test_low_confidence_filtered(self):
        # softmax((1,0)/tau) = (0.6, 0.4) at tau = 1/ln 1.5
        tau = 1.0 / math.log(1.5)
        f = np.array([[1, 0]], np.float32)
        ps = generate_pseudo_labels(f, _axes_anchor_set(), tau, 0.8)
        assert len(ps) == 0
        assert ps.total_candidates == 1

    def test_gamma_boundaries(self, rng):
        anchors = make_anchor_set(3, 6, rng)
        bank = rng.standard_normal((40, 6)).astype(np.float32)
        everything = generate_pseudo_labels(bank, anchors, 0.5, 0.0)
        assert len(everything) == everything.total_candidates == 40
        only_certain = generate_pseudo_labels(bank, anchors, 0.5, 1.0)
        assert np.all(only_certain.confidences >= 1.0)
        with pytest.raises(ConfigInvalid):
            generate_pseudo_labels(bank, anchors, 0.5, 1.0 + 1e-9)

    def test_retained_count_non_increasing_in_gamma(self, rng):
        anchors = make_anchor_set(4, 8, rng)
        bank = rng.standard_normal((64, 8)).astype(np.float32)
        counts = [len(generate_pseudo_labels(bank, anchors, 0.3, g))
                  for g in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert counts == sorted(counts, reverse=True)

    def test_every_confidence_at_least_gamma(self, rng):
        anchors = make_anchor_set(4, 8, rng)
        bank = rng.standard_normal((64, 8)).astype(np.float32)
        ps = generate_pseudo_labels(bank, anchors, 0.3, 0.6)
        assert np.all(ps.confidences >= 0.6)

    def test_invariant_under_arbitrary_positive_rescale(self, rng):
        anchors = make_anchor_set(4, 8, rng)
        bank = rng.standard_normal((50, 8)).astype(np.float32)
        scales = rng.uniform(0.2, 7.0, size=50).astype(np.float32)
        scaled = (bank * scales[:, None]).astype(np.float32)
        p1 = generate_pseudo_labels(bank, anchors, 0.2, 0.4)
        p2 = generate_pseudo_labels(scaled, anchors, 0.2, 0.4)
        assert np.array_equal(p1.sample_indices, p2.sample_indices)
        assert np.array_equal(p1.labels, p2.labels)

    def test_labels_are_argmax_of_base_anchors(self, rng):
        anchors = make_anchor_set(5, 10, rng)
        bank = rng.standard_normal((30, 10)).astype(np.float32)
        ps = generate_pseudo_labels(bank, anchors, 0.2, 0.0)
        expected = predict_labels(bank, anchors, 0.2)
        assert np.array_equal(ps.labels, expected)

    def test_invariant_violation_rejected(self):
        with pytest.raises(ConfigInvalid):
            PseudoLabelSet(np.array([0]), np.array([0]), np.array([0.4]),
                           gamma=0.5, total_candidates=3)


class TestAdaptedAnchors:
    def test_zero_residual_identity(self, rng):
        anchors = make_anchor_set(3, 5, rng)
        out = adapted_anchors(anchors, TaskResidual.zeros(3, 5))
        assert np.array_equal(out.anchors, anchors.anchors)
        assert out.class_names == anchors.class_names
        assert out.prompt_keys == anchors.prompt_keys

    def test_addition(self):
        anchors = _axes_anchor_set()
        res = TaskResidual(np.array([[0, 1], [1, 0]], np.float32))
        out = adapted_anchors(anchors, res)
        assert np.array_equal(out.anchors,
                              np.array([[1, 1], [1, 1]], np.float32))

    def test_round_trip_exact_float32(self, rng):
        # quantize to multiples of 1/64 so the float32 sums are exact and
        # the subtraction round-trip can hold bit for bit
        quant = (np.round(rng.standard_normal((4, 9)) * 64) / 64).astype(np.float32)
        quant[np.abs(quant).sum(axis=1) < 1e-6] = 1.0
        anchors = ClassAnchorSet([f"c{i}" for i in range(4)], quant,
                                 [f"p{i}" for i in range(4)])
        res = TaskResidual(
            (np.round(rng.standard_normal((4, 9)) * 64) / 64).astype(np.float32))
        out = adapted_anchors(anchors, res)
        assert np.array_equal(out.anchors - anchors.anchors, res.values)

    def test_shape_mismatch(self, rng):
        anchors = make_anchor_set(3, 5, rng)
        with pytest.raises(DimMismatch):
            adapted_anchors(anchors, TaskResidual.zeros(3, 6))


class TestSelfTrainingLoss:
    def test_half_probability_gives_ln2(self):
        # two identical anchor rows make the two-way probs exactly 0.5
        rows = np.array([[1, 0], [1, 0]], np.float32)
        anchors = ClassAnchorSet(["a", "b"], rows, ["pa", "pb"])
        bank = np.array([[0.3, 0.7]], np.float32)
        pseudo = PseudoLabelSet(np.array([0]), np.array([0]), np.array([0.5]),
                                gamma=0.5, total_candidates=1)
        loss = self_training_loss(bank, pseudo, anchors, TaskResidual.zeros(2, 2), 1.0)
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_empty_set_is_zero(self, rng):
        anchors = make_anchor_set(3, 4, rng)
        bank = rng.standard_normal((5, 4)).astype(np.float32)
        empty = PseudoLabelSet(np.zeros(0, np.int64), np.zeros(0, np.int64),
                               np.zeros(0), gamma=0.9, total_candidates=5)
        assert self_training_loss(bank, empty, anchors,
                                  TaskResidual.zeros(3, 4), 0.5) == 0.0

    def test_zero_residual_matches_zero_shot_exactly(self, rng):
        anchors = make_anchor_set(4, 12, rng)
        bank = rng.standard_normal((50, 12)).astype(np.float32)
        tau = 0.3
        ps = generate_pseudo_labels(bank, anchors, tau, 0.4)
        loss = self_training_loss(bank, ps, anchors, TaskResidual.zeros(4, 12), tau)
        oracle = float(np.mean(-np.log(ps.confidences)))
        assert loss == oracle

    def test_single_sample_composition(self, rng):
        anchors = make_anchor_set(3, 6, rng)
        bank = rng.standard_normal((1, 6)).astype(np.float32)
        tau = 0.7
        probs = batch_probs(bank, anchors, tau)[0]
        label = int(probs.argmax())
        pseudo = PseudoLabelSet(np.array([0]), np.array([label]),
                                np.array([probs[label]]), gamma=0.0,
                                total_candidates=1)
        loss = self_training_loss(bank, pseudo, anchors,
                                  TaskResidual.zeros(3, 6), tau)
        assert loss == pytest.approx(-math.log(probs[label]), abs=1e-12)


class TestLossGradient:
    def test_empty_set_zero_matrix(self, rng):
        anchors = make_anchor_set(3, 4, rng)
        bank = rng.standard_normal((5, 4)).astype(np.float32)
        empty = PseudoLabelSet(np.zeros(0, np.int64), np.zeros(0, np.int64),
                               np.zeros(0), gamma=0.9, total_candidates=5)
        g = loss_gradient(bank, empty, anchors, TaskResidual.zeros(3, 4), 0.5)
        assert g.shape == (3, 4)
        assert not g.any()

    def test_descent_direction(self):
        anchors = _axes_anchor_set()
        bank = np.array([[1, 0]], np.float32)
        pseudo = PseudoLabelSet(np.array([0]), np.array([0]), np.array([0.73]),
                                gamma=0.5, total_candidates=1)
        zero = TaskResidual.zeros(2, 2)
        g = loss_gradient(bank, pseudo, anchors, zero, 1.0)
        base = self_training_loss(bank, pseudo, anchors, zero, 1.0)
        for eps in (1e-2, 1e-3):
            stepped = TaskResidual((-eps * g).astype(np.float32))
            assert self_training_loss(bank, pseudo, anchors, stepped, 1.0) < base


class TestAdamStep:
    def test_zero_gradient_is_identity(self):
        res = TaskResidual(np.ones((2, 3), np.float32))
        state = OptimizerState.zeros(2, 3)
        out, new_state = adam_step(res, np.zeros((2, 3), np.float32), state,
                                   TrainConfig())
        assert np.array_equal(out.values, res.values)
        assert not new_state.first_moment.any()
        assert not new_state.second_moment.any()
        assert new_state.step_count == 1

    def test_first_step_magnitude(self, rng):
        cfg = TrainConfig(learning_rate=1e-3)
        g = rng.standard_normal((3, 4)).astype(np.float32)
        res = TaskResidual.zeros(3, 4)
        out, _ = adam_step(res, g, OptimizerState.zeros(3, 4), cfg)
        # bias-corrected first step is lr * g / (|g| + eps) = lr * sign(g)
        expected = -cfg.learning_rate * np.sign(g)
        assert np.allclose(out.values, expected, atol=1e-8)

    def test_momentum_accrues(self, rng):
        cfg = TrainConfig()
        g = rng.standard_normal((2, 2)).astype(np.float32)
        res = TaskResidual.zeros(2, 2)
        one, st1 = adam_step(res, g, OptimizerState.zeros(2, 2), cfg)
        two, st2 = adam_step(one, g, st1, cfg)
        assert st2.step_count == 2
        # two applications land elsewhere than one, and the moment tables
        # keep accruing state between calls
        assert not np.array_equal(two.values, one.values)
        assert not np.array_equal(st2.first_moment, st1.first_moment)

    def test_does_not_mutate_inputs(self, rng):
        cfg = TrainConfig()
        g = rng.standard_normal((2, 2)).astype(np.float32)
        g0 = g.copy()
        res = TaskResidual(rng.standard_normal((2, 2)).astype(np.float32))
        r0 = res.values.copy()
        state = OptimizerState.zeros(2, 2)
        adam_step(res, g, state, cfg)
        assert np.array_equal(g, g0)
        assert np.array_equal(res.values, r0)
        assert not state.first_moment.any()

    def test_shape_mismatch(self):
        with pytest.raises(DimMismatch):
            adam_step(TaskResidual.zeros(2, 2), np.zeros((2, 3), np.float32),
                      OptimizerState.zeros(2, 2), TrainConfig())


def _training_setup(seed, n=200, k=4, d=16, tau=0.2):
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((k, d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    labels = rng.integers(0, k, size=n)
    bank = (protos[labels] + 0.5 * rng.standard_normal((n, d))).astype(np.float32)
    anchor_rows = (protos + 0.4 * rng.standard_normal((k, d))).astype(np.float32)
    anchors = ClassAnchorSet([f"c{i}" for i in range(k)], anchor_rows,
                             [f"p{i}" for i in range(k)])
    return bank, anchors, tau


class TestTrainTaskResidual:
    def test_zero_epochs_is_zero_shot(self):
        bank, anchors, tau = _training_setup(0)
        cfg = TrainConfig(epochs=0, tau=tau, gamma=0.3)
        residual, log = train_task_residual(bank, anchors, cfg)
        assert not residual.values.any()
        assert log == []
        before = batch_probs(bank, anchors, tau)
        after = batch_probs(bank, adapted_anchors(anchors, residual), tau)
        assert np.array_equal(before, after)

    def test_seeded_rerun_bit_identical(self):
        bank, anchors, tau = _training_setup(1)
        cfg = TrainConfig(epochs=3, tau=tau, gamma=0.3, batch_size=32, seed=11)
        r1, log1 = train_task_residual(bank, anchors, cfg)
        r2, log2 = train_task_residual(bank, anchors, cfg)
        assert np.array_equal(r1.values, r2.values)
        assert log1 == log2

    def test_loss_improves_on_synthetic_instance(self):
        from resadapt.synth import SynthConfig, generate

        prob = generate(SynthConfig(seed=7))
        cfg = TrainConfig(epochs=5, seed=7, tau=0.1, gamma=0.5)
        _, log = train_task_residual(prob.domains.banks[0], prob.anchors, cfg)
        assert log[-1]["mean_loss"] < log[0]["mean_loss"]

    def test_no_retained_samples(self):
        bank, anchors, tau = _training_setup(2)
        cfg = TrainConfig(epochs=1, tau=5.0, gamma=1.0)  # flat probs, gamma 1
        with pytest.raises(NoRetainedSamples) as err:
            train_task_residual(bank, anchors, cfg)
        assert err.value.gamma == 1.0
        assert err.value.max_confidence is not None
        assert err.value.max_confidence < 1.0
        assert "max observed confidence" in str(err.value)

    def test_empty_bank(self):
        _, anchors, tau = _training_setup(3)
        with pytest.raises(NoRetainedSamples):
            train_task_residual(np.zeros((0, 16), np.float32), anchors,
                                TrainConfig(epochs=1, tau=tau))

    def test_refresh_flag_runs_and_is_deterministic(self):
        bank, anchors, tau = _training_setup(4)
        cfg = TrainConfig(epochs=4, tau=tau, gamma=0.3, batch_size=32, seed=5,
                          refresh_pseudo_labels_each_epoch=True)
        r1, log1 = train_task_residual(bank, anchors, cfg)
        r2, log2 = train_task_residual(bank, anchors, cfg)
        assert np.array_equal(r1.values, r2.values)
        assert log1 == log2
        assert len(log1) == 4

    def test_label_invariance_under_power_of_two_rescaling(self):
        # powers of two rescale float32 exactly, so the whole training
        # trajectory must reproduce bit for bit
        bank, anchors, tau = _training_setup(5)
        cfg = TrainConfig(epochs=2, tau=tau, gamma=0.3, batch_size=32, seed=3)
        r1, _ = train_task_residual(bank, anchors, cfg)
        scales = np.choose(np.arange(len(bank)) % 3,
                           [0.5, 2.0, 4.0]).astype(np.float32)
        scaled = (bank * scales[:, None]).astype(np.float32)
        r2, _ = train_task_residual(scaled, anchors, cfg)
        assert np.array_equal(r1.values, r2.values)
        l1 = predict_labels(bank, adapted_anchors(anchors, r1), tau)
        l2 = predict_labels(scaled, adapted_anchors(anchors, r2), tau)
        assert np.array_equal(l1, l2)


class TestAdamStepNonIncrease:
    def test_small_lr_step_does_not_increase_loss(self):
        # smooth instances: tau = 1, lr 1e-4, over 20 seeds
        worst = -np.inf
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            k = int(rng.integers(2, 5))
            d = int(rng.integers(3, 12))
            n = int(rng.integers(6, 30))
            bank = rng.standard_normal((n, d)).astype(np.float32)
            anchors = make_anchor_set(k, d, rng)
            ps = generate_pseudo_labels(bank, anchors, 1.0, 0.0)
            res = TaskResidual((0.05 * rng.standard_normal((k, d))).astype(np.float32))
            cfg = TrainConfig(learning_rate=1e-4, tau=1.0)
            before = self_training_loss(bank, ps, anchors, res, 1.0)
            g = loss_gradient(bank, ps, anchors, res, 1.0)
            stepped, _ = adam_step(res, g, OptimizerState.zeros(k, d), cfg)
            after = self_training_loss(bank, ps, anchors, stepped, 1.0)
            worst = max(worst, after - before)
        assert worst < 1e-7
