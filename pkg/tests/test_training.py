"""
Unit tests for SGD training, evaluation and the prune/fine-tune baseline.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from geoward.analysis.damage import node_deletion_plan
from geoward.analysis.paths import stepwise_deletion_path, trace_path
from geoward.core.exceptions import InvalidInputError, NumericalFailureError
from geoward.model.dataset import Dataset, split, synth_gaussians
from geoward.model.network import NetworkSpec, init_weights
from geoward.model.training import TrainConfig, evaluate, fine_tune_recovery, train


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 200 and cfg.loss == "cross_entropy"

    def test_rejects_zero_epochs(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)

    def test_rejects_negative_rate(self):
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=-0.1)


class TestTrain:
    """SGD behaviour."""

    def test_learns_separated_blobs(self, trained_desk):
        spec, w, d = trained_desk
        _, accuracy = evaluate(spec, w, d)
        assert accuracy >= 0.95

    def test_zero_learning_rate_keeps_weights(self, blobs):
        spec = NetworkSpec(layer_sizes=(2, 4, 3))
        init = init_weights(spec, seed=9)
        w, log = train(spec, blobs, TrainConfig(epochs=2, learning_rate=0.0), init=init)
        assert np.array_equal(w.values, init.values)
        assert len(log.records) == 2

    def test_same_seed_same_weights(self, blobs):
        spec = NetworkSpec(layer_sizes=(2, 4, 3))
        cfg = TrainConfig(epochs=3, seed=4)
        first, _ = train(spec, blobs, cfg)
        second, _ = train(spec, blobs, cfg)
        assert np.array_equal(first.values, second.values)

    def test_mse_loss_decreases(self, blobs):
        spec = NetworkSpec(layer_sizes=(2, 6, 3))
        _, log = train(spec, blobs, TrainConfig(epochs=30, learning_rate=0.5, loss="mse", seed=1))
        assert log.records[-1].loss < log.records[0].loss

    def test_frozen_coordinates_untouched(self, blobs):
        spec = NetworkSpec(layer_sizes=(2, 4, 3))
        init = init_weights(spec, seed=2)
        frozen = np.zeros(spec.n_params, dtype=bool)
        frozen[:5] = True
        w, _ = train(spec, blobs, TrainConfig(epochs=2, learning_rate=0.3), init=init, frozen=frozen)
        assert np.array_equal(w.values[:5], init.values[:5])
        assert not np.array_equal(w.values[5:], init.values[5:])

    def test_divergence_reports_epoch(self, blobs):
        spec = NetworkSpec(layer_sizes=(2, 4, 3), output_mode="identity")
        with pytest.raises(NumericalFailureError) as exc_info:
            train(spec, blobs, TrainConfig(epochs=50, learning_rate=1e6, loss="mse"))
        assert exc_info.value.details["epoch"] >= 1

    def test_dimension_mismatch(self, blobs):
        with pytest.raises(InvalidInputError):
            train(NetworkSpec(layer_sizes=(3, 4, 3)), blobs, TrainConfig(epochs=1))


class TestEvaluate:
    """Accuracy accounting and the tie rule."""

    def test_uniform_output_scores_chance(self):
        spec = NetworkSpec(layer_sizes=(2, 3))
        d = Dataset(inputs=np.ones((6, 2)), labels=np.array([0, 1, 2, 0, 1, 2]), name="balanced")
        _, accuracy = evaluate(spec, np.zeros(spec.n_params), d)
        assert accuracy == pytest.approx(1 / 3)

    def test_hand_counted_accuracy(self):
        spec = NetworkSpec(layer_sizes=(1, 2), output_mode="identity")
        # f(x) = (x, -x): predicts class 0 for x > 0, class 1 for x < 0
        values = np.array([1.0, -1.0, 0.0, 0.0])
        inputs = np.array([[1.0], [2.0], [-1.0], [-3.0], [0.5], [-0.5], [4.0], [-2.0], [1.5], [-1.5]])
        labels = np.array([0, 1, 1, 1, 0, 0, 0, 1, 1, 1])
        _, accuracy = evaluate(spec, values, Dataset(inputs=inputs, labels=labels, name="hand"))
        assert accuracy == 0.7

    def test_pure_function(self, trained_desk):
        spec, w, d = trained_desk
        assert evaluate(spec, w, d) == evaluate(spec, w, d)


class TestFineTuneRecovery:
    """Iterative prune/retrain baseline."""

    def test_zero_epochs_matches_stepwise_deletion(self, trained_desk):
        spec, w, d = trained_desk
        plan = node_deletion_plan(spec, 1, [0, 1, 2])
        ft = fine_tune_recovery(spec, w, plan, plan.node_groups(), 0, TrainConfig(epochs=1), d)
        stepwise = trace_path(spec, d, d, stepwise_deletion_path(w, plan), kind="stepwise_deletion")
        assert np.array_equal(ft.accuracies, stepwise.accuracies)
        assert [s.work for s in ft.samples] == [0.0, 0.0, 0.0, 0.0]

    def test_damaged_coordinates_stay_zero(self, trained_desk):
        spec, w, d = trained_desk
        plan = node_deletion_plan(spec, 1, [0, 1])
        ft = fine_tune_recovery(spec, w, plan, plan.node_groups(), 2, TrainConfig(epochs=1, learning_rate=0.1), d)
        assert np.all(ft.final.w.values[list(plan.indices)] == 0.0)
        assert ft.final.work == 4.0

    def test_all_hidden_nodes_gives_chance(self):
        spec = NetworkSpec(layer_sizes=(2, 3, 3))
        d = Dataset(inputs=np.ones((6, 2)), labels=np.array([0, 1, 2, 0, 1, 2]), name="balanced")
        w = init_weights(spec, seed=0)
        plan = node_deletion_plan(spec, 1, range(3))
        ft = fine_tune_recovery(spec, w, plan, plan.node_groups(), 0, TrainConfig(epochs=1), d)
        # output biases are 0 after init, so every class ties
        assert ft.final.accuracy == pytest.approx(1 / 3)

    def test_order_must_cover_plan(self, trained_desk):
        spec, w, d = trained_desk
        plan = node_deletion_plan(spec, 1, [0, 1])
        with pytest.raises(InvalidInputError):
            fine_tune_recovery(spec, w, plan, plan.node_groups()[:1], 0, TrainConfig(epochs=1), d)

    @pytest.mark.slow
    def test_retraining_beats_plain_pruning(self):
        d = synth_gaussians(classes=10, dim=20, per_class=60, separation=4.0, seed=0)
        train_set, test_set = split(d, 400, seed=0)
        spec = NetworkSpec(layer_sizes=(20, 16, 10))
        w, _ = train(spec, train_set, TrainConfig(epochs=60, batch_size=32, learning_rate=0.1, seed=0))
        plan = node_deletion_plan(spec, 1, range(8))
        ft_cfg = TrainConfig(epochs=1, batch_size=32, learning_rate=0.1, seed=1)
        pruned = fine_tune_recovery(spec, w, plan, plan.node_groups(), 0, ft_cfg, train_set, eval_set=test_set)
        retrained = fine_tune_recovery(spec, w, plan, plan.node_groups(), 2, ft_cfg, train_set, eval_set=test_set)
        assert retrained.final.work == 16.0
        assert retrained.mean_accuracy > pruned.mean_accuracy
