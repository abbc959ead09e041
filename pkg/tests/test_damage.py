"""
Unit tests for damage plans and perturbation constructors.
"""

import numpy as np
import pytest

from geoward.analysis.damage import (
    Perturbation,
    adversarial_from_factor,
    adversarial_perturbation,
    deletion_sweep,
    functional_distance,
    node_deletion_plan,
    plan_from_shorthand,
    random_ball_perturbation,
    union_plans,
    worst_sign_accuracy,
)
from geoward.analysis.metric import assemble_metric, factor_from_matrix, metric_factor, quadratic_form, spectrum
from geoward.core.exceptions import DegenerateInputError, FormatError, InvalidInputError
from geoward.formats.damage_plan import DamagePlan
from geoward.model.network import NetworkSpec
from geoward.model.training import evaluate


class TestDamagePlan:
    """Plan validation and persistence."""

    def test_from_indices_sorts_and_dedupes(self):
        plan = DamagePlan.from_indices([5, 1, 5, 3])
        assert plan.indices == (1, 3, 5)
        assert len(plan) == 3

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            DamagePlan(indices=(3, 1))

    def test_empty_plan(self):
        plan = DamagePlan()
        assert plan.is_empty and plan.node_groups() == ()

    def test_bounds(self):
        with pytest.raises(InvalidInputError):
            DamagePlan.from_indices([10]).check_bounds(10)

    def test_save_and_load(self, tmp_path, tiny_spec):
        plan = node_deletion_plan(tiny_spec, 1, [0, 2])
        plan.save(tmp_path / "plan.json")
        assert DamagePlan.load(tmp_path / "plan.json") == plan

    def test_load_garbage(self, tmp_path):
        (tmp_path / "plan.json").write_text("{not json")
        with pytest.raises(FormatError):
            DamagePlan.load(tmp_path / "plan.json")


class TestNodeDeletion:
    """Hidden-unit index groups."""

    def test_single_node_indices(self, tiny_spec):
        plan = node_deletion_plan(tiny_spec, 1, [1])
        layout = tiny_spec.layout
        expected = {
            layout.weight_index(0, 1, 0), layout.weight_index(0, 1, 1), layout.bias_index(0, 1),
            layout.weight_index(1, 0, 1), layout.weight_index(1, 1, 1), layout.weight_index(1, 2, 1),
        }
        assert set(plan.indices) == expected
        assert plan.description == "layer1 nodes 1"

    def test_groups_follow_node_order(self, tiny_spec):
        plan = node_deletion_plan(tiny_spec, 1, [3, 0])
        assert len(plan.groups) == 2
        assert tiny_spec.layout.bias_index(0, 3) in plan.groups[0]

    def test_rejects_output_layer(self, tiny_spec):
        with pytest.raises(InvalidInputError):
            node_deletion_plan(tiny_spec, 2, [0])

    def test_rejects_out_of_range_node(self, tiny_spec):
        with pytest.raises(InvalidInputError):
            node_deletion_plan(tiny_spec, 1, [4])

    def test_shorthand_range(self, tiny_spec):
        assert plan_from_shorthand(tiny_spec, "1:0-2") == node_deletion_plan(tiny_spec, 1, [0, 1, 2])

    def test_shorthand_two_layers(self):
        spec = NetworkSpec(layer_sizes=(2, 3, 3, 2))
        plan = plan_from_shorthand(spec, "1:0;2:1-2")
        expected = union_plans(node_deletion_plan(spec, 1, [0]), node_deletion_plan(spec, 2, [1, 2]))
        assert plan.indices == expected.indices
        assert len(plan.node_groups()) == 3

    def test_shorthand_garbage(self, tiny_spec):
        with pytest.raises(InvalidInputError):
            plan_from_shorthand(tiny_spec, "hidden:all")


class TestPerturbations:
    """Random and adversarial displacements."""

    def test_random_ball_norm(self):
        p = random_ball_perturbation(50, 0.3, seed=2)
        assert np.linalg.norm(p.du) == pytest.approx(0.3)
        assert p.kind == "random_ball"

    def test_random_ball_seeded(self):
        assert np.array_equal(random_ball_perturbation(10, 1.0, 4).du, random_ball_perturbation(10, 1.0, 4).du)

    def test_adversarial_maximises_rayleigh_quotient(self, trained_desk):
        spec, w, d = trained_desk
        gt = assemble_metric(spec, w, d)
        s = spectrum(gt)
        p = adversarial_perturbation(s, 0.1)
        assert quadratic_form(gt, p.du) == pytest.approx(0.01 * s.lambda_1, rel=1e-9)
        for seed in range(5):
            r = random_ball_perturbation(spec.n_params, 0.1, seed)
            assert quadratic_form(gt, r.du) <= quadratic_form(gt, p.du) * (1 + 1e-9)

    def test_top_k_mix_is_unit_scaled(self, trained_desk):
        spec, w, d = trained_desk
        p = adversarial_perturbation(spectrum(assemble_metric(spec, w, d)), 0.5, top_k=4)
        assert np.linalg.norm(p.du) == pytest.approx(0.5)

    def test_zero_spectrum_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            adversarial_from_factor(factor_from_matrix(np.zeros((3, 3))), 1.0)

    def test_factor_matches_spectrum(self, trained_desk):
        spec, w, d = trained_desk
        dense = adversarial_perturbation(spectrum(assemble_metric(spec, w, d)), 0.2)
        factored = adversarial_from_factor(metric_factor(spec, w, d, mode="lowrank"), 0.2)
        assert np.allclose(np.abs(dense.du), np.abs(factored.du), atol=1e-8)

    def test_worst_sign(self, trained_desk):
        spec, w, d = trained_desk
        p = random_ball_perturbation(spec.n_params, 3.0, seed=1)
        accuracy, sign = worst_sign_accuracy(spec, w, p, d)
        _, plus = evaluate(spec, w.values + p.du, d)
        _, minus = evaluate(spec, w.values - p.du, d)
        assert accuracy == min(plus, minus)
        assert sign == (-1 if minus < plus else 1)

    def test_functional_distance_small_step(self, trained_desk):
        spec, w, d = trained_desk
        gt = assemble_metric(spec, w, d)
        p = adversarial_perturbation(spectrum(gt), 1e-4)
        assert functional_distance(spec, w, p.du, d) == pytest.approx(quadratic_form(gt, p.du), rel=1e-2)

    def test_custom_norm(self):
        p = Perturbation.custom(np.array([3.0, 4.0]))
        assert p.norm == 5.0 and p.scaled(-2.0).norm == 10.0


class TestDeletionSweep:
    def test_endpoints(self, trained_desk):
        spec, w, d = trained_desk
        points = deletion_sweep(spec, w, 1, d, seed=0)
        assert [p.deleted for p in points] == list(range(9))
        assert points[0].accuracy >= 0.95
        assert points[-1].fraction == 1.0
        # no hidden signal left: every input gets the same class, and classes are balanced
        assert points[-1].accuracy == pytest.approx(1 / 3)

    def test_bad_counts(self, trained_desk):
        spec, w, d = trained_desk
        with pytest.raises(InvalidInputError):
            deletion_sweep(spec, w, 1, d, counts=[0, 9])
