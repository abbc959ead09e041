"""
Unit tests for the pullback metric, its spectrum and the factorised form.
"""

import numpy as np
import pytest

from geoward.analysis.metric import (
    assemble_metric,
    factor_from_matrix,
    gaussian_expectation,
    gaussian_upper_bound,
    metric_factor,
    quadratic_form,
    quadratic_form_matfree,
    spectrum,
    spectrum_summary,
)
from geoward.config import config
from geoward.core.exceptions import CapacityError, InvalidInputError
from geoward.core.linalg import SymMatrix
from geoward.model.dataset import Dataset
from geoward.model.network import forward_batch, init_weights


@pytest.fixture
def batch(blobs):
    return blobs.take(np.arange(0, 90, 9))


class TestAssembleMetric:
    """Dense g and its quadratic form."""

    def test_symmetric_psd(self, tiny_spec, tiny_weights, batch):
        gt = assemble_metric(tiny_spec, tiny_weights, batch)
        assert np.array_equal(gt.g.entries, gt.g.entries.T)
        assert np.linalg.eigvalsh(gt.g.entries).min() >= -1e-12

    def test_dense_matches_matrix_free(self, tiny_spec, tiny_weights, batch):
        gt = assemble_metric(tiny_spec, tiny_weights, batch)
        du = np.random.default_rng(0).normal(size=tiny_spec.n_params)
        dense = quadratic_form(gt, du)
        assert quadratic_form_matfree(tiny_spec, tiny_weights, batch, du) == pytest.approx(dense, rel=1e-10)

    def test_second_order_fidelity(self, tiny_spec, tiny_weights, batch):
        gt = assemble_metric(tiny_spec, tiny_weights, batch)
        du = np.random.default_rng(5).normal(size=tiny_spec.n_params)
        du *= 1e-4 / np.linalg.norm(du)
        base = forward_batch(tiny_spec, tiny_weights, batch.inputs)
        moved = forward_batch(tiny_spec, tiny_weights.values + du, batch.inputs)
        finite = float(np.mean(np.sum((moved - base) ** 2, axis=1)))
        assert abs(finite - quadratic_form(gt, du)) <= 1e-2 * quadratic_form(gt, du)

    def test_batch_ids_ascending(self, tiny_spec, tiny_weights, batch):
        reversed_batch = batch.take(np.arange(len(batch))[::-1])
        gt = assemble_metric(tiny_spec, tiny_weights, reversed_batch)
        assert list(gt.batch_ids) == sorted(gt.batch_ids)
        again = assemble_metric(tiny_spec, tiny_weights, batch)
        assert np.array_equal(gt.g.entries, again.g.entries)

    def test_affine_metric_is_constant(self, affine_spec):
        d = Dataset(inputs=np.random.default_rng(2).normal(size=(7, 3)), labels=np.zeros(7, dtype=int), name="x")
        first = assemble_metric(affine_spec, init_weights(affine_spec, 0), d)
        second = assemble_metric(affine_spec, init_weights(affine_spec, 9), d)
        assert np.allclose(first.g.entries, second.g.entries, atol=1e-14)

    def test_capacity(self, tiny_spec, tiny_weights, batch, mocker):
        mocker.patch.object(config, "metric_cap", 5)
        with pytest.raises(CapacityError):
            assemble_metric(tiny_spec, tiny_weights, batch)

    def test_quadratic_form_shape_check(self, tiny_spec, tiny_weights, batch):
        gt = assemble_metric(tiny_spec, tiny_weights, batch)
        with pytest.raises(InvalidInputError):
            quadratic_form(gt, np.ones(3))


class TestSpectrum:
    """Resilient/vulnerable split and Gaussian expectations."""

    def _gt(self, tiny_spec, tiny_weights, batch):
        return assemble_metric(tiny_spec, tiny_weights, batch)

    def test_counts_partition_n(self, tiny_spec, tiny_weights, batch):
        s = spectrum(self._gt(tiny_spec, tiny_weights, batch), threshold=1e-3)
        assert s.vulnerable_count + s.resilient_count == tiny_spec.n_params
        assert s.rho == s.vulnerable_count / tiny_spec.n_params
        assert np.all(np.diff(s.eigenvalues) <= 0)

    def test_threshold_boundary_is_vulnerable(self, tiny_spec, tiny_weights, batch):
        gt = self._gt(tiny_spec, tiny_weights, batch)
        s = spectrum(gt, threshold=1e-3)
        exact = spectrum(gt, threshold=float(s.eigenvalues[2]))
        assert exact.vulnerable_count == 3

    def test_gaussian_conventions(self, tiny_spec, tiny_weights, batch):
        gt = self._gt(tiny_spec, tiny_weights, batch)
        trace = float(np.trace(gt.g.entries))
        n = tiny_spec.n_params
        assert gaussian_expectation(gt, 0.5, "variance") == pytest.approx(0.25 * trace / n)
        assert gaussian_expectation(gt, 0.5, "printed") == pytest.approx(0.5 * trace / n)

    def test_gaussian_matches_upper_bound(self, tiny_spec, tiny_weights, batch):
        gt = self._gt(tiny_spec, tiny_weights, batch)
        s = spectrum(gt)
        assert gaussian_upper_bound(s, 0.3) == pytest.approx(gaussian_expectation(gt, 0.3, "variance"), rel=1e-9)

    def test_gaussian_monte_carlo(self, tiny_spec, tiny_weights, batch):
        gt = self._gt(tiny_spec, tiny_weights, batch)
        n = tiny_spec.n_params
        sigma = 0.2
        draws = np.random.default_rng(11).normal(scale=sigma / np.sqrt(n), size=(20000, n))
        empirical = np.mean(np.einsum("ki,ij,kj->k", draws, gt.g.entries, draws))
        assert empirical == pytest.approx(gaussian_expectation(gt, sigma, "variance"), rel=0.05)

    def test_sigma_must_be_positive(self, tiny_spec, tiny_weights, batch):
        with pytest.raises(InvalidInputError):
            gaussian_expectation(self._gt(tiny_spec, tiny_weights, batch), 0.0)

    def test_summary_fields(self, tiny_spec, tiny_weights, batch):
        s = spectrum(self._gt(tiny_spec, tiny_weights, batch))
        summary = spectrum_summary(s)
        assert summary.n == tiny_spec.n_params
        assert summary.lambda_1 == s.lambda_1
        assert summary.trace == pytest.approx(float(np.sum(s.eigenvalues)))


class TestMetricFactor:
    """Dense and low-rank factorisations agree with the assembled metric."""

    def test_lowrank_matches_dense(self, tiny_spec, tiny_weights):
        d = Dataset(inputs=np.random.default_rng(4).normal(size=(3, 2)), labels=np.zeros(3, dtype=int), name="x")
        dense = assemble_metric(tiny_spec, tiny_weights, d).g.entries
        factor = metric_factor(tiny_spec, tiny_weights, d, mode="lowrank")
        assert factor.has_complement
        rebuilt = factor.basis @ np.diag(factor.eigenvalues) @ factor.basis.T
        assert np.allclose(rebuilt, dense, atol=1e-10)
        x = np.random.default_rng(1).normal(size=tiny_spec.n_params)
        assert np.allclose(factor.matvec(x), dense @ x, atol=1e-10)

    def test_auto_picks_lowrank_for_small_batches(self, tiny_spec, tiny_weights):
        d = Dataset(inputs=np.ones((2, 2)), labels=np.zeros(2, dtype=int), name="x")
        assert metric_factor(tiny_spec, tiny_weights, d).mode == "lowrank"

    def test_dense_leading_eigenvalue(self, tiny_spec, tiny_weights, batch):
        factor = metric_factor(tiny_spec, tiny_weights, batch, mode="dense")
        s = spectrum(assemble_metric(tiny_spec, tiny_weights, batch))
        assert factor.lambda_1 == pytest.approx(s.lambda_1)
        assert not factor.has_complement

    def test_from_explicit_matrix(self):
        factor = factor_from_matrix(SymMatrix(np.diag([2.0, 0.0, 5.0])))
        assert factor.eigenvalues.tolist() == [5.0, 2.0, 0.0]
        assert np.allclose(factor.matvec(np.ones(3)), [2.0, 0.0, 5.0])
