import numpy as np
import pytest

from helpers import CONSTANT_2x2
from votetrans.errors import DimensionMismatch
from votetrans.genesis import generate
from votetrans.logit import CovariateDesign, LogitModel
from votetrans.scenarios import DIAGONAL_SLOPE, DIAGONAL_TABLE, get_scenario
from votetrans.tables import aggregate_units, margins_of
from votetrans.verdict import fit_individual_logistic, reconstruct_overall, score


class TestIndividualLogistic:
    def test_mixture_oracle_reproduces_truth(self):
        sc = get_scenario("mixture", 2000, 7)
        data = generate(sc.spec)
        model = fit_individual_logistic(data.units, sc.design)
        rec = reconstruct_overall(model, sc.design, data.margins())
        assert np.max(np.abs(rec - aggregate_units(data.units))) < 5e-4
        assert model.info["converged"]

    def test_noiseless_exact(self, noiseless_units):
        model = fit_individual_logistic(noiseless_units)
        np.testing.assert_allclose(model.alpha, LogitModel.constant(CONSTANT_2x2).alpha, atol=1e-6)

    def test_fixed_slopes_give_consistent_intercepts(self):
        sc = get_scenario("diagonal-covariate", 5000, 21)
        data = generate(sc.spec)
        model = fit_individual_logistic(data.units, sc.design, fixed_beta=[DIAGONAL_SLOPE] * 3)
        # the generator centers at the population mean 1/3, the fit at the sample mean
        x = np.array([m.x for m in data.margins()])
        shift = DIAGONAL_SLOPE * (x.mean(axis=0) - 1 / 3)
        base = np.log(np.asarray(DIAGONAL_TABLE))
        eta = base.copy()
        eta[np.diag_indices(3)] += shift
        alpha_true = eta[:, :2] - eta[:, 2:]
        np.testing.assert_allclose(model.alpha, alpha_true, atol=0.02)
        np.testing.assert_array_equal(model.beta, [DIAGONAL_SLOPE] * 3)

    def test_fixed_beta_length(self, noiseless_units):
        with pytest.raises(DimensionMismatch):
            fit_individual_logistic(noiseless_units, fixed_beta=[1.0])

    def test_reconstruction_of_constant_model(self, noiseless_units):
        rec = reconstruct_overall(LogitModel.constant(CONSTANT_2x2), CovariateDesign(),
                                  [margins_of(u) for u in noiseless_units])
        np.testing.assert_allclose(rec, CONSTANT_2x2, atol=1e-12)


class TestScore:
    def test_example(self):
        s = score([[0.7, 0.3], [0.4, 0.6]], [[0.75, 0.25], [0.35, 0.65]])
        np.testing.assert_allclose(s["signed"], [[-0.05, 0.05], [0.05, -0.05]])
        assert s["max_abs"] == pytest.approx(0.05)
        assert s["mean_abs"] == pytest.approx(0.05)

    def test_row_weights(self):
        s = score([[1.0, 0.0], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]], row_weights=[1, 3])
        assert s["mean_abs"] == pytest.approx(0.125)

    def test_accepts_estimate_objects(self):
        class Est:
            table = np.eye(2)

        assert score(Est(), np.eye(2))["max_abs"] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            score(np.eye(2), np.eye(3))
