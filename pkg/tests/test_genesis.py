import math

import numpy as np
import pytest

from votetrans.errors import InvalidPrecision, SpecError
from votetrans.genesis import (
    ClusterSpec,
    CovariateEffect,
    ExternalCovariate,
    GeneratorSpec,
    MarginLaw,
    MixtureSpec,
    SizeLaw,
    WeightLaw,
    dirichlet_row,
    expected_rows,
    generate,
    generate_mixture,
    largest_remainder,
)
from votetrans.scenarios import DIAGONAL_TABLE, MIXTURE_TABLES, get_scenario
from votetrans.tables import aggregate_units

BASE = [[0.75, 0.25], [0.35, 0.65]]


class TestDirichletRow:
    def test_infinite_precision_returns_mean(self):
        mean = np.array([0.2, 0.3, 0.5])
        out = dirichlet_row(mean, math.inf, np.random.default_rng(0))
        np.testing.assert_array_equal(out, mean)

    def test_on_open_simplex(self):
        rng = np.random.default_rng(1)
        for s in (0.5, 5.0, 500.0):
            p = dirichlet_row([0.5, 0.5], s, rng)
            assert p.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_invalid_precision(self, bad):
        with pytest.raises(InvalidPrecision):
            dirichlet_row([0.5, 0.5], bad, np.random.default_rng(0))

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(2)
        draws = np.array([dirichlet_row([0.3, 0.7], 50.0, rng) for _ in range(100_000)])
        np.testing.assert_allclose(draws.mean(axis=0), [0.3, 0.7], atol=0.01)
        # Var = m (1 - m) / (s + 1)
        assert draws[:, 0].var() == pytest.approx(0.3 * 0.7 / 51, rel=0.10)


def test_largest_remainder_sums_exactly():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = rng.dirichlet(np.ones(4))
        total = int(rng.integers(1, 5000))
        out = largest_remainder(total, p)
        assert out.sum() == total
        assert np.all(np.abs(out - total * p) < 1)


class TestSpecValidation:
    def test_zero_units_rejected(self):
        with pytest.raises(SpecError):
            generate(GeneratorSpec(n_units=0, base_table=BASE))

    def test_non_stochastic_base(self):
        with pytest.raises(SpecError):
            generate(GeneratorSpec(n_units=3, base_table=[[0.5, 0.6], [0.5, 0.5]]))

    def test_bad_dispersion(self):
        with pytest.raises(SpecError):
            generate(GeneratorSpec(n_units=3, base_table=BASE, dispersion=0))

    def test_undeclared_external(self):
        spec = GeneratorSpec(n_units=3, base_table=BASE,
                             covariate_effects=[CovariateEffect((0, 0), "external:z", 1.0)])
        with pytest.raises(SpecError, match="not declared"):
            generate(spec)

    def test_cell_out_of_range(self):
        spec = GeneratorSpec(n_units=3, base_table=BASE,
                             covariate_effects=[CovariateEffect((2, 0), "row_margin:0", 1.0)])
        with pytest.raises(SpecError):
            generate(spec)

    def test_json_round_trip(self):
        spec = get_scenario("mixture", 10, 5).spec
        back = GeneratorSpec.from_json(spec.to_json())
        assert back.digest() == spec.digest()
        assert math.isinf(GeneratorSpec.from_json(GeneratorSpec(3, BASE).to_json()).dispersion)


class TestGenerate:
    def test_law_of_large_numbers(self):
        spec = GeneratorSpec(n_units=1, base_table=BASE, size_law=SizeLaw("fixed", 10_000_000, 10_000_000),
                             margin_law=MarginLaw("fixed", proportions=[0.5, 0.5]), seed=4)
        f = aggregate_units(generate(spec).units)
        np.testing.assert_allclose(f, BASE, atol=1e-3)

    def test_deterministic_and_worker_independent(self):
        spec = get_scenario("diagonal-covariate", 60, 9).spec
        a = generate(spec).counts()
        b = generate(spec).counts()
        c = generate(spec, workers=4).counts()
        assert a.tobytes() == b.tobytes() == c.tobytes()

    def test_seed_changes_output(self):
        a = generate(get_scenario("constant", 30, 1).spec).counts()
        b = generate(get_scenario("constant", 30, 2).spec).counts()
        assert not np.array_equal(a, b)

    def test_rows_match_drawn_totals(self):
        spec = get_scenario("constant", 200, 3).spec
        for u in generate(spec).units:
            n = u.counts.sum()
            assert spec.size_law.min <= n <= spec.size_law.max

    def test_expected_counts_without_noise(self):
        # sizes and shares chosen so every cell is a whole number
        spec = GeneratorSpec(n_units=5, base_table=BASE, size_law=SizeLaw("fixed", 400, 400),
                             margin_law=MarginLaw("fixed", proportions=[0.5, 0.5]), count_law="expected")
        for u in generate(spec).units:
            np.testing.assert_array_equal(u.row_proportions(), BASE)

    def test_size_weighted_mean_within_three_se(self):
        spec = get_scenario("constant", 2000, 5).spec
        counts = generate(spec).counts().astype(float)
        rows = counts.sum(axis=2)
        for i in range(2):
            w = rows[:, i]
            f = counts[:, i, 0] / w
            mean = (w @ f) / w.sum()
            se = np.sqrt(np.sum(w**2 * (f - mean) ** 2)) / w.sum()
            assert abs(mean - BASE[i][0]) < 3 * se

    def test_covariates_centered_at_population_mean(self):
        spec = get_scenario("diagonal-covariate", 1, 0).spec
        at_mean = expected_rows(spec, spec.base_table, spec.margin_law.mean(), {})
        np.testing.assert_allclose(at_mean, spec.base_table, atol=1e-12)

    def test_diagonal_effect_direction(self):
        spec = get_scenario("diagonal-covariate", 1, 0).spec
        low = expected_rows(spec, spec.base_table, np.array([0.1, 0.45, 0.45]), {})
        high = expected_rows(spec, spec.base_table, np.array([0.8, 0.1, 0.1]), {})
        assert high[0, 0] > low[0, 0]

    def test_diagonal_preset_individual_table(self):
        # diagonal-dominant like the three-party example (0.721 / 0.630 / 0.812)
        f = aggregate_units(generate(get_scenario("diagonal-covariate", 2000, 1).spec).units)
        assert np.all(np.argmax(f, axis=1) == [0, 1, 2])
        assert np.all((np.diag(f) > 0.6) & (np.diag(f) < 0.9))
        np.testing.assert_allclose(np.diag(f), np.diag(DIAGONAL_TABLE), atol=0.08)

    def test_external_covariates(self):
        spec = GeneratorSpec(n_units=50, base_table=BASE, seed=2,
                             external_covariates=[ExternalCovariate("z", 0.0, 1.0)],
                             covariate_effects=[CovariateEffect((0, 0), "external:z", 2.0)])
        data = generate(spec)
        assert all("z" in c for c in data.covariates)
        assert all(m.covariates["z"] == c["z"] for m, c in zip(data.margins(), data.covariates))

    def test_clusters_add_dispersion(self):
        kw = dict(n_units=300, base_table=BASE, size_law=SizeLaw("fixed", 1000, 1000),
                  margin_law=MarginLaw("fixed", proportions=[0.5, 0.5]), seed=6)
        plain = generate(GeneratorSpec(**kw)).counts()
        clustered = generate(GeneratorSpec(**kw, clusters=ClusterSpec(20.0, 5.0))).counts()
        assert clustered[:, 0, 0].var() > 2 * plain[:, 0, 0].var()
        assert np.all(clustered.sum(axis=2) == plain.sum(axis=2))


class TestMixture:
    def _spec(self, tables, weight_law, **kw):
        return GeneratorSpec(n_units=kw.pop("n_units", 400), base_table=tables[0],
                             mixture=MixtureSpec(tables, weight_law), dispersion=math.inf, **kw)

    def test_requires_mixture(self):
        with pytest.raises(SpecError):
            generate_mixture(GeneratorSpec(3, BASE))

    def test_latent_tallies_sum_to_units(self):
        data = generate(get_scenario("mixture", 50, 1).spec)
        np.testing.assert_array_equal(data.latent.sum(axis=1), data.counts())

    def test_identical_tables_collapse(self):
        mix = generate(self._spec((BASE, BASE), WeightLaw("logistic", 0.0, 3.0), n_units=3000, seed=1))
        plain = generate(GeneratorSpec(n_units=3000, base_table=BASE, seed=2))
        np.testing.assert_allclose(aggregate_units(mix.units), aggregate_units(plain.units), atol=0.005)

    def test_constant_weight_one(self):
        other = [[0.2, 0.8], [0.9, 0.1]]
        mix = generate(self._spec((other, BASE), WeightLaw("constant", value=1.0), n_units=3000, seed=3))
        assert mix.latent[:, 0].sum() == 0
        np.testing.assert_allclose(aggregate_units(mix.units), BASE, atol=0.005)

    def test_not_per_row_split(self):
        spec = self._spec(MIXTURE_TABLES, WeightLaw("constant", value=0.3), n_units=50, seed=3)
        spec.mixture.per_row = False
        data = generate(spec)
        np.testing.assert_array_equal(data.latent.sum(axis=1), data.counts())

    def test_preset_voting_levels(self):
        # overall individual P(vote) around 0.08-0.09 in both rows
        data = generate(get_scenario("mixture", 2000, 7).spec)
        f = aggregate_units(data.units)
        assert np.all((f[:, 0] > 0.07) & (f[:, 0] < 0.10))
        # the V=1 share rises with the female share
        x = data.counts()[:, 1].sum(axis=1) / data.counts().sum(axis=(1, 2))
        assert np.corrcoef(x, data.weights)[0, 1] > 0.9
