import numpy as np
import pytest

from grouppanel.cluster import Centers, GroupAssignment
from grouppanel.errors import (
    AlreadyDemeanedError,
    DegenerateUnitWarning,
    EmptySubsetError,
    SingularGramError,
    UnassignedUnitError,
)
from grouppanel.panel import (
    PanelData,
    fixed_effects,
    make_panel,
    mean_group,
    pooled_ols,
    residuals_from_centers,
    unit_ols,
    within_transform,
)


def _demeaned_panel(y, x):
    return make_panel(np.asarray(y, float), np.asarray(x, float), demeaned=True)


def _random_raw(seed, n=8, t=12, p=2):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, t, p))
    beta = rng.standard_normal((n, p))
    y = np.einsum("np,ntp->nt", beta, x) + rng.standard_normal((n, t)) + rng.standard_normal((n, 1))
    return make_panel(y, x)


class TestWithinTransform:
    def test_constant_series_demeans_to_zero(self):
        y = np.array([[5.0, 5.0, 5.0]])
        x = np.array([[[1.0], [2.0], [3.0]]])
        out = within_transform(make_panel(y, x))
        assert np.allclose(out.y, 0.0)

    def test_simple_subtraction(self):
        y = np.array([[1.0, 2.0, 3.0]])
        x = np.array([[[0.0], [1.0], [2.0]]])
        out = within_transform(make_panel(y, x))
        assert np.allclose(out.y, [[-1.0, 0.0, 1.0]])

    def test_random_panel_means_vanish(self):
        raw = _random_raw(7)
        out = within_transform(raw)
        # oracle: direct mean computation
        assert np.abs(out.y.mean(axis=1)).max() < 1e-12
        assert np.abs(out.x.mean(axis=1)).max() < 1e-12
        assert out.demeaned

    def test_already_demeaned_raises(self):
        out = within_transform(_random_raw(1))
        with pytest.raises(AlreadyDemeanedError):
            within_transform(out)

    def test_constant_covariate_warns(self):
        y = np.array([[1.0, 2.0, 3.0]])
        x = np.full((1, 3, 1), 4.0)
        with pytest.warns(DegenerateUnitWarning):
            within_transform(make_panel(y, x))

    def test_idempotence_with_flag_override(self):
        once = within_transform(_random_raw(2))
        again = within_transform(
            PanelData(y=once.y, x=once.x, unit_labels=once.unit_labels,
                      time_labels=once.time_labels, demeaned=False)
        )
        assert np.abs(again.y - once.y).max() < 1e-12
        assert np.abs(again.x - once.x).max() < 1e-12

    def test_input_unmodified(self):
        raw = _random_raw(3)
        y_before = raw.y.copy()
        within_transform(raw)
        assert np.array_equal(raw.y, y_before)


class TestUnitOls:
    def test_exact_linear_relation(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 10, 1))
        x -= x.mean(axis=1, keepdims=True)
        y = 2.0 * x[:, :, 0]
        beta = unit_ols(_demeaned_panel(y, x)).beta
        assert np.allclose(beta, 2.0)

    def test_hand_solved_normal_equation(self):
        x = np.array([[[-0.5], [0.5]]])
        y = np.array([[-1.0, 1.0]])
        beta = unit_ols(_demeaned_panel(y, x)).beta
        assert beta[0, 0] == pytest.approx(2.0, abs=1e-14)

    def test_matches_normal_equations_oracle(self):
        panel = within_transform(_random_raw(11))
        beta = unit_ols(panel).beta
        for i in range(panel.n_units):
            xi = panel.x[i]
            gram = xi.T @ xi
            oracle = np.linalg.solve(gram, xi.T @ panel.y[i])
            assert np.abs(beta[i] - oracle).max() < 1e-10

    def test_fixed_effect_invariance(self):
        raw = _random_raw(5)
        shifted = make_panel(raw.y + np.arange(raw.n_units)[:, None] * 3.7, raw.x)
        b1 = unit_ols(within_transform(raw)).beta
        b2 = unit_ols(within_transform(shifted)).beta
        assert np.abs(b1 - b2).max() < 1e-10

    def test_singular_gram_names_unit(self):
        y = np.random.default_rng(0).standard_normal((2, 5))
        x = np.random.default_rng(1).standard_normal((2, 5, 1))
        x[1] = 2.0  # constant covariate demeans to zero
        with pytest.warns(DegenerateUnitWarning):
            panel = within_transform(make_panel(y, x, unit_labels=("a", "b")))
        with pytest.raises(SingularGramError) as err:
            unit_ols(panel)
        assert err.value.unit == "b"

    def test_requires_demeaned(self):
        raw = _random_raw(6)
        with pytest.raises(Exception):
            unit_ols(raw)


class TestPooledOls:
    def test_shared_slope_recovered(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 9, 1))
        x -= x.mean(axis=1, keepdims=True)
        y = 2.0 * x[:, :, 0]
        pooled = pooled_ols(_demeaned_panel(y, x))
        assert pooled.beta[0] == pytest.approx(2.0, abs=1e-12)

    def test_equal_designs_average_slopes(self):
        xi = np.linspace(-1, 1, 8)
        x = np.stack([xi, xi])[:, :, None]
        y = np.stack([1.0 * xi, 3.0 * xi])
        pooled = pooled_ols(_demeaned_panel(y, x))
        assert pooled.beta[0] == pytest.approx(2.0, abs=1e-12)

    def test_matches_pooled_oracle(self):
        panel = within_transform(_random_raw(12))
        pooled = pooled_ols(panel)
        xs = panel.x.reshape(-1, panel.n_covariates)
        ys = panel.y.reshape(-1)
        oracle = np.linalg.solve(xs.T @ xs, xs.T @ ys)
        assert np.abs(pooled.beta - oracle).max() < 1e-10

    def test_single_unit_equals_unit_ols(self):
        panel = within_transform(_random_raw(13, n=1))
        assert np.abs(pooled_ols(panel).beta - unit_ols(panel).beta[0]).max() < 1e-12


class TestMeanGroup:
    def test_identical_units(self):
        xi = np.linspace(-1, 1, 6)
        x = np.tile(xi, (3, 1))[:, :, None]
        y = np.tile(2.5 * xi, (3, 1))
        panel = _demeaned_panel(y, x)
        mg = mean_group(panel)
        assert np.abs(mg.beta - unit_ols(panel).beta[0]).max() < 1e-12

    def test_arithmetic_mean_of_slopes(self):
        xi = np.linspace(-1, 1, 6)
        x = np.stack([xi, xi])[:, :, None]
        y = np.stack([1.0 * xi, 3.0 * xi])
        assert mean_group(_demeaned_panel(y, x)).beta[0] == pytest.approx(2.0)

    def test_exact_mean_of_unit_rows(self):
        panel = within_transform(_random_raw(14))
        mg = mean_group(panel)
        assert np.array_equal(mg.beta, unit_ols(panel).beta.mean(axis=0))

    def test_singleton_subset(self):
        panel = within_transform(_random_raw(15))
        mg = mean_group(panel, subset=[2])
        assert np.array_equal(mg.beta, unit_ols(panel).beta[2])

    def test_empty_subset_raises(self):
        panel = within_transform(_random_raw(16))
        with pytest.raises(EmptySubsetError):
            mean_group(panel, subset=[])


class TestResidualsFromCenters:
    def test_exact_centers_zero_residuals(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4, 7, 1))
        x -= x.mean(axis=1, keepdims=True)
        centers = Centers(alpha=np.array([[0.5], [2.0]]))
        labels = GroupAssignment(labels=np.array([0, 0, 1, 1]), n_groups=2)
        y = np.einsum("np,ntp->nt", centers.alpha[labels.labels], x)
        resid = residuals_from_centers(_demeaned_panel(y, x), centers, labels)
        assert np.abs(resid.eps).max() < 1e-12

    def test_zero_center_returns_y(self):
        panel = within_transform(_random_raw(17, n=1))
        resid = residuals_from_centers(
            panel, Centers(alpha=np.zeros((1, panel.n_covariates))),
            GroupAssignment(labels=np.zeros(1, dtype=int), n_groups=1),
        )
        assert np.array_equal(resid.eps, panel.y)

    def test_matches_elementwise_oracle(self):
        panel = within_transform(_random_raw(18))
        rng = np.random.default_rng(19)
        centers = Centers(alpha=rng.standard_normal((3, panel.n_covariates)))
        labels = GroupAssignment(labels=rng.integers(0, 3, panel.n_units), n_groups=3)
        resid = residuals_from_centers(panel, centers, labels)
        for i in range(panel.n_units):
            for t in range(panel.n_periods):
                expected = panel.y[i, t] - centers.alpha[labels.labels[i]] @ panel.x[i, t]
                assert resid.eps[i, t] == pytest.approx(expected, abs=1e-12)

    def test_unassigned_unit_raises(self):
        panel = within_transform(_random_raw(20, n=3))
        centers = Centers(alpha=np.zeros((2, panel.n_covariates)))
        bad = GroupAssignment(labels=np.array([0, 1, 2]), n_groups=3)
        with pytest.raises(UnassignedUnitError):
            residuals_from_centers(panel, centers, bad)


def test_fixed_effects_recovered():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((4, 30, 1))
    beta = np.array([[1.0], [2.0], [0.5], [1.5]])
    mu = np.array([3.0, -1.0, 0.25, 2.0])
    y = mu[:, None] + np.einsum("np,ntp->nt", beta, x)
    raw = make_panel(y, x)
    demeaned = within_transform(raw)
    est = unit_ols(demeaned)
    assert np.abs(fixed_effects(raw, est) - mu).max() < 1e-10
