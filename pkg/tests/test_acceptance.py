"""Acceptance suite: one test per criterion clause, each printing a
PASS/FAIL line with the measured value and its target band.

Run with ``pytest tests/test_acceptance.py -v -s``.  Scenario runs are
shared across clauses through module-scoped fixtures.
"""

import itertools

import numpy as np
import pytest

from grouppanel.cluster import kmeans, rand_index
from grouppanel.estimators import OptimOptions, classo_fit, feasible_kmeans
from grouppanel.hettests import chi2_sf
from grouppanel.io import write_fit_result, write_metrics_tables
from grouppanel.panel import within_transform
from grouppanel.selection import within_dispersion
from grouppanel.simulate import SimConfig, generate_dgp, run_replications

JOBS = 2
REPS = 200


def report(label, value, ok, band):
    print(f"CRITERION {label}: {'PASS' if ok else 'FAIL'} value={value:.6g} target={band}")
    return ok


def run(**kw):
    base = dict(reps=REPS, n_jobs=JOBS, master_seed=1234)
    base.update(kw)
    return run_replications(SimConfig(**base))


# ---------------------------------------------------------------------------
# shared scenario runs


@pytest.fixture(scope="module")
def homog_100_200():
    return run(n_units=100, n_periods=200, eta_variance=0.0, estimators=("SSP", "Km"))


@pytest.fixture(scope="module")
def hetero_100_100():
    return run(n_units=100, n_periods=100, eta_variance=0.2,
               estimators=("SSP", "Km", "H-SSP"))


@pytest.fixture(scope="module")
def hetero_50_100():
    return run(n_units=50, n_periods=100, eta_variance=0.2, estimators=("Km", "F-Km"))


@pytest.fixture(scope="module")
def homog_50_100():
    return run(n_units=50, n_periods=100, eta_variance=0.0, estimators=("Km", "F-Km"))


@pytest.fixture(scope="module")
def hetero_50_50_ssp():
    return run(n_units=50, n_periods=50, eta_variance=0.2, estimators=("SSP",))


# ---------------------------------------------------------------------------
# criterion 1: slope MSE under homogeneity at (100, 200)


def test_criterion_01_ssp(homog_100_200):
    value = homog_100_200.estimator_rows["SSP"]["mse_beta"]
    assert report("1 SSP homog beta-MSE", value, value <= 0.0005, "<= 0.0005")


def test_criterion_01_km(homog_100_200):
    value = homog_100_200.estimator_rows["Km"]["mse_beta"]
    assert report("1 Km homog beta-MSE", value, 0.002 <= value <= 0.005, "[0.002, 0.005]")


# criterion 2: slope MSE under heterogeneity at (100, 100)


def test_criterion_02_ssp(hetero_100_100):
    value = hetero_100_100.estimator_rows["SSP"]["mse_beta"]
    assert report("2 SSP hetero beta-MSE", value, 0.11 <= value <= 0.19, "[0.11, 0.19]")


def test_criterion_02_km(hetero_100_100):
    value = hetero_100_100.estimator_rows["Km"]["mse_beta"]
    assert report("2 Km hetero beta-MSE", value, 0.06 <= value <= 0.10, "[0.06, 0.10]")


def test_criterion_02_hssp_tracks_km(hetero_100_100):
    rows = hetero_100_100.estimator_rows
    value = abs(rows["H-SSP"]["mse_beta"] - rows["Km"]["mse_beta"])
    assert report("2 |H-SSP - Km| paired", value, value <= 0.01, "<= 0.01")


# criterion 3: first-group center MSE at (50, 100) heterogeneous


def test_criterion_03_center_mse(hetero_50_100):
    value = hetero_50_100.estimator_rows["Km"]["mse_alpha1"]
    assert report("3 Km center-MSE", value, 0.001 <= value <= 0.004, "[0.001, 0.004]")


# criterion 4: Rand index levels


def test_criterion_04_km_fkm_homog(homog_50_100):
    rows = homog_50_100.estimator_rows
    value = min(rows["Km"]["rand_index"], rows["F-Km"]["rand_index"])
    assert report("4 Km/F-Km RI homog", value, value >= 0.99, ">= 0.99")


def test_criterion_04_km_fkm_hetero(hetero_50_100):
    rows = hetero_50_100.estimator_rows
    value = min(rows["Km"]["rand_index"], rows["F-Km"]["rand_index"])
    assert report("4 Km/F-Km RI hetero", value, value >= 0.99, ">= 0.99")


def test_criterion_04_ssp_hetero(hetero_50_50_ssp):
    value = hetero_50_50_ssp.estimator_rows["SSP"]["rand_index"]
    assert report("4 SSP RI hetero (50,50)", value, 0.82 <= value <= 0.95, "[0.82, 0.95]")


# criterion 5: gap statistic frequency of picking two groups at (100, 100)


@pytest.mark.parametrize("eta,regime", [(0.0, "homog"), (0.2, "hetero")])
def test_criterion_05_gap_two_groups(eta, regime):
    table = run(n_units=100, n_periods=100, eta_variance=eta,
                estimators=(), selectors=("gap",), k_max=5)
    value = table.selection_rows["gap"][2]
    assert report(f"5 gap freq(K=2) {regime}", value, value >= 0.95, ">= 0.95")


# criterion 6: gap picks one group when there is no grouping


def test_criterion_06_gap_one_group():
    table = run(n_units=200, n_periods=200, eta_variance=0.2, k_true=1,
                centers_true=((0.5,),), estimators=(), selectors=("gap",), k_max=5)
    value = table.selection_rows["gap"][1]
    assert report("6 gap freq(K=1)", value, value >= 0.95, ">= 0.95")


# criterion 7: cross-sectional squared-t test size and power at (1000, 500)


@pytest.fixture(scope="module")
def s_test_size():
    table = run(n_units=1000, n_periods=500, eta_variance=0.0, reps=500,
                estimators=(), tests=("s",))
    return table.test_rows["s"]["cs_rejection"]


def test_criterion_07_size(s_test_size):
    assert report("7 s-test size", s_test_size, 0.02 <= s_test_size <= 0.09,
                  "[0.02, 0.09]")


def test_criterion_07_power():
    table = run(n_units=1000, n_periods=500, eta_variance=0.2,
                estimators=(), tests=("s",))
    value = table.test_rows["s"]["cs_rejection"]
    assert report("7 s-test power", value, value >= 0.99, ">= 0.99")


# criterion 8: auxiliary-R2 test size and within-group power


def test_criterion_08_size():
    table = run(n_units=1000, n_periods=1000, eta_variance=0.0,
                estimators=(), tests=("r",))
    value = table.test_rows["r"]["cs_rejection"]
    assert report("8 r-test size", value, 0.02 <= value <= 0.10, "[0.02, 0.10]")


def test_criterion_08_wg_power():
    table = run(n_units=500, n_periods=1000, eta_variance=0.2,
                estimators=(), tests=("r",))
    value = table.test_rows["r"]["wg_rejection"]
    assert report("8 r-test WG power", value, value >= 0.9, ">= 0.9")


# criterion 9: property suite


def test_criterion_09_monotone_descent():
    worst = 0.0
    for seed in range(3):
        cfg = SimConfig(n_units=40, n_periods=60, eta_variance=0.2, reps=1)
        raw, _ = generate_dgp(cfg, seed)
        panel = within_transform(raw)
        fit = classo_fit(panel, 2, 0.2, OptimOptions(seed=seed))
        trace = np.asarray(fit.objective_trace)
        worst = max(worst, float((trace[1:] - trace[:-1]).max(initial=-np.inf)))
    assert report("9 monotone descent slack", worst, worst <= 1e-9, "<= 1e-9")


def test_criterion_09_penalty_gradient_fd():
    from grouppanel.estimators import penalty_gradient

    rng = np.random.default_rng(0)
    centers = rng.standard_normal((3, 2))
    worst = 0.0
    for _ in range(25):
        b = rng.standard_normal(2) * 2
        if min(np.linalg.norm(b - c) for c in centers) < 1e-3:
            continue
        g = penalty_gradient(b, centers)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            up = np.prod([np.linalg.norm(b + e - c) for c in centers])
            dn = np.prod([np.linalg.norm(b - e - c) for c in centers])
            worst = max(worst, abs(g[j] - (up - dn) / (2 * h)))
    assert report("9 gradient vs finite differences", worst, worst <= 1e-5, "<= 1e-5")


def test_criterion_09_kmeans_brute_force():
    worst = 0.0
    for seed in (1, 2, 3):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((8, 2))
        sol = kmeans(pts, 2, restarts=10, seed=seed)
        best = np.inf
        for labels in itertools.product(range(2), repeat=8):
            labels = np.asarray(labels)
            if labels.min() == labels.max():
                continue
            ss = sum(
                float(np.sum((pts[labels == j] - pts[labels == j].mean(axis=0)) ** 2))
                for j in range(2)
            )
            best = min(best, ss)
        worst = max(worst, abs(sol.within_ss - best))
    assert report("9 k-means exact partition optimum", worst, worst <= 1e-9, "<= 1e-9")


def test_criterion_09_rand_index_hand_cases():
    ok = (
        rand_index(np.array([0, 0, 1]), np.array([0, 1, 1])) == pytest.approx(1 / 3)
        and rand_index(np.array([0, 1, 0, 1]), np.array([1, 0, 1, 0])) == 1.0
    )
    assert report("9 Rand index hand cases", 1.0 if ok else 0.0, ok, "exact")


def test_criterion_09_dispersion_identity():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((10, 2))
        labels = rng.integers(0, 3, 10)
        centroid = within_dispersion(pts, labels)
        pairwise = 0.0
        for k in range(3):
            grp = pts[labels == k]
            nk = grp.shape[0]
            if nk == 0:
                continue
            d = sum(
                float(np.sum((grp[i] - grp[j]) ** 2))
                for i in range(nk)
                for j in range(nk)
            )
            pairwise += d / (2 * nk)
        worst = max(worst, abs(centroid - pairwise))
    assert report("9 dispersion pairwise == centroid", worst, worst <= 1e-9, "<= 1e-9")


def _median_center_error(fit_alpha, true_alpha):
    e1 = np.linalg.norm(fit_alpha - true_alpha, axis=1)
    e2 = np.linalg.norm(fit_alpha - true_alpha[::-1], axis=1)
    return e1 if e1.sum() <= e2.sum() else e2


def test_criterion_09_t_rate_factor():
    medians = {}
    for t in (100, 400):
        errs = []
        for seed in range(100):
            cfg = SimConfig(n_units=50, n_periods=t, eta_variance=0.0, reps=1)
            raw, truth = generate_dgp(cfg, seed)
            panel = within_transform(raw)
            fit = classo_fit(panel, 2, 0.5 * t ** (-1 / 3), OptimOptions(seed=seed))
            errs.extend(_median_center_error(fit.centers.alpha, truth.centers_true.alpha))
        medians[t] = float(np.median(errs))
    factor = medians[100] / medians[400]
    assert report("9 T-rate factor (T: 100 -> 400)", factor, 1.6 <= factor <= 2.6,
                  "[1.6, 2.6]")


def test_criterion_09_n_rate_factor():
    medians = {}
    for n in (100, 400):
        errs = []
        for seed in range(200):
            cfg = SimConfig(n_units=n, n_periods=200, eta_variance=0.2, reps=1)
            raw, truth = generate_dgp(cfg, seed)
            panel = within_transform(raw)
            fit = feasible_kmeans(panel, 2, seed=seed)
            errs.extend(_median_center_error(fit.centers.alpha, truth.centers_true.alpha))
        medians[n] = float(np.median(errs))
    factor = medians[100] / medians[400]
    assert report("9 N-rate factor (N: 100 -> 400)", factor, 1.4 <= factor <= 2.8,
                  "[1.4, 2.8]")


def test_criterion_09_chi2_critical_values():
    worst = max(abs(chi2_sf(3.841, 1) - 0.05), abs(chi2_sf(5.991, 2) - 0.05))
    assert report("9 chi-squared critical values", worst, worst <= 5e-4, "<= 5e-4")


# criterion 10: determinism


def test_criterion_10_simulate_rerun_byte_identical(tmp_path):
    cfg = SimConfig(n_units=20, n_periods=40, eta_variance=0.2, reps=5,
                    master_seed=99, estimators=("F-Km", "Km"), tests=("s",),
                    selectors=("gap",), k_max=3, n_jobs=1)
    table_a = run_replications(cfg)
    table_b = run_replications(cfg)
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    names_a = write_metrics_tables(table_a, dir_a)
    write_metrics_tables(table_b, dir_b)
    same = all((dir_a / n).read_bytes() == (dir_b / n).read_bytes() for n in names_a)
    assert report("10 simulate rerun byte-identical", 1.0 if same else 0.0, same, "identical")


def test_criterion_10_fit_rerun_bit_identical(tmp_path):
    cfg = SimConfig(n_units=30, n_periods=60, eta_variance=0.2, reps=1, master_seed=5)
    raw, _ = generate_dgp(cfg, 0)
    panel = within_transform(raw)
    outs = []
    for sub in ("a", "b"):
        fit = classo_fit(panel, 2, 0.1, OptimOptions(seed=7))
        out = tmp_path / sub
        write_fit_result(fit, out, unit_labels=panel.unit_labels)
        outs.append(out)
    same = all(
        (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
        for n in ("beta.csv", "centers.csv", "assignment.csv")
    )
    assert report("10 fit rerun bit-identical", 1.0 if same else 0.0, same, "identical")
