import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from actflab.design import Factor, FactorSpace, ModelSpec, ScenarioDesign, default_space, random_design
from actflab.errors import RankDeficiencyError
from actflab.rsm import (
    OLSFit,
    build_model_matrix,
    effect_f_tests,
    fit_ols,
    fit_rsm,
    optimal_actf,
    profile,
    quadratic_vertex,
    read_effects_csv,
    regression_report,
    render_markdown,
    write_effects_csv,
)

ACTF_GRID = [1.0, 1.05, 1.1, 1.15, 1.2, 1.25, 1.3]


def actf_space():
    return FactorSpace((Factor.discrete("ActF", ACTF_GRID),))


def two_factor_space():
    return FactorSpace((Factor.continuous("V", 400, 1200), Factor.discrete("ActF", ACTF_GRID)))


def synthetic_actf(linear=0.0, quad=-40.0, noise=0.1, seed=0, reps=10):
    space = actf_space()
    x = np.repeat(ACTF_GRID, reps)
    rng = np.random.default_rng(seed)
    y = 5 + linear * (x - 1.15) + quad * (x - 1.15) ** 2 + rng.normal(0, noise, len(x))
    design = ScenarioDesign(space, x[:, None], ModelSpec.rsm(space.names))
    return design, y


def synthetic_two(seed=0, n=60, noise=0.1):
    space = two_factor_space()
    design = random_design(space, n, np.random.default_rng(seed))
    v, a = design.natural.T
    rng = np.random.default_rng(seed + 1)
    y = 3 + 0.01 * (v - 800) - 40 * (a - 1.15) ** 2 + rng.normal(0, noise, n)
    return design, y


# --- model matrix --------------------------------------------------------


def test_model_matrix_full_size():
    space = default_space()
    d = random_design(space, 72, np.random.default_rng(0))
    X, y = build_model_matrix(d, np.zeros(72))
    assert X.shape == (72, 66) and y.shape == (72,)


def test_model_matrix_one_factor():
    space = FactorSpace((Factor.continuous("x", -1, 1),))
    d = ScenarioDesign(space, np.array([[-1.0], [0.0], [1.0]]), ModelSpec.rsm(["x"]))
    X, _ = build_model_matrix(d, [1, 2, 3])
    assert np.array_equal(X, [[1, -1, 1], [1, 0, 0], [1, 1, 1]])


def test_model_matrix_length_mismatch():
    d = random_design(default_space(), 72, np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_model_matrix(d, np.zeros(71))


# --- OLS -----------------------------------------------------------------


def test_noiseless_line():
    x = np.array([0.0, 1.0, 2.0])
    X = np.column_stack([np.ones(3), x, (x - 1) ** 2])
    fit = fit_ols(X, 2 + 3 * x)
    assert fit.coef == pytest.approx([2, 3, 0], abs=1e-10)


def test_quadratic_recovery():
    # with sd 0.1 noise the standard error of the curvature is about 1.4, so a single
    # draw is checked against its own standard error and the mean over many draws against 1
    est = []
    for seed in range(200):
        d, y = synthetic_actf(seed=seed)
        fit = fit_rsm(d, y)
        b = fit.coefficient(("ActF", "ActF"))
        se = fit.natural_coefficients()[1][fit.model.terms.index((0, 0))]
        assert abs(b + 40) <= 4.5 * se
        est.append(b)
    assert np.mean(est) == pytest.approx(-40, abs=1)
    assert fit.n == 70 and fit.ols.df_resid == 67


def test_duplicate_column():
    x = np.linspace(0, 1, 5)
    with pytest.raises(RankDeficiencyError, match="b"):
        fit_ols(np.column_stack([np.ones(5), x, x]), x, ["1", "a", "b"])


def test_rank_error_in_rsm():
    space = two_factor_space()
    d = ScenarioDesign(space, np.array([[400.0, 1.0], [800.0, 1.15], [1200.0, 1.3]] * 5), ModelSpec.rsm(space.names))
    with pytest.raises(RankDeficiencyError):
        fit_rsm(d, np.arange(15.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_residuals_orthogonal(seed):
    d, y = synthetic_two(seed)
    fit = fit_rsm(d, y)
    X = d.model_matrix()
    scale = np.abs(X).sum(axis=0) * np.abs(y).max()
    assert np.all(np.abs(X.T @ fit.ols.resid) <= 1e-8 * scale)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ss_decomposition(seed):
    d, y = synthetic_two(seed)
    ols = fit_rsm(d, y).ols
    ss_model = float(((ols.fitted - y.mean()) ** 2).sum())
    assert ols.ss_total == pytest.approx(ss_model + ols.ss_resid, rel=1e-6)
    assert ols.ss_model == pytest.approx(ss_model, rel=1e-6)


def test_reparameterization_invariance():
    # centered (x - 1.15)^2 and raw x^2 span the same column space
    d, y = synthetic_actf(linear=2.0)
    x = d.natural[:, 0]
    centered = fit_ols(np.column_stack([np.ones_like(x), x, (x - 1.15) ** 2]), y)
    raw = fit_ols(np.column_stack([np.ones_like(x), x, x ** 2]), y)
    coded = fit_rsm(d, y).ols
    assert raw.fitted == pytest.approx(centered.fitted, abs=1e-9)
    assert coded.fitted == pytest.approx(centered.fitted, abs=1e-9)
    assert raw.coef[2] == pytest.approx(centered.coef[2], rel=1e-9)


# --- F tests -------------------------------------------------------------


def _single(coef, df):
    """One-parameter fit with MS_resid = 1, so F = coef^2."""
    return OLSFit(np.array([coef]), np.array([1.0]), np.zeros(1), np.zeros(1), float(df), 1.0, df,
                  np.eye(1), ("b",))


def _f_sf_oracle(F, m):
    # upper tail of F(1, m) by integrating its density after x = t^2, which removes the 1/sqrt(x) pole
    c = math.exp(special.gammaln((1 + m) / 2) - special.gammaln(0.5) - special.gammaln(m / 2)) / math.sqrt(m)
    cdf, _ = integrate.quad(lambda t: 2 * c * (1 + t * t / m) ** (-(1 + m) / 2), 0, math.sqrt(F),
                            epsabs=1e-12, epsrel=1e-12, limit=200)
    return 1 - cdf


# (SS, p to 3 decimals) of a single-df effect table with 6 residual df; MS_resid follows from the last row
EFFECT_TABLE = [(23.242, 0.401), (1.129, 0.849), (0.725, 0.879), (0.078, 0.960), (25.888, 0.377),
                (7.348, 0.630), (26.546, 0.372), (2.091, 0.796), (22.707, 0.407), (33.011, 0.323),
                (471.447, 0.007)]
TABLE_MS = 471.447 / 16.535


@pytest.mark.parametrize("ss, printed", EFFECT_TABLE)
def test_effect_table_p_values(ss, printed):
    F = ss / TABLE_MS
    (test,) = effect_f_tests(_single(math.sqrt(F), 6))
    assert test.f == pytest.approx(F)
    assert round(test.p, 3) == printed


def test_f_examples():
    (test,) = effect_f_tests(_single(math.sqrt(16.535), 6))
    assert test.p == pytest.approx(0.0066, abs=5e-5)
    (test,) = effect_f_tests(_single(math.sqrt(0.040), 6))
    assert test.p == pytest.approx(0.849, abs=1e-3)  # 0.040 is itself rounded


def test_printed_rounding():
    (test,) = effect_f_tests(_single(math.sqrt(16.535), 6))
    assert f"{test.p:.3f}" == "0.007"


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 100), st.integers(1, 30))
def test_p_value_matches_integration(F, m):
    (test,) = effect_f_tests(_single(math.sqrt(F), m))
    assert test.p == pytest.approx(_f_sf_oracle(F, m), abs=1e-4)
    assert 0 <= test.p <= 1


def test_zero_coefficient():
    (test,) = effect_f_tests(_single(0.0, 6))
    assert test.f == 0 and test.p == 1


def test_zero_residual_df():
    with pytest.raises(ValueError):
        effect_f_tests(_single(1.0, 0))


def test_report_residual_df():
    d, y = synthetic_two()
    rep = regression_report(fit_rsm(d, y))
    assert rep.df_resid == 60 - 6
    assert [e.effect for e in rep.effects] == list(fit_rsm(d, y).labels[1:])
    assert all(0 <= e.p <= 1 for e in rep.effects)
    assert rep.effect("(ActF-1.15)^2").p < 1e-6


# --- profiles and optimum ------------------------------------------------


def test_profile_vertex():
    d, y = synthetic_two()
    fit = fit_rsm(d, y)
    for at in (None, {"V": 400.0}, {"V": 1200.0}):
        s = profile(fit, "ActF", at, n_points=61)
        assert s.grid[0] == 1.0 and s.grid[-1] == 1.3
        assert s.grid[np.argmax(s.predicted)] == pytest.approx(1.15, abs=0.011)
        assert np.isfinite(s.predicted).all()


def test_profile_main_effects_is_line():
    d, y = synthetic_two()
    fit = fit_rsm(d, y, ModelSpec.main_effects(d.space.names))
    s = profile(fit, "V")
    assert np.diff(s.predicted, 2) == pytest.approx(np.zeros(len(s.grid) - 2), abs=1e-9)


def test_profile_errors():
    d, y = synthetic_two()
    fit = fit_rsm(d, y)
    with pytest.raises(ValueError):
        profile(fit, "ActF", {"V": 1500.0})
    with pytest.raises(KeyError):
        profile(fit, "LT")


def test_vertex_examples():
    assert quadratic_vertex(0, -40, 1.15, 1.0, 1.3).value == pytest.approx(1.15)
    opt = quadratic_vertex(3, -40, 1.15, 1.0, 1.3)
    assert opt.value == pytest.approx(1.1875) and opt.concave and opt.interior
    convex = quadratic_vertex(1, 10, 1.15, 1.0, 1.3)
    assert convex.value == 1.3 and not convex.concave and not convex.interior
    assert quadratic_vertex(-1, 10, 1.15, 1.0, 1.3).value == 1.0


def test_optimal_from_synthetic_fit():
    d, y = synthetic_actf(noise=0.0)
    opt = optimal_actf(fit_rsm(d, y))
    assert opt.value == pytest.approx(1.15, abs=1e-9) and opt.concave
    d, y = synthetic_actf(linear=3.0, noise=0.0)
    assert optimal_actf(fit_rsm(d, y)).value == pytest.approx(1.1875, abs=1e-9)


def test_optimal_requires_actf_terms():
    d, y = synthetic_two()
    with pytest.raises(ValueError):
        optimal_actf(fit_rsm(d, y, ModelSpec.main_effects(d.space.names)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_optimum_scale_invariant(seed, k):
    d, y = synthetic_two(seed, noise=2.0)
    a = optimal_actf(fit_rsm(d, y))
    b = optimal_actf(fit_rsm(d, k * y))
    assert b.value == pytest.approx(a.value, rel=1e-9, abs=1e-12)
    assert b.concave == a.concave


# --- output --------------------------------------------------------------


def test_effects_csv(tmp_path):
    d, y = synthetic_two()
    rep = regression_report(fit_rsm(d, y))
    path = tmp_path / "effects.csv"
    write_effects_csv(rep, path)
    header = next(csv.reader(open(path)))
    assert header == ["effect", "nparm", "df", "ss", "f_ratio", "p_value"]
    back = read_effects_csv(path)
    assert [e.effect for e in back] == [e.effect for e in rep.effects]
    assert [e.f for e in back] == pytest.approx([e.f for e in rep.effects], rel=1e-5)


def test_markdown():
    d, y = synthetic_two()
    text = render_markdown(regression_report(fit_rsm(d, y)))
    assert "## Optimal ActF" in text and "| (ActF-1.15)^2 |" in text
    assert "linear ActF term: F =" in text
