import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astute.core import Dataset, PairSamplePlan, RadiusTooSmallError, make_rng, median_pairwise_distance, sample_pairs, sigmoid
from astute.data import GeneratorSpec, generate
from astute.explain import AttributionBatch, explain_batch
from astute.predict import LinearModel, known_lipschitz_upper
from astute.robustness import (
    LAMBDA_GRID,
    L_GRID,
    BetaStarProblem,
    BoundSpec,
    RobustnessCurve,
    auc,
    auc_gap,
    beta_star,
    beta_star_oracle,
    default_grid,
    estimate_astuteness,
    estimate_plipschitz,
    load_curve,
    predict_bound,
    save_curve,
    verify_theorem,
)


def ds(X):
    X = np.asarray(X, dtype=float)
    X = X.reshape(len(X), -1)
    return Dataset(X, np.zeros(len(X), dtype=int))


def constant(c):
    return lambda X: np.full(len(np.atleast_2d(X)), c)


def curve(grid, values, kind="astuteness"):
    return RobustnessCurve(kind, grid, values)


def test_default_grids():
    assert L_GRID.tolist() == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert len(LAMBDA_GRID) == 11 and LAMBDA_GRID[-1] == 1.1
    assert default_grid(0.5, 1.5, 0.5).tolist() == [0.5, 1.0, 1.5]


def test_curve_validation():
    with pytest.raises(ValueError, match="ascending"):
        curve([0.2, 0.1], [0, 0])
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        curve([0.1, 0.2], [0, 1.5])
    with pytest.raises(ValueError, match="kind"):
        curve([0.1], [0], kind="other")


def test_plipschitz_constant_predictor():
    data = ds(make_rng(0).standard_normal((40, 3)))
    c = estimate_plipschitz(constant(0.3), data, PairSamplePlan(radius=1e9), L_grid=[0.0, 0.1, 1.0])
    assert c.values.tolist() == [1.0, 1.0, 1.0]
    assert c.n_pairs == 40 * 39 // 2


def test_plipschitz_single_pair_sigmoid():
    f = lambda X: sigmoid(4 * np.atleast_2d(X)[:, 0])  # noqa: E731
    gap = sigmoid(4.0) - 0.5
    assert gap == pytest.approx(0.4820, abs=1e-4)
    c = estimate_plipschitz(f, ds([0.0, 1.0]), PairSamplePlan(radius=2.0), L_grid=[0.4, 0.5])
    assert c.values.tolist() == [0.0, 1.0]


def test_plipschitz_linear_model_reaches_one_at_bound():
    m = LinearModel([0.8, -0.9, 0.4])
    L = known_lipschitz_upper(m)
    data = ds(make_rng(1).standard_normal((60, 3)))
    grid = default_grid(0.05, 0.6, 0.05)
    c = estimate_plipschitz(m, data, PairSamplePlan(radius=1e9), L_grid=grid)
    assert np.all(c.values[grid >= L] == 1.0)


def test_plipschitz_no_pairs_errors():
    with pytest.raises(RadiusTooSmallError):
        estimate_plipschitz(constant(0.0), ds([0.0, 5.0]), PairSamplePlan(radius=1.0))


def test_astuteness_single_pair_ratio_half():
    data = ds([0.0, 2.0])
    attrs = AttributionBatch(np.array([[0.0], [1.0]]), "shap")
    c = estimate_astuteness(attrs, data, PairSamplePlan(radius=3.0), lambda_grid=[0.1, 0.4, 0.49, 0.5, 0.6, 2.0])
    assert c.values.tolist() == [0, 0, 0, 1, 1, 1]


def test_astuteness_identical_attributions_and_large_lambda():
    data = ds(make_rng(2).standard_normal((30, 2)))
    same = AttributionBatch(np.ones((30, 2)), "rise")
    c = estimate_astuteness(same, data, PairSamplePlan(radius=1e9), lambda_grid=[0.0, 0.5])
    assert c.values.tolist() == [1.0, 1.0]
    rand = AttributionBatch(make_rng(3).standard_normal((30, 2)) * 5, "rise")
    assert estimate_astuteness(rand, data, PairSamplePlan(radius=1e9), lambda_grid=[1e6]).values[0] == 1.0


def test_astuteness_missing_attribution():
    data = ds([0.0, 1.0, 2.0])
    attrs = AttributionBatch(np.zeros((2, 1)), "shap", [0, 1])
    with pytest.raises(KeyError, match="sample index 2"):
        estimate_astuteness(attrs, data, PairSamplePlan(radius=5.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 5))
def test_empirical_curves_are_monotone_and_bounded(seed, d):
    rng = make_rng(seed)
    data = ds(rng.standard_normal((25, d)))
    plan = PairSamplePlan(radius=median_pairwise_distance(data))
    w = rng.standard_normal(d) * 3
    lp = estimate_plipschitz(LinearModel(w), data, plan)
    at = estimate_astuteness(AttributionBatch(rng.standard_normal((25, d)), "shap"), data, plan)
    for c in (lp, at):
        assert c.is_nondecreasing()
        assert np.all((c.values >= 0) & (c.values <= 1))


def test_predict_bound_single_point():
    prof = RobustnessCurve("lipschitzness", [0.5], [0.9])
    b = predict_bound(prof, BoundSpec(2, 4, 2.0), [1.0, 1.9, 2.0, 3.0])
    assert b.values.tolist() == [0.0, 0.0, 0.9, 0.9]
    assert b.kind == "predicted_bound"


def test_predict_bound_constant_profile():
    prof = RobustnessCurve("lipschitzness", L_GRID, np.ones(10))
    spec = BoundSpec(2, 1, 2.0)
    b = predict_bound(prof, spec, default_grid(0.1, 1.1))
    assert np.all(b.values[b.grid >= 0.2] == 1.0) and np.all(b.values[b.grid < 0.2] == 0.0)


def test_rise_constant_halves_activation():
    prof = RobustnessCurve("lipschitzness", [0.1, 0.2, 0.3], [0.2, 0.5, 0.8])
    grid = default_grid(0.1, 3.0)
    two = predict_bound(prof, BoundSpec(2, 4), grid)
    one = predict_bound(prof, BoundSpec(1, 4), grid)
    for level in (0.2, 0.5, 0.8):
        first_two = grid[np.argmax(two.values >= level)]
        first_one = grid[np.argmax(one.values >= level)]
        assert first_one == pytest.approx(first_two / 2)
    assert two.is_nondecreasing() and one.is_nondecreasing()


def test_bound_spec_validation_and_scale():
    with pytest.raises(ValueError):
        BoundSpec(3, 4)
    assert BoundSpec.for_explainer("rise", 9).scale == 3.0
    assert BoundSpec.for_explainer("shap", 8, 3.0).scale == pytest.approx(4.0)
    assert BoundSpec.for_explainer("remove_individual", 5, np.inf).scale == 2.0


def test_auc_examples():
    g = default_grid(0.1, 1.1)
    assert auc(curve(g, np.ones(11)), 0.1, 1.1) == pytest.approx(1.0, abs=1e-15)
    assert auc(curve(g, np.zeros(11)), 0.1, 1.1) == 0.0
    step_grid = default_grid(0.0, 2.0)
    step = curve(step_grid, (step_grid >= 1.0).astype(float))
    a = auc(step, 0.0, 2.0)
    # trapezoid over the jump adds half a grid cell: (1 + 0.05) / 2
    assert a == pytest.approx(0.525, abs=1e-12)
    assert abs(a - 0.5) <= 0.025 + 1e-12
    with pytest.raises(ValueError, match="degenerate"):
        auc(step, 1.0, 1.0)


def test_auc_extrapolates_constant_beyond_grid():
    c = curve([0.5, 1.0], [0.2, 0.6])
    # [0, 0.5] at 0.2, trapezoid 0.2 on [0.5, 1], [1, 2] at 0.6
    assert auc(c, 0.0, 2.0) == pytest.approx((0.1 + 0.2 + 0.6) / 2, abs=1e-15)


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.floats(0, 1))
def test_auc_is_linear(seed, a):
    rng = make_rng(seed)
    g = default_grid(0.1, 1.1)
    v1, v2 = np.sort(rng.random(11)), np.sort(rng.random(11))
    mixed = auc(curve(g, a * v1 + (1 - a) * v2), 0.1, 1.1)
    assert mixed == pytest.approx(a * auc(curve(g, v1), 0.1, 1.1) + (1 - a) * auc(curve(g, v2), 0.1, 1.1), abs=1e-12)


def test_auc_gap_examples():
    g = default_grid(0.1, 1.1)
    c = curve(g, np.linspace(0, 1, 11))
    assert auc_gap(c, c, (0.1, 1.1)) == 0.0
    assert auc_gap(curve(g, np.ones(11)), curve(g, np.zeros(11), "predicted_bound"), (0.1, 1.1)) == pytest.approx(1.0)


def test_beta_star_examples():
    beta, gamma = beta_star(BetaStarProblem((0.3, 0.7), 0.0))
    assert beta == 0.0 and gamma.tolist() == [0.0, 0.0]
    beta, gamma = beta_star(BetaStarProblem((0.2, 0.3, 0.5), 1.0))
    assert gamma.tolist() == [1.0, 1.0, 1.0] and beta == pytest.approx(1.0)
    beta, gamma = beta_star(BetaStarProblem((0.5, 0.5), 0.5))
    assert gamma.tolist() == [1.0, 0.0] and beta == pytest.approx(2 / 3, abs=1e-15)
    assert beta_star_oracle(BetaStarProblem((0.5, 0.5), 0.5)) == pytest.approx(2 / 3, abs=5e-3)


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.6, 1.0])
def test_single_class_limit(alpha):
    prob = BetaStarProblem((1.0, 0.0), alpha)
    assert beta_star(prob)[0] == pytest.approx(alpha, abs=1e-15)
    assert beta_star_oracle(prob) == pytest.approx(alpha, abs=5e-3)


def test_beta_star_infeasible_and_oracle_limits():
    with pytest.raises(ValueError, match="infeasible"):
        beta_star(BetaStarProblem((0.1, 0.1), 0.5))
    with pytest.raises(ValueError, match="d <= 4"):
        beta_star_oracle(BetaStarProblem((0.1,) * 5, 0.1))
    with pytest.raises(ValueError):
        BetaStarProblem((0.7, 0.7), 0.1)


def random_problem(rng, d):
    p = rng.dirichlet(np.ones(d)) * rng.uniform(0.3, 1.0)
    return BetaStarProblem(tuple(p), float(rng.uniform(0, p.sum())))


@pytest.mark.parametrize("seed", range(20))
def test_beta_star_matches_oracle(seed):
    rng = make_rng(seed, "beta")
    prob = random_problem(rng, int(rng.integers(1, 4)))
    beta, gamma = beta_star(prob)
    assert abs(beta - beta_star_oracle(prob, 1e-3)) <= 5e-3
    assert np.all((gamma >= 0) & (gamma <= 1))
    assert float(np.dot(prob.p, gamma)) == pytest.approx(prob.alpha, abs=1e-12)


@settings(max_examples=200)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_beta_star_at_least_alpha(seed, d):
    prob = random_problem(make_rng(seed), d)
    assert beta_star(prob)[0] >= prob.alpha - 1e-12


@pytest.mark.parametrize("d", [2, 3, 6, 10])
@pytest.mark.parametrize("alpha", [0.0, 0.1, 0.5, 0.99])
def test_beta_star_limit(d, alpha):
    eps = 1e-3
    p = (1 - eps,) + (eps / (d - 1),) * (d - 1)
    assert abs(beta_star(BetaStarProblem(p, alpha))[0] - alpha) <= 10 * eps


@pytest.fixture(scope="module")
def orange_linear():
    data = generate(GeneratorSpec("orange_skin", 120, seed=11))
    m = LinearModel(make_rng(12).standard_normal(10), 0.2)
    return m, data, PairSamplePlan(radius=median_pairwise_distance(data))


@pytest.mark.parametrize("explainer, C", [("shap", 2), ("remove_individual", 2), ("rise", 1)])
def test_verify_theorem_linear(orange_linear, explainer, C):
    m, data, plan = orange_linear
    rep = verify_theorem(explainer, m, data, plan)
    assert rep.violations == 0 and rep.C == C
    assert rep.max_ratio <= rep.bound
    assert rep.bound == pytest.approx(C * np.sqrt(10) * known_lipschitz_upper(m))
    assert rep.n_pairs > 0


def test_verify_theorem_constant_and_errors(orange_linear):
    _, data, plan = orange_linear
    zero = LinearModel(np.zeros(10), 1.5)
    rep = verify_theorem("shap", zero, data, plan)
    assert rep.violations == 0 and rep.max_ratio == 0.0
    with pytest.raises(ValueError, match="no known Lipschitz"):
        verify_theorem("shap", constant(0.1), data, plan)
    sampled = explain_batch(zero, data.X, "shap", exact=False, n_permutations=3)
    with pytest.raises(ValueError, match="exact"):
        verify_theorem("shap", zero, data, plan, attrs=sampled)


@pytest.mark.parametrize("explainer", ["shap", "remove_individual", "rise"])
def test_bound_below_empirical_for_linear(orange_linear, explainer):
    m, data, plan = orange_linear
    pairs = sample_pairs(data, plan)
    # default L grid, as in the acceptance setting; a much finer grid can activate
    # the probabilistic bound below the empirical curve (masked points leave the data)
    prof = estimate_plipschitz(m, data, plan, pairs=pairs)
    emp = estimate_astuteness(explain_batch(m, data.X, explainer), data, plan, pairs=pairs)
    pred = predict_bound(prof, BoundSpec.for_explainer(explainer, data.dim))
    assert np.all(pred.values <= emp.values)


def test_curve_round_trip(tmp_path):
    c = RobustnessCurve("astuteness", LAMBDA_GRID, np.linspace(0, 1, 11) ** 2 / 3, 1.234, 2.0, 77, "shap",
                        {"exhaustive": True})
    save_curve(c, tmp_path / "c.csv")
    back = load_curve(tmp_path / "c.csv")
    assert back.grid.tobytes() == c.grid.tobytes() and back.values.tobytes() == c.values.tobytes()
    assert (back.kind, back.radius, back.n_pairs, back.subject_id, back.meta) == ("astuteness", 1.234, 77, "shap",
                                                                                  {"exhaustive": True})
    assert (tmp_path / "c.csv").read_text().startswith("grid_value,probability\n")
