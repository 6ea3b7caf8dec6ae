import numpy as np
import pytest

from astute.data import GeneratorSpec, generate, label_probability, load_csv, save_csv


def test_orange_skin_probabilities():
    X = np.zeros((2, 10))
    X[1, :4] = 1.0
    p = label_probability("orange_skin", X)
    assert p[0] == pytest.approx(1 / (1 + np.exp(4)), rel=1e-12)
    assert p[0] == pytest.approx(0.0180, abs=5e-5)
    assert p[1] == 0.5


def test_nonlinear_additive_score_by_hand():
    x = np.array([[0.3, -0.5, 0.2, 0.1, 0, 0, 0, 0, 0, 0]])
    v = -100 * np.sin(0.6) + 2 * 0.5 + 0.2 + np.exp(-0.1)
    assert label_probability("nonlinear_additive", x)[0] == pytest.approx(1 / (1 + np.exp(-v)), rel=1e-12)


def test_switch_upper_branch_ignores_nonlinear_block():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 10))
    X[:, 0] = 3.0
    base = label_probability("switch", X, upper=True)
    X2 = X.copy()
    X2[:, 5:10] = rng.standard_normal((50, 5))
    assert np.array_equal(base, label_probability("switch", X2, upper=True))
    assert np.allclose(base, label_probability("orange_skin", X[:, 1:5]))


def test_switch_lower_branch_uses_nonlinear_additive():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 10))
    X[:, 0] = -3.0
    assert np.allclose(label_probability("switch", X), label_probability("nonlinear_additive", X[:, 5:9]))


@pytest.mark.parametrize("kind, dim", [("switch", 5), ("orange_skin", 3), ("nonlinear_additive", 2)])
def test_minimum_dimension(kind, dim):
    with pytest.raises(ValueError, match="requires dim"):
        GeneratorSpec(kind, 10, dim=dim)


def test_gaussian_marginals():
    data = generate(GeneratorSpec("orange_skin", 100_000, seed=3))
    assert np.all(np.abs(data.X.mean(axis=0)) <= 0.02)
    assert np.all(np.abs(data.X.std(axis=0) - 1) <= 0.02)


def test_switch_mixture_balance():
    data = generate(GeneratorSpec("switch", 100_000, seed=4))
    frac = np.mean(data.X[:, 0] > 0)
    assert 0.48 <= frac <= 0.52
    # components centred at +-3 with unit variance
    assert data.X[data.X[:, 0] > 0, 0].mean() == pytest.approx(3.0, abs=0.03)


def test_labels_follow_probabilities():
    data = generate(GeneratorSpec("orange_skin", 50_000, seed=5))
    p = label_probability("orange_skin", data.X)
    assert abs(data.y.mean() - p.mean()) < 0.01


def test_generation_is_deterministic():
    a = generate(GeneratorSpec("switch", 500, seed=9))
    b = generate(GeneratorSpec("switch", 500, seed=9))
    c = generate(GeneratorSpec("switch", 500, seed=10))
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert a.X.tobytes() != c.X.tobytes()


def test_load_csv_basic(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("f1,f2,y\n1,2,0\n3,4,1\n5,6.5,1\n")
    data, scaler = load_csv(f, "y")
    assert (data.n, data.dim) == (3, 2)
    assert data.X.tolist() == [[1, 2], [3, 4], [5, 6.5]]
    assert data.y.tolist() == [0, 1, 1]
    assert data.feature_names == ("f1", "f2")
    assert scaler is None
    by_index, _ = load_csv(f, 2)
    assert by_index.X.tolist() == data.X.tolist()


def test_load_csv_standardize(tmp_path):
    f = tmp_path / "d.csv"
    rng = np.random.default_rng(0)
    rows = ["a,b,label"] + [f"{x},{z},{k % 2}" for k, (x, z) in enumerate(rng.normal(5, 3, (40, 2)))]
    f.write_text("\n".join(rows) + "\n")
    data, scaler = load_csv(f, "label", standardize=True)
    assert np.all(np.abs(data.X.mean(axis=0)) <= 1e-9)
    assert np.allclose(data.X.std(axis=0, ddof=1), 1.0)
    # reuse training statistics on another file
    again, _ = load_csv(f, "label", standardize=True, stats=scaler)
    assert np.array_equal(again.X, data.X)


@pytest.mark.parametrize(
    "body, match",
    [
        ("1,2,2\n", "non-binary label"),
        ("1,abc,0\n", "row 2, column 'f2'"),
        ("1,nan,0\n", "non-finite"),
        ("1,2\n", "cells"),
    ],
)
def test_load_csv_errors(tmp_path, body, match):
    f = tmp_path / "bad.csv"
    f.write_text("f1,f2,y\n" + body)
    with pytest.raises(ValueError, match=match):
        load_csv(f, "y")


def test_csv_round_trip_is_exact(tmp_path):
    spec = GeneratorSpec("nonlinear_additive", 50, seed=2)
    data = generate(spec)
    path = tmp_path / "na.csv"
    save_csv(data, path, spec=spec)
    back, _ = load_csv(path, "label")
    assert back.X.tobytes() == data.X.tobytes() and back.y.tolist() == data.y.tolist()
    assert (tmp_path / "na.csv.json").exists()
