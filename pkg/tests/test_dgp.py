import numpy as np
import pytest

from fairpf.dgp import DatasetParseError, DgpConfig, bayes_optimal_score, generate, load_external, save_dataset


def test_zeta_zero_removes_group_effect():
    data = generate(DgpConfig(n_samples=20_000, zeta=0.0, mode="independent", data_seed=1))
    p1, p0 = data.Y[data.A == 1].mean(), data.Y[data.A == 0].mean()
    n1, n0 = (data.A == 1).sum(), (data.A == 0).sum()
    p = data.Y.mean()
    se = np.sqrt(p * (1 - p) * (1 / n1 + 1 / n0))
    assert abs(p1 - p0) < 3 * se


def test_projected_group_rate_exact():
    data = generate(DgpConfig(n_samples=10_000, pi=0.2))
    assert abs(data.A.mean() - 0.2) <= 1 / 10_000


def test_independent_mode_uncorrelated():
    data = generate(DgpConfig(n_samples=20_000, mode="independent", data_seed=2))
    n = len(data)
    for j in range(data.x_dim):
        r = np.corrcoef(data.X[:, j], data.A)[0, 1]
        assert abs(r) < 3 / np.sqrt(n)


def test_bayes_score_properties():
    cfg = DgpConfig(zeta=2.0)
    X = np.random.default_rng(0).standard_normal((50, 20))
    ones, zeros = np.ones(50), np.zeros(50)
    assert np.all(bayes_optimal_score(cfg, X, ones) < bayes_optimal_score(cfg, X, zeros))
    assert np.array_equal(bayes_optimal_score(cfg, X, zeros), bayes_optimal_score(cfg, X, zeros, zeta=7.0))
    assert np.array_equal(bayes_optimal_score(cfg, X, ones, zeta=0.0), bayes_optimal_score(cfg, X, zeros, zeta=0.0))


def test_split_fractions_and_both_groups():
    data = generate(DgpConfig())
    sizes = [data.indices(s).size for s in ("train", "val", "test")]
    np.testing.assert_allclose(np.array(sizes) / len(data), [0.65, 0.15, 0.20], atol=2e-3)
    for s in ("train", "val", "test"):
        _, A, _ = data.part(s)
        assert set(np.unique(A)) == {0.0, 1.0}


def test_generation_deterministic():
    a, b = generate(DgpConfig(n_samples=500)), generate(DgpConfig(n_samples=500))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y) and np.array_equal(a.split, b.split)


def test_nested_training_prefixes():
    data = generate(DgpConfig(n_samples=1000))
    full = data.train_indices()
    assert np.array_equal(data.train_indices(100), full[:100])
    with pytest.raises(ValueError):
        data.train_indices(full.size + 1)


def test_invalid_config():
    with pytest.raises(ValueError):
        DgpConfig(pi=0.0)
    with pytest.raises(ValueError):
        DgpConfig(zeta=-1.0)


def _write(path, rows, header="x0,x1,a,y"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def test_load_well_formed(tmp_path):
    rng = np.random.default_rng(0)
    rows = [f"{rng.random()},{rng.random()},{i % 2},{(i // 2) % 2}" for i in range(100)]
    data = load_external(_write(tmp_path / "d.csv", rows))
    assert len(data) == 100 and data.x_dim == 2


def test_load_rejects_bad_label_with_row(tmp_path):
    rows = ["0.1,0.2,0,1", "0.3,0.4,1,2"]
    with pytest.raises(DatasetParseError, match=":3:"):
        load_external(_write(tmp_path / "d.csv", rows))


def test_auto_split_when_column_missing(tmp_path):
    rng = np.random.default_rng(1)
    rows = [f"{rng.random()},{rng.random()},{i % 2},{(i // 2) % 2}" for i in range(1000)]
    path = _write(tmp_path / "d.csv", rows)
    a, b = load_external(path, data_seed=3), load_external(path, data_seed=3)
    assert np.array_equal(a.split, b.split)
    frac = np.bincount(a.split, minlength=3) / 1000
    np.testing.assert_allclose(frac, [0.65, 0.15, 0.20], atol=1e-2)


def test_save_load_roundtrip(tmp_path):
    data = generate(DgpConfig(n_samples=200))
    save_dataset(data, tmp_path / "d.csv")
    back = load_external(tmp_path / "d.csv")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.split, data.split)
