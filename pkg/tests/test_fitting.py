import numpy as np
import pytest

from fairpf.closed_form import ScalingConstants, scaling_loss
from fairpf.fitting import FitError, FitProblem, extrapolate, fit, load_fit, observations_from_curves, save_fit
from fairpf.frontier import FrontierCurve

TRUE = ScalingConstants(0.2, 9.0, 0.5, 0.5, 0.08, 0.43, 0.85)
REFERENCE_FIT = ScalingConstants(-0.285, 55.0, 0.7, 0.5, 0.0176, 0.92, 0.1424)
SIZES = (8080, 28960, 109120, 423040)


def synthetic_observations(C, sizes=SIZES, d_train=6500, deltas=np.linspace(0, 0.8, 25)):
    return np.array([(n, d_train, x, scaling_loss(x, n, d_train, C)) for n in sizes for x in deltas])


@pytest.fixture(scope="module")
def clean_fit():
    return fit(FitProblem(synthetic_observations(TRUE)))


@pytest.fixture(scope="module")
def noisy():
    obs = synthetic_observations(TRUE)
    sigma = 0.01 * np.abs(obs[:, 3]).mean()
    obs[:, 3] += np.random.default_rng(0).normal(0, sigma, len(obs))
    return obs, sigma


def test_recovers_known_constants(clean_fit):
    got = clean_fit.constants
    assert clean_fit.rmse < 1e-8
    for name in ("c5", "c6", "c7"):
        assert abs(getattr(got, name) - getattr(TRUE, name)) < 2e-2
    for name in ("c1", "c2"):
        assert getattr(got, name) == pytest.approx(getattr(TRUE, name), rel=0.05)
    assert got.c3 == 0.5 and got.c4 == 0.5


def test_single_cell_without_scale_term():
    C = ScalingConstants(0.3, 0.0, 0.5, 0.5, 0.1, 0.6, 0.7)
    obs = synthetic_observations(C, sizes=(8080,), deltas=np.linspace(0, 0.6, 20))
    assert fit(FitProblem(obs, n_starts=8)).rmse < 1e-8


def test_noise_level_and_lower_bound(noisy):
    obs, sigma = noisy
    ls = fit(FitProblem(obs))
    lb = fit(FitProblem(obs, mode="lower_bound"))
    assert ls.rmse < 2 * sigma
    assert lb.max_violation <= 1e-6
    assert lb.rmse > ls.rmse
    assert "max_violation=" in lb.summary_line()


def test_fit_is_deterministic_and_order_free():
    obs = synthetic_observations(TRUE, sizes=(8080, 28960))
    a = fit(FitProblem(obs, n_starts=6))
    b = fit(FitProblem(obs[::-1].copy(), n_starts=6))
    assert a.constants.as_tuple() == b.constants.as_tuple()


def test_too_few_observations():
    with pytest.raises(FitError):
        FitProblem(synthetic_observations(TRUE, sizes=(8080,), deltas=[0.1, 0.2, 0.3]))


def test_unknown_pin_rejected():
    with pytest.raises(FitError):
        FitProblem(synthetic_observations(TRUE), fixed={"c9": 1.0})


def test_extrapolate_identity_at_training_scale():
    grid = np.linspace(0, 0.8, 30)
    exact, env = extrapolate(TRUE, 8080, 6500, grid)
    np.testing.assert_array_equal(exact.losses, scaling_loss(grid, 8080, 6500, TRUE))
    assert np.all(np.diff(env.losses) <= 0)


def test_extrapolate_limit():
    grid = np.linspace(0, 0.8, 30)
    far, _ = extrapolate(TRUE, 1e30, 1e30, grid)
    limit = scaling_loss(grid, 1, 1, ScalingConstants(0.2, 0.0, 0.5, 0.5, 0.08, 0.43, 0.85))
    np.testing.assert_allclose(far.losses, limit, atol=1e-12)


def test_extrapolate_reference_fit_uniform_shift():
    small, _ = extrapolate(REFERENCE_FIT, 8080, 6500)
    large, _ = extrapolate(REFERENCE_FIT, 423040, 6500)
    np.testing.assert_allclose(small.losses - large.losses, 55 * (8080 ** -0.7 - 423040 ** -0.7), rtol=1e-9)


def test_observations_from_curves():
    c = FrontierCurve([0.0, 0.1], [0.7, 0.65], source={"n_params": "8080", "d_train": "6500"})
    np.testing.assert_array_equal(observations_from_curves([c]), [[8080, 6500, 0.0, 0.7], [8080, 6500, 0.1, 0.65]])


def test_save_load_roundtrip(clean_fit, tmp_path):
    save_fit(clean_fit, tmp_path / "fit.json", {"inputs": []})
    back, doc = load_fit(tmp_path / "fit.json")
    assert back.constants.as_tuple() == clean_fit.constants.as_tuple()
    assert back.rmse == clean_fit.rmse and doc["inputs"] == []
