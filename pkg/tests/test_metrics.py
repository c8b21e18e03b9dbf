import numpy as np
import pytest

from fairpf.dgp import DgpConfig, generate
from fairpf.metrics import EvaluationError, bce_from_scores, bce_loss, dp_gap, dp_gap_from_scores, evaluate
from fairpf.nn_core import MlpArchitecture, init_model


@pytest.fixture(scope="module")
def data():
    return generate(DgpConfig(n_samples=2000))


def half(X, A):
    return np.full(len(A), 0.5)


def test_constant_half_is_ln2(data):
    assert bce_loss(half, data) == pytest.approx(np.log(2), abs=1e-15)


def test_perfect_classifier_hits_clamp():
    y = np.array([0.0, 1.0, 1.0])
    assert bce_from_scores(y, y) == pytest.approx(-np.log(1 - 1e-7), rel=1e-6)


def test_two_point_hand_value():
    v = bce_from_scores([0.8, 0.4], [1, 0])
    assert v == pytest.approx((-np.log(0.8) - np.log(0.6)) / 2, rel=1e-14)
    assert v == pytest.approx(0.3670, abs=5e-5)


def test_dp_gap_cases(data):
    assert dp_gap(half, data) == 0.0
    assert dp_gap(lambda X, A: A.astype(float), data) == pytest.approx(1.0, abs=1e-6)
    assert dp_gap_from_scores([0.2, 0.4, 0.7], [0, 0, 1]) == pytest.approx(0.4, abs=1e-15)


def test_missing_group_errors():
    with pytest.raises(EvaluationError):
        dp_gap_from_scores([0.1, 0.2], [0, 0])


def test_evaluate_matches_parts(data):
    m = init_model(MlpArchitecture(20, (8,)), 0)
    r = evaluate(m, data)
    assert r.bce == bce_loss(m, data) and r.dp_gap == dp_gap(m, data)
    assert evaluate(m, data) == r
    r0 = evaluate(half, data)
    assert r0.bce == pytest.approx(np.log(2)) and r0.dp_gap == 0.0
