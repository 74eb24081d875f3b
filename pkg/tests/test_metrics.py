import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import loop_auc
from shapguide import metrics, shap_reg
from shapguide.dataset import Task
from shapguide.errors import BadK, ConstantTarget, LengthMismatch, SingleClass, TooFewRows
from shapguide.metrics import (
    auc,
    evaluate,
    f1,
    r2,
    rmse,
    shap_variance,
    stability_metric,
    topk_concentration,
)
from shapguide.treeshap import ShapMatrix


def test_regression_examples():
    y = np.array([1.0, 2.0, 4.0])
    assert rmse(y, y) == 0.0 and r2(y, y) == 1.0
    assert r2(np.full(3, y.mean()), y) == pytest.approx(0.0, abs=1e-15)
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2))


def test_regression_errors():
    with pytest.raises(LengthMismatch):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(ConstantTarget):
        r2([1.0, 2.0], [3.0, 3.0])


def test_classification_examples():
    y = np.array([0, 0, 1, 1])
    assert auc([0.1, 0.2, 0.8, 0.9], y) == 1.0
    assert f1([0, 0, 1, 1], y) == 1.0
    assert auc(np.full(4, 0.3), y) == 0.5
    # pairs (0.35 vs 0.1), (0.35 vs 0.4), (0.8 vs both): 3 of 4 concordant
    assert auc([0.1, 0.4, 0.35, 0.8], y) == 0.75


def test_f1_arithmetic():
    # tp 1, fp 1, fn 1 -> precision = recall = 0.5
    assert f1([1, 1, 0], [1, 0, 1]) == pytest.approx(0.5)
    assert f1([0, 0], [1, 0]) == 0.0


def test_auc_single_class():
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])


@given(arrays(np.float64, st.integers(2, 30), elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
       st.integers(0, 2**32 - 1))
def test_auc_matches_pair_enumeration(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, scores.size)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    assert auc(scores, y) == pytest.approx(loop_auc(scores, y), abs=1e-12)


def test_entropy_metric_is_the_penalty():
    assert metrics.shap_entropy_metric is shap_reg.entropy_penalty


def test_topk_examples():
    phi = np.array([[4.0, -3.0, 2.0, 1.0]])
    assert topk_concentration(phi, 2) == pytest.approx(0.7)
    assert topk_concentration(phi, 4) == 1.0
    assert topk_concentration(np.zeros((2, 4)), 1) == 0.25
    with pytest.raises(BadK):
        topk_concentration(phi, 5)
    with pytest.raises(BadK):
        topk_concentration(phi, 0)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)), elements=st.floats(-100, 100)))
def test_topk_monotone_in_k(phi):
    vals = [topk_concentration(phi, k) for k in range(1, phi.shape[1] + 1)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[0] >= 1.0 / phi.shape[1] - 1e-12 and vals[-1] == pytest.approx(1.0)


def test_stability_metric_examples():
    assert stability_metric(np.array([[1.0, 2.0], [1.0, 2.0]])) == 1.0
    assert stability_metric(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(1 / 3)
    with pytest.raises(TooFewRows):
        stability_metric(np.ones((1, 2)))


@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 4)), elements=st.floats(-50, 50)))
def test_stability_metric_bounded(phi):
    assert 0.0 < stability_metric(phi) <= 1.0


def test_shap_variance_population(rng):
    phi = rng.normal(size=(30, 3))
    np.testing.assert_allclose(shap_variance(ShapMatrix(phi, 0.0)), np.var(phi, axis=0))
    np.testing.assert_array_equal(shap_variance(np.ones((5, 2))), 0.0)


def test_evaluate_regression_and_classification(rng):
    phi = ShapMatrix(rng.normal(size=(10, 2)), 0.0, ["a", "b"])
    y = rng.normal(size=10)
    rep = evaluate("m", Task.REGRESSION, y + 0.1, y, phi, k=3)
    assert rep.k_used == 2 and rep.rmse == pytest.approx(0.1) and rep.f1 is None
    labels = np.array([0, 1] * 5, dtype=float)
    rep = evaluate("m", Task.BINARY, labels * 0.8 + 0.1, labels, phi)
    assert rep.auc == 1.0 and rep.f1 == 1.0 and rep.rmse is None
    assert list(rep.row()) == list(metrics.REPORT_COLUMNS)
