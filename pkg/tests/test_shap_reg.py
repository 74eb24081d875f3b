import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import loop_stability, shannon
from shapguide.errors import DimensionMismatch, TooFewRows
from shapguide.shap_reg import (
    PenaltyReport,
    RegConfig,
    entropy_penalty,
    normalize_abs,
    penalty_report,
    per_feature_instability,
    stability_penalty,
    total_loss,
    update_gain_weights,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(min_rows=1, max_rows=8, max_cols=6):
    shape = st.tuples(st.integers(min_rows, max_rows), st.integers(1, max_cols))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=finite))


@pytest.mark.parametrize(
    "row, expected",
    [((3.0, -1.0), (0.75, 0.25)), ((0.0, 0.0), (0.5, 0.5)), ((-2.0, 2.0, 0.0, 0.0), (0.5, 0.5, 0.0, 0.0))],
)
def test_normalize_examples(row, expected):
    np.testing.assert_allclose(normalize_abs(np.array([row]))[0], expected)


def test_entropy_examples():
    assert entropy_penalty(np.array([[1.0, 0.0, 0.0]])) == 0.0
    assert entropy_penalty(np.ones((1, 4))) == pytest.approx(math.log(4), abs=1e-12)
    # direct summation: H(0.75, 0.25) = 0.5623, H(0.5, 0.5) = ln 2
    expected = (shannon([0.75, 0.25]) + shannon([0.5, 0.5])) / 2
    got = entropy_penalty(np.array([[3.0, 1.0], [1.0, 1.0]]))
    assert got == pytest.approx(expected, abs=1e-15)
    assert got == pytest.approx(0.6277, abs=5e-5)


def test_stability_examples():
    assert stability_penalty(np.array([[1.0, 2.0], [1.0, 2.0]])) == 0.0
    assert stability_penalty(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(TooFewRows):
        stability_penalty(np.ones((1, 3)))


def test_total_loss_examples():
    assert total_loss(1.0, 2.0, 3.0, RegConfig()) == 1.0
    assert total_loss(1.0, 2.0, 3.0, RegConfig(0.1, 0.01)) == pytest.approx(1.23, abs=1e-15)


def test_inert_total_ignores_nan_penalties():
    assert total_loss(0.5, math.nan, math.nan, RegConfig()) == 0.5


@given(matrices())
def test_entropy_bounds(phi):
    h = entropy_penalty(phi)
    assert -1e-12 <= h <= math.log(phi.shape[1]) + 1e-12


@given(matrices())
def test_entropy_matches_direct_summation(phi):
    rows = []
    for r in np.abs(phi):
        p = r / r.sum() if r.sum() > 0 else np.full(r.size, 1.0 / r.size)
        rows.append(shannon(p))
    assert entropy_penalty(phi) == pytest.approx(np.mean(rows), abs=1e-12)


@given(st.integers(1, 50), st.floats(1e-3, 1e3))
def test_uniform_row_entropy_is_log_m(m, c):
    assert abs(entropy_penalty(np.full((1, m), c)) - math.log(m)) <= 1e-12


@given(matrices(min_rows=2, max_rows=6))
def test_stability_matches_printed_formula(phi):
    assert stability_penalty(phi) == pytest.approx(loop_stability(phi), rel=1e-12, abs=1e-12)


@given(matrices(min_rows=2), finite)
def test_stability_translation_invariant(phi, c):
    assert stability_penalty(phi + c) == pytest.approx(stability_penalty(phi), rel=1e-9, abs=1e-9)


@given(matrices(min_rows=2))
def test_stability_nonnegative_and_zero_for_repeats(phi):
    assert stability_penalty(phi) >= 0
    assert stability_penalty(np.repeat(phi[:1], 3, axis=0)) == 0.0


@given(finite, finite, finite, st.floats(0, 10), st.floats(0, 10))
def test_total_loss_is_affine(task, ent, stab, l1, l2):
    cfg = RegConfig(l1, l2)
    assert total_loss(task, ent, stab, cfg) == task + l1 * ent + l2 * stab


def test_sampled_stability_is_deterministic_per_seed(rng):
    phi = rng.normal(size=(200, 4))
    cfg = RegConfig(pair_cap=100, seed=3)
    assert stability_penalty(phi, cfg) == stability_penalty(phi, cfg)
    assert stability_penalty(phi, cfg) != stability_penalty(phi, RegConfig(pair_cap=100, seed=4))


def test_exact_when_pairs_fit_the_cap(rng):
    phi = rng.normal(size=(10, 3))
    assert stability_penalty(phi, RegConfig(pair_cap=45)) == stability_penalty(phi)


def test_sampled_stability_unbiased(rng):
    phi = rng.normal(size=(40, 3)) * [1.0, 2.0, 0.1]
    exact = stability_penalty(phi)
    cfg = RegConfig(pair_cap=50)
    draws = np.array([stability_penalty(phi, cfg, np.random.default_rng(s)) for s in range(400)])
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - exact) < 3 * se


def test_per_feature_instability_mean_is_penalty(rng):
    phi = rng.normal(size=(12, 5))
    assert per_feature_instability(phi).mean() == pytest.approx(stability_penalty(phi), rel=1e-14)


def _report(mass, inst):
    return PenaltyReport(0.0, 0.0, 0.0, np.asarray(mass, float), np.asarray(inst, float))


def test_update_example():
    cfg = RegConfig(1.0, 1.0, eta=1.0, w_min=0.05)
    w = update_gain_weights(np.ones(2), _report([0.9, 0.1], [0.0, 1.0]), cfg)
    # s_hat carries a 1e-12 guard in its denominator
    np.testing.assert_allclose(w, [1.0, math.exp(-1.4)], rtol=1e-10)
    assert w[1] == pytest.approx(0.2466, abs=5e-5)


def test_update_fixed_points():
    prev = np.array([0.3, 0.7, 1.0])
    rep = _report([0.5, 0.3, 0.2], [1.0, 2.0, 3.0])
    assert np.array_equal(update_gain_weights(prev, rep, RegConfig()), prev)
    uniform = _report(np.full(3, 1 / 3), np.zeros(3))
    np.testing.assert_array_equal(update_gain_weights(prev, uniform, RegConfig(1.0, 1.0)), prev)


@given(arrays(np.float64, 4, elements=st.floats(0.05, 1.0)),
       arrays(np.float64, 4, elements=st.floats(0.0, 1.0)),
       arrays(np.float64, 4, elements=st.floats(0.0, 5.0)),
       st.floats(0, 5), st.floats(0, 5))
def test_update_stays_in_bounds(prev, mass, inst, l1, l2):
    w = update_gain_weights(prev, _report(mass, inst), RegConfig(l1, l2, w_min=0.05))
    assert np.all((w >= 0.05) & (w <= 1.0))


def test_update_dimension_check():
    with pytest.raises(DimensionMismatch):
        update_gain_weights(np.ones(3), _report([0.5, 0.5], [0.0, 0.0]), RegConfig(1.0))


def test_penalty_report_consistent(rng):
    phi = rng.normal(size=(9, 4))
    cfg = RegConfig(0.3, 0.2)
    rep = penalty_report(phi, cfg, task_loss=1.5)
    assert rep.entropy == entropy_penalty(phi)
    assert rep.stability == pytest.approx(stability_penalty(phi), rel=1e-14)
    assert rep.total == total_loss(1.5, rep.entropy, rep.stability, cfg)
    assert rep.per_feature_mass.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("kw", [dict(lambda1=-1), dict(batch_size=1), dict(pair_cap=0), dict(eta=0), dict(w_min=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        RegConfig(**kw)
