import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import identity_lifting, linear_episode, random_stable
from tedmd.errors import DataError
from tedmd.evaluation import (BLOWUP_NORM, eig_report, mae, metric_report,
                              predict, read_eig_csv, relative_errors,
                              relative_frobenius_error, rmse, write_eig_csv,
                              write_prediction_csv)
from tedmd.lifting import make_lifting
from tedmd.regression import KoopmanModel, build_snapshots, edmd_fit
from tedmd.stability import fit_as

pairs = st.integers(1, 20).flatmap(lambda q: st.tuples(
    arrays(float, (q, 3), elements=st.floats(-10, 10)),
    arrays(float, (q, 3), elements=st.floats(-10, 10))))


def linear_model(A, B):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    return KoopmanModel(A, B, identity_lifting(A.shape[0], B.shape[1]),
                        'edmd', {})


def test_identity_model_is_constant():
    res = predict(linear_model(np.eye(2), np.zeros((2, 1))), [0.3, -0.2],
                  np.ones((11, 1)))
    assert np.all(res.predicted == [0.3, -0.2])


def test_scalar_hand_iteration():
    res = predict(linear_model(0.5, [[0.0]]), [1.0], np.zeros((4, 1)), 3)
    np.testing.assert_array_equal(res.predicted[:, 0], [1, 0.5, 0.25, 0.125])


def test_row_zero_is_initial_state():
    x0 = np.array([0.1234567890123, -9.87654321])
    res = predict(linear_model(0.9 * np.eye(2), np.zeros((2, 1))), x0,
                  np.zeros((5, 1)))
    assert res.predicted[0].tobytes() == x0.tobytes()


def test_divergence_bound():
    A = np.array([[1.2, 0.0], [0.0, 0.5]])
    res = predict(linear_model(A, np.zeros((2, 1))), [1.0, 0.0],
                  np.zeros((201, 1)))
    bound = math.ceil(math.log(BLOWUP_NORM) / math.log(1.2))
    assert res.diverged_at is not None and res.diverged_at <= bound
    assert np.all(np.isnan(res.predicted[res.diverged_at:]))


def test_predict_dimension_guards():
    model = linear_model(np.eye(2), np.zeros((2, 1)))
    with pytest.raises(DataError):
        predict(model, [1.0], np.zeros((3, 1)))
    with pytest.raises(DataError):
        predict(model, [1.0, 0.0], np.zeros((3, 1)), steps=5)
    bad = KoopmanModel(np.eye(3), np.zeros((3, 1)), identity_lifting(2, 1),
                       'edmd', {})
    with pytest.raises(DataError):
        predict(bad, [1.0, 0.0], np.zeros((3, 1)))


def test_exact_linear_closure(rng):
    A = random_stable(2, rng)
    B = rng.standard_normal((2, 1))
    ep = linear_episode(A, B, 100, rng)
    res = predict(linear_model(A, B), ep.states[0], ep.inputs, 100,
                  reference=ep.states)
    assert np.max(res.per_step_error) < 1e-8


def test_rollout_determinism(rng):
    lifter = make_lifting(rng.uniform(-1, 1, (50, 2)), 1)
    model = KoopmanModel(0.05 * rng.standard_normal((15, 15)),
                         rng.standard_normal((15, 1)), lifter, 'edmd', {})
    u = rng.standard_normal((30, 1))
    a = predict(model, [0.1, 0.2], u)
    b = predict(model, [0.1, 0.2], u)
    assert a.predicted.tobytes() == b.predicted.tobytes()


def test_metric_hand_values():
    truth = np.zeros((2, 2))
    est = np.array([[3.0, 0.0], [0.0, 4.0]])
    assert mae(truth, est) == 3.5
    assert rmse(truth, est) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    assert mae(truth, truth) == 0 and rmse(truth, truth) == 0
    assert mae(truth, 2 * est) == 7.0
    assert rmse(truth, 2 * est) == pytest.approx(2 * math.sqrt(12.5))
    with pytest.raises(DataError):
        mae(np.zeros((2, 2)), np.zeros((3, 2)))


@given(pairs)
def test_metric_identities(pair):
    truth, est = pair
    m, r = mae(truth, est), rmse(truth, est)
    assert m >= 0 and r >= 0
    assert (m == 0) == np.array_equal(truth, est)
    perm = np.random.default_rng(0).permutation(truth.shape[0])
    assert mae(truth[perm], est[perm]) == pytest.approx(m, rel=1e-12, abs=0)
    assert rmse(truth[perm], est[perm]) == pytest.approx(r, rel=1e-12, abs=0)


def test_metric_report_uses_steps_after_zero():
    model = linear_model(0.5, [[0.0]])
    ref = np.array([[1.0], [0.0], [0.0]])
    rep = metric_report(predict(model, [1.0], np.zeros((3, 1)), 2,
                                reference=ref))
    assert rep.horizon == 2
    assert rep.mae == pytest.approx((0.5 + 0.25) / 2)


def test_relative_frobenius():
    I = np.eye(2)
    assert relative_frobenius_error(I, I) == 0
    assert relative_frobenius_error(1.1 * I, I) == pytest.approx(0.1)
    with pytest.raises(DataError):
        relative_frobenius_error(I, np.zeros((2, 2)))


def test_block_errors_are_not_averaged():
    true = linear_model(np.eye(2), 10 * np.ones((2, 1)))
    approx = linear_model(2 * np.eye(2), 10 * np.ones((2, 1)))
    rel = relative_errors(approx, true)
    assert rel['A'] == pytest.approx(1.0) and rel['B'] == 0.0
    assert rel['U'] == pytest.approx(math.sqrt(2) / math.sqrt(202))
    assert rel['U'] != pytest.approx((rel['A'] + rel['B']) / 2)


def test_eig_report_cases():
    rep = eig_report(0.5 * np.eye(3))
    np.testing.assert_allclose(rep.eigenvalues, [0.5] * 3)
    assert rep.stable
    companion = np.array([[1.1, 0.0], [1.0, 0.0]])  # z^2 - 1.1 z
    rep = eig_report(companion)
    assert rep.moduli[0] == pytest.approx(1.1)
    assert not rep.stable
    assert np.all(np.diff(rep.moduli) <= 0)


def test_tedmd_as_eigs_are_stable(rng):
    A = np.array([[1.05, 0.1], [0.0, 0.6]])
    ep = linear_episode(A, rng.standard_normal((2, 1)), 80, rng)
    S = build_snapshots([ep], identity_lifting(2, 1))
    assert not eig_report(edmd_fit(S)).stable
    assert eig_report(fit_as(S)).stable


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_stable_models_do_not_blow_up(seed):
    rng = np.random.default_rng(seed)
    A = random_stable(3, rng, radius=0.99999)
    model = linear_model(A, rng.standard_normal((3, 1)))
    u = np.clip(rng.standard_normal((2101, 1)), -1, 1)
    res = predict(model, rng.uniform(-1, 1, 3), u)
    assert res.diverged_at is None


def test_csv_writers(tmp_path):
    model = linear_model(0.5, [[0.0]])
    ref = np.array([[1.0], [0.4], [0.2]])
    res = predict(model, [1.0], np.zeros((3, 1)), 2, reference=ref)
    path = tmp_path / 'pred.csv'
    write_prediction_csv(res, 0.1, path)
    lines = path.read_text().splitlines()
    assert lines[0] == 'k,t,xhat1,x1,err_l1,err_l2'
    assert lines[2].split(',')[-2:] == ['0.09999999999999998',
                                        '0.09999999999999998']
    rep = eig_report(np.array([[0.0, -0.9], [0.9, 0.0]]))
    path = tmp_path / 'eigs.csv'
    write_eig_csv(rep, path, n_circle=5)
    np.testing.assert_allclose(read_eig_csv(path), rep.eigenvalues)
    assert len(path.read_text().splitlines()) == 1 + 2 + 5
