import numpy as np
import pytest

from pilotsim.estimators import (
    estimate_all_pairs,
    estimate_hybrid_sp,
    estimate_hybrid_tp,
    estimate_own,
    estimate_sp,
    estimate_tp,
    receive_uplink,
    selector_matrix,
)
from pilotsim.geometry import draw_channels
from pilotsim.pilots import FramePlan, PowerSplit, assemble_frames, make_pilot_book, make_sp_pilot_matrix

EPS = 1e-12


def _channels(L, K, M, seed=0, beta=None):
    beta = np.ones((L, L, K)) if beta is None else beta
    return draw_channels(beta, M, np.random.default_rng(seed)).h


def _data(shape, seed=1):
    rng = np.random.default_rng(seed)
    return np.exp(2j * np.pi * rng.random(shape))


def test_noiseless_single_user_is_rank_one():
    h = _channels(1, 1, 6)
    s = _data((1, 1, 9))
    Y = receive_uplink(h, s, 0.0).Y
    assert np.allclose(Y[0], np.outer(h[0, 0, 0], s[0, 0]), atol=EPS)


def test_two_users_superpose():
    h = _channels(1, 2, 4)
    s = _data((1, 2, 5))
    Y = receive_uplink(h, s, 0.0).Y[0]
    expected = np.outer(h[0, 0, 0], s[0, 0]) + np.outer(h[0, 0, 1], s[0, 1])
    assert np.allclose(Y, expected, atol=EPS)


def test_noise_only_power():
    Y = receive_uplink(np.zeros((1, 1, 1, 64), complex), np.zeros((1, 1, 500)), 0.3, np.random.default_rng(2)).Y
    assert np.mean(np.abs(Y) ** 2) == pytest.approx(0.3, rel=0.02)


def test_tp_single_cell_exact_recovery():
    K, tau, M = 3, 4, 16
    book = make_pilot_book(tau)
    plan = FramePlan.pure_tp(1, K, tau, 10, 10)
    h = _channels(1, K, M)
    Y = receive_uplink(h, assemble_frames(plan, _data((1, K, 10)), book), 0.0)
    for k in range(K):
        h_hat = estimate_tp(Y[0], book[k], tau)
        assert np.max(np.abs(h_hat - h[0, 0, k])) < EPS


def test_tp_contamination_is_sum_of_co_pilot_channels():
    L, K, tau, M = 3, 2, 2, 8
    book = make_pilot_book(tau)
    plan = FramePlan.pure_tp(L, K, tau, 6, 6)
    h = _channels(L, K, M, beta=np.random.default_rng(4).random((L, L, K)))
    Y = receive_uplink(h, assemble_frames(plan, _data((L, K, 6)), book), 0.0)
    for j in range(L):
        for m in range(K):
            expected = h[j, :, m].sum(axis=0)
            assert np.max(np.abs(estimate_tp(Y[j], book[m], tau) - expected)) < EPS


def test_tp_noise_variance():
    tau, M, sigma_sq = 5, 200_000, 0.5
    book = make_pilot_book(tau)
    W = receive_uplink(np.zeros((1, 1, 1, M), complex), np.zeros((1, 1, tau)), sigma_sq, np.random.default_rng(3))
    h_hat = estimate_tp(W[0], book[2], tau)
    assert np.var(h_hat) == pytest.approx(sigma_sq / tau, rel=0.02)


def test_tp_rejects_non_book_pilot():
    with pytest.raises(ValueError):
        estimate_tp(np.zeros((2, 4)), np.array([1, 1, 1, 2.0]), 4)


def test_sp_pilot_only_exact_recovery():
    split = PowerSplit.fixed(0.0)
    P = make_sp_pilot_matrix(8)
    plan = FramePlan.pure_sp(1, 1, 8, 8, split)
    h = _channels(1, 1, 10)
    Y = receive_uplink(h, assemble_frames(plan, _data((1, 1, 8)), sp_pilots=P), 0.0)
    h_hat = estimate_sp(Y[0], P.column(0), 8, split.rho_p)
    assert np.max(np.abs(h_hat - h[0, 0, 0])) < EPS


def test_sp_data_leakage_closed_form():
    split = PowerSplit.fixed(0.3)
    c_u = 16
    P = make_sp_pilot_matrix(c_u)
    plan = FramePlan.pure_sp(1, 1, c_u, c_u, split)
    x = _data((1, 1, c_u))
    h = _channels(1, 1, 5)
    Y = receive_uplink(h, assemble_frames(plan, x, sp_pilots=P), 0.0)
    p = P.column(0)
    err = estimate_sp(Y[0], p, c_u, split.rho_p) - h[0, 0, 0]
    expected = split.rho_d / (c_u * split.rho_p) * h[0, 0, 0] * (x[0, 0] @ p.conj())
    assert np.allclose(err, expected, atol=EPS)


def _hybrid_setup(lambda_tp, split, seed=0):
    L, K, tau, c_u = 2, 2, 2, 8
    sp_users = [(0, 1), (1, 1)]
    plan = FramePlan.hybrid(L, K, tau, c_u, c_u, sp_users, split, lambda_tp=lambda_tp)
    book, P = make_pilot_book(tau), make_sp_pilot_matrix(c_u - tau)
    h = _channels(L, K, 12, seed)
    Y = receive_uplink(h, assemble_frames(plan, _data((L, K, c_u), seed + 1), book, P), 0.0)
    return plan, book, P, h, Y


def test_hybrid_sp_exact_recovery_without_data():
    split = PowerSplit.fixed(0.0)
    plan, book, P, h, Y = _hybrid_setup(0.0, split)
    for j in range(2):
        h_hat = estimate_hybrid_sp(Y[j], P.column(j * 2 + 1), 8, 2, split.rho_p)
        assert np.max(np.abs(h_hat - h[j, j, 1])) < EPS


def test_hybrid_tp_unaffected_by_sp_users():
    split = PowerSplit.fixed(0.4)
    plan, book, P, h, Y = _hybrid_setup(1.0, split)
    # TP user 0 of both cells shares pilot 0; SP users are silent during training
    for j in range(2):
        expected = h[j, 0, 0] + h[j, 1, 0]
        assert np.max(np.abs(estimate_hybrid_tp(Y[j], book[0], 2) - expected)) < EPS


def test_hybrid_sp_matches_plain_sp_on_window():
    split = PowerSplit.fixed(0.4)
    plan, book, P, h, Y = _hybrid_setup(0.0, split)
    a = estimate_hybrid_sp(Y[0], P.column(1), 8, 2, split.rho_p)
    b = estimate_sp(Y[0][:, 2:], P.column(1), 6, split.rho_p)
    assert np.allclose(a, b, atol=EPS)


def test_hybrid_sp_leakage_grows_linearly_in_lambda():
    split = PowerSplit.fixed(0.0)
    errs = []
    for lam in (1.0, 4.0):
        plan, book, P, h, Y = _hybrid_setup(lam, split, seed=5)
        errs.append(np.sum(np.abs(estimate_hybrid_sp(Y[0], P.column(1), 8, 2, split.rho_p) - h[0, 0, 1]) ** 2))
    # noiseless: the error is sqrt(lambda) times a fixed vector
    assert errs[1] / errs[0] == pytest.approx(4.0, rel=1e-10)


def test_hybrid_sp_rejects_full_training():
    with pytest.raises(ValueError):
        estimate_hybrid_sp(np.zeros((2, 4)), np.ones(0), 4, 4, 1.0)


def test_selector_matches_single_vector_estimators():
    split = PowerSplit.fixed(0.4)
    plan, book, P, h, Y = _hybrid_setup(1.0, split)
    B = selector_matrix(plan, book, P)
    own = estimate_own(Y, B)
    assert np.allclose(own[0, 0], estimate_hybrid_tp(Y[0], book[0], 2))
    assert np.allclose(own[1, 1], estimate_hybrid_sp(Y[1], P.column(3), 8, 2, split.rho_p))
    pairs = estimate_all_pairs(Y, B)
    assert np.allclose(pairs[[0, 1], [0, 1]], own)
