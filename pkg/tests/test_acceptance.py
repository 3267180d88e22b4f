"""Acceptance gate: one test, and one printed verdict line, per criterion."""

import os
import subprocess
import sys
import time

import numpy as np

from pilotsim.config import SystemConfig
from pilotsim.estimators import estimate_hybrid_sp, estimate_sp, estimate_tp, receive_uplink
from pilotsim.experiments import HYBRID_DEFAULTS, hybrid_sum_rates, make_config, metric_inputs
from pilotsim.geometry import draw_channels
from pilotsim.metrics import (
    dl_sinr_sp_asymptotic,
    dl_sinr_sp_exact,
    dl_sinr_sp_optimal,
    dl_sinr_tp,
    mse_sp,
    mse_sp_optimal,
    mse_tp,
    sp_dl_interference_power,
)
from pilotsim.montecarlo import (
    Experiment,
    build_setup,
    decompose_dl_interference,
    mf_precode_downlink,
    qam_mod,
    run_trials,
    stream,
)
from pilotsim.partition import CostModel, CostWeights, brute_force_partition, greedy_partition, total_cost
from pilotsim.pilots import FramePlan, PowerSplit, assemble_frames, make_pilot_book, make_sp_pilot_matrix, optimal_power_split
from pilotsim.geometry import complex_normal

# tolerances pinned from the acceptance list
MC_REL_TOL = 0.03
MSE_RUNTIME_S = 60.0
EXCESS_RATIO_BAND = (0.45, 0.55)
SINR_RATIO_BAND = (1.9, 2.1)
PLUG_IN_REL_TOL = 1e-12
IDENTITY_ABS_TOL = 1e-10
GREEDY_RUNTIME_S = 10.0
DL_ORDER_RUNTIME_S = 120.0
MICRO_TOL = 1e-12

REFERENCE = SystemConfig(M=64, circle_radius=0.8, snr_db=10.0)


def _grid(inputs, f):
    return np.array([[f(inputs, j, m) for m in range(inputs.K)] for j in range(inputs.L)])


def test_criterion_01_mse_matches_closed_form(report_criterion):
    cfg = REFERENCE.replace(trials=5000)
    start = time.perf_counter()
    sp = run_trials(cfg, Experiment.SP, estimation_only=True)
    tp = run_trials(cfg, Experiment.TP, estimation_only=True)
    elapsed = time.perf_counter() - start
    inputs = metric_inputs(cfg)
    err_sp = np.max(np.abs(sp.mean["mse"] / _grid(inputs, mse_sp) - 1))
    err_tp = np.max(np.abs(tp.mean["mse"] / _grid(inputs, mse_tp) - 1))
    ok = err_sp <= MC_REL_TOL and err_tp <= MC_REL_TOL and elapsed < MSE_RUNTIME_S
    detail = f"max rel err sp={err_sp:.4f} tp={err_tp:.4f} (tol {MC_REL_TOL}), {elapsed:.1f}s (< {MSE_RUNTIME_S:.0f}s)"
    assert report_criterion(1, ok, detail)


def test_criterion_02_interference_decomposition(report_criterion):
    cfg = REFERENCE.replace(trials=10_000)
    setup = build_setup(cfg, Experiment.SP)
    beta = setup.beta_serving
    worst = 0.0
    for t in range(200):
        rng = stream(99, t)
        h = draw_channels(setup.gains, cfg.M, rng).h
        h_hat = h[np.arange(7), np.arange(7)] + complex_normal(rng, (7, cfg.K, cfg.M), 0.1)
        d = qam_mod(rng.integers(0, 2, (7, cfg.K, 2 * cfg.dl_symbols)))
        noise = complex_normal(rng, d.shape, cfg.sigma_sq)
        dec = decompose_dl_interference(h_hat, h, d, noise, beta)
        worst = max(worst, float(np.max(np.abs(dec.total - mf_precode_downlink(h_hat, h, d, noise=noise)))))

    rep = run_trials(cfg, Experiment.SP)
    expected = _grid(metric_inputs(cfg), sp_dl_interference_power)
    err_sum = np.max(np.abs(rep.mean["dl_components"].sum(axis=0) / expected - 1))
    err_total = np.max(np.abs(rep.mean["dl_interference"] / expected - 1))
    ok = worst <= IDENTITY_ABS_TOL and err_sum <= MC_REL_TOL and err_total <= MC_REL_TOL
    detail = (
        f"identity max |diff|={worst:.1e} (tol {IDENTITY_ABS_TOL:.0e}); "
        f"sum|i_n|^2 rel err={err_sum:.4f}, |sum i_n|^2 rel err={err_total:.4f} (tol {MC_REL_TOL})"
    )
    assert report_criterion(2, ok, detail)


def test_criterion_03_crlb_asymptotics(report_criterion):
    Ms = [32, 128, 512, 2048, 8192]
    base = metric_inputs(REFERENCE)
    mse_s, mse_t, excess = [], [], []
    for M in Ms:
        split = optimal_power_split(M, base.L, base.K, base.c_u)
        inp = base.__class__(base.beta, M, base.c_u, base.c_d, base.tau, base.sigma_sq, split)
        mse_s.append(mse_sp(inp, 0, 0))
        mse_t.append(mse_tp(inp, 0, 0))
        excess.append(mse_s[-1] - inp.sigma_sq / (split.rho_p_sq * inp.c_u))
    decreasing = all(a > b for a, b in zip(mse_s, mse_s[1:]))
    ratios = [float(b / a) for a, b in zip(excess, excess[1:])]
    in_band = [EXCESS_RATIO_BAND[0] <= r <= EXCESS_RATIO_BAND[1] for r in ratios]
    tp_constant = len(set(mse_t)) == 1
    slope = np.polyfit(np.log([M + base.L * base.K for M in Ms]), np.log(excess), 1)[0]
    ok = decreasing and all(in_band) and tp_constant
    detail = (
        f"decreasing={decreasing}, step ratios={[round(r, 4) for r in ratios]} (band {EXCESS_RATIO_BAND}), "
        f"mse_tp constant={tp_constant}, excess exponent in (M+LK)={slope:.6f}"
    )
    assert report_criterion(3, ok, detail)


def test_criterion_04_sqrt_m_sinr_scaling(report_criterion):
    base = metric_inputs(REFERENCE)
    ratios = []
    for M in (512, 2048, 8192):
        vals = []
        for m_ in (M, 4 * M):
            split = optimal_power_split(m_, base.L, base.K, base.c_u)
            inp = base.__class__(base.beta, m_, base.c_u, base.c_d, base.tau, base.sigma_sq, split)
            vals.append(_grid(inp, dl_sinr_sp_asymptotic))
        ratios.append(float(np.max(np.abs(vals[1] / vals[0] - 2.0))) + 2.0)
        ratios.append(float(np.min(vals[1] / vals[0])))
    ok = all(SINR_RATIO_BAND[0] <= r <= SINR_RATIO_BAND[1] for r in ratios)
    detail = f"SINR(4M)/SINR(M) extremes over users for M=512,2048,8192: {[round(r, 4) for r in ratios]} (band {SINR_RATIO_BAND})"
    assert report_criterion(4, ok, detail)


def test_criterion_05_power_split_identities(report_criterion):
    rng = np.random.default_rng(5)
    worst_sum, worst_plug = 0.0, 0.0
    beta = metric_inputs(REFERENCE).beta
    base = metric_inputs(REFERENCE)
    for _ in range(1000):
        M, c_u = int(rng.integers(1, 10**5)), int(rng.integers(35, 2000))
        s = optimal_power_split(M, 7, 5, c_u)
        worst_sum = max(worst_sum, abs(s.rho_d_sq + s.rho_p_sq - 1.0))
        inp = base.__class__(beta, M, c_u, c_u, 5, base.sigma_sq, s)
        j, m = int(rng.integers(7)), int(rng.integers(5))
        worst_plug = max(
            worst_plug,
            abs(mse_sp_optimal(inp, j, m) / mse_sp(inp, j, m) - 1),
            abs(dl_sinr_sp_optimal(inp, j, m) / dl_sinr_sp_asymptotic(inp, j, m) - 1),
        )
    eps = np.finfo(float).eps
    ok = worst_sum <= 2 * eps and worst_plug <= PLUG_IN_REL_TOL
    detail = f"max |rho_d^2+rho_p^2-1|={worst_sum:.1e} (<= 2 eps), max plug-in rel diff={worst_plug:.1e} (tol {PLUG_IN_REL_TOL:.0e})"
    assert report_criterion(5, ok, detail)


def test_criterion_06_greedy_vs_exhaustive(report_criterion):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    gaps, ok_all_tp, ok_opt = [], True, True
    for i in range(100):
        K = 2 + i % 2
        beta = rng.uniform(0.0, 1.0, (2, 2, K))
        beta[[0, 1], [0, 1]] = 1.0
        model = CostModel(beta, 40, K, PowerSplit.fixed(float(rng.uniform(0.1, 0.9))), CostWeights.from_ul(float(rng.uniform())))
        greedy = greedy_partition(model)
        best = brute_force_partition(model)
        everyone = set(model.users)
        ok_all_tp &= greedy.final_cost <= total_cost(model, everyone, set())
        ok_opt &= best.final_cost <= greedy.final_cost
        gaps.append(greedy.final_cost - best.final_cost)
    elapsed = time.perf_counter() - start
    ok = ok_all_tp and ok_opt and elapsed < GREEDY_RUNTIME_S
    detail = (
        f"greedy<=all-TP {ok_all_tp}, optimum<=greedy {ok_opt}, mean gap={np.mean(gaps):.3e}, "
        f"instances with gap>0: {sum(g > 0 for g in gaps)}/100, {elapsed:.2f}s (< {GREEDY_RUNTIME_S:.0f}s)"
    )
    assert report_criterion(6, ok, detail)


def test_criterion_07_dl_ordering(report_criterion):
    cfg = SystemConfig(M=300, circle_radius=0.8, constellation="qam4", trials=2000)
    start = time.perf_counter()
    sp = run_trials(cfg, Experiment.SP)
    tp = run_trials(cfg, Experiment.TP)
    elapsed = time.perf_counter() - start
    ber_sp, ber_tp = sp.ber("dl", [0]), tp.ber("dl", [0])
    inputs = metric_inputs(cfg)
    sinr_sp = [dl_sinr_sp_exact(inputs, 0, m) for m in range(cfg.K)]
    sinr_tp = [dl_sinr_tp(inputs, 0, m) for m in range(cfg.K)]
    every_user = all(a > b for a, b in zip(sinr_sp, sinr_tp))
    ok = ber_sp < ber_tp and every_user and elapsed < DL_ORDER_RUNTIME_S
    detail = (
        f"reference-cell DL BER sp={ber_sp:.3e} tp={ber_tp:.3e}; "
        f"sp exact SINR > tp SINR for all {cfg.K} users={every_user}; {elapsed:.1f}s (< {DL_ORDER_RUNTIME_S:.0f}s)"
    )
    assert report_criterion(7, ok, detail)


def _mc_totals(cfg):
    cells = range(cfg.hybrid_cells)
    out = {}
    for name, exp in (("tp", Experiment.TP), ("sp", Experiment.HYBRID_SP), ("hybrid", Experiment.HYBRID)):
        ul, dl = run_trials(cfg, exp).rates(cells)
        out[name] = float(ul.sum() + dl.sum())
    return out


def test_criterion_08_hybrid_dominance(report_criterion):
    far = make_config(HYBRID_DEFAULTS, {"circle_radius": 0.9, "trials": 100})
    near = make_config(HYBRID_DEFAULTS, {"circle_radius": 0.3, "trials": 100})
    a_far = {k: sum(v) for k, v in hybrid_sum_rates(far).items()}
    a_near = {k: sum(v) for k, v in hybrid_sum_rates(near).items()}
    m_far, m_near = _mc_totals(far), _mc_totals(near)

    uniform = make_config(HYBRID_DEFAULTS, {"scenario": "uniform", "placements": 100})
    runs = [hybrid_sum_rates(uniform, p) for p in range(uniform.placements)]
    s1 = {k: float(np.mean([sum(r[k]) for r in runs])) for k in ("tp", "sp", "hybrid")}

    checks = [
        a_far["hybrid"] >= a_far["tp"],
        a_near["hybrid"] >= a_near["sp"],
        m_far["hybrid"] >= m_far["tp"],
        m_near["hybrid"] >= m_near["sp"],
        s1["hybrid"] >= s1["tp"] >= s1["sp"],
    ]
    fmt = lambda d: "/".join(f"{d[k]:.1f}" for k in ("hybrid", "tp", "sp"))  # noqa: E731
    detail = (
        f"total rate hybrid/tp/sp: r=0.9 analytic {fmt(a_far)}, MC {fmt(m_far)}; "
        f"r=0.3 analytic {fmt(a_near)}, MC {fmt(m_near)}; uniform analytic mean {fmt(s1)}"
    )
    assert report_criterion(8, all(checks), detail)


def test_criterion_09_estimator_micro_oracles(report_criterion):
    rng = np.random.default_rng(9)
    errs = {}

    # single-cell TP, noiseless
    book = make_pilot_book(4)
    plan = FramePlan.pure_tp(1, 3, 4, 10, 10)
    h = draw_channels(np.ones((1, 1, 3)), 32, rng).h
    Y = receive_uplink(h, assemble_frames(plan, qam_mod(rng.integers(0, 2, (1, 3, 20))), book), 0.0)
    errs["tp"] = max(np.max(np.abs(estimate_tp(Y[0], book[k], 4) - h[0, 0, k])) for k in range(3))

    # SP with rho_d = 0
    split = PowerSplit.fixed(0.0)
    P = make_sp_pilot_matrix(10)
    plan = FramePlan.pure_sp(2, 2, 10, 10, split)
    h = draw_channels(rng.uniform(0.1, 1, (2, 2, 2)), 32, rng).h
    Y = receive_uplink(h, assemble_frames(plan, qam_mod(rng.integers(0, 2, (2, 2, 20))), sp_pilots=P), 0.0)
    errs["sp"] = max(
        np.max(np.abs(estimate_sp(Y[j], P.user_column(j, k, 2), 10, split.rho_p) - h[j, j, k]))
        for j in range(2)
        for k in range(2)
    )

    # hybrid SP with lambda = 0 and rho_d = 0
    plan = FramePlan.hybrid(2, 2, 2, 10, 10, [(0, 1), (1, 0)], split, lambda_tp=0.0)
    P = make_sp_pilot_matrix(8)
    Y = receive_uplink(h, assemble_frames(plan, qam_mod(rng.integers(0, 2, (2, 2, 20))), make_pilot_book(2), P), 0.0)
    errs["hybrid_sp"] = max(
        np.max(np.abs(estimate_hybrid_sp(Y[j], P.user_column(j, k, 2), 10, 2, split.rho_p) - h[j, j, k]))
        for j, k in [(0, 1), (1, 0)]
    )

    # contaminated TP equals the sum of co-pilot channels
    plan = FramePlan.pure_tp(3, 2, 2, 8, 8)
    book = make_pilot_book(2)
    h = draw_channels(rng.uniform(0.1, 1, (3, 3, 2)), 32, rng).h
    Y = receive_uplink(h, assemble_frames(plan, qam_mod(rng.integers(0, 2, (3, 2, 16))), book), 0.0)
    errs["contaminated"] = max(
        np.max(np.abs(estimate_tp(Y[j], book[m], 2) - h[j, :, m].sum(axis=0))) for j in range(3) for m in range(2)
    )
    ok = all(e <= MICRO_TOL for e in errs.values())
    detail = ", ".join(f"{k} max err={v:.1e}" for k, v in errs.items()) + f" (tol {MICRO_TOL:.0e})"
    assert report_criterion(9, ok, detail)


def _cli_csv(tmp_path, threads, argv):
    out = tmp_path / f"{threads}-{argv[1] if len(argv) > 1 else argv[0]}.csv"
    env = {**os.environ, "SIM_THREADS": str(threads)}
    cmd = [sys.executable, "-m", "pilotsim.cli", *argv, "--out", str(out), "--seed", "7"]
    subprocess.run(cmd, check=True, env=env, capture_output=True)
    return out.read_bytes()


def test_criterion_10_determinism_across_threads(tmp_path, report_criterion):
    runs = [
        ["figure", "--id", "7", "--set", "m_sweep=[16,32]", "--set", "trials=24"],
        ["figure", "--id", "5", "--set", "m_sweep=[16]", "--set", "trials=6", "--set", "placements=3"],
        ["table1", "--set", "trials=4", "--set", "M=32"],
    ]
    same = []
    for argv in runs:
        outputs = {_cli_csv(tmp_path, threads, argv) for threads in (1, 3, 8)}
        same.append(len(outputs) == 1)
    ok = all(same)
    detail = f"byte-identical CSV for SIM_THREADS in (1, 3, 8): figure 7 {same[0]}, figure 5 {same[1]}, table1 {same[2]}"
    assert report_criterion(10, ok, detail)
