"""Experiment protocols: analytic tables, figure sweeps, the hybrid table and partitions.

Every command takes a dict of user-supplied config values, lays them over the
command's own defaults and returns an :class:`Output` with CSV header/rows and
a small JSON-friendly summary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .config import ConfigError, SystemConfig
from .geometry import Scenario, apply_power_control, build_hex_grid, large_scale_gains
from .metrics import (
    MetricInputs,
    crlb_sp,
    dl_sinr_sp_exact,
    dl_sinr_tp,
    hybrid_rates,
    metric_table,
    mse_sp,
    mse_tp,
    rate_dl,
)
from .montecarlo import Experiment, build_layout, hybrid_partition, run_trials
from .pilots import reuse_colors


@dataclass
class Output:
    header: list[str]
    rows: list[list[Any]]
    summary: dict[str, Any] = field(default_factory=dict)


# defaults of the hybrid experiments: 19 cells, 7 reported, short coherence block
HYBRID_DEFAULTS = {
    "tiers": 2,
    "L": 19,
    "partition_cells": 7,
    "K": 5,
    "M": 300,
    "c_u": 40,
    "c_d": 40,
    "reuse_r": 1,
    "omega_sp": 10.0,
    "xi_ul": 0.5,
    "scenario": "circle",
    "circle_radius": 0.9,
}
RADII = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
M_SWEEP = (32, 64, 128, 256, 512)

FIGURE_DEFAULTS: dict[int, dict[str, Any]] = {
    3: {"scenario": "uniform", "placements": 200, "m_sweep": [300, 1000, 10000]},
    4: {"scenario": "circle", "m_sweep": list(M_SWEEP), "trials": 200},
    5: {"scenario": "uniform", "m_sweep": list(M_SWEEP), "trials": 20, "placements": 20},
    6: {"scenario": "circle", "m_sweep": list(M_SWEEP), "trials": 200},
    7: {"scenario": "circle", "m_sweep": list(M_SWEEP), "trials": 200},
    8: {"scenario": "circle", "M": 300, "radius_sweep": list(RADII), "trials": 100},
    9: {"scenario": "uniform", "c_u": 70, "k_sweep": [2, 4, 6, 8, 10], "trials": 20, "placements": 10},
    10: {"scenario": "uniform", "c_u": 70, "k_sweep": [2, 4, 6, 8, 10], "trials": 20, "placements": 10},
    11: {**HYBRID_DEFAULTS, "radius_sweep": list(RADII)},
    12: {**HYBRID_DEFAULTS, "radius_sweep": list(RADII)},
    13: {**HYBRID_DEFAULTS, "radius_sweep": list(RADII), "trials": 50},
    14: {**HYBRID_DEFAULTS, "radius_sweep": list(RADII), "trials": 50},
}
TABLE1_DEFAULTS = {**HYBRID_DEFAULTS, "trials": 200}
ANTENNAS_PER_USER = 50  # M / K in the user-count sweeps


def make_config(defaults: dict[str, Any], values: dict[str, Any]) -> SystemConfig:
    merged = {**defaults, **values}
    if "tiers" in values and "L" not in values:
        merged.pop("L", None)
    return SystemConfig.from_dict(merged)


def metric_inputs(config: SystemConfig, sweep: int | None = None, placement: int = 0, M: int | None = None) -> MetricInputs:
    """Closed-form inputs for one layout of ``config`` (unit ``omega`` power control)."""
    grid = build_hex_grid(config.tiers, config.cell_radius)
    layout = build_layout(config, grid, placement, sweep)
    gains = apply_power_control(large_scale_gains(grid, layout, config.path_loss_exponent), config.omega)
    M = config.M if M is None else M
    colors = reuse_colors(grid, config.reuse_r) if config.reuse_r > 1 else None
    return MetricInputs(gains.beta, M, config.c_u, config.c_d, config.training_length, config.sigma_sq, config.split(M), colors)


# ---------------------------------------------------------------- analytic


def cmd_analytic(values: dict[str, Any]) -> Output:
    config = make_config({}, values)
    inputs = metric_inputs(config)
    rows = metric_table(inputs)
    header = list(rows[0])
    return Output(header, [[r[h] for h in header] for r in rows], {"M": config.M})


# ---------------------------------------------------------------- single-scheme figures


def _sweep(config: SystemConfig, name: str, fallback) -> tuple:
    values = getattr(config, name)
    return tuple(values) if values else tuple(fallback)


def fig_sinr_cdf(config: SystemConfig) -> Output:
    """Empirical CDF over placements of the reference-cell closed-form DL SINR."""
    rows = []
    for M in _sweep(config, "m_sweep", (300, 1000, 10000)):
        samples = {"tp": [], "sp": []}
        for p in range(config.placements):
            inputs = metric_inputs(config, placement=p, M=M)
            for m in range(config.K):
                samples["tp"].append(dl_sinr_tp(inputs, 0, m))
                samples["sp"].append(dl_sinr_sp_exact(inputs, 0, m))
        for scheme, vals in samples.items():
            vals = np.sort(10 * np.log10(vals))
            cdf = np.arange(1, len(vals) + 1) / len(vals)
            rows += [[float(v), float(c), scheme, M] for v, c in zip(vals, cdf)]
    return Output(["sinr_db", "cdf_probability", "scheme", "M"], rows)


def _mc_pair(config: SystemConfig, sweep: int, threads, estimation_only: bool = False) -> tuple:
    kw = {"sweep": sweep, "threads": threads, "estimation_only": estimation_only}
    return run_trials(config, Experiment.TP, **kw), run_trials(config, Experiment.SP, **kw)


def fig_rate_vs_m(config: SystemConfig, threads=None) -> Output:
    rows = []
    for i, M in enumerate(_sweep(config, "m_sweep", M_SWEEP)):
        cfg = config.replace(M=M)
        inputs = metric_inputs(cfg)
        tp_a = np.mean([rate_dl(dl_sinr_tp(inputs, 0, m), cfg.c_u, cfg.c_d) for m in range(cfg.K)])
        sp_a = np.mean([rate_dl(dl_sinr_sp_exact(inputs, 0, m), cfg.c_u, cfg.c_d) for m in range(cfg.K)])
        tp, sp = _mc_pair(cfg, i, threads)
        rows.append([M, float(tp_a), float(sp_a), float(tp.rates([0])[1].mean()), float(sp.rates([0])[1].mean())])
    header = ["M", "rate_tp_analytic_bps_hz", "rate_sp_analytic_bps_hz", "rate_tp_mc_bps_hz", "rate_sp_mc_bps_hz"]
    return Output(header, rows)


def fig_dl_ber_vs_m(config: SystemConfig, threads=None) -> Output:
    rows = []
    for i, M in enumerate(_sweep(config, "m_sweep", M_SWEEP)):
        tp, sp = _mc_pair(config.replace(M=M), i, threads)
        rows.append([M, tp.ber("dl", [0]), sp.ber("dl", [0])])
    return Output(["M", "ber_dl_tp_probability", "ber_dl_sp_probability"], rows)


def fig_mse_vs_m(config: SystemConfig, threads=None) -> Output:
    rows = []
    for i, M in enumerate(_sweep(config, "m_sweep", M_SWEEP)):
        cfg = config.replace(M=M)
        inputs = metric_inputs(cfg)
        tp, sp = _mc_pair(cfg, i, threads, estimation_only=True)
        rows.append(
            [
                M,
                mse_sp(inputs, 0, 0),
                float(sp.mean["mse"][0].mean()),
                mse_tp(inputs, 0, 0),
                float(tp.mean["mse"][0].mean()),
                crlb_sp(inputs, 0, 0).exact,
            ]
        )
    return Output(["M", "mse_sp_analytic", "mse_sp_mc", "mse_tp_analytic", "mse_tp_mc", "crlb"], rows)


def fig_dl_ber_vs_radius(config: SystemConfig, threads=None) -> Output:
    rows = []
    for i, radius in enumerate(_sweep(config, "radius_sweep", RADII)):
        tp, sp = _mc_pair(config.replace(circle_radius=radius), i, threads)
        rows.append([radius, tp.ber("dl", [0]), sp.ber("dl", [0])])
    return Output(["radius_km", "ber_dl_tp_probability", "ber_dl_sp_probability"], rows)


def _ber_vs_k(config: SystemConfig, link: str, threads=None) -> Output:
    rows = []
    for i, K in enumerate(_sweep(config, "k_sweep", (2, 4, 6, 8, 10))):
        if config.L * K > config.c_u:
            raise ConfigError(f"K={K} needs L*K <= c_u={config.c_u} for superimposed pilots")
        tp, sp = _mc_pair(config.replace(K=K, M=ANTENNAS_PER_USER * K), i, threads)
        rows.append([K, tp.ber(link, [0]), sp.ber(link, [0])])
    return Output(["K", f"ber_{link}_tp_probability", f"ber_{link}_sp_probability"], rows)


# ---------------------------------------------------------------- hybrid


HYBRID_SCHEMES = ("tp", "sp", "hybrid")


def hybrid_sum_rates(config: SystemConfig, placement: int = 0, sweep: int | None = None) -> dict[str, tuple[float, float]]:
    """Closed-form UL and DL sum rates over the reported cells for each scheme.

    ``tp`` keeps every user on orthogonal pilots, ``sp`` moves every reported
    user to superimposed pilots and ``hybrid`` uses the greedy partition; the
    outer cells always stay on orthogonal pilots.
    """
    grid = build_hex_grid(config.tiers, config.cell_radius)
    layout = build_layout(config, grid, placement, sweep)
    raw = large_scale_gains(grid, layout, config.path_loss_exponent)
    colors = reuse_colors(grid, config.reuse_r)
    P, K, tau = config.hybrid_cells, config.K, config.training_length
    window = config.c_u - tau
    split = config.split(config.M, P, window)
    everyone = {(l, k) for l in range(config.L) for k in range(K)}
    central = {(l, k) for l in range(P) for k in range(K)}
    partition = hybrid_partition(config, raw, colors, split)
    sp_sets = {"tp": set(), "sp": central, "hybrid": set(partition.u_sp)}
    out = {}
    for scheme, u_sp in sp_sets.items():
        omega = np.full((config.L, K), config.omega)
        for l, k in u_sp:
            omega[l, k] = config.omega_sp
        beta = apply_power_control(raw, omega).beta
        inputs = MetricInputs(beta, config.M, config.c_u, config.c_d, tau, config.sigma_sq, split, colors if config.reuse_r > 1 else None)
        ul, dl = hybrid_rates(inputs, everyone - u_sp, u_sp)
        out[scheme] = (float(ul[:P].sum()), float(dl[:P].sum()))
    return out


def _mean_hybrid_rates(config: SystemConfig, sweep: int | None) -> dict[str, tuple[float, float]]:
    placements = config.placements if Scenario(config.scenario) is Scenario.UNIFORM else 1
    runs = [hybrid_sum_rates(config, p, sweep) for p in range(placements)]
    return {s: tuple(float(np.mean([r[s][i] for r in runs])) for i in range(2)) for s in HYBRID_SCHEMES}


def _sum_rate_vs_radius(config: SystemConfig, link: str) -> Output:
    idx = 0 if link == "ul" else 1
    rows = []
    for i, radius in enumerate(_sweep(config, "radius_sweep", RADII)):
        rates = _mean_hybrid_rates(config.replace(circle_radius=radius), i)
        rows.append([radius] + [rates[s][idx] for s in HYBRID_SCHEMES])
    return Output(["radius_km"] + [f"sum_rate_{link}_{s}_bps_hz" for s in HYBRID_SCHEMES], rows)


_HYBRID_EXPERIMENTS = {"tp": Experiment.TP, "sp": Experiment.HYBRID_SP, "hybrid": Experiment.HYBRID}


def _hybrid_reports(config: SystemConfig, sweep: int | None, threads) -> dict:
    return {s: run_trials(config, e, sweep=sweep, threads=threads) for s, e in _HYBRID_EXPERIMENTS.items()}


def _hybrid_ber_vs_radius(config: SystemConfig, link: str, threads=None) -> Output:
    cells = range(config.hybrid_cells)
    rows = []
    for i, radius in enumerate(_sweep(config, "radius_sweep", RADII)):
        reports = _hybrid_reports(config.replace(circle_radius=radius), i, threads)
        rows.append([radius] + [reports[s].ber(link, cells) for s in HYBRID_SCHEMES])
    return Output(["radius_km"] + [f"ber_{link}_{s}_probability" for s in HYBRID_SCHEMES], rows)


def cmd_table1(values: dict[str, Any], threads=None) -> Output:
    """UL/DL sum rates (Monte Carlo SINR) and BERs of the three schemes over the reported cells."""
    config = make_config(TABLE1_DEFAULTS, values)
    cells = range(config.hybrid_cells)
    reports = _hybrid_reports(config, None, threads)
    rows = []
    for scheme, rep in reports.items():
        ul, dl = rep.rates(cells)
        rows.append([scheme, float(ul.sum()), float(dl.sum()), float(ul.sum() + dl.sum()), rep.ber("ul", cells), rep.ber("dl", cells)])
    header = ["scheme", "ul_rate_bps_hz", "dl_rate_bps_hz", "total_rate_bps_hz", "ul_ber_probability", "dl_ber_probability"]
    n_sp = len(reports["hybrid"].partitions[0].u_sp) if reports["hybrid"].partitions[0] else 0
    return Output(header, rows, {"trials": config.trials, "hybrid_sp_users": n_sp})


def cmd_partition(values: dict[str, Any]) -> Output:
    """Greedy TP/SP partition of the reported cells for one layout."""
    config = make_config(HYBRID_DEFAULTS, values)
    grid = build_hex_grid(config.tiers, config.cell_radius)
    layout = build_layout(config, grid)
    raw = large_scale_gains(grid, layout, config.path_loss_exponent)
    colors = reuse_colors(grid, config.reuse_r)
    split = config.split(config.M, config.hybrid_cells, config.c_u - config.training_length)
    result = hybrid_partition(config, raw, colors, split)
    rows = [[l, k, "sp" if (l, k) in result.u_sp else "tp"] for l in range(config.hybrid_cells) for k in range(config.K)]
    summary = {"final_cost": result.final_cost, "moves": len(result.cost_trace) - 1, "sp_users": len(result.u_sp)}
    return Output(["cell", "user", "scheme"], rows, summary)


# ---------------------------------------------------------------- dispatch


def _figure_runner(fig: int) -> Callable[[SystemConfig, Any], Output]:
    return {
        3: lambda c, t: fig_sinr_cdf(c),
        4: fig_rate_vs_m,
        5: fig_dl_ber_vs_m,
        6: fig_dl_ber_vs_m,
        7: fig_mse_vs_m,
        8: fig_dl_ber_vs_radius,
        9: lambda c, t: _ber_vs_k(c, "dl", t),
        10: lambda c, t: _ber_vs_k(c, "ul", t),
        11: lambda c, t: _sum_rate_vs_radius(c, "ul"),
        12: lambda c, t: _sum_rate_vs_radius(c, "dl"),
        13: lambda c, t: _hybrid_ber_vs_radius(c, "ul", t),
        14: lambda c, t: _hybrid_ber_vs_radius(c, "dl", t),
    }[fig]


FIGURES = tuple(sorted(FIGURE_DEFAULTS))


def cmd_figure(fig: int, values: dict[str, Any], threads=None) -> Output:
    if fig not in FIGURE_DEFAULTS:
        raise ConfigError(f"unknown figure {fig}; valid ids are {', '.join(map(str, FIGURES))}")
    config = make_config(FIGURE_DEFAULTS[fig], values)
    out = _figure_runner(fig)(config, threads)
    out.summary.setdefault("figure", fig)
    if fig in (5, 9, 10):
        out.summary["note"] = "baselines limited to TP least squares and non-iterative SP"
    return out
