"""Closed-form MSE, CRLB, SINR and rate expressions for TP, SP and hybrid systems.

All functions take a :class:`MetricInputs` bundle and the index ``(j, m)`` of
user ``m`` in cell ``j``. An empty interference sum yields ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .pilots import PowerSplit, optimal_power_split

User = tuple[int, int]


@dataclass(frozen=True)
class MetricInputs:
    beta: np.ndarray  # (L, L, K) effective gains
    M: int
    c_u: int
    c_d: int
    tau: int
    sigma_sq: float
    split: PowerSplit
    colors: np.ndarray | None = None  # reuse group per cell; None means r = 1

    def __post_init__(self):
        L, L2, _ = self.beta.shape
        if L != L2:
            raise ValueError("beta must be indexed [bs, cell, user] with matching cell axes")
        if self.colors is not None and len(self.colors) != L:
            raise ValueError("one reuse colour per cell is required")

    @property
    def L(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[2]

    def co_pilot_cells(self, j: int) -> np.ndarray:
        """Cells ``l != j`` sharing cell ``j``'s pilot book."""
        if self.colors is None:
            mask = np.ones(self.L, dtype=bool)
        else:
            mask = np.asarray(self.colors) == self.colors[j]
        mask[j] = False
        return np.flatnonzero(mask)

    def with_optimal_split(self) -> MetricInputs:
        split = optimal_power_split(self.M, self.L, self.K, self.c_u)
        return MetricInputs(self.beta, self.M, self.c_u, self.c_d, self.tau, self.sigma_sq, split, self.colors)


def _ratio(num: float, den: float) -> float:
    return math.inf if den == 0 else num / den


def mse_tp(inputs: MetricInputs, j: int, m: int) -> float:
    """Pilot contamination plus averaged noise, per antenna."""
    cells = inputs.co_pilot_cells(j)
    return float(inputs.beta[j, cells, m].sum()) + inputs.sigma_sq / inputs.tau


def mse_sp(inputs: MetricInputs, j: int, m: int) -> float:
    s = inputs.split
    data_term = s.rho_d_sq / (inputs.c_u * s.rho_p_sq) * float(inputs.beta[j].sum())
    return data_term + inputs.sigma_sq / (s.rho_p_sq * inputs.c_u)


def mse_sp_optimal(inputs: MetricInputs, j: int, m: int) -> float:
    """SP MSE written directly in terms of the optimal split."""
    L, K, c_u = inputs.L, inputs.K, inputs.c_u
    rho_p_sq = 1.0 / (1.0 + math.sqrt(c_u / (inputs.M + L * K)))
    return float(inputs.beta[j].sum()) / math.sqrt((inputs.M + L * K) * c_u) + inputs.sigma_sq / (rho_p_sq * c_u)


class Crlb(NamedTuple):
    exact: float  # 1 / (c_u / sigma^2 + 1 / beta), per antenna
    approx: float  # sigma^2 / c_u
    approx_valid: bool  # sigma^2 / c_u << beta (at least a factor 100)


def crlb_sp(inputs: MetricInputs, j: int, m: int) -> Crlb:
    """Bayesian CRLB on the SP channel estimate, normalised by ``M``."""
    beta = float(inputs.beta[j, j, m])
    if beta <= 0:
        raise ValueError("serving gain must be positive")
    s2, c_u = inputs.sigma_sq, inputs.c_u
    if s2 == 0:
        return Crlb(0.0, 0.0, True)
    exact = 1.0 / (c_u / s2 + 1.0 / beta)
    return Crlb(exact, s2 / c_u, s2 / c_u <= 0.01 * beta)


def dl_sinr_tp(inputs: MetricInputs, j: int, m: int) -> float:
    """Large-M DL SINR with contaminated TP estimates."""
    cells = inputs.co_pilot_cells(j)
    return _ratio(inputs.beta[j, j, m] ** 2, float((inputs.beta[cells, j, m] ** 2).sum()))


def _sp_dl_coefficient(inputs: MetricInputs) -> float:
    s = inputs.split
    return s.rho_d_sq * inputs.K / (inputs.c_u * s.rho_p_sq)


def sp_dl_interference_power(inputs: MetricInputs, j: int, m: int) -> float:
    """Mean DL interference power ``E|i|^2`` seen by user ``(j, m)`` with SP estimates."""
    beta = inputs.beta
    a = _sp_dl_coefficient(inputs)
    b_to_user = beta[:, j, m]  # beta_{l, j, m} for every BS l
    check = beta.sum(axis=(1, 2))  # sum_{n,p} beta_{l, n, p}
    serving_sum = beta[np.arange(inputs.L), np.arange(inputs.L), :].sum(axis=1)  # sum_k beta_{l,l,k}
    large_m = a * float((b_to_user**2).sum())
    finite_m = a * float((b_to_user * check).sum()) + float((b_to_user * serving_sum).sum()) + inputs.sigma_sq
    return large_m + finite_m / inputs.M


def dl_sinr_sp_exact(inputs: MetricInputs, j: int, m: int) -> float:
    return _ratio(inputs.beta[j, j, m] ** 2, sp_dl_interference_power(inputs, j, m))


def dl_sinr_sp_asymptotic(inputs: MetricInputs, j: int, m: int) -> float:
    a = _sp_dl_coefficient(inputs)
    return _ratio(inputs.beta[j, j, m] ** 2, a * float((inputs.beta[:, j, m] ** 2).sum()))


def dl_sinr_sp_optimal(inputs: MetricInputs, j: int, m: int) -> float:
    """Large-M SP DL SINR written directly in terms of the optimal split."""
    num = math.sqrt(inputs.c_u * (inputs.M + inputs.L * inputs.K)) * inputs.beta[j, j, m] ** 2
    return _ratio(num, inputs.K * float((inputs.beta[:, j, m] ** 2).sum()))


def rate_dl(sinr: float, c_u: int, c_d: int) -> float:
    """DL rate in bit/s/Hz, ``C_d / (C_u + C_d) * log2(1 + SINR)``."""
    if sinr < 0:
        raise ValueError("SINR must be non-negative")
    return c_d / (c_u + c_d) * math.log2(1.0 + sinr)


class HybridSinr(NamedTuple):
    scheme: str  # "tp" or "sp"
    ul: float
    dl: float


def hybrid_sinrs(inputs: MetricInputs, u_tp: Iterable[User], u_sp: Iterable[User], j: int, m: int) -> HybridSinr:
    """Large-M UL/DL SINRs of user ``(j, m)`` in a hybrid system.

    SP sums run over every SP user including ``(j, m)`` itself, and the TP DL
    interference runs over every co-pilot cell regardless of its users'
    schemes, both exactly as the closed forms are written.
    """
    u_tp, u_sp = set(u_tp), set(u_sp)
    beta = inputs.beta
    own = beta[j, j, m] ** 2
    if (j, m) in u_tp:
        cells = inputs.co_pilot_cells(j)
        ul_den = sum(beta[j, l, m] ** 2 for l in cells if (l, m) in u_tp)
        dl_den = float((beta[cells, j, m] ** 2).sum())
        return HybridSinr("tp", _ratio(own, ul_den), _ratio(own, dl_den))
    if (j, m) not in u_sp:
        raise ValueError(f"user {(j, m)} is in neither set")
    if inputs.tau >= inputs.c_u:
        raise ValueError("hybrid SP users need tau < c_u")
    s = inputs.split
    scale = 1.0 / ((inputs.c_u - inputs.tau) * s.rho_p_sq)
    ul_den = scale * sum(beta[j, l, k] ** 2 for l, k in u_sp)
    dl_den = s.rho_d_sq * scale * sum(beta[l, j, m] ** 2 for l, _ in u_sp)
    return HybridSinr("sp", _ratio(own, ul_den), _ratio(own, dl_den))


def hybrid_rates(inputs: MetricInputs, u_tp: Iterable[User], u_sp: Iterable[User]) -> tuple[np.ndarray, np.ndarray]:
    """Per-user UL and DL rates, ``(L, K)`` each, for a hybrid partition.

    UL data occupies ``c_u - tau`` symbols for both schemes; the DL always
    carries ``c_d`` symbols of the ``c_u + c_d`` coherence interval.
    """
    u_tp, u_sp = set(u_tp), set(u_sp)
    C = inputs.c_u + inputs.c_d
    ul = np.zeros((inputs.L, inputs.K))
    dl = np.zeros((inputs.L, inputs.K))
    for j in range(inputs.L):
        for m in range(inputs.K):
            s = hybrid_sinrs(inputs, u_tp, u_sp, j, m)
            ul[j, m] = (inputs.c_u - inputs.tau) / C * math.log2(1.0 + s.ul)
            dl[j, m] = inputs.c_d / C * math.log2(1.0 + s.dl)
    return ul, dl


def metric_table(inputs: MetricInputs, cells: Iterable[int] | None = None) -> list[dict]:
    """Every single-scheme metric for each user of ``cells`` (all cells by default)."""
    rows = []
    cells = range(inputs.L) if cells is None else cells
    for j in cells:
        for m in range(inputs.K):
            crlb = crlb_sp(inputs, j, m)
            tp = dl_sinr_tp(inputs, j, m)
            sp_exact = dl_sinr_sp_exact(inputs, j, m)
            sp_asym = dl_sinr_sp_asymptotic(inputs, j, m)
            rows.append(
                {
                    "cell": j,
                    "user": m,
                    "mse_tp": mse_tp(inputs, j, m),
                    "mse_sp": mse_sp(inputs, j, m),
                    "crlb": crlb.exact,
                    "crlb_approx": crlb.approx,
                    "dl_sinr_tp": tp,
                    "dl_sinr_sp_exact": sp_exact,
                    "dl_sinr_sp_asym": sp_asym,
                    "rate_dl_tp": rate_dl(tp, inputs.c_u, inputs.c_d),
                    "rate_dl_sp_exact": rate_dl(sp_exact, inputs.c_u, inputs.c_d),
                    "rate_dl_sp_asym": rate_dl(sp_asym, inputs.c_u, inputs.c_d),
                    "rho_d_sq": inputs.split.rho_d_sq,
                    "rho_p_sq": inputs.split.rho_p_sq,
                }
            )
    return rows
