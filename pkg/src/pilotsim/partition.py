"""Interference cost model and user partitioning into TP and SP sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .pilots import PowerSplit

User = tuple[int, int]


@dataclass(frozen=True)
class CostWeights:
    xi_ul: float = 0.5
    xi_dl: float = 0.5

    def __post_init__(self):
        if self.xi_ul < 0 or self.xi_dl < 0 or abs(self.xi_ul + self.xi_dl - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to one")

    @classmethod
    def from_ul(cls, xi_ul: float) -> CostWeights:
        return cls(float(xi_ul), 1.0 - float(xi_ul))


@dataclass(frozen=True)
class CostModel:
    """Everything the cost functions need besides the two user sets."""

    beta: np.ndarray  # (L, L, K)
    c_u: int
    tau: int
    split: PowerSplit
    weights: CostWeights = field(default_factory=CostWeights)
    colors: np.ndarray | None = None
    movable: frozenset[User] | None = None  # users allowed to switch to SP; all by default

    def __post_init__(self):
        if self.tau >= self.c_u:
            raise ValueError("SP users need tau < c_u")
        if self.movable is not None and not set(self.movable) <= set(self.users):
            raise ValueError("movable users must exist in the gain tensor")

    @property
    def users(self) -> list[User]:
        L, _, K = self.beta.shape
        return [(l, k) for l in range(L) for k in range(K)]

    @property
    def candidates(self) -> list[User]:
        return self.users if self.movable is None else sorted(self.movable)

    def same_group(self, j: int, l: int) -> bool:
        return self.colors is None or self.colors[j] == self.colors[l]


@dataclass
class PartitionResult:
    u_tp: set[User]
    u_sp: set[User]
    cost_trace: list[tuple[int, float]]
    final_cost: float

    def sorted_sp(self) -> list[User]:
        return sorted(self.u_sp)


def interference_tp(model: CostModel, j: int, m: int, u_tp: set[User]) -> tuple[float, float]:
    """UL and DL interference contributed by ``(j, m)`` as a TP user."""
    beta = model.beta
    ul = dl = 0.0
    for l in range(beta.shape[0]):
        if l != j and model.same_group(j, l) and (l, m) in u_tp:
            ul += beta[l, j, m] ** 2
            dl += beta[l, j, m] ** 2
    return ul, dl


def cost_tp(model: CostModel, j: int, m: int, u_tp: set[User]) -> float:
    ul, dl = interference_tp(model, j, m, u_tp)
    return model.weights.xi_ul * ul + model.weights.xi_dl * dl


def interference_sp(model: CostModel, j: int, m: int, u_sp: set[User]) -> tuple[float, float]:
    """UL and DL interference contributed by ``(j, m)`` as an SP user."""
    s = model.split
    ul = sum(model.beta[l, j, m] ** 2 for l, _ in u_sp) / ((model.c_u - model.tau) * s.rho_p_sq)
    return ul, s.rho_d_sq * ul


def cost_sp(model: CostModel, j: int, m: int, u_sp: set[User]) -> float:
    ul, dl = interference_sp(model, j, m, u_sp)
    return model.weights.xi_ul * ul + model.weights.xi_dl * dl


def total_cost(model: CostModel, u_tp: set[User], u_sp: set[User]) -> float:
    total = 0.0
    for j, m in model.users:
        if (j, m) in u_tp:
            total += cost_tp(model, j, m, u_tp)
        elif (j, m) in u_sp:
            total += cost_sp(model, j, m, u_sp)
    return total


def greedy_partition(model: CostModel) -> PartitionResult:
    """Greedy descent from the all-TP partition.

    Each step moves the movable TP user with the largest TP cost (ties broken
    by the smallest ``(cell, user)``) to the SP set and keeps the move when
    the total cost does not increase.
    """
    u_tp = set(model.users)
    u_sp: set[User] = set()
    cost = total_cost(model, u_tp, u_sp)
    trace = [(0, cost)]
    movable = set(model.candidates)
    for step in range(1, len(movable) + 1):
        pool = sorted(u_tp & movable)
        if not pool:
            break
        # max over sorted users keeps the first (smallest) index on ties
        candidate = max(pool, key=lambda u: cost_tp(model, *u, u_tp))
        new_tp = u_tp - {candidate}
        new_sp = u_sp | {candidate}
        new_cost = total_cost(model, new_tp, new_sp)
        if new_cost > cost:
            break
        u_tp, u_sp, cost = new_tp, new_sp, new_cost
        trace.append((step, cost))
    return PartitionResult(u_tp, u_sp, trace, cost)


def brute_force_partition(model: CostModel, max_users: int = 20) -> PartitionResult:
    """Exhaustive minimum of the total cost over all ``2^|U|`` splits of the movable users.

    Ties go to the lexicographically smallest sorted SP set.
    """
    users = model.candidates
    if len(users) > max_users:
        raise ValueError(f"{len(users)} users exceed the exhaustive-search limit of {max_users}")
    best_cost, best_sp = np.inf, None
    everyone = set(model.users)
    for r in range(len(users) + 1):
        for combo in itertools.combinations(users, r):
            u_sp = set(combo)
            c = total_cost(model, everyone - u_sp, u_sp)
            key = sorted(u_sp)
            if c < best_cost or (c == best_cost and key < best_sp):
                best_cost, best_sp = c, key
    u_sp = set(best_sp)
    return PartitionResult(everyone - u_sp, u_sp, [(0, best_cost)], best_cost)
