"""Pilot books, superimposed-pilot matrices, power splits and UL frame assembly."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from .geometry import CellGrid


def orthogonal_matrix(n: int) -> np.ndarray:
    """``n x n`` matrix with unit-modulus entries and Gram matrix ``n * I``.

    Sylvester-Hadamard when ``n`` is a power of two, DFT otherwise.
    """
    if n < 1:
        raise ValueError("size must be at least 1")
    if n & (n - 1) == 0:
        return hadamard(n).astype(complex)
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n)


@dataclass(frozen=True)
class PilotBook:
    """Orthogonal time-multiplexed pilots; column ``b`` is sequence ``b``."""

    sequences: np.ndarray
    tau: int

    def __getitem__(self, index: int) -> np.ndarray:
        return self.sequences[:, index]


@dataclass(frozen=True)
class SpPilotMatrix:
    """Superimposed pilots: columns of ``P`` with ``P^H P = c_u I``."""

    P: np.ndarray
    c_u: int

    def column(self, index: int) -> np.ndarray:
        if not 0 <= index < self.c_u:
            raise ValueError(f"pilot column {index} out of range for length {self.c_u}")
        return self.P[:, index]

    def user_column(self, cell: int, user: int, K: int) -> np.ndarray:
        return self.column(cell * K + user)


def make_pilot_book(tau: int) -> PilotBook:
    return PilotBook(orthogonal_matrix(tau), tau)


def make_sp_pilot_matrix(c_u: int) -> SpPilotMatrix:
    return SpPilotMatrix(orthogonal_matrix(c_u), c_u)


@dataclass(frozen=True)
class PowerSplit:
    """Fractions of UL power spent on data and on superimposed pilots.

    ``rho_d_sq == 0`` is accepted as a degenerate pilot-only case used by the
    exact-recovery checks; the pilot share must stay strictly positive.
    """

    rho_d_sq: float
    rho_p_sq: float

    def __post_init__(self):
        if not 0.0 <= self.rho_d_sq < 1.0 or not 0.0 < self.rho_p_sq <= 1.0:
            raise ValueError(f"invalid power split ({self.rho_d_sq}, {self.rho_p_sq})")
        if abs(self.rho_d_sq + self.rho_p_sq - 1.0) > 4 * np.finfo(float).eps:
            raise ValueError("rho_d_sq + rho_p_sq must equal 1")

    @classmethod
    def fixed(cls, rho_d_sq: float) -> PowerSplit:
        return cls(float(rho_d_sq), 1.0 - float(rho_d_sq))

    @property
    def rho_d(self) -> float:
        return float(np.sqrt(self.rho_d_sq))

    @property
    def rho_p(self) -> float:
        return float(np.sqrt(self.rho_p_sq))


def optimal_power_split(M: int, L: int, K: int, c_u: int) -> PowerSplit:
    """Split maximising the UL sum-rate lower bound: ``rho_d^2 = 1/(1+sqrt((M+LK)/C_u))``."""
    if min(M, L, K, c_u) < 1:
        raise ValueError("M, L, K and c_u must all be at least 1")
    rho_d_sq = 1.0 / (1.0 + np.sqrt((M + L * K) / c_u))
    return PowerSplit(rho_d_sq, 1.0 - rho_d_sq)


# Linear colourings (q, r) -> (a*q + b*r) mod n of the axial hex lattice in
# which adjacent cells always differ; n = 7 gives the classic 7-cell cluster.
_REUSE_PATTERNS = {3: (1, -1), 4: (1, 2), 7: (1, 3)}


def reuse_colors(grid: CellGrid, r: int) -> np.ndarray:
    """Pilot-reuse group of every cell; cells with equal colour share pilots.

    ``r = 1`` puts all cells in a single group.
    """
    if r == 1:
        return np.zeros(grid.num_cells, dtype=int)
    if r not in _REUSE_PATTERNS:
        raise ValueError(f"unsupported reuse factor {r}; choose one of 1, 3, 4, 7")
    a, b = _REUSE_PATTERNS[r]
    return (a * grid.axial[:, 0] + b * grid.axial[:, 1]) % r


def reuse_sets(colors: np.ndarray) -> list[list[int]]:
    """Cells sharing each cell's pilot book (the cell itself included)."""
    colors = np.asarray(colors)
    return [np.flatnonzero(colors == c).tolist() for c in colors]


class Role(enum.IntEnum):
    TP = 0  # pilot for [0, tau) then data
    SP = 1  # silent for [0, tau) then data + pilot (hybrid)
    PURE_SP = 2  # data + pilot over the whole UL frame


@dataclass(frozen=True)
class FramePlan:
    """Per-user UL frame roles and pilot indices.

    ``tp_index[l, k]`` is the pilot-book index of a TP user (``-1`` otherwise);
    ``sp_index[l, k]`` is the column of the superimposed pilot matrix for SP
    users (``-1`` otherwise).
    """

    roles: np.ndarray
    tp_index: np.ndarray
    sp_index: np.ndarray
    tau: int
    c_u: int
    c_d: int
    split: PowerSplit | None = None
    lambda_tp: float = 1.0
    colors: np.ndarray = field(default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.roles.shape

    @property
    def coherence(self) -> int:
        return self.c_u + self.c_d

    @property
    def sp_length(self) -> int:
        """Length of the superimposed-pilot window."""
        return self.c_u if np.any(self.roles == Role.PURE_SP) else self.c_u - self.tau

    def data_mask(self) -> np.ndarray:
        """``(L, K, c_u)`` boolean mask of UL symbols carrying data."""
        t = np.arange(self.c_u)
        start = np.where(self.roles == Role.PURE_SP, 0, self.tau)
        return t[None, None, :] >= start[..., None]

    def data_amplitude(self) -> np.ndarray:
        """Amplitude applied to data symbols, ``sqrt(lambda)`` or ``rho_d``."""
        amp = np.full(self.roles.shape, np.sqrt(self.lambda_tp))
        if self.split is not None:
            amp[self.roles != Role.TP] = self.split.rho_d
        return amp

    def validate(self) -> None:
        L, K = self.roles.shape
        tp = self.roles == Role.TP
        if np.any(tp):
            if self.tau < 1 or self.tau > self.c_u:
                raise ValueError("TP users need 1 <= tau <= c_u")
            if np.any(self.tp_index[tp] < 0) or np.any(self.tp_index[tp] >= self.tau):
                raise ValueError("TP pilot index outside the pilot book")
            colors = np.zeros(L, dtype=int) if self.colors is None else self.colors
            for cell in range(L):
                idx = self.tp_index[cell][tp[cell]]
                if len(np.unique(idx)) != len(idx):
                    raise ValueError(f"pilot index collision inside cell {cell}")
            # different reuse groups must draw from disjoint parts of the book
            used = {}
            for cell in range(L):
                for b in self.tp_index[cell][tp[cell]]:
                    if used.setdefault(int(b), colors[cell]) != colors[cell]:
                        raise ValueError(f"pilot {b} shared by two reuse groups")
        sp = self.roles != Role.TP
        if np.any(sp):
            if self.split is None:
                raise ValueError("SP users need a power split")
            if np.any(self.roles == Role.SP) and self.tau >= self.c_u:
                raise ValueError("hybrid SP users need tau < c_u")
            idx = self.sp_index[sp]
            if np.any(idx < 0) or np.any(idx >= self.sp_length):
                raise ValueError(
                    f"superimposed pilot columns exceed the available {self.sp_length} "
                    f"(need distinct columns for {int(sp.sum())} users)"
                )
            if len(np.unique(idx)) != len(idx):
                raise ValueError("superimposed pilot columns must be distinct")

    @classmethod
    def pure_tp(cls, L, K, tau, c_u, c_d, colors=None, lambda_tp=1.0) -> FramePlan:
        colors = np.zeros(L, dtype=int) if colors is None else np.asarray(colors)
        tp_index = colors[:, None] * K + np.arange(K)[None, :]
        plan = cls(
            roles=np.full((L, K), Role.TP),
            tp_index=tp_index,
            sp_index=np.full((L, K), -1),
            tau=tau,
            c_u=c_u,
            c_d=c_d,
            lambda_tp=lambda_tp,
            colors=colors,
        )
        plan.validate()
        return plan

    @classmethod
    def pure_sp(cls, L, K, c_u, c_d, split: PowerSplit) -> FramePlan:
        plan = cls(
            roles=np.full((L, K), Role.PURE_SP),
            tp_index=np.full((L, K), -1),
            sp_index=np.arange(L * K).reshape(L, K),
            tau=0,
            c_u=c_u,
            c_d=c_d,
            split=split,
        )
        plan.validate()
        return plan

    @classmethod
    def hybrid(cls, L, K, tau, c_u, c_d, sp_users, split, colors=None, lambda_tp=1.0) -> FramePlan:
        """TP users keep their reuse-group pilot; users in ``sp_users`` go silent for ``tau``."""
        colors = np.zeros(L, dtype=int) if colors is None else np.asarray(colors)
        roles = np.full((L, K), Role.TP)
        for cell, user in sp_users:
            roles[cell, user] = Role.SP
        tp_index = np.where(roles == Role.TP, colors[:, None] * K + np.arange(K)[None, :], -1)
        sp_index = np.where(roles == Role.SP, np.arange(L * K).reshape(L, K), -1)
        plan = cls(
            roles=roles,
            tp_index=tp_index,
            sp_index=sp_index,
            tau=tau,
            c_u=c_u,
            c_d=c_d,
            split=split,
            lambda_tp=lambda_tp,
            colors=colors,
        )
        plan.validate()
        return plan


def assemble_frames(
    plan: FramePlan,
    data: np.ndarray,
    book: PilotBook | None = None,
    sp_pilots: SpPilotMatrix | None = None,
) -> np.ndarray:
    """Build the ``(L, K, c_u)`` UL transmit vectors.

    ``data`` has shape ``(L, K, c_u)``; only the data slots of each user's
    frame are read (see :meth:`FramePlan.data_mask`).
    """
    L, K = plan.shape
    if data.shape != (L, K, plan.c_u):
        raise ValueError(f"data must have shape {(L, K, plan.c_u)}, got {data.shape}")
    tau = plan.tau
    s = np.zeros((L, K, plan.c_u), dtype=complex)

    tp = plan.roles == Role.TP
    if np.any(tp):
        if book is None or book.tau != tau:
            raise ValueError("TP users need a pilot book of length tau")
        s[tp, :tau] = book.sequences[:, plan.tp_index[tp]].T
        s[tp, tau:] = np.sqrt(plan.lambda_tp) * data[tp, tau:]

    sp = plan.roles != Role.TP
    if np.any(sp):
        if sp_pilots is None or sp_pilots.c_u != plan.sp_length:
            raise ValueError(f"SP users need a pilot matrix of length {plan.sp_length}")
        rho_d, rho_p = plan.split.rho_d, plan.split.rho_p
        start = plan.c_u - plan.sp_length
        pilots = sp_pilots.P[:, plan.sp_index[sp]].T
        s[sp, start:] = rho_d * data[sp, start:] + rho_p * pilots
    return s
