"""UL reception and least-squares channel estimators.

The single-vector functions (``estimate_tp`` and friends) operate on one BS's
received matrix ``Y`` of shape ``(M, c_u)`` or on a stack ``(..., M, c_u)``.
:func:`selector_matrix` packs every user's estimator into one correlation
vector so that the Monte Carlo engine can estimate all channels at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ChannelRealization, complex_normal
from .pilots import FramePlan, PilotBook, Role, SpPilotMatrix


@dataclass(frozen=True)
class UplinkObservation:
    Y: np.ndarray  # (L, M, c_u)
    sigma_sq: float

    def __getitem__(self, bs: int) -> np.ndarray:
        return self.Y[bs]


def receive_uplink(
    channels: ChannelRealization | np.ndarray,
    frames: np.ndarray,
    sigma_sq: float,
    rng: np.random.Generator | None = None,
) -> UplinkObservation:
    """Received UL block at every BS: ``Y_j = sum_{l,k} h_{j,l,k} s_{l,k}^T + W_j``."""
    h = channels.h if isinstance(channels, ChannelRealization) else np.asarray(channels)
    L, L2, K, M = h.shape
    if frames.ndim != 3 or frames.shape[:2] != (L2, K):
        raise ValueError(f"frames must have shape ({L2}, {K}, c_u), got {frames.shape}")
    c_u = frames.shape[-1]
    # (L, M, L2*K) @ (L2*K, c_u)
    H = h.reshape(L, L2 * K, M).transpose(0, 2, 1)
    Y = H @ frames.reshape(L2 * K, c_u)
    if sigma_sq > 0:
        if rng is None:
            raise ValueError("noisy reception needs a random generator")
        Y = Y + complex_normal(rng, Y.shape, sigma_sq)
    elif sigma_sq < 0:
        raise ValueError("sigma_sq must be non-negative")
    return UplinkObservation(Y, float(sigma_sq))


def _as_array(Y) -> np.ndarray:
    return Y.Y if isinstance(Y, UplinkObservation) else np.asarray(Y)


def estimate_tp(Y, pilot: np.ndarray, tau: int) -> np.ndarray:
    """LS estimate from time-multiplexed pilots, ``Y[:, :tau] @ conj(phi) / tau``."""
    Y = _as_array(Y)
    pilot = np.asarray(pilot)
    if pilot.shape != (tau,):
        raise ValueError(f"pilot must have length tau={tau}")
    if not np.isclose(np.vdot(pilot, pilot).real, tau):
        raise ValueError("pilot is not a member of an orthogonal pilot book (||phi||^2 != tau)")
    if Y.shape[-1] < tau:
        raise ValueError("received block shorter than the training phase")
    return Y[..., :tau] @ pilot.conj() / tau


def estimate_sp(Y, p: np.ndarray, c_u: int, rho_p: float) -> np.ndarray:
    """Non-iterative LS estimate from superimposed pilots, ``Y @ conj(p) / (c_u rho_p)``."""
    Y = _as_array(Y)
    if not rho_p > 0:
        raise ValueError("rho_p must be positive")
    if Y.shape[-1] != c_u or np.shape(p) != (c_u,):
        raise ValueError("Y and p must both span c_u symbols")
    return Y @ np.conj(p) / (c_u * rho_p)


def estimate_hybrid_tp(Y, pilot: np.ndarray, tau: int) -> np.ndarray:
    """Hybrid-frame TP estimate using the zero-padded selector ``[phi^H, 0]^T / tau``."""
    Y = _as_array(Y)
    b = np.zeros(Y.shape[-1], dtype=complex)
    b[:tau] = np.conj(pilot)
    if not np.isclose(np.vdot(pilot, pilot).real, tau):
        raise ValueError("pilot is not a member of an orthogonal pilot book")
    return Y @ b / tau


def estimate_hybrid_sp(Y, p: np.ndarray, c_u: int, tau: int, rho_p: float) -> np.ndarray:
    """Hybrid-frame SP estimate, ``Y [0_tau, p^H]^T / ((c_u - tau) rho_p)``.

    TP data leaking into the SP window is not removed.
    """
    Y = _as_array(Y)
    if tau >= c_u:
        raise ValueError("hybrid SP estimation needs tau < c_u")
    if not rho_p > 0:
        raise ValueError("rho_p must be positive")
    if np.shape(p) != (c_u - tau,) or Y.shape[-1] != c_u:
        raise ValueError("p must span the c_u - tau symbols after training")
    b = np.concatenate([np.zeros(tau, dtype=complex), np.conj(p)])
    return Y @ b / ((c_u - tau) * rho_p)


def selector_matrix(plan: FramePlan, book: PilotBook | None, sp_pilots: SpPilotMatrix | None) -> np.ndarray:
    """``(L, K, c_u)`` correlators ``b`` with ``h_hat = Y @ b`` for every user's own estimator."""
    L, K = plan.shape
    B = np.zeros((L, K, plan.c_u), dtype=complex)
    tp = plan.roles == Role.TP
    if np.any(tp):
        B[tp, : plan.tau] = book.sequences[:, plan.tp_index[tp]].T.conj() / plan.tau
    sp = plan.roles != Role.TP
    if np.any(sp):
        n = plan.sp_length
        B[sp, plan.c_u - n :] = sp_pilots.P[:, plan.sp_index[sp]].T.conj() / (n * plan.split.rho_p)
    return B


def estimate_own(Y, B: np.ndarray) -> np.ndarray:
    """Estimates ``h_hat[l, k]`` of ``h[l, l, k]`` at each serving BS, ``(L, K, M)``."""
    Y = _as_array(Y)
    return (Y @ B.transpose(0, 2, 1)).transpose(0, 2, 1)


def estimate_all_pairs(Y, B: np.ndarray) -> np.ndarray:
    """Apply every user's correlator at every BS, ``(L, L, K, M)``.

    Meaningful for superimposed pilots, where each user owns a distinct column
    and any BS can estimate any user's channel.
    """
    Y = _as_array(Y)
    return np.einsum("jmt,lkt->jlkm", Y, B)
