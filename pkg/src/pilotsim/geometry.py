"""Hexagonal cell layouts, user placement, large-scale gains and Rayleigh draws.

Indexing convention used throughout the package: ``beta[j, l, k]`` is the gain
between base station ``j`` and user ``k`` of cell ``l``; channel vectors are
stored as ``h[j, l, k, :]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SQRT3 = np.sqrt(3.0)


class Scenario(str, enum.Enum):
    UNIFORM = "uniform"
    CIRCLE = "circle"


@dataclass(frozen=True)
class CellGrid:
    """Flat-top hexagonal tessellation centred on the reference cell.

    ``centers`` is ``(L, 2)`` in km, ``axial`` holds the integer axial
    coordinates ``(q, r)`` of every cell (used for reuse colouring).
    """

    centers: np.ndarray
    axial: np.ndarray
    cell_radius: float
    tiers: int

    @property
    def num_cells(self) -> int:
        return len(self.centers)

    @property
    def inradius(self) -> float:
        return SQRT3 / 2.0 * self.cell_radius


@dataclass(frozen=True)
class UserLayout:
    positions: np.ndarray  # (L, K, 2) km
    scenario: Scenario
    circle_radius: float | None = None

    @property
    def num_users(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class GainTensor:
    """Effective gains after statistics-aware power control.

    ``omega`` is either a scalar or an ``(L, K)`` array of per-user design
    parameters.
    """

    beta: np.ndarray
    omega: float | np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.beta.shape

    def serving(self) -> np.ndarray:
        """``beta[l, l, k]`` as an ``(L, K)`` array."""
        L = self.beta.shape[0]
        return self.beta[np.arange(L), np.arange(L), :]

    def subset(self, cells: int) -> GainTensor:
        omega = self.omega
        if np.ndim(omega):
            omega = np.asarray(omega)[:cells]
        return GainTensor(self.beta[:cells, :cells, :].copy(), omega)


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray  # (L, L, K, M) complex

    @property
    def M(self) -> int:
        return self.h.shape[-1]

    def serving(self) -> np.ndarray:
        """Channels ``h[l, l, k]`` between each user and its own BS, ``(L, K, M)``."""
        L = self.h.shape[0]
        return self.h[np.arange(L), np.arange(L)]


def build_hex_grid(tiers: int, cell_radius: float = 1.0) -> CellGrid:
    """Reference cell at the origin plus ``tiers`` rings of neighbours.

    Cells are ordered by ring, then counter-clockwise by angle starting at
    30 degrees, so the first 7 cells are always the reference cell and its
    first tier.
    """
    if tiers not in (1, 2):
        raise ValueError(f"tiers must be 1 or 2, got {tiers!r}")
    if not cell_radius > 0:
        raise ValueError(f"cell_radius must be positive, got {cell_radius!r}")

    cells = []
    for q in range(-tiers, tiers + 1):
        for r in range(-tiers, tiers + 1):
            ring = max(abs(q), abs(r), abs(q + r))
            if ring > tiers:
                continue
            x = 1.5 * cell_radius * q
            y = SQRT3 * cell_radius * (r + q / 2.0)
            angle = np.arctan2(y, x) % (2 * np.pi) if ring else 0.0
            # round so that cells sharing an angle sort identically on every platform
            cells.append((ring, round(float(angle), 9), q, r, x, y))
    cells.sort()
    centers = np.array([[c[4], c[5]] for c in cells])
    axial = np.array([[c[2], c[3]] for c in cells], dtype=int)
    return CellGrid(centers=centers, axial=axial, cell_radius=float(cell_radius), tiers=tiers)


def in_hexagon(points: np.ndarray, radius: float) -> np.ndarray:
    """Point-in-hexagon test for a flat-top hexagon centred at the origin."""
    x = np.abs(points[..., 0])
    y = np.abs(points[..., 1])
    return (y <= SQRT3 / 2.0 * radius) & (SQRT3 * x + y <= SQRT3 * radius)


def place_users(
    grid: CellGrid,
    K: int,
    scenario: Scenario | str,
    min_dist: float = 0.1,
    circle_radius: float = 0.8,
    rng: np.random.Generator | None = None,
    enforce_boundary: bool = False,
) -> UserLayout:
    """Place ``K`` users in every cell.

    ``UNIFORM`` draws users uniformly inside each hexagon at least
    ``min_dist`` from the BS (rejection sampling from the bounding box).
    ``CIRCLE`` puts user ``k`` at angle ``2*pi*k/K`` on a circle of
    ``circle_radius`` around its BS; it is deterministic and ignores ``rng``.
    With ``enforce_boundary`` the circle must fit inside the hexagon.
    """
    scenario = Scenario(scenario)
    if K < 1:
        raise ValueError("K must be at least 1")
    R = grid.cell_radius
    L = grid.num_cells

    if scenario is Scenario.CIRCLE:
        if not 0 < circle_radius <= R:
            raise ValueError(f"circle_radius must lie in (0, {R}], got {circle_radius}")
        if enforce_boundary and circle_radius > grid.inradius:
            raise ValueError(
                f"circle_radius {circle_radius} exceeds the hexagon inradius {grid.inradius:.4f}"
            )
        angles = 2 * np.pi * np.arange(K) / K
        offsets = circle_radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        positions = grid.centers[:, None, :] + offsets[None, :, :]
        return UserLayout(positions, scenario, float(circle_radius))

    if not 0 < min_dist < R:
        raise ValueError(f"min_dist must lie in (0, {R}), got {min_dist}")
    if rng is None:
        raise ValueError("uniform placement needs a random generator")
    positions = np.empty((L, K, 2))
    for cell in range(L):
        accepted = np.empty((0, 2))
        while len(accepted) < K:
            batch = rng.uniform((-R, -SQRT3 / 2 * R), (R, SQRT3 / 2 * R), size=(4 * K, 2))
            keep = in_hexagon(batch, R) & (np.hypot(batch[:, 0], batch[:, 1]) >= min_dist)
            accepted = np.concatenate([accepted, batch[keep]])
        positions[cell] = grid.centers[cell] + accepted[:K]
    return UserLayout(positions, scenario, None)


def raw_path_loss(distance, exponent: float = 3.0):
    """Distance-based gain ``(d / 1 km) ** -exponent``."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be strictly positive")
    out = d ** (-exponent)
    return float(out) if out.ndim == 0 else out


def large_scale_gains(grid: CellGrid, layout: UserLayout, exponent: float = 3.0) -> np.ndarray:
    """Raw gains ``beta[j, l, k]`` from every BS to every user, before power control."""
    diff = layout.positions[None, :, :, :] - grid.centers[:, None, None, :]
    return raw_path_loss(np.hypot(diff[..., 0], diff[..., 1]), exponent)


def apply_power_control(raw: np.ndarray, omega=1.0) -> GainTensor:
    """Statistics-aware power control: user ``(l, k)`` transmits ``omega / raw[l, l, k]``.

    The returned gains are ``omega * raw[j, l, k] / raw[l, l, k]``, so every
    serving gain equals ``omega`` exactly.
    """
    raw = np.asarray(raw, dtype=float)
    L = raw.shape[0]
    serving = raw[np.arange(L), np.arange(L), :]
    if np.any(serving <= 0):
        raise ValueError("every serving gain raw[l, l, k] must be positive")
    om = np.asarray(omega, dtype=float)
    if om.ndim not in (0, 2):
        raise ValueError("omega must be a scalar or an (L, K) array")
    beta = om * (raw / serving[None, :, :]) if om.ndim == 0 else om[None] * (raw / serving[None])
    return GainTensor(beta, float(om) if om.ndim == 0 else om.copy())


def complex_normal(rng: np.random.Generator, shape, variance=1.0) -> np.ndarray:
    """Circularly-symmetric ``CN(0, variance)`` samples; ``variance`` broadcasts against ``shape``."""
    shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) else (int(shape),)
    z = rng.standard_normal(shape + (2,)).view(np.complex128)[..., 0]
    return np.sqrt(np.asarray(variance) / 2.0) * z


def draw_channels(gains: GainTensor | np.ndarray, M: int, rng: np.random.Generator) -> ChannelRealization:
    """Independent ``CN(0, beta I_M)`` vectors for every (BS, user) pair."""
    if M < 1:
        raise ValueError("M must be at least 1")
    beta = gains.beta if isinstance(gains, GainTensor) else np.asarray(gains, dtype=float)
    return ChannelRealization(complex_normal(rng, beta.shape + (M,), beta[..., None]))
