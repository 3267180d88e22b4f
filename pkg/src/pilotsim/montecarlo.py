"""Link-level Monte Carlo: UL training and detection, DL matched-filter precoding.

One trial draws small-scale fading, UL data and noise, estimates every user's
channel at its serving BS, detects the UL data with a matched filter and
precodes DL data with the estimates. Trials run on independent random streams
derived from ``(seed, trial index)`` so that results do not depend on how the
work is scheduled across threads.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, SystemConfig
from .estimators import estimate_own, receive_uplink, selector_matrix
from .geometry import (
    CellGrid,
    ChannelRealization,
    GainTensor,
    Scenario,
    UserLayout,
    apply_power_control,
    build_hex_grid,
    complex_normal,
    draw_channels,
    large_scale_gains,
    place_users,
)
from .partition import CostModel, CostWeights, PartitionResult, greedy_partition
from .pilots import (
    FramePlan,
    PilotBook,
    PowerSplit,
    Role,
    SpPilotMatrix,
    assemble_frames,
    make_pilot_book,
    make_sp_pilot_matrix,
    reuse_colors,
)

SQRT_HALF = np.sqrt(0.5)

# stream namespaces inside one master seed
TRIAL_STREAM = 0
LAYOUT_STREAM = 1


class Experiment(str, enum.Enum):
    TP = "tp"  # orthogonal pilots in every cell
    SP = "sp"  # superimposed pilots in every cell
    HYBRID = "hybrid"  # greedy TP/SP partition of the reported cells
    HYBRID_SP = "hybrid-sp"  # hybrid frame with every reported user on SP


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def thread_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SIM_THREADS must be an integer, got {env!r}") from None
    return min(8, os.cpu_count() or 1)


# ---------------------------------------------------------------- modulation


def qam_mod(bits: np.ndarray) -> np.ndarray:
    """Gray-mapped unit-power 4-QAM; the last axis holds bit pairs ``(b_re, b_im)``."""
    bits = np.asarray(bits)
    if bits.shape[-1] % 2:
        raise ValueError("4-QAM needs an even number of bits")
    pairs = bits.reshape(bits.shape[:-1] + (-1, 2))
    return SQRT_HALF * ((1 - 2 * pairs[..., 0]) + 1j * (1 - 2 * pairs[..., 1]))


def qam_demod(symbols: np.ndarray, gain=1.0) -> np.ndarray:
    """Nearest-point 4-QAM decisions after dividing by ``gain``."""
    z = np.asarray(symbols) / gain
    bits = np.stack([z.real < 0, z.imag < 0], axis=-1).astype(np.int8)
    return bits.reshape(bits.shape[:-2] + (-1,))


# ---------------------------------------------------------------- downlink


def _gram(h: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``G[l, j, m, k] = h[l, j, m]^T conj(v[l, k]) / M`` for ``h`` (L, L, K, M) and ``v`` (L, K, M)."""
    L, L2, K, M = h.shape
    G = h.reshape(L, L2 * K, M) @ v.conj().transpose(0, 2, 1)
    return G.reshape(L, L2, K, v.shape[1]) / M


def _apply(G: np.ndarray, data: np.ndarray) -> np.ndarray:
    """``sum_{l,k} G[l, j, m, k] data[l, k, s]`` as an ``(L, K, S)`` array."""
    L, L2, K, K2 = G.shape
    return (G.reshape(L, L2 * K, K2) @ data).sum(axis=0).reshape(L2, K, -1)


def _check_estimates(h_hat: np.ndarray, h: np.ndarray) -> None:
    L, _, K, M = h.shape
    if h_hat is None or h_hat.shape != (L, K, M):
        raise ValueError(f"estimates for every served user are required, shape {(L, K, M)}")


def mf_precode_downlink(
    h_hat: np.ndarray,
    channels: ChannelRealization | np.ndarray,
    data: np.ndarray,
    sigma_sq: float = 0.0,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Received DL symbols ``d_hat[j, m, s]`` under matched-filter precoding.

    Each BS ``l`` sends ``sum_k conj(h_hat[l, k]) d[l, k]``; user ``(j, m)``
    receives it through ``h[l, j, m]``. The result is scaled by ``1/M``.
    ``noise`` overrides the ``CN(0, sigma_sq)`` draw from ``rng``.
    """
    h = channels.h if isinstance(channels, ChannelRealization) else np.asarray(channels)
    _check_estimates(h_hat, h)
    M = h.shape[-1]
    d_hat = _apply(_gram(h, h_hat), data)
    if noise is None and sigma_sq > 0:
        if rng is None:
            raise ValueError("noisy reception needs a random generator")
        noise = complex_normal(rng, data.shape, sigma_sq)
    if noise is not None:
        d_hat = d_hat + noise / M
    return d_hat


@dataclass(frozen=True)
class DlDecomposition:
    signal: np.ndarray  # beta[j, j, m] d[j, m], (L, K, S)
    components: np.ndarray  # i0..i4, (5, L, K, S)

    @property
    def interference(self) -> np.ndarray:
        return self.components.sum(axis=0)

    @property
    def total(self) -> np.ndarray:
        return self.signal + self.interference


def decompose_dl_interference(
    h_hat: np.ndarray,
    channels: ChannelRealization | np.ndarray,
    data: np.ndarray,
    noise: np.ndarray | None,
    beta_serving: np.ndarray,
) -> DlDecomposition:
    """Split the received DL symbol into the mean signal and five interference terms.

    With ``h_hat = h - dh``: ``i0`` is the own-channel fluctuation
    ``(|h|^2/M - beta) d``, ``i1`` the own-cell users, ``i2`` the other cells
    (all with true channels), ``i3`` the scaled noise and ``i4`` the
    estimation-error leakage ``-(1/M) sum h^T conj(dh) d``.
    """
    h = channels.h if isinstance(channels, ChannelRealization) else np.asarray(channels)
    _check_estimates(h_hat, h)
    L, _, K, M = h.shape
    cells = np.arange(L)
    h_own = h[cells, cells]
    G_true = _gram(h, h_own)
    G_err = _gram(h, h_own - h_hat)

    own = G_true[cells, cells]  # (L, K, K): h[j,j,m]^T conj(h[j,j,k]) / M
    diag = np.einsum("jmm->jm", own)
    signal = beta_serving[..., None] * data
    i0 = (diag - beta_serving)[..., None] * data
    off = own.copy()
    off[:, np.arange(K), np.arange(K)] = 0
    i1 = off @ data
    other = G_true.copy()
    other[cells, cells] = 0
    i2 = _apply(other, data)
    i3 = np.zeros_like(i0) if noise is None else noise / M
    i4 = -_apply(G_err, data)
    return DlDecomposition(signal, np.stack([i0, i1, i2, i3, i4]))


# ---------------------------------------------------------------- uplink


def pilot_pattern(plan: FramePlan, sp_pilots: SpPilotMatrix | None) -> np.ndarray:
    """``(L, K, c_u)`` unscaled superimposed pilot of each SP user, zero elsewhere."""
    L, K = plan.shape
    pattern = np.zeros((L, K, plan.c_u), dtype=complex)
    sp = plan.roles != Role.TP
    if np.any(sp):
        n = plan.sp_length
        pattern[sp, plan.c_u - n :] = sp_pilots.P[:, plan.sp_index[sp]].T
    return pattern


def matched_filter_uplink(
    h_hat: np.ndarray,
    Y: np.ndarray,
    plan: FramePlan,
    beta_serving: np.ndarray,
    sp_pilots: SpPilotMatrix | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Matched-filter UL statistics at every serving BS.

    Returns ``(z, x_hat)`` of shape ``(L, K, c_u)``. ``z = h_hat^H Y / M`` is
    the raw statistic after the serving cell's own superimposed pilots,
    ``rho_p h_hat p^T``, have been removed; ``x_hat = z / (beta * amplitude)``
    restricted to the data window (zero elsewhere).
    """
    L, K = plan.shape
    M = h_hat.shape[-1]
    if np.any(plan.roles != Role.TP):
        pattern = pilot_pattern(plan, sp_pilots)
        Y = Y - plan.split.rho_p * (h_hat.transpose(0, 2, 1) @ pattern)
    z = (h_hat.conj() @ Y) / M
    gain = beta_serving * plan.data_amplitude()
    with np.errstate(divide="ignore", invalid="ignore"):
        x_hat = np.where(plan.data_mask() & (gain[..., None] > 0), z / gain[..., None], 0)
    return z, x_hat


# ---------------------------------------------------------------- one trial


@dataclass(frozen=True)
class LinkSetup:
    """Everything fixed across trials: gains, frames, pilots and estimators."""

    gains: GainTensor
    plan: FramePlan
    book: PilotBook | None
    sp_pilots: SpPilotMatrix | None
    selector: np.ndarray
    M: int
    sigma_sq: float
    dl_symbols: int
    constellation: str
    partition: PartitionResult | None = None
    estimation_only: bool = False

    @property
    def beta_serving(self) -> np.ndarray:
        return self.gains.serving()


@dataclass
class TrialResult:
    """Per-user statistics of one trial; arrays are ``(L, K)`` unless noted."""

    mse: np.ndarray
    dl_signal: np.ndarray
    dl_interference: np.ndarray
    dl_components: np.ndarray  # (5, L, K) mean |i_n|^2
    dl_cross: np.ndarray  # (5, 5, L, K) mean conj(i_n) i_p
    dl_errors: np.ndarray
    dl_bits: np.ndarray
    ul_signal: np.ndarray
    ul_interference: np.ndarray
    ul_errors: np.ndarray
    ul_bits: np.ndarray

    FIELDS = (
        "mse",
        "dl_signal",
        "dl_interference",
        "dl_components",
        "dl_cross",
        "dl_errors",
        "dl_bits",
        "ul_signal",
        "ul_interference",
        "ul_errors",
        "ul_bits",
    )


def _symbols(constellation: str, shape: tuple, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
    if constellation == "qam4":
        bits = rng.integers(0, 2, size=shape + (2,), dtype=np.int8)
        return qam_mod(bits.reshape(shape[:-1] + (2 * shape[-1],))), bits
    return complex_normal(rng, shape), None


def _uplink_stats(setup: LinkSetup, obs, h_hat, x, x_bits) -> dict[str, np.ndarray]:
    plan = setup.plan
    L, K = plan.shape
    mask = plan.data_mask()
    n_data = mask.sum(axis=-1)
    z, x_hat = matched_filter_uplink(h_hat, obs.Y, plan, setup.beta_serving, setup.sp_pilots)
    a = setup.beta_serving * plan.data_amplitude()
    err = np.where(mask, z - a[..., None] * x, 0)
    out = {"ul_signal": a**2, "ul_interference": np.sum(np.abs(err) ** 2, axis=-1) / np.maximum(n_data, 1)}
    if x_bits is not None:
        wrong = qam_demod(x_hat) != x_bits.reshape(L, K, -1)
        bit_mask = np.repeat(mask, 2, axis=-1) & (a[..., None] > 0)
        out["ul_errors"] = np.sum(wrong & bit_mask, axis=-1)
        out["ul_bits"] = bit_mask.sum(axis=-1)
    return out


def _downlink_stats(setup: LinkSetup, channels, h_hat, rng) -> dict[str, np.ndarray]:
    L, K = setup.plan.shape
    S = setup.dl_symbols
    beta = setup.beta_serving
    d, d_bits = _symbols(setup.constellation, (L, K, S), rng)
    noise = complex_normal(rng, (L, K, S), setup.sigma_sq)
    dec = decompose_dl_interference(h_hat, channels, d, noise, beta)
    d_hat = mf_precode_downlink(h_hat, channels, d, noise=noise)
    comps = dec.components
    out = {
        "dl_signal": np.mean(np.abs(dec.signal) ** 2, axis=-1),
        "dl_interference": np.mean(np.abs(d_hat - dec.signal) ** 2, axis=-1),
        "dl_components": np.mean(np.abs(comps) ** 2, axis=-1),
        "dl_cross": (comps.conj()[:, None] * comps[None]).mean(axis=-1),
    }
    if d_bits is not None:
        out["dl_errors"] = np.sum(qam_demod(d_hat, beta[..., None]) != d_bits.reshape(L, K, -1), axis=-1)
        out["dl_bits"] = np.full((L, K), 2 * S)
    return out


def simulate_trial(setup: LinkSetup, rng: np.random.Generator) -> TrialResult:
    """One channel draw: UL training and detection, then DL precoding.

    With ``setup.estimation_only`` only the channel-estimation error is
    measured and every other statistic is left at zero.
    """
    plan = setup.plan
    L, K = plan.shape
    channels = draw_channels(setup.gains, setup.M, rng)
    x, x_bits = _symbols(setup.constellation, (L, K, plan.c_u), rng)
    frames = assemble_frames(plan, x, setup.book, setup.sp_pilots)
    obs = receive_uplink(channels, frames, setup.sigma_sq, rng)
    h_hat = estimate_own(obs, setup.selector)

    zeros = np.zeros((L, K))
    stats = {
        "mse": np.sum(np.abs(h_hat - channels.serving()) ** 2, axis=-1) / setup.M,
        "dl_signal": zeros,
        "dl_interference": zeros,
        "dl_components": np.zeros((5, L, K)),
        "dl_cross": np.zeros((5, 5, L, K), dtype=complex),
        "dl_errors": np.zeros((L, K), dtype=int),
        "dl_bits": np.zeros((L, K), dtype=int),
        "ul_signal": zeros,
        "ul_interference": zeros,
        "ul_errors": np.zeros((L, K), dtype=int),
        "ul_bits": np.zeros((L, K), dtype=int),
    }
    if not setup.estimation_only:
        stats.update(_uplink_stats(setup, obs, h_hat, x, x_bits))
        stats.update(_downlink_stats(setup, channels, h_hat, rng))
    return TrialResult(**stats)


# ---------------------------------------------------------------- setups


def build_layout(config: SystemConfig, grid: CellGrid, placement: int = 0, sweep: int | None = None) -> UserLayout:
    scenario = Scenario(config.scenario)
    rng = None
    if scenario is Scenario.UNIFORM:
        key = (LAYOUT_STREAM, placement) if sweep is None else (LAYOUT_STREAM, sweep, placement)
        rng = stream(config.seed, *key)
    return place_users(grid, config.K, scenario, config.min_dist, config.circle_radius, rng)


def hybrid_partition(
    config: SystemConfig, raw: np.ndarray, colors: np.ndarray, split: PowerSplit, outer_cells: bool = True
) -> PartitionResult:
    """Greedy partition of the reported cells' users on unit-``omega`` gains.

    Only users of the reported cells may move to SP. With ``outer_cells`` the
    remaining cells stay in the cost model as fixed TP users; otherwise the
    model is cut down to the reported cells.
    """
    P, K = config.hybrid_cells, config.K
    beta = apply_power_control(raw, 1.0).beta
    if not outer_cells:
        beta, colors = beta[:P, :P], colors[:P]
    movable = frozenset((l, k) for l in range(P) for k in range(K))
    weights = CostWeights.from_ul(config.xi_ul)
    model = CostModel(beta, config.c_u, config.training_length, split, weights, colors, movable)
    return greedy_partition(model)


def build_setup(
    config: SystemConfig,
    experiment: Experiment | str,
    layout: UserLayout | None = None,
    grid: CellGrid | None = None,
    estimation_only: bool = False,
) -> LinkSetup:
    experiment = Experiment(experiment)
    grid = build_hex_grid(config.tiers, config.cell_radius) if grid is None else grid
    layout = build_layout(config, grid) if layout is None else layout
    raw = large_scale_gains(grid, layout, config.path_loss_exponent)
    L, K, tau = config.L, config.K, config.training_length
    colors = reuse_colors(grid, config.reuse_r)
    partition = None
    book = sp_pilots = None

    if experiment is Experiment.TP:
        plan = FramePlan.pure_tp(L, K, tau, config.c_u, config.c_d, colors, config.lambda_tp)
        gains = apply_power_control(raw, config.omega)
        book = make_pilot_book(tau)
    elif experiment is Experiment.SP:
        if L * K > config.c_u:
            raise ConfigError(f"superimposed pilots need L*K = {L * K} <= c_u = {config.c_u}")
        plan = FramePlan.pure_sp(L, K, config.c_u, config.c_d, config.split(config.M, L, config.c_u))
        gains = apply_power_control(raw, config.omega)
        sp_pilots = make_sp_pilot_matrix(config.c_u)
    else:
        P = config.hybrid_cells
        window = config.c_u - tau
        if P * K > window:
            raise ConfigError(f"hybrid frames need {P}*K = {P * K} <= c_u - tau = {window}")
        split = config.split(config.M, P, window)
        if experiment is Experiment.HYBRID:
            partition = hybrid_partition(config, raw, colors, split)
            sp_users = partition.sorted_sp()
        else:
            sp_users = [(l, k) for l in range(P) for k in range(K)]
        plan = FramePlan.hybrid(L, K, tau, config.c_u, config.c_d, sp_users, split, colors, config.lambda_tp)
        omega = np.where(plan.roles == Role.SP, config.omega_sp, config.omega)
        gains = apply_power_control(raw, omega)
        book = make_pilot_book(tau)
        sp_pilots = make_sp_pilot_matrix(window)

    return LinkSetup(
        gains=gains,
        plan=plan,
        book=book,
        sp_pilots=sp_pilots,
        selector=selector_matrix(plan, book, sp_pilots),
        M=config.M,
        sigma_sq=config.sigma_sq,
        dl_symbols=config.dl_symbols,
        constellation=config.constellation,
        partition=partition,
        estimation_only=estimation_only,
    )


# ---------------------------------------------------------------- aggregation


class _Accumulator:
    """Running sums of each field and of its squared magnitude, added in a fixed order."""

    def __init__(self):
        self.n = 0
        self.sums: dict[str, np.ndarray] = {}
        self.squares: dict[str, np.ndarray] = {}

    def add(self, result: TrialResult) -> None:
        for name in TrialResult.FIELDS:
            value = np.asarray(getattr(result, name))
            if name not in self.sums:
                self.sums[name] = np.zeros_like(value, dtype=value.dtype if np.iscomplexobj(value) else float)
                self.squares[name] = np.zeros(value.shape)
            self.sums[name] = self.sums[name] + value
            self.squares[name] = self.squares[name] + np.abs(value) ** 2
        self.n += 1

    def means(self) -> dict[str, np.ndarray]:
        return {k: v / self.n for k, v in self.sums.items()}

    def half_widths(self) -> dict[str, np.ndarray]:
        out = {}
        for k, s in self.sums.items():
            if self.n < 2:
                out[k] = np.full(s.shape, np.inf)
                continue
            mean = s / self.n
            var = np.maximum(self.squares[k] / self.n - np.abs(mean) ** 2, 0.0) * self.n / (self.n - 1)
            out[k] = 1.96 * np.sqrt(var / self.n)
        return out


@dataclass
class AggregateReport:
    """Trial means, 95% confidence half-widths and per-placement means."""

    mean: dict[str, np.ndarray]
    half_width: dict[str, np.ndarray]
    trials: int
    seed: int
    placement_means: list[dict[str, np.ndarray]] = field(default_factory=list)
    ul_prelog: np.ndarray | None = None  # (L, K) UL data fraction of the coherence interval
    dl_prelog: float = 0.0
    partitions: list[PartitionResult | None] = field(default_factory=list)

    def _select(self, value: np.ndarray, cells) -> np.ndarray:
        return value if cells is None else value[..., list(cells), :]

    def ber(self, link: str, cells=None, users=None) -> float:
        err = self._select(self.mean[f"{link}_errors"], cells)
        bits = self._select(self.mean[f"{link}_bits"], cells)
        if users is not None:
            err, bits = err[users], bits[users]
        total = float(np.sum(bits))
        return float(np.sum(err)) / total if total else float("nan")

    def sinr(self, link: str, cells=None) -> np.ndarray:
        """Ratio of mean signal to mean interference power, per user."""
        s = self._select(self.mean[f"{link}_signal"], cells)
        i = self._select(self.mean[f"{link}_interference"], cells)
        with np.errstate(divide="ignore"):
            return s / i

    def rates(self, cells=None) -> tuple[np.ndarray, np.ndarray]:
        """Per-user UL and DL rates averaged over placements, each ``(L, K)`` or restricted to ``cells``."""
        ul, dl = [], []
        for pm in self.placement_means:
            with np.errstate(divide="ignore"):
                ul.append(self.ul_prelog * np.log2(1 + pm["ul_signal"] / pm["ul_interference"]))
                dl.append(self.dl_prelog * np.log2(1 + pm["dl_signal"] / pm["dl_interference"]))
        ul, dl = np.mean(ul, axis=0), np.mean(dl, axis=0)
        if cells is not None:
            ul, dl = ul[list(cells)], dl[list(cells)]
        return ul, dl


def _run_chunk(setup: LinkSetup, seed: int, indices: range, sweep: int | None) -> list[TrialResult]:
    out = []
    for t in indices:
        key = (TRIAL_STREAM, t) if sweep is None else (TRIAL_STREAM, sweep, t)
        out.append(simulate_trial(setup, stream(seed, *key)))
    return out


def run_trials(
    config: SystemConfig,
    experiment: Experiment | str,
    trials: int | None = None,
    placements: int | None = None,
    sweep: int | None = None,
    threads: int | None = None,
    chunk: int = 16,
    estimation_only: bool = False,
) -> AggregateReport:
    """Average ``trials`` channel draws over each of ``placements`` user layouts.

    Trial ``t`` of placement ``p`` uses the stream ``(seed, [sweep,] p * trials + t)``;
    results are reduced in trial order, so the report is identical for any
    thread count. ``estimation_only`` skips UL detection and the DL.
    """
    experiment = Experiment(experiment)
    trials = config.trials if trials is None else trials
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    scenario = Scenario(config.scenario)
    placements = (config.placements if placements is None else placements) if scenario is Scenario.UNIFORM else 1
    grid = build_hex_grid(config.tiers, config.cell_radius)
    workers = thread_count(threads)

    total = _Accumulator()
    per_placement = []
    partitions = []
    setup = None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for p in range(placements):
            layout = build_layout(config, grid, p, sweep)
            setup = build_setup(config, experiment, layout, grid, estimation_only)
            partitions.append(setup.partition)
            start = p * trials
            chunks = [range(i, min(i + chunk, start + trials)) for i in range(start, start + trials, chunk)]
            acc = _Accumulator()
            jobs = [pool.submit(_run_chunk, setup, config.seed, idx, sweep) for idx in chunks]
            # collect in submission order so the reduction order is fixed
            for job in jobs:
                for r in job.result():
                    acc.add(r)
                    total.add(r)
            means = acc.means()
            per_placement.append({k: means[k] for k in ("ul_signal", "ul_interference", "dl_signal", "dl_interference")})

    plan = setup.plan
    C = plan.coherence
    return AggregateReport(
        mean=total.means(),
        half_width=total.half_widths(),
        trials=total.n,
        seed=config.seed,
        placement_means=per_placement,
        ul_prelog=plan.data_mask().sum(axis=-1) / C,
        dl_prelog=plan.c_d / C,
        partitions=partitions,
    )
