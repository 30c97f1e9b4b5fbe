"""Closed-loop strategy evaluation: deploy a quoting policy against a simulated
market, account spread revenue and inventory penalty exactly, and estimate
strategy values by Monte Carlo.

The deployed maker may believe a different order-flow model than the one
generating events.  Such a maker cannot read the latent memory of the true
model: it runs its own memory recursion — exact exponential decay plus its own
kernel's jump weights — fed by the fills it actually observes, starting from
zero at deployment.  Inventory is always observed exactly.  A maker whose
believed model *is* the true one quotes straight from the true state.

`compare_strategies` wires the three-way comparison between a Poisson believer,
a one-exponential believer, and the true-model maker: each strategy is valued
both on the grid (a linear backward sweep with the policy frozen) and by closed
loop Monte Carlo, and the value-vs-time / value-difference series behind the
comparison figures are emitted as CSV files.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .hawkes import ASK, BID, EventLog, IntensitySpec, MarketState, simulate
from .hjb import FeedbackTable, GridMesh, GridSpec, evaluate_fixed_control, solve
from .kernels import ExpSumKernel
from .serialize import write_csv

__all__ = [
    "Episode",
    "StrategyValueEstimate",
    "FeedbackStrategy",
    "ComparisonConfig",
    "ComparisonRow",
    "StrategyGap",
    "StrategyComparison",
    "run_episode",
    "estimate_value",
    "compare_strategies",
]


# --------------------------------------------------------------- accounting


@dataclass(frozen=True)
class Episode:
    """One deployed run: the fills with the spreads quoted at them, and the P&L split.

    `total = spread_revenue + penalty` is the sample of the control objective —
    spreads earned at fills minus the quadratic inventory penalty, integrated
    exactly (inventory is piecewise constant between fills).
    """

    events: EventLog
    spread_revenue: float
    penalty: float
    total: float
    seed: object = None

    def __post_init__(self) -> None:
        if self.spread_revenue < 0:
            raise ValueError("spread revenue cannot be negative")
        if self.penalty > 0:
            raise ValueError("inventory penalty cannot be positive")
        if self.total != self.spread_revenue + self.penalty:
            raise ValueError("total must equal spread_revenue + penalty")


@dataclass(frozen=True)
class StrategyValueEstimate:
    """Monte Carlo estimate of one strategy's value under one true model."""

    strategy: str
    model: str
    mean: float
    stderr: float
    n_episodes: int

    def __post_init__(self) -> None:
        if self.stderr < 0:
            raise ValueError("stderr cannot be negative")


def _inventory_square_integral(i0: int, events, t0: float, t_end: float) -> float:
    """∫ i_s² ds over [t0, t_end] for the piecewise-constant inventory path."""
    acc = 0.0
    i = int(i0)
    prev = t0
    for t, side, _ in events:
        acc += i * i * (t - prev)
        i += -1 if side == ASK else 1
        prev = t
    acc += i * i * (t_end - prev)
    return acc


# --------------------------------------------------------------- strategies


class FeedbackStrategy:
    """Quote from a solved feedback table, tracking believed memory between fills.

    `believed` is the kernel of the maker's own flow model (empty for a
    memoryless believer).  The believed memory starts at zero at deployment —
    the maker has no window into order flow before it started trading — decays
    exactly between fills, and jumps by the believed kernel's weights on the
    side of each observed fill (the side is read off the inventory change).
    With `observe_memory=True` the table is read at the true market state
    instead and no filter is run; that is the well-specified maker.

    Lookups clamp inventory and memory into the table's box, so a believed
    state that outruns the solved domain degrades gracefully instead of
    raising.
    """

    def __init__(
        self,
        label: str,
        feedback: FeedbackTable,
        believed: ExpSumKernel | None = None,
        observe_memory: bool = False,
    ) -> None:
        if not observe_memory and believed is None:
            raise ValueError("a filtering maker needs its believed kernel (may be empty)")
        self.label = label
        self.feedback = feedback
        self.believed = believed
        self.observe_memory = observe_memory

    def _quote(self, t: float, inventory: int, c_ask, c_bid) -> tuple[float, float]:
        g = self.feedback.grid
        i = int(min(max(inventory, g.i_min), g.i_max))
        bound = np.asarray(g.c_max)
        ca = np.clip(np.asarray(c_ask, dtype=float), 0.0, bound)
        cb = np.clip(np.asarray(c_bid, dtype=float), 0.0, bound)
        return self.feedback.spreads_at(t, i, ca, cb)

    def start(self, initial: MarketState):
        """Fresh per-episode closures: (control for `simulate`, on_event or None)."""
        if self.observe_memory:

            def control(t: float, state: MarketState) -> tuple[float, float]:
                return self._quote(t, state.inventory, state.c_ask, state.c_bid)

            return control, None

        kernel = self.believed
        rates = np.asarray(kernel.rates, dtype=float)
        weights = np.asarray(kernel.weights, dtype=float)
        filt = {
            "t": initial.clock,
            "c_a": np.zeros(kernel.n),
            "c_b": np.zeros(kernel.n),
            "i": initial.inventory,
        }

        def believed_at(t: float) -> tuple[np.ndarray, np.ndarray]:
            decay = np.exp(-rates * (t - filt["t"]))
            return filt["c_a"] * decay, filt["c_b"] * decay

        def control(t: float, state: MarketState) -> tuple[float, float]:
            ca, cb = believed_at(t)
            return self._quote(t, state.inventory, ca, cb)

        if kernel.n == 0:
            return control, None

        def on_event(state: MarketState) -> None:
            ca, cb = believed_at(state.clock)
            if state.inventory < filt["i"]:
                ca = ca + weights
            else:
                cb = cb + weights
            filt.update(t=state.clock, c_a=ca, c_b=cb, i=state.inventory)

        return control, on_event


class _CallableStrategy:
    """Wrap a plain stateless `control(t, state)` in the strategy protocol."""

    def __init__(self, fn: Callable[[float, MarketState], tuple[float, float]]) -> None:
        self.fn = fn
        self.label = getattr(fn, "__name__", "custom")

    def start(self, initial: MarketState):
        return self.fn, None


def _as_strategy(control):
    return control if hasattr(control, "start") else _CallableStrategy(control)


# ------------------------------------------------------------ episode runs


def run_episode(
    true_spec: IntensitySpec,
    control,
    horizon: float,
    seed,
    *,
    initial: MarketState | None = None,
    mu_penalty: float = 0.0,
    max_events: int = 10**7,
) -> Episode:
    """Deploy one strategy over [0, horizon] against the true model.

    `control` is either a strategy object (anything with `start`) or a plain
    `control(t, state)` callable.  Revenue sums the spread quoted at each fill;
    the penalty integrates −mu_penalty·i² exactly between fills.
    """
    if mu_penalty < 0:
        raise ValueError("mu_penalty must be nonnegative")
    start_state = initial if initial is not None else true_spec.zero_state()
    ctrl, on_event = _as_strategy(control).start(start_state)
    log = simulate(
        true_spec, ctrl, horizon, seed, initial=start_state, max_events=max_events, on_event=on_event
    )
    revenue = float(math.fsum(s for _, _, s in log.events))
    integral = _inventory_square_integral(
        start_state.inventory, log.events, start_state.clock, start_state.clock + horizon
    )
    penalty = -mu_penalty * integral
    return Episode(events=log, spread_revenue=revenue, penalty=penalty, total=revenue + penalty, seed=seed)


def _episode_total(payload) -> float:
    spec, strategy, horizon, seed, initial, mu_penalty, max_events = payload
    return run_episode(
        spec, strategy, horizon, seed, initial=initial, mu_penalty=mu_penalty, max_events=max_events
    ).total


def _episode_totals(
    spec: IntensitySpec,
    strategy,
    horizon: float,
    seeds: Sequence,
    initial: MarketState | None,
    mu_penalty: float,
    workers: int | None,
    max_events: int,
) -> np.ndarray:
    # worker pools pickle the strategy, so parallel runs need module-level controls
    payloads = [(spec, strategy, horizon, s, initial, mu_penalty, max_events) for s in seeds]
    if workers is not None and workers > 1:
        chunk = max(1, len(payloads) // (8 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            totals = list(pool.map(_episode_total, payloads, chunksize=chunk))
    else:
        totals = [_episode_total(p) for p in payloads]
    return np.asarray(totals)


def estimate_value(
    true_spec: IntensitySpec,
    control,
    horizon: float,
    n_episodes: int,
    master_seed,
    *,
    initial: MarketState | None = None,
    mu_penalty: float = 0.0,
    strategy_id: str | None = None,
    model_id: str | None = None,
    workers: int | None = None,
    max_events: int = 10**7,
) -> StrategyValueEstimate:
    """Mean/stderr of the episode objective over independent seeded episodes."""
    if n_episodes < 2:
        raise ValueError("need at least two episodes for a standard error")
    seeds = np.random.SeedSequence(master_seed).spawn(n_episodes)
    totals = _episode_totals(true_spec, control, horizon, seeds, initial, mu_penalty, workers, max_events)
    strategy = _as_strategy(control)
    if strategy_id is None:
        strategy_id = getattr(strategy, "label", "custom")
    if model_id is None:
        n = true_spec.kernel.n
        model_id = f"{n}-exp" if n else "poisson"
    return StrategyValueEstimate(
        strategy=strategy_id,
        model=model_id,
        mean=float(np.mean(totals)),
        stderr=float(np.std(totals, ddof=1) / math.sqrt(n_episodes)),
        n_episodes=n_episodes,
    )


# ------------------------------------------------- grid controls for sweeps


def _inventory_only_control(table: FeedbackTable):
    """Grid control of a memoryless believer: spreads depend on (t, inventory) only."""

    def control(t: float, mesh: GridMesh):
        k = table.snapshot_index(t)
        shape = (-1,) + (1,) * (2 * mesh.spec.n)
        return table.ask[k].reshape(shape), table.bid[k].reshape(shape)

    return control


def _true_state_control(table: FeedbackTable):
    """Grid control of the well-specified maker: its own feedback, node for node."""

    def control(t: float, mesh: GridMesh):
        k = table.snapshot_index(t)
        return table.ask[k], table.bid[k]

    return control


def _bilinear_rows(slice3d: np.ndarray, dc: float, m: int, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Interpolate each inventory row of a (n_i, m, m) table at points (xa, xb).

    `xa` and `xb` broadcast against each other; the result broadcasts them and
    prepends the inventory axis.
    """
    pa = xa / dc
    pb = xb / dc
    ka = np.clip(np.floor(pa).astype(int), 0, m - 2)
    kb = np.clip(np.floor(pb).astype(int), 0, m - 2)
    ta = np.clip(pa - ka, 0.0, 1.0)
    tb = np.clip(pb - kb, 0.0, 1.0)
    out = np.empty((slice3d.shape[0],) + np.broadcast_shapes(xa.shape, xb.shape))
    for row in range(slice3d.shape[0]):
        t = slice3d[row]
        out[row] = (
            (1.0 - ta) * (1.0 - tb) * t[ka, kb]
            + ta * (1.0 - tb) * t[ka + 1, kb]
            + (1.0 - ta) * tb * t[ka, kb + 1]
            + ta * tb * t[ka + 1, kb + 1]
        )
    return out


def _believer_grid_control(
    table: FeedbackTable,
    gap_ask: float,
    gap_bid: float,
    rate: float,
    t_offset: float = 0.0,
):
    """Grid control of a one-exponential believer deployed with a memory gap.

    The filtering maker's believed memory equals the true memory sums minus a
    deterministic gap `gap·e^{-rate·t}` — the pre-deployment memory it never
    saw — provided every true decay rate equals the believed rate and the
    believed jump weight equals the summed true weights.  Under that match the
    believed state is a function of the true grid state and the deployed
    strategy can be valued by one linear sweep per deployment state.  Both
    spreads are read at the joint believed state (ask memory, bid memory).
    `t_offset` shifts feedback-table lookups when the sweep starts mid-horizon.
    """
    m_b = table.grid.m_c
    dc_b = table.grid.dc(0)
    c_bound = table.grid.c_max[0]

    def control(t: float, mesh: GridMesh):
        k = table.snapshot_index(t_offset + t)
        g = math.exp(-rate * t)
        xa = np.clip(mesh.sum_ask[0] - gap_ask * g, 0.0, c_bound)
        xb = np.clip(mesh.sum_bid[0] - gap_bid * g, 0.0, c_bound)
        return (
            _bilinear_rows(table.ask[k], dc_b, m_b, xa, xb),
            _bilinear_rows(table.bid[k], dc_b, m_b, xa, xb),
        )

    return control


def _require_filter_collapse(true_kernel: ExpSumKernel, believed: ExpSumKernel) -> float:
    """Validate the rate/weight match that makes the believed state grid-computable."""
    if believed.n != 1:
        raise ConfigError("the grid evaluation of the filtering believer needs a one-exponential belief")
    rate = believed.rates[0]
    if any(abs(r - rate) > 1e-12 for r in true_kernel.rates):
        raise ConfigError(
            "grid evaluation of the filtering believer requires every true decay rate "
            "to equal the believed rate; Monte Carlo evaluation has no such restriction"
        )
    if abs(sum(true_kernel.weights) - believed.weights[0]) > 1e-12:
        raise ConfigError(
            "grid evaluation of the filtering believer requires the believed jump weight "
            "to equal the summed true weights; Monte Carlo evaluation has no such restriction"
        )
    return rate


# ------------------------------------------------------------- comparison


def _grid_with_stable_dt(dt_max: float, **kw) -> GridSpec:
    """Build a grid with the requested dt clipped into the scheme's stability bound."""
    trial = GridSpec(dt=min(dt_max, 1e-7), **kw)
    dt = min(dt_max, 0.999 / trial.cfl_rate())
    return replace(trial, dt=dt)


@dataclass(frozen=True)
class ComparisonConfig:
    """Settings of the three-strategy comparison (defaults: the desk-scale benchmark).

    The true model is a two-exponential flow; the contenders are a Poisson
    believer (baseline `mu_poisson`), a one-exponential believer
    (`believed_kernel`, baseline `mu_believed`), and the true-model maker.  The
    probe is the state whose value-vs-time series feeds the first figure; the
    heatmap fields fix the cross-sections of the difference figures.
    """

    horizon: float = 1.0
    k_over_sigma: float = 20.0
    mu_penalty: float = 0.1
    mu_true: float = 0.1
    true_kernel: ExpSumKernel = field(
        default_factory=lambda: ExpSumKernel(weights=(0.45, 0.45), rates=(1.0, 1.0))
    )
    mu_poisson: float = 1.0
    mu_believed: float = 0.1
    believed_kernel: ExpSumKernel = field(
        default_factory=lambda: ExpSumKernel(weights=(0.9,), rates=(1.0,))
    )
    probe_inventory: int = -10
    probe_c_ask: tuple[float, ...] = (0.0, 10.0)
    probe_c_bid: tuple[float, ...] = (0.0, 10.0)
    heatmap_c_ask: tuple[float, ...] = (10.0, 0.0)
    heatmap_c_bid_first: float = 10.0
    i_min: int = -14
    i_max: int = 14
    c_max: float = 15.0
    m_c: int = 13
    m_c_believed: int = 61
    dt: float = 0.01
    store_every: int = 5
    fig1_stride: int = 5
    n_episodes: int = 4000
    master_seed: int = 20260816
    workers: int | None = None

    def __post_init__(self) -> None:
        if self.true_kernel.n < 1:
            raise ConfigError("the true model must have at least one exponential")
        if self.n_episodes < 2:
            raise ConfigError("need at least two episodes")
        if self.fig1_stride < 1:
            raise ConfigError("fig1_stride must be >= 1")
        if len(self.probe_c_ask) != self.true_kernel.n or len(self.probe_c_bid) != self.true_kernel.n:
            raise ConfigError("probe memory must give one coordinate per true exponential")
        if len(self.heatmap_c_ask) != self.true_kernel.n:
            raise ConfigError("heatmap ask memory must give one coordinate per true exponential")
        try:
            self.true_grid()
            self.believed_grid()
            self.poisson_grid()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def true_spec(self) -> IntensitySpec:
        return IntensitySpec(mu=self.mu_true, kernel=self.true_kernel, k_over_sigma=self.k_over_sigma)

    def true_grid(self) -> GridSpec:
        return _grid_with_stable_dt(
            self.dt,
            i_min=self.i_min,
            i_max=self.i_max,
            c_max=self.c_max,
            m_c=self.m_c,
            T=self.horizon,
            mu_penalty=self.mu_penalty,
            k_over_sigma=self.k_over_sigma,
            mu_base=self.mu_true,
            kernel=self.true_kernel,
            store_every=self.store_every,
        )

    def believed_grid(self) -> GridSpec:
        return _grid_with_stable_dt(
            self.dt,
            i_min=self.i_min,
            i_max=self.i_max,
            c_max=self.c_max,
            m_c=self.m_c_believed,
            T=self.horizon,
            mu_penalty=self.mu_penalty,
            k_over_sigma=self.k_over_sigma,
            mu_base=self.mu_believed,
            kernel=self.believed_kernel,
            store_every=1,
        )

    def poisson_grid(self) -> GridSpec:
        return _grid_with_stable_dt(
            self.dt,
            i_min=self.i_min,
            i_max=self.i_max,
            c_max=self.c_max,
            m_c=2,
            T=self.horizon,
            mu_penalty=self.mu_penalty,
            k_over_sigma=self.k_over_sigma,
            mu_base=self.mu_poisson,
            kernel=ExpSumKernel(weights=(), rates=()),
            store_every=1,
        )


@dataclass(frozen=True)
class ComparisonRow:
    """One strategy's value at the probe: grid sweep vs closed-loop Monte Carlo."""

    strategy: str
    pde_value: float
    mc_mean: float
    mc_stderr: float
    n_episodes: int


@dataclass(frozen=True)
class StrategyGap:
    """Pairwise value gap, with the Monte Carlo side estimated on paired seeds."""

    pair: str
    pde_gap: float
    pde_relative_gain: float
    mc_gap_mean: float
    mc_gap_stderr: float


@dataclass(frozen=True)
class StrategyComparison:
    """Comparison table plus the data series behind the three figures."""

    rows: tuple[ComparisonRow, ...]
    gaps: tuple[StrategyGap, ...]
    fig1: tuple[tuple[float, float, float, float], ...]
    fig2: tuple[tuple[float, float, float], ...]
    fig3: tuple[tuple[float, float, float], ...]
    config: ComparisonConfig

    def write(self, out_dir) -> list[str]:
        """Emit comparison.csv, gaps.csv and the fig1/fig2/fig3 series; return paths."""
        import os

        paths = []

        def emit(name, header, rows):
            path = os.path.join(os.fspath(out_dir), name)
            write_csv(path, header, rows)
            paths.append(path)

        emit(
            "comparison.csv",
            ("strategy", "pde_value", "mc_mean", "mc_stderr", "n_episodes"),
            [(r.strategy, r.pde_value, r.mc_mean, r.mc_stderr, r.n_episodes) for r in self.rows],
        )
        emit(
            "gaps.csv",
            ("pair", "pde_gap", "pde_relative_gain", "mc_gap_mean", "mc_gap_stderr"),
            [(g.pair, g.pde_gap, g.pde_relative_gain, g.mc_gap_mean, g.mc_gap_stderr) for g in self.gaps],
        )
        emit("fig1_values.csv", ("t", "V0", "V1", "V2"), self.fig1)
        emit("fig2_diff.csv", ("i", "c_b2", "difference"), self.fig2)
        emit("fig3_diff.csv", ("i", "c_b2", "difference"), self.fig3)
        return paths


def compare_strategies(config: ComparisonConfig | None = None) -> StrategyComparison:
    """Value three belief models in the same true market, on the grid and by Monte Carlo.

    Grid side: the Poisson believer and the true-model maker are Markov in the
    true state, so one linear sweep each values them everywhere; the filtering
    believer needs one sweep per deployment state (its memory gap is anchored
    there), which is what the per-time and per-heatmap-cell loops run.  Monte
    Carlo side: all strategies replay the same seeded episodes, so the pairwise
    gaps are paired-difference estimates.
    """
    cfg = config if config is not None else ComparisonConfig()
    probe = (cfg.probe_inventory, cfg.probe_c_ask, cfg.probe_c_bid)

    g_true = cfg.true_grid()
    _, ft2 = solve(g_true)
    _, ft1 = solve(cfg.believed_grid())
    _, ft0 = solve(cfg.poisson_grid())

    rate = _require_filter_collapse(cfg.true_kernel, cfg.believed_kernel)

    # One sweep values the Markov strategies everywhere; keep only endpoint slices.
    g_eval = replace(g_true, store_every=10**9)
    ev0 = evaluate_fixed_control(_inventory_only_control(ft0), g_eval, probe=probe)
    ev2 = evaluate_fixed_control(_true_state_control(ft2), g_eval, probe=probe)

    # Value-vs-time series at the probe; the filtering believer is re-anchored per time.
    gap_a = float(sum(cfg.probe_c_ask))
    gap_b = float(sum(cfg.probe_c_bid))
    n_steps = g_true.n_steps
    dt_eff = g_true.dt_effective
    fig1_steps = sorted(set(range(0, n_steps + 1, cfg.fig1_stride)) | {n_steps})
    fig1_rows = []
    v1_probe = 0.0
    for k in fig1_steps:
        t_k = k * dt_eff
        if k == n_steps:
            v1 = 0.0
        else:
            sub = replace(g_eval, T=cfg.horizon - t_k)
            ctrl = _believer_grid_control(ft1, gap_a, gap_b, rate, t_offset=t_k)
            v1 = evaluate_fixed_control(ctrl, sub).value_at(0.0, *probe)
        if k == 0:
            v1_probe = v1
        fig1_rows.append(
            (
                t_k,
                float(ev0.probe_series[k, 1]),
                v1,
                float(ev2.probe_series[k, 1]),
            )
        )

    # Difference heatmaps over (inventory, second bid coordinate) at deployment time 0.
    ca_fixed = cfg.heatmap_c_ask
    nodes = [float(x) for x in g_true.c_grid(g_true.n - 1)]
    inventories = [int(i) for i in g_true.i_values]
    v1_cols: dict[float, dict[int, float]] = {}
    for x in nodes:
        cb = (cfg.heatmap_c_bid_first,) * (g_true.n - 1) + (x,)
        ctrl = _believer_grid_control(ft1, float(sum(ca_fixed)), float(sum(cb)), rate)
        evx = evaluate_fixed_control(ctrl, g_eval)
        v1_cols[x] = {i: evx.value_at(0.0, i, ca_fixed, cb) for i in inventories}
    fig2_rows = []
    fig3_rows = []
    for i in inventories:
        for x in nodes:
            cb = (cfg.heatmap_c_bid_first,) * (g_true.n - 1) + (x,)
            v0 = ev0.value_at(0.0, i, ca_fixed, cb)
            v2 = ev2.value_at(0.0, i, ca_fixed, cb)
            fig2_rows.append((float(i), x, v2 - v1_cols[x][i]))
            fig3_rows.append((float(i), x, v2 - v0))

    # Closed-loop Monte Carlo at the probe, all strategies on the same seeds.
    spec = cfg.true_spec()
    strategies = (
        ("poisson", FeedbackStrategy("poisson", ft0, believed=ExpSumKernel((), ()))),
        ("one_exp", FeedbackStrategy("one_exp", ft1, believed=cfg.believed_kernel)),
        ("two_exp", FeedbackStrategy("two_exp", ft2, observe_memory=True)),
    )
    probe_state = MarketState(
        inventory=cfg.probe_inventory,
        c_ask=np.asarray(cfg.probe_c_ask, dtype=float),
        c_bid=np.asarray(cfg.probe_c_bid, dtype=float),
        clock=0.0,
    )
    seeds = np.random.SeedSequence(cfg.master_seed).spawn(cfg.n_episodes)
    totals = {
        name: _episode_totals(
            spec, strat, cfg.horizon, seeds, probe_state, cfg.mu_penalty, cfg.workers, 10**7
        )
        for name, strat in strategies
    }

    pde = {
        "poisson": ev0.value_at(0.0, *probe),
        "one_exp": v1_probe,
        "two_exp": ev2.value_at(0.0, *probe),
    }
    rows = tuple(
        ComparisonRow(
            strategy=name,
            pde_value=pde[name],
            mc_mean=float(np.mean(totals[name])),
            mc_stderr=float(np.std(totals[name], ddof=1) / math.sqrt(cfg.n_episodes)),
            n_episodes=cfg.n_episodes,
        )
        for name, _ in strategies
    )

    def gap(hi: str, lo: str) -> StrategyGap:
        diffs = totals[hi] - totals[lo]
        return StrategyGap(
            pair=f"{hi}-{lo}",
            pde_gap=pde[hi] - pde[lo],
            pde_relative_gain=(pde[hi] - pde[lo]) / abs(pde[lo]),
            mc_gap_mean=float(np.mean(diffs)),
            mc_gap_stderr=float(np.std(diffs, ddof=1) / math.sqrt(cfg.n_episodes)),
        )

    gaps = (gap("one_exp", "poisson"), gap("two_exp", "one_exp"))
    return StrategyComparison(
        rows=rows,
        gaps=gaps,
        fig1=tuple(fig1_rows),
        fig2=tuple(fig2_rows),
        fig3=tuple(fig3_rows),
        config=cfg,
    )
