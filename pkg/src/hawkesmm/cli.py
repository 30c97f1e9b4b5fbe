"""Command-line pipeline: every stage as a subcommand emitting CSVs and figures.

Each run resolves its configuration (file < flags), writes the resolved copy
next to the outputs, and is deterministic given (config, seed) — worker counts
change wall time, never bytes.  Exit codes: 0 success, 2 configuration error,
3 input/output error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import pyplot as plt

from .branching import ParticleConfig, _run_tree, centered_generator
from .config import ExperimentConfig, load_config
from .errors import ConfigError, InputOutputError, NumericalError
from .hawkes import IntensitySpec, MarketState, simulate
from .hjb import GridSpec, solve
from .kernels import (
    APPROX_REPORT_HEADER,
    ApproxReport,
    ExpSumKernel,
    PowerLawKernel,
    approximate_power_law,
    approximate_power_law_report,
    kernel_to_json,
    l1_norm,
)
from .marketsim import compare_strategies
from .serialize import write_csv

# ---------------------------------------------------------------- plumbing


def _ensure_out_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise InputOutputError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _write_text(path: str, text: str) -> str:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc
    return path


def _n_workers(config: ExperimentConfig) -> int:
    return config.threads if config.threads is not None else (os.cpu_count() or 1)


def _save_figure(fig, path: str) -> str:
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


# ------------------------------------------------------------ kernel-approx


def cmd_kernel_approx(config: ExperimentConfig, out: str) -> list[str]:
    """Approximate the target kernel at each requested size; report the errors."""
    sec = config.kernel
    if isinstance(sec.target, ExpSumKernel):
        # already an exponential sum: the approximation is the identity
        reports = [ApproxReport(kernel=sec.target, sup_err=0.0, l1_err=0.0, n=sec.target.n)]
    else:
        reports = [
            approximate_power_law_report(
                sec.target, n, horizon=sec.report_horizon, n_grid=sec.report_points
            )
            for n in sec.n_values
        ]

    paths = []
    for rep in reports:
        paths.append(
            _write_text(os.path.join(out, f"kernel_n{rep.n}.json"), kernel_to_json(rep.kernel) + "\n")
        )
    report_path = os.path.join(out, "approx_report.csv")
    write_csv(report_path, APPROX_REPORT_HEADER, [rep.csv_row() for rep in reports])
    paths.append(report_path)

    ts = np.linspace(0.0, sec.report_horizon, 400)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(ts, sec.target.eval(ts), "k--", linewidth=2, label="target")
    for rep in reports:
        ax.plot(ts, rep.kernel.eval(ts), linewidth=1, label=f"n={rep.n}")
    ax.set_xlabel("t")
    ax.set_ylabel("kernel value")
    ax.legend()
    paths.append(_save_figure(fig, os.path.join(out, "kernel_fit.png")))
    return paths


# -------------------------------------------------------------------- solve


def cmd_solve(config: ExperimentConfig, out: str) -> list[str]:
    """Backward sweep on the configured grid; emit binary snapshots and slices."""
    grid = config.grid.grid_spec(config.intensity)
    value, feedback = solve(grid)

    paths = []
    value.to_binary(os.path.join(out, "value.bin"))
    paths.append(os.path.join(out, "value.bin"))
    feedback.to_binary(os.path.join(out, "feedback.bin"))
    paths.append(os.path.join(out, "feedback.bin"))
    value.to_csv(os.path.join(out, "value_t0.csv"), times=[0.0])
    paths.append(os.path.join(out, "value_t0.csv"))
    feedback.to_csv(os.path.join(out, "feedback_t0.csv"), times=[0.0])
    paths.append(os.path.join(out, "feedback_t0.csv"))

    meta_path = os.path.join(out, "solve_meta.csv")
    write_csv(
        meta_path,
        ("key", "value"),
        [
            ("dt_effective", grid.dt_effective),
            ("n_steps", grid.n_steps),
            ("n_snapshots", len(value.t_snapshots)),
            ("n_exponentials", grid.n),
            ("i_min", grid.i_min),
            ("i_max", grid.i_max),
            ("m_c", grid.m_c),
        ],
    )
    paths.append(meta_path)

    zero_memory = (slice(None),) + (0,) * (2 * grid.n)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(grid.i_values, value.slice_at(0.0)[zero_memory], "o-")
    ax.set_xlabel("inventory")
    ax.set_ylabel("value at t=0, zero memory")
    paths.append(_save_figure(fig, os.path.join(out, "value_t0.png")))
    return paths


# ----------------------------------------------------------------- simulate


def cmd_simulate(config: ExperimentConfig, out: str) -> list[str]:
    """Seeded paths under a constant two-sided quote; events and per-path rates."""
    spec = config.intensity.spec()
    sim = config.simulation
    spread = sim.spread
    initial = spec.zero_state(inventory=sim.inventory0)
    seeds = np.random.SeedSequence(config.seed).spawn(sim.n_paths)

    event_rows = []
    summary_rows = []
    logs = []
    for path_id, seed in enumerate(seeds):
        log = simulate(spec, lambda t, s: (spread, spread), sim.horizon, seed, initial=initial)
        logs.append(log)
        event_rows.extend((path_id, t, side, sp) for t, side, sp in log.events)
        n_ask = len(log.times("ask"))
        n_bid = len(log.times("bid"))
        summary_rows.append(
            (path_id, n_ask, n_bid, n_ask / sim.horizon, n_bid / sim.horizon)
        )

    paths = []
    events_path = os.path.join(out, "events.csv")
    write_csv(events_path, ("path", "time", "side", "spread"), event_rows)
    paths.append(events_path)
    summary_path = os.path.join(out, "simulate_summary.csv")
    write_csv(
        summary_path, ("path", "n_ask", "n_bid", "rate_ask", "rate_bid"), summary_rows
    )
    paths.append(summary_path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path_id, log in enumerate(logs):
        times = log.times()
        ax.step(
            np.concatenate(([0.0], times)),
            np.arange(len(times) + 1),
            where="post",
            linewidth=1,
            label=f"path {path_id}" if len(logs) <= 8 else None,
        )
    ax.set_xlabel("t")
    ax.set_ylabel("cumulative events")
    if len(logs) <= 8:
        ax.legend()
    paths.append(_save_figure(fig, os.path.join(out, "counts.png")))
    return paths


# ------------------------------------------------------------------ compare


def _heatmap(ax, rows: tuple[tuple[float, float, float], ...], title: str) -> None:
    i_vals = np.array(sorted({r[0] for r in rows}))
    c_vals = np.array(sorted({r[1] for r in rows}))
    z = np.full((i_vals.size, c_vals.size), np.nan)
    i_pos = {v: k for k, v in enumerate(i_vals)}
    c_pos = {v: k for k, v in enumerate(c_vals)}
    for i, c, d in rows:
        z[i_pos[i], c_pos[c]] = d
    mesh = ax.pcolormesh(c_vals, i_vals, z, shading="nearest")
    ax.set_xlabel("second bid-memory coordinate")
    ax.set_ylabel("inventory")
    ax.set_title(title)
    plt.colorbar(mesh, ax=ax)


def cmd_compare(config: ExperimentConfig, out: str) -> list[str]:
    """Three-strategy comparison: CSV series plus the three figures."""
    cc = replace(config.comparison, master_seed=config.seed, workers=_n_workers(config))
    comparison = compare_strategies(cc)
    paths = comparison.write(out)

    for gap in comparison.gaps:
        print(
            f"{gap.pair}: sweep gap {gap.pde_gap:+.6f} "
            f"(relative gain {gap.pde_relative_gain:+.4%}), "
            f"paired episodes {gap.mc_gap_mean:+.6f} +- {gap.mc_gap_stderr:.6f}"
        )

    labels = [row.strategy for row in comparison.rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    series = np.asarray(comparison.fig1)
    for col, label in enumerate(labels, start=1):
        ax.plot(series[:, 0], series[:, col], label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("value at the probe state")
    ax.legend()
    paths.append(_save_figure(fig, os.path.join(out, "fig1.png")))

    for name, rows, title in (
        ("fig2.png", comparison.fig2, f"value difference: {labels[2]} minus {labels[1]}"),
        ("fig3.png", comparison.fig3, f"value difference: {labels[2]} minus {labels[0]}"),
    ):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        _heatmap(ax, rows, title)
        paths.append(_save_figure(fig, os.path.join(out, name)))
    return paths


# ---------------------------------------------------------------- branching


def _fig4_tree_batch(payload) -> tuple[np.ndarray, np.ndarray]:
    """One contiguous block of trees for one kernel size.

    Worker processes rebuild the generator here (its coefficients are closures,
    so the recipe travels instead); per-tree streams are keyed by (probe, tree
    index), making results independent of the batch split.
    """
    spec, penalty, r, i0_ask, i0_bid, state, cfg, entropy, probe_key, lo, hi = payload
    poly = centered_generator(spec, penalty, i0_ask=i0_ask, i0_bid=i0_bid, r=r)
    values = np.empty(hi - lo)
    sizes = np.empty(hi - lo, dtype=np.int64)
    for j, k in enumerate(range(lo, hi)):
        rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(probe_key, k)))
        values[j], sizes[j] = _run_tree(0.0, state, poly, cfg, rng)
    return values, sizes


def _fig4_tree_values(
    pool, n_workers: int, n_trees: int, payload_head: tuple
) -> tuple[np.ndarray, np.ndarray]:
    if pool is None:
        values, sizes = _fig4_tree_batch(payload_head + (0, n_trees))
        return values, sizes
    step = max(1, math.ceil(n_trees / (4 * n_workers)))
    bounds = [(lo, min(lo + step, n_trees)) for lo in range(0, n_trees, step)]
    parts = list(pool.map(_fig4_tree_batch, [payload_head + b for b in bounds]))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _surrogate_centers(config: ExperimentConfig, target: PowerLawKernel):
    """One-exponential surrogate sweep: expansion centers and increment ranges.

    The surrogate matches the target's value at zero and L1 norm exactly — the
    two quantities every approximation size preserves — so one sweep serves all
    sizes.  Returns per-probe centers, the increment ranges over the grid at the
    center time, and the per-side fractions beyond the zero-spread kink (where
    the quadratic expansion gives way to the exact linear income).
    """
    sec = config.particle
    k0 = target.eval(0.0)
    alpha_t = k0
    gamma_t = k0 / l1_norm(target)
    c_hot = sec.hot_events * k0
    horizon = config.grid.horizon
    t_center = sec.center_time_frac * horizon

    i_lo = min(min(sec.probe_inventories) - 4, -1)
    i_hi = max(max(sec.probe_inventories) + 4, 1)
    c_max = c_hot + 2.5 * alpha_t
    m_c = min(81, int(c_max / (alpha_t / 8.0)) + 2)
    kwargs = dict(
        i_min=i_lo,
        i_max=i_hi,
        c_max=c_max,
        m_c=m_c,
        T=horizon,
        mu_penalty=config.grid.mu_penalty,
        k_over_sigma=config.intensity.k_over_sigma,
        mu_base=config.intensity.mu,
        kernel=ExpSumKernel(weights=(alpha_t,), rates=(gamma_t,)),
        r=config.grid.r,
        store_every=10,
    )
    rate = GridSpec(dt=1e-9, **kwargs).cfl_rate()
    value, _ = solve(GridSpec(dt=min(config.grid.dt, 0.999 / rate), **kwargs))

    decayed = c_hot * math.exp(-gamma_t * t_center)
    centers = {}
    for inv in sec.probe_inventories:
        u0 = value.value_at(t_center, inv, [decayed], [0.0])
        centers[inv] = (
            value.value_at(t_center, inv - 1, [decayed + alpha_t], [0.0]) - u0,
            value.value_at(t_center, inv + 1, [decayed], [alpha_t]) - u0,
        )

    # increment ranges and kink fractions over the whole slice at the center time
    sl = value.slice_at(t_center)  # (n_i, m_c, m_c)
    grid = value.grid
    cg = grid.c_grid(0)
    dc = grid.dc(0)
    pos = np.minimum((cg + alpha_t) / dc, m_c - 1 - 1e-12)
    k_lo = pos.astype(int)
    frac = pos - k_lo
    inside = cg + alpha_t <= grid.c_max[0] + 1e-12
    # ask fill: inventory falls, ask memory jumps
    bumped_a = sl[:, k_lo, :] * (1.0 - frac)[None, :, None] + sl[:, k_lo + 1, :] * frac[None, :, None]
    d_ask = bumped_a[:-1][:, inside, :] - sl[1:][:, inside, :]
    # bid fill: inventory rises, bid memory jumps
    bumped_b = sl[:, :, k_lo] * (1.0 - frac)[None, None, :] + sl[:, :, k_lo + 1] * frac[None, None, :]
    d_bid = bumped_b[1:][:, :, inside] - sl[:-1][:, :, inside]
    kink = 1.0 / config.intensity.k_over_sigma
    ranges = {
        "t_center": t_center,
        "d_ask_min": float(d_ask.min()),
        "d_ask_max": float(d_ask.max()),
        "d_bid_min": float(d_bid.min()),
        "d_bid_max": float(d_bid.max()),
        "frac_ask_saturated": float((d_ask >= kink).mean()),
        "frac_bid_saturated": float((d_bid >= kink).mean()),
    }
    return centers, ranges


def cmd_branching(config: ExperimentConfig, out: str) -> list[str]:
    """Convergence study: particle estimates across approximation sizes.

    The largest size is the reference; all sizes replay the same tree
    topologies per probe (lifetimes and labels never depend on the kernel), so
    the per-tree differences are paired and their noise largely cancels.
    """
    target = config.kernel.target
    if not isinstance(target, PowerLawKernel):
        raise ConfigError(
            "the convergence study approximates a power-law target; "
            "kernel.target is already an exponential sum"
        )
    sec = config.particle
    sizes = sec.n_values
    kernels = {n: approximate_power_law(target, n) for n in sizes}
    centers, ranges = _surrogate_centers(config, target)

    horizon = config.grid.horizon
    cfg = ParticleConfig(
        horizon=horizon,
        seed=config.seed,
        lifetime_rate=sec.lifetime_rate,
        max_particles=sec.max_particles,
    )
    n_workers = _n_workers(config)
    pool = ProcessPoolExecutor(max_workers=n_workers) if n_workers > 1 else None

    estimate_rows = []
    conv_rows = []
    slopes = {}
    fig_series = {}
    try:
        for probe_key, inv in enumerate(sec.probe_inventories):
            i0_ask, i0_bid = centers[inv]
            values = {}
            for n in sizes:
                kernel = kernels[n]
                spec = IntensitySpec(
                    mu=config.intensity.mu, kernel=kernel, k_over_sigma=config.intensity.k_over_sigma
                )
                state = MarketState(
                    inventory=inv,
                    c_ask=sec.hot_events * np.asarray(kernel.weights),
                    c_bid=np.zeros(kernel.n),
                )
                head = (
                    spec, config.grid.mu_penalty, config.grid.r,
                    i0_ask, i0_bid, state, cfg, config.seed, probe_key,
                )
                vals, tree_sizes = _fig4_tree_values(pool, n_workers, sec.n_trees, head)
                values[n] = vals
                estimate_rows.append(
                    (
                        inv,
                        n,
                        float(vals.mean()),
                        float(vals.std(ddof=1) / math.sqrt(sec.n_trees)),
                        sec.n_trees,
                        float(tree_sizes.mean()),
                        int(tree_sizes.max()),
                    )
                )
            reference = values[sizes[-1]]
            ref_mean = float(reference.mean())
            if ref_mean == 0.0:
                raise NumericalError(
                    f"reference estimate at inventory {inv} is exactly zero; "
                    "relative differences are undefined (increase n_trees)"
                )
            logrel = []
            for n in sizes[:-1]:
                diff = values[n] - reference
                diff_mean = float(diff.mean())
                diff_stderr = float(diff.std(ddof=1) / math.sqrt(sec.n_trees))
                rel = abs(diff_mean) / abs(ref_mean)
                if rel == 0.0:
                    raise NumericalError(
                        f"estimates for sizes {n} and {sizes[-1]} coincide exactly at "
                        f"inventory {inv}; log relative difference is undefined"
                    )
                logrel.append(math.log(rel))
                conv_rows.append(
                    (inv, n, float(values[n].mean()), ref_mean, diff_mean, diff_stderr, math.log(rel))
                )
            slope = float(np.polyfit(np.asarray(sizes[:-1], dtype=float), np.asarray(logrel), 1)[0])
            slopes[inv] = slope
            fig_series[inv] = (list(sizes[:-1]), logrel)
            print(f"probe inventory {inv:+d}: OLS slope of log relative difference {slope:+.5f}")
    finally:
        if pool is not None:
            pool.shutdown()

    print(
        "surrogate increments at t={t_center:.3g}: ask [{d_ask_min:+.3f}, {d_ask_max:+.3f}] "
        "({frac_ask_saturated:.1%} beyond the kink), bid [{d_bid_min:+.3f}, {d_bid_max:+.3f}] "
        "({frac_bid_saturated:.1%} beyond the kink)".format(**ranges)
    )

    paths = []
    centers_path = os.path.join(out, "centers.csv")
    write_csv(
        centers_path,
        ("probe_inventory", "i0_ask", "i0_bid"),
        [(inv, centers[inv][0], centers[inv][1]) for inv in sec.probe_inventories],
    )
    paths.append(centers_path)
    increments_path = os.path.join(out, "increment_report.csv")
    write_csv(
        increments_path,
        ("t_center", "d_ask_min", "d_ask_max", "d_bid_min", "d_bid_max",
         "frac_ask_saturated", "frac_bid_saturated"),
        [tuple(ranges[k] for k in (
            "t_center", "d_ask_min", "d_ask_max", "d_bid_min", "d_bid_max",
            "frac_ask_saturated", "frac_bid_saturated"))],
    )
    paths.append(increments_path)
    estimates_path = os.path.join(out, "branching_estimates.csv")
    write_csv(
        estimates_path,
        ("probe_inventory", "n", "mean", "stderr", "n_trees", "mean_tree_size", "max_tree_size"),
        estimate_rows,
    )
    paths.append(estimates_path)
    conv_path = os.path.join(out, "fig4_convergence.csv")
    write_csv(
        conv_path,
        ("probe_inventory", "n", "estimate", "reference", "diff_mean", "diff_stderr", "log_rel_diff"),
        conv_rows,
    )
    paths.append(conv_path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for inv, (xs, ys) in fig_series.items():
        points = ax.plot(xs, ys, "o", label=f"inventory {inv:+d} (slope {slopes[inv]:+.4f})")
        coeffs = np.polyfit(np.asarray(xs, dtype=float), np.asarray(ys), 1)
        ax.plot(xs, np.polyval(coeffs, xs), "-", color=points[0].get_color(), linewidth=1)
    ax.set_xlabel("number of exponentials n")
    ax.set_ylabel("log relative difference to the reference")
    ax.legend()
    paths.append(_save_figure(fig, os.path.join(out, "fig4.png")))
    return paths


# --------------------------------------------------------------------- main


_COMMANDS = (
    ("kernel-approx", cmd_kernel_approx, "approximate the target kernel and report the errors"),
    ("solve", cmd_solve, "backward sweep of the control equation on a grid"),
    ("simulate", cmd_simulate, "seeded event paths under a constant quote"),
    ("compare", cmd_compare, "three-strategy comparison with figure series"),
    ("branching", cmd_branching, "particle convergence study across kernel sizes"),
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hawkesmm",
        description="market-making toolkit under self-exciting order flow",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_text in _COMMANDS:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file (defaults reproduce the reference experiments)")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--threads", type=int, default=None, help="worker count (default: available parallelism)")
        p.set_defaults(func=func)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            config = replace(config, seed=args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            config = replace(config, threads=args.threads)
        if args.out is not None:
            config = replace(config, out_dir=args.out)
        config = replace(config, intensity=config.intensity.resolve_kernel_file())
        out = _ensure_out_dir(config.out_dir)
        resolved = _write_text(os.path.join(out, "resolved_config.json"), config.resolved_json())
        paths = [resolved] + args.func(config, out)
        for path in paths:
            print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InputOutputError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
