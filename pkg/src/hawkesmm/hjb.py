"""Backward grid solver for the market maker's control problem.

State: inventory i plus one memory coordinate per kernel exponential per side.
Between events the memory decays (first-order transport toward 0); each side's
fill operator jumps the state (i∓1, that side's memory +α) and pays spread+ΔU,
maximized in closed form over the quoted spread.  The scheme is explicit Euler
with upwind differences for the transport and multilinear interpolation for the
off-grid jump targets; the step restriction that keeps it monotone is enforced
when the grid is built.

Two sweeps share the machinery: `solve` takes the pointwise supremum (optimal
maker) and extracts the feedback spreads; `evaluate_fixed_control` freezes an
arbitrary spread policy and integrates the resulting linear equation, which is
the value of *deploying* that policy — the object the strategy comparison plots.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError
from .kernels import ExpSumKernel, kernel_from_json, kernel_to_json
from .serialize import fmt17, write_csv

__all__ = [
    "GridSpec",
    "GridMesh",
    "ValueGrid",
    "FeedbackTable",
    "hamiltonian_max",
    "step_backward",
    "solve",
    "evaluate_fixed_control",
]


def hamiltonian_max(I, phi, k_over_sigma: float):
    """Exact maximizer and value of δ ↦ phi·e^{-(k/σ)δ}(δ + I) over δ ≥ 0.

    The interior optimum δ = σ/k − I applies while it is positive; past the kink
    the boundary δ = 0 wins and the value is linear in I.  Closed form, so both
    outputs broadcast over arrays.
    """
    sk = 1.0 / k_over_sigma
    I = np.asarray(I, dtype=float)
    phi = np.asarray(phi, dtype=float)
    spread = np.maximum(sk - I, 0.0)
    value = phi * np.where(I >= sk, I, sk * np.exp(I / sk - 1.0))
    if spread.ndim == 0:
        return float(spread), float(value)
    return spread, value


@dataclass(frozen=True)
class GridSpec:
    """Geometry and model parameters for one backward sweep.

    `c_max` is a scalar or one bound per kernel exponential (applied to both
    sides); `dt` is an upper bound — the sweep uses T/ceil(T/dt) so the last step
    lands exactly on t = 0.  `store_every` thins the stored snapshots (the sweep
    itself always runs every step); the t = 0 and t = T slices are always kept.
    """

    i_min: int
    i_max: int
    c_max: float | tuple[float, ...]
    m_c: int
    dt: float
    T: float
    mu_penalty: float
    k_over_sigma: float
    mu_base: float
    kernel: ExpSumKernel
    r: float = 0.0
    store_every: int = 1

    def __post_init__(self) -> None:
        if not (self.i_min < 0 < self.i_max):
            raise ValueError("inventory bounds must straddle zero")
        n = self.kernel.n
        if isinstance(self.c_max, (int, float)):
            object.__setattr__(self, "c_max", (float(self.c_max),) * n)
        else:
            object.__setattr__(self, "c_max", tuple(float(x) for x in self.c_max))
        if len(self.c_max) != n:
            raise ValueError("c_max must be scalar or give one bound per exponential")
        if n and any(b <= max(self.kernel.weights) for b in self.c_max):
            raise ValueError("c_max must exceed every kernel weight (jump from 0 must stay inside)")
        if n and self.m_c < 2:
            raise ValueError("need at least two points per memory dimension")
        if self.T <= 0 or self.dt <= 0:
            raise ValueError("T and dt must be positive")
        if self.mu_penalty < 0 or self.mu_base < 0 or self.r < 0:
            raise ValueError("rates and penalties must be nonnegative")
        if not self.k_over_sigma > 0:
            raise ValueError("k_over_sigma must be positive")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")
        if self.dt * self.cfl_rate() > 1.0 + 1e-12:
            raise ValueError(
                f"dt={self.dt} violates the stability bound: require "
                f"dt*(r + sum_j gamma_j*c_max_j/dc_j + 2*sup_phi) <= 1, i.e. dt <= {1.0 / self.cfl_rate():.6g}"
            )

    # -- geometry ---------------------------------------------------------

    @property
    def n(self) -> int:
        return self.kernel.n

    @property
    def n_i(self) -> int:
        return self.i_max - self.i_min + 1

    @property
    def i_values(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max + 1)

    def c_grid(self, dim: int) -> np.ndarray:
        return np.linspace(0.0, self.c_max[dim], self.m_c)

    def dc(self, dim: int) -> float:
        return self.c_max[dim] / (self.m_c - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_i,) + (self.m_c,) * (2 * self.n)

    def cfl_rate(self) -> float:
        """r + Σ_j γ_j c_max_j/Δc_j over both sides + 2·sup Φ — the 1/dt the scheme tolerates."""
        sup_phi = self.mu_base + sum(self.c_max)
        transport = 2.0 * sum(
            g * self.c_max[d] / self.dc(d) for d, g in enumerate(self.kernel.rates)
        )
        return self.r + transport + 2.0 * sup_phi

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.T / self.dt - 1e-12)))

    @property
    def dt_effective(self) -> float:
        return self.T / self.n_steps

    def to_dict(self) -> dict:
        return {
            "i_min": self.i_min,
            "i_max": self.i_max,
            "c_max": list(self.c_max),
            "m_c": self.m_c,
            "dt": self.dt,
            "T": self.T,
            "mu_penalty": self.mu_penalty,
            "k_over_sigma": self.k_over_sigma,
            "mu_base": self.mu_base,
            "kernel": json.loads(kernel_to_json(self.kernel)),
            "r": self.r,
            "store_every": self.store_every,
        }

    @staticmethod
    def from_dict(d: dict) -> "GridSpec":
        d = dict(d)
        d["kernel"] = kernel_from_json(json.dumps(d["kernel"]))
        d["c_max"] = tuple(d["c_max"])
        return GridSpec(**d)


class GridMesh:
    """Broadcastable coordinate arrays over a GridSpec's full state grid.

    Axis 0 is inventory; axes 1..n are the ask memory dimensions, n+1..2n bid.
    Everything is kept in broadcast (singleton-padded) form, so holding a mesh is
    cheap even in four memory dimensions.
    """

    def __init__(self, spec: GridSpec) -> None:
        self.spec = spec
        n = spec.n
        nd = 1 + 2 * n
        self.I = spec.i_values.reshape((-1,) + (1,) * (2 * n)).astype(float)
        self.c_ask: list[np.ndarray] = []
        self.c_bid: list[np.ndarray] = []
        for d in range(n):
            shape = [1] * nd
            shape[1 + d] = spec.m_c
            self.c_ask.append(spec.c_grid(d).reshape(shape))
            shape = [1] * nd
            shape[1 + n + d] = spec.m_c
            self.c_bid.append(spec.c_grid(d).reshape(shape))
        self.sum_ask = sum(self.c_ask) if n else np.zeros((1,) * nd)
        self.sum_bid = sum(self.c_bid) if n else np.zeros((1,) * nd)
        self.phi_ask = spec.mu_base + self.sum_ask
        self.phi_bid = spec.mu_base + self.sum_bid
        self.penalty = -spec.mu_penalty * self.I**2


def _shift_clamped(values: np.ndarray, axis: int, offset: int) -> np.ndarray:
    """values[..., k+offset, ...] with out-of-range indices clamped to the edge."""
    m = values.shape[axis]
    idx = np.clip(np.arange(m) + offset, 0, m - 1)
    return np.take(values, idx, axis=axis)


class _Stepper:
    """Precomputed machinery for one grid: jump targets, transport, penalties."""

    def __init__(self, spec: GridSpec) -> None:
        self.spec = spec
        self.mesh = GridMesh(spec)
        n = spec.n
        # fractional cell shift of the jump +α along each memory axis
        self.jump_cells = [spec.kernel.weights[d] / spec.dc(d) for d in range(n)] if n else []
        # transport coefficient γ_d c_d / Δc_d, broadcast per axis, both sides
        self.transport: list[tuple[int, np.ndarray]] = []
        for d in range(n):
            coef = spec.kernel.rates[d] / spec.dc(d)
            self.transport.append((1 + d, coef * self.mesh.c_ask[d]))
            self.transport.append((1 + n + d, coef * self.mesh.c_bid[d]))

    def _jump_interp(self, values: np.ndarray, side: str) -> np.ndarray:
        """Value at (i∓1, c_side + α) by axiswise linear interpolation, edges clamped."""
        n = self.spec.n
        out = _shift_clamped(values, 0, -1 if side == "ask" else +1)
        axis0 = 1 if side == "ask" else 1 + n
        for d in range(n):
            s = self.jump_cells[d]
            base, theta = int(math.floor(s)), s - math.floor(s)
            axis = axis0 + d
            lo = _shift_clamped(out, axis, base) if base else out
            if theta > 0.0:
                hi = _shift_clamped(out, axis, base + 1)
                out = (1.0 - theta) * lo + theta * hi
            else:
                out = lo
        return out

    def jump_increments(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """D_a V and D_b V: value change caused by one fill on each side."""
        da = self._jump_interp(values, "ask") - values
        db = self._jump_interp(values, "bid") - values
        return da, db

    def _transport_term(self, values: np.ndarray) -> np.ndarray:
        """Σ γ c · (upwind ∂_c V): backward differences, nothing needed at c = 0."""
        total = np.zeros_like(values)
        for axis, coef in self.transport:
            diff = np.empty_like(values)
            src = [slice(None)] * values.ndim
            dst = [slice(None)] * values.ndim
            dst[axis] = slice(1, None)
            src[axis] = slice(None, -1)
            diff[tuple(dst)] = values[tuple(dst)] - values[tuple(src)]
            dst[axis] = 0
            diff[tuple(dst)] = 0.0  # coefficient vanishes at c = 0 anyway
            total += coef * diff
        return total

    def step(
        self,
        values: np.ndarray,
        spreads: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> np.ndarray:
        """One explicit Euler step backward in time.

        With `spreads` None the fill terms take their pointwise supremum (the
        nonlinear equation); otherwise the given (ask, bid) spread arrays are
        frozen in and the step is linear in the value.
        """
        spec, mesh = self.spec, self.mesh
        dt = spec.dt_effective
        da, db = self.jump_increments(values)
        if spreads is None:
            _, ha = hamiltonian_max(da, mesh.phi_ask, spec.k_over_sigma)
            _, hb = hamiltonian_max(db, mesh.phi_bid, spec.k_over_sigma)
        else:
            ka, kb = spreads
            ha = mesh.phi_ask * np.exp(-spec.k_over_sigma * ka) * (ka + da)
            hb = mesh.phi_bid * np.exp(-spec.k_over_sigma * kb) * (kb + db)
        out = (
            values * (1.0 - spec.r * dt)
            - dt * self._transport_term(values)
            + dt * (mesh.penalty + ha + hb)
        )
        if not np.all(np.isfinite(out)):
            raise NumericalError(
                "non-finite values in backward step; the step bound "
                f"dt <= {1.0 / spec.cfl_rate():.6g} was presumably violated by inputs"
            )
        return out

    def feedback(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        da, db = self.jump_increments(values)
        sa, _ = hamiltonian_max(da, self.mesh.phi_ask, self.spec.k_over_sigma)
        sb, _ = hamiltonian_max(db, self.mesh.phi_bid, self.spec.k_over_sigma)
        return sa, sb


def step_backward(u_next: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Single optimal-control step from the slice at t+dt to the slice at t."""
    if u_next.shape != grid.shape:
        raise ValueError(f"value slice shape {u_next.shape} does not match grid {grid.shape}")
    return _Stepper(grid).step(np.asarray(u_next, dtype=float))


def _snapshot_steps(spec: GridSpec) -> list[int]:
    n = spec.n_steps
    keep = sorted({0, n} | {k for k in range(0, n + 1, spec.store_every)})
    return keep


def _nearest_snapshot(t_snapshots: np.ndarray, grid: GridSpec, t: float) -> int:
    idx = int(np.argmin(np.abs(t_snapshots - t)))
    gap = abs(float(t_snapshots[idx]) - t)
    if gap > grid.dt_effective * grid.store_every * 0.5 + 1e-9:
        raise ValueError(f"no stored slice near t={t}; nearest is {t_snapshots[idx]}")
    return idx


@dataclass(frozen=True)
class ValueGrid:
    """Stored value snapshots over the grid, kept at solver precision.

    `probe_series`, when present, is the (t, value) time series recorded at the
    probe state handed to the sweep — the raw material of the value-vs-time plot.
    """

    values: np.ndarray  # (n_snapshots,) + grid.shape
    t_snapshots: np.ndarray
    grid: GridSpec
    probe_series: np.ndarray | None = None

    def snapshot_index(self, t: float) -> int:
        return _nearest_snapshot(self.t_snapshots, self.grid, t)

    def slice_at(self, t: float) -> np.ndarray:
        return self.values[self.snapshot_index(t)]

    def value_at(self, t: float, inventory: int, c_ask: Sequence[float], c_bid: Sequence[float]) -> float:
        return float(_interp_state(self.grid, self.slice_at(t), inventory, c_ask, c_bid))

    def to_csv(self, path, times: Sequence[float] | None = None) -> None:
        _grid_table_to_csv(path, self.grid, self.t_snapshots, (self.values,), ("value",), times)

    def to_binary(self, path) -> None:
        _write_binary(path, self.grid, self.t_snapshots, {"values": self.values})

    @staticmethod
    def from_binary(path) -> "ValueGrid":
        grid, ts, arrays = _read_binary(path, ("values",))
        return ValueGrid(values=arrays["values"], t_snapshots=ts, grid=grid)


@dataclass(frozen=True)
class FeedbackTable:
    """Optimal ask/bid spreads on the same snapshots as the value grid."""

    ask: np.ndarray
    bid: np.ndarray
    t_snapshots: np.ndarray
    grid: GridSpec

    def __post_init__(self) -> None:
        if np.any(self.ask < 0) or np.any(self.bid < 0):
            raise ValueError("spreads must be nonnegative")

    def snapshot_index(self, t: float) -> int:
        return _nearest_snapshot(self.t_snapshots, self.grid, t)

    def spreads_at(self, t: float, inventory: int, c_ask, c_bid) -> tuple[float, float]:
        idx = self.snapshot_index(t)
        a = _interp_state(self.grid, self.ask[idx], inventory, c_ask, c_bid)
        b = _interp_state(self.grid, self.bid[idx], inventory, c_ask, c_bid)
        return float(a), float(b)

    def to_csv(self, path, times: Sequence[float] | None = None) -> None:
        _grid_table_to_csv(
            path, self.grid, self.t_snapshots, (self.ask, self.bid), ("ask", "bid"), times
        )

    def to_binary(self, path) -> None:
        _write_binary(path, self.grid, self.t_snapshots, {"ask": self.ask, "bid": self.bid})

    @staticmethod
    def from_binary(path) -> "FeedbackTable":
        grid, ts, arrays = _read_binary(path, ("ask", "bid"))
        return FeedbackTable(ask=arrays["ask"], bid=arrays["bid"], t_snapshots=ts, grid=grid)


def solve(grid: GridSpec, probe: tuple | None = None) -> tuple[ValueGrid, FeedbackTable]:
    """Backward sweep of the nonlinear equation from T to 0.

    Terminal condition is identically zero (no terminal inventory reward).
    Returns stored value snapshots and the feedback spreads extracted from them.
    If `probe` is given as (inventory, c_ask, c_bid), the value time series at
    that state is recorded at every step and stored on the returned grid as
    `probe_series` — the raw material of the value-vs-time figure.
    """
    stepper = _Stepper(grid)
    keep = set(_snapshot_steps(grid))
    n_steps = grid.n_steps
    dt = grid.dt_effective
    values = np.zeros(grid.shape)
    snaps: dict[int, np.ndarray] = {}
    feed_a: dict[int, np.ndarray] = {}
    feed_b: dict[int, np.ndarray] = {}
    probe_series = []

    def record(k: int, v: np.ndarray) -> None:
        if k in keep:
            snaps[k] = v.copy()
            sa, sb = stepper.feedback(v)
            feed_a[k] = sa
            feed_b[k] = sb
        if probe is not None:
            probe_series.append((k * dt, float(_interp_state(grid, v, *probe))))

    record(n_steps, values)
    for k in range(n_steps - 1, -1, -1):
        values = stepper.step(values)
        record(k, values)

    order = sorted(snaps)
    ts = np.array([k * dt for k in order])
    vg = ValueGrid(
        values=np.stack([snaps[k] for k in order]),
        t_snapshots=ts,
        grid=grid,
        probe_series=np.array(sorted(probe_series)) if probe is not None else None,
    )
    ft = FeedbackTable(
        ask=np.stack([feed_a[k] for k in order]),
        bid=np.stack([feed_b[k] for k in order]),
        t_snapshots=ts,
        grid=grid,
    )
    return vg, ft


def evaluate_fixed_control(
    control: Callable[[float, GridMesh], tuple[np.ndarray, np.ndarray]],
    true_grid: GridSpec,
    probe: tuple | None = None,
) -> ValueGrid:
    """Value of deploying a frozen spread policy in the given (true) model.

    `control(t, mesh)` must return nonnegative ask/bid spread arrays
    broadcastable to the grid shape; each backward step freezes those spreads in
    place of the pointwise supremum, making the equation linear.  The result is
    comparable to `solve`'s value grid: optimal input reproduces it up to
    discretization error, anything else sits below.
    """
    stepper = _Stepper(true_grid)
    keep = set(_snapshot_steps(true_grid))
    n_steps = true_grid.n_steps
    dt = true_grid.dt_effective
    values = np.zeros(true_grid.shape)
    snaps: dict[int, np.ndarray] = {}
    probe_series = []

    def record(k: int, v: np.ndarray) -> None:
        if k in keep:
            snaps[k] = v.copy()
        if probe is not None:
            probe_series.append((k * dt, float(_interp_state(true_grid, v, *probe))))

    record(n_steps, values)
    for k in range(n_steps - 1, -1, -1):
        t = k * dt  # spreads quoted over [t, t+dt); use the left endpoint
        ka, kb = control(t, stepper.mesh)
        ka = np.asarray(ka, dtype=float)
        kb = np.asarray(kb, dtype=float)
        if np.any(ka < -1e-9) or np.any(kb < -1e-9):
            raise ValueError("control produced negative spreads")
        values = stepper.step(values, spreads=(np.maximum(ka, 0.0), np.maximum(kb, 0.0)))
        record(k, values)

    order = sorted(snaps)
    ts = np.array([k * dt for k in order])
    return ValueGrid(
        values=np.stack([snaps[k] for k in order]),
        t_snapshots=ts,
        grid=true_grid,
        probe_series=np.array(sorted(probe_series)) if probe is not None else None,
    )


# ------------------------------------------------------------- interpolation


def _interp_state(grid: GridSpec, slice_values: np.ndarray, inventory, c_ask, c_bid) -> float:
    """Multilinear interpolation at one state; inventory snaps to its node."""
    i_idx = int(round(float(inventory))) - grid.i_min
    if not 0 <= i_idx < grid.n_i:
        raise ValueError(f"inventory {inventory} outside grid [{grid.i_min}, {grid.i_max}]")
    out = slice_values[i_idx]
    coords = list(np.atleast_1d(np.asarray(c_ask, dtype=float))) + list(
        np.atleast_1d(np.asarray(c_bid, dtype=float))
    )
    if len(coords) != 2 * grid.n:
        raise ValueError("memory coordinates do not match the kernel dimension")
    # interpolate the leading axis away, one memory dimension at a time
    for d, x in enumerate(coords):
        dim = d % grid.n
        dc = grid.dc(dim)
        pos = x / dc
        if pos < -1e-9 or pos > grid.m_c - 1 + 1e-9:
            raise ValueError(f"memory coordinate {x} outside [0, {grid.c_max[dim]}]")
        k = int(np.clip(math.floor(pos), 0, grid.m_c - 2))
        theta = np.clip(pos - k, 0.0, 1.0)
        out = (1.0 - theta) * out[k] + theta * out[k + 1]
    return float(out)


# ------------------------------------------------------------------ file I/O


def _grid_table_to_csv(path, grid, t_snapshots, arrays, names, times) -> None:
    """Flatten chosen time slices to rows t,i,c_a...,c_b...,<names...>."""
    if times is None:
        times = [0.0, grid.T]
    header = (
        ["t", "i"]
        + [f"c_a{d + 1}" for d in range(grid.n)]
        + [f"c_b{d + 1}" for d in range(grid.n)]
        + list(names)
    )
    axes = [grid.c_grid(d) for d in range(grid.n)] * 2 if grid.n else []
    mesh = np.meshgrid(grid.i_values.astype(float), *axes, indexing="ij") if grid.n else [
        grid.i_values.astype(float)
    ]
    flat_coords = [m.ravel() for m in mesh]

    def rows():
        for t in times:
            idx = int(np.argmin(np.abs(np.asarray(t_snapshots) - t)))
            slices = [np.asarray(a[idx], dtype=float).ravel() for a in arrays]
            for j in range(flat_coords[0].size):
                yield [t, int(flat_coords[0][j])] + [c[j] for c in flat_coords[1:]] + [
                    s[j] for s in slices
                ]

    write_csv(path, header, rows())


_BINARY_MAGIC = b"HMMGRID1\n"


def _write_binary(path, grid: GridSpec, t_snapshots, arrays: dict) -> None:
    """Versioned, deterministic binary snapshot: magic, json header, raw arrays."""
    header = {
        "grid": grid.to_dict(),
        "t_snapshots": [float(t) for t in t_snapshots],
        "arrays": {
            name: {"dtype": str(a.dtype), "shape": list(a.shape)} for name, a in arrays.items()
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in sorted(arrays):
            fh.write(np.ascontiguousarray(arrays[name]).tobytes())


def _read_binary(path, names):
    with open(path, "rb") as fh:
        magic = fh.read(len(_BINARY_MAGIC))
        if magic != _BINARY_MAGIC:
            raise ValueError(f"not a grid snapshot file: {path}")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        grid = GridSpec.from_dict(header["grid"])
        ts = np.array(header["t_snapshots"])
        arrays = {}
        for name in sorted(header["arrays"]):
            meta = header["arrays"][name]
            count = int(np.prod(meta["shape"]))
            data = np.frombuffer(
                fh.read(count * np.dtype(meta["dtype"]).itemsize), dtype=meta["dtype"]
            )
            arrays[name] = data.reshape(meta["shape"])
    missing = set(names) - set(arrays)
    if missing:
        raise ValueError(f"snapshot missing arrays: {sorted(missing)}")
    return grid, ts, arrays
