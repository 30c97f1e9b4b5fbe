"""Experiment configuration: a small JSON schema with full defaults.

The sections map onto the library's own objects: ``kernel`` is the
approximation target plus report request, ``intensity`` and ``grid`` assemble a
backward-sweep :class:`~hawkesmm.hjb.GridSpec`, ``particle`` sizes the
branching-convergence study, ``simulation`` the raw path runs, and
``comparison`` the three-strategy experiment.  Every field has a default that
reproduces the reference experiments, so an empty document — or no config file
at all — is a valid configuration.  Unknown keys anywhere are rejected rather
than ignored: a typo should fail loudly, not silently run the defaults.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

from .errors import ConfigError, InputOutputError
from .hawkes import IntensitySpec
from .hjb import GridSpec
from .kernels import ExpSumKernel, Kernel, PowerLawKernel, kernel_from_json
from .marketsim import ComparisonConfig

# ------------------------------------------------------------------ primitives


def _mapping(path: str, value) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(path: str, data: dict, allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(
            f"{path}: unknown key(s) {', '.join(map(repr, unknown))}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def _as_float(path: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise ConfigError(f"{path}: must be finite, got {value!r}")
    return out


def _as_int(path: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_str(path: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _as_float_tuple(path: str, value) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of numbers, got {value!r}")
    return tuple(_as_float(f"{path}[{k}]", v) for k, v in enumerate(value))


def _as_int_tuple(path: str, value) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of integers, got {value!r}")
    return tuple(_as_int(f"{path}[{k}]", v) for k, v in enumerate(value))


def _kernel_from(path: str, value) -> Kernel:
    data = _mapping(path, value)
    kind = data.get("type")
    if kind == "expsum":
        _reject_unknown(path, data, ("type", "weights", "rates"))
        try:
            return ExpSumKernel(
                weights=_as_float_tuple(f"{path}.weights", data.get("weights", ())),
                rates=_as_float_tuple(f"{path}.rates", data.get("rates", ())),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if kind == "powerlaw":
        _reject_unknown(path, data, ("type", "lam", "alpha", "beta", "eps"))
        try:
            return PowerLawKernel(
                lam=_as_float(f"{path}.lam", data.get("lam", 0.1)),
                alpha=_as_float(f"{path}.alpha", data.get("alpha", 0.7)),
                beta=_as_float(f"{path}.beta", data.get("beta", 0.4)),
                eps=_as_float(f"{path}.eps", data.get("eps", 0.01)),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.type: expected 'expsum' or 'powerlaw', got {kind!r}")


def _expsum_from(path: str, value) -> ExpSumKernel:
    kernel = _kernel_from(path, value)
    if not isinstance(kernel, ExpSumKernel):
        raise ConfigError(f"{path}: this field needs an exponential-sum kernel")
    return kernel


def _kernel_dict(kernel: Kernel) -> dict:
    if isinstance(kernel, ExpSumKernel):
        return {"type": "expsum", "weights": list(kernel.weights), "rates": list(kernel.rates)}
    return {
        "type": "powerlaw",
        "lam": kernel.lam,
        "alpha": kernel.alpha,
        "beta": kernel.beta,
        "eps": kernel.eps,
    }


# -------------------------------------------------------------------- sections


@dataclass(frozen=True)
class KernelSection:
    """Approximation target and the sizes/grid of the quality report."""

    target: Kernel = field(default_factory=lambda: PowerLawKernel(0.1, 0.7, 0.4, 0.01))
    n_values: tuple[int, ...] = (16, 64, 256)
    report_horizon: float = 1.0
    report_points: int = 1000

    def __post_init__(self) -> None:
        if not self.n_values:
            raise ConfigError("kernel.n_values: need at least one size")
        if any(n < 2 for n in self.n_values):
            raise ConfigError("kernel.n_values: every size must be at least 2")
        if list(self.n_values) != sorted(set(self.n_values)):
            raise ConfigError("kernel.n_values: sizes must be strictly increasing")
        if self.report_horizon <= 0:
            raise ConfigError("kernel.report_horizon: must be positive")
        if self.report_points < 2:
            raise ConfigError("kernel.report_points: need at least two grid points")


@dataclass(frozen=True)
class IntensitySection:
    """Base rate, spread sensitivity, and the lifted excitation kernel.

    ``kernel_file``, when set, names a kernel JSON file (as written by the
    approximation command) that replaces the inline ``kernel`` at run time.
    """

    mu: float = 0.1
    k_over_sigma: float = 20.0
    kernel: ExpSumKernel = field(default_factory=lambda: ExpSumKernel((0.9,), (1.0,)))
    kernel_file: str | None = None

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ConfigError("intensity.mu: must be nonnegative")
        if self.k_over_sigma <= 0:
            raise ConfigError("intensity.k_over_sigma: must be positive")

    def resolve_kernel_file(self) -> "IntensitySection":
        """Load the kernel named by ``kernel_file``, if any (the file wins)."""
        if self.kernel_file is None:
            return self
        try:
            with open(self.kernel_file, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise InputOutputError(
                f"cannot read kernel file {self.kernel_file}: {exc}"
            ) from exc
        try:
            kernel = kernel_from_json(text)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"intensity.kernel_file: {exc}") from exc
        if not isinstance(kernel, ExpSumKernel):
            raise ConfigError(
                "intensity.kernel_file: the lifted dynamics need an exponential-sum kernel"
            )
        return replace(self, kernel=kernel, kernel_file=None)

    def spec(self) -> IntensitySpec:
        return IntensitySpec(mu=self.mu, kernel=self.kernel, k_over_sigma=self.k_over_sigma)


@dataclass(frozen=True)
class GridSection:
    """Backward-sweep geometry and numerics.

    ``dt`` is an upper bound: runs clip it to the scheme's stability limit, so a
    coarse request still produces a stable sweep.
    """

    i_min: int = -10
    i_max: int = 10
    c_max: float | tuple[float, ...] = 15.0
    m_c: int = 31
    dt: float = 0.01
    horizon: float = 1.0
    mu_penalty: float = 0.1
    r: float = 0.0
    store_every: int = 5

    def __post_init__(self) -> None:
        if not (self.i_min < 0 < self.i_max):
            raise ConfigError("grid: inventory bounds must straddle zero")
        if self.dt <= 0:
            raise ConfigError("grid.dt: must be positive")
        if self.horizon <= 0:
            raise ConfigError("grid.horizon: must be positive")

    def grid_spec(self, intensity: IntensitySection) -> GridSpec:
        """Assemble the sweep spec, clipping dt to the stability bound."""
        kwargs = dict(
            i_min=self.i_min,
            i_max=self.i_max,
            c_max=self.c_max,
            m_c=self.m_c,
            T=self.horizon,
            mu_penalty=self.mu_penalty,
            k_over_sigma=intensity.k_over_sigma,
            mu_base=intensity.mu,
            kernel=intensity.kernel,
            r=self.r,
            store_every=self.store_every,
        )
        try:
            rate = GridSpec(dt=1e-9, **kwargs).cfl_rate()
            return GridSpec(dt=min(self.dt, 0.999 / rate), **kwargs)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc


@dataclass(frozen=True)
class ParticleSection:
    """Branching-run sizes and the convergence-study probes.

    ``n_values`` are the exponential-sum sizes; the largest is the reference the
    others are compared against.  Probes start with ``hot_events`` simultaneous
    ask-side events; expansion centers are read off a one-exponential surrogate
    sweep at time ``center_time_frac * horizon``.
    """

    n_trees: int = 100_000
    lifetime_rate: float | None = None
    max_particles: int = 10**6
    n_values: tuple[int, ...] = (8, 16, 32, 64, 128)
    probe_inventories: tuple[int, ...] = (0, 5, -5)
    hot_events: float = 5.0
    center_time_frac: float = 0.5

    def __post_init__(self) -> None:
        if self.n_trees < 2:
            raise ConfigError("particle.n_trees: need at least two trees")
        if self.lifetime_rate is not None and self.lifetime_rate <= 0:
            raise ConfigError("particle.lifetime_rate: must be positive (or null for 1/T)")
        if self.max_particles < 1:
            raise ConfigError("particle.max_particles: must be at least 1")
        if len(self.n_values) < 2:
            raise ConfigError("particle.n_values: need at least two sizes (last is the reference)")
        if any(n < 2 for n in self.n_values):
            raise ConfigError("particle.n_values: every size must be at least 2")
        if list(self.n_values) != sorted(set(self.n_values)):
            raise ConfigError("particle.n_values: sizes must be strictly increasing")
        if not self.probe_inventories:
            raise ConfigError("particle.probe_inventories: need at least one probe")
        if self.hot_events < 0:
            raise ConfigError("particle.hot_events: must be nonnegative")
        if not (0 <= self.center_time_frac < 1):
            raise ConfigError("particle.center_time_frac: must lie in [0, 1)")


@dataclass(frozen=True)
class SimulationSection:
    """Raw path runs: constant two-sided quote over a fixed horizon."""

    horizon: float = 100.0
    n_paths: int = 8
    spread: float = 0.0
    inventory0: int = 0

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ConfigError("simulation.horizon: must be positive")
        if self.n_paths < 1:
            raise ConfigError("simulation.n_paths: need at least one path")
        if self.spread < 0:
            raise ConfigError("simulation.spread: must be nonnegative")


# ------------------------------------------------------------------- parsing


_KERNEL_KEYS = ("target", "n_values", "report_horizon", "report_points")
_INTENSITY_KEYS = ("mu", "k_over_sigma", "kernel", "kernel_file")
_GRID_KEYS = (
    "i_min", "i_max", "c_max", "m_c", "dt", "horizon", "mu_penalty", "r", "store_every",
)
_PARTICLE_KEYS = (
    "n_trees", "lifetime_rate", "max_particles", "n_values",
    "probe_inventories", "hot_events", "center_time_frac",
)
_SIMULATION_KEYS = ("horizon", "n_paths", "spread", "inventory0")
_COMPARISON_KEYS = (
    "horizon", "k_over_sigma", "mu_penalty", "mu_true", "true_kernel",
    "mu_poisson", "mu_believed", "believed_kernel",
    "probe_inventory", "probe_c_ask", "probe_c_bid",
    "heatmap_c_ask", "heatmap_c_bid_first",
    "i_min", "i_max", "c_max", "m_c", "m_c_believed", "dt", "store_every",
    "fig1_stride", "n_episodes",
)
_TOP_KEYS = ("kernel", "intensity", "grid", "particle", "simulation", "comparison",
             "seed", "out_dir", "threads")


def _parse_kernel(data: dict) -> KernelSection:
    _reject_unknown("kernel", data, _KERNEL_KEYS)
    out = KernelSection()
    if "target" in data:
        out = replace(out, target=_kernel_from("kernel.target", data["target"]))
    if "n_values" in data:
        out = replace(out, n_values=_as_int_tuple("kernel.n_values", data["n_values"]))
    if "report_horizon" in data:
        out = replace(out, report_horizon=_as_float("kernel.report_horizon", data["report_horizon"]))
    if "report_points" in data:
        out = replace(out, report_points=_as_int("kernel.report_points", data["report_points"]))
    return out


def _parse_intensity(data: dict) -> IntensitySection:
    _reject_unknown("intensity", data, _INTENSITY_KEYS)
    out = IntensitySection()
    if "mu" in data:
        out = replace(out, mu=_as_float("intensity.mu", data["mu"]))
    if "k_over_sigma" in data:
        out = replace(out, k_over_sigma=_as_float("intensity.k_over_sigma", data["k_over_sigma"]))
    if "kernel" in data:
        out = replace(out, kernel=_expsum_from("intensity.kernel", data["kernel"]))
    if "kernel_file" in data and data["kernel_file"] is not None:
        out = replace(out, kernel_file=_as_str("intensity.kernel_file", data["kernel_file"]))
    return out


def _parse_grid(data: dict) -> GridSection:
    _reject_unknown("grid", data, _GRID_KEYS)
    out = GridSection()
    for key in ("i_min", "i_max", "m_c", "store_every"):
        if key in data:
            out = replace(out, **{key: _as_int(f"grid.{key}", data[key])})
    for key in ("dt", "horizon", "mu_penalty", "r"):
        if key in data:
            out = replace(out, **{key: _as_float(f"grid.{key}", data[key])})
    if "c_max" in data:
        value = data["c_max"]
        c_max = (
            _as_float_tuple("grid.c_max", value)
            if isinstance(value, (list, tuple))
            else _as_float("grid.c_max", value)
        )
        out = replace(out, c_max=c_max)
    return out


def _parse_particle(data: dict) -> ParticleSection:
    _reject_unknown("particle", data, _PARTICLE_KEYS)
    out = ParticleSection()
    for key in ("n_trees", "max_particles"):
        if key in data:
            out = replace(out, **{key: _as_int(f"particle.{key}", data[key])})
    for key in ("hot_events", "center_time_frac"):
        if key in data:
            out = replace(out, **{key: _as_float(f"particle.{key}", data[key])})
    if "lifetime_rate" in data and data["lifetime_rate"] is not None:
        out = replace(out, lifetime_rate=_as_float("particle.lifetime_rate", data["lifetime_rate"]))
    if "n_values" in data:
        out = replace(out, n_values=_as_int_tuple("particle.n_values", data["n_values"]))
    if "probe_inventories" in data:
        out = replace(
            out, probe_inventories=_as_int_tuple("particle.probe_inventories", data["probe_inventories"])
        )
    return out


def _parse_simulation(data: dict) -> SimulationSection:
    _reject_unknown("simulation", data, _SIMULATION_KEYS)
    out = SimulationSection()
    if "horizon" in data:
        out = replace(out, horizon=_as_float("simulation.horizon", data["horizon"]))
    if "n_paths" in data:
        out = replace(out, n_paths=_as_int("simulation.n_paths", data["n_paths"]))
    if "spread" in data:
        out = replace(out, spread=_as_float("simulation.spread", data["spread"]))
    if "inventory0" in data:
        out = replace(out, inventory0=_as_int("simulation.inventory0", data["inventory0"]))
    return out


def _parse_comparison(data: dict) -> ComparisonConfig:
    _reject_unknown("comparison", data, _COMPARISON_KEYS)
    kwargs = {}
    for key in ("horizon", "k_over_sigma", "mu_penalty", "mu_true", "mu_poisson",
                "mu_believed", "heatmap_c_bid_first", "c_max", "dt"):
        if key in data:
            kwargs[key] = _as_float(f"comparison.{key}", data[key])
    for key in ("probe_inventory", "i_min", "i_max", "m_c", "m_c_believed",
                "store_every", "fig1_stride", "n_episodes"):
        if key in data:
            kwargs[key] = _as_int(f"comparison.{key}", data[key])
    for key in ("probe_c_ask", "probe_c_bid", "heatmap_c_ask"):
        if key in data:
            kwargs[key] = _as_float_tuple(f"comparison.{key}", data[key])
    for key in ("true_kernel", "believed_kernel"):
        if key in data:
            kwargs[key] = _expsum_from(f"comparison.{key}", data[key])
    try:
        return ComparisonConfig(**kwargs)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"comparison: {exc}") from exc


# -------------------------------------------------------------- whole document


@dataclass(frozen=True)
class ExperimentConfig:
    """All sections resolved, plus the master seed and output directory."""

    kernel: KernelSection = field(default_factory=KernelSection)
    intensity: IntensitySection = field(default_factory=IntensitySection)
    grid: GridSection = field(default_factory=GridSection)
    particle: ParticleSection = field(default_factory=ParticleSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    comparison: ComparisonConfig = field(default_factory=ComparisonConfig)
    seed: int = 20260816
    out_dir: str = "out"
    threads: int | None = None

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        data = _mapping("config", data)
        _reject_unknown("config", data, _TOP_KEYS)
        kwargs: dict = {
            "kernel": _parse_kernel(_mapping("kernel", data.get("kernel", {}))),
            "intensity": _parse_intensity(_mapping("intensity", data.get("intensity", {}))),
            "grid": _parse_grid(_mapping("grid", data.get("grid", {}))),
            "particle": _parse_particle(_mapping("particle", data.get("particle", {}))),
            "simulation": _parse_simulation(_mapping("simulation", data.get("simulation", {}))),
            "comparison": _parse_comparison(_mapping("comparison", data.get("comparison", {}))),
        }
        if "seed" in data:
            seed = _as_int("seed", data["seed"])
            if seed < 0:
                raise ConfigError("seed: must be nonnegative")
            kwargs["seed"] = seed
        if "out_dir" in data:
            kwargs["out_dir"] = _as_str("out_dir", data["out_dir"])
        if "threads" in data and data["threads"] is not None:
            threads = _as_int("threads", data["threads"])
            if threads < 1:
                raise ConfigError("threads: must be at least 1 (or null for auto)")
            kwargs["threads"] = threads
        return ExperimentConfig(**kwargs)

    def to_dict(self) -> dict:
        """Fully resolved document: loading it back reproduces this config."""
        return {
            "kernel": {
                "target": _kernel_dict(self.kernel.target),
                "n_values": list(self.kernel.n_values),
                "report_horizon": self.kernel.report_horizon,
                "report_points": self.kernel.report_points,
            },
            "intensity": {
                "mu": self.intensity.mu,
                "k_over_sigma": self.intensity.k_over_sigma,
                "kernel": _kernel_dict(self.intensity.kernel),
                "kernel_file": self.intensity.kernel_file,
            },
            "grid": {
                "i_min": self.grid.i_min,
                "i_max": self.grid.i_max,
                "c_max": list(self.grid.c_max)
                if isinstance(self.grid.c_max, tuple)
                else self.grid.c_max,
                "m_c": self.grid.m_c,
                "dt": self.grid.dt,
                "horizon": self.grid.horizon,
                "mu_penalty": self.grid.mu_penalty,
                "r": self.grid.r,
                "store_every": self.grid.store_every,
            },
            "particle": {
                "n_trees": self.particle.n_trees,
                "lifetime_rate": self.particle.lifetime_rate,
                "max_particles": self.particle.max_particles,
                "n_values": list(self.particle.n_values),
                "probe_inventories": list(self.particle.probe_inventories),
                "hot_events": self.particle.hot_events,
                "center_time_frac": self.particle.center_time_frac,
            },
            "simulation": {
                "horizon": self.simulation.horizon,
                "n_paths": self.simulation.n_paths,
                "spread": self.simulation.spread,
                "inventory0": self.simulation.inventory0,
            },
            "comparison": {
                "horizon": self.comparison.horizon,
                "k_over_sigma": self.comparison.k_over_sigma,
                "mu_penalty": self.comparison.mu_penalty,
                "mu_true": self.comparison.mu_true,
                "true_kernel": _kernel_dict(self.comparison.true_kernel),
                "mu_poisson": self.comparison.mu_poisson,
                "mu_believed": self.comparison.mu_believed,
                "believed_kernel": _kernel_dict(self.comparison.believed_kernel),
                "probe_inventory": self.comparison.probe_inventory,
                "probe_c_ask": list(self.comparison.probe_c_ask),
                "probe_c_bid": list(self.comparison.probe_c_bid),
                "heatmap_c_ask": list(self.comparison.heatmap_c_ask),
                "heatmap_c_bid_first": self.comparison.heatmap_c_bid_first,
                "i_min": self.comparison.i_min,
                "i_max": self.comparison.i_max,
                "c_max": self.comparison.c_max,
                "m_c": self.comparison.m_c,
                "m_c_believed": self.comparison.m_c_believed,
                "dt": self.comparison.dt,
                "store_every": self.comparison.store_every,
                "fig1_stride": self.comparison.fig1_stride,
                "n_episodes": self.comparison.n_episodes,
            },
            "seed": self.seed,
            "out_dir": self.out_dir,
            "threads": self.threads,
        }

    def resolved_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    """Read and validate a JSON config file; None means all defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputOutputError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)
