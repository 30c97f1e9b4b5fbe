"""Branching-particle Monte Carlo for the polynomial-generator equation.

The grid solver becomes infeasible when the memory dimension grows; this module
estimates the value function pointwise instead.  The running nonlinearity is
replaced by a second-order polynomial in `(U, D_a U, D_b U)`, whose solution
admits a branching representation: a particle lives an exponential lifetime,
the memory decays deterministically along the way, and at death the particle
either terminates (constant term) or spawns children displaced by the jump
operators, one per factor of the chosen monomial.  The product of branch
weights over a tree is an unbiased estimate of the value at the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError
from .hawkes import ASK, BID, IntensitySpec, MarketState, advance, apply_event, base_intensity
from .kernels import ExpSumKernel
from .serialize import write_csv

Coefficient = Callable[[float, MarketState], float]

CONST = "const"
LINEAR = "linear"
QUAD = "quad"


@dataclass(frozen=True)
class BranchLabel:
    """One monomial of the generator polynomial, as drawn at a branch time.

    `epsilon` has one entry per child: 1 means the child carries the side's
    jump displacement, 0 means it stays put.  Expanding each difference
    operator into its two evaluations is what produces the `(0,1)^d` family.
    """

    tag: str
    side: str | None = None
    epsilon: tuple[int, ...] = ()

    @property
    def degree(self) -> int:
        return len(self.epsilon)

    @property
    def sign(self) -> int:
        # each child contributes (-1)^(1 - eps_k)
        return -1 if (self.degree - sum(self.epsilon)) % 2 else 1


def _quad_labels(side: str) -> tuple[tuple[BranchLabel, ...], tuple[BranchLabel, ...]]:
    deg1 = tuple(BranchLabel(QUAD, side, (e,)) for e in (0, 1))
    deg2 = tuple(
        BranchLabel(QUAD, side, (e1, e2)) for e1 in (0, 1) for e2 in (0, 1)
    )
    return deg1, deg2


@dataclass(frozen=True)
class GeneratorPoly:
    """Second-order polynomial generator `f(U, D_aU, D_bU)(t, x)`.

    Coefficients are scalar functions of `(t, state)`; a `None` slot means the
    monomial is absent and no branch label is enumerated for it.  `kernel`
    fixes the deterministic decay and the jump displacement of the children.
    """

    kernel: ExpSumKernel
    f0: Coefficient | None = None
    f1: Coefficient | None = None
    f2_1_ask: Coefficient | None = None
    f2_1_bid: Coefficient | None = None
    f2_2_ask: Coefficient | None = None
    f2_2_bid: Coefficient | None = None

    @property
    def labels(self) -> tuple[BranchLabel, ...]:
        out: list[BranchLabel] = []
        if self.f0 is not None:
            out.append(BranchLabel(CONST))
        if self.f1 is not None:
            out.append(BranchLabel(LINEAR))
        for side, c1, c2 in (
            (ASK, self.f2_1_ask, self.f2_2_ask),
            (BID, self.f2_1_bid, self.f2_2_bid),
        ):
            deg1, deg2 = _quad_labels(side)
            if c1 is not None:
                out.extend(deg1)
            if c2 is not None:
                out.extend(deg2)
        return tuple(out)

    def coefficient(self, label: BranchLabel) -> Coefficient:
        if label.tag == CONST:
            coef = self.f0
        elif label.tag == LINEAR:
            coef = self.f1
        elif label.degree == 1:
            coef = self.f2_1_ask if label.side == ASK else self.f2_1_bid
        else:
            coef = self.f2_2_ask if label.side == ASK else self.f2_2_bid
        if coef is None:
            raise ValueError(f"no coefficient for label {label}")
        return coef

    def evaluate(self, t: float, state: MarketState, u: float, d_ask: float, d_bid: float) -> float:
        """The polynomial itself; absent terms contribute zero."""
        total = 0.0
        for coef, factor in (
            (self.f0, 1.0),
            (self.f1, u),
            (self.f2_1_ask, d_ask),
            (self.f2_1_bid, d_bid),
            (self.f2_2_ask, d_ask**2),
            (self.f2_2_bid, d_bid**2),
        ):
            if coef is not None:
                total += coef(t, state) * factor
        return total


def taylor_generator(
    spec: IntensitySpec,
    penalty: float,
    i0_ask: float = 0.0,
    i0_bid: float = 0.0,
    r: float = 0.0,
) -> GeneratorPoly:
    """Quadratic expansion of the optimized quote income around `I0` per side.

    In the quoting regime the income term is `phi (σ/k) e^{(k/σ)I − 1}`; its
    second-order expansion at `I0` regroups into constant, linear, and
    quadratic coefficients in the jump increment.  Both centers must stay
    below σ/k: beyond that kink the income is exactly linear, so that region
    wants the exact linear generator rather than an expansion across the kink.
    """
    sigma_over_k = 1.0 / spec.k_over_sigma
    for name, i0 in (("i0_ask", i0_ask), ("i0_bid", i0_bid)):
        if i0 >= sigma_over_k:
            raise ValueError(
                f"{name}={i0} is at or beyond the zero-spread kink sigma/k="
                f"{sigma_over_k}; split the domain and use the exact linear "
                "form where the increment saturates"
            )

    kos = spec.k_over_sigma

    def per_side(i0: float) -> tuple[float, float, float]:
        # e^{(k/σ)I0 - 1} times the polynomial regrouping of the expansion
        scale = math.exp(kos * i0 - 1.0)
        c0 = scale * (sigma_over_k - i0 + 0.5 * kos * i0 * i0)
        c1 = scale * (1.0 - kos * i0)
        c2 = scale * 0.5 * kos
        return c0, c1, c2

    a0, a1, a2 = per_side(i0_ask)
    b0, b1, b2 = per_side(i0_bid)

    def f0(t: float, s: MarketState) -> float:
        phi_a = base_intensity(spec, s, ASK)
        phi_b = base_intensity(spec, s, BID)
        return -penalty * s.inventory**2 + phi_a * a0 + phi_b * b0

    return GeneratorPoly(
        kernel=spec.kernel,
        f0=f0,
        f1=(lambda t, s: -r) if r != 0.0 else None,
        f2_1_ask=lambda t, s: base_intensity(spec, s, ASK) * a1,
        f2_1_bid=lambda t, s: base_intensity(spec, s, BID) * b1,
        f2_2_ask=lambda t, s: base_intensity(spec, s, ASK) * a2,
        f2_2_bid=lambda t, s: base_intensity(spec, s, BID) * b2,
    )


def centered_generator(
    spec: IntensitySpec,
    penalty: float,
    i0_ask: float = 0.0,
    i0_bid: float = 0.0,
    r: float = 0.0,
) -> GeneratorPoly:
    """Per-side dispatch between the quadratic expansion and the exact linear income.

    A side whose expansion center sits below the zero-spread kink σ/k gets the
    quadratic income expansion around its center; a side at or beyond the kink
    gets the exact linear income (slope = full intensity, no expansion error),
    matching the optimizer's zero-spread regime there.  Use this when the two
    sides of the book live in different regimes — e.g. one side's memory is hot
    enough that its value increments saturate while the other still quotes.
    """
    sigma_over_k = 1.0 / spec.k_over_sigma
    kos = spec.k_over_sigma

    def per_side(i0: float) -> tuple[float, float, float | None]:
        if i0 >= sigma_over_k:
            return 0.0, 1.0, None
        scale = math.exp(kos * i0 - 1.0)
        return (
            scale * (sigma_over_k - i0 + 0.5 * kos * i0 * i0),
            scale * (1.0 - kos * i0),
            scale * 0.5 * kos,
        )

    a0, a1, a2 = per_side(i0_ask)
    b0, b1, b2 = per_side(i0_bid)

    def f0(t: float, s: MarketState) -> float:
        phi_a = base_intensity(spec, s, ASK)
        phi_b = base_intensity(spec, s, BID)
        return -penalty * s.inventory**2 + phi_a * a0 + phi_b * b0

    return GeneratorPoly(
        kernel=spec.kernel,
        f0=f0,
        f1=(lambda t, s: -r) if r != 0.0 else None,
        f2_1_ask=lambda t, s: base_intensity(spec, s, ASK) * a1,
        f2_1_bid=lambda t, s: base_intensity(spec, s, BID) * b1,
        f2_2_ask=(lambda t, s: base_intensity(spec, s, ASK) * a2) if a2 is not None else None,
        f2_2_bid=(lambda t, s: base_intensity(spec, s, BID) * b2) if b2 is not None else None,
    )


def saturated_generator(spec: IntensitySpec, penalty: float, r: float = 0.0) -> GeneratorPoly:
    """Exact generator for the zero-spread regime.

    Where the jump increment exceeds σ/k the optimizer quotes at zero and the
    income is `phi·I` with no higher-order terms, so no expansion error is
    committed: the generator is linear with the full intensity as slope.
    """

    return GeneratorPoly(
        kernel=spec.kernel,
        f0=lambda t, s: -penalty * s.inventory**2,
        f1=(lambda t, s: -r) if r != 0.0 else None,
        f2_1_ask=lambda t, s: base_intensity(spec, s, ASK),
        f2_1_bid=lambda t, s: base_intensity(spec, s, BID),
    )


@dataclass(frozen=True)
class ParticleConfig:
    """Lifetime law, horizon, and guard rails for one batch of trees."""

    horizon: float
    seed: int
    lifetime_rate: float | None = None
    max_particles: int = 10**6

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.lifetime_rate is None:
            object.__setattr__(self, "lifetime_rate", 1.0 / self.horizon)
        if self.lifetime_rate <= 0:
            raise ValueError("lifetime_rate must be positive")
        if self.max_particles < 1:
            raise ValueError("max_particles must be at least 1")

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "seed": self.seed,
            "lifetime_rate": self.lifetime_rate,
            "max_particles": self.max_particles,
        }

    @staticmethod
    def from_dict(data: dict) -> "ParticleConfig":
        return ParticleConfig(**data)


def sample_label(rng: np.random.Generator, poly: GeneratorPoly) -> tuple[BranchLabel, float]:
    """Uniform draw over the monomials present in the generator."""
    labels = poly.labels
    if not labels:
        raise ValueError("generator has no terms to sample")
    idx = int(rng.integers(len(labels)))
    return labels[idx], 1.0 / len(labels)


def _run_tree(
    t: float,
    state: MarketState,
    poly: GeneratorPoly,
    cfg: ParticleConfig,
    rng: np.random.Generator,
    trace: list | None = None,
) -> tuple[float, int]:
    """One tree: returns (product estimate, particles spawned).

    A branch that outlives the horizon zeroes the whole tree (the terminal
    reward is zero), so the walk can stop as soon as that happens.
    """
    labels = poly.labels
    if not labels:
        raise ValueError("generator has no terms to sample")
    rate = cfg.lifetime_rate
    stack: list[tuple[float, MarketState]] = [(t, state)]
    product = 1.0
    n_particles = 0
    while stack:
        node_t, node_state = stack.pop()
        n_particles += 1
        if n_particles > cfg.max_particles:
            raise NumericalError(
                f"tree exceeded max_particles={cfg.max_particles}: the "
                "branching configuration is supercritical; reduce the horizon "
                "or the lifetime_rate"
            )
        lifetime = rng.exponential(1.0 / rate)
        t_branch = node_t + lifetime
        if t_branch >= cfg.horizon:
            return 0.0, n_particles
        branched = advance(node_state, poly.kernel, lifetime)
        label, prob = sample_label(rng, poly)
        if trace is not None:
            trace.append((label, prob))
        coef = poly.coefficient(label)(t_branch, branched)
        density = rate * math.exp(-rate * lifetime)
        product *= label.sign * coef / (prob * density)
        if product == 0.0:
            return 0.0, n_particles
        if label.tag == LINEAR:
            stack.append((t_branch, branched))
        else:
            for eps in label.epsilon:
                child = apply_event(branched, poly.kernel, label.side) if eps else branched
                stack.append((t_branch, child))
    return product, n_particles


def run_particle(
    t: float,
    state: MarketState,
    poly: GeneratorPoly,
    cfg: ParticleConfig,
    rng: np.random.Generator,
) -> float:
    """Value of a single tree rooted at (t, state)."""
    if t >= cfg.horizon:
        raise ValueError(f"root time t={t} must precede the horizon {cfg.horizon}")
    value, _ = _run_tree(t, state, poly, cfg, rng)
    return value


@dataclass(frozen=True)
class BranchingEstimate:
    """Monte Carlo summary for one probe state."""

    t: float
    state: MarketState
    mean: float
    stderr: float
    n_trees: int
    mean_tree_size: float
    max_tree_size: int

    def csv_header(self) -> tuple[str, ...]:
        n = len(self.state.c_ask)
        return (
            ("t", "i")
            + tuple(f"c_a{j + 1}" for j in range(n))
            + tuple(f"c_b{j + 1}" for j in range(n))
            + ("mean", "stderr", "n_trees", "mean_tree_size")
        )

    def csv_row(self) -> tuple:
        return (
            (self.t, self.state.inventory)
            + tuple(self.state.c_ask)
            + tuple(self.state.c_bid)
            + (self.mean, self.stderr, self.n_trees, self.mean_tree_size)
        )

    def to_csv(self, path) -> None:
        write_csv(path, self.csv_header(), [self.csv_row()])


def estimate_u(
    t: float,
    state: MarketState,
    poly: GeneratorPoly,
    cfg: ParticleConfig,
    n_trees: int,
) -> BranchingEstimate:
    """Average independent trees; per-tree RNG streams come off cfg.seed."""
    if n_trees < 2:
        raise ValueError("n_trees must be at least 2 for a standard error")
    if t >= cfg.horizon:
        raise ValueError(f"root time t={t} must precede the horizon {cfg.horizon}")
    streams = np.random.SeedSequence(cfg.seed).spawn(n_trees)
    values = np.empty(n_trees)
    sizes = np.empty(n_trees, dtype=np.int64)
    for k, stream in enumerate(streams):
        values[k], sizes[k] = _run_tree(t, state, poly, cfg, np.random.default_rng(stream))
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n_trees))
    return BranchingEstimate(
        t=t,
        state=state,
        mean=mean,
        stderr=stderr,
        n_trees=n_trees,
        mean_tree_size=float(sizes.mean()),
        max_tree_size=int(sizes.max()),
    )
