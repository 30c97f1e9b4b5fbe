"""Exact simulation of bid/ask order flow with self-exciting intensities.

The excitation kernel is a sum of exponentials, so each side's intensity is a
function of a finite memory vector c that decays exponentially between events and
jumps by the kernel weights at that side's events: the state (i, c_ask, c_bid) is
Markov.  The maker's quoted spreads damp the flow multiplicatively,
λ^δ = e^{-(k/σ)δ} Φ(Σc), which keeps the uncontrolled intensity a valid thinning
bound for any admissible control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericalError
from .kernels import ExpSumKernel
from .serialize import csv_line, write_csv

__all__ = [
    "MarketState",
    "EventLog",
    "IntensitySpec",
    "EVENT_LOG_HEADER",
    "base_intensity",
    "controlled_intensity",
    "advance",
    "apply_event",
    "simulate",
    "time_change",
    "simulate_price",
]

ASK, BID = "ask", "bid"
EVENT_LOG_HEADER = ("time", "side", "spread")


@dataclass(frozen=True)
class MarketState:
    """Inventory plus per-exponential intensity memory for both sides, at a clock time."""

    inventory: int
    c_ask: np.ndarray
    c_bid: np.ndarray
    clock: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "c_ask", np.asarray(self.c_ask, dtype=float))
        object.__setattr__(self, "c_bid", np.asarray(self.c_bid, dtype=float))
        if self.c_ask.shape != self.c_bid.shape or self.c_ask.ndim != 1:
            raise ValueError("c_ask and c_bid must be 1-d arrays of equal length")
        if np.any(self.c_ask < 0) or np.any(self.c_bid < 0):
            raise ValueError("intensity memory must be componentwise nonnegative")

    def c(self, side: str) -> np.ndarray:
        if side == ASK:
            return self.c_ask
        if side == BID:
            return self.c_bid
        raise ValueError(f"unknown side: {side!r}")


@dataclass(frozen=True)
class IntensitySpec:
    """Baseline, kernel, and spread sensitivity defining both sides' intensities.

    `phi` hooks in a nondecreasing rate map applied to μ-free excitation; the default
    is the affine Φ(x) = μ + x used by every experiment here.  Monotonicity is what
    keeps the frozen-state thinning bound valid, so a custom Φ must be nondecreasing.
    """

    mu: float
    kernel: ExpSumKernel
    k_over_sigma: float
    phi: Callable[[float], float] | None = None

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ValueError("baseline intensity must be nonnegative")
        if not self.k_over_sigma > 0:
            raise ValueError("k_over_sigma must be positive")

    def rate_map(self, x: float) -> float:
        return self.mu + x if self.phi is None else self.phi(x)

    def zero_state(self, inventory: int = 0, clock: float = 0.0) -> MarketState:
        z = np.zeros(self.kernel.n)
        return MarketState(inventory=inventory, c_ask=z, c_bid=z.copy(), clock=clock)


def base_intensity(spec: IntensitySpec, state: MarketState, side: str) -> float:
    """Uncontrolled intensity Φ(Σ_i c_i) of one side."""
    return spec.rate_map(float(state.c(side).sum()))


def controlled_intensity(spec: IntensitySpec, state: MarketState, side: str, spread: float) -> float:
    """Intensity seen by a maker quoting the given spread; never exceeds the base."""
    if spread < 0:
        raise ValueError("spreads must be nonnegative")
    return math.exp(-spec.k_over_sigma * spread) * base_intensity(spec, state, side)


def advance(state: MarketState, kernel: ExpSumKernel, dt: float) -> MarketState:
    """Decay the memory exactly over dt: c_i ← c_i e^{-γ_i dt}.  No discretization error."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return state
    decay = np.exp(-np.asarray(kernel.rates) * dt)
    return MarketState(
        inventory=state.inventory,
        c_ask=state.c_ask * decay,
        c_bid=state.c_bid * decay,
        clock=state.clock + dt,
    )


def apply_event(state: MarketState, kernel: ExpSumKernel, side: str) -> MarketState:
    """One market order: memory of that side jumps by the weights; ask fills sell one share."""
    w = np.asarray(kernel.weights)
    if side == ASK:
        return replace(state, inventory=state.inventory - 1, c_ask=state.c_ask + w)
    if side == BID:
        return replace(state, inventory=state.inventory + 1, c_bid=state.c_bid + w)
    raise ValueError(f"unknown side: {side!r}")


@dataclass(frozen=True)
class EventLog:
    """Time-ordered market orders with the spread quoted at each fill."""

    events: tuple[tuple[float, str, float], ...]

    def __post_init__(self) -> None:
        times = [t for t, _, _ in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")
        if any(s < 0 for _, _, s in self.events):
            raise ValueError("spreads must be nonnegative")
        if any(side not in (ASK, BID) for _, side, _ in self.events):
            raise ValueError("sides must be 'ask' or 'bid'")

    def __len__(self) -> int:
        return len(self.events)

    def times(self, side: str | None = None) -> np.ndarray:
        return np.array([t for t, s, _ in self.events if side is None or s == side])

    def to_csv(self, path) -> None:
        write_csv(path, EVENT_LOG_HEADER, self.events)

    def csv_bytes(self) -> bytes:
        lines = [",".join(EVENT_LOG_HEADER)]
        lines += [csv_line(row) for row in self.events]
        return ("\n".join(lines) + "\n").encode("utf-8")


def simulate(
    spec: IntensitySpec,
    control: Callable[[float, MarketState], tuple[float, float]],
    horizon: float,
    seed,
    initial: MarketState | None = None,
    max_events: int = 10**7,
    on_event: Callable[[MarketState], None] | None = None,
) -> EventLog:
    """Exact Ogata thinning over [0, horizon].

    Candidates come from a dominating Poisson clock whose per-side rate is the base
    intensity at the most recent state refresh; between refreshes the true intensity
    only decays (Φ nondecreasing, memory decaying, e^{-(k/σ)δ} ≤ 1), so the bound
    dominates and acceptance with probability controlled/dominating is exact.  The
    bound is re-frozen at every candidate, accepted or not.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    state = initial if initial is not None else spec.zero_state()
    if initial is not None and initial.c_ask.shape[0] != spec.kernel.n:
        raise ValueError("initial state dimension does not match the kernel")
    events: list[tuple[float, str, float]] = []
    t = state.clock
    end = t + horizon
    candidates = 0
    while True:
        bound_ask = base_intensity(spec, state, ASK)
        bound_bid = base_intensity(spec, state, BID)
        total = bound_ask + bound_bid
        if total <= 0.0:
            break  # no excitation and no baseline: nothing will ever arrive
        t_next = t + rng.exponential(1.0 / total)
        candidates += 1
        if candidates > 10 * max_events:
            raise NumericalError(
                "candidate budget exhausted; intensities likely exploding (kernel L1 norm >= 1?)"
            )
        if t_next >= end:
            break
        state = advance(state, spec.kernel, t_next - t)
        t = t_next
        side = ASK if rng.random() * total < bound_ask else BID
        bound = bound_ask if side == ASK else bound_bid
        spreads = control(t, state)
        spread = float(spreads[0] if side == ASK else spreads[1])
        lam = controlled_intensity(spec, state, side, spread)
        ratio = lam / bound
        if not ratio <= 1.0 + 1e-12:
            raise NumericalError(f"thinning bound violated: ratio {ratio} at t={t}")
        if rng.random() < ratio:
            state = apply_event(state, spec.kernel, side)
            events.append((t, side, spread))
            if on_event is not None:
                on_event(state)
            if len(events) > max_events:
                raise NumericalError(
                    f"more than {max_events} events; likely unstable (kernel L1 norm >= 1)"
                )
    return EventLog(events=tuple(events))


def time_change(
    spec: IntensitySpec,
    event_times: Sequence[float],
    horizon: float,
    spread: float = 0.0,
    t0: float = 0.0,
) -> np.ndarray:
    """Compensator increments between consecutive events of one side.

    Under a constant spread the side's intensity between its events is
    e^{-(k/σ)δ}(μ + Σ c_i e^{-γ_i s}), which integrates in closed form; if the model
    is the true one, the increments are i.i.d. Exp(1) (random time change).  Only
    valid for the affine rate map.
    """
    if spec.phi is not None:
        raise ValueError("closed-form compensator requires the affine rate map")
    damp = math.exp(-spec.k_over_sigma * spread)
    w = np.asarray(spec.kernel.weights)
    g = np.asarray(spec.kernel.rates)
    c = np.zeros(spec.kernel.n)
    out = []
    t = t0
    for t_ev in event_times:
        dt = t_ev - t
        if dt < 0:
            raise ValueError("event times must be nondecreasing")
        decay = np.exp(-g * dt)
        integral = spec.mu * dt + float((c / g * (1.0 - decay)).sum())
        out.append(damp * integral)
        c = c * decay + w
        t = t_ev
    return np.asarray(out)


def simulate_price(
    drift: Callable[[float, float], float],
    sigma: float,
    horizon: float,
    dt: float,
    seed,
    p0: float = 0.0,
) -> np.ndarray:
    """Euler–Maruyama path of the reference price dP = drift(t, P) dt + σ dW.

    Provided for completeness of the market model; nothing downstream consumes it
    (the control problem drops the price variable).
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    rng = np.random.default_rng(seed)
    steps = int(math.ceil(horizon / dt))
    path = np.empty(steps + 1)
    path[0] = p0
    sq = math.sqrt(dt)
    for k in range(steps):
        t = k * dt
        path[k + 1] = path[k] + drift(t, path[k]) * dt + sigma * sq * rng.standard_normal()
    return path
