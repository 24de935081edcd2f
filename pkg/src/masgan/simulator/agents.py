"""Agent archetypes: market maker, value agents and noise agents.

Every agent draws from its own random stream keyed by ``(seed, kind,
index)`` so that changing the size of one population leaves every other
agent's draws untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .book import Kind, Order, OrderBook, Side

NS_PER_SECOND = 1_000_000_000

# stream namespaces for agent_rng
FUNDAMENTAL, MARKET_MAKER, VALUE, NOISE = 0, 1, 2, 3

NOISE_MIN_QTY = 50
NOISE_MAX_QTY = 150


def agent_rng(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), kind, index])))


@dataclass(frozen=True)
class MarketMakerConfig:
    wake_interval_s: float = 10.0
    levels: int = 5
    size_per_level: int = 100

    def __post_init__(self):
        if not (self.wake_interval_s > 0 and self.levels > 0 and self.size_per_level > 0):
            raise ConfigError("market maker config values must be positive")


def mid_ticks(book: OrderBook, last_mid: float | None, half_spread: int = 1) -> float | None:
    """Mid in ticks; one-sided books use the surviving best +/- ``half_spread``."""
    bb, ba = book.best_bid, book.best_ask
    if bb is not None and ba is not None:
        return (bb + ba) / 2.0
    if bb is not None:
        return float(bb + half_spread)
    if ba is not None:
        return float(ba - half_spread)
    return last_mid


def round_ticks(x: float) -> int:
    return int(math.floor(x + 0.5))


class OrderIds:
    """Monotone order id / arrival sequence source shared by one simulation."""

    __slots__ = ("next_id",)

    def __init__(self, start: int = 1):
        self.next_id = start

    def __call__(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i


# -- market maker -------------------------------------------------------------


@dataclass
class MarketMakerState:
    agent_id: int
    live_orders: list[int]


def market_maker_act(
    config: MarketMakerConfig,
    state: MarketMakerState,
    book: OrderBook,
    reference_ticks: float,
    ts: int,
    ids: OrderIds,
) -> tuple[list[int], list[Order]]:
    """Cancel previous quotes and build a fresh symmetric ladder.

    Returns ``(cancel_ids, new_orders)``; the caller applies them.
    """
    ref = round_ticks(reference_ticks)
    cancels = [oid for oid in state.live_orders if oid in book]
    orders = []
    for k in range(1, config.levels + 1):
        oid = ids()
        orders.append(Order(oid, state.agent_id, Side.BUY, config.size_per_level, Kind.LIMIT, ref - k, ts, oid))
    for k in range(1, config.levels + 1):
        oid = ids()
        orders.append(Order(oid, state.agent_id, Side.SELL, config.size_per_level, Kind.LIMIT, ref + k, ts, oid))
    return cancels, orders


# -- value agents ----------------------------------------------------------------


@dataclass
class ValueAgentState:
    agent_id: int
    rng: np.random.Generator
    rate_per_ns: float

    def next_wake(self, now_ns: int) -> int:
        # strictly later than now: the kernel never runs a self-scheduled wake early
        return now_ns + max(1, int(self.rng.exponential(1.0 / self.rate_per_ns)))


def value_agent_act(
    state: ValueAgentState,
    observation_ticks: float,
    book: OrderBook,
    mid: float,
    ts: int,
    ids: OrderIds,
    size: int = 100,
) -> Order | None:
    """Buy when the noisy fundamental is above mid, sell when below.

    The order is a marketable limit one tick through the opposite best.
    """
    if observation_ticks == mid:
        return None
    oid = ids()
    if observation_ticks > mid:
        ba = book.best_ask
        px = (ba if ba is not None else round_ticks(mid)) + 1
        return Order(oid, state.agent_id, Side.BUY, size, Kind.LIMIT, px, ts, oid)
    bb = book.best_bid
    px = (bb if bb is not None else round_ticks(mid)) - 1
    return Order(oid, state.agent_id, Side.SELL, size, Kind.LIMIT, px, ts, oid)


# -- noise agents ---------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class NoiseWake:
    ts: int
    index: int
    side: Side
    qty: int


def noise_agent_schedule(n: int, session_seconds: float, seed: int) -> list[NoiseWake]:
    """One uniformly-timed wake per noise agent with its market order draws."""
    if n < 0:
        raise ConfigError("number of noise agents must be non-negative")
    session_ns = int(session_seconds * NS_PER_SECOND)
    out = []
    for i in range(n):
        rng = agent_rng(seed, NOISE, i)
        u, coin = rng.random(2)
        qty = int(rng.integers(NOISE_MIN_QTY, NOISE_MAX_QTY + 1))
        out.append(NoiseWake(int(u * session_ns), i, Side.BUY if coin < 0.5 else Side.SELL, qty))
    return out
