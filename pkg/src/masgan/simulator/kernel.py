"""Event kernel and session driver producing a :class:`BarSeries`."""
from __future__ import annotations

import heapq
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, UsageError
from ..marketdata import Bar, BarSeries
from .agents import (
    FUNDAMENTAL,
    NS_PER_SECOND,
    VALUE,
    MarketMakerConfig,
    MarketMakerState,
    OrderIds,
    ValueAgentState,
    agent_rng,
    market_maker_act,
    mid_ticks,
    noise_agent_schedule,
    value_agent_act,
)
from .book import Kind, Order, OrderBook, Trade
from .ou import OUParams, ou_path

MM_WAKE, VALUE_WAKE, NOISE_WAKE = 0, 1, 2


@dataclass(frozen=True)
class SimParams:
    n_noise: int = 5000
    value_rate: float = 1e-14
    n_value: int = 100
    mm: MarketMakerConfig = field(default_factory=MarketMakerConfig)
    ou: OUParams = field(default_factory=OUParams)
    session_seconds: int = 23400
    tick_size: float = 0.01
    initial_price: float = 100.0
    obs_noise_ticks: float = 1.0
    value_order_size: int = 100

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise ConfigError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errs = []
        if not isinstance(self.n_noise, int) or self.n_noise < 0:
            errs.append("n_noise must be a non-negative integer")
        if not self.value_rate > 0:
            errs.append("value_rate must be positive")
        if not isinstance(self.n_value, int) or self.n_value < 0:
            errs.append("n_value must be a non-negative integer")
        if not isinstance(self.session_seconds, int) or self.session_seconds <= 0:
            errs.append("session_seconds must be a positive integer")
        if not self.tick_size > 0:
            errs.append("tick_size must be positive")
        if not self.initial_price > 0:
            errs.append("initial_price must be positive")
        if self.obs_noise_ticks < 0:
            errs.append("obs_noise_ticks must be non-negative")
        if self.value_order_size <= 0:
            errs.append("value_order_size must be positive")
        return errs

    def replace(self, **changes) -> "SimParams":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return SimParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        d = dict(d)
        if isinstance(d.get("mm"), dict):
            d["mm"] = MarketMakerConfig(**d["mm"])
        if isinstance(d.get("ou"), dict):
            d["ou"] = OUParams(**d["ou"])
        return cls(**d)


class EventQueue:
    """Min-heap keyed by ``(ts, seq)``; ``seq`` breaks ties in scheduling order."""

    def __init__(self):
        self._heap: list[tuple[int, int, int, int]] = []
        self._seq = 0
        self.now = 0

    def push(self, ts: int, kind: int, index: int) -> None:
        if ts < self.now:
            raise UsageError(f"cannot schedule at {ts} before current time {self.now}")
        heapq.heappush(self._heap, (ts, self._seq, kind, index))
        self._seq += 1

    def pop(self) -> tuple[int, int, int, int]:
        item = heapq.heappop(self._heap)
        self.now = item[0]
        return item

    def peek_ts(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def __len__(self):
        return len(self._heap)


@dataclass
class SessionResult:
    series: BarSeries
    trades: list[Trade]
    fundamental: np.ndarray
    crossed_events: int = 0


class Simulation:
    """One trading session. Strictly single-threaded; build one per worker."""

    def __init__(self, params: SimParams, seed: int, bar_seconds: int = 60, check_invariants: bool = False):
        if bar_seconds <= 0 or params.session_seconds % bar_seconds:
            raise ConfigError(
                f"session_seconds ({params.session_seconds}) must be a positive multiple of bar_seconds ({bar_seconds})"
            )
        self.params = params
        self.seed = int(seed)
        self.bar_seconds = bar_seconds
        self.check_invariants = check_invariants
        self.book = OrderBook()
        self.ids = OrderIds()
        self.queue = EventQueue()
        tick = params.tick_size
        ou = params.ou
        n_steps = int(math.ceil(params.session_seconds / ou.dt))
        self.fundamental = ou_path(ou.r_bar, ou, n_steps, agent_rng(seed, FUNDAMENTAL))
        self.fundamental_ticks = self.fundamental / tick
        self.last_mid: float | None = None
        self.initial_mid = params.initial_price / tick

    def fundamental_at(self, ts: int) -> float:
        """Fundamental in ticks at time ``ts`` (ns), piecewise constant per OU step."""
        step = int(ts / NS_PER_SECOND / self.params.ou.dt)
        return float(self.fundamental_ticks[min(step, len(self.fundamental_ticks) - 1)])

    def current_mid(self) -> float:
        m = mid_ticks(self.book, self.last_mid)
        return m if m is not None else self.initial_mid

    def run(self) -> SessionResult:
        p = self.params
        q = self.queue
        book = self.book
        session_ns = p.session_seconds * NS_PER_SECOND
        bar_ns = self.bar_seconds * NS_PER_SECOND
        n_bars = p.session_seconds // self.bar_seconds

        mm_state = MarketMakerState(agent_id=1, live_orders=[])
        mm_step = int(round(p.mm.wake_interval_s * NS_PER_SECOND))
        q.push(0, MM_WAKE, 0)

        values = []
        for i in range(p.n_value):
            st = ValueAgentState(agent_id=2 + i, rng=agent_rng(self.seed, VALUE, i), rate_per_ns=p.value_rate)
            values.append(st)
            first = int(st.rng.exponential(1.0 / p.value_rate))
            if first <= session_ns:
                q.push(first, VALUE_WAKE, i)

        noise = noise_agent_schedule(p.n_noise, p.session_seconds, self.seed)
        noise_base_id = 2 + p.n_value
        for w in noise:
            q.push(w.ts, NOISE_WAKE, w.index)

        trades: list[Trade] = []
        mids = np.empty(n_bars + 1)
        vols = np.zeros(n_bars + 1)
        bar_k = 0
        boundary = 0
        crossed = 0
        value_size = p.value_order_size

        def close_bars_until(ts: int):
            nonlocal bar_k, boundary
            while ts > boundary and bar_k <= n_bars:
                mids[bar_k] = self.current_mid()
                bar_k += 1
                boundary = bar_k * bar_ns

        while len(q):
            ts = q.peek_ts()
            if ts > session_ns:
                break
            close_bars_until(ts)
            ts, _, kind, idx = q.pop()
            new_trades: list[Trade] = []

            if kind == NOISE_WAKE:
                w = noise[idx]
                oid = self.ids()
                new_trades = book.submit(Order(oid, noise_base_id + idx, w.side, w.qty, Kind.MARKET, None, ts, oid))
            elif kind == VALUE_WAKE:
                st = values[idx]
                obs = self.fundamental_at(ts) + st.rng.normal(0.0, p.obs_noise_ticks)
                order = value_agent_act(st, obs, book, self.current_mid(), ts, self.ids, value_size)
                if order is not None:
                    new_trades = book.submit(order)
                nxt = st.next_wake(ts)
                if nxt <= session_ns:
                    q.push(nxt, VALUE_WAKE, idx)
            else:
                ref = mid_ticks(book, self.last_mid)
                if ref is None:
                    ref = p.ou.r_bar / p.tick_size
                cancels, orders = market_maker_act(p.mm, mm_state, book, ref, ts, self.ids)
                for oid in cancels:
                    book.cancel(oid)
                mm_state.live_orders = []
                for o in orders:
                    new_trades.extend(book.submit(o))
                    if o.id in book:
                        mm_state.live_orders.append(o.id)
                nxt = ts + mm_step
                if nxt <= session_ns:
                    q.push(nxt, MM_WAKE, 0)

            if new_trades:
                trades.extend(new_trades)
                vols[bar_k] += sum(t.qty for t in new_trades)
            self.last_mid = self.current_mid()
            if self.check_invariants and book.is_crossed():
                crossed += 1

        close_bars_until(session_ns + 1)
        tick = p.tick_size
        bars = tuple(Bar(k, float(mids[k] * tick), float(vols[k])) for k in range(n_bars + 1))
        series = BarSeries(bars, self.bar_seconds, session_id=f"seed{self.seed}", seed=self.seed, params_ref=params_ref(p))
        return SessionResult(series, trades, self.fundamental, crossed)


def params_ref(p: SimParams) -> str:
    return f"N={p.n_noise},lambda={p.value_rate!r},n_value={p.n_value}"


def run_simulation(params: SimParams, seed: int, bar_seconds: int = 60) -> BarSeries:
    """Simulate one session; a pure function of ``(params, seed, bar_seconds)``."""
    return Simulation(params, seed, bar_seconds).run().series


def export_trades_csv(trades: list[Trade], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("ts,price_ticks,qty,taker_side\n")
        for t in trades:
            fh.write(f"{t.ts},{t.price_ticks},{t.qty},{t.taker_side.name}\n")
