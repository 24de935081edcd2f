"""Limit order book with price-then-FIFO matching on integer ticks."""
from __future__ import annotations

import bisect
import enum
from collections import deque
from dataclasses import dataclass

from ..errors import InvalidInputError


class Side(enum.IntEnum):
    BUY = 1
    SELL = -1


class Kind(enum.Enum):
    LIMIT = "LIMIT"
    MARKET = "MARKET"


@dataclass(frozen=True, slots=True)
class Order:
    id: int
    agent_id: int
    side: Side
    qty: int
    kind: Kind = Kind.LIMIT
    price_ticks: int | None = None
    ts: int = 0
    seq: int = 0

    def __post_init__(self):
        if self.qty <= 0:
            raise InvalidInputError(f"order {self.id}: qty must be positive")
        if self.kind is Kind.LIMIT and self.price_ticks is None:
            raise InvalidInputError(f"order {self.id}: limit order needs a price")


@dataclass(frozen=True, slots=True)
class Trade:
    price_ticks: int
    qty: int
    maker_order_id: int
    taker_order_id: int
    ts: int
    taker_side: Side


class _Resting:
    __slots__ = ("order", "remaining")

    def __init__(self, order: Order, remaining: int):
        self.order = order
        self.remaining = remaining


class OrderBook:
    """Two-sided book. ``submit`` matches, then rests any limit residual."""

    def __init__(self):
        self._levels = {Side.BUY: {}, Side.SELL: {}}
        # ascending price lists per side
        self._prices = {Side.BUY: [], Side.SELL: []}
        self._live: dict[int, tuple[Side, int, _Resting]] = {}
        self._seen: set[int] = set()

    # -- queries -----------------------------------------------------------

    @property
    def best_bid(self) -> int | None:
        p = self._prices[Side.BUY]
        return p[-1] if p else None

    @property
    def best_ask(self) -> int | None:
        p = self._prices[Side.SELL]
        return p[0] if p else None

    def depth(self, side: Side) -> list[tuple[int, int]]:
        """``(price, total qty)`` per level, best first."""
        prices = self._prices[side]
        order = reversed(prices) if side is Side.BUY else prices
        return [(p, sum(r.remaining for r in self._levels[side][p])) for p in order]

    def queue(self, side: Side, price: int) -> list[tuple[Order, int]]:
        return [(r.order, r.remaining) for r in self._levels[side].get(price, ())]

    def resting_ids(self) -> set[int]:
        return set(self._live)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._live

    def is_crossed(self) -> bool:
        bb, ba = self.best_bid, self.best_ask
        return bb is not None and ba is not None and bb >= ba

    # -- mutation ----------------------------------------------------------

    def submit(self, order: Order) -> list[Trade]:
        if order.id in self._seen:
            raise InvalidInputError(f"duplicate order id {order.id}")
        self._seen.add(order.id)

        opp = Side.SELL if order.side is Side.BUY else Side.BUY
        opp_prices = self._prices[opp]
        opp_levels = self._levels[opp]
        limit = order.price_ticks if order.kind is Kind.LIMIT else None
        remaining = order.qty
        trades: list[Trade] = []

        while remaining and opp_prices:
            px = opp_prices[0] if opp is Side.SELL else opp_prices[-1]
            if limit is not None and (px > limit if order.side is Side.BUY else px < limit):
                break
            q = opp_levels[px]
            while remaining and q:
                maker = q[0]
                fill = min(remaining, maker.remaining)
                trades.append(Trade(px, fill, maker.order.id, order.id, order.ts, order.side))
                remaining -= fill
                maker.remaining -= fill
                if maker.remaining == 0:
                    q.popleft()
                    del self._live[maker.order.id]
            if not q:
                del opp_levels[px]
                if opp is Side.SELL:
                    opp_prices.pop(0)
                else:
                    opp_prices.pop()

        if remaining and limit is not None:
            self._rest(order, remaining)
        return trades

    def _rest(self, order: Order, remaining: int) -> None:
        levels = self._levels[order.side]
        px = order.price_ticks
        q = levels.get(px)
        if q is None:
            q = levels[px] = deque()
            bisect.insort(self._prices[order.side], px)
        entry = _Resting(order, remaining)
        q.append(entry)
        self._live[order.id] = (order.side, px, entry)

    def cancel(self, order_id: int) -> bool:
        """Remove a resting order. Returns False if it is no longer live."""
        info = self._live.pop(order_id, None)
        if info is None:
            return False
        side, px, entry = info
        q = self._levels[side][px]
        q.remove(entry)
        if not q:
            del self._levels[side][px]
            prices = self._prices[side]
            del prices[bisect.bisect_left(prices, px)]
        return True
