from .agents import MarketMakerConfig, noise_agent_schedule, market_maker_act, value_agent_act
from .book import Kind, Order, OrderBook, Side, Trade
from .kernel import EventQueue, SimParams, Simulation, SessionResult, run_simulation, export_trades_csv
from .ou import OUParams, ou_path, ou_step

__all__ = [
    "EventQueue",
    "Kind",
    "MarketMakerConfig",
    "OUParams",
    "Order",
    "OrderBook",
    "SessionResult",
    "Side",
    "SimParams",
    "Simulation",
    "Trade",
    "export_trades_csv",
    "market_maker_act",
    "noise_agent_schedule",
    "ou_path",
    "ou_step",
    "run_simulation",
    "value_agent_act",
]
