from .config import SimConfig, SimError
from .engine import CATEGORIES, SimReport, simulate, traffic_breakdown
from .trace import EV_ADT, AccessTrace

__all__ = ["CATEGORIES", "EV_ADT", "AccessTrace", "SimConfig", "SimError", "SimReport",
           "simulate", "traffic_breakdown"]
