"""Parameter sweeps over the timing model."""

from __future__ import annotations

import numpy as np

from .config import SimConfig
from .engine import SimReport, simulate
from .trace import AccessTrace


def queue_sweep(trace: AccessTrace, plan, config: SimConfig, sizes=(32, 64, 128, 256)) -> list:
    return [simulate(trace, plan, config.replace(n_queues=int(s))) for s in sizes]


def hot_node_sweep(graph, trace: AccessTrace, config: SimConfig, D: int,
                   percentages=(0.0, 0.01, 0.03, 0.05, 0.07), b_index: int | None = None) -> list:
    """Re-plan the layout with ``p`` of the (frequency-ordered) vertices hot and
    simulate each. Returns ``(p, report)`` pairs."""
    from ..mapping import plan_layout  # mapping depends on this package

    out = []
    for p in percentages:
        hot = int(np.ceil(p * graph.N - 1e-9))
        plan = plan_layout(graph, hot, config, D, b_index)
        out.append((float(p), simulate(trace, plan, config)))
    return out


def calibrate_outstanding(trace: AccessTrace, plan, config: SimConfig, target_util: float,
                          n_queues: int = 32, candidates=range(1, 9)) -> tuple[int, SimReport]:
    """Pick the per-queue fetch window whose utilization at ``n_queues`` is
    closest to ``target_util`` percent."""
    best = None
    for w in candidates:
        rep = simulate(trace, plan, config.replace(n_queues=n_queues, max_outstanding=int(w)))
        err = abs(rep.core_utilization - target_util)
        if best is None or err < best[0]:
            best = (err, int(w), rep)
    return best[1], best[2]
