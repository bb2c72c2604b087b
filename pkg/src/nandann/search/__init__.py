from ._engine import EV_INDEX, EV_PQ, EV_RAW, EV_SORT
from .bloom import VisitedFilter, false_positive_rate, measure_false_positive_rate
from .core import BatchResult, SearchIndex, batch_exact_search, batch_search, search
from .types import (CandidateList, SearchError, SearchParams, SearchResult, TerminationState,
                    early_termination_check, sort_and_truncate)

__all__ = [
    "EV_INDEX", "EV_PQ", "EV_RAW", "EV_SORT", "BatchResult", "CandidateList", "SearchError",
    "SearchIndex", "SearchParams", "SearchResult", "TerminationState", "VisitedFilter",
    "batch_exact_search", "batch_search", "early_termination_check", "false_positive_rate",
    "measure_false_positive_rate", "search", "sort_and_truncate",
]
