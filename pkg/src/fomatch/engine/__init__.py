"""Online matching algorithms: Ranking, Balanced Ranking, Water-filling, Eager Water-filling."""

from .fractional import (FractionalRun, PourSegment, ledger_bound, run_eager_waterfilling,
                         run_waterfilling)
from .integral import (ACTIVE, PASSIVE, UNMATCHED, BatchRun, IntegralRun, OfferTable,
                       OfferTableError, WaterLevels, compute_offer_tables, default_g,
                       estimate_water_levels, run_balanced_ranking, run_ranking, simulate_batch)

__all__ = [
    "ACTIVE", "PASSIVE", "UNMATCHED", "BatchRun", "FractionalRun", "IntegralRun", "OfferTable",
    "OfferTableError", "PourSegment", "WaterLevels", "compute_offer_tables", "default_g",
    "estimate_water_levels", "ledger_bound", "run_balanced_ranking", "run_eager_waterfilling",
    "run_ranking", "run_waterfilling", "simulate_batch",
]
