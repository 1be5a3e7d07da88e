"""Simulator and library for a transparent grade-swap marketplace."""

from .assessment import (
    FIVE_BAND_QUOTA,
    GradeQuota,
    LetterGrade,
    NormalSpec,
    ScoreSheet,
    WeightScheme,
    allocate_curve,
    apply_floor,
    entity_weight,
    final_weight,
    midterm_weight,
    normal_pdf,
    progress_ratio,
    quotas_from_boundaries,
    structural_constant,
    ttl_combine,
    volatility,
)
from .errors import GradeSwapError, InvalidInput, ParseError, Refusal
from .ledger import Ledger, LedgerEvent, verify_ledger
from .light_pool import LightPool, MatchProposal, Order, Side
from .swap_engine import ContractState, Gradebook, Role, SwapContract, SwapEngine, replay
from .valuation import TimeValueParams, TradeEconomics, trade_npv

__version__ = "0.1.0"
