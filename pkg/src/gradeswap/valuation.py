"""Time value of grades, friendship and money, and the NPV of a grade trade.

All curves compound continuously. Rates are per year, times in years.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .errors import InvalidInput

FEE_CAP_FRACTION = 0.01


def _nonneg(**values):
    for name, v in values.items():
        if not (v >= 0) or math.isinf(v):
            raise InvalidInput(f"{name} must be a finite value >= 0, got {v}")


@dataclass(frozen=True)
class TimeValueParams:
    """``lam`` grade decay, ``g`` friendship growth, ``r`` money growth,
    ``rho`` discounting, ``u`` share of grade value forfeited by the seller."""

    lam: float = 0.5
    g: float = 0.3
    r: float = 0.05
    rho: float = 0.02
    u: float = 0.5

    def __post_init__(self):
        _nonneg(lam=self.lam, g=self.g, r=self.r, rho=self.rho)
        if not 0 <= self.u <= 1:
            raise InvalidInput(f"u must lie in [0,1], got {self.u}")


@dataclass(frozen=True)
class TradeEconomics:
    fee0: float = 50.0
    notional: float = 10_000.0
    G0: float = 40.0
    F0: float = 10.0
    T: float = 2.0

    def __post_init__(self):
        if not self.notional > 0 or math.isinf(self.notional):
            raise InvalidInput("notional must be positive")
        _nonneg(fee0=self.fee0, G0=self.G0, F0=self.F0, T=self.T)
        if not fee_within_cap(self.fee0, self.notional):
            raise InvalidInput(f"fee {self.fee0} is not below the cap {fee_cap(self.notional)}")


def grade_value(G0: float, lam: float, t: float) -> float:
    _nonneg(G0=G0, lam=lam, t=t)
    return G0 * math.exp(-lam * t)


def growth_value(V0: float, rate: float, t: float) -> float:
    _nonneg(V0=V0, rate=rate, t=t)
    return V0 * math.exp(rate * t)


def fee_cap(notional: float) -> float:
    """Strict upper bound on the initial fee: 1% of the scholarship."""
    if not notional > 0 or math.isinf(notional):
        raise InvalidInput(f"notional must be positive, got {notional}")
    return FEE_CAP_FRACTION * notional


def fee_within_cap(fee: float, notional: float) -> bool:
    return fee < fee_cap(notional)


def reversal_floor(fee0: float, r: float, T: float) -> float:
    """Smallest extra payment at reversal so the seller ends up with fee0
    compounded at ``r`` over the holding period."""
    _nonneg(fee0=fee0, r=r, T=T)
    return fee0 * math.expm1(r * T)


def discounted(value_at_t: float, rho: float, t: float) -> float:
    _nonneg(value_at_t=value_at_t, rho=rho, t=t)
    return value_at_t * math.exp(-rho * t)


def forgone_grade_utility(G0: float, params: TimeValueParams, T: float) -> float:
    """Discounted grade utility the seller gives up while the swap is live:
    the integral of ``u * G0 * exp(-(lam + rho) t)`` over ``[0, T]``."""
    _nonneg(G0=G0, T=T)
    k = params.lam + params.rho
    if k == 0:
        return params.u * G0 * T
    return params.u * G0 * (-math.expm1(-k * T) / k)


def friendship_gain(F0: float, params: TimeValueParams, T: float) -> float:
    return discounted(growth_value(F0, params.g, T), params.rho, T) - F0


def trade_npv(econ: TradeEconomics, params: TimeValueParams) -> tuple[float, float]:
    """Return ``(seller_npv, buyer_npv)`` for one swap held ``econ.T`` years."""
    reversal_pv = discounted(reversal_floor(econ.fee0, params.r, econ.T), params.rho, econ.T)
    friendship = friendship_gain(econ.F0, params, econ.T)
    seller = econ.fee0 + reversal_pv + friendship - forgone_grade_utility(econ.G0, params, econ.T)
    buyer = econ.notional - econ.fee0 - reversal_pv + friendship
    return seller, buyer


# Parameter grid over which both parties' NPVs are checked for positivity.
# Rates stay at the TimeValueParams defaults; the grid spans trade terms.
DEFAULT_GRID = {
    "fee0": (25.0, 50.0, 75.0, 99.0),
    "notional": (10_000.0,),
    "G0": (10.0, 20.0, 40.0),
    "F0": (5.0, 10.0, 20.0, 40.0),
    "T": (0.5, 1.0, 2.0, 4.0, 8.0),
}


def default_grid():
    keys = list(DEFAULT_GRID)
    for combo in itertools.product(*(DEFAULT_GRID[k] for k in keys)):
        yield TradeEconomics(**dict(zip(keys, combo)))


def sample_curves(G0: float, F0: float, M0: float, params: TimeValueParams, horizon: float, steps: int):
    """Uniform samples of the grade, friendship and money curves."""
    if steps < 2:
        raise InvalidInput("steps must be >= 2")
    if not horizon > 0 or math.isinf(horizon):
        raise InvalidInput(f"horizon must be positive and finite, got {horizon}")
    rows = []
    for i in range(steps):
        t = horizon * i / (steps - 1)
        rows.append((t, grade_value(G0, params.lam, t), growth_value(F0, params.g, t), growth_value(M0, params.r, t)))
    return rows
