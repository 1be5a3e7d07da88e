"""Fully transparent order book ("light pool") with a deterministic matcher.

Bids come from students who need a higher grade, asks from students who
offer one. Nothing is hidden: :meth:`LightPool.snapshot` lists every resting
order with its owner and terms.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, field
from decimal import ROUND_FLOOR, Decimal, InvalidOperation
from typing import Container, Iterable

from .assessment import LetterGrade
from .errors import InvalidInput, ParseError, Refusal
from .valuation import fee_cap

CENT = Decimal("0.01")


class Side(str, enum.Enum):
    BID = "bid"
    ASK = "ask"


class PricingPolicy(str, enum.Enum):
    MIDPOINT = "midpoint"
    AT_ASK = "at-ask"


def _money(x) -> Decimal:
    try:
        d = Decimal(str(x))
    except InvalidOperation:
        raise InvalidInput(f"not a currency amount: {x!r}") from None
    if not d.is_finite():
        raise InvalidInput(f"not a currency amount: {x!r}")
    return d


@dataclass(frozen=True)
class Order:
    id: str
    submitted_at: int
    side: Side
    student: str
    course: str
    current_grade: LetterGrade
    min_acceptable_grade: LetterGrade | None = None
    max_fee: float | None = None
    notional: float | None = None
    min_fee: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["side"] = self.side.value
        d["current_grade"] = self.current_grade.label
        d["min_acceptable_grade"] = self.min_acceptable_grade.label if self.min_acceptable_grade else None
        return d

    @classmethod
    def from_dict(cls, d) -> "Order":
        def opt(key, conv):
            v = d.get(key)
            return None if v in (None, "") else conv(v)

        try:
            return cls(
                id=str(d["id"]),
                submitted_at=int(d["submitted_at"]),
                side=Side(str(d["side"]).strip().lower()),
                student=str(d["student"]),
                course=str(d["course"]),
                current_grade=LetterGrade.parse(d["current_grade"]),
                min_acceptable_grade=opt("min_acceptable_grade", LetterGrade.parse),
                max_fee=opt("max_fee", float),
                notional=opt("notional", float),
                min_fee=opt("min_fee", float),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad order record {dict(d)}: {exc}") from exc


@dataclass(frozen=True)
class MatchProposal:
    bid_id: str
    ask_id: str
    course: str
    fee: float
    buyer: str = ""
    seller: str = ""
    notional: float = 0.0


@dataclass
class BookSnapshot:
    bids: list[dict] = field(default_factory=list)
    asks: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.bids) + len(self.asks)

    def to_json(self) -> str:
        return json.dumps({"bids": self.bids, "asks": self.asks}, sort_keys=True, separators=(",", ":"))


def _bid_key(o: Order):
    return (-_money(o.max_fee), o.submitted_at, o.id)


def _ask_key(o: Order):
    return (_money(o.min_fee), o.submitted_at, o.id)


def compatible(bid: Order, ask: Order) -> bool:
    return (
        bid.course == ask.course
        and ask.current_grade > bid.current_grade
        and ask.current_grade >= bid.min_acceptable_grade
        and _money(ask.min_fee) <= _money(bid.max_fee)
    )


def agreed_fee(bid: Order, ask: Order, policy: PricingPolicy = PricingPolicy.MIDPOINT) -> float:
    lo, hi = _money(ask.min_fee), _money(bid.max_fee)
    if policy is PricingPolicy.AT_ASK:
        return float(lo)
    # rounding down keeps the fee strictly under the bid's cap
    return float(((lo + hi) / 2).quantize(CENT, rounding=ROUND_FLOOR))


class LightPool:
    """Resting orders across courses; matching never crosses courses."""

    def __init__(self, policy: PricingPolicy | str = PricingPolicy.MIDPOINT):
        self.policy = PricingPolicy(policy)
        self._orders: dict[str, Order] = {}
        self._seen_ids: set[str] = set()

    def __len__(self):
        return len(self._orders)

    def __contains__(self, order_id):
        return order_id in self._orders

    def orders(self) -> list[Order]:
        return list(self._orders.values())

    def submit_order(self, order: Order, licenses: Container, gradebook) -> Order:
        """Rest ``order`` in the book or raise :class:`Refusal`.

        ``licenses`` answers ``(student, "buyer"|"seller") in licenses``;
        ``gradebook`` answers ``get(student, course)``.
        """
        if order.id in self._seen_ids:
            raise Refusal("duplicate-order", order.id)
        role = "buyer" if order.side is Side.BID else "seller"
        if (order.student, role) not in licenses:
            raise Refusal("unlicensed", f"{order.student} holds no {role} license")
        held = gradebook.get(order.student, order.course)
        if held is None or held != order.current_grade:
            raise Refusal("unknown-grade", f"gradebook does not attest {order.current_grade} for {order.student} in {order.course}")
        if order.side is Side.BID:
            if order.max_fee is None or order.notional is None or order.min_acceptable_grade is None:
                raise Refusal("bad-terms", "bids need max_fee, notional and min_acceptable_grade")
            if order.notional <= 0:
                raise Refusal("bad-terms", "notional must be positive")
            max_fee = _money(order.max_fee)
            if max_fee < 0 or max_fee != max_fee.quantize(CENT):
                raise Refusal("bad-terms", "max_fee must be a non-negative whole number of cents")
            if not order.max_fee < fee_cap(order.notional):
                raise Refusal("fee-cap", f"max_fee {order.max_fee} is not below {fee_cap(order.notional)}")
        else:
            if order.min_fee is None:
                raise Refusal("bad-terms", "asks need min_fee")
            min_fee = _money(order.min_fee)
            if min_fee < 0 or min_fee != min_fee.quantize(CENT):
                raise Refusal("bad-terms", "min_fee must be a non-negative whole number of cents")
        self._orders[order.id] = order
        self._seen_ids.add(order.id)
        return order

    def cancel_order(self, order_id: str) -> Order:
        try:
            return self._orders.pop(order_id)
        except KeyError:
            raise Refusal("unknown-order", order_id) from None

    def snapshot(self) -> BookSnapshot:
        bids = sorted((o for o in self._orders.values() if o.side is Side.BID), key=_bid_key)
        asks = sorted((o for o in self._orders.values() if o.side is Side.ASK), key=_ask_key)
        return BookSnapshot([o.to_dict() for o in bids], [o.to_dict() for o in asks])

    def match_book(self) -> list[MatchProposal]:
        """Price-time priority: best bid first takes the first compatible
        ask in ask priority. Matched orders leave the book."""
        bids = sorted((o for o in self._orders.values() if o.side is Side.BID), key=_bid_key)
        asks = sorted((o for o in self._orders.values() if o.side is Side.ASK), key=_ask_key)
        taken: set[str] = set()
        out = []
        for bid in bids:
            for ask in asks:
                if ask.id not in taken and compatible(bid, ask):
                    taken.add(ask.id)
                    out.append(
                        MatchProposal(bid.id, ask.id, bid.course, agreed_fee(bid, ask, self.policy), bid.student, ask.student, bid.notional)
                    )
                    del self._orders[bid.id]
                    del self._orders[ask.id]
                    break
        return out


def read_orders(path) -> list[Order]:
    """Load an order stream from CSV (header row) or JSON lines."""
    with open(path, newline="") as fh:
        text = fh.read()
    if str(path).endswith((".jsonl", ".json", ".ndjson")):
        out = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                out.append(Order.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{n}: {exc}") from exc
        return out
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or "side" not in reader.fieldnames:
        raise ParseError(f"{path}: missing order header")
    return [Order.from_dict(row) for row in reader]


def write_orders(path, orders: Iterable[Order]):
    with open(path, "w") as fh:
        for o in orders:
            fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")
