"""Grade-swap contract lifecycle.

A :class:`SwapEngine` is the single writer over a gradebook, the license
registry, contracts, cash balances and the event ledger. Every state change
is appended to the ledger, and :func:`replay` rebuilds an engine from an
event log.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping

from .assessment import LetterGrade
from .errors import InvalidInput, ParseError, Refusal
from .ledger import EventKind, Ledger, LedgerEvent
from .valuation import TimeValueParams, fee_cap, fee_within_cap, reversal_floor


class Role(str, enum.Enum):
    BUYER = "buyer"
    SELLER = "seller"


class ContractState(str, enum.Enum):
    PROPOSED = "Proposed"
    LICENSED = "Licensed"
    ACTIVE = "Active"
    REVERSED = "Reversed"
    CANCELLED = "Cancelled"


ALLOWED_TRANSITIONS = {
    (ContractState.PROPOSED, ContractState.LICENSED),
    (ContractState.LICENSED, ContractState.ACTIVE),
    (ContractState.ACTIVE, ContractState.REVERSED),
    (ContractState.PROPOSED, ContractState.CANCELLED),
    (ContractState.LICENSED, ContractState.CANCELLED),
}


class Gradebook:
    """Letter grades keyed by ``(student_id, course_id)``.

    ``version`` increments by one on every mutation.
    """

    def __init__(self, records: Mapping[tuple[str, str], LetterGrade] | None = None):
        self._records: dict[tuple[str, str], LetterGrade] = {}
        self.version = 0
        for key, grade in (records or {}).items():
            self._records[key] = LetterGrade.parse(grade)

    def __contains__(self, key):
        return key in self._records

    def __len__(self):
        return len(self._records)

    def get(self, student: str, course: str) -> LetterGrade | None:
        return self._records.get((student, course))

    def records(self) -> dict[tuple[str, str], LetterGrade]:
        return dict(self._records)

    def courses(self) -> set[str]:
        return {c for _, c in self._records}

    def students(self) -> set[str]:
        return {s for s, _ in self._records}

    def course_multiset(self, course: str) -> Counter:
        return Counter(g.label for (_, c), g in self._records.items() if c == course)

    def post(self, student: str, course: str, grade: LetterGrade):
        """Record a freshly allocated grade; existing records are immutable
        outside swaps."""
        if (student, course) in self._records:
            raise Refusal("duplicate-record", f"{student} already graded in {course}")
        self._records[(student, course)] = grade
        self.version += 1

    def _swap(self, a: tuple[str, str], b: tuple[str, str]):
        self._records[a], self._records[b] = self._records[b], self._records[a]
        self.version += 1

    def _set_pair(self, a: tuple[str, str], ga: LetterGrade, b: tuple[str, str], gb: LetterGrade):
        self._records[a] = ga
        self._records[b] = gb
        self.version += 1

    def copy(self) -> "Gradebook":
        gb = Gradebook(self._records)
        gb.version = self.version
        return gb

    def to_csv_text(self) -> str:
        lines = ["student_id,course_id,grade"]
        for (s, c), g in sorted(self._records.items()):
            lines.append(f"{s},{c},{g.label}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def read_csv(cls, path) -> "Gradebook":
        records = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"student_id", "course_id", "grade"} <= set(reader.fieldnames):
                raise ParseError(f"{path}: expected header student_id,course_id,grade")
            for row in reader:
                key = (row["student_id"].strip(), row["course_id"].strip())
                if key in records:
                    raise ParseError(f"{path}: duplicate record {key}")
                try:
                    records[key] = LetterGrade.parse(row["grade"])
                except InvalidInput as exc:
                    raise ParseError(f"{path}: {exc}") from exc
        return cls(records)


@dataclass(frozen=True)
class TradingLicense:
    holder: str
    role: Role
    evidence: str
    issued_at: float


@dataclass(frozen=True)
class SwapContract:
    id: str
    buyer: str
    seller: str
    course: str
    buyer_grade: LetterGrade
    seller_grade: LetterGrade
    fee0: float
    notional: float
    reversal_due_at: float
    proposed_at: float
    initiated_at: float | None = None
    reversal_payment: float | None = None
    state: ContractState = ContractState.PROPOSED

    @property
    def holding_period(self) -> float | None:
        if self.initiated_at is None:
            return None
        return self.reversal_due_at - self.initiated_at

    def to_payload(self) -> dict:
        d = asdict(self)
        d["buyer_grade"] = self.buyer_grade.label
        d["seller_grade"] = self.seller_grade.label
        d["state"] = self.state.value
        return d


@dataclass(frozen=True)
class Certificate:
    recipient: str
    contract_id: str
    citation: str
    issued_at: float


CITATION = (
    "{seller} gave up a {grade} in {course} so that a fellow student could keep "
    "their scholarship, showing exemplary humanitarian ideals."
)


class SwapEngine:
    """Single-writer owner of the gradebook, contracts and ledger."""

    def __init__(self, gradebook: Gradebook | None = None, params: TimeValueParams | None = None, ledger: Ledger | None = None):
        self.gradebook = gradebook if gradebook is not None else Gradebook()
        self.params = params or TimeValueParams()
        self.ledger = ledger or Ledger()
        self.licenses: dict[tuple[str, Role], TradingLicense] = {}
        self.contracts: dict[str, SwapContract] = {}
        self.certificates: list[Certificate] = []
        self.balances: Counter = Counter()
        self.transitions: list[tuple[ContractState, ContractState]] = []
        self.now = 0.0
        self._next_id = 0

    # -- helpers ---------------------------------------------------------

    def _tick(self, at: float | None) -> float:
        if at is None:
            return self.now
        if not math.isfinite(at):
            raise InvalidInput(f"bad timestamp {at}")
        if at < self.now:
            raise InvalidInput(f"clock moved backwards: {at} < {self.now}")
        self.now = float(at)
        return self.now

    def _emit(self, kind: EventKind, payload: dict) -> LedgerEvent:
        return self.ledger.append(kind, payload, self.now)

    def _transition(self, contract: SwapContract, new: ContractState, **changes) -> SwapContract:
        current = self.contracts.get(contract.id)
        if current is None:
            raise Refusal("unknown-contract", contract.id)
        if (current.state, new) not in ALLOWED_TRANSITIONS:
            raise Refusal("bad-state", f"{current.id}: {current.state.value} -> {new.value}")
        updated = replace(current, state=new, **changes)
        self.contracts[current.id] = updated
        self.transitions.append((current.state, new))
        return updated

    def _current(self, contract: SwapContract | str) -> SwapContract:
        cid = contract if isinstance(contract, str) else contract.id
        try:
            return self.contracts[cid]
        except KeyError:
            raise Refusal("unknown-contract", cid) from None

    def has_license(self, holder: str, role: Role | str) -> bool:
        return (holder, Role(role)) in self.licenses

    def __contains__(self, key) -> bool:
        holder, role = key
        return self.has_license(holder, role)

    def active_contracts(self) -> list[SwapContract]:
        return [c for c in self.contracts.values() if c.state is ContractState.ACTIVE]

    def _busy_records(self) -> set[tuple[str, str]]:
        busy = set()
        for c in self.active_contracts():
            busy.add((c.buyer, c.course))
            busy.add((c.seller, c.course))
        return busy

    # -- operations ------------------------------------------------------

    def issue_license(self, holder: str, role: Role | str, evidence: str | None, at: float | None = None) -> TradingLicense:
        role = Role(role)
        if not evidence or not str(evidence).strip():
            what = "scholarship-need documentation" if role is Role.BUYER else "held-grade attestation"
            raise Refusal("missing-evidence", f"{role.value} license needs {what}")
        if (holder, role) in self.licenses:
            raise Refusal("duplicate-license", f"{holder} already holds a {role.value} license")
        t = self._tick(at)
        lic = TradingLicense(holder, role, str(evidence), t)
        self.licenses[(holder, role)] = lic
        self._emit(EventKind.LICENSE_ISSUED, {"holder": holder, "role": role.value, "evidence": lic.evidence})
        return lic

    def post_grades(self, course: str, grades: Mapping[str, LetterGrade], at: float | None = None):
        self._tick(at)
        for sid in sorted(grades):
            if (sid, course) in self.gradebook:
                raise Refusal("duplicate-record", f"{sid} already graded in {course}")
        for sid in sorted(grades):
            self.gradebook.post(sid, course, grades[sid])
        self._emit(EventKind.GRADES_POSTED, {"course": course, "grades": {s: grades[s].label for s in sorted(grades)}})

    def propose(
        self,
        buyer: str,
        seller: str,
        course: str,
        fee0: float,
        notional: float,
        reversal_due_at: float,
        at: float | None = None,
        refs: Mapping[str, str] | None = None,
    ) -> SwapContract:
        if buyer == seller:
            raise Refusal("self-trade", f"{buyer} cannot trade with themselves")
        if course not in self.gradebook.courses():
            raise Refusal("unknown-course", course)
        bg = self.gradebook.get(buyer, course)
        sg = self.gradebook.get(seller, course)
        if bg is None:
            raise Refusal("unknown-student", f"{buyer} has no grade in {course}")
        if sg is None:
            raise Refusal("unknown-student", f"{seller} has no grade in {course}")
        if not (fee0 >= 0 and math.isfinite(fee0)) or not (notional > 0 and math.isfinite(notional)):
            raise InvalidInput("fee0 must be >= 0 and notional > 0")
        t = self._tick(at)
        if not reversal_due_at >= t:
            raise InvalidInput("reversal_due_at precedes the proposal")
        cid = f"C{self._next_id:05d}"
        self._next_id += 1
        contract = SwapContract(cid, buyer, seller, course, bg, sg, float(fee0), float(notional), float(reversal_due_at), t)
        self.contracts[cid] = contract
        payload = contract.to_payload()
        if refs:
            payload["refs"] = dict(refs)
        self._emit(EventKind.CONTRACT_PROPOSED, payload)
        return contract

    def validate(self, contract: SwapContract | str, at: float | None = None) -> SwapContract:
        c = self._current(contract)
        if c.state is not ContractState.PROPOSED:
            raise Refusal("bad-state", f"{c.id} is {c.state.value}, not Proposed")
        if not self.has_license(c.buyer, Role.BUYER):
            raise Refusal("unlicensed-buyer", c.buyer)
        if not self.has_license(c.seller, Role.SELLER):
            raise Refusal("unlicensed-seller", c.seller)
        if not c.seller_grade > c.buyer_grade:
            raise Refusal("grade-order", f"seller {c.seller_grade} is not above buyer {c.buyer_grade}")
        if not fee_within_cap(c.fee0, c.notional):
            raise Refusal("fee-cap", f"fee {c.fee0} is not below {fee_cap(c.notional)}")
        self._tick(at)
        c = self._transition(c, ContractState.LICENSED)
        self._emit(EventKind.CONTRACT_VALIDATED, {"contract": c.id})
        return c

    def execute(self, contract: SwapContract | str, clock: float | None = None) -> SwapContract:
        c = self._current(contract)
        if c.state is not ContractState.LICENSED:
            raise Refusal("bad-state", f"{c.id} is {c.state.value}, not Licensed")
        b_key, s_key = (c.buyer, c.course), (c.seller, c.course)
        if self.gradebook.get(*b_key) != c.buyer_grade or self.gradebook.get(*s_key) != c.seller_grade:
            raise Refusal("stale-snapshot", f"grades in {c.course} changed since {c.id} was proposed")
        busy = self._busy_records()
        if b_key in busy or s_key in busy:
            raise Refusal("record-busy", f"a grade in {c.id} is already in an active swap")
        # a contract reaching Active must satisfy the cap whatever path led here
        if not fee_within_cap(c.fee0, c.notional):
            raise Refusal("fee-cap", f"fee {c.fee0} is not below {fee_cap(c.notional)}")
        t = self._tick(clock)
        if c.reversal_due_at < t:
            raise Refusal("past-due", f"{c.id} reversal date already passed")
        self.gradebook._swap(b_key, s_key)
        self.balances[c.buyer] -= c.fee0
        self.balances[c.seller] += c.fee0
        c = self._transition(c, ContractState.ACTIVE, initiated_at=t)
        self._emit(EventKind.CONTRACT_EXECUTED, {"contract": c.id, "initiated_at": t, "fee0": c.fee0, "from": c.buyer, "to": c.seller})
        cert = Certificate(c.seller, c.id, CITATION.format(seller=c.seller, grade=c.seller_grade.label, course=c.course), t)
        self.certificates.append(cert)
        self._emit(EventKind.CERTIFICATE_ISSUED, asdict(cert))
        return c

    def reversal_floor_for(self, contract: SwapContract | str, clock: float) -> float:
        c = self._current(contract)
        if c.initiated_at is None:
            raise Refusal("bad-state", f"{c.id} was never executed")
        return reversal_floor(c.fee0, self.params.r, clock - c.initiated_at)

    def reverse(self, contract: SwapContract | str, clock: float, payment: float) -> SwapContract:
        c = self._current(contract)
        if c.state is not ContractState.ACTIVE:
            raise Refusal("bad-state", f"{c.id} is {c.state.value}, not Active")
        if clock < c.reversal_due_at:
            raise Refusal("not-yet-due", f"{c.id} is due at {c.reversal_due_at}")
        if clock < self.now:
            raise InvalidInput(f"clock moved backwards: {clock} < {self.now}")
        floor = self.reversal_floor_for(c, clock)
        if not (payment >= floor) or not math.isfinite(payment):
            raise Refusal("npv-constraint", f"payment {payment} below floor {floor}")
        b_key, s_key = (c.buyer, c.course), (c.seller, c.course)
        if self.gradebook.get(*b_key) != c.seller_grade or self.gradebook.get(*s_key) != c.buyer_grade:
            raise Refusal("stale-snapshot", f"grades in {c.course} no longer match {c.id}")
        t = self._tick(clock)
        self.gradebook._set_pair(b_key, c.buyer_grade, s_key, c.seller_grade)
        self.balances[c.buyer] -= payment
        self.balances[c.seller] += payment
        c = self._transition(c, ContractState.REVERSED, reversal_payment=float(payment))
        self._emit(EventKind.CONTRACT_REVERSED, {"contract": c.id, "payment": float(payment), "floor": floor, "from": c.buyer, "to": c.seller})
        return c

    def cancel(self, contract: SwapContract | str, at: float | None = None, reason: str | None = None) -> SwapContract:
        c = self._current(contract)
        if c.state not in (ContractState.PROPOSED, ContractState.LICENSED):
            raise Refusal("bad-state", f"{c.id} is {c.state.value}; only Proposed or Licensed can be cancelled")
        self._tick(at)
        c = self._transition(c, ContractState.CANCELLED)
        payload = {"contract": c.id}
        if reason:
            payload["reason"] = reason
        self._emit(EventKind.CONTRACT_CANCELLED, payload)
        return c

    def record(self, kind: EventKind, payload: dict, at: float | None = None) -> LedgerEvent:
        """Append an event owned by a collaborator (the order book)."""
        self._tick(at)
        return self._emit(kind, payload)

    def state_digest(self) -> dict:
        """Comparable summary of everything the engine owns."""
        return {
            "gradebook": self.gradebook.to_csv_text(),
            "licenses": sorted((h, r.value, lic.evidence) for (h, r), lic in self.licenses.items()),
            "contracts": {cid: c.to_payload() for cid, c in sorted(self.contracts.items())},
            "certificates": [asdict(c) for c in self.certificates],
            "balances": {k: v for k, v in sorted(self.balances.items()) if v != 0},
        }


def replay(events: Iterable[LedgerEvent], initial: Gradebook | None = None, params: TimeValueParams | None = None) -> SwapEngine:
    """Rebuild an engine by re-applying every event of a log in order.

    Reapplication goes through the public operations, so every guard runs
    again; a log the engine could not have produced raises a Refusal.
    """
    engine = SwapEngine(initial.copy() if initial is not None else Gradebook(), params)
    for ev in events:
        p = ev.payload
        kind = EventKind(ev.kind)
        t = ev.timestamp
        if kind is EventKind.LICENSE_ISSUED:
            engine.issue_license(p["holder"], p["role"], p["evidence"], at=t)
        elif kind is EventKind.GRADES_POSTED:
            engine.post_grades(p["course"], {s: LetterGrade.parse(g) for s, g in p["grades"].items()}, at=t)
        elif kind is EventKind.CONTRACT_PROPOSED:
            c = engine.propose(p["buyer"], p["seller"], p["course"], p["fee0"], p["notional"], p["reversal_due_at"], at=t, refs=p.get("refs"))
            if c.id != p["id"]:
                raise Refusal("replay-mismatch", f"expected {p['id']}, got {c.id}")
        elif kind is EventKind.CONTRACT_VALIDATED:
            engine.validate(p["contract"], at=t)
        elif kind is EventKind.CONTRACT_EXECUTED:
            engine.execute(p["contract"], clock=t)
        elif kind is EventKind.CONTRACT_REVERSED:
            engine.reverse(p["contract"], clock=t, payment=p["payment"])
        elif kind is EventKind.CONTRACT_CANCELLED:
            engine.cancel(p["contract"], at=t, reason=p.get("reason"))
        elif kind is EventKind.CERTIFICATE_ISSUED:
            # re-emitted by execute; check it agrees
            last = engine.certificates[-1] if engine.certificates else None
            if last is None or last.contract_id != p["contract_id"]:
                raise Refusal("replay-mismatch", f"certificate for {p['contract_id']}")
            continue
        else:
            engine.record(kind, p, at=t)
            continue
    return engine
