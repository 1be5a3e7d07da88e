"""Append-only, hash-chained event log.

Each line of the persisted file is one JSON object with fields in the fixed
order ``sequence, timestamp, kind, payload, chain``. ``chain`` is the
lowercase hex SHA-256 of the previous digest followed by the canonical
serialization of the event without its digest.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .errors import ParseError

GENESIS = "0" * 64


class EventKind(str, enum.Enum):
    LICENSE_ISSUED = "LicenseIssued"
    ORDER_SUBMITTED = "OrderSubmitted"
    ORDER_CANCELLED = "OrderCancelled"
    CONTRACT_PROPOSED = "ContractProposed"
    CONTRACT_VALIDATED = "ContractValidated"
    CONTRACT_EXECUTED = "ContractExecuted"
    CONTRACT_REVERSED = "ContractReversed"
    CONTRACT_CANCELLED = "ContractCancelled"
    CERTIFICATE_ISSUED = "CertificateIssued"
    # curve allocations land in the gradebook outside any swap
    GRADES_POSTED = "GradesPosted"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _body(sequence, timestamp, kind, payload) -> str:
    # field order is part of the format
    return (
        '{"sequence":' + json.dumps(sequence)
        + ',"timestamp":' + json.dumps(timestamp)
        + ',"kind":' + json.dumps(kind)
        + ',"payload":' + canonical_json(payload)
        + "}"
    )


def chain_digest(prev: str, body: str) -> str:
    return hashlib.sha256((prev + body).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LedgerEvent:
    sequence: int
    timestamp: float
    kind: str
    payload: Mapping[str, Any]
    chain: str

    def body(self) -> str:
        return _body(self.sequence, self.timestamp, self.kind, self.payload)

    def to_line(self) -> str:
        return self.body()[:-1] + ',"chain":' + json.dumps(self.chain) + "}"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LedgerEvent":
        return cls(d["sequence"], d["timestamp"], d["kind"], d["payload"], d["chain"])


class Ledger:
    """In-memory event log; the single writer appends, readers copy."""

    def __init__(self):
        self._events: list[LedgerEvent] = []

    def __len__(self):
        return len(self._events)

    def __iter__(self):
        return iter(list(self._events))

    @property
    def events(self) -> tuple[LedgerEvent, ...]:
        return tuple(self._events)

    @property
    def head(self) -> str:
        return self._events[-1].chain if self._events else GENESIS

    def append(self, kind: EventKind | str, payload: Mapping[str, Any], timestamp: float) -> LedgerEvent:
        kind = kind.value if isinstance(kind, EventKind) else kind
        # round-trip through JSON so stored payloads equal what a reader sees
        payload = json.loads(canonical_json(payload))
        seq = len(self._events)
        body = _body(seq, float(timestamp), kind, payload)
        ev = LedgerEvent(seq, float(timestamp), kind, payload, chain_digest(self.head, body))
        self._events.append(ev)
        return ev

    def dumps(self) -> str:
        return "".join(ev.to_line() + "\n" for ev in self._events)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())


def verify_ledger(events: Iterable[LedgerEvent | Mapping[str, Any] | None]) -> int | None:
    """Recompute the digest chain.

    Returns ``None`` when every event verifies, else the sequence number
    (position in the log) of the first event that does not. ``None`` entries
    stand for lines that could not be parsed.
    """
    prev = GENESIS
    for idx, ev in enumerate(events):
        if ev is None:
            return idx
        if not isinstance(ev, LedgerEvent):
            try:
                ev = LedgerEvent.from_dict(ev)
            except (KeyError, TypeError):
                return idx
        if ev.sequence != idx or not isinstance(ev.chain, str):
            return idx
        try:
            body = ev.body()
        except (TypeError, ValueError):
            return idx
        if chain_digest(prev, body) != ev.chain:
            return idx
        prev = ev.chain
    return None


def read_ledger_lines(text: str) -> list[LedgerEvent | None]:
    """Parse a ledger file; unparseable lines become ``None`` so that
    verification can point at them."""
    out: list[LedgerEvent | None] = []
    text = text.rstrip("\n")
    for line in text.split("\n") if text else []:
        try:
            d = json.loads(line)
            out.append(LedgerEvent.from_dict(d))
        except (ValueError, KeyError, TypeError):
            out.append(None)
    return out


def read_ledger(path) -> list[LedgerEvent | None]:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        # decode line by line so a single bad byte only poisons its own line
        text = "\n".join(line.decode("utf-8", errors="replace") for line in raw.split(b"\n"))
    return read_ledger_lines(text)


def load_verified(path) -> list[LedgerEvent]:
    events = read_ledger(path)
    bad = verify_ledger(events)
    if bad is not None:
        raise ParseError(f"{path}: ledger fails verification at sequence {bad}")
    return events  # type: ignore[return-value]
