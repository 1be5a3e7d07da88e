"""Agent-based semester simulation.

Each semester draws scores, grades every course on its curve, flags
scholarship holders whose GPA falls under their threshold, turns them into
bids, turns top-grade holders in those courses into asks, matches the book and runs the
resulting swaps through the engine. Swaps are reversed when the buyer's
need expires.

The :class:`SemesterReport` is rebuilt from the ledger alone (plus the
scenario), so replaying a persisted ledger reproduces it byte for byte.

Scenario files are YAML with this layout (``schema_version: 1``)::

    schema_version: 1
    seed: 7
    rng: numpy-pcg64          # only generator supported
    semesters: 2
    semester_years: 0.5       # simulation clock advance per semester
    students:
      - id: s1
        scholarship: 10000    # null when the student has none
        gpa_threshold: 3.0
        ability: {mean: 70, sigma: 10}
        need_expiry: 2        # semester index at which the need ends
        meets_fixed_components: true
    courses:
      - id: FIN101
        quota: {A: 20, B: 30, C: 30, D: 20}   # percent, highest band first
        tough: false
    params: {lam: 0.5, g: 0.3, r: 0.05, rho: 0.02, u: 0.5}
    economics: {G0: 40, F0: 10, M0: 100}
    matching:
      policy: midpoint        # or at-ask
      buyer_fee_fraction: 0.005
      ask_min_fee: 10
      seller_min_grade: A
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .assessment import GradeQuota, LetterGrade, ScoreSheet, allocate_curve, apply_floor, gpa
from .errors import InvalidInput, ParseError, Refusal
from .ledger import EventKind, LedgerEvent
from .light_pool import LightPool, Order, PricingPolicy, Side
from .swap_engine import ContractState, Role, SwapEngine
from .valuation import TimeValueParams, TradeEconomics, fee_cap, sample_curves, trade_npv

SCHEMA_VERSION = 1
RNG_ALGORITHMS = ("numpy-pcg64",)


@dataclass(frozen=True)
class StudentSpec:
    id: str
    scholarship: float | None
    gpa_threshold: Fraction
    ability_mean: float
    ability_sigma: float
    need_expiry: int | None = None
    meets_fixed_components: bool = True


@dataclass(frozen=True)
class CourseSpec:
    id: str
    quota: GradeQuota
    tough: bool = False


@dataclass(frozen=True)
class MatchingConfig:
    policy: PricingPolicy = PricingPolicy.MIDPOINT
    buyer_fee_fraction: float = 0.005
    ask_min_fee: float = 10.0
    seller_min_grade: LetterGrade = LetterGrade.A


@dataclass(frozen=True)
class Scenario:
    seed: int
    semesters: int
    students: tuple[StudentSpec, ...]
    courses: tuple[CourseSpec, ...]
    params: TimeValueParams = TimeValueParams()
    matching: MatchingConfig = MatchingConfig()
    semester_years: float = 0.5
    G0: float = 40.0
    F0: float = 10.0
    M0: float = 100.0
    rng: str = "numpy-pcg64"

    def __post_init__(self):
        if self.rng not in RNG_ALGORITHMS:
            raise InvalidInput(f"unsupported rng {self.rng!r}; use one of {RNG_ALGORITHMS}")
        if self.semesters < 1:
            raise InvalidInput("need at least one semester")
        if not (self.semester_years > 0 and math.isfinite(self.semester_years)):
            raise InvalidInput("semester_years must be positive")
        if not self.students or not self.courses:
            raise InvalidInput("need students and courses")
        ids = [s.id for s in self.students]
        if len(set(ids)) != len(ids):
            raise InvalidInput("duplicate student ids")
        cids = [c.id for c in self.courses]
        if len(set(cids)) != len(cids):
            raise InvalidInput("duplicate course ids")
        for s in self.students:
            if not 0 <= s.gpa_threshold <= Fraction(43, 10):
                raise InvalidInput(f"{s.id}: gpa_threshold outside [0, 4.3]")
            if s.ability_sigma < 0 or not math.isfinite(s.ability_mean):
                raise InvalidInput(f"{s.id}: bad ability")
            if s.scholarship is not None and not s.scholarship > 0:
                raise InvalidInput(f"{s.id}: scholarship must be positive or null")
            if s.need_expiry is not None and s.need_expiry < 0:
                raise InvalidInput(f"{s.id}: need_expiry must be >= 0")
        m = self.matching
        if not 0 <= m.buyer_fee_fraction < 1 or m.ask_min_fee < 0:
            raise InvalidInput("bad matching knobs")
        for v in (self.G0, self.F0, self.M0):
            if v < 0:
                raise InvalidInput("economics values must be >= 0")

    def semester_start(self, s: int) -> float:
        return s * self.semester_years

    def due_time(self, student: StudentSpec) -> float:
        expiry = student.need_expiry if student.need_expiry is not None else self.semesters
        return self.semester_start(expiry)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Scenario":
        if not isinstance(d, Mapping):
            raise InvalidInput("scenario must be a mapping")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInput(f"schema_version must be {SCHEMA_VERSION}")
        if "seed" not in d:
            raise InvalidInput("seed is mandatory")
        known = {"schema_version", "seed", "rng", "semesters", "semester_years", "students", "courses", "params", "economics", "matching"}
        extra = set(d) - known
        if extra:
            raise InvalidInput(f"unknown scenario keys: {sorted(extra)}")
        try:
            students = tuple(
                StudentSpec(
                    id=str(s["id"]),
                    scholarship=None if s.get("scholarship") is None else float(s["scholarship"]),
                    gpa_threshold=Fraction(str(s.get("gpa_threshold", 0))),
                    ability_mean=float(s["ability"]["mean"]),
                    ability_sigma=float(s["ability"].get("sigma", 0)),
                    need_expiry=None if s.get("need_expiry") is None else int(s["need_expiry"]),
                    meets_fixed_components=bool(s.get("meets_fixed_components", True)),
                )
                for s in d.get("students", [])
            )
            courses = tuple(
                CourseSpec(str(c["id"]), GradeQuota.from_percentages(c["quota"]), bool(c.get("tough", False)))
                for c in d.get("courses", [])
            )
            m = d.get("matching", {}) or {}
            matching = MatchingConfig(
                policy=PricingPolicy(m.get("policy", "midpoint")),
                buyer_fee_fraction=float(m.get("buyer_fee_fraction", 0.005)),
                ask_min_fee=float(m.get("ask_min_fee", 10.0)),
                seller_min_grade=LetterGrade.parse(m.get("seller_min_grade", "A")),
            )
            econ = d.get("economics", {}) or {}
            return cls(
                seed=int(d["seed"]),
                semesters=int(d.get("semesters", 1)),
                students=students,
                courses=courses,
                params=TimeValueParams(**(d.get("params") or {})),
                matching=matching,
                semester_years=float(d.get("semester_years", 0.5)),
                G0=float(econ.get("G0", 40.0)),
                F0=float(econ.get("F0", 10.0)),
                M0=float(econ.get("M0", 100.0)),
                rng=str(d.get("rng", "numpy-pcg64")),
            )
        except InvalidInput:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"invalid scenario: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "rng": self.rng,
            "semesters": self.semesters,
            "semester_years": self.semester_years,
            "students": [
                {
                    "id": s.id,
                    "scholarship": s.scholarship,
                    "gpa_threshold": str(s.gpa_threshold),
                    "ability": {"mean": s.ability_mean, "sigma": s.ability_sigma},
                    "need_expiry": s.need_expiry,
                    "meets_fixed_components": s.meets_fixed_components,
                }
                for s in self.students
            ],
            "courses": [
                {"id": c.id, "quota": {b.label: str(f * 100) for b, f in c.quota.buckets}, "tough": c.tough}
                for c in self.courses
            ],
            "params": {"lam": self.params.lam, "g": self.params.g, "r": self.params.r, "rho": self.params.rho, "u": self.params.u},
            "economics": {"G0": self.G0, "F0": self.F0, "M0": self.M0},
            "matching": {
                "policy": self.matching.policy.value,
                "buyer_fee_fraction": self.matching.buyer_fee_fraction,
                "ask_min_fee": self.matching.ask_min_fee,
                "seller_min_grade": self.matching.seller_min_grade.label,
            },
        }


def load_scenario(path, seed: int | None = None) -> Scenario:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if isinstance(data, dict) and seed is not None:
        data = {**data, "seed": seed}
    return Scenario.from_dict(data)


def course_key(course: str, semester: int) -> str:
    return f"{course}@S{semester}"


def split_course_key(key: str) -> tuple[str, int]:
    course, _, sem = key.rpartition("@S")
    return course, int(sem)


def _floor_cent(x: float) -> float:
    return math.floor(round(x * 100, 6)) / 100


def choose_bid(grades: Mapping[str, LetterGrade], threshold: Fraction) -> tuple[str, LetterGrade] | None:
    """Pick the course and minimum acceptable grade for an at-risk student.

    Prefers the course where the fewest grade steps would lift the GPA to
    ``threshold``; if no single course can, bids one step up in the
    course with the lowest grade.
    """
    courses = sorted(grades)
    total = sum(grades[c].gpa_points for c in courses)
    n = len(courses)
    best = None
    for c in courses:
        needed = threshold * n - (total - grades[c].gpa_points)
        target = next((g for g in sorted(LetterGrade, key=lambda g: g.rank) if g.gpa_points >= needed), None)
        if target is None or target <= grades[c]:
            continue
        key = (target.rank - grades[c].rank, grades[c].rank, c)
        if best is None or key < best[0]:
            best = (key, c, target)
    if best is not None:
        return best[1], best[2]
    c = min(courses, key=lambda c: (grades[c].rank, c))
    if grades[c] is LetterGrade.A_PLUS:
        return None
    return c, LetterGrade.by_rank(grades[c].rank + 1)


@dataclass
class SemesterReport:
    """Deterministic record of a run, derivable from the ledger."""

    semesters: list[dict]
    settlement: dict
    contracts: dict[str, dict]
    npv: dict[str, Any]
    dual_role: list[dict]
    final_ledger_digest: str
    final_gradebook_digest: str

    def to_dict(self) -> dict:
        return {
            "semesters": self.semesters,
            "settlement": self.settlement,
            "contracts": self.contracts,
            "npv": self.npv,
            "dual_role": self.dual_role,
            "final_ledger_digest": self.final_ledger_digest,
            "final_gradebook_digest": self.final_gradebook_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass
class SimulationResult:
    scenario: Scenario
    report: SemesterReport
    engine: SwapEngine
    scores: list[dict[str, dict[str, float]]] = field(default_factory=list)  # semester -> course -> student -> score
    allocations: list[dict[str, dict[str, str]]] = field(default_factory=list)  # pre-floor curve grades


def run(scenario: Scenario) -> SimulationResult:
    rng = np.random.Generator(np.random.PCG64(scenario.seed))
    engine = SwapEngine(params=scenario.params)
    pool = LightPool(scenario.matching.policy)
    students = {s.id: s for s in scenario.students}
    order_seq = 0
    all_scores = []
    allocations = []

    def settle_due(upto: float):
        due = sorted(
            (c for c in engine.active_contracts() if c.reversal_due_at <= upto),
            key=lambda c: (c.reversal_due_at, c.id),
        )
        for c in due:
            clock = max(c.reversal_due_at, engine.now)
            engine.reverse(c, clock, engine.reversal_floor_for(c, clock))

    for sem in range(scenario.semesters):
        t = scenario.semester_start(sem)
        settle_due(t)
        engine._tick(t)

        sem_scores: dict[str, dict[str, float]] = {}
        sem_alloc: dict[str, dict[str, str]] = {}
        graded: dict[str, dict[str, LetterGrade]] = {s.id: {} for s in scenario.students}
        for course in scenario.courses:
            draws = {}
            for s in scenario.students:
                x = float(rng.normal(s.ability_mean, s.ability_sigma))
                draws[s.id] = min(100.0, max(0.0, x))
            sheet = ScoreSheet(draws)
            curve = allocate_curve(sheet, course.quota)
            final = {
                sid: apply_floor(g, students[sid].meets_fixed_components) if course.tough else g
                for sid, g in curve.items()
            }
            key = course_key(course.id, sem)
            engine.post_grades(key, final, at=t)
            sem_scores[key] = draws
            sem_alloc[key] = {sid: g.label for sid, g in curve.items()}
            for sid, g in final.items():
                graded[sid][key] = g
        all_scores.append(sem_scores)
        allocations.append(sem_alloc)

        at_risk = at_risk_students(scenario, sem, graded)

        def submit(order: Order):
            try:
                pool.submit_order(order, engine, engine.gradebook)
            except Refusal as exc:
                engine.record(EventKind.ORDER_CANCELLED, {"order": order.id, "semester": sem, "reason": exc.reason})
                return
            engine.record(EventKind.ORDER_SUBMITTED, {"semester": sem, "order": order.to_dict()})

        for sid in at_risk:
            st = students[sid]
            pick = choose_bid(graded[sid], st.gpa_threshold)
            if pick is None:
                continue
            key, min_grade = pick
            if not engine.has_license(sid, Role.BUYER):
                engine.issue_license(sid, Role.BUYER, f"scholarship-letter:{sid}:{st.scholarship:.2f}")
            cap = fee_cap(st.scholarship)
            max_fee = min(_floor_cent(scenario.matching.buyer_fee_fraction * st.scholarship), _floor_cent(cap - 0.01))
            order_seq += 1
            submit(Order(f"O{order_seq:05d}", order_seq, Side.BID, sid, key, graded[sid][key], min_grade, max_fee, st.scholarship))

        risky = set(at_risk)
        demanded = {o.course for o in pool.orders() if o.side is Side.BID}
        for course in scenario.courses:
            key = course_key(course.id, sem)
            # sellers only come forward where some buyer is bidding
            if key not in demanded:
                continue
            for s in scenario.students:
                g = graded[s.id][key]
                if s.id in risky or g < scenario.matching.seller_min_grade:
                    continue
                if not engine.has_license(s.id, Role.SELLER):
                    engine.issue_license(s.id, Role.SELLER, f"held-grade:{s.id}:{g.label}@{key}")
                order_seq += 1
                submit(Order(f"O{order_seq:05d}", order_seq, Side.ASK, s.id, key, g, min_fee=scenario.matching.ask_min_fee))

        for m in pool.match_book():
            refs = {"bid": m.bid_id, "ask": m.ask_id, "semester": str(sem)}
            c = engine.propose(m.buyer, m.seller, m.course, m.fee, m.notional, scenario.due_time(students[m.buyer]), refs=refs)
            try:
                engine.validate(c)
                engine.execute(c, clock=t)
            except Refusal as exc:
                engine.cancel(c, reason=exc.reason)

        for o in sorted(pool.orders(), key=lambda o: o.submitted_at):
            pool.cancel_order(o.id)
            engine.record(EventKind.ORDER_CANCELLED, {"order": o.id, "semester": sem, "reason": "end-of-semester"})

    settle_due(math.inf)
    report = build_report(engine.ledger.events, scenario)
    return SimulationResult(scenario, report, engine, all_scores, allocations)


def at_risk_students(scenario: Scenario, sem: int, graded: Mapping[str, Mapping[str, LetterGrade]]) -> list[str]:
    out = []
    for s in scenario.students:
        if s.scholarship is None:
            continue
        if s.need_expiry is not None and sem >= s.need_expiry:
            continue
        mine = graded.get(s.id)
        if mine and gpa(mine.values()) < s.gpa_threshold:
            out.append(s.id)
    return out


def build_report(events: Sequence[LedgerEvent], scenario: Scenario) -> SemesterReport:
    """Derive the run report from a ledger and the scenario that produced it."""
    starts = [scenario.semester_start(s) for s in range(scenario.semesters)]
    end = scenario.semester_start(scenario.semesters)

    def bucket(t: float) -> int:
        return scenario.semesters if t >= end else bisect.bisect_right(starts, t) - 1

    sems = [
        {
            "index": s,
            "start": starts[s],
            "grade_distributions": {},
            "gpa": {},
            "at_risk": [],
            "orders": [],
            "order_refusals": [],
            "matches": [],
            "executed": [],
            "reversed": [],
            "cancelled_contracts": [],
            "certificates": [],
        }
        for s in range(scenario.semesters)
    ]
    settlement = {"reversed": []}
    contracts: dict[str, dict] = {}
    graded: list[dict[str, dict[str, LetterGrade]]] = [dict() for _ in range(scenario.semesters)]

    for ev in events:
        p = ev.payload
        kind = EventKind(ev.kind)
        if kind is EventKind.GRADES_POSTED:
            _, sem = split_course_key(p["course"])
            sems[sem]["grade_distributions"][p["course"]] = dict(sorted(Counter(p["grades"].values()).items()))
            for sid, g in p["grades"].items():
                graded[sem].setdefault(sid, {})[p["course"]] = LetterGrade.parse(g)
        elif kind is EventKind.ORDER_SUBMITTED:
            sems[p["semester"]]["orders"].append(p["order"])
        elif kind is EventKind.ORDER_CANCELLED and p.get("reason") != "end-of-semester":
            sems[p["semester"]]["order_refusals"].append({"order": p["order"], "reason": p["reason"]})
        elif kind is EventKind.CONTRACT_PROPOSED:
            sem = int(p["refs"]["semester"])
            contracts[p["id"]] = {**p, "semester": sem}
            sems[sem]["matches"].append({"bid": p["refs"]["bid"], "ask": p["refs"]["ask"], "course": p["course"], "fee": p["fee0"], "contract": p["id"]})
        elif kind is EventKind.CONTRACT_VALIDATED:
            contracts[p["contract"]]["state"] = ContractState.LICENSED.value
        elif kind is EventKind.CONTRACT_EXECUTED:
            c = contracts[p["contract"]]
            c["state"] = ContractState.ACTIVE.value
            c["initiated_at"] = p["initiated_at"]
            sems[bucket(ev.timestamp)]["executed"].append(p["contract"])
        elif kind is EventKind.CERTIFICATE_ISSUED:
            sems[bucket(ev.timestamp)]["certificates"].append({"recipient": p["recipient"], "contract": p["contract_id"]})
        elif kind is EventKind.CONTRACT_REVERSED:
            c = contracts[p["contract"]]
            c["state"] = ContractState.REVERSED.value
            c["reversal_payment"] = p["payment"]
            c["reversed_at"] = ev.timestamp
            b = bucket(ev.timestamp)
            (settlement if b == scenario.semesters else sems[b])["reversed"].append(p["contract"])
        elif kind is EventKind.CONTRACT_CANCELLED:
            c = contracts[p["contract"]]
            c["state"] = ContractState.CANCELLED.value
            c["cancel_reason"] = p.get("reason")
            sems[c["semester"]]["cancelled_contracts"].append(p["contract"])

    for sem, rec in enumerate(sems):
        rec["gpa"] = {sid: float(gpa(g.values())) for sid, g in sorted(graded[sem].items()) if g}
        rec["at_risk"] = at_risk_students(scenario, sem, graded[sem])

    per_student: dict[str, dict[str, float]] = {}
    per_contract = {}
    for cid, c in sorted(contracts.items()):
        if c.get("initiated_at") is None:
            continue
        held_until = c.get("reversed_at", c["reversal_due_at"])
        econ = TradeEconomics(c["fee0"], c["notional"], scenario.G0, scenario.F0, held_until - c["initiated_at"])
        seller_npv, buyer_npv = trade_npv(econ, scenario.params)
        per_contract[cid] = {"seller": c["seller"], "seller_npv": seller_npv, "buyer": c["buyer"], "buyer_npv": buyer_npv, "T": econ.T}
        for who, key, v in ((c["seller"], "as_seller", seller_npv), (c["buyer"], "as_buyer", buyer_npv)):
            acc = per_student.setdefault(who, {"as_seller": 0.0, "as_buyer": 0.0})
            acc[key] += v

    dual = []
    active_spans = [
        (c["buyer"], c["seller"], c["course"], c["initiated_at"], c.get("reversed_at", math.inf), cid)
        for cid, c in sorted(contracts.items())
        if c.get("initiated_at") is not None
    ]
    for a in active_spans:
        for b in active_spans:
            # a student buying in one course while selling in another, with overlapping swaps
            if a[0] == b[1] and a[2] != b[2] and a[3] < b[4] and b[3] < a[4]:
                dual.append({"student": a[0], "buying": a[5], "selling": b[5]})

    gradebook_records: dict[tuple[str, str], str] = {}
    for ev in events:
        if ev.kind == EventKind.GRADES_POSTED.value:
            for sid, g in ev.payload["grades"].items():
                gradebook_records[(sid, ev.payload["course"])] = g
    for cid, c in contracts.items():
        if c["state"] == ContractState.ACTIVE.value:
            gradebook_records[(c["buyer"], c["course"])] = c["seller_grade"]
            gradebook_records[(c["seller"], c["course"])] = c["buyer_grade"]
    gb_text = "".join(f"{s},{c},{g}\n" for (s, c), g in sorted(gradebook_records.items()))

    return SemesterReport(
        semesters=sems,
        settlement=settlement,
        contracts=contracts,
        npv={"per_contract": per_contract, "per_student": dict(sorted(per_student.items()))},
        dual_role=dual,
        final_ledger_digest=events[-1].chain if events else "0" * 64,
        final_gradebook_digest=hashlib.sha256(gb_text.encode()).hexdigest(),
    )


def emit_curves(params: TimeValueParams, horizon: float, steps: int, G0: float = 100.0, F0: float = 10.0, M0: float = 100.0):
    """Curve samples ``(t, grade_value, friendship_value, money_value)``."""
    return sample_curves(G0, F0, M0, params, horizon, steps)


def curves_csv(rows) -> str:
    lines = ["t,grade_value,friendship_value,money_value"]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_outputs(result: SimulationResult, outdir: Path | str, figures: bool = True) -> dict[str, Path]:
    """Write report JSON, ledger, per-semester CSVs, curve CSV and figures."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["report"] = out / "report.json"
    paths["report"].write_text(result.report.to_json())
    paths["ledger"] = out / "ledger.jsonl"
    result.engine.ledger.write(paths["ledger"])
    for sem, courses in enumerate(result.scores):
        p = out / f"semester_{sem}.csv"
        lines = ["student_id,course_id,score,curve_grade,final_grade"]
        for key in sorted(courses):
            posted = next(
                ev.payload["grades"] for ev in result.engine.ledger.events
                if ev.kind == EventKind.GRADES_POSTED.value and ev.payload["course"] == key
            )
            for sid in sorted(courses[key]):
                lines.append(f"{sid},{key},{courses[key][sid]!r},{result.allocations[sem][key][sid]},{posted[sid]}")
        p.write_text("\n".join(lines) + "\n")
        paths[f"semester_{sem}"] = p
    horizon = max(result.scenario.semester_start(result.scenario.semesters), 1.0)
    rows = emit_curves(result.scenario.params, horizon * 4, 101, result.scenario.G0, result.scenario.F0, result.scenario.M0)
    paths["curves"] = out / "curves.csv"
    paths["curves"].write_text(curves_csv(rows))
    if figures:
        from . import plotting

        paths["fig_curves"] = plotting.plot_curves(rows, out / "curves.png")
        paths["fig_grades"] = plotting.plot_grade_distributions(result.report, out / "grade_distributions.png")
        paths["fig_npv"] = plotting.plot_npv(result.report, out / "npv.png")
    return paths
