"""Grading mathematics.

Curve allocation, the volatility-driven exam weights, grade floors, the
zero-baseline progress metric and the two-phase score combination.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy import integrate

from .errors import InvalidInput, ParseError


class LetterGrade(enum.Enum):
    """Letter grades, ordered by ``rank`` (F lowest, A+ highest)."""

    A_PLUS = ("A+", 10, Fraction(43, 10))
    A = ("A", 9, Fraction(4))
    A_MINUS = ("A-", 8, Fraction(37, 10))
    B_PLUS = ("B+", 7, Fraction(33, 10))
    B = ("B", 6, Fraction(3))
    B_MINUS = ("B-", 5, Fraction(27, 10))
    C_PLUS = ("C+", 4, Fraction(23, 10))
    C = ("C", 3, Fraction(2))
    C_MINUS = ("C-", 2, Fraction(17, 10))
    D = ("D", 1, Fraction(1))
    F = ("F", 0, Fraction(0))

    def __init__(self, label, rank, gpa_points):
        self.label = label
        self.rank = rank
        self.gpa_points = gpa_points

    def __lt__(self, other):
        if not isinstance(other, LetterGrade):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other):
        if not isinstance(other, LetterGrade):
            return NotImplemented
        return self.rank <= other.rank

    def __gt__(self, other):
        if not isinstance(other, LetterGrade):
            return NotImplemented
        return self.rank > other.rank

    def __ge__(self, other):
        if not isinstance(other, LetterGrade):
            return NotImplemented
        return self.rank >= other.rank

    def __str__(self):
        return self.label

    @classmethod
    def parse(cls, text) -> "LetterGrade":
        if isinstance(text, LetterGrade):
            return text
        key = str(text).strip().replace("−", "-").replace("–", "-").upper()
        for grade in cls:
            if grade.label == key:
                return grade
        raise InvalidInput(f"unknown letter grade {text!r}")

    @classmethod
    def by_rank(cls, rank: int) -> "LetterGrade":
        return _BY_RANK[rank]


_BY_RANK = {g.rank: g for g in LetterGrade}

#: Grades from highest to lowest.
LADDER = tuple(sorted(LetterGrade, key=lambda g: -g.rank))


@dataclass(frozen=True)
class ScoreSheet:
    """Raw scores in [0, 100] for one assessment component."""

    entries: Mapping[str, float]
    component: str = "final"

    def __post_init__(self):
        clean = {}
        for sid, score in self.entries.items():
            score = float(score)
            if not (0.0 <= score <= 100.0) or math.isnan(score):
                raise InvalidInput(f"score for {sid!r} out of [0,100]: {score}")
            clean[str(sid)] = score
        object.__setattr__(self, "entries", clean)

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, float]], component="final"):
        entries = {}
        for sid, score in pairs:
            if sid in entries:
                raise InvalidInput(f"duplicate student id {sid!r}")
            entries[sid] = score
        return cls(entries, component)

    @classmethod
    def read_csv(cls, path, component="final") -> "ScoreSheet":
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or not {"student_id", "score"} <= set(reader.fieldnames):
                    raise ParseError(f"{path}: expected header student_id,score")
                pairs = []
                for row in reader:
                    try:
                        pairs.append((row["student_id"].strip(), float(row["score"])))
                    except (TypeError, ValueError) as exc:
                        raise ParseError(f"{path}: bad row {row}") from exc
        except UnicodeDecodeError as exc:
            raise ParseError(f"{path}: not text") from exc
        return cls.from_pairs(pairs, component)


@dataclass(frozen=True)
class GradeQuota:
    """Target share of the class for each grade band, highest band first."""

    buckets: tuple[tuple[LetterGrade, Fraction], ...]

    def __post_init__(self):
        if not self.buckets:
            raise InvalidInput("quota needs at least one bucket")
        clean = []
        for band, frac in self.buckets:
            band = LetterGrade.parse(band)
            frac = Fraction(frac)
            if frac < 0:
                raise InvalidInput(f"negative quota fraction for {band}")
            clean.append((band, frac))
        ranks = [b.rank for b, _ in clean]
        if any(a <= b for a, b in zip(ranks, ranks[1:])):
            raise InvalidInput("quota bands must be strictly ordered highest to lowest")
        if sum(f for _, f in clean) != 1:
            raise InvalidInput("quota fractions must sum to exactly 1")
        object.__setattr__(self, "buckets", tuple(clean))

    @classmethod
    def from_percentages(cls, spec: Mapping[str, object] | Sequence[tuple[str, object]]):
        """Build from ``{"A": 20, "B": 30, ...}``; values are percents."""
        items = spec.items() if isinstance(spec, Mapping) else spec
        return cls(tuple((LetterGrade.parse(k), Fraction(str(v)) / 100) for k, v in items))

    @classmethod
    def parse(cls, text: str) -> "GradeQuota":
        """Parse ``"A:20,B:30,C:30,D:20"`` (percent values)."""
        try:
            pairs = [part.split(":") for part in text.split(",") if part.strip()]
            return cls.from_percentages([(k.strip(), v.strip()) for k, v in pairs])
        except ValueError as exc:
            if isinstance(exc, InvalidInput):
                raise
            raise InvalidInput(f"malformed quota {text!r}") from exc

    @property
    def bands(self):
        return tuple(b for b, _ in self.buckets)

    def to_percentages(self) -> dict[str, float]:
        return {b.label: float(f * 100) for b, f in self.buckets}


#: The five-band curve used as the running example: A top 20%, B next 30%,
#: C next 30%, D/F the remaining 20%.
FIVE_BAND_QUOTA = GradeQuota.from_percentages({"A": 20, "B": 30, "C": 30, "D": 20})


@dataclass(frozen=True)
class NormalSpec:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInput(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class WeightScheme:
    """Component weights in percent. Midterm and final always share 40."""

    volatility: float
    midterm: float
    final: float
    fixed: Mapping[str, float] = field(
        default_factory=lambda: {"attendance": 20.0, "assignments": 20.0, "participation": 20.0}
    )

    def __post_init__(self):
        if not 0 <= self.midterm <= 15:
            raise InvalidInput("midterm weight outside [0,15]")
        if self.midterm + self.final != 40:
            raise InvalidInput("midterm + final must equal 40")
        if not math.isclose(self.midterm + self.final + sum(self.fixed.values()), 100.0):
            raise InvalidInput("weights must sum to 100")

    @classmethod
    def from_volatility(cls, volatility: float, **kwargs) -> "WeightScheme":
        return cls(volatility, midterm_weight(volatility), final_weight(volatility), **kwargs)


def structural_constant() -> float:
    """The constant inside the midterm weight payoff, evaluated term by term."""
    numerator = 10 ** math.sqrt(math.log(math.exp(4)))
    denominator = math.sqrt(math.log(math.exp(25)))
    return numerator / denominator


def _check_volatility(x):
    if not x >= 0 or math.isinf(x):
        raise InvalidInput(f"volatility must be a finite value >= 0, got {x}")


def midterm_weight(volatility: float) -> float:
    """Midterm weight in percent: ``min(15, max(0, c - X))`` with c = 20."""
    _check_volatility(volatility)
    return min(15.0, max(0.0, structural_constant() - volatility))


def final_weight(volatility: float) -> float:
    return 40.0 - midterm_weight(volatility)


def _population_std(values: Sequence[float]) -> float:
    n = len(values)
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def volatility(scores: ScoreSheet) -> float:
    """Population standard deviation (divide by N) of a score sheet."""
    if len(scores) == 0:
        raise InvalidInput("empty score sheet")
    return _population_std(list(scores.entries.values()))


def entity_weight(series: Sequence[float]) -> float:
    """Per-entity midterm weight driven by the volatility of its own series,
    for instance a managed portfolio's P&L per period."""
    values = [float(v) for v in series]
    if not values:
        raise InvalidInput("empty series")
    return midterm_weight(_population_std(values))


def bucket_counts(n: int, quota: GradeQuota) -> list[int]:
    """Integer bucket sizes by largest remainder; remainder ties go to the
    higher grade."""
    exact = [frac * n for _, frac in quota.buckets]
    counts = [math.floor(q) for q in exact]
    spare = n - sum(counts)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:spare]:
        counts[i] += 1
    return counts


def allocate_curve(scores: ScoreSheet, quota: GradeQuota) -> dict[str, LetterGrade]:
    """Assign letter grades on a curve.

    Students are ranked by score; buckets are filled top-down. A tie group
    cut by a bucket boundary is promoted whole into the higher bucket and
    the overflow is taken out of the following buckets.
    """
    if len(scores) == 0:
        raise InvalidInput("empty score sheet")
    ranked = sorted(scores.entries.items(), key=lambda kv: (-kv[1], kv[0]))
    n = len(ranked)
    counts = bucket_counts(n, quota)
    grades = {}
    pos = 0
    overflow = 0
    for (band, _), count in zip(quota.buckets, counts):
        take = count - overflow
        if take <= 0:
            overflow = -take
            continue
        end = min(pos + take, n)
        while 0 < end < n and ranked[end][1] == ranked[end - 1][1]:
            end += 1
        overflow = end - (pos + take)
        for sid, _ in ranked[pos:end]:
            grades[sid] = band
        pos = end
    # Counts sum to n and overflow only shrinks later buckets, so pos == n here.
    assert pos == n
    return grades


def normal_pdf(x: float, spec: NormalSpec = NormalSpec()) -> float:
    var = spec.sigma**2
    return math.exp(-((x - spec.mu) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def _default_bands(k: int) -> tuple[LetterGrade, ...]:
    if k == 1:
        return (LetterGrade.A,)
    if k <= 5:
        return (LetterGrade.A, LetterGrade.B, LetterGrade.C, LetterGrade.D)[: k - 1] + (LetterGrade.F,)
    if k > len(LADDER):
        raise InvalidInput(f"at most {len(LADDER)} buckets")
    step = (len(LADDER) - 1) / (k - 1)
    return tuple(LADDER[round(i * step)] for i in range(k))


def quotas_from_boundaries(
    n: int | None = None,
    boundaries: Sequence[float] = (),
    bands: Sequence[LetterGrade] | None = None,
    uniform: bool = False,
) -> GradeQuota:
    """Quota whose shares are standard-normal masses between z-score cut points.

    ``n`` is the bucket count. With ``uniform=True`` every bucket gets 1/n
    and ``boundaries`` is ignored; otherwise ``n`` defaults to
    ``len(boundaries) + 1``. The highest band receives the mass above the
    top boundary.
    """
    if uniform:
        if not n or n < 1:
            raise InvalidInput("uniform mode needs a positive bucket count")
        bands = tuple(bands) if bands else _default_bands(n)
        if len(bands) != n:
            raise InvalidInput("need one band per bucket")
        return GradeQuota(tuple((b, Fraction(1, n)) for b in bands))

    cuts = [float(b) for b in boundaries]
    if any(not math.isfinite(c) for c in cuts):
        raise InvalidInput("boundaries must be finite")
    if any(a >= b for a, b in zip(cuts, cuts[1:])):
        raise InvalidInput("boundaries must be strictly increasing")
    k = len(cuts) + 1
    if n is not None and n != k:
        raise InvalidInput(f"{len(cuts)} boundaries give {k} buckets, not {n}")
    bands = tuple(bands) if bands else _default_bands(k)
    if len(bands) != k:
        raise InvalidInput("need one band per bucket")

    edges = [-math.inf, *cuts, math.inf]
    masses = []
    for lo, hi in zip(edges, edges[1:]):
        mass, _ = integrate.quad(normal_pdf, lo, hi, epsabs=1e-12, epsrel=1e-12)
        masses.append(mass)
    # lowest z first; bands run highest first
    masses.reverse()
    fracs = [Fraction(m).limit_denominator(10**15) for m in masses[:-1]]
    fracs.append(1 - sum(fracs))
    return GradeQuota(tuple(zip(bands, fracs)))


def apply_floor(base: LetterGrade, floor_components_met: bool) -> LetterGrade:
    """Raise ``base`` to C+ when attendance, assignments and participation are met."""
    if floor_components_met and base < LetterGrade.C_PLUS:
        return LetterGrade.C_PLUS
    return base


def progress_ratio(start: float, end: float) -> float:
    """Percentage change; any advance from a zero start is ``+inf``."""
    if start < 0 or end < 0:
        raise InvalidInput("progress inputs must be >= 0")
    if start > 0:
        return 100.0 * (end - start) / start
    return math.inf if end > 0 else 0.0


def ttl_combine(phase1: float, phase2: float, w1: float) -> float:
    """Blend the written phase and the oral phase; ``w1`` is phase 1's percent."""
    for name, v in (("phase1", phase1), ("phase2", phase2), ("w1", w1)):
        if not 0 <= v <= 100:
            raise InvalidInput(f"{name} must lie in [0,100], got {v}")
    return (w1 * phase1 + (100 - w1) * phase2) / 100


def gpa(grades: Iterable[LetterGrade]) -> Fraction:
    grades = list(grades)
    if not grades:
        raise InvalidInput("no grades")
    return sum((g.gpa_points for g in grades), Fraction(0)) / len(grades)


def write_grades_csv(path: Path | str, grades: Mapping[str, LetterGrade], scores: ScoreSheet | None = None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "score", "grade"] if scores else ["student_id", "grade"])
        for sid in sorted(grades, key=lambda s: (-(scores.entries[s]) if scores else 0, s)):
            if scores:
                w.writerow([sid, scores.entries[sid], grades[sid].label])
            else:
                w.writerow([sid, grades[sid].label])
