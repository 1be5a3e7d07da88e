import pytest

from gradeswap.assessment import LetterGrade
from gradeswap.swap_engine import Gradebook, Role, SwapEngine
from gradeswap.valuation import TimeValueParams


@pytest.fixture
def gradebook():
    return Gradebook(
        {
            ("ann", "FIN101"): LetterGrade.A,
            ("bob", "FIN101"): LetterGrade.C,
            ("cat", "FIN101"): LetterGrade.B_PLUS,
            ("dan", "FIN101"): LetterGrade.F,
            ("ann", "ECO200"): LetterGrade.B,
            ("bob", "ECO200"): LetterGrade.A_MINUS,
        }
    )


@pytest.fixture
def engine(gradebook):
    eng = SwapEngine(gradebook, TimeValueParams())
    eng.issue_license("bob", Role.BUYER, "scholarship-letter:bob")
    eng.issue_license("dan", Role.BUYER, "scholarship-letter:dan")
    eng.issue_license("ann", Role.SELLER, "held-grade:A@FIN101")
    eng.issue_license("cat", Role.SELLER, "held-grade:B+@FIN101")
    return eng
