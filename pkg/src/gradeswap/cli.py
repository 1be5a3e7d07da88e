"""Command-line entry point.

Exit status: 0 on success, 1 when a request is refused or fails validation,
2 on I/O or parse errors (argparse also uses 2 for bad flags).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from collections import Counter
from pathlib import Path

from . import assessment, valuation
from .errors import InvalidInput, ParseError, Refusal
from .ledger import read_ledger, verify_ledger
from .light_pool import LightPool, Order, Side, read_orders
from .scenario import curves_csv, emit_curves, load_scenario, run, write_outputs
from .swap_engine import Gradebook

OUT_DIR_ENV = "GRADESWAP_OUT_DIR"


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_allocate(args):
    scores = assessment.ScoreSheet.read_csv(args.scores)
    quota = assessment.GradeQuota.parse(args.quota) if args.quota else assessment.FIVE_BAND_QUOTA
    grades = assessment.allocate_curve(scores, quota)
    counts = Counter(g.label for g in grades.values())
    ordered = sorted(grades, key=lambda s: (-scores.entries[s], s))
    if args.format == "json":
        text = json.dumps(
            {
                "grades": {s: grades[s].label for s in ordered},
                "counts": {b.label: counts.get(b.label, 0) for b in quota.bands},
            },
            indent=2,
        ) + "\n"
    else:
        text = _csv_text(["student_id", "score", "grade"], [(s, scores.entries[s], grades[s].label) for s in ordered])
    _emit(text, args.out)
    summary = " ".join(f"{b.label}={counts.get(b.label, 0)}" for b in quota.bands)
    print(f"counts: {summary}", file=sys.stderr)


def cmd_weights(args):
    if args.volatility is not None:
        x = args.volatility
    else:
        x = assessment.volatility(assessment.ScoreSheet.read_csv(args.scores))
    m, f = assessment.midterm_weight(x), assessment.final_weight(x)
    if args.format == "json":
        _emit(json.dumps({"X": x, "M": m, "F": f}) + "\n", args.out)
    else:
        _emit(f"X={x:g}\nM={m:g}\nF={f:g}\n", args.out)


def _params(args) -> valuation.TimeValueParams:
    return valuation.TimeValueParams(lam=args.lam, g=args.g, r=args.r, rho=args.rho, u=args.u)


def cmd_npv(args):
    econ = valuation.TradeEconomics(args.fee0, args.notional, args.G0, args.F0, args.T)
    params = _params(args)
    seller, buyer = valuation.trade_npv(econ, params)
    floor = valuation.reversal_floor(econ.fee0, params.r, econ.T)
    if args.format == "json":
        _emit(json.dumps({"seller_npv": seller, "buyer_npv": buyer, "reversal_floor": floor}) + "\n", args.out)
    else:
        _emit(_csv_text(["seller_npv", "buyer_npv", "reversal_floor"], [(repr(seller), repr(buyer), repr(floor))]), args.out)


def _read_licenses(path):
    out = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"holder", "role"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: expected header holder,role[,evidence]")
        for row in reader:
            if row.get("evidence", "x") == "":
                continue
            out.add((row["holder"].strip(), row["role"].strip().lower()))
    return out


class _DeclaredGrades:
    """Gradebook stand-in that trusts each order's declared grade."""

    def __init__(self, orders):
        self._g = {(o.student, o.course): o.current_grade for o in orders}

    def get(self, student, course):
        return self._g.get((student, course))


def cmd_book(args):
    orders = read_orders(args.orders)
    gradebook = Gradebook.read_csv(args.gradebook) if args.gradebook else _DeclaredGrades(orders)
    if args.licenses:
        licenses = _read_licenses(args.licenses)
    else:
        licenses = {(o.student, "buyer" if o.side is Side.BID else "seller") for o in orders}
    pool = LightPool(args.policy)
    refusals = []
    for o in sorted(orders, key=lambda o: (o.submitted_at, o.id)):
        try:
            pool.submit_order(o, licenses, gradebook)
        except Refusal as exc:
            refusals.append({"order": o.id, "reason": exc.reason})
    resting = pool.snapshot()
    proposals = pool.match_book()
    after = pool.snapshot()
    doc = {
        "refusals": refusals,
        "snapshot_before_matching": {"bids": resting.bids, "asks": resting.asks},
        "proposals": [p.__dict__ for p in proposals],
        "snapshot": {"bids": after.bids, "asks": after.asks},
    }
    if args.format == "json":
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    else:
        text = _csv_text(["bid_id", "ask_id", "course", "fee", "buyer", "seller"], [(p.bid_id, p.ask_id, p.course, f"{p.fee:.2f}", p.buyer, p.seller) for p in proposals])
    _emit(text, args.out)
    for r in refusals:
        print(f"refused {r['order']}: {r['reason']}", file=sys.stderr)


def cmd_simulate(args):
    scenario = load_scenario(args.scenario, seed=args.seed)
    result = run(scenario)
    outdir = args.out or os.environ.get(OUT_DIR_ENV)
    if outdir:
        paths = write_outputs(result, outdir, figures=not args.no_figures)
        for name, p in sorted(paths.items()):
            print(f"{name}: {p}", file=sys.stderr)
    else:
        sys.stdout.write(result.report.to_json())
    print(f"report_digest={result.report.digest()}")
    print(f"ledger_digest={result.report.final_ledger_digest}")


def cmd_verify_ledger(args):
    events = read_ledger(args.ledger)
    bad = verify_ledger(events)
    if bad is None:
        print(f"ok {len(events)} events")
        return 0
    print(f"tampered at sequence {bad}")
    return 1


def cmd_curves(args):
    params = _params(args)
    G0, F0, M0 = args.G0, args.F0, args.M0
    if args.scenario:
        sc = load_scenario(args.scenario)
        params, G0, F0, M0 = sc.params, sc.G0, sc.F0, sc.M0
    rows = emit_curves(params, args.horizon, args.steps, G0, F0, M0)
    if args.format == "json":
        text = json.dumps([dict(zip(("t", "grade_value", "friendship_value", "money_value"), r)) for r in rows]) + "\n"
    else:
        text = curves_csv(rows)
    _emit(text, args.out)
    if args.plot:
        from .plotting import plot_curves

        plot_curves(rows, args.plot)


def _add_rates(p):
    d = valuation.TimeValueParams()
    p.add_argument("--lam", type=float, default=d.lam, help="grade decay rate per year")
    p.add_argument("--g", type=float, default=d.g, help="friendship growth rate per year")
    p.add_argument("--r", type=float, default=d.r, help="money growth rate per year")
    p.add_argument("--rho", type=float, default=d.rho, help="discount rate per year")
    p.add_argument("--u", type=float, default=d.u, help="grade utilization factor in [0,1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradeswap", description="Grade-swap market toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt=True):
        p.add_argument("--out", help="output path (default: stdout)")
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("allocate", help="grade a score sheet on a curve")
    p.add_argument("--scores", required=True, help="CSV with student_id,score")
    p.add_argument("--quota", help='percent bands, e.g. "A:20,B:30,C:30,D:20"')
    common(p)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("weights", help="midterm and final weights from score volatility")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--volatility", type=float)
    g.add_argument("--scores")
    common(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("npv", help="seller and buyer NPV of one swap")
    e = valuation.TradeEconomics()
    p.add_argument("--fee0", type=float, default=e.fee0)
    p.add_argument("--notional", type=float, default=e.notional)
    p.add_argument("--G0", type=float, default=e.G0)
    p.add_argument("--F0", type=float, default=e.F0)
    p.add_argument("--T", type=float, default=e.T)
    _add_rates(p)
    common(p)
    p.set_defaults(func=cmd_npv)

    p = sub.add_parser("book", help="replay an order stream through the light pool")
    p.add_argument("--orders", required=True, help="CSV or JSON-lines order stream")
    p.add_argument("--gradebook", help="CSV student_id,course_id,grade (default: trust declared grades)")
    p.add_argument("--licenses", help="CSV holder,role,evidence (default: every submitter licensed)")
    p.add_argument("--policy", choices=("midpoint", "at-ask"), default="midpoint")
    common(p)
    p.set_defaults(func=cmd_book)

    p = sub.add_parser("simulate", help="run a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", help=f"output directory (default: ${OUT_DIR_ENV}, else report to stdout)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-ledger", help="check a ledger file's hash chain")
    p.add_argument("--ledger", required=True)
    p.set_defaults(func=cmd_verify_ledger)

    p = sub.add_parser("curves", help="sample the grade, friendship and money curves")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--steps", type=int, default=101)
    p.add_argument("--G0", type=float, default=100.0)
    p.add_argument("--F0", type=float, default=10.0)
    p.add_argument("--M0", type=float, default=100.0)
    p.add_argument("--scenario", help="take rates and initial values from a scenario file")
    p.add_argument("--plot", help="also render a PNG here")
    _add_rates(p)
    common(p)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        status = args.func(args)
    except (InvalidInput, Refusal) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, OSError, UnicodeDecodeError, csv.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
