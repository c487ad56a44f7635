"""Command-line front end: ``tradeoff``, ``bounds``, ``simulate`` and ``verify``.

CSV output writes infinite values as ``inf``; JSON writes non-finite numbers
as the strings ``"inf"``, ``"-inf"`` and ``"nan"``.  Finite floats use the
shortest decimal that round-trips.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict
from typing import Any, Sequence

import numpy as np

from . import bounds, sim, verify
from .centralized import sample_tradeoff_curve, stable_gain_grid
from .core import (
    CostWeights,
    DlqgError,
    InvalidArgumentError,
    InvariantViolationError,
    Regime,
    SystemParams,
    classify_regime,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

TRADEOFF_HEADER = ["k", "P", "D"]
TRADEOFF_EMPIRICAL = ["P_hat", "D_hat"]
BOUNDS_HEADER = ["P1", "P2", "D_lower", "source_case"]
BOUNDS_LEMMA = ["D_lemma"]


class UsageError(Exception):
    pass


def fmt(x: Any) -> str:
    """Shortest round-trip text for floats; ``inf``/``-inf``/``nan`` for non-finite ones."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else fmt(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if hasattr(x, "value") and isinstance(getattr(x, "value"), str):
        return x.value
    return x


def render(rows: list[dict], header: list[str], form: str) -> str:
    if form == "json":
        return json.dumps([jsonable({h: r[h] for h in header}) for r in rows], indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r[h]) for h in header])
    return buf.getvalue()


def emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if n <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _check_a(a: float) -> None:
    if classify_regime(a) is Regime.OUT_OF_SCOPE:
        raise UsageError(f"|a|={abs(a)} is outside the supported range |a| <= 2.5")


def _noise_pair(args) -> tuple[float, float]:
    s1 = args.sigma_v1_sq if args.sigma_v1_sq is not None else args.sigma_v_sq
    s2 = args.sigma_v2_sq if args.sigma_v2_sq is not None else s1
    if s1 is None:
        raise UsageError("give --sigma-v1-sq (and optionally --sigma-v2-sq) or --sigma-v-sq")
    return s1, s2


def cmd_tradeoff(args) -> int:
    _check_a(args.a)
    s1, s2 = _noise_pair(args)
    s = s1 if args.controller == 1 else s2
    ks = stable_gain_grid(args.a, args.k_points)
    rows = [{"k": p.gain, "P": p.power, "D": p.distortion} for p in sample_tradeoff_curve(args.a, s, ks)]
    header = list(TRADEOFF_HEADER)
    if args.empirical:
        params = SystemParams(args.a, s1, s2)
        pts = sim.estimate_tradeoff_empirical(params, args.controller, ks, args.horizon, args.seed, args.burn_in)
        for row, pt in zip(rows, pts):
            row["P_hat"], row["D_hat"] = pt.p_hat, pt.d_hat
        header += TRADEOFF_EMPIRICAL
    emit(render(rows, header, args.format), args.out)
    return EXIT_OK


def _power_values(args) -> tuple[list[float], list[float]]:
    if args.p1 is not None or args.p2 is not None:
        p1 = args.p1 if args.p1 is not None else args.p2
        p2 = args.p2 if args.p2 is not None else p1
    else:
        if not 0 < args.p_min < args.p_max:
            raise UsageError("need 0 < --p-min < --p-max")
        grid = [float(v) for v in np.geomspace(args.p_min, args.p_max, args.p_points)]
        p1 = p2 = grid
    if any(v < 0 or math.isnan(v) for v in p1 + p2):
        raise UsageError("powers must be nonnegative")
    return p1, p2


def cmd_bounds(args) -> int:
    _check_a(args.a)
    s1, s2 = _noise_pair(args)
    params = SystemParams(args.a, s1, s2)
    p1s, p2s = _power_values(args)
    header = BOUNDS_HEADER + (BOUNDS_LEMMA if args.lemma else [])
    rows = []
    for p1 in p1s:
        for p2 in p2s:
            # Bounds are computed in the sorted labeling; report in the caller's.
            q1, q2 = (p2, p1) if params.swapped else (p1, p2)
            bd = bounds.piecewise_lower(params, q1, q2)
            row = {"P1": p1, "P2": p2, "D_lower": bd.value, "source_case": bd.source}
            if args.lemma:
                row["D_lemma"] = bounds.best_lemma_distortion(params, q1, q2, args.k_max).value
            rows.append(row)
    emit(render(rows, header, args.format), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    _check_a(args.a)
    s1, s2 = _noise_pair(args)
    params = SystemParams(args.a, s1, s2)
    if args.strategy == "zero":
        strat = sim.StrategySpec.zero()
    else:
        strat = sim.StrategySpec.single_kalman(args.controller, args.gain)
    res = sim.simulate(params, strat, args.horizon, args.burn_in, args.seed)
    record = {
        "a": args.a,
        "sigma_v1_sq": s1,
        "sigma_v2_sq": s2,
        "strategy": args.strategy,
        "controller": args.controller,
        "gain": args.gain,
        "horizon": args.horizon,
        **asdict(res),
    }
    emit(json.dumps(jsonable(record)) + "\n", args.out)
    return EXIT_OK


def _verify_grid(args) -> verify.SweepGrid:
    if args.default_grid:
        grid = verify.default_grid()
    else:
        if args.a_list is None or args.sigma_list is None:
            raise UsageError("give --default-grid or both --a-list and --sigma-list")
        for a in args.a_list:
            _check_a(a)
        sig = sorted(args.sigma_list)
        pairs = tuple((x, y) for i, x in enumerate(sig) for y in sig[i:])
        r_vals = args.r_list or [1.0]
        weights = tuple(CostWeights(args.q, r1, r2) for r1 in r_vals for r2 in r_vals)
        grid = verify.SweepGrid(tuple(args.a_list), pairs, weights)
    regime = Regime(args.regime) if args.regime else None
    grid = grid.restricted(regime)
    if not grid.a_values:
        raise UsageError(f"no grid values in regime {args.regime}")
    return grid


def cmd_verify(args) -> int:
    grid = _verify_grid(args)
    cfg = verify.RatioConfig(use_lemma=args.lemma, lemma_search=bounds.LemmaSearch(k_max=args.k_max))
    report = verify.sweep(grid, cfg)
    soundness = None
    if not args.skip_soundness:
        soundness = verify.check_soundness(
            grid, verify.SoundnessConfig(lemma_samples=args.lemma_samples, lemma_search=cfg.lemma_search)
        )
    ok = report.passed and (soundness is None or soundness.passed)
    for line in verify.summarize(report):
        print(line, file=sys.stderr)
    if soundness is not None:
        print(f"soundness: {len(soundness.violations)} violations over {soundness.checked}", file=sys.stderr)
        for v in soundness.violations[:20]:
            print(f"VIOLATION {v.check} a={v.a!r} s1={v.sigma_v1_sq!r} s2={v.sigma_v2_sq!r}: {v.detail}", file=sys.stderr)
    if not report.passed:
        for c in report.checks:
            if not c.passed and c.worst_index is not None:
                print(f"worst sample: {report.records[c.worst_index]}", file=sys.stderr)
    payload = {
        "passed": ok,
        "checks": [asdict(c) for c in report.checks],
        "regime_max": report.regime_max,
        "excluded": report.excluded,
        "soundness": None
        if soundness is None
        else {"violations": [asdict(v) for v in soundness.violations], "checked": soundness.checked},
        "records": [asdict(r) for r in report.records] if args.records else None,
    }
    emit(json.dumps(jsonable(payload), indent=1) + "\n", args.out)
    return EXIT_OK if ok else EXIT_FAIL


def _add_system(p: argparse.ArgumentParser, a_required: bool = True) -> None:
    p.add_argument("--a", type=float, required=a_required, help="plant eigenvalue, |a| <= 2.5")
    p.add_argument("--sigma-v1-sq", type=float, help="observation noise variance of controller 1")
    p.add_argument("--sigma-v2-sq", type=float, help="observation noise variance of controller 2")
    p.add_argument("--sigma-v-sq", type=float, help="shared noise variance when only one is given")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--r1", type=float, default=1.0)
    p.add_argument("--r2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=_positive_int, default=1_000_000)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None, help="output path (stdout when omitted)")
    p.add_argument("--k-max", type=_positive_int, default=64, help="largest slicing index searched")
    p.add_argument("--lemma", action="store_true", help="also compute slicing-functional bounds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlqg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tradeoff", help="closed-form power/distortion curve of a single Kalman controller")
    _add_system(p)
    _add_common(p)
    p.add_argument("--k-points", type=_positive_int, default=200)
    p.add_argument("--controller", type=int, choices=(1, 2), default=1)
    p.add_argument("--empirical", action="store_true", help="add simulated P_hat, D_hat columns")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("bounds", help="piecewise lower bounds on distortion over a power grid")
    _add_system(p)
    _add_common(p)
    p.add_argument("--p1", type=_float_list, default=None, help="comma-separated powers of controller 1")
    p.add_argument("--p2", type=_float_list, default=None, help="comma-separated powers of controller 2")
    p.add_argument("--p-min", type=float, default=1e-4)
    p.add_argument("--p-max", type=float, default=10.0)
    p.add_argument("--p-points", type=_positive_int, default=9)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", help="Monte Carlo run of one strategy (JSON line)")
    _add_system(p)
    _add_common(p)
    p.add_argument("--strategy", choices=("zero", "kalman"), default="kalman")
    p.add_argument("--controller", type=int, choices=(1, 2), default=1)
    p.add_argument("--gain", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate, format="json")

    p = sub.add_parser("verify", help="ratio sweep and soundness checks")
    _add_common(p)
    p.add_argument("--default-grid", action="store_true")
    p.add_argument("--a-list", type=_float_list, default=None)
    p.add_argument("--sigma-list", type=_float_list, default=None)
    p.add_argument("--r-list", type=_float_list, default=None)
    p.add_argument("--regime", choices=[r.value for r in Regime if r is not Regime.OUT_OF_SCOPE], default=None)
    p.add_argument("--skip-soundness", action="store_true")
    p.add_argument("--lemma-samples", type=int, default=20)
    p.add_argument("--records", action="store_true", help="include every sample in the JSON report")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"dlqg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolationError as exc:
        print(f"dlqg {args.command}: invariant violated: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except DlqgError as exc:
        print(f"dlqg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
