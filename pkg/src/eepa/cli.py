"""Command-line front end.

Subcommands ``allocate``, ``oracle``, ``nash`` and ``simulate`` read an
optional JSON config (see README) and accept flag overrides; flags win.

Exit codes: 0 success, 2 usage or invalid input, 3 problem too large for
the oracle, 4 equilibrium report above G, 5 output I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import allocator, game, model, montecarlo
from .errors import CapabilityError, EepaError, InfeasibleEquilibriumError
from .model import CellConfig

EXIT_USAGE = 2
EXIT_CAPABILITY = 3
EXIT_INFEASIBLE = 4
EXIT_IO = 5

DEFAULTS: dict[str, Any] = {
    "num_users": None,
    "power_budget": 1.0,
    "noise_variance": 5e-14,
    "outage_threshold": None,
    "rate": 1.0,
    "bandwidth": None,
    "max_report": 1.0,
    "units": "linear",
    "gains": None,
    "reported": None,
    "mean_gain": 10.0**-11.2,
    "user_counts": list(range(1, 21)),
    "power_budgets": [0.1, 1.0],
    "trials": 10_000,
    "seed": 42,
    "grid": 101,
    "deviation_grid": 200,
    "tie_tolerance": 0.0,
    "snr_average": "all",
}
DEFAULT_OUTAGE_THRESHOLD = 6.0
# gain-valued fields interpreted in the config's `units`
GAIN_FIELDS = ("gains", "reported", "mean_gain", "max_report")


class UsageError(Exception):
    pass


def load_config(path: str | None) -> tuple[dict[str, Any], set[str]]:
    """Merge a JSON config over the defaults; returns (values, keys given).

    Unknown keys are rejected.
    """
    values = dict(DEFAULTS)
    if path is None:
        return values, set()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config field(s): {', '.join(unknown)}")
    values.update(doc)
    if values["units"] not in ("db", "linear"):
        raise UsageError("units must be 'db' or 'linear'")
    return values, set(doc)


def parse_list(text: list[str] | str, kind=float) -> list:
    """Numbers given as separate arguments and/or comma-separated."""
    parts = [text] if isinstance(text, str) else text
    items = [s for part in parts for s in part.replace(",", " ").split()]
    if not items:
        raise UsageError("empty list")
    try:
        return [kind(s) for s in items]
    except ValueError as exc:
        raise UsageError(f"malformed number list {' '.join(parts)!r}") from exc


@dataclass
class Settings:
    """Merged config plus flags, with gains converted to linear scale."""

    values: dict[str, Any]
    units: str
    given: set[str]

    def linear(self, name: str):
        """Field value in linear scale; defaults are always linear."""
        raw = self.values[name]
        if raw is None or self.units == "linear" or name not in GAIN_FIELDS or name not in self.given:
            return raw
        converted = model.db_to_linear(np.asarray(raw, dtype=float))
        return converted.tolist() if isinstance(raw, list) else float(converted)

    def cell(self, num_users: int | None = None) -> CellConfig:
        v = self.values
        k = num_users if num_users is not None else v["num_users"]
        if k is None:
            raise UsageError("number of users unknown: give --gains or --users")
        a = v["outage_threshold"]
        if a is None and v["bandwidth"] is None:
            a = DEFAULT_OUTAGE_THRESHOLD
        return CellConfig(
            num_users=k,
            power_budget=float(v["power_budget"]),
            noise_variance=float(v["noise_variance"]),
            outage_threshold=a,
            rate=float(v["rate"]),
            bandwidth=v["bandwidth"],
            max_report=float(self.linear("max_report")),
        )


def _num(x: float | None):
    if x is None or not math.isfinite(x):
        return None if x is None else repr(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _num(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(x)
    return f"{x:.6g}"


def _exact(x) -> str:
    # gains echo at shortest round-trip precision so units survive a reprint
    return repr(float(x))


def _print_table(title: str, header: list[str], rows: list[list], out) -> None:
    cells = [[_fmt(c) if not isinstance(c, str) else c for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    print(title, file=out)
    print("  ".join(h.rjust(w) for h, w in zip(header, widths)), file=out)
    for r in cells:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)), file=out)


def _print_summary(pairs: list[tuple[str, Any]], out) -> None:
    width = max(len(k) for k, _ in pairs)
    for k, v in pairs:
        shown = v if isinstance(v, str) else _fmt(v)
        print(f"{k.ljust(width)}  {shown}", file=out)


def _emit(args, payload: dict, render, out) -> None:
    if args.format == "json":
        json.dump(_jsonable(payload), out, indent=2, allow_nan=False)
        out.write("\n")
    else:
        render(payload, out)


def _gain_inputs(settings: Settings, name: str = "gains"):
    """(values as given, linear values) of a gain list, or (None, None)."""
    raw = settings.values[name]
    if raw is None:
        return None, None
    return list(raw), np.asarray(settings.linear(name), dtype=float)


def cmd_allocate(args, settings: Settings, out) -> int:
    shown, gains = _gain_inputs(settings)
    if gains is None:
        raise UsageError("allocate needs --gains")
    shown_rep, reported = _gain_inputs(settings, "reported")
    cfg = settings.cell(len(gains))
    basis = gains if reported is None else reported
    if reported is not None and reported.size != gains.size:
        raise UsageError("--reported must have as many entries as --gains")
    result = allocator.allocate(basis, cfg, tie_tol=float(settings.values["tie_tolerance"]))
    demands = np.atleast_1d(model.individual_optimal_power(basis, cfg))
    u_actual = np.atleast_1d(model.user_utility(result.powers, gains, cfg))
    kkt = allocator.kkt_diagnostics(result, basis, cfg)
    users = []
    for k in range(cfg.num_users):
        row = {
            "user": k,
            "gain": shown[k],
            "p_star": demands[k],
            "power": result.powers[k],
            "utility": u_actual[k],
            "slope": kkt.slopes[k],
        }
        if reported is not None:
            row["reported"] = shown_rep[k]
            row["utility_believed"] = float(model.user_utility(result.powers[k], reported[k], cfg))
        users.append(row)
    payload = {
        "units": settings.units,
        "users": users,
        "cell_utility": float(u_actual.sum()),
        "saturated": result.saturated,
        "served_set": sorted(result.served_set),
        "kkt": {"lambda_estimate": kkt.lambda_estimate, "max_slope_spread": kkt.max_slope_spread},
    }
    if reported is not None:
        payload["cell_utility_actual"] = payload["cell_utility"]
        payload["cell_utility_believed"] = model.cell_utility(result.allocation, reported, cfg)

    def render(p, o):
        cols = ["user", "gain"] + (["reported"] if reported is not None else []) + ["p_star", "power", "utility"]
        if reported is not None:
            cols.append("utility_believed")
        cols.append("slope")
        rows = [[_exact(u[c]) if c in ("gain", "reported") else u[c] for c in cols] for u in p["users"]]
        _print_table(f"allocation (gains in {p['units']})", cols, rows, o)
        pairs = [("cell_utility", p["cell_utility"])]
        if reported is not None:
            pairs = [("cell_utility_actual", p["cell_utility_actual"]), ("cell_utility_believed", p["cell_utility_believed"])]
        pairs += [
            ("saturated", str(p["saturated"])),
            ("served_set", str(p["served_set"])),
            ("lambda_estimate", p["kkt"]["lambda_estimate"]),
            ("max_slope_spread", p["kkt"]["max_slope_spread"]),
        ]
        _print_summary(pairs, o)

    _emit(args, payload, render, out)
    return 0


def cmd_oracle(args, settings: Settings, out) -> int:
    shown, gains = _gain_inputs(settings)
    if gains is None:
        raise UsageError("oracle needs --gains")
    cfg = settings.cell(len(gains))
    best = allocator.oracle_allocate(gains, cfg, int(settings.values["grid"]))
    greedy = allocator.allocate(gains, cfg)
    u_best = model.cell_utility(best.allocation, gains, cfg)
    u_greedy = model.cell_utility(greedy.allocation, gains, cfg)
    gap = (u_best - u_greedy) / u_best if u_best > 0 else 0.0
    payload = {
        "units": settings.units,
        "gains": shown,
        "oracle_powers": best.powers.tolist(),
        "algorithm_powers": greedy.powers.tolist(),
        "oracle_utility": u_best,
        "algorithm_utility": u_greedy,
        "relative_gap": gap,
        "oracle_slope_spread": allocator.kkt_diagnostics(best, gains, cfg).max_slope_spread,
        "algorithm_slope_spread": allocator.kkt_diagnostics(greedy, gains, cfg).max_slope_spread,
        "grid": int(settings.values["grid"]),
    }

    def render(p, o):
        rows = [[k, _exact(p["gains"][k]), p["oracle_powers"][k], p["algorithm_powers"][k]] for k in range(len(p["gains"]))]
        _print_table(f"oracle vs algorithm (gains in {p['units']})", ["user", "gain", "oracle", "algorithm"], rows, o)
        _print_summary(
            [(k, p[k]) for k in ("oracle_utility", "algorithm_utility", "relative_gap", "oracle_slope_spread", "algorithm_slope_spread")],
            o,
        )

    _emit(args, payload, render, out)
    return 0


def cmd_nash(args, settings: Settings, out) -> int:
    shown, gains = _gain_inputs(settings)
    cfg = settings.cell(None if gains is None else len(gains))
    g_star = game.nash_report(cfg)
    audit_gains = gains if gains is not None else np.ones(cfg.num_users)
    payload = {
        "units": settings.units,
        "K": cfg.num_users,
        "g_star": g_star,
        "g_star_db": float(model.linear_to_db(g_star)),
        "uniform_power": cfg.power_budget / cfg.num_users,
        "believed_cell_utility": game.believed_cell_utility_at_ne(cfg),
        "audit_max_improvement": game.audit_equilibrium(
            audit_gains, cfg, int(settings.values["deviation_grid"])
        ),
    }
    if gains is not None:
        outcome = game.equilibrium_outcome(gains, cfg)
        payload["gains"] = shown
        payload["player_snrs"] = outcome.player_snrs.tolist()
        payload["player_snrs_db"] = np.atleast_1d(model.linear_to_db(outcome.player_snrs)).tolist()
        payload["actual_cell_utility"] = game.actual_cell_utility_at_ne(gains, cfg)
        payload["efficiency_ratio"] = game.ne_efficiency_ratio(gains, cfg)

    def render(p, o):
        pairs = [(k, p[k]) for k in ("K", "g_star", "g_star_db", "uniform_power", "believed_cell_utility")]
        if "gains" in p:
            pairs += [("actual_cell_utility", p["actual_cell_utility"]), ("efficiency_ratio", p["efficiency_ratio"])]
        pairs.append(("audit_max_improvement", p["audit_max_improvement"]))
        _print_summary(pairs, o)
        if "gains" in p:
            rows = [[k, _exact(p["gains"][k]), p["player_snrs"][k], p["player_snrs_db"][k]] for k in range(p["K"])]
            _print_table(f"equilibrium SNR (gains in {p['units']})", ["user", "gain", "snr", "snr_db"], rows, o)

    _emit(args, payload, render, out)
    return 0


def _csv_field(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_records_csv(records, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(montecarlo.RECORD_COLUMNS)
        for r in records:
            writer.writerow([_csv_field(getattr(r, c)) for c in montecarlo.RECORD_COLUMNS])


def cmd_simulate(args, settings: Settings, out) -> int:
    v = settings.values
    config = montecarlo.ExperimentConfig(
        cell=settings.cell(1),
        user_counts=[int(k) for k in v["user_counts"]],
        power_budgets=[float(p) for p in v["power_budgets"]],
        mean_gain=float(settings.linear("mean_gain")),
        trials=int(v["trials"]),
        seed=int(v["seed"]),
        snr_average=v["snr_average"],
    )
    records = montecarlo.run_experiment(config, workers=args.workers)
    try:
        write_records_csv(records, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    checks = montecarlo.ordering_checks(records)
    payload = {
        "out": args.out,
        "mean_gain": config.mean_gain,
        "seed": config.seed,
        "trials": config.trials,
        "records": [{c: getattr(r, c) for c in montecarlo.RECORD_COLUMNS} for r in records],
        "checks": {
            "truthful_ee_dominates": checks.truthful_ee_dominates,
            "ee_violations": checks.ee_violations,
            "selfish_snr_dominates": checks.selfish_snr_dominates,
            "snr_violations": checks.snr_violations,
            "budget_inversion_onset": checks.inversion_onset,
        },
    }

    def render(p, o):
        cols = list(montecarlo.RECORD_COLUMNS[:7])
        rows = [[r[c] if r[c] is not None else "skipped" for c in cols] for r in p["records"]]
        _print_table(
            f"sweep (mean_gain={p['mean_gain']!r}, trials={p['trials']}, seed={p['seed']})", cols, rows, o
        )
        c = p["checks"]
        verdict = lambda ok: "PASS" if ok else "FAIL"  # noqa: E731
        print(f"[{verdict(c['truthful_ee_dominates'])}] truthful EE >= equilibrium EE on every row"
              + ("" if c["truthful_ee_dominates"] else f" (violations: {c['ee_violations']})"), file=o)
        print(f"[{verdict(c['selfish_snr_dominates'])}] equilibrium SNR >= truthful SNR on every row"
              + ("" if c["selfish_snr_dominates"] else f" (violations: {c['snr_violations']})"), file=o)
        onset = c["budget_inversion_onset"]
        print(f"[{verdict(onset is not None)}] equilibrium EE at the largest budget <= at the smallest"
              f" for K >= K0; K0 = {onset}", file=o)
        print(f"wrote {p['out']}", file=o)

    _emit(args, payload, render, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eepa", description="Energy-efficient power allocation and selfish CSI reporting.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--units", choices=["db", "linear"], help="units of gain-valued inputs")
    common.add_argument("--format", choices=["table", "json"], default="table")
    common.add_argument("--power-budget", type=float, dest="power_budget")
    common.add_argument("--noise-variance", type=float, dest="noise_variance")
    common.add_argument("--outage-threshold", type=float, dest="outage_threshold")
    common.add_argument("--rate", type=float)
    common.add_argument("--bandwidth", type=float)
    common.add_argument("--max-report", type=float, dest="max_report")

    p = sub.add_parser("allocate", parents=[common], help="run the greedy allocation")
    p.add_argument("--gains", nargs="+")
    p.add_argument("--reported", nargs="+")
    p.add_argument("--tie-tolerance", type=float, dest="tie_tolerance")

    p = sub.add_parser("oracle", parents=[common], help="compare with the brute-force optimum (K <= 4)")
    p.add_argument("--gains", nargs="+")
    p.add_argument("--grid", type=int)

    p = sub.add_parser("nash", parents=[common], help="equilibrium reports and efficiencies")
    p.add_argument("--gains", nargs="+")
    p.add_argument("--users", type=int, dest="num_users")
    p.add_argument("--deviation-grid", type=int, dest="deviation_grid")

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo sweep to CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--mean-gain", type=float, dest="mean_gain")
    p.add_argument("--user-counts", nargs="+", dest="user_counts")
    p.add_argument("--power-budgets", nargs="+", dest="power_budgets")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--snr-average", choices=["all", "served"], dest="snr_average")
    p.add_argument("--workers", type=int, help="worker threads (default: EEPA_THREADS, 0 = all CPUs)")
    return parser


_LIST_FLAGS = {"gains": float, "reported": float, "user_counts": int, "power_budgets": float}


def _settings(args) -> Settings:
    values, given = load_config(args.config)
    for name in DEFAULTS:
        flag = getattr(args, name, None)
        if flag is None:
            continue
        values[name] = parse_list(flag, _LIST_FLAGS[name]) if name in _LIST_FLAGS else flag
        given.add(name)
    if args.units is not None:
        values["units"] = args.units
    return Settings(values, values["units"], given)


COMMANDS = {"allocate": cmd_allocate, "oracle": cmd_oracle, "nash": cmd_nash, "simulate": cmd_simulate}


def main(argv: list[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = _settings(args)
        return COMMANDS[args.command](args, settings, out)
    except UsageError as exc:
        print(f"eepa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except InfeasibleEquilibriumError as exc:
        print(f"error: {exc}; no playable equilibrium in the report range [0, G]", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (EepaError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
