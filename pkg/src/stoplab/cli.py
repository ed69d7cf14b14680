"""Command-line front end: ``stoplab solve|certify|bounds|norm|refine``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import re
import sys
import time
from pathlib import Path

from . import __version__
from .duality import check_certificate, dual_from_snell, mc_dual_bound
from .filtration import CapExceeded, FiltrationTree
from .lp import LpError, solve_lp
from .modelio import REFINEMENT_CONVENTION, LatticeModel, ModelError, lattice_snell, make_profile, parse_model, refinement_study
from .norms import proj_norm
from .relaxation import RandomizedQuasiStopping, build_primal_lp, is_extreme
from .snell import QuasiStoppingTime, quasi_snell, solve_os

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CERT = 0, 2, 3, 4

# recorded arguments exclude these so reports do not depend on them
_UNRECORDED = {"func", "out", "no_timings", "threads", "export_lp"}


class InputError(Exception):
    pass


def _load(path: str) -> tuple[FiltrationTree, object, dict, str]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read model: {exc}") from None
    try:
        tree, y, meta = parse_model(data.decode("utf-8"))
    except (ModelError, UnicodeDecodeError) as exc:
        raise InputError(f"invalid model {path}: {exc}") from None
    return tree, y, meta, hashlib.sha256(data).hexdigest()


def _policy_dict(tree: FiltrationTree, q: QuasiStoppingTime) -> dict:
    return {**q.to_dict(), "description": q.describe(tree)}


def cmd_solve(args) -> tuple[int, dict]:
    tree, y, meta, digest = _load(args.model)
    sol = quasi_snell(tree, y) if args.quasi else solve_os(tree, y)
    res = {"problem": "OQS" if args.quasi else "OS", "value": sol.value,
           "policy": _policy_dict(tree, sol.policy)}
    if args.relaxed:
        lp = build_primal_lp(tree, y, quasi=args.quasi)
        if args.export_lp:
            Path(args.export_lp).write_text(lp.to_lp_format(), encoding="utf-8")
        lsol = solve_lp(lp)
        x = RandomizedQuasiStopping.from_lp(tree, lp, lsol)
        res["relaxed"] = {
            "value": lsol.objective,
            "vertex": {f"{k}:{n}": float(v) for (k, n), v in zip(lp.names, lsol.x)},
            "is_vertex": lsol.is_vertex,
            "is_extreme": is_extreme(tree, x, args.tol),
        }
    return EXIT_OK, {"model_hash": digest, "results": res}


def _read_policy(source: str, tree: FiltrationTree) -> RandomizedQuasiStopping:
    m = re.fullmatch(r"stop-at-(\d+)", source)
    if m:
        return RandomizedQuasiStopping.from_policy(tree, QuasiStoppingTime(tree.at_time(int(m.group(1)))))
    try:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read policy {source}: {exc}") from None
    try:
        if "a" in doc or "b" in doc:
            x = RandomizedQuasiStopping({int(k): float(v) for k, v in doc.get("a", {}).items()},
                                        {int(k): float(v) for k, v in doc.get("b", {}).items()})
        else:
            q = QuasiStoppingTime(map(int, doc.get("opt_stops", [])), map(int, doc.get("pre_stops", [])))
            x = RandomizedQuasiStopping.from_policy(tree, q.validate(tree))
        return x.check(tree)
    except (ValueError, TypeError, AttributeError) as exc:
        raise InputError(f"invalid policy {source}: {exc}") from None


def cmd_certify(args) -> tuple[int, dict]:
    tree, y, meta, digest = _load(args.model)
    snell = quasi_snell(tree, y)
    M = dual_from_snell(tree, snell)
    if args.policy:
        x = _read_policy(args.policy, tree)
    else:
        x = RandomizedQuasiStopping.from_policy(tree, snell.policy)
    rep = check_certificate(tree, y, x, M, args.tol)
    res = {"primal_value": x.objective(tree, y), "dual_value": M.objective, **rep.to_dict()}
    return (EXIT_OK if rep.optimal else EXIT_CERT), {"model_hash": digest, "results": res}


def cmd_bounds(args) -> tuple[int, dict]:
    if args.paths < 2:
        raise InputError("--paths must be >= 2 (a standard error needs two samples)")
    try:
        if args.prob is not None:
            lat = LatticeModel(args.steps, args.S0, args.up, args.down, args.prob,
                               args.discount, args.payoff, args.strike)
        else:
            lat = LatticeModel.risk_neutral(args.steps, args.S0, args.up, args.down, args.rate,
                                            args.payoff, args.strike)
    except ValueError as exc:
        raise InputError(f"invalid lattice: {exc}") from None
    primal = float(lattice_snell(lat)[0][0])
    est, se = mc_dual_bound(lat, args.paths, args.seed, args.martingale, workers=args.threads)
    res = {"primal": primal, "dual_estimate": est, "std_error": se, "gap": est - primal,
           "within_3se": abs(est - primal) <= 3 * se, "martingale": args.martingale}
    return EXIT_OK, {"results": res}


def cmd_norm(args) -> tuple[int, dict]:
    tree, y, meta, digest = _load(args.model)
    rep = proj_norm(tree, y)
    res = {"sup_norm": rep.sup_norm, "proj_norm": rep.proj_norm, "equal": rep.equal}
    return EXIT_OK, {"model_hash": digest, "results": res}


def cmd_refine(args) -> tuple[int, dict]:
    try:
        res_list = [int(v) for v in args.resolutions.split(",") if v.strip()]
        profile = make_profile(args.profile, res_list)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rows = refinement_study(profile)
    return EXIT_OK, {"results": {"profile": profile.name, "convention": REFINEMENT_CONVENTION, "rows": rows}}


def _flatten(prefix: str, obj, out: list) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(obj, list) and obj and isinstance(obj[0], (dict, list)):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, json.dumps(obj) if isinstance(obj, list) else obj))


def _render(record: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(record, indent=2, sort_keys=True) + "\n"
    res = record["results"]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if "rows" in res:
            w.writerow(["n", "os", "oqs"])
            for r in res["rows"]:
                w.writerow([r["n"], repr(r["os"]), repr(r["oqs"])])
        else:
            w.writerow(["key", "value"])
            flat: list = []
            _flatten("", res, flat)
            for k, v in flat:
                w.writerow([k, repr(v) if isinstance(v, float) else v])
        return buf.getvalue()
    lines = [f"stoplab {record['command']}"]
    if "rows" in res:
        lines.append(f"profile: {res['profile']} ({res['convention']})")
        lines.append(f"{'n':>8}  {'OS':>20}  {'OQS':>20}")
        lines += [f"{r['n']:>8}  {r['os']:>20.15g}  {r['oqs']:>20.15g}" for r in res["rows"]]
        return "\n".join(lines) + "\n"
    for k, v in res.items():
        if k == "policy":
            lines.append("policy:")
            lines += [f"  {d}" for d in v["description"]]
        elif k == "violations":
            lines.append(f"violations: {len(v)}")
            lines += [f"  {d}" for d in v]
        elif isinstance(v, dict):
            lines.append(f"{k}:")
            lines += [f"  {kk}: {vv}" for kk, vv in v.items()]
        else:
            lines.append(f"{k}: {v:.15g}" if isinstance(v, float) else f"{k}: {v}")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", choices=("text", "json", "csv"), default="text")
    common.add_argument("--tol", type=float, default=1e-9)
    common.add_argument("--no-timings", action="store_true", help="omit timings from the report")
    common.add_argument("--threads", type=int, default=1)

    p = argparse.ArgumentParser(prog="stoplab", description=__doc__)
    p.add_argument("--version", action="version", version=f"stoplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve (quasi-)stopping and its relaxation")
    s.add_argument("model")
    s.add_argument("--quasi", action="store_true", help="allow predictable stops")
    s.add_argument("--relaxed", action="store_true", help="also solve the LP relaxation")
    s.add_argument("--export-lp", metavar="PATH", help="write the relaxation LP in LP format")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("certify", parents=[common], help="check optimality conditions")
    c.add_argument("model")
    g = c.add_mutually_exclusive_group()
    g.add_argument("--policy", help="policy JSON file, or stop-at-<t>")
    g.add_argument("--auto", action="store_true", help="use the backward-induction policy (default)")
    c.set_defaults(func=cmd_certify)

    b = sub.add_parser("bounds", parents=[common], help="Monte Carlo dual bound on a binomial lattice")
    b.add_argument("--steps", type=int, default=10)
    b.add_argument("--S0", type=float, default=100.0)
    b.add_argument("--strike", type=float, default=100.0)
    b.add_argument("--up", type=float, default=1.1)
    b.add_argument("--down", type=float, default=1 / 1.1)
    b.add_argument("--rate", type=float, default=0.0, help="continuously compounded rate per step")
    b.add_argument("--prob", type=float, help="up probability (default: risk neutral)")
    b.add_argument("--discount", type=float, default=1.0, help="per-step discount when --prob is given")
    b.add_argument("--payoff", choices=("put", "call", "zero"), default="put")
    b.add_argument("--paths", type=int, default=100_000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--martingale", choices=("snell", "zero"), default="snell")
    b.set_defaults(func=cmd_bounds)

    n = sub.add_parser("norm", parents=[common], help="sup norm versus projection norm")
    n.add_argument("model")
    n.set_defaults(func=cmd_norm)

    r = sub.add_parser("refine", parents=[common], help="grid-refinement study of a profile")
    r.add_argument("--profile", required=True)
    r.add_argument("--resolutions", default="10,100")
    r.set_defaults(func=cmd_refine)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        code, body = args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LpError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    record = {
        "command": args.command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED and k != "command"},
        "tool_version": __version__,
        "exit_code": code,
        **body,
    }
    if not args.no_timings:
        record["timings"] = {"total_seconds": time.perf_counter() - t0}
    sys.stdout.write(_render(record, args.out))
    return code


if __name__ == "__main__":
    sys.exit(main())
