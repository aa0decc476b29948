"""Command-line entry point: ``budgetdp {solve,verify,reach,audit,oracle}``.

Exit codes: 0 ok, 1 verification mismatch, 2 infeasible level with
``--strict``, 64 configuration error, 65 enumeration cap exceeded.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

from ._numeric import fmt_number, parse_number
from .audit_sim import exact_audit, monte_carlo_audit
from .budget_dpp import DPPVerifier, check_budget_process, realize_strategy, solve
from .config import ConfigError, ProblemConfig
from .constraint_lib import HalfSpace, region_from_dict
from .errors import CapExceededError, DomainError, InfeasibleRootWarning, InfeasibleStartError
from .oracle import OracleTable, oracle_value_recursive, supinf_supsup_check
from .path_lattice import StoppingRule
from .problem_kit import reachability_sets

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 64
EXIT_CAP = 65


def parse_tau(text: str, horizon: int):
    """``none`` -> None, ``terminal``, an integer step, or ``hit:REGION`` where
    REGION is ``x>=v``, ``x<=v`` or an inline JSON region."""
    t = text.strip()
    if t == "none":
        return None
    if t == "terminal":
        return StoppingRule.terminal()
    if t.startswith("hit:"):
        body = t[4:].strip()
        if body.startswith("{"):
            try:
                region = region_from_dict(json.loads(body))
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"bad region in --tau: {exc}") from None
        elif body.startswith("x>="):
            region = HalfSpace(0, parse_number(body[3:]), "above")
        elif body.startswith("x<="):
            region = HalfSpace(0, parse_number(body[3:]), "below")
        else:
            raise ConfigError(f"unrecognised region {body!r}; use x>=v, x<=v or a JSON region")
        return StoppingRule.first_hit(region)
    try:
        k = int(t)
    except ValueError:
        raise ConfigError(f"unrecognised --tau {text!r}") from None
    if not 0 <= k <= horizon:
        raise ConfigError(f"--tau {k} outside [0, {horizon}]")
    return StoppingRule.at(k)


def _load(args) -> ProblemConfig:
    cfg = ProblemConfig.load(args.config)
    if getattr(args, "m", None) is not None:
        cfg = cfg.with_level(parse_number(args.m))
    if getattr(args, "grid", None) not in (None, "auto"):
        cfg = cfg.with_grid([v for v in args.grid.split(",") if v.strip()])
    return cfg


def _write(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _summary(cfg: ProblemConfig, spec, value, w) -> dict:
    return {
        "name": cfg.name,
        "kind": spec.kind,
        "native_level": fmt_number(spec.native_level),
        "budget_level": fmt_number(spec.budget_level),
        "value": fmt_number(value),
        "min_budget": fmt_number(w),
        "feasible": spec.budget_level >= w,
    }


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _solve(cfg, spec):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        surface, policy = solve(spec.model, spec.reward, spec.constraint, cfg.grid(), m=spec.budget_level)
    for w in caught:
        if not issubclass(w.category, InfeasibleRootWarning):
            print(f"warning: {w.message}", file=sys.stderr)
    return surface, policy


def cmd_solve(args) -> int:
    cfg = _load(args)
    spec = cfg.problem()
    surface, policy = _solve(cfg, spec)
    summary = _summary(cfg, spec, surface.root_value(spec.budget_level), surface.w[surface.root])
    _write(args.out, "value_surface.csv", surface.to_csv())
    _write(args.out, "policy.json", policy.to_json())
    _write(args.out, "summary.json", _dump(summary))
    sys.stdout.write(_dump(summary))
    if not summary["feasible"]:
        print(f"infeasible: budget {summary['budget_level']} below minimal budget {summary['min_budget']}",
              file=sys.stderr)
        if args.strict:
            return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    spec = cfg.problem()
    table = OracleTable(spec.model, spec.reward, spec.constraint)
    value, strategy = table.value(spec.budget_level)
    summary = _summary(cfg, spec, value, table.min_max_constraint())
    report = dict(summary)
    report["strategy"] = (
        None if not strategy else {" ".join(map(str, b)) or "root": a for b, a in sorted(strategy.table.items())}
    )
    _write(args.out, "oracle.json", _dump(report))
    sys.stdout.write(_dump(summary))
    if not summary["feasible"] and args.strict:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _check(name, passed, **detail):
    out = {"name": name, "pass": bool(passed)}
    out.update({k: fmt_number(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v
                for k, v in detail.items()})
    return out


def _fmt(x):
    return fmt_number(x) if x is not None else None


def cmd_verify(args) -> int:
    cfg = _load(args)
    spec = cfg.problem()
    model, f, g, b = spec.model, spec.reward, spec.constraint, spec.budget_level
    surface, policy = _solve(cfg, spec)
    V = surface.root_value(b)
    w = surface.w[surface.root]
    checks = []

    table = OracleTable(model, f, g)
    ov, _ = table.value(b)
    checks.append(_check("oracle_value", ov == V, dp=_fmt(V), oracle=_fmt(ov)))
    rv = oracle_value_recursive(model, f, g, b)
    checks.append(_check("oracle_cross_check", rv == ov, oracle=_fmt(ov), recursive=_fmt(rv)))
    mm = table.min_max_constraint()
    checks.append(_check("min_budget", mm == w, dp=_fmt(w), oracle=_fmt(mm)))

    if args.tau is None:
        taus = [StoppingRule.at(0), StoppingRule.at(1), StoppingRule.terminal()]
    else:
        tau = parse_tau(args.tau, model.horizon)
        taus = [] if tau is None else [tau]
    for tau in taus:
        rep = DPPVerifier(surface, g, tau, f).report(b)
        checks.append(_check(f"dpp[{tau.name}]", rep.passed, value=_fmt(rep.value), supsup=_fmt(rep.supsup),
                             supinf=_fmt(rep.supinf)))
        si = supinf_supsup_check(model, f, g, b, tau, surface)
        checks.append(dict(_check(f"supinf_supsup[{tau.name}]", si.passed), report=si.to_dict()))

    if b >= w:
        strategy, bp = realize_strategy(surface, policy, b)
        audit = exact_audit(model, strategy, g, f, b, budget=bp)
        bc = check_budget_process(bp, g, b)
        checks.append(_check("audit", audit.ok and audit.reward == V and bc.ok, reward=_fmt(audit.reward),
                             flags=audit.flags))

    expected = cfg.expected
    if "value" in expected:
        checks.append(_check("expected_value", expected["value"] == V, expected=_fmt(expected["value"]), dp=_fmt(V)))
    if "min_budget" in expected:
        checks.append(_check("expected_min_budget", expected["min_budget"] == w,
                             expected=_fmt(expected["min_budget"]), dp=_fmt(w)))

    ok = all(c["pass"] for c in checks)
    report = {"name": cfg.name, "pass": ok, "checks": checks}
    _write(args.out, "verify_report.json", _dump(report))
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_reach(args) -> int:
    cfg = _load(args)
    spec = cfg.problem()
    reach = reachability_sets(spec.model, cfg.targets())
    text = reach.to_csv()
    _write(args.out, "reachability.csv", text)
    root_in = reach.member[reach.graph.root]
    print(f"root in D(0): {'true' if root_in else 'false'}")
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _load(args)
    spec = cfg.problem()
    model, f, g, b = spec.model, spec.reward, spec.constraint, spec.budget_level
    surface, policy = _solve(cfg, spec)
    try:
        strategy, bp = realize_strategy(surface, policy, b)
    except InfeasibleStartError as exc:
        report = {"feasible": False, "message": str(exc)}
        _write(args.out, "audit.json", _dump(report))
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE if args.strict else EXIT_OK
    report = {"feasible": True, "exact": exact_audit(model, strategy, g, f, b, budget=bp).to_dict()}
    if args.samples > 0:
        report["monte_carlo"] = monte_carlo_audit(model, strategy, g, f, b, args.samples, args.seed).to_dict()
    _write(args.out, "audit.json", _dump(report))
    sys.stdout.write(_dump(report))
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "reach": cmd_reach,
    "audit": cmd_audit,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="budgetdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--m", metavar="LEVEL", help="budget, or success probability for quantile problems")
        p.add_argument("--grid", default=None, help="'auto' or comma-separated budget levels")
        p.add_argument("--tau", default=None, help="none | terminal | STEP | hit:REGION")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--samples", type=int, default=0)
        p.add_argument("--strict", action="store_true")
        p.add_argument("--out", default="budgetdp-out", metavar="DIR")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceededError as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
