"""JSON problem configurations: validation, canonical form and construction of
:class:`~budgetdp.problem_kit.ProblemSpec` objects.

Numbers may be JSON numbers or strings; the canonical form writes every number
as a string (exact decimals or ``p/q``) so that dyadic inputs stay exact.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema

from ._numeric import fmt_number, parse_number
from .budget_dpp import BudgetGrid
from .constraint_lib import (
    indicator_reward,
    linear_reward,
    log_reward,
    power_reward,
    region_from_dict,
    running_max_reward,
    table_reward,
)
from .errors import DomainError, LatticeError
from .path_lattice import LatticeModel
from .problem_kit import (
    ProblemSpec,
    build_drawdown_problem,
    build_floor_problem,
    build_quantile_problem,
    build_state_problem,
    build_target_problem,
    build_unconstrained_problem,
)


class ConfigError(ValueError):
    """Unreadable, invalid or inconsistent problem configuration."""


def load_schema() -> dict:
    text = resources.files("budgetdp").joinpath("schema/problem_config.schema.json").read_text()
    return json.loads(text)


def _num(x) -> str:
    return fmt_number(parse_number(x))


def _canon_region(r: dict) -> dict:
    out = {"type": r["type"]}
    t = r["type"]
    if t == "halfspace":
        out.update(axis=int(r.get("axis", 0)), bound=_num(r["bound"]), direction=r.get("direction", "above"))
    elif t == "box":
        out.update(lower=[_num(v) for v in r["lower"]], upper=[_num(v) for v in r["upper"]])
    elif t == "ball":
        out.update(center=[_num(v) for v in r["center"]], radius=_num(r["radius"]))
    elif t == "union":
        out["members"] = [_canon_region(m) for m in r["members"]]
    return out


def _canon_step_region(spec):
    if isinstance(spec, list):
        return [_canon_region(r) for r in spec]
    if "default" in spec:
        out = {"default": _canon_region(spec["default"])}
        if spec.get("steps"):
            out["steps"] = {str(int(k)): _canon_region(v) for k, v in sorted(spec["steps"].items(), key=lambda kv: int(kv[0]))}
        return out
    return _canon_region(spec)


def _canon_step_number(spec):
    if isinstance(spec, list):
        return [_num(v) for v in spec]
    return _num(spec)


def canonicalize(raw: dict) -> dict:
    """Validate ``raw`` against the schema and return its canonical form."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    try:
        return _canonicalize(raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _canonicalize(raw: dict) -> dict:
    lat = raw["lattice"]
    dyn = lat["dynamics"]
    family = dyn["family"]
    J = len(lat["branch_probs"])
    cdyn = {"family": family}
    controls = []
    for c in lat["controls"]:
        cc = {"name": c["name"]}
        if family == "additive":
            cc["drift"] = _num(c.get("drift", 0))
            cc["scale"] = _num(c.get("scale", 1))
        elif family == "multiplicative":
            cc["exposure"] = _num(c.get("exposure", 1))
        controls.append(cc)
    names = [c["name"] for c in controls]
    if len(set(names)) != len(names):
        raise ConfigError("control names must be unique")
    if family == "additive":
        if "shocks" not in dyn or len(dyn["shocks"]) != J:
            raise ConfigError(f"additive dynamics need {J} shocks")
        cdyn["shocks"] = [_num(v) for v in dyn["shocks"]]
    elif family == "multiplicative":
        if "returns" not in dyn or len(dyn["returns"]) != J:
            raise ConfigError(f"multiplicative dynamics need {J} returns")
        cdyn["returns"] = [_num(v) for v in dyn["returns"]]
    else:
        inc = dyn.get("increments")
        N = lat["horizon"]
        if inc is None or len(inc) != N or any(len(row) != len(controls) for row in inc) or any(
            len(cell) != J for row in inc for cell in row
        ):
            raise ConfigError(f"table dynamics need increments of shape [{N}][{len(controls)}][{J}]")
        cdyn["increments"] = [[[_num(v) for v in cell] for cell in row] for row in inc]
    lattice = {
        "horizon": int(lat["horizon"]),
        "branch_probs": [_num(p) for p in lat["branch_probs"]],
        "x0": _num(lat["x0"]),
        "dynamics": cdyn,
        "controls": controls,
    }

    con = raw["constraint"]
    kind = con["kind"]
    ccon = {"kind": kind}
    need = {"state": "regions", "floor": "floor", "drawdown": "alpha", "quantile": "targets", "target": "targets"}
    if kind in need and need[kind] not in con:
        raise ConfigError(f"{kind} constraint needs '{need[kind]}'")
    if kind == "state":
        ccon["regions"] = _canon_step_region(con["regions"])
    elif kind == "floor":
        ccon["floor"] = _canon_step_number(con["floor"])
    elif kind == "drawdown":
        ccon["alpha"] = _canon_step_number(con["alpha"])
    elif kind in ("quantile", "target"):
        ccon["targets"] = _canon_step_region(con["targets"])

    rew = raw["reward"]
    fam = rew["family"]
    crew = {"family": fam}
    if fam == "power":
        crew["exponent"] = _num(rew.get("exponent", 1))
    elif fam == "linear":
        crew["coef"] = _num(rew.get("coef", 1))
    elif fam == "indicator":
        if "region" not in rew:
            raise ConfigError("indicator reward needs 'region'")
        crew["region"] = _canon_region(rew["region"])
    elif fam == "table":
        if "values" not in rew:
            raise ConfigError("table reward needs 'values'")
        rows = sorted(([int(b) for b in v["branches"]], _num(v["value"])) for v in rew["values"])
        crew["values"] = [{"branches": b, "value": v} for b, v in rows]

    level = dict(raw.get("level", {}))
    clevel = {}
    if kind == "quantile":
        if "m" in level:
            raise ConfigError("quantile constraints take a success 'probability', not a budget 'm'")
        clevel["probability"] = _num(level.get("probability", 0))
    elif kind == "none":
        if "probability" in level:
            raise ConfigError("unconstrained problems take a budget 'm'")
        clevel["m"] = _num(level.get("m", 0))
    else:
        # pathwise kinds run at budget 0, the target kind at probability 1
        fixed_m = parse_number(level.get("m", 0))
        fixed_p = parse_number(level.get("probability", 1 if kind == "target" else 0))
        if fixed_m != 0 or fixed_p != (1 if kind == "target" else 0):
            raise ConfigError(f"{kind} constraints run at a fixed level; drop the 'level' block")

    grid = raw.get("grid", "auto")
    if grid == "auto":
        cgrid = "auto"
    elif isinstance(grid, list):
        cgrid = {"levels": [_num(v) for v in grid], "mode": "grid"}
    else:
        cgrid = {"levels": [_num(v) for v in grid["levels"]], "mode": grid.get("mode", "grid")}

    out = {
        "version": 1,
        "name": raw.get("name", ""),
        "lattice": lattice,
        "constraint": ccon,
        "reward": crew,
        "level": clevel,
        "grid": cgrid,
    }
    if raw.get("expected"):
        out["expected"] = {k: _num(v) for k, v in sorted(raw["expected"].items())}
    return out


def dumps(canonical: dict) -> str:
    return json.dumps(canonical, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _parse_step_region(spec):
    if isinstance(spec, list):
        return [region_from_dict(r) for r in spec]
    if "default" in spec:
        out = {"default": region_from_dict(spec["default"])}
        for k, v in spec.get("steps", {}).items():
            out[int(k)] = region_from_dict(v)
        return out
    return region_from_dict(spec)


def _parse_step_number(spec):
    if isinstance(spec, list):
        return [parse_number(v) for v in spec]
    return parse_number(spec)


def build_model(lattice: dict) -> LatticeModel:
    dyn = lattice["dynamics"]
    family = dyn["family"]
    controls = tuple(c["name"] for c in lattice["controls"])
    probs = tuple(parse_number(p) for p in lattice["branch_probs"])
    x0 = (parse_number(lattice["x0"]),)
    if family == "additive":
        shocks = [parse_number(v) for v in dyn["shocks"]]
        params = {c["name"]: (parse_number(c["drift"]), parse_number(c["scale"])) for c in lattice["controls"]}

        def transition(k, x, a, j):
            drift, scale = params[a]
            return (x[0] + drift + scale * shocks[j],)

    elif family == "multiplicative":
        returns = [parse_number(v) for v in dyn["returns"]]
        exposure = {c["name"]: parse_number(c["exposure"]) for c in lattice["controls"]}

        def transition(k, x, a, j):
            return (x[0] * (1 + exposure[a] * returns[j]),)

    else:
        inc = [[[parse_number(v) for v in cell] for cell in row] for row in dyn["increments"]]
        index = {name: i for i, name in enumerate(controls)}

        def transition(k, x, a, j):
            return (x[0] + inc[k][index[a]][j],)

    try:
        return LatticeModel(int(lattice["horizon"]), probs, controls, transition, x0)
    except LatticeError as exc:
        raise ConfigError(str(exc)) from None


def build_reward(rew: dict):
    fam = rew["family"]
    if fam == "power":
        return power_reward(parse_number(rew["exponent"]))
    if fam == "log":
        return log_reward()
    if fam == "linear":
        return linear_reward(parse_number(rew["coef"]))
    if fam == "indicator":
        return indicator_reward(region_from_dict(rew["region"]))
    if fam == "table":
        return table_reward({tuple(v["branches"]): parse_number(v["value"]) for v in rew["values"]})
    return running_max_reward()


def build_grid(spec):
    if spec == "auto":
        return None
    try:
        return BudgetGrid(tuple(parse_number(v) for v in spec["levels"]), spec.get("mode", "grid"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class ProblemConfig:
    canonical: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ProblemConfig":
        return cls(canonicalize(raw))

    @classmethod
    def load(cls, path) -> "ProblemConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        return cls.from_dict(raw)

    def dumps(self) -> str:
        return dumps(self.canonical)

    @property
    def name(self) -> str:
        return self.canonical["name"]

    @property
    def expected(self) -> dict:
        return {k: parse_number(v) for k, v in self.canonical.get("expected", {}).items()}

    def with_level(self, level) -> "ProblemConfig":
        """Copy with the native level replaced (budget ``m``, or the success
        probability for quantile problems)."""
        c = copy.deepcopy(self.canonical)
        kind = c["constraint"]["kind"]
        if kind == "quantile":
            c["level"] = {"probability": _num(level)}
        elif kind == "none":
            c["level"] = {"m": _num(level)}
        else:
            raise ConfigError(f"{kind} constraints run at a fixed level")
        return ProblemConfig(c)

    def with_grid(self, levels) -> "ProblemConfig":
        c = copy.deepcopy(self.canonical)
        c["grid"] = "auto" if levels == "auto" else {"levels": [_num(v) for v in levels], "mode": "grid"}
        return ProblemConfig(canonicalize(c))

    def problem(self) -> ProblemSpec:
        c = self.canonical
        model = build_model(c["lattice"])
        f = build_reward(c["reward"])
        con = c["constraint"]
        kind = con["kind"]
        try:
            if kind == "none":
                spec = build_unconstrained_problem(model, f)
                return spec.with_level(parse_number(c["level"]["m"]))
            if kind == "state":
                return build_state_problem(model, _parse_step_region(con["regions"]), f)
            if kind == "floor":
                return build_floor_problem(model, _parse_step_number(con["floor"]), f)
            if kind == "drawdown":
                return build_drawdown_problem(model, _parse_step_number(con["alpha"]), f)
            if kind == "quantile":
                return build_quantile_problem(model, _parse_step_region(con["targets"]), f,
                                              parse_number(c["level"]["probability"]))
            return build_target_problem(model, _parse_step_region(con["targets"]), f)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    def grid(self):
        return build_grid(self.canonical["grid"])

    def targets(self):
        con = self.canonical["constraint"]
        if "targets" not in con:
            raise ConfigError(f"{con['kind']} constraint has no target sets")
        return _parse_step_region(con["targets"])
