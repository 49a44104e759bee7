"""Batch driver: ``rellich-lab <command> --config <path> [--out DIR] [--seed N] [--jobs N]``.

Configs are flat ``key = value`` files with ``#`` comments and namespaced keys
(``geometry.kind``, ``params.p``, ``sweep.eps0`` ...).  Every command writes a
JSON report ``<command>_report.json``; tabular commands also write CSV.

Exit codes: 0 all checks passed, 1 usage or config error, 2 a numerical check
failed, 3 a hypothesis of the inequality does not hold for the requested
setting (nothing is claimed about the inequality then).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import identity_residuals
from .constants import (InequalityParams, ParameterError, constant_set, cross_check_classical,
                        identity_sweep, rellich_mode_ok)
from .extremizers import MODES, ExtremizerSpec, default_schedules, epsilon_sweep
from .functionals import (HypothesisError, hardy_deficit, j_functional, radial_model,
                          random_bumps, rellich_quotient, search_D)
from .geometry import GeometryError, check_condition, default_samples, field_from_descriptor
from .quadrature import QuadratureError, cascade_oracle
from .varsolve import SolverError, build_problem, minimize_quotient, refine_study

SCHEMA_VERSION = "1.0"
COMMANDS = ("identities", "constants", "check-geometry", "quotient", "sweep", "minimize",
            "report")
EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_HYPOTHESIS = 0, 1, 2, 3


class ConfigError(ValueError):
    """All problems found in a config, each prefixed with its line number."""

    def __init__(self, errors):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


def _float_list(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    parse.__name__ = "one of " + "|".join(options)
    return parse


# key -> (parser, default)
KEYS = {
    "command": (_choice(*COMMANDS), None),
    "seed": (int, 0),
    "jobs": (int, 1),
    "geometry.kind": (_choice("point", "subspace", "slab", "ball", "polygon"), None),
    "geometry.N": (int, None),
    "geometry.k": (int, None),
    "geometry.radius": (float, 1.0),
    "geometry.period": (float, 1.0),
    "geometry.L": (float, 1.0),
    "geometry.R0": (float, 1.0),
    "geometry.vertices": (str, None),
    "geometry.samples": (int, 200),
    "params.p": (float, None),
    "params.k": (float, None),
    "params.s": (float, 0.0),
    "params.m": (int, 1),
    "params.D": (float, None),
    "params.alpha": (float, 0.0),
    "params.beta": (float, 0.0),
    "params.gamma": (float, 0.0),
    "params.mode": (_choice("hardy", "rellich"), None),
    "identities.samples": (int, 200),
    "identities.depth": (int, 6),
    "identities.coefficient_samples": (int, 50),
    "identities.tol": (float, 1e-10),
    "quotient.functional": (_choice("hardy", "rellich", "j"), "hardy"),
    "quotient.profiles": (int, 20),
    "quotient.degree": (int, 3),
    "quotient.search_D": (_bool, True),
    "quotient.tol": (float, 1e-10),
    "sweep.mode": (_choice(*MODES), "plain"),
    "sweep.eps0": (_float_list, None),
    "sweep.eps1": (_float_list, None),
    "sweep.probe_eps": (float, 0.5),
    "sweep.window": (_float_list, None),
    "sweep.tol": (float, 1e-10),
    "minimize.n": (int, None),
    "minimize.r_in": (float, 1e-5),
    "minimize.r_out": (float, None),
    "minimize.levels": (int, 1),
    "minimize.method": (_choice("auto", "eigen", "descent"), "auto"),
    "report.inputs": (_str_list, []),
}

GEOMETRY_COMMANDS = ("check-geometry", "quotient", "sweep", "minimize")


@dataclass
class RunConfig:
    command: str
    values: dict
    lines: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def get(self, key):
        return self.values.get(key, KEYS[key][1])

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    @property
    def jobs(self) -> int:
        return int(self.get("jobs"))

    def echo(self) -> dict:
        """Every key with its effective value (explicit or default)."""
        out = {}
        for key in sorted(KEYS):
            v = self.get(key)
            if v is not None and v != []:
                out[key] = v
        out["command"] = self.command
        return out


def _geometry_k(values):
    kind = values.get("geometry.kind")
    if kind == "point":
        return values.get("geometry.N", 5)
    if kind == "subspace":
        return values.get("geometry.k")
    if kind in ("slab", "ball", "polygon"):
        return 1
    return None


def _rellich_requested(command, values):
    if command == "minimize":
        return True
    if command == "sweep":
        return values.get("sweep.mode", "plain") != "hardy"
    if command == "quotient":
        return values.get("quotient.functional", "hardy") in ("rellich", "j") or \
            values.get("params.mode") == "rellich"
    return values.get("params.mode") == "rellich"


def parse_config(text: str, command: str | None = None, base_dir=".") -> RunConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    errors, values, lines = [], {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {no}: expected key=value, got {raw.strip()!r}")
            continue
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            errors.append(f"line {no}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {no}: duplicate key {key!r} (first on line {lines[key]})")
            continue
        parser = KEYS[key][0]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            name = getattr(parser, "__name__", "value")
            errors.append(f"line {no}: {key} expects {name}: {exc}")
            continue
        lines[key] = no

    def err(key, msg):
        where = f"line {lines[key]}" if key in lines else "config"
        errors.append(f"{where}: {msg}")

    cfg_cmd = values.get("command")
    if command is None:
        command = cfg_cmd
    elif cfg_cmd is not None and cfg_cmd != command:
        err("command", f"config is for command {cfg_cmd!r} but {command!r} was requested")
    if command is None:
        errors.append("config: no command given")
    elif command not in COMMANDS:
        errors.append(f"config: unknown command {command!r}")

    p = values.get("params.p")
    if "params.p" in values and not p > 1:
        err("params.p", "p must exceed 1")
    if command in GEOMETRY_COMMANDS and "geometry.kind" not in values:
        errors.append("config: geometry.kind is required for this command")
    if command in GEOMETRY_COMMANDS + ("constants",) and p is None:
        errors.append("config: params.p is required for this command")
    kind = values.get("geometry.kind")
    if kind == "subspace" and ("geometry.N" not in values or "geometry.k" not in values):
        err("geometry.kind", "subspace geometry needs geometry.N and geometry.k")
    if kind == "polygon" and "geometry.vertices" not in values:
        err("geometry.kind", "polygon geometry needs geometry.vertices")
    gk = _geometry_k(values)
    k = values.get("params.k")
    if k is not None and gk is not None and k != gk:
        err("params.k", f"params.k = {k:g} disagrees with the geometry (k = {gk})")
    if k is None:
        k = gk
    if command == "constants" and k is None:
        errors.append("config: params.k is required for constants")
    if command == "minimize" and kind == "polygon":
        err("geometry.kind", "minimize needs a radial geometry (point, subspace, slab, ball)")
    if command == "sweep" and kind not in (None, "point", "subspace", "slab"):
        err("geometry.kind", "sweeps need an equality-case geometry (point, subspace, slab)")
    if p is not None and p > 1 and k is not None and command is not None \
            and _rellich_requested(command, values) and not rellich_mode_ok(p, k):
        err("params.k" if "params.k" in values else "params.p",
            f"Rellich mode requires k>2p (or k=1 with p=2); got k={k:g}, p={p:g}")
    if command == "minimize" and p is not None and not p <= 6:
        err("params.p", "minimize supports p <= 6")
    for key in ("sweep.eps0", "sweep.eps1"):
        if key in values and any(not 0 <= e <= 1 for e in values[key]):
            err(key, "epsilon entries must lie in [0, 1]")
    e0, e1 = values.get("sweep.eps0"), values.get("sweep.eps1")
    if e0 is not None and e1 is not None and len(e1) not in (1, len(e0)):
        err("sweep.eps1", "sweep.eps1 needs one entry or as many as sweep.eps0")
    if "sweep.window" in values and len(values["sweep.window"]) != 2:
        err("sweep.window", "sweep.window needs two numbers c1, c2")
    for key in ("seed", "jobs", "geometry.samples", "quotient.profiles", "identities.samples",
                "identities.depth", "minimize.levels"):
        if key in values and values[key] < (0 if key == "seed" else 1):
            err(key, f"{key} must be {'non-negative' if key == 'seed' else 'positive'}")
    for path in values.get("report.inputs", []):
        if not (Path(base_dir) / path).exists():
            err("report.inputs", f"referenced file does not exist: {path}")
    if errors:
        raise ConfigError(errors)
    if k is not None and "params.k" not in values:
        values["params.k"] = float(k)
    return RunConfig(command, values, lines, Path(base_dir))


# --- results ---------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    error_bound: float | None = None
    threshold: float | None = None
    detail: str = ""

    def to_dict(self):
        return {k: _clean(v) for k, v in self.__dict__.items()}


@dataclass
class Results:
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    hypotheses: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)   # file name -> csv text
    hypothesis_failure: str | None = None
    stdout: str | None = None

    def add(self, *args, **kw):
        self.checks.append(Check(*args, **kw))


def _clean(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def _exit_code(results: Results) -> int:
    if results.hypothesis_failure is not None:
        return EXIT_HYPOTHESIS
    return EXIT_OK if all(c.passed for c in results.checks) else EXIT_CHECK


def write_report(results: Results, config: RunConfig, out_dir, exit_code=None) -> Path:
    """JSON report plus any CSV tables; returns the report path.

    Everything except ``generated_at`` depends only on config and seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(results.tables.items()):
        with open(out / name, "w", newline="") as fh:
            fh.write(text)
    checks = sorted(results.checks, key=lambda c: c.name)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool": "rellich-lab",
        "version": __version__,
        "command": config.command,
        "config": _clean(config.echo()),
        "seed": config.seed,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "exit_code": _exit_code(results) if exit_code is None else exit_code,
        "hypothesis_failure": results.hypothesis_failure,
        "hypotheses": _clean(results.hypotheses),
        "summary": {"checks": len(checks), "passed": sum(c.passed for c in checks),
                    "failed": sum(not c.passed for c in checks)},
        "checks": [c.to_dict() for c in checks],
        "results": _clean(results.data),
        "tables": sorted(results.tables),
    }
    path = out / f"{config.command}_report.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _csv(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# --- commands --------------------------------------------------------------


def _params(cfg: RunConfig) -> InequalityParams:
    return InequalityParams(p=cfg.get("params.p"), k=cfg.get("params.k"), s=cfg.get("params.s"),
                            m=cfg.get("params.m"), D=cfg.get("params.D"),
                            alpha=cfg.get("params.alpha"), beta=cfg.get("params.beta"),
                            gamma=cfg.get("params.gamma"))


def _field(cfg: RunConfig):
    desc = {"kind": cfg.get("geometry.kind")}
    for key in ("N", "k", "radius", "period", "L", "R0", "vertices"):
        v = cfg.get(f"geometry.{key}")
        if v is not None:
            desc[key] = v
    return field_from_descriptor(desc)


def cmd_identities(cfg: RunConfig, res: Results):
    tol = cfg.get("identities.tol")
    ids = identity_residuals(cfg.get("identities.samples"),
                             range(1, cfg.get("identities.depth") + 1), cfg.seed)
    for key, v in sorted(ids["max"].items()):
        res.add(f"cascade.{key}", v <= tol, v, None, tol,
                "max relative residual over depths and samples")
    coef = identity_sweep(cfg.get("identities.coefficient_samples"), cfg.seed)
    res.add("coefficients.identity_sweep", coef["max_residual"] <= 1e-9, coef["max_residual"],
            None, 1e-9, "r0, r1, r2, r2' and P + |Q|^(p-2) Q = G at random (p, k)")
    quad = cascade_oracle(tol=tol)
    res.add("quadrature.cascade_oracle", quad["max_rel_error"] <= tol, quad["max_rel_error"],
            quad["max_error_bound"], tol, "integrals against the antiderivative X_i^beta/beta")
    res.data = {"cascade": ids, "coefficients": {k: v for k, v in coef.items() if k != "rows"},
                "quadrature": quad}
    rows = [(m, d["eta_identity"], d["eta_fd"], d["zeta_fd"], d["fd_error_estimate"])
            for m, d in sorted(ids["depths"].items())]
    res.tables["identities.csv"] = _csv(
        "cascade identities per depth m: max relative residual of t eta' vs (zeta+eta^2)/2, of "
        "t eta' vs extrapolated differences, of zeta' = theta/t vs extrapolated differences, "
        "and the extrapolation error estimate",
        ["m", "eta_identity", "eta_fd", "zeta_fd", "fd_error_estimate"], rows)


def cmd_constants(cfg: RunConfig, res: Results):
    params = _params(cfg)
    cs = constant_set(params).to_dict()
    cross = cross_check_classical()
    for name, v in sorted(cross["checks"].items()):
        res.add(f"classical.{name}", abs(v) <= 1e-12, v, None, 1e-12)
    res.data = {"constants": cs, "params": _params_echo(params), "classical": cross["checks"]}
    res.stdout = json.dumps(_clean(cs), indent=2, sort_keys=True, allow_nan=False)


def _params_echo(params):
    return dict(params.__dict__)


def cmd_check_geometry(cfg: RunConfig, res: Results):
    fld = _field(cfg)
    params = _params(cfg)
    sup = fld.sup_distance()
    if params.p == params.k + params.s:
        msg = "hypothesis violated: p = k + s is excluded"
        res.hypotheses = {"condition": {"passed": False, "message": msg}, "sup_d": sup}
        res.add("geometry.condition", False, None, None, None, msg)
        return
    samples = default_samples(fld, cfg.get("geometry.samples"), cfg.seed)
    rep = check_condition(fld, params.k, params.s, params.p, samples=samples)
    res.hypotheses = {"condition": rep.to_dict(), "sup_d": sup}
    res.add("geometry.condition", rep.passed, rep.min_value, None, 0.0, rep.message)
    res.data = {"condition": rep.to_dict(), "sup_d": sup}


def _hypotheses_for(fld, params, rellich):
    hyp = {"k": params.k, "s": params.s, "p": params.p}
    if rellich:
        model = radial_model(fld)
        hyp["rellich_mode"] = bool(rellich_mode_ok(params.p, model.k))
        hyp["equality_case"] = model.equality_case
        return hyp
    rep = check_condition(fld, params.k, params.s, params.p)
    hyp["condition"] = rep.to_dict()
    if not rep.passed:
        raise HypothesisError(f"sign condition fails: {rep.message}")
    return hyp


def cmd_quotient(cfg: RunConfig, res: Results):
    fld = _field(cfg)
    model = radial_model(fld)
    params = _params(cfg)
    func = cfg.get("quotient.functional")
    tol = cfg.get("quotient.tol")
    rellich = func != "hardy"
    res.hypotheses = _hypotheses_for(fld, params, rellich)
    if not rellich:
        params.validate("hardy")
    profiles = random_bumps(model, cfg.get("quotient.profiles"), cfg.seed,
                            cfg.get("quotient.degree"))
    D0 = model.sup_d if params.D is None else params.D

    def evaluate(prof, D):
        if func == "hardy":
            return hardy_deficit(prof, fld, params.with_D(D), tol=tol)
        if func == "rellich":
            return rellich_quotient(prof, fld, params.p, D=D, tol=tol)
        return j_functional(prof, fld, params.p, params.m, D=D, tol=tol)

    rows, reports = [], []
    search = cfg.get("quotient.search_D") and func != "rellich"
    for i, prof in enumerate(profiles):
        if search:
            rep, D = search_D(lambda D, prof=prof: evaluate(prof, D), D0)
        else:
            rep, D = evaluate(prof, D0), D0
        name = f"quotient.{func}.{i:04d}"
        thr = rep.coefficients.get("Qp") if func == "rellich" else 0.0
        res.add(name, bool(rep.holds), rep.value, rep.error_bound, thr,
                f"{rep.label}; D={D!r}; tolerance={rep.tolerance!r}")
        a, b = prof.support
        rows.append((i, a, b, rep.value, rep.error_bound, rep.tolerance, D, int(bool(rep.holds))))
        reports.append(rep.to_dict())
    res.hypotheses["D_used"] = sorted({r[6] for r in rows})
    res.hypotheses["psi_min"] = min((r["hypotheses"].get("psi_min", 1.0) for r in reports),
                                    default=1.0)
    res.data = {"functional": func, "reports": reports}
    res.tables["quotient.csv"] = _csv(
        f"{func} functional on seeded random bumps; columns: index, support ends a and b in "
        "the model coordinate, value (deficit, ratio or J), error_bound (quadrature), "
        "tolerance (10x error plus rounding), D (scale used), holds (1/0)",
        ["index", "a", "b", "value", "error_bound", "tolerance", "D", "holds"], rows)


def _schedules(cfg: RunConfig, mode: str, m: int):
    e0 = cfg.get("sweep.eps0")
    if e0 is None:
        return default_schedules(mode, m)
    e1 = cfg.get("sweep.eps1")
    if m == 0:
        return [(e,) for e in e0]
    if e1 is None:
        e1 = list(e0)
    if len(e1) == 1:
        e1 = e1 * len(e0)
    return [(a,) + (b,) * m for a, b in zip(e0, e1)]


def cmd_sweep(cfg: RunConfig, res: Results):
    fld = _field(cfg)
    params = _params(cfg)
    mode = cfg.get("sweep.mode")
    m = params.m if mode in ("improved", "power-probe") else cfg.values.get("params.m", 0)
    family = "hardy" if mode == "hardy" else "rellich"
    res.hypotheses = _hypotheses_for(fld, params, family == "rellich")
    schedules = _schedules(cfg, mode, m)
    window = cfg.get("sweep.window")
    spec = ExtremizerSpec(fld, params.p, m, schedules[0], params.D, None,
                          tuple(window) if window else None, family, params.s)
    table = epsilon_sweep(spec, schedules, mode, probe_eps=cfg.get("sweep.probe_eps"),
                          tol=cfg.get("sweep.tol"), jobs=cfg.jobs)
    tr = table.trend
    errs = [r.error_bound for r in table.rows]
    res.add("sweep.strictly_decreasing", tr["strictly_decreasing"],
            table.rows[-1].ratio, errs[-1], None, "ratio decreases along the schedule")
    if mode != "power-probe":
        res.add("sweep.lower_bound", tr["lower_bound_respected"], tr["min_margin"], max(errs),
                table.target, "every ratio >= target - 10 x error bound")
    if mode in ("plain", "hardy"):
        final = table.rows[-1].ratio
        res.add("sweep.final_within_5pct", final <= 1.05 * table.target, final, errs[-1],
                1.05 * table.target)
        res.add("sweep.truncation_sensitivity", tr["max_truncation_sensitivity"] < 1e-6,
                tr["max_truncation_sensitivity"], None, 1e-6)
    if mode == "improved":
        res.add("sweep.gap_shrink", tr["gap_shrink"] >= 0.3, tr["gap_shrink"], None, 0.3,
                "relative shrink of ratio - G from first to last schedule")
    res.hypotheses["D_used"] = spec.D
    res.data = {"sweep": table.to_dict()}
    res.tables["sweep.csv"] = table.csv_text()


def cmd_minimize(cfg: RunConfig, res: Results):
    fld = _field(cfg)
    params = _params(cfg)
    res.hypotheses = _hypotheses_for(fld, params, True)
    n, r_in, r_out = cfg.get("minimize.n"), cfg.get("minimize.r_in"), cfg.get("minimize.r_out")
    prob = build_problem(fld, params.p, n, r_in, r_out)
    sol = minimize_quotient(prob, seed=cfg.seed, method=cfg.get("minimize.method"))
    target = sol.target
    res.add("minimize.positive", sol.value > 0, sol.value, None, 0.0)
    lc = prob.laplacian_consistency()
    res.add("minimize.laplacian_consistency", lc < 1e-12, lc, None, 1e-12,
            "discrete Laplacian of x^2 relative to the stencil's rounding scale")
    if sol.method.startswith("shifted"):
        res.add("minimize.residual", sol.residual <= 1e-8, sol.residual, None, 1e-8)
    res.add("minimize.not_below_constant", sol.value >= 0.95 * target, sol.value, None,
            0.95 * target, "discrete minimum at most 5% below the sharp constant")
    res.data = {"solve": sol.to_dict(), "mesh_nodes": prob.n}
    res.tables["minimize_profile.csv"] = _csv(
        "minimizer samples; columns: x (model coordinate), d (distance to K), u (normalised "
        "so that max |u| = 1, clamped ends included)",
        ["x", "d", "u"], zip(prob.x, prob.d, sol.u / np.max(np.abs(sol.u))))
    levels = cfg.get("minimize.levels")
    if levels >= 2:
        tab = refine_study(fld, params.p, levels, n0=n, r_in0=r_in, seed=cfg.seed,
                           jobs=cfg.jobs)
        res.add("minimize.refine_nonincreasing", tab.trend["nonincreasing"],
                tab.rows[-1]["value"], None, None)
        res.data["refine"] = tab.to_dict()
        res.tables["minimize_refine.csv"] = tab.csv_text()


def cmd_report(cfg: RunConfig, res: Results):
    """Merge earlier JSON reports; checks keep their names, prefixed by source."""
    sources = []
    for path in cfg.get("report.inputs"):
        with open(cfg.base_dir / path) as fh:
            doc = json.load(fh)
        tag = f"{doc.get('command', 'unknown')}:{Path(path).name}"
        sources.append({"path": path, "command": doc.get("command"),
                        "exit_code": doc.get("exit_code"), "summary": doc.get("summary")})
        for c in doc.get("checks", []):
            res.add(f"{tag}.{c['name']}", bool(c["passed"]), c.get("value"),
                    c.get("error_bound"), c.get("threshold"), c.get("detail", ""))
        if doc.get("hypothesis_failure"):
            res.hypothesis_failure = f"{tag}: {doc['hypothesis_failure']}"
    res.data = {"sources": sources}


HANDLERS = {
    "identities": cmd_identities,
    "constants": cmd_constants,
    "check-geometry": cmd_check_geometry,
    "quotient": cmd_quotient,
    "sweep": cmd_sweep,
    "minimize": cmd_minimize,
    "report": cmd_report,
}


def run(config: RunConfig, out_dir=".") -> tuple[int, Results, Path]:
    """Execute one command; returns (exit code, results, report path)."""
    res = Results()
    try:
        HANDLERS[config.command](config, res)
    except HypothesisError as exc:
        res.hypothesis_failure = str(exc)
        res.checks = []
    except (ParameterError, GeometryError) as exc:
        res.hypothesis_failure = None
        res.checks.append(Check("setup", False, detail=str(exc)))
        path = write_report(res, config, out_dir, EXIT_USAGE)
        return EXIT_USAGE, res, path
    except (QuadratureError, SolverError) as exc:
        res.checks.append(Check("numerics", False, detail=f"{type(exc).__name__}: {exc}"))
    code = _exit_code(res)
    path = write_report(res, config, out_dir, code)
    return code, res, path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rellich-lab",
                 description="Numerical checks of weighted Hardy and Rellich inequalities.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="key=value config file")
    ap.add_argument("--out", default=".", help="output directory (default: .)")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--jobs", type=int, default=None, help="worker threads")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg_path = Path(args.config)
    try:
        text = cfg_path.read_text()
    except OSError as exc:
        print(f"rellich-lab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(text, args.command, cfg_path.parent)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"{cfg_path}: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            print("rellich-lab: --jobs must be positive", file=sys.stderr)
            return EXIT_USAGE
        cfg.values["jobs"] = args.jobs
    code, res, path = run(cfg, args.out)
    if res.stdout is not None:
        print(res.stdout)
    failed = [c for c in res.checks if not c.passed]
    if res.hypothesis_failure:
        print(f"hypothesis not satisfied: {res.hypothesis_failure}", file=sys.stderr)
    for c in sorted(failed, key=lambda c: c.name):
        print(f"FAILED {c.name}: {c.detail}", file=sys.stderr)
    print(f"{len(res.checks) - len(failed)}/{len(res.checks)} checks passed; report: {path}",
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
