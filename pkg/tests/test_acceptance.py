"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import json
import re
import time

import numpy as np
import pytest

from rellich_lab.cascade import identity_residuals
from rellich_lab.cli import main
from rellich_lab.constants import InequalityParams, cross_check_classical, identity_sweep
from rellich_lab.extremizers import ExtremizerSpec, default_schedules, epsilon_sweep
from rellich_lab.functionals import (hardy_deficit, j_functional, radial_model, random_bumps,
                                     search_D)
from rellich_lab.geometry import AffineSubspace, BallBoundary, PointSet, SlabBoundary
from rellich_lab.quadrature import cascade_oracle
from rellich_lab.varsolve import build_problem, minimize_quotient

POINT_Q2 = 25 / 16
POINT_G = 13 / 8
SLAB_Q2 = 9 / 16


def test_criterion_1_cascade_identities(acceptance_line):
    t0 = time.perf_counter()
    res = identity_residuals(200, range(1, 7), seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(res["max"].values())
    ok = worst <= 1e-10 and elapsed < 1.0
    acceptance_line(1, ok, f"max rel residual {worst:.2e} (<= 1e-10), {elapsed:.2f} s (< 1 s)")
    assert worst <= 1e-10
    assert elapsed < 1.0


def test_criterion_2_constant_cross_checks(acceptance_line):
    res = cross_check_classical()
    worst = res["max_residual"]
    acceptance_line(2, worst <= 1e-12,
                    f"{len(res['checks'])} checks, max rel residual {worst:.2e} (<= 1e-12)")
    assert worst <= 1e-12


def test_criterion_3_coefficient_identities(acceptance_line):
    t0 = time.perf_counter()
    res = identity_sweep(50, seed=0, p_range=(1.0, 5.0), k_margin=0.1)
    elapsed = time.perf_counter() - t0
    worst = res["max_residual"]
    ps = [r["p"] for r in res["rows"]]
    ks = [r["k"] for r in res["rows"]]
    assert all(1 < p <= 5 for p in ps) and all(k > 2 * p + 0.1 for p, k in zip(ps, ks))
    acceptance_line(3, worst <= 1e-9 and elapsed < 1.0,
                    f"max residual {worst:.2e} (<= 1e-9), {elapsed:.3f} s (< 1 s)")
    assert worst <= 1e-9
    assert elapsed < 1.0


def test_criterion_4_quadrature_oracle(acceptance_line):
    t0 = time.perf_counter()
    res = cascade_oracle(depths=(1, 2, 3, 4), betas=(0.25, 0.5, 1.0, 2.0), tol=1e-10)
    elapsed = time.perf_counter() - t0
    worst = res["max_rel_error"]
    acceptance_line(4, worst <= 1e-10 and elapsed < 5.0,
                    f"{len(res['rows'])} cases, max rel error {worst:.2e} (<= 1e-10), "
                    f"{elapsed:.2f} s (< 5 s)")
    assert worst <= 1e-10
    assert elapsed < 5.0


GEOMETRIES = {
    "point N=5": PointSet(5),
    "point N=9": PointSet(9),
    "subspace k=5 N=7": AffineSubspace(7, 5),
    "slab": SlabBoundary(1.0),
    "ball N=2": BallBoundary(2),
}


def test_criterion_5_inequality_direction(acceptance_line):
    t0 = time.perf_counter()
    failures = []
    values = []
    for name, field in GEOMETRIES.items():
        model = radial_model(field)
        for i, prof in enumerate(random_bumps(model, 200, seed=1)):
            m = i % 5
            prm = InequalityParams(p=2, k=model.k, m=m)
            for label, evaluate in (
                    ("hardy", lambda D: hardy_deficit(prof, field, prm.with_D(D))),
                    ("J", lambda D: j_functional(prof, field, 2, m, D=D))):
                rep, _ = search_D(evaluate, model.sup_d)
                values.append(rep.value)
                if rep.value < -10 * rep.error_bound:
                    failures.append(f"{name} {label} bump {i}: {rep.value:.3e}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120
    acceptance_line(5, ok, f"{len(values)} evaluations over {len(GEOMETRIES)} geometries, "
                           f"{len(failures)} below -10 x error bound, {elapsed:.1f} s (< 120 s)")
    assert not failures, failures[:5]
    assert elapsed < 120


def test_criterion_6_plain_sharpness(acceptance_line):
    t0 = time.perf_counter()
    spec = ExtremizerSpec(PointSet(5), 2.0, 0, (0.2,))
    schedules = [(e,) for e in (0.2, 0.1, 0.05, 0.02, 0.01)]
    table = epsilon_sweep(spec, schedules, "plain")
    elapsed = time.perf_counter() - t0
    ratios = np.array([r.ratio for r in table.rows])
    errs = np.array([r.error_bound for r in table.rows])
    sens = max(r.truncation_sensitivity for r in table.rows)
    decreasing = bool(np.all(np.diff(ratios) < 0))
    final_ok = ratios[-1] <= 1.05 * POINT_Q2
    lower_ok = bool(np.all(ratios >= POINT_Q2 - 10 * errs))
    ok = decreasing and final_ok and lower_ok and sens < 1e-6 and elapsed < 30
    acceptance_line(6, ok, f"ratios {np.array2string(ratios, precision=5)}, final/(25/16) "
                           f"{ratios[-1] / POINT_Q2:.4f} (<= 1.05), sensitivity {sens:.1e} "
                           f"(< 1e-6), {elapsed:.1f} s (< 30 s)")
    assert decreasing
    assert final_ok
    assert lower_ok
    assert sens < 1e-6
    assert elapsed < 30


def test_criterion_7_improved_sharpness(acceptance_line):
    spec = ExtremizerSpec(PointSet(5), 2.0, 1, (0.1, 0.1))
    table = epsilon_sweep(spec, default_schedules("improved", 1), "improved")
    ratios = np.array([r.ratio for r in table.rows])
    errs = np.array([r.error_bound for r in table.rows])
    gaps = ratios - POINT_G
    decreasing = bool(np.all(np.diff(ratios) < 0))
    shrink = 1 - gaps[-1] / gaps[0]
    lower_ok = bool(np.all(ratios >= POINT_G - 10 * errs))
    probe = epsilon_sweep(spec, default_schedules("power-probe", 1), "power-probe",
                          probe_eps=0.5)
    pratios = np.array([r.ratio for r in probe.rows])
    probe_dec = bool(np.all(np.diff(pratios) < 0))
    ok = decreasing and shrink >= 0.3 and lower_ok and probe_dec
    acceptance_line(7, ok, f"ratios {np.array2string(ratios, precision=5)}, gap shrink "
                           f"{shrink:.2f} (>= 0.30), probe ratios "
                           f"{np.array2string(pratios, precision=3)}")
    assert decreasing
    assert shrink >= 0.3
    assert lower_ok
    assert probe_dec


def _timed_solve(field, n, r_in):
    t0 = time.perf_counter()
    res = minimize_quotient(build_problem(field, 2.0, n, r_in))
    return res, time.perf_counter() - t0


def test_criterion_8_variational_bracket(acceptance_line):
    slab, t_a = _timed_solve(SlabBoundary(1.0), 4000, 1e-6)
    slab2, t_b = _timed_solve(SlabBoundary(1.0), 8000, 1e-6)
    rel = slab.value / SLAB_Q2
    change = abs(slab2.value - slab.value) / slab.value
    slab_ok = 0.95 <= rel <= 1.5 and change < 0.01
    point_vals, times = [], [t_a, t_b]
    for r_in in (1e-2, 1e-3, 1e-4, 1e-5):
        res, t = _timed_solve(PointSet(5), None, r_in)
        point_vals.append(res.value)
        times.append(t)
    point_vals = np.array(point_vals)
    point_ok = bool(np.all(point_vals >= 0.95 * POINT_Q2)) and bool(
        np.all(np.diff(point_vals) < 0))
    ok = slab_ok and point_ok and max(times) < 120
    acceptance_line(8, ok, f"slab n=4000 value/(9/16) {rel:.4f} in [0.95, 1.5], doubling change "
                           f"{change:.1e} (< 1e-2); point values "
                           f"{np.array2string(point_vals, precision=4)} >= "
                           f"{0.95 * POINT_Q2:.4f}; slowest solve {max(times):.2f} s (< 120 s)")
    assert 0.95 <= rel <= 1.5
    assert change < 0.01
    assert point_ok
    assert max(times) < 120


CONFIGS = {
    "identities": "identities.samples=50\n",
    "constants": "params.p=2\nparams.k=5\n",
    "check-geometry": "geometry.kind=slab\nparams.p=2\n",
    "quotient": "geometry.kind=point\ngeometry.N=5\nparams.p=2\nquotient.functional=j\n"
                "quotient.profiles=5\n",
    "sweep": "geometry.kind=point\ngeometry.N=5\nparams.p=2\nparams.m=0\n"
             "sweep.eps0=0.2,0.1\n",
    "minimize": "geometry.kind=slab\nparams.p=2\nminimize.n=1000\nminimize.r_in=1e-3\n"
                "minimize.levels=2\n",
}


def _strip(text):
    return re.sub(r'"generated_at": "[^"]*"', '"generated_at": ""', text)


def test_criterion_9_determinism(tmp_path, acceptance_line):
    differing = []
    compared = 0
    for command, body in CONFIGS.items():
        cfg = tmp_path / f"{command}.cfg"
        cfg.write_text(f"command={command}\nseed=3\n{body}")
        outs = []
        for rep in range(2):
            out = tmp_path / f"{command}_{rep}"
            main([command, "--config", str(cfg), "--out", str(out)])
            outs.append({p.name: _strip(p.read_text()) for p in sorted(out.iterdir())})
        compared += len(outs[0])
        if outs[0] != outs[1]:
            differing.append(command)
    # the merging command reads the reports just produced
    merged = tmp_path / "report.cfg"
    inputs = ",".join(f"{c}_0/{c}_report.json" for c in CONFIGS)
    merged.write_text(f"command=report\nreport.inputs={inputs}\n")
    reports = []
    for rep in range(2):
        out = tmp_path / f"merged_{rep}"
        main(["report", "--config", str(merged), "--out", str(out)])
        reports.append(_strip((out / "report_report.json").read_text()))
    compared += 1
    if reports[0] != reports[1]:
        differing.append("report")
    assert json.loads(reports[0])["summary"]["checks"] > 0
    acceptance_line(9, not differing, f"{compared} output files compared over "
                                      f"{len(CONFIGS) + 1} commands, differing: "
                                      f"{differing or 'none'}")
    assert not differing
