"""Near-extremizer families and epsilon sweeps.

The Rellich family is ``u = phi(d) d^e X_1^{(eps_1-1)/p} ... X_m^{(eps_m-1)/p}``
with ``e = (2p - k + eps_0)/p`` and ``phi`` an outer window equal to 1 near K.
Writing ``v = d^e Y`` and ``a = (beta + g)/p`` (``beta = 2p - k``) one has
``d v'/v = a`` and ``d^2 Lap v / v = a(a + k - 2) + h/p`` on equality-case
geometries, which for the Rellich exponent equals
``-(Q + R g/p - g^2/p^2 - h/p)``.  All integrals are taken in
``s = log(D/d)`` where every integrand carries the common factor
``W = (volume density) d^{eps_0 - k} Y^p``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cascade import EpsilonSchedule, partial_products, x_chain_log
from .constants import ParameterError, hardy_H, rellich_constants
from .functionals import GridProfile, LogProfile, radial_model
from .quadrature import QuadratureError, adaptive_gk, log_breakpoints

__all__ = [
    "ExtremizerSpec",
    "ExtremizerFamily",
    "SweepRow",
    "SweepTable",
    "build_rellich_family",
    "build_hardy_family",
    "integrability_class",
    "family_integrals",
    "epsilon_sweep",
    "default_schedules",
    "MODES",
]

MODES = ("plain", "improved", "power-probe", "hardy")
TRUNCATION_DECADES = 1


def integrability_class(beta) -> str:
    """``int phi^p d^{-k+b0} X_1^{1+b1} ... X_m^{1+bm}`` near K: finite or infinite.

    Finite exactly when the first nonzero entry of ``beta`` is positive.
    """
    for b in beta:
        if b != 0:
            return "finite" if b > 0 else "infinite"
    return "infinite"


@dataclass(frozen=True)
class ExtremizerSpec:
    """Geometry, exponents and cutoffs of one family member.

    ``s_in = log(D / r_in)`` is the inner truncation in log coordinate (r_in
    itself underflows for the smallest eps_0); ``None`` picks ``30/eps_0``.
    ``window = (c1, c2)``: phi = 1 for d <= c1 and 0 for d >= c2, smooth in
    log d in between.
    """

    geometry: object
    p: float
    m: int
    schedule: EpsilonSchedule
    D: float | None = None
    s_in: float | None = None
    window: tuple | None = None
    family: str = "rellich"
    s: float = 0.0

    def __post_init__(self):
        sched = self.schedule
        if not isinstance(sched, EpsilonSchedule):
            sched = EpsilonSchedule(tuple(sched))
            object.__setattr__(self, "schedule", sched)
        if sched.depth != self.m:
            raise ParameterError(f"schedule has {len(sched)} entries, depth {self.m} needs "
                                 f"{self.m + 1}")
        if self.family not in ("rellich", "hardy"):
            raise ParameterError(f"unknown family {self.family!r}")
        model = radial_model(self.geometry)
        sup = model.sup_d
        D = sup if self.D is None else float(self.D)
        if D < sup * (1 - 1e-12):
            raise ParameterError("D must be at least sup d")
        c1, c2 = self.window if self.window is not None else (1e-3 * sup, sup)
        if not (0 < c1 < c2 <= sup):
            raise ParameterError("window needs 0 < c1 < c2 <= sup d")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "window", (float(c1), float(c2)))
        if self.s_in is None:
            eps0 = sched[0]
            if eps0 <= 0:
                raise ParameterError("eps_0 = 0 needs an explicit inner truncation s_in")
            object.__setattr__(self, "s_in", 30.0 / eps0 + math.log(D / c1))
        if not self.s_in > math.log(D / c1):
            raise ParameterError("inner truncation r_in must lie inside the window")

    @property
    def r_in(self) -> float:
        """Inner radius (0.0 when it underflows)."""
        return self.D * math.exp(-self.s_in)

    def with_schedule(self, schedule, s_in=None) -> "ExtremizerSpec":
        return ExtremizerSpec(self.geometry, self.p, self.m, schedule, self.D, s_in,
                              self.window, self.family, self.s)


def _window(log_d, c1, c2):
    """phi, d phi', d^2 phi'' of a quintic smoothstep in log d.

    A window that is smooth on the logarithmic scale keeps its own
    contribution to the Laplacian of order 1/log(c2/c1).
    """
    w = math.log(c2 / c1)
    y = np.clip((log_d - math.log(c1)) / w, 0.0, 1.0)
    phi = 1.0 - y**3 * (10 - 15 * y + 6 * y**2)
    # derivatives in l = log d: d phi' = phi_l, d^2 phi'' = phi_ll - phi_l
    phi_l = -30.0 * y**2 * (1 - y) ** 2 / w
    phi_ll = -60.0 * y * (1 - y) * (1 - 2 * y) / w**2
    return phi, phi_l, phi_ll - phi_l


class ExtremizerFamily(LogProfile):
    """One member ``u = phi d^e Y`` of a near-extremizer family."""

    def __init__(self, spec: ExtremizerSpec):
        model = radial_model(spec.geometry)
        if not model.equality_case:
            raise ParameterError("closed-form family needs d Lap d = k - 1 (equality case)")
        self.spec = spec
        self.model = model
        self.p = float(spec.p)
        self.k = float(model.k)
        self.m = int(spec.m)
        self.eps = np.asarray(spec.schedule.eps)
        if spec.family == "rellich":
            self.beta = 2 * self.p - self.k
        else:
            self.beta = self.p - self.k - spec.s
        self.D = spec.D
        self.X0 = spec.D
        c1, c2 = spec.window
        self.s_interval = (math.log(spec.D / c2), spec.s_in)
        self.breakpoints = (math.log(spec.D / c1),)
        self.label = f"{spec.family} eps={tuple(float(e) for e in self.eps)}"

    @property
    def exponent(self) -> float:
        return (self.beta + self.eps[0]) / self.p

    def _core(self, s):
        s = np.asarray(s, dtype=float)
        log_d = math.log(self.D) - s
        phi, dphi, d2phi = _window(log_d, *self.spec.window)
        if self.m:
            x = x_chain_log(s, self.m)
            prods = partial_products(x)
            sums = np.cumsum(prods, axis=0)
            coef = (self.eps[1:] - 1.0)[:, None]
            g = self.eps[0] + (coef * prods).sum(axis=0)
            h = (coef * prods * sums).sum(axis=0)
            log_y = (coef * np.log(x)).sum(axis=0) / self.p
        else:
            prods = np.zeros((0,) + s.shape)
            x = prods
            g = np.full(s.shape, self.eps[0])
            h = np.zeros(s.shape)
            log_y = np.zeros(s.shape)
        a = (self.beta + g) / self.p
        b_v = a * (a + self.k - 2) + h / self.p
        b_full = phi * b_v + dphi * (2 * a + self.k - 1) + d2phi
        grad = phi * a + dphi
        return dict(log_d=log_d, phi=phi, dphi=dphi, d2phi=d2phi, x=x, prods=prods, g=g, h=h,
                    log_y=log_y, a=a, b_full=b_full, grad=grad)

    def log_values(self, s):
        c = self._core(s)
        e = self.exponent
        base = c["log_y"] + e * c["log_d"]
        with np.errstate(divide="ignore"):
            return (base + np.log(c["phi"]), base - c["log_d"] + np.log(np.abs(c["grad"])),
                    base - 2 * c["log_d"] + np.log(np.abs(c["b_full"])))

    def evaluate_linear(self, x):
        """Signed (u, u', Lap u) at radii ``x`` (no underflow protection)."""
        x = np.asarray(x, dtype=float)
        c = self._core(np.log(self.D / x))
        v = np.exp(c["log_y"]) * x**self.exponent
        return c["phi"] * v, v * c["grad"] / x, v * c["b_full"] / x**2

    def to_grid(self, n: int = 4000, x_lo=None) -> GridProfile:
        """Samples of ``u`` on a mesh graded geometrically toward K."""
        c1, c2 = self.spec.window
        lo = x_lo if x_lo is not None else c1 * 1e-3
        x = np.geomspace(lo, c2, n)
        return GridProfile(x, self.evaluate_linear(x)[0], self.label)

    def log_weight(self, s):
        """log W: volume density times ``d^{eps_0 - k} Y^p`` in the s-measure."""
        c = self._core(s)
        return self._log_w(c)

    def _log_w(self, c):
        log_d = c["log_d"]
        return (self.model.log_weight(log_d) + log_d + (self.eps[0] - self.k) * log_d
                + self.p * c["log_y"])

    def _rellich_consts(self):
        p = self.p
        c = rellich_constants(p, self.k)
        Q, R = c["Q"], c["R"]
        qt = abs(Q) ** (p - 2) * Q
        c2 = 0.5 * p * (p - 1) * abs(Q) ** (p - 2)
        return Q, R, qt, c2, c["P"], c["G"]

    def j_boundary(self, s):
        """Boundary term of the integrated-by-parts J row at the inner end."""
        c = self._core(np.atleast_1d(np.asarray(s, dtype=float)))
        _, R, qt, _, P, _ = self._rellich_consts()
        w = np.exp(self._log_w(c))
        return float((-(c["phi"] ** self.p) * w * (qt * R + P * c["g"]))[0])

    def integrands(self, s, probe_eps=None):
        """Stacked integrands against ds.

        Rellich rows: numerator, A_0, J_{m-1}, A_1..A_m and, when requested,
        the power probe ``phi^p P_m^2 X_m^{-eps}``.  Hardy rows: numerator,
        denominator.

        The J row uses ``W g = -dW/ds`` and ``W (g^2 + h) = -d(W g)/ds``: the
        parts of ``|Lap u|^p - |Q|^p |u|^p d^{-2p}`` linear in g and in
        ``g^2 + h`` are integrated exactly (window terms plus
        :meth:`j_boundary`), which leaves a pointwise remainder of size
        ``W X_1^2`` instead of a cancellation between terms of size 1/eps_0.
        """
        c = self._core(s)
        w = np.exp(self._log_w(c))
        p = self.p
        phi = c["phi"]
        phi_p = phi**p
        if self.spec.family == "hardy":
            return np.stack([w * np.abs(c["grad"]) ** p, w * phi_p])
        Q, R, qt, c2, P, G = self._rellich_consts()
        g, h = c["g"], c["h"]
        num = np.abs(c["b_full"]) ** p
        subtract = phi_p * (qt * R * g + P * (g * g + h))
        inner = phi > 0.5
        safe_phi = np.where(inner, phi, 1.0)
        tau0 = R * g / p - g * g / p**2 - h / p
        omega = -(c["dphi"] * (2 * c["a"] + self.k - 1) + c["d2phi"]) / safe_phi
        tau = tau0 + omega
        core = (_taylor_remainder(tau / Q, p) * abs(Q) ** p
                + c2 * (tau0 - R * g / p) * (tau0 + R * g / p) - G * h
                + p * qt * omega + c2 * omega * (2 * tau0 + omega))
        diff = np.where(inner, phi_p * core, num - np.abs(phi * Q) ** p - subtract)
        # d(phi^p)/ds = -p phi^{p-1} (d phi')
        dphi_p = -p * phi ** (p - 1) * c["dphi"]
        jrow = diff + dphi_p * (qt * R + P * g)
        rows = [w * num, w * phi_p]
        if self.m:
            sq = c["prods"] ** 2
            jrow = jrow - G * phi_p * sq[:-1].sum(axis=0)
            rows.append(w * jrow)
            rows.extend(w * phi_p * sq)
            if probe_eps is not None:
                rows.append(w * phi_p * sq[-1] * c["x"][-1] ** (-probe_eps))
        else:
            rows.append(w * jrow)
        return np.vstack(rows)


def _taylor_remainder(x, p, n_terms=24):
    """``|1+x|^p - 1 - p x - p(p-1)/2 x^2`` without cancellation for small x."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.1
    xs = np.where(small, x, 0.0)
    coef = p * (p - 1) / 2
    term = np.zeros_like(xs)
    power = xs * xs
    for n in range(3, n_terms + 3):
        coef *= (p - n + 1) / n
        power = power * xs
        term = term + coef * power
    direct = np.abs(1 + x) ** p - 1 - p * x - 0.5 * p * (p - 1) * x * x
    return np.where(small, term, direct)


def build_rellich_family(spec: ExtremizerSpec, grid_nodes: int = 4000):
    """Closed-form family on equality-case geometries; Grid samples elsewhere."""
    if spec.family != "rellich":
        spec = ExtremizerSpec(spec.geometry, spec.p, spec.m, spec.schedule, spec.D, spec.s_in,
                              spec.window, "rellich")
    model = radial_model(spec.geometry)
    if model.equality_case:
        return ExtremizerFamily(spec)
    return _grid_family(spec, model, grid_nodes)


def build_hardy_family(spec: ExtremizerSpec) -> ExtremizerFamily:
    """``phi d^{(p-k-s+eps_0)/p} Y``; its Hardy quotient tends to |H|^p."""
    if spec.family != "hardy":
        spec = ExtremizerSpec(spec.geometry, spec.p, spec.m, spec.schedule, spec.D, spec.s_in,
                              spec.window, "hardy", spec.s)
    return ExtremizerFamily(spec)


def _grid_family(spec, model, n):
    """Samples of ``phi d^e Y`` on a geometric mesh (no closed-form Laplacian)."""
    c1, c2 = spec.window
    lo = max(spec.r_in, c1 * 1e-6)
    x = np.geomspace(lo, c2, n)
    d = model.distance(x)
    s = np.log(spec.D / d)
    p, k = spec.p, model.k
    eps = np.asarray(spec.schedule.eps)
    log_y = np.zeros_like(s)
    if spec.m:
        xs = x_chain_log(s, spec.m)
        log_y = ((eps[1:] - 1.0)[:, None] * np.log(xs)).sum(axis=0) / p
    phi = _window(np.log(d), c1, c2)[0]
    values = phi * np.exp(log_y) * d ** ((2 * p - k + eps[0]) / p)
    values[-2:] = 0.0
    return GridProfile(x, values, f"rellich grid eps={tuple(eps)}")


# --- integrals and sweeps ---------------------------------------------------


def family_integrals(fam: ExtremizerFamily, probe_eps=None, tol=1e-10):
    """Integrals of :meth:`ExtremizerFamily.integrands` on ``[s0, s_in]`` and the
    extra contribution of ``[s_in, s_in + ln 10]`` (r_in -> r_in/10).

    The J row receives its boundary term from :meth:`ExtremizerFamily.j_boundary`.
    """
    s0, s1 = fam.s_interval
    s2 = s1 + TRUNCATION_DECADES * math.log(10.0)

    def f(s):
        return fam.integrands(s, probe_eps)
    pts = set(log_breakpoints(s0, s1))
    pts.update(b for b in fam.breakpoints if s0 < b < s1)
    main = adaptive_gk(f, sorted(pts), tol, budget=4_000_000)
    extra = adaptive_gk(f, [s1, s2], 1e-6, atol=1e-300)
    value, error, more = main.value.copy(), main.error, extra.value.copy()
    if fam.spec.family == "rellich":
        b1, b2 = fam.j_boundary(s1), fam.j_boundary(s2)
        value[2] += b1
        more[2] += b2 - b1
    return value, error, more


@dataclass
class SweepRow:
    schedule: tuple
    numerator: float
    denominators: dict
    ratio: float
    error_bound: float
    truncation_sensitivity: float
    s_in: float
    extra: dict = dc_field(default_factory=dict)


def _ratio_from(fam, mode, vals, errs, Qp, G):
    """(ratio, error, numerator, denominators) for one mode."""
    if mode == "hardy":
        num, den = vals
        r = num / den
        return r, r * (errs[0] / num + errs[1] / den), num, {"A_0": den}
    num, A0, J = vals[:3]
    A = vals[3:3 + fam.m]
    dens = {"A_0": A0, **{f"A_{i + 1}": v for i, v in enumerate(A)}, "J": J}
    eJ = errs[2]
    if mode == "plain":
        # J row holds J_{m-1}; J_0 adds back G (A_1 + ... + A_{m-1})
        J0 = J + G * float(np.sum(A[: max(fam.m - 1, 0)]))
        r = Qp + J0 / A0
        return r, eJ / A0 + abs(J0) * errs[1] / A0**2, num, dens
    if mode == "improved":
        den, eden = A[-1], errs[2 + fam.m]
    else:
        den, eden = vals[3 + fam.m], errs[3 + fam.m]
        dens["probe"] = den
    r = J / den
    return r, eJ / den + abs(J) * eden / den**2, num, dens


def _target(mode, fam, probe_eps):
    p, k = fam.p, fam.k
    if mode == "hardy":
        return abs(hardy_H(p, k, fam.spec.s)) ** p
    c = rellich_constants(p, k)
    if mode == "plain":
        return c["Qp"]
    if mode == "improved":
        return c["G"]
    return 0.0


def _check_order(schedules):
    for prev, cur in zip(schedules, schedules[1:]):
        a, b = np.asarray(prev.eps), np.asarray(cur.eps)
        if np.any(b > a) or not np.any(b < a):
            raise ParameterError(
                f"sweep schedules must shrink componentwise in order: {prev.eps} -> {cur.eps}")


@dataclass
class SweepTable:
    mode: str
    target: float
    rows: list
    trend: dict
    warnings: list
    params: dict

    def to_dict(self):
        return {"mode": self.mode, "target": self.target, "params": self.params,
                "trend": self.trend, "warnings": self.warnings,
                "rows": [dict(r.__dict__, schedule=list(r.schedule)) for r in self.rows]}

    def csv_text(self) -> str:
        den_keys = sorted({k for r in self.rows for k in r.denominators})
        buf = io.StringIO()
        buf.write(f"# epsilon sweep, mode={self.mode}, target={self.target!r}; columns: "
                  "schedule (eps_0..eps_m separated by ';'), numerator = int |Lap u|^p "
                  "(Hardy: weighted gradient term), denominators, ratio, error_bound "
                  "(quadrature), truncation_sensitivity (relative change for r_in -> "
                  "r_in/10), s_in = log(D/r_in)\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["schedule", "numerator", *den_keys, "ratio", "error_bound",
                    "truncation_sensitivity", "s_in"])
        for r in self.rows:
            w.writerow([";".join(repr(float(e)) for e in r.schedule), repr(r.numerator),
                        *[repr(float(r.denominators.get(k, float("nan")))) for k in den_keys],
                        repr(r.ratio), repr(r.error_bound), repr(r.truncation_sensitivity),
                        repr(r.s_in)])
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def default_schedules(mode: str, m: int = 0):
    """Schedules used when a sweep is requested without an explicit list.

    The improved ratio converges like ``eps_0^{eps_1}``, so its schedule keeps
    ``eps_0 = eps_1 exp(-1/(4 eps_1))`` far below ``eps_1``.
    """
    if mode in ("plain", "hardy"):
        return [(e,) * (m + 1) for e in (0.2, 0.1, 0.05, 0.02, 0.01)]
    if mode == "improved":
        return [(e1 * math.exp(-0.25 / e1),) + (e1,) * m for e1 in (0.4, 0.2, 0.1, 0.05, 0.025)]
    if mode == "power-probe":
        return [(e0,) + (0.1,) * m for e0 in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)]
    raise ParameterError(f"unknown sweep mode {mode!r}")


def _evaluate_point(spec, schedule, mode, probe_eps, s_in, tol):
    fam = ExtremizerFamily(spec.with_schedule(schedule, s_in))
    vals, errs, extra = family_integrals(fam, probe_eps if mode == "power-probe" else None, tol)
    c = rellich_constants(fam.p, fam.k) if mode != "hardy" else {"Qp": 0.0, "G": 0.0}
    r, e, num, dens = _ratio_from(fam, mode, vals, errs, c["Qp"], c["G"])
    r2, _, _, _ = _ratio_from(fam, mode, vals + extra, errs, c["Qp"], c["G"])
    sens = abs(r2 - r) / max(abs(r), 1e-300)
    return SweepRow(tuple(float(x) for x in schedule.eps), float(num),
                    {k: float(v) for k, v in dens.items()}, float(r), float(e), float(sens),
                    float(fam.spec.s_in))


def epsilon_sweep(spec: ExtremizerSpec, schedules, mode: str = "plain", *,
                  probe_eps: float = 0.5, s_in=None, tol: float = 1e-10,
                  jobs: int = 1) -> SweepTable:
    """Ratios of the family along ``schedules``.

    Modes: ``plain`` (Lap quotient vs |Q|^p), ``improved`` (J_{m-1}/A_m vs G),
    ``power-probe`` (J_{m-1} over the A_m integral with X_m^{2-eps}; target 0),
    ``hardy`` (weighted Hardy quotient vs |H|^p).  ``s_in`` may be a sequence
    of per-schedule inner truncations; by default each uses ``30/eps_0``.
    """
    if mode not in MODES:
        raise ParameterError(f"unknown sweep mode {mode!r}")
    if mode in ("improved", "power-probe") and spec.m < 1:
        raise ParameterError(f"mode {mode} needs depth m >= 1")
    if mode == "hardy" and spec.family != "hardy":
        spec = ExtremizerSpec(spec.geometry, spec.p, spec.m, spec.schedule, spec.D, spec.s_in,
                              spec.window, "hardy", spec.s)
    schedules = [s if isinstance(s, EpsilonSchedule) else EpsilonSchedule(tuple(s))
                 for s in schedules]
    if not schedules:
        raise ParameterError("empty sweep")
    _check_order(schedules)
    s_ins = list(s_in) if isinstance(s_in, (list, tuple)) else [s_in] * len(schedules)

    def run(i):
        return _evaluate_point(spec, schedules[i], mode, probe_eps, s_ins[i], tol)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, range(len(schedules))))
    else:
        rows = [run(i) for i in range(len(schedules))]
    fam0 = ExtremizerFamily(spec.with_schedule(schedules[0], s_ins[0]))
    target = _target(mode, fam0, probe_eps)
    trend, warnings = _trend(rows, target, mode, fam0, probe_eps)
    params = {"p": spec.p, "k": fam0.k, "m": spec.m, "D": spec.D, "window": list(spec.window),
              "geometry": radial_model(spec.geometry).kind, "family": spec.family,
              "probe_eps": probe_eps if mode == "power-probe" else None}
    return SweepTable(mode, target, rows, trend, warnings, params)


def _denominator_beta(mode, fam, probe_eps):
    """Integrability exponents of the sweep denominator in the eps -> 0 limit."""
    m = fam.m
    if mode in ("plain", "hardy") or m == 0:
        return (0.0,) + (-2.0,) * m
    beta = [0.0] * (m + 1)
    if mode == "power-probe":
        beta[m] = -probe_eps
    return tuple(beta)


def _trend(rows, target, mode, fam, probe_eps):
    ratios = np.array([r.ratio for r in rows])
    errs = np.array([r.error_bound for r in rows])
    gaps = ratios - target
    key = "probe" if mode == "power-probe" else (f"A_{fam.m}" if mode == "improved" else "A_0")
    dens = np.array([r.denominators[key] for r in rows])
    trend = {
        "strictly_decreasing": bool(np.all(np.diff(ratios) < 0)),
        "first_gap": float(gaps[0]),
        "last_gap": float(gaps[-1]),
        "gap_shrink": float(1 - gaps[-1] / gaps[0]) if gaps[0] != 0 else 0.0,
        "min_margin": float(np.min(gaps + 10 * errs)),
        "lower_bound_respected": bool(np.all(gaps >= -10 * errs)),
        "max_truncation_sensitivity": float(max(r.truncation_sensitivity for r in rows)),
        "denominator_growth": float(dens[-1] / dens[0]),
        "denominator_class_limit": integrability_class(_denominator_beta(mode, fam, probe_eps)),
    }
    warnings = []
    if trend["denominator_class_limit"] == "infinite" and trend["denominator_growth"] < 10:
        warnings.append("denominator grew by less than 10x across the sweep: the inner "
                        "truncation may hide the divergence that drives the infimum")
    if trend["max_truncation_sensitivity"] > 1e-6:
        warnings.append("truncation sensitivity above 1e-6; decrease r_in")
    return trend, warnings
