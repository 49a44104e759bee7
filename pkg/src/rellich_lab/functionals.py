"""Hardy and Rellich functionals of radial profiles.

A profile is a function of the coordinate ``x`` of a :class:`RadialModel`.
Every functional is assembled from integrands of the form
``|u|^a |u'|^b |Lap u|^c d^e * (cascade polynomial)`` against the model's
volume density, and those integrands are evaluated from the logarithms of
their factors.  That lets the same code integrate ordinary bumps in ``x``
and the near-extremizers in ``s = log(X0/x)``, whose inner support can reach
``x ~ exp(-1e4)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .cascade import partial_products, x_chain_log
from .constants import (InequalityParams, ParameterError, hardy_constants, rellich_constants,
                        rellich_mode_ok)
from .geometry import RadialModel, check_condition
from .quadrature import QuadratureError, adaptive_gk, trapezoid_with_error, log_breakpoints

__all__ = [
    "ProfileError",
    "HypothesisError",
    "DegenerateProfileError",
    "ClosedFormProfile",
    "GridProfile",
    "LogProfile",
    "QuotientReport",
    "radial_model",
    "radial_laplacian",
    "random_bump",
    "random_bumps",
    "hardy_deficit",
    "rellich_quotient",
    "j_functional",
    "lemma_gap",
    "hardy_special_nd",
    "search_D",
]

_EPS = np.finfo(float).eps
DEFAULT_TOL = 1e-10
DENOMINATOR_FLOOR = 1e-300


class ProfileError(ValueError):
    pass


class HypothesisError(ValueError):
    """A hypothesis of the inequality (sign condition, psi > 0, mode) fails."""


class DegenerateProfileError(ArithmeticError):
    pass


def radial_model(field) -> RadialModel:
    return field if isinstance(field, RadialModel) else field.radial_model()


# --- profiles ---------------------------------------------------------------


def _richardson_derivative(f, x, h):
    def central(step):
        return (f(x + step) - f(x - step)) / (2 * step)
    return (4 * central(h / 2) - central(h)) / 3


@dataclass(frozen=True)
class ClosedFormProfile:
    """Profile with analytic ``u``, ``u'`` and ``u''`` supported on ``support``."""

    u: Callable
    du: Callable
    d2u: Callable
    support: tuple
    breakpoints: tuple = ()
    label: str = ""
    check: bool = True

    def __post_init__(self):
        a, b = (float(v) for v in self.support)
        if not (0.0 < a < b):
            raise ProfileError("support must be an interval [a, b] with 0 < a < b")
        object.__setattr__(self, "support", (a, b))
        if self.check:
            self._check_derivatives()

    def _check_derivatives(self, rtol=1e-6):
        a, b = self.support
        x = a + (b - a) * np.linspace(0.1, 0.9, 9)
        h = 1e-3 * (b - a)
        for name, f, df in (("u'", self.u, self.du), ("u''", self.du, self.d2u)):
            exact = np.asarray(df(x), dtype=float)
            approx = _richardson_derivative(f, x, h)
            scale = max(np.max(np.abs(exact)), np.max(np.abs(approx)), 1e-300)
            if np.max(np.abs(exact - approx)) > rtol * scale:
                raise ProfileError(f"supplied {name} disagrees with finite differences")

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return (np.asarray(self.u(x), dtype=float), np.asarray(self.du(x), dtype=float),
                np.asarray(self.d2u(x), dtype=float))

    def scaled(self, c: float) -> "ClosedFormProfile":
        return ClosedFormProfile(lambda x: c * self.u(x), lambda x: c * self.du(x),
                                 lambda x: c * self.d2u(x), self.support, self.breakpoints,
                                 self.label, check=False)


def _fd_weights(x):
    """First and second derivative weights of the 3-point Lagrange stencil at each node."""
    n = x.size
    j = np.clip(np.arange(n) - 1, 0, n - 3)
    x0, x1, x2 = x[j], x[j + 1], x[j + 2]
    xi = x
    den0 = (x0 - x1) * (x0 - x2)
    den1 = (x1 - x0) * (x1 - x2)
    den2 = (x2 - x0) * (x2 - x1)
    w1 = np.stack([(2 * xi - x1 - x2) / den0, (2 * xi - x0 - x2) / den1,
                   (2 * xi - x0 - x1) / den2])
    w2 = np.stack([2 / den0, 2 / den1, 2 / den2])
    return j, w1, w2


@dataclass(frozen=True)
class GridProfile:
    """Samples on a strictly increasing mesh; derivatives by 3-point differences."""

    x: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape:
            raise ProfileError("grid and values must be 1-D arrays of equal length")
        if x.size < 8:
            raise ProfileError("mesh too coarse: need at least 8 points across the support")
        if np.any(np.diff(x) <= 0) or x[0] <= 0:
            raise ProfileError("grid must be positive and strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", v)

    @property
    def support(self):
        return float(self.x[0]), float(self.x[-1])

    def derivatives(self):
        j, w1, w2 = _fd_weights(self.x)
        stencil = np.stack([self.values[j], self.values[j + 1], self.values[j + 2]])
        return self.values, (w1 * stencil).sum(axis=0), (w2 * stencil).sum(axis=0)

    def scaled(self, c: float) -> "GridProfile":
        return GridProfile(self.x, c * self.values, self.label)

    @classmethod
    def from_function(cls, f, x, label=""):
        x = np.asarray(x, dtype=float)
        return cls(x, np.asarray(f(x), dtype=float), label)


class LogProfile:
    """Profile evaluated in ``s = log(X0/x)`` through log-magnitudes.

    Subclasses set ``X0``, ``s_interval`` and ``breakpoints`` and implement
    ``log_values(s) -> (log|u|, log|u'|, log|Lap u|)``.  They are only valid
    on equality-case geometries, where ``d Lap d = k - 1`` on their support.
    """

    X0: float = 1.0
    s_interval: tuple = (0.0, 1.0)
    breakpoints: tuple = ()

    def log_values(self, s):
        raise NotImplementedError


def radial_laplacian(profile, field):
    """``x -> Lap u`` in the radial reduction of ``field``.

    Grid profiles return nodal finite-difference values, interpolated
    linearly between nodes.
    """
    model = radial_model(field)
    if isinstance(profile, GridProfile):
        u, du, d2u = profile.derivatives()
        lap = d2u + model.drift(profile.x) * du
        return lambda x: np.interp(x, profile.x, lap)

    def lap(x):
        _, du, d2u = profile.evaluate(x)
        return d2u + model.drift(x) * du
    return lap


def random_bump(rng: np.random.Generator, a: float, b: float, degree: int = 3,
                label: str = "") -> ClosedFormProfile:
    """``P(y) (y(1-y))^3`` with ``y = (x-a)/(b-a)`` and random polynomial P."""
    coef = rng.normal(size=degree + 1)
    coef[0] += 2.0 * np.sign(coef[0] or 1.0)
    window = Polynomial([0, 1, -1]) ** 3
    poly = Polynomial(coef) * window
    dpoly, d2poly = poly.deriv(), poly.deriv(2)
    L = b - a
    scale = 1.0 / np.max(np.abs(poly(np.linspace(0, 1, 201))))

    def inside(x):
        return (x > a) & (x < b)

    def make(pl, power):
        return lambda x: np.where(inside(x), scale * pl((np.asarray(x) - a) / L) / L**power, 0.0)
    return ClosedFormProfile(make(poly, 0), make(dpoly, 1), make(d2poly, 2), (a, b),
                             label=label, check=True)


def random_bumps(model: RadialModel, n: int, seed: int, degree: int = 3):
    """``n`` reproducible bumps with supports inside ``(0, sup x)``.

    Left endpoints are log-uniform down to ``1e-4 * length`` so that some
    bumps sit close to K; slab bumps may straddle the midpoint.
    """
    rng = np.random.default_rng(seed)
    top = model.length * (0.95 if model.kind == "ball" else 1.0)
    out = []
    for i in range(n):
        a = model.length * 10 ** rng.uniform(-4, -0.5)
        b = a + (top - a) * rng.uniform(0.05, 0.999)
        if model.kind == "slab" and rng.random() < 0.3:
            b = model.length * (1 - 10 ** rng.uniform(-4, -0.5))
        out.append(random_bump(rng, a, b, degree, label=f"bump seed={seed} index={i}"))
    return out


# --- sampled integrands -----------------------------------------------------


@dataclass
class _Samples:
    """Log-magnitudes of the profile and geometry at quadrature nodes."""

    log_u: np.ndarray
    log_du: np.ndarray
    log_lap: np.ndarray
    log_d: np.ndarray
    log_meas: np.ndarray
    d_lap_d: np.ndarray
    cascade_u: np.ndarray
    m: int
    _prods: np.ndarray | None = dc_field(default=None, repr=False)

    def power(self, a=0.0, b=0.0, c=0.0, e=0.0):
        """``|u|^a |u'|^b |Lap u|^c d^e`` times the volume density."""
        with np.errstate(invalid="ignore", over="ignore"):
            lg = self.log_meas + e * self.log_d
            for coef, arr in ((a, self.log_u), (b, self.log_du), (c, self.log_lap)):
                if coef:
                    lg = lg + coef * arr
            out = np.exp(lg)
        # 0 * inf from |u|^{p-2}|u'|^2 at zeros of u
        return np.where(np.isnan(out), 0.0, out)

    @property
    def prods(self):
        if self._prods is None:
            self._prods = partial_products(x_chain_log(self.cascade_u, self.m))
        return self._prods

    def eta(self):
        return self.prods.sum(axis=0)

    def zeta(self):
        return (self.prods**2).sum(axis=0)


def _log_abs(v):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(v))


def _linear_samples(model, x, u, du, d2u, D, m):
    d = model.distance(x)
    lap = d2u + model.drift(x) * du
    log_d = np.log(d)
    return _Samples(_log_abs(u), _log_abs(du), _log_abs(lap), log_d, np.log(model.weight(x)),
                    model.d_lap_d(x), np.maximum(math.log(D) - log_d, 0.0), m)


def _log_profile_samples(model, profile, s, D, m):
    log_x = math.log(profile.X0) - s
    lu, ldu, llap = profile.log_values(s)
    return _Samples(lu, ldu, llap, log_x, model.log_weight(log_x) + log_x,
                    np.full_like(s, model.k - 1.0), math.log(D) - log_x, m)


def _check_log_profile(model, profile, D):
    if not model.equality_case:
        raise ProfileError("log-coordinate profiles need an equality-case geometry")
    s0 = profile.s_interval[0]
    x_top = profile.X0 * math.exp(-s0)
    limit = 0.5 * model.length if model.kind == "slab" else model.length
    if x_top > limit * (1 + 1e-12) or D < x_top * (1 - 1e-12):
        raise ProfileError("log-coordinate profile extends beyond d <= min(D, sup d)")


def _integrate(profile, model, D, m, builder, tol=DEFAULT_TOL):
    """Integrate ``builder(samples) -> (n_comp, n)``; returns (values, errors, singular).

    ``singular`` holds the samples at the model's singular points (slab
    midpoint) when the profile's support contains them.
    """
    singular = []
    if isinstance(profile, LogProfile):
        _check_log_profile(model, profile, D)
        s0, s1 = profile.s_interval

        def f(s):
            return builder(_log_profile_samples(model, profile, s, D, m))
        pts = set(log_breakpoints(s0, s1))
        pts.update(b for b in profile.breakpoints if s0 < b < s1)
        res = adaptive_gk(f, sorted(pts), tol)
        return np.atleast_1d(res.value), np.atleast_1d(res.error), singular
    a, b = profile.support
    for pos, jump in model.singular_points:
        if a < pos < b:
            xs = np.array([pos])
            singular.append((jump, _linear_samples(model, xs, *_evaluate(profile, xs), D, m)))
    if isinstance(profile, GridProfile):
        x = profile.x
        u, du, d2u = profile.derivatives()
        vals = builder(_linear_samples(model, x, u, du, d2u, D, m))
        value, err = trapezoid_with_error(vals, x)
        return np.atleast_1d(value), np.atleast_1d(err), singular

    def g(x):
        return builder(_linear_samples(model, x, *profile.evaluate(x), D, m))
    pts = {a, b, *[p for p in profile.breakpoints if a < p < b],
           *[p for p, _ in model.singular_points if a < p < b]}
    if b / a > 10:
        pts.update(np.geomspace(a, b, int(math.log10(b / a)) * 4 + 1)[1:-1].tolist())
    res = adaptive_gk(g, sorted(pts), tol)
    return np.atleast_1d(res.value), np.atleast_1d(res.error), singular


def _evaluate(profile, x):
    if isinstance(profile, GridProfile):
        u, du, d2u = profile.derivatives()
        return (np.interp(x, profile.x, u), np.interp(x, profile.x, du),
                np.interp(x, profile.x, d2u))
    return profile.evaluate(x)


# --- reports ----------------------------------------------------------------


@dataclass
class QuotientReport:
    """Integrals, coefficients and the derived value of one functional."""

    functional: str
    value: float
    error_bound: float
    terms: dict
    errors: dict
    coefficients: dict = dc_field(default_factory=dict)
    params: dict = dc_field(default_factory=dict)
    hypotheses: dict = dc_field(default_factory=dict)
    D: float | None = None
    tolerance: float = 0.0
    holds: bool | None = None
    label: str = ""

    def to_dict(self):
        return {k: (float(v) if isinstance(v, np.floating) else v)
                for k, v in self.__dict__.items()}


def _finish(report: QuotientReport, signed_terms):
    """Attach the tolerance ``10 (sum |c| err + rounding)`` and the verdict."""
    rounding = 64 * _EPS * sum(abs(v) for v in signed_terms)
    report.tolerance = 10.0 * (report.error_bound + rounding)
    report.holds = bool(report.value >= -report.tolerance)
    return report


@lru_cache(maxsize=256)
def _condition_ok(field, k, s, p):
    rep = check_condition(field, k, s, p)
    return rep.passed, rep.message


def _require_condition(field, k, s, p):
    if isinstance(field, RadialModel):
        return "not checked (radial model given)"
    ok, msg = _condition_ok(field, k, s, p)
    if not ok:
        raise HypothesisError(f"sign condition (k+s-p)(d Lap d - k + 1) >= 0 fails: {msg}")
    return "passed"


def _default_D(model, D):
    sup = model.sup_d
    if D is None:
        return sup
    if D < sup * (1 - 1e-12):
        raise ParameterError(f"D = {D} is below sup d = {sup}")
    return float(D)


def _psi_check(profile, model, D, m, coefs):
    """Minimum of 1 + a eta + b eta^2 + c zeta over the profile support."""
    if not any(coefs):
        return 1.0
    if isinstance(profile, LogProfile):
        cu = math.log(D / profile.X0) + np.linspace(*profile.s_interval, 2001)
    else:
        a, b = profile.support
        x = np.concatenate([np.geomspace(a, b, 2001), [p for p, _ in model.singular_points
                                                       if a < p < b]])
        cu = np.maximum(np.log(D / model.distance(x)), 0.0)
    prods = partial_products(x_chain_log(cu, m))
    eta, zeta = prods.sum(axis=0), (prods**2).sum(axis=0)
    al, be, ga = coefs
    return float(np.min(1 + al * eta + be * eta**2 + ga * zeta))


# --- functionals ------------------------------------------------------------


def hardy_deficit(profile, field, params: InequalityParams, *, tol=DEFAULT_TOL,
                  check_hypotheses=True) -> QuotientReport:
    """LHS minus RHS of the weighted improved Hardy inequality.

    The LHS weight is ``d^s (1 + alpha eta + beta eta^2 + gamma zeta)``; the
    four RHS terms are reported separately.  ``psi <= 0`` somewhere on the
    support raises :class:`HypothesisError`.
    """
    model = radial_model(field)
    p, k, s, m = params.p, model.k, params.s, int(params.m)
    if params.k != k:
        raise ParameterError(f"params.k = {params.k} but the geometry has k = {k}")
    params.validate("hardy")
    D = _default_D(model, params.D)
    hyp = {"condition": _require_condition(field, k, s, p) if check_hypotheses else "skipped"}
    psi_min = _psi_check(profile, model, D, m, (params.alpha, params.beta, params.gamma))
    hyp["psi_min"] = psi_min
    if psi_min <= 0:
        raise HypothesisError(f"weight 1 + alpha eta + beta eta^2 + gamma zeta reaches "
                              f"{psi_min:.3e} <= 0; D = {D} is too small")

    def builder(sm):
        grad = sm.power(b=p, e=s)
        base = sm.power(a=p, e=s - p)
        if m == 0:
            z = np.zeros_like(base)
            return np.stack([grad, z, z, z, base, z, z, z])
        eta, zeta = sm.eta(), sm.zeta()
        return np.stack([grad, grad * eta, grad * eta**2, grad * zeta,
                         base, base * eta, base * eta**2, base * zeta])
    vals, errs, _ = _integrate(profile, model, D, max(m, 1), builder, tol)
    Hp, c1, c2, c3 = hardy_constants(params)
    lhs_c = (1.0, params.alpha, params.beta, params.gamma)
    rhs_c = (Hp, c1, c2, c3)
    lhs = sum(c * v for c, v in zip(lhs_c, vals[:4]))
    rhs = sum(c * v for c, v in zip(rhs_c, vals[4:]))
    names = ["grad", "grad_eta", "grad_eta2", "grad_zeta", "u", "u_eta", "u_eta2", "u_zeta"]
    coefs = lhs_c + rhs_c
    err = float(sum(abs(c) * e for c, e in zip(coefs, errs)))
    rep = QuotientReport(
        "hardy_deficit", float(lhs - rhs), err,
        terms={"lhs": float(lhs), "rhs": float(rhs),
               **{n: float(v) for n, v in zip(names, vals)},
               **{f"rhs_term_{i}": float(c * v) for i, (c, v) in enumerate(zip(rhs_c, vals[4:]))}},
        errors={n: float(e) for n, e in zip(names, errs)},
        coefficients={"Hp": Hp, "c1": c1, "c2": c2, "c3": c3},
        params=_params_echo(params, D), hypotheses=hyp, D=D,
        label=getattr(profile, "label", ""))
    return _finish(rep, [c * v for c, v in zip(coefs, vals)])


def _params_echo(params, D):
    return {"p": params.p, "k": params.k, "s": params.s, "m": params.m, "D": D,
            "alpha": params.alpha, "beta": params.beta, "gamma": params.gamma}


def _rellich_checks(model, p):
    if not rellich_mode_ok(p, model.k):
        raise HypothesisError(f"Rellich mode requires k>2p (or k=1 with p=2); k={model.k}, p={p}")
    if model.k == 1 and not model.kind in ("slab", "ball"):
        raise HypothesisError("k = 1 Rellich mode needs a convex domain with K its boundary")


def _rellich_integrals(profile, model, p, D, m, tol):
    def builder(sm):
        num = sm.power(c=p)
        den = sm.power(a=p, e=-2 * p)
        if m == 0:
            return np.stack([num, den])
        return np.vstack([num, den, den * sm.prods**2])
    vals, errs, _ = _integrate(profile, model, D, max(m, 1), builder, tol)
    return vals[: 2 + m], errs[: 2 + m]


def rellich_quotient(profile, field, p: float, *, D=None, tol=DEFAULT_TOL,
                     check_mode=True) -> QuotientReport:
    """``int |Lap u|^p / int |u|^p d^{-2p}`` with an error bar."""
    model = radial_model(field)
    if check_mode:
        _rellich_checks(model, p)
    D = _default_D(model, D)
    vals, errs = _rellich_integrals(profile, model, p, D, 0, tol)
    num, den = vals
    if den < DENOMINATOR_FLOOR:
        raise DegenerateProfileError("denominator below 1e-300: degenerate profile")
    ratio = num / den
    err = ratio * (errs[0] / max(num, DENOMINATOR_FLOOR) + errs[1] / den)
    Qp = rellich_constants(p, model.k)["Qp"]
    rep = QuotientReport(
        "rellich_quotient", float(ratio), float(err),
        terms={"numerator": float(num), "denominator": float(den)},
        errors={"numerator": float(errs[0]), "denominator": float(errs[1])},
        coefficients={"Qp": Qp}, params={"p": p, "k": model.k, "D": D}, D=D,
        label=getattr(profile, "label", ""))
    rep.tolerance = 10.0 * (err + 64 * _EPS * ratio)
    rep.holds = bool(ratio >= Qp - rep.tolerance)
    return rep


def j_functional(profile, field, p: float, m: int, *, D=None, tol=DEFAULT_TOL,
                 check_mode=True) -> QuotientReport:
    """``J_m = int|Lap u|^p - |Q|^p A_0 - G (A_1 + ... + A_m)`` with
    ``A_i = int |u|^p d^{-2p} X_1^2 ... X_i^2`` (``A_0`` without cascade)."""
    model = radial_model(field)
    if check_mode:
        _rellich_checks(model, p)
    if int(m) != m or m < 0:
        raise ParameterError("m must be a non-negative integer")
    m = int(m)
    D = _default_D(model, D)
    vals, errs = _rellich_integrals(profile, model, p, D, m, tol)
    c = rellich_constants(p, model.k)
    Qp, G = c["Qp"], c["G"]
    num, A = vals[0], vals[1:]
    cum = np.cumsum(A[1:]) if m else np.zeros(0)
    value = num - Qp * A[0] - (G * cum[-1] if m else 0.0)
    coefs = [1.0, Qp] + [G] * m
    err = float(sum(cf * e for cf, e in zip(coefs, errs)))
    terms = {"numerator": float(num), "A_0": float(A[0]),
             **{f"A_{i}": float(A[i]) for i in range(1, m + 1)},
             **{f"J_{i}": float(num - Qp * A[0] - (G * cum[i - 1] if i else 0.0))
                for i in range(m + 1)}}
    rep = QuotientReport(
        "j_functional", float(value), err, terms=terms,
        errors={"numerator": float(errs[0]), **{f"A_{i}": float(e)
                                                for i, e in enumerate(errs[1:])}},
        coefficients={"Qp": Qp, "G": G}, params={"p": p, "k": model.k, "m": m, "D": D}, D=D,
        label=getattr(profile, "label", ""))
    return _finish(rep, [cf * v for cf, v in zip(coefs, vals)])


# phi = lam d^a psi(t), psi = 1 + alpha eta + beta eta^2, t = d/D.  With
# E = t eta' = (zeta + eta^2)/2 and t E' = (theta + 2 eta E)/2:
#   d F'  = lam d^a (a psi + t psi')
#   d^2 F'' = lam d^a (a(a-1) psi + (2a-1) t psi' + t (t psi')')


def _phi_parts(sm, lam, a, alpha, beta):
    if alpha == 0 and beta == 0:
        one = np.ones_like(sm.log_d)
        return one, 0 * one, 0 * one
    prods = sm.prods
    sums = np.cumsum(prods, axis=0)
    eta = sums[-1]
    zeta = (prods**2).sum(axis=0)
    theta = 2.0 * (prods**2 * sums).sum(axis=0)
    E = 0.5 * (zeta + eta**2)
    tE = 0.5 * (theta + 2 * eta * E)
    psi = 1 + alpha * eta + beta * eta**2
    tpsi = alpha * E + 2 * beta * eta * E
    ttpsi = alpha * tE + 2 * beta * (E**2 + eta * tE)
    return psi, tpsi, ttpsi


def lemma_gap(profile, field, p: float, *, lam: float = 0.0, alpha: float = 0.0,
              beta: float = 0.0, m: int = 1, D=None, phi_power=None,
              tol=DEFAULT_TOL) -> QuotientReport:
    """Gap of the integral inequality behind the Rellich estimates.

    ``phi = lam d^a (1 + alpha eta_m + beta eta_m^2)`` with ``a = 2 - 2p`` by
    default.  The gap is ``int|Lap u|^p - p(p-1) int phi |u|^{p-2}|u'|^2 +
    int (Lap phi + (p-1)|phi|^{p/(p-1)}) |u|^p`` and is nonnegative for every
    u; the singular part of ``Lap d`` (slab midpoint) enters ``Lap phi``.
    """
    model = radial_model(field)
    D = _default_D(model, D)
    a = 2.0 - 2.0 * p if phi_power is None else float(phi_power)
    q = p / (p - 1.0)
    m = max(int(m), 1)

    def builder(sm):
        psi, tpsi, ttpsi = _phi_parts(sm, lam, a, alpha, beta)
        lap_t = sm.power(c=p)
        grad_t = sm.power(a=p - 2, b=2, e=a) * lam * psi
        # d^2 Lap phi / (lam d^a)
        lap_phi = a * (a - 1) * psi + (2 * a - 1) * tpsi + ttpsi + sm.d_lap_d * (a * psi + tpsi)
        u_t = sm.power(a=p, e=a - 2) * lam * lap_phi
        pow_t = sm.power(a=p, e=a * q) * (p - 1) * np.abs(lam * psi) ** q
        return np.stack([lap_t, grad_t, u_t, pow_t])
    vals, errs, singular = _integrate(profile, model, D, m, builder, tol)
    sing = 0.0
    for jump, sm in singular:
        psi, tpsi, _ = _phi_parts(sm, lam, a, alpha, beta)
        # jump of d' times F'(d) |u|^p at the kink
        sing += float(jump * (lam * (a * psi + tpsi) * sm.power(a=p, e=a - 1))[0])
    lap_t, grad_t, u_t, pow_t = vals
    value = lap_t - p * (p - 1) * grad_t + u_t + sing + pow_t
    err = float(errs[0] + p * (p - 1) * errs[1] + errs[2] + errs[3])
    rep = QuotientReport(
        "lemma_gap", float(value), err,
        terms={"laplacian": float(lap_t), "gradient": float(grad_t),
               "lap_phi": float(u_t + sing), "lap_phi_singular": sing, "phi_power": float(pow_t)},
        errors={n: float(e) for n, e in zip(["laplacian", "gradient", "lap_phi", "phi_power"],
                                            errs)},
        coefficients={"lambda": lam, "alpha": alpha, "beta": beta, "a": a},
        params={"p": p, "k": model.k, "m": m, "D": D}, D=D,
        label=getattr(profile, "label", ""))
    return _finish(rep, [lap_t, p * (p - 1) * grad_t, u_t, sing, pow_t])


def special_nd_coefficients(k: float, q: float, alpha: float, beta: float, gamma: float):
    """RHS coefficients (1, eta, eta^2, zeta) of the p = 2, s = 2 - 2q Hardy case."""
    c = k - 2 * q
    return (c**2 / 4, c**2 * alpha / 4, c**2 * beta / 4 + c * alpha / 4,
            0.25 + c * alpha / 4 + c**2 * gamma / 4)


def hardy_special_nd(profile, field, q: float, alpha: float = 0.0, beta: float = 0.0,
                     gamma: float = 0.0, m: int = 1, D=None, *,
                     tol=DEFAULT_TOL) -> QuotientReport:
    """The p = 2 Hardy inequality with weight ``d^{2-2q}`` and its own coefficients."""
    model = radial_model(field)
    k = model.k
    if k == 2 * q:
        raise ParameterError("requires k != 2q")
    params = InequalityParams(2.0, k, 2.0 - 2.0 * q, m, D, alpha, beta, gamma)
    rep = hardy_deficit(profile, field, params, tol=tol)
    coefs = special_nd_coefficients(k, q, alpha, beta, gamma)
    t = rep.terms
    rhs = sum(c * t[n] for c, n in zip(coefs, ["u", "u_eta", "u_eta2", "u_zeta"]))
    rep.functional = "hardy_special_nd"
    rep.value = float(t["lhs"] - rhs)
    rep.coefficients = dict(zip(["c0", "c1", "c2", "c3"], coefs))
    rep.params["q"] = q
    return _finish(rep, [t["lhs"], rhs])


def search_D(evaluate, D0: float, max_doublings: int = 40):
    """Double D from ``D0`` until ``evaluate(D)`` holds; returns (report, D).

    Hypothesis failures at a given D (psi <= 0) also trigger doubling.
    """
    D = float(D0)
    last_exc = None
    for _ in range(max_doublings + 1):
        try:
            rep = evaluate(D)
        except HypothesisError as exc:
            if "psi" not in str(exc) and "weight" not in str(exc):
                raise
            last_exc = exc
        else:
            if rep.holds:
                rep.hypotheses["D_search"] = D
                return rep, D
        D *= 2.0
    if last_exc is not None:
        raise last_exc
    return rep, D / 2.0
