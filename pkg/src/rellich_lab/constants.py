"""Closed-form constants of the weighted Hardy and improved Rellich inequalities."""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass

__all__ = [
    "ParameterError",
    "InequalityParams",
    "ConstantSet",
    "hardy_H",
    "hardy_constants",
    "rellich_Q",
    "rellich_constants",
    "coefficient_identities",
    "identity_sweep",
    "cross_check_classical",
    "constant_set",
]


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class InequalityParams:
    """Every knob of the Hardy and Rellich statements.

    ``D=None`` means "use sup d of the geometry".
    """

    p: float
    k: float
    s: float = 0.0
    m: int = 1
    D: float | None = None
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def validate(self, mode: str = "hardy") -> "InequalityParams":
        errors = []
        if not self.p > 1:
            errors.append("p must exceed 1")
        if self.k < 1:
            errors.append("k must be at least 1")
        if int(self.m) != self.m or self.m < 0:
            errors.append("m must be a non-negative integer")
        if self.D is not None and not self.D > 0:
            errors.append("D must be positive")
        if mode == "hardy" and self.p == self.k + self.s:
            errors.append("Hardy mode requires p != k + s")
        if mode == "rellich" and not rellich_mode_ok(self.p, self.k):
            errors.append("Rellich mode requires k>2p (or k=1 with p=2)")
        if errors:
            raise ParameterError("; ".join(errors))
        return self

    def with_D(self, D: float) -> "InequalityParams":
        return InequalityParams(self.p, self.k, self.s, self.m, D, self.alpha, self.beta,
                                self.gamma)


def rellich_mode_ok(p: float, k: float) -> bool:
    """Either the codimension regime k > 2p or the convex-boundary case k=1, p=2."""
    return k > 2 * p or (k == 1 and p == 2)


def _spow(x: float, a: float) -> float:
    """|x|**a with the convention 0**a = 0 for a > 0."""
    return abs(x) ** a if x != 0 else 0.0


def hardy_H(p: float, k: float, s: float = 0.0) -> float:
    return (k + s - p) / p


def hardy_constants(params: InequalityParams):
    """(|H|^p, c1, c2, c3): coefficients of d^{s-p}|u|^p times 1, eta, eta^2, zeta."""
    p, k, s = params.p, params.k, params.s
    if p == k + s:
        raise ParameterError("p = k + s makes H vanish")
    H = hardy_H(p, k, s)
    Hp = _spow(H, p)
    Hm2 = abs(H) ** (p - 2)
    a, b, c = params.alpha, params.beta, params.gamma
    c1 = Hp * a
    c2 = Hp * b + Hm2 * H * a / 2
    c3 = (p - 1) / (2 * p) * Hm2 + Hm2 * H * a / 2 + Hp * c
    return Hp, c1, c2, c3


def rellich_Q(p: float, k: float) -> float:
    return (p - 1) * k * (k - 2 * p) / p**2


def _G(p, k, Q):
    return (p - 1) / (2 * p**3) * abs(Q) ** (p - 2) * (k**2 * (p - 1) ** 2 + (k - 2 * p) ** 2)


def rellich_constants(p: float, k: float, *, strict: bool = False) -> dict:
    """Q, R, P, G and the optimal choices lambda = Q^(p-1), alpha*.

    Signed Q is allowed (k < 2p) unless ``strict``; lambda and alpha* are then
    reported as None because they only make sense for Q > 0.
    """
    if not p > 1:
        raise ParameterError("p must exceed 1")
    Q = rellich_Q(p, k)
    if Q == 0:
        raise ParameterError("k = 2p gives Q = 0")
    if strict and not k > 2 * p:
        raise ParameterError("requires k>2p")
    R = (2 * k - p * k - 2 * p) / p
    Qm2 = abs(Q) ** (p - 2)
    P = -Qm2 * Q / p + (p - 1) / (2 * p) * Qm2 * R**2
    G = _G(p, k, Q)
    lam = alpha_star = None
    if Q > 0:
        lam = Q ** (p - 1)
        alpha_star = (p - 1) * (p * k - 2 * k + 2 * p) / (p**2 * Q)
    return {"Q": Q, "Qp": abs(Q) ** p, "R": R, "P": P, "G": G, "lambda": lam,
            "alpha_star": alpha_star}


def _r_coefficients(p, k, lam, alpha, beta):
    """The potential coefficients r0, r1, r2, r2' for a free choice of lambda, alpha, beta."""
    lp = abs(lam) ** (p / (p - 1))
    c = (p * k - 2 * k + 2 * p) / (2 * p)
    kk = (p - 1) * k * (k - 2 * p) / p
    r0 = (p - 1) * (k * (k - 2 * p) / p * lam - lp)
    r1 = kk * alpha * lam - p * alpha * lp
    r2 = (c * alpha * lam + kk * beta * lam
          - (p - 1) * (p * beta / (p - 1) + p * alpha**2 / (2 * (p - 1) ** 2)) * lp)
    r2p = ((p - 1) / p + c * alpha) * lam
    return r0, r1, r2, r2p


def coefficient_identities(p: float, k: float, beta: float = 0.0) -> dict:
    """Residuals of the coefficient identities at lambda = Q^(p-1), alpha = alpha*.

    Residuals are scaled by Q^p; every entry should vanish for any beta.
    """
    if not k > 2 * p:
        raise ParameterError("requires k>2p")
    c = rellich_constants(p, k)
    Q, G = c["Q"], c["G"]
    r0, r1, r2, r2p = _r_coefficients(p, k, c["lambda"], c["alpha_star"], beta)
    r2p_claim = (p - 1) / p * Q ** (p - 2) * (Q + (p * k - 2 * k + 2 * p) ** 2 / (2 * p**2))
    scale = abs(Q) ** p
    res = {
        "r0": (r0 - Q**p) / scale,
        "r1": r1 / scale,
        "r2": r2 / scale,
        "r2_prime": (r2p - r2p_claim) / scale,
        "P_plus_Q_minus_G": (c["P"] + abs(Q) ** (p - 2) * Q - G) / scale,
    }
    return {"p": p, "k": k, "beta": beta, "r2_prime_value": r2p, "G": G,
            "residuals": res, "max_residual": max(abs(v) for v in res.values())}


def identity_sweep(n: int = 50, seed: int = 0, p_range=(1.0, 5.0), k_margin: float = 0.1,
                   k_span: float = 15.0) -> dict:
    """Coefficient identities at ``n`` random (p, k, beta) with k > 2p + k_margin."""
    rng = random.Random(seed)
    rows = []
    for _ in range(n):
        p = rng.uniform(*p_range)
        while p <= 1.0:
            p = rng.uniform(*p_range)
        k = 2 * p + k_margin + rng.uniform(0.0, k_span)
        beta = rng.uniform(-5.0, 5.0)
        rows.append(coefficient_identities(p, k, beta))
    return {"n": n, "seed": seed, "rows": rows,
            "max_residual": max(r["max_residual"] for r in rows)}


def _rel(value, expected):
    return (value - expected) / abs(expected) if expected else value


def cross_check_classical(ps=(1.5, 2.0, 3.0), dims=range(5, 13)) -> dict:
    """Compare the general constants with the classical special cases.

    Returns named relative residuals, all expected to vanish up to rounding.
    """
    checks = {}
    for p in ps:
        one_dim = (p - 1) ** p * (2 * p - 1) ** p / p ** (2 * p)
        checks[f"rellich_1d_p{p:g}"] = _rel(abs(rellich_Q(p, 1)) ** p, one_dim)
    for N in dims:
        checks[f"rellich_point_p2_N{N}"] = _rel(rellich_Q(2, N) ** 2, N**2 * (N - 4) ** 2 / 16)
        checks[f"improved_point_p2_N{N}"] = _rel(rellich_constants(2, N)["G"],
                                                 1 + N * (N - 4) / 8)
        for p in ps:
            if N != 2 * p:
                dh = ((p - 1) * N * abs(N - 2 * p) / p**2) ** p
                checks[f"davies_hinz_p{p:g}_N{N}"] = _rel(abs(rellich_Q(p, N)) ** p, dh)
    convex = rellich_constants(2, 1)
    checks["convex_Q2"] = _rel(convex["Q"] ** 2, 9 / 16)
    checks["convex_G"] = _rel(convex["G"], 5 / 8)
    # gradient form with k=1, p=2, s=0: both coefficients 1/4
    Hp, _, _, c3 = hardy_constants(InequalityParams(p=2, k=1))
    checks["convex_gradient_leading"] = _rel(Hp, 0.25)
    checks["convex_gradient_improvement"] = _rel(c3, 0.25)
    return {"checks": checks, "max_residual": max(abs(v) for v in checks.values())}


@dataclass(frozen=True)
class ConstantSet:
    H: float | None
    Hp: float | None
    hardy_c1: float | None
    hardy_c2: float | None
    hardy_c3: float | None
    Q: float
    Qp: float
    R: float
    P: float
    G: float
    lam: float | None
    alpha_star: float | None
    r0: float | None
    r1: float | None
    r2: float | None
    r2_prime: float | None

    def to_dict(self):
        return asdict(self)


def constant_set(params: InequalityParams) -> ConstantSet:
    p, k = params.p, params.k
    if p != k + params.s:
        Hp, c1, c2, c3 = hardy_constants(params)
        H = hardy_H(p, k, params.s)
    else:
        H = Hp = c1 = c2 = c3 = None
    rc = rellich_constants(p, k)
    r = (None,) * 4
    if rc["lambda"] is not None:
        r = _r_coefficients(p, k, rc["lambda"], rc["alpha_star"], params.beta)
    return ConstantSet(H, Hp, c1, c2, c3, rc["Q"], rc["Qp"], rc["R"], rc["P"], rc["G"],
                       rc["lambda"], rc["alpha_star"], *r)
