"""Iterated-logarithm cascade and the aggregate sums built from it.

All quantities are functions of a scaled distance ``t`` in (0, 1].  Internally
everything is evaluated in the log coordinate ``u = log(1/t)`` so that points
as close to the singular set as ``t = exp(-1e4)`` (or much closer) are handled
without underflow.  With ``delta_1 = u`` and ``delta_{i+1} = log1p(delta_i)``
the cascade is ``X_i = 1 / (1 + delta_i)``.

Notation used throughout the package::

    P_i   = X_1 X_2 ... X_i              (partial products)
    S_i   = P_1 + ... + P_i
    eta   = S_m
    zeta  = P_1**2 + ... + P_m**2
    theta = t * d(zeta)/dt = 2 * sum_i P_i**2 * S_i
    t * d(eta)/dt = sum_i P_i * S_i

Derivatives are never taken numerically; they come from the chain rule
``t * d/dt X_i**b = b * P_i * X_i**b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "CascadeDomainError",
    "TruncationError",
    "CascadeValue",
    "EpsilonSchedule",
    "log_coordinate",
    "x_chain",
    "x_chain_log",
    "partial_products",
    "eta_zeta_theta",
    "eta_zeta_theta_log",
    "eta_log_derivative",
    "cascade",
    "chain_power_derivative",
    "chain_power_log_derivative",
    "g_h_eval",
    "g_h_log",
    "infinite_sums",
    "identity_residuals",
]


class CascadeDomainError(ValueError):
    """Scaled distance outside (0, 1]."""


class TruncationError(ArithmeticError):
    """An infinite series could not be certified within the term budget."""

    def __init__(self, message, partial=None, bound=None):
        super().__init__(message)
        self.partial = partial
        self.bound = bound


def log_coordinate(t):
    """Return ``u = log(1/t)`` after checking ``0 < t <= 1``."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0.0)) or np.any(t > 1.0):
        raise CascadeDomainError("scaled distance t must lie in (0, 1]")
    return -np.log(t)


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(~(u >= 0.0)) or np.any(np.isinf(u)):
        raise CascadeDomainError("log coordinate u must be finite and >= 0")
    return u


def _check_depth(m):
    if int(m) != m or m < 1:
        raise ValueError(f"depth m must be a positive integer, got {m!r}")
    return int(m)


def x_chain_log(u, m: int) -> np.ndarray:
    """X_1..X_m at log coordinate ``u``; result has shape ``(m,) + shape(u)``."""
    u = _check_u(u)
    m = _check_depth(m)
    out = np.empty((m,) + u.shape)
    delta = u.copy()
    for i in range(m):
        out[i] = 1.0 / (1.0 + delta)
        delta = np.log1p(delta)
    return out


def x_chain(t, m: int) -> np.ndarray:
    """X_1(t)..X_m(t), with ``X_1(t) = 1/(1 - log t)`` and ``X_i = X_1(X_{i-1})``."""
    return x_chain_log(log_coordinate(t), m)


def partial_products(x: np.ndarray) -> np.ndarray:
    """Rows ``P_i = X_1...X_i`` from the rows returned by :func:`x_chain_log`."""
    return np.cumprod(x, axis=0)


def eta_zeta_theta_log(u, m: int):
    """(eta_m, zeta_m, theta_m) at log coordinate ``u`` for finite depth ``m``."""
    prods = partial_products(x_chain_log(u, m))
    sums = np.cumsum(prods, axis=0)
    sq = prods * prods
    eta = sums[-1]
    zeta = sq.sum(axis=0)
    theta = 2.0 * (sq * sums).sum(axis=0)
    return eta, zeta, theta


def eta_zeta_theta(t, m):
    """(eta_m, zeta_m, theta_m) at scaled distance ``t``.

    ``m`` may be ``math.inf`` (or ``None``) for the infinite series; see
    :func:`infinite_sums` for the truncation rule.
    """
    if m is None or m == math.inf:
        res = infinite_sums(t)
        return res["eta"], res["zeta"], res["theta"]
    return eta_zeta_theta_log(log_coordinate(t), m)


def eta_log_derivative(u, m: int):
    """``t * d(eta_m)/dt`` evaluated term by term (no differencing)."""
    prods = partial_products(x_chain_log(u, m))
    sums = np.cumsum(prods, axis=0)
    return (prods * sums).sum(axis=0)


@dataclass(frozen=True)
class CascadeValue:
    t: float
    m: int
    x: tuple
    eta: float
    zeta: float
    theta: float


def cascade(t: float, m: int) -> CascadeValue:
    u = float(log_coordinate(t))
    x = x_chain_log(u, m)
    eta, zeta, theta = eta_zeta_theta_log(u, m)
    return CascadeValue(float(t), int(m), tuple(float(v) for v in x), float(eta),
                        float(zeta), float(theta))


def chain_power_log_derivative(u, i: int, beta: float):
    """``t * d/dt X_i(t)**beta = beta * X_1...X_{i-1} * X_i**(1+beta)``."""
    if beta == 0:
        raise ValueError("beta = 0 is excluded from the differentiation rule")
    x = x_chain_log(u, i)
    return beta * partial_products(x)[-1] * x[-1] ** beta


def chain_power_derivative(t, i: int, beta: float):
    """d/dt of ``X_i(t)**beta``; see :func:`chain_power_log_derivative`."""
    u = log_coordinate(t)
    return chain_power_log_derivative(u, i, beta) / np.asarray(t, dtype=float)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exponent perturbations eps_0, eps_1, ..., eps_m of the test families.

    Entries equal to 1 are allowed: they switch the matching cascade factor off.
    """

    eps: tuple

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        if len(eps) < 1:
            raise ValueError("schedule needs at least eps_0")
        if any(not (0.0 <= e <= 1.0) for e in eps):
            raise ValueError(f"schedule entries must lie in [0, 1], got {eps}")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def zeros(cls, m: int) -> "EpsilonSchedule":
        return cls((0.0,) * (m + 1))

    @property
    def depth(self) -> int:
        return len(self.eps) - 1

    def __len__(self):
        return len(self.eps)

    def __getitem__(self, i):
        return self.eps[i]


def _as_schedule(schedule, m):
    if not isinstance(schedule, EpsilonSchedule):
        schedule = EpsilonSchedule(tuple(schedule))
    if schedule.depth != m:
        raise ValueError(f"schedule has {len(schedule)} entries, depth {m} needs {m + 1}")
    return schedule


def g_h_log(u, m: int, schedule):
    """(g, h) at log coordinate ``u``.

    ``g = eps_0 + sum_i (eps_i - 1) P_i`` and
    ``h = sum_{i<=j} (eps_j - 1) P_i P_j``, which equals ``t * dg/dt``.
    """
    schedule = _as_schedule(schedule, m)
    u = _check_u(u)
    if m == 0:
        return np.full(u.shape, schedule[0]), np.zeros(u.shape)
    prods = partial_products(x_chain_log(u, m))
    sums = np.cumsum(prods, axis=0)
    coef = (np.asarray(schedule.eps[1:]) - 1.0).reshape((m,) + (1,) * u.ndim)
    g = schedule[0] + (coef * prods).sum(axis=0)
    h = (coef * prods * sums).sum(axis=0)
    return g, h


def g_h_eval(t, m: int, schedule):
    return g_h_log(log_coordinate(t), m, schedule)


# --- infinite depth -------------------------------------------------------
#
# Tail certificate.  Once delta_M < 1, log1p(d) >= d - d^2/2 gives
# 1/delta_{M+n} <= a + n b with a = 1/delta_M, b = (1 + delta_M)/2, hence
# prod_{j=1..n} X_{M+j} <= exp(1/(2ab)) ((a+b)/(a+(n+1)b))**(1/b).  Summing
# the resulting power law gives the bounds below.


def _tail_bounds(prod_m, sum_m, delta_m):
    a = 1.0 / delta_m
    b = 0.5 * (1.0 + delta_m)
    q = 1.0 / b
    eta_tail = prod_m * np.exp(0.5 / (a * b)) * (a + b) / (b * (q - 1.0))
    zeta_tail = prod_m**2 * np.exp(1.0 / (a * b)) * (a + b) / (b * (2.0 * q - 1.0))
    theta_tail = 2.0 * (sum_m + eta_tail) * zeta_tail
    return eta_tail, zeta_tail, theta_tail


def _kahan(total, comp, term):
    y = term - comp
    t = total + y
    return t, (t - total) - y


def infinite_sums(t, *, tol: float = 1e-14, max_terms: int = 1_000_000,
                  require_eta: bool = False) -> dict:
    """eta, zeta, theta for infinite depth with certified truncation.

    Terms are added until the certified tails of zeta and theta fall below
    ``tol`` relative to the partial sums.  The eta tail decays only like 1/M,
    so it is reported (``eta_bound``) and enforced only when ``require_eta``.
    Raises :class:`TruncationError` when the budget runs out first.
    """
    u = _check_u(log_coordinate(t))
    if np.any(u == 0.0):
        raise CascadeDomainError("the infinite series diverge at t = 1")
    delta = u.copy()
    prod = np.ones_like(u)
    s = np.zeros_like(u)
    eta = np.zeros_like(u)
    zeta = np.zeros_like(u)
    theta = np.zeros_like(u)
    inf = np.full(u.shape, np.inf)
    bounds = (inf, inf, inf)
    # compensated sums: a plain running sum over ~1e5 terms drifts by more
    # than the certified tails
    cs = np.zeros_like(u)
    cz = np.zeros_like(u)
    ct = np.zeros_like(u)
    for n in range(1, max_terms + 1):
        prod = prod / (1.0 + delta)
        s, cs = _kahan(s, cs, prod)
        eta = s
        zeta, cz = _kahan(zeta, cz, prod * prod)
        theta, ct = _kahan(theta, ct, 2.0 * prod * prod * s)
        delta = np.log1p(delta)
        if n % 64 and n < max_terms:
            continue
        ok = delta < 1.0
        if not np.all(ok):
            continue
        bounds = _tail_bounds(prod, s, delta)
        done = (bounds[1] <= tol * zeta) & (bounds[2] <= tol * theta)
        if require_eta:
            done &= bounds[0] <= tol * eta
        if np.all(done):
            break
    else:
        raise TruncationError(
            f"infinite cascade sums not certified to {tol:g} within {max_terms} terms",
            partial=(eta, zeta, theta), bound=bounds)
    return {
        "eta": eta + 0.5 * bounds[0], "zeta": zeta + 0.5 * bounds[1],
        "theta": theta + 0.5 * bounds[2], "eta_bound": 0.5 * bounds[0],
        "zeta_bound": 0.5 * bounds[1], "theta_bound": 0.5 * bounds[2],
        "terms": n,
    }


# --- identity harness -----------------------------------------------------


def _eta_zeta_any_u(u, m):
    # same recursion without the domain check: the aggregates are analytic
    # across u = 0, which lets central differences straddle t = 1
    delta = np.asarray(u, dtype=float).copy()
    prod = np.ones_like(delta)
    s = np.zeros_like(delta)
    zeta = np.zeros_like(delta)
    for _ in range(m):
        prod = prod / (1.0 + delta)
        s = s + prod
        zeta = zeta + prod * prod
        delta = np.log1p(delta)
    return s, zeta


def _ridders(f, u, h0, n_tab=10, con=1.4):
    """Central differences extrapolated to h -> 0 (Ridders' tableau), vectorised.

    Returns (derivative, error estimate).
    """
    h = np.asarray(h0, dtype=float).copy()
    con2 = con * con
    prev = [(f(u + h) - f(u - h)) / (2 * h)]
    best = prev[0].copy()
    err = np.full(best.shape, np.inf)
    for _ in range(1, n_tab):
        h = h / con
        row = [(f(u + h) - f(u - h)) / (2 * h)]
        fac = con2
        for j in range(1, len(prev) + 1):
            row.append((row[j - 1] * fac - prev[j - 1]) / (fac - 1.0))
            fac *= con2
            e = np.maximum(np.abs(row[j] - row[j - 1]), np.abs(row[j] - prev[j - 1]))
            better = e <= err
            best = np.where(better, row[j], best)
            err = np.where(better, e, err)
        stop = np.abs(row[-1] - prev[-1]) >= 2 * err
        prev = row
        if np.all(stop):
            break
    return best, err


def identity_residuals(n: int = 200, depths=range(1, 7), seed: int = 0) -> dict:
    """Relative residuals of the cascade derivative identities at random t.

    For each depth m three comparisons are made at ``n`` uniform samples of
    t in (0, 1):

    * ``eta_identity``: term-wise ``t eta'`` against ``(zeta + eta^2)/2``;
    * ``eta_fd``: term-wise ``t eta'`` against extrapolated differences;
    * ``zeta_fd``: ``theta / t`` against extrapolated differences of zeta.
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, n)
    t = np.where(t > 0.0, t, 0.5)
    u = -np.log(t)
    h0 = 0.1 * (1.0 + u)
    out = {"n": int(n), "seed": int(seed), "depths": {}}
    worst = {"eta_identity": 0.0, "eta_fd": 0.0, "zeta_fd": 0.0}
    for m in depths:
        eta, zeta, theta = eta_zeta_theta_log(u, m)
        t_eta = eta_log_derivative(u, m)
        # d/du = -t d/dt
        fd_eta, e_eta = _ridders(lambda v: _eta_zeta_any_u(v, m)[0], u, h0)
        fd_zeta, e_zeta = _ridders(lambda v: _eta_zeta_any_u(v, m)[1], u, h0)
        res = {
            "eta_identity": float(np.max(np.abs(t_eta - 0.5 * (zeta + eta * eta)) / t_eta)),
            "eta_fd": float(np.max(np.abs(-fd_eta - t_eta) / t_eta)),
            "zeta_fd": float(np.max(np.abs(-fd_zeta / t - theta / t) / (theta / t))),
            "fd_error_estimate": float(max(np.max(e_eta / t_eta), np.max(e_zeta / theta))),
        }
        out["depths"][int(m)] = res
        for key in worst:
            worst[key] = max(worst[key], res[key])
    out["max"] = worst
    return out
