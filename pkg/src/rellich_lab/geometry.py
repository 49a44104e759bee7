"""Distance fields with closed-form d, grad d and Laplacian of d.

Each field also exposes a :class:`RadialModel`, the one-dimensional reduction
used by the functionals: a coordinate ``x`` on ``(0, length)``, the distance
``d(x)``, a volume density ``weight(x)`` and a drift ``c(x)`` such that the
Laplacian of a profile ``u(x)`` is ``u'' + c u'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import gamma as gamma_fn

__all__ = [
    "GeometryError",
    "FieldValue",
    "RadialModel",
    "PointSet",
    "AffineSubspace",
    "BallBoundary",
    "SlabBoundary",
    "ConvexPolygonBoundary",
    "ConditionReport",
    "eval_field",
    "check_condition",
    "sup_distance",
    "field_from_descriptor",
    "sphere_area",
]

MEDIAL_TOL = 1e-12
# normalised grid-quadrature tolerance for the weak-form test
WEAK_TOL = 1e-4


class GeometryError(ValueError):
    pass


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n (n >= 1; n = 1 gives 2 points)."""
    return 2.0 * math.pi ** (n / 2) / gamma_fn(n / 2)


@dataclass(frozen=True)
class FieldValue:
    d: np.ndarray
    grad: np.ndarray
    lap: np.ndarray
    medial: np.ndarray


@dataclass(frozen=True)
class RadialModel:
    """One-dimensional reduction of a geometry (see module docstring)."""

    kind: str
    length: float
    k: float
    N: int
    constant: float
    breakpoints: tuple = ()
    R0: float | None = None

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "slab":
            return np.minimum(x, self.length - x)
        return x

    def distance_slope(self, x):
        """d'(x), which is +-1."""
        x = np.asarray(x, dtype=float)
        if self.kind == "slab":
            return np.where(x <= 0.5 * self.length, 1.0, -1.0)
        return np.ones_like(x)

    def weight(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            return self.constant * x ** (self.N - 1)
        if self.kind == "subspace":
            return self.constant * x ** (self.k - 1)
        if self.kind == "ball":
            return self.constant * (self.R0 - x) ** (self.N - 1)
        return np.full_like(x, self.constant)

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            return (self.N - 1) / x
        if self.kind == "subspace":
            return (self.k - 1) / x
        if self.kind == "ball":
            return -(self.N - 1) / (self.R0 - x)
        return np.zeros_like(x)

    def log_weight(self, log_x):
        """log of ``weight`` as a function of ``log x`` (no underflow near K)."""
        log_x = np.asarray(log_x, dtype=float)
        if self.kind == "point":
            return math.log(self.constant) + (self.N - 1) * log_x
        if self.kind == "subspace":
            return math.log(self.constant) + (self.k - 1) * log_x
        return np.log(self.weight(np.exp(log_x)))

    def d_lap_d(self, x):
        """d * (absolutely continuous part of Lap d)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return -(self.N - 1) * x / (self.R0 - x)
        if self.kind == "slab":
            return np.zeros_like(x)
        return np.full_like(x, self.k - 1.0)

    def d_laplacian(self, x):
        """Absolutely continuous part of the Laplacian of d."""
        x = np.asarray(x, dtype=float)
        if self.kind == "slab":
            return np.zeros_like(x)
        return self.drift(x) * self.distance_slope(x)

    @property
    def singular_points(self):
        """(position, jump of d') pairs: the singular part of the Laplacian of d."""
        if self.kind == "slab":
            return ((0.5 * self.length, -2.0),)
        return ()

    @property
    def equality_case(self) -> bool:
        """True when d * Lap d = k - 1 holds exactly away from singular points."""
        return self.kind in ("point", "subspace", "slab")

    @property
    def sup_d(self) -> float:
        return 0.5 * self.length if self.kind == "slab" else self.length


def _points(x, N):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != N:
        raise GeometryError(f"points must have trailing dimension {N}")
    return x


def _reject_on_k(d):
    if np.any(d <= 0.0):
        raise GeometryError("point lies on K (d = 0)")


@dataclass(frozen=True)
class PointSet:
    """Finitely many points inside the ball ``|x| < radius``; k = N."""

    N: int
    points: tuple = ((),)
    radius: float = 1.0
    kind: str = "point"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            pts = np.zeros((1, self.N))
        if pts.shape[1] != self.N:
            raise GeometryError("point coordinates do not match N")
        if np.any(np.linalg.norm(pts, axis=1) >= self.radius):
            raise GeometryError("points of K must lie inside the domain ball")
        object.__setattr__(self, "points", tuple(map(tuple, pts)))

    @property
    def codimension(self):
        return self.N

    def contains(self, x):
        return np.linalg.norm(_points(x, self.N), axis=-1) < self.radius

    def evaluate(self, x) -> FieldValue:
        x = _points(x, self.N)
        pts = np.asarray(self.points)
        diff = x[..., None, :] - pts
        dist = np.linalg.norm(diff, axis=-1)
        j = np.argmin(dist, axis=-1)
        d = np.take_along_axis(dist, j[..., None], axis=-1)[..., 0]
        _reject_on_k(d)
        near = np.take_along_axis(diff, j[..., None, None], axis=-2)[..., 0, :]
        grad = near / d[..., None]
        srt = np.sort(dist, axis=-1)
        medial = (srt[..., 1] - srt[..., 0] <= MEDIAL_TOL) if pts.shape[0] > 1 else np.zeros(
            d.shape, bool)
        lap = np.where(medial, 0.0, (self.N - 1) / d)
        return FieldValue(d, grad, lap, medial)

    def sup_distance(self):
        if len(self.points) != 1:
            raise GeometryError("sup_distance is only available for a single point")
        return self.radius + float(np.linalg.norm(self.points[0]))

    def radial_model(self) -> RadialModel:
        if len(self.points) != 1 or np.any(np.asarray(self.points[0]) != 0.0):
            raise GeometryError("radial reduction needs a single point at the centre")
        return RadialModel("point", self.radius, self.N, self.N, sphere_area(self.N))


@dataclass(frozen=True)
class AffineSubspace:
    """Flat of codimension k through the origin, spanned by the last N-k axes.

    The domain is the tube ``|x_perp| < radius``; along the flat the domain is
    periodic with period ``period``, so functions of ``|x_perp|`` alone are
    admissible test functions.
    """

    N: int
    k: int
    radius: float = 1.0
    period: float = 1.0
    kind: str = "subspace"

    def __post_init__(self):
        if not (1 <= self.k <= self.N):
            raise GeometryError("need 1 <= k <= N")

    @property
    def codimension(self):
        return self.k

    def contains(self, x):
        return np.linalg.norm(_points(x, self.N)[..., : self.k], axis=-1) < self.radius

    def evaluate(self, x) -> FieldValue:
        x = _points(x, self.N)
        perp = x[..., : self.k]
        d = np.linalg.norm(perp, axis=-1)
        _reject_on_k(d)
        grad = np.zeros_like(x)
        grad[..., : self.k] = perp / d[..., None]
        lap = (self.k - 1) / d
        return FieldValue(d, grad, lap, np.zeros(d.shape, bool))

    def sup_distance(self):
        return self.radius

    def radial_model(self) -> RadialModel:
        const = sphere_area(self.k) * self.period ** (self.N - self.k)
        return RadialModel("subspace", self.radius, self.k, self.N, const)


@dataclass(frozen=True)
class BallBoundary:
    """Ball of radius R0 in R^N with K its boundary (k = 1)."""

    N: int
    R0: float = 1.0
    kind: str = "ball"

    @property
    def codimension(self):
        return 1

    def contains(self, x):
        return np.linalg.norm(_points(x, self.N), axis=-1) < self.R0

    def evaluate(self, x) -> FieldValue:
        x = _points(x, self.N)
        r = np.linalg.norm(x, axis=-1)
        if np.any(r >= self.R0):
            raise GeometryError("point outside the ball or on its boundary")
        d = self.R0 - r
        with np.errstate(invalid="ignore", divide="ignore"):
            grad = -x / r[..., None]
            lap = -(self.N - 1) / r
        centre = r == 0.0
        grad = np.where(centre[..., None], 0.0, grad)
        lap = np.where(centre, 0.0, lap)
        return FieldValue(d, grad, lap, centre)

    def sup_distance(self):
        return self.R0

    def radial_model(self) -> RadialModel:
        return RadialModel("ball", self.R0, 1, self.N, sphere_area(self.N), R0=self.R0)


@dataclass(frozen=True)
class SlabBoundary:
    """Slab ``0 < x_1 < L`` in R^N (periodic, unit period, in the other directions)."""

    L: float = 1.0
    N: int = 1
    kind: str = "slab"

    @property
    def codimension(self):
        return 1

    def contains(self, x):
        x1 = _points(x, self.N)[..., 0]
        return (x1 > 0) & (x1 < self.L)

    def evaluate(self, x) -> FieldValue:
        x = _points(x, self.N)
        x1 = x[..., 0]
        if np.any((x1 <= 0) | (x1 >= self.L)):
            raise GeometryError("point outside the slab or on its boundary")
        d = np.minimum(x1, self.L - x1)
        grad = np.zeros_like(x)
        grad[..., 0] = np.where(x1 < 0.5 * self.L, 1.0, -1.0)
        medial = np.abs(x1 - 0.5 * self.L) <= MEDIAL_TOL
        return FieldValue(d, grad, np.zeros_like(d), medial)

    def sup_distance(self):
        return 0.5 * self.L

    def radial_model(self) -> RadialModel:
        return RadialModel("slab", self.L, 1, self.N, 1.0, breakpoints=(0.5 * self.L,))


@dataclass(frozen=True)
class ConvexPolygonBoundary:
    """Convex polygon in R^2 (vertices counter-clockwise); K is its boundary."""

    vertices: tuple
    kind: str = "polygon"
    N: int = 2
    _normals: np.ndarray = field(default=None, repr=False, compare=False)
    _offsets: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError("polygon needs at least three 2-D vertices")
        if _signed_area(v) < 0:
            v = v[::-1]
        edges = np.roll(v, -1, axis=0) - v
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(
            edges, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            raise GeometryError("polygon is not strictly convex")
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        object.__setattr__(self, "vertices", tuple(map(tuple, v)))
        object.__setattr__(self, "_normals", normals)
        object.__setattr__(self, "_offsets", np.einsum("ij,ij->i", normals, v))

    @property
    def codimension(self):
        return 1

    def _slacks(self, x):
        return self._offsets - x[..., None, :] @ self._normals.T

    def contains(self, x):
        x = _points(x, 2)
        return np.all(self._slacks(x)[..., 0, :] > 0, axis=-1) if x.ndim == 1 else np.all(
            (self._offsets - x @ self._normals.T) > 0, axis=-1)

    def evaluate(self, x) -> FieldValue:
        x = _points(x, 2)
        sl = self._offsets - x @ self._normals.T
        if np.any(sl <= 0):
            raise GeometryError("point outside the polygon or on its boundary")
        j = np.argmin(sl, axis=-1)
        d = np.take_along_axis(sl, j[..., None], axis=-1)[..., 0]
        srt = np.sort(sl, axis=-1)
        medial = srt[..., 1] - srt[..., 0] <= MEDIAL_TOL
        grad = -self._normals[j]
        return FieldValue(d, grad, np.zeros_like(d), medial)

    def distance(self, x):
        """d on arbitrary points, clipped at 0 outside the polygon."""
        x = np.asarray(x, dtype=float)
        sl = self._offsets - x @ self._normals.T
        return np.maximum(np.min(sl, axis=-1), 0.0)

    def sup_distance(self):
        # Chebyshev centre: maximise r subject to n_i . x + r <= b_i
        n = self._normals
        res = linprog(c=[0.0, 0.0, -1.0], A_ub=np.hstack([n, np.ones((n.shape[0], 1))]),
                      b_ub=self._offsets, bounds=[(None, None)] * 2 + [(0, None)],
                      method="highs")
        if not res.success:
            raise GeometryError(f"inradius computation failed: {res.message}")
        return float(res.x[2])

    def bounding_box(self):
        v = np.asarray(self.vertices)
        return v.min(axis=0), v.max(axis=0)

    def radial_model(self):
        raise GeometryError("polygons have no one-dimensional reduction")


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def eval_field(field, x) -> FieldValue:
    """(d, grad d, Lap d) at ``x``; rejects points on K or outside the domain."""
    x = np.asarray(x, dtype=float)
    if not np.all(field.contains(x)):
        raise GeometryError("point lies outside the domain")
    return field.evaluate(x)


def sup_distance(field) -> float:
    return field.sup_distance()


@dataclass
class ConditionReport:
    kind: str
    k: float
    s: float
    p: float
    factor: float
    n_samples: int
    min_value: float
    passed: bool
    weak_form_max: float | None = None
    weak_form_min: float | None = None
    weak_form_tests: int = 0
    message: str = ""

    def to_dict(self):
        return dict(self.__dict__)


def _weak_form_slab(field: SlabBoundary, n_bumps=41, n_nodes=4001):
    """max over bumps phi >= 0 of int d phi'' dx (should be <= 0)."""
    L = field.L
    rho = 0.2 * L
    centres = np.linspace(rho, L - rho, n_bumps)
    vals = []
    for c in centres:
        x = np.linspace(c - rho, c + rho, n_nodes)
        y = (x - c) / rho
        # phi = (1 - y^2)^4, phi'' = (8/rho^2)(1-y^2)^2 (7y^2 - 1)
        lap = 8.0 / rho**2 * (1 - y**2) ** 2 * (7 * y**2 - 1)
        d = np.minimum(x, L - x)
        vals.append(np.trapezoid(d * lap, x) / rho)
    return max(vals), min(vals), n_bumps


def _weak_form_polygon(field: ConvexPolygonBoundary, n_per_axis=9, n_nodes=401):
    """max over bumps phi >= 0 of int d Lap(phi) dx on a grid of centres."""
    lo, hi = field.bounding_box()
    rin = field.sup_distance()
    rho = 0.5 * rin
    xs = np.linspace(lo[0], hi[0], n_per_axis + 2)[1:-1]
    ys = np.linspace(lo[1], hi[1], n_per_axis + 2)[1:-1]
    vals = []
    g = np.linspace(-1.0, 1.0, n_nodes)
    h = (g[1] - g[0]) * rho
    for cx in xs:
        for cy in ys:
            # bump must sit inside the polygon
            corners = np.array([[cx, cy]]) + rho * np.array(
                [[1, 1], [1, -1], [-1, 1], [-1, -1]])
            if not np.all(field.distance(corners) > 0):
                continue
            X, Y = np.meshgrid(cx + rho * g, cy + rho * g, indexing="ij")
            q = ((X - cx) ** 2 + (Y - cy) ** 2) / rho**2
            inside = q < 1
            # phi = (1 - q)^4 ; Lap phi = (16/rho^2)(1-q)^2 (4q - 1) in 2-D
            lap = np.where(inside, 16.0 / rho**2 * (1 - q) ** 2 * (4 * q - 1), 0.0)
            d = field.distance(np.stack([X, Y], axis=-1))
            vals.append(float(np.sum(d * lap) * h * h) / rho**2)
    return max(vals), min(vals), len(vals)


def check_condition(field, k: float, s: float, p: float, samples=None,
                    tol: float = 1e-9) -> ConditionReport:
    """Sign test of ``(k+s-p)(d Lap d - k + 1) >= 0`` on sample points.

    Slabs and polygons carry a singular (negative) part of Lap d on their
    medial set; for them the weak form ``int d Lap(phi) <= 0`` is tested with
    nonnegative bumps and combined with the sign of ``k+s-p``.
    """
    if p == k + s:
        raise GeometryError("condition requires p != k + s")
    factor = k + s - p
    if samples is None:
        samples = default_samples(field)
    fv = field.evaluate(np.asarray(samples, dtype=float))
    regular = ~fv.medial
    vals = factor * (fv.d * fv.lap - k + 1)
    vals = vals[regular]
    min_value = float(np.min(vals)) if vals.size else 0.0
    passed = min_value >= -tol
    weak_max = weak_min = None
    n_weak = 0
    msgs = []
    if field.kind in ("slab", "polygon"):
        weak_max, weak_min, n_weak = (_weak_form_slab(field) if field.kind == "slab"
                                      else _weak_form_polygon(field))
        # only k = 1 is realised here, so d Lap d - k + 1 = d Lap d and the
        # singular part carries the sign of Lap d
        if weak_max > WEAK_TOL:
            passed = False
            msgs.append("weak form indicates positive Lap d")
        if factor > 0 and weak_min < -WEAK_TOL:
            passed = False
            msgs.append("distributional Lap d has negative mass while k+s-p > 0")
    if not passed and factor > 0 and field.kind in ("ball", "slab", "polygon"):
        msgs.append("hypothesis violated: convex boundary case needs s+1-p<0")
    if not passed and not msgs:
        msgs.append(f"sign condition fails (min value {min_value:.3e})")
    return ConditionReport(field.kind, k, s, p, factor, int(regular.sum()), min_value, passed,
                           weak_max, weak_min, n_weak, "; ".join(msgs) if msgs else "ok")


def default_samples(field, n: int = 200, seed: int = 0):
    """Random interior points of the domain, away from K."""
    rng = np.random.default_rng(seed)
    if field.kind == "polygon":
        lo, hi = field.bounding_box()
        pts = []
        while len(pts) < n:
            cand = lo + (hi - lo) * rng.random((4 * n, 2))
            ok = field.distance(cand) > 1e-6
            pts.extend(cand[ok][: n - len(pts)])
        return np.asarray(pts)
    if field.kind == "slab":
        x = np.zeros((n, field.N))
        x[:, 0] = field.L * (0.001 + 0.998 * rng.random(n))
        x[:, 1:] = rng.random((n, field.N - 1))
        return x
    R = field.radius if field.kind in ("point", "subspace") else field.R0
    direction = rng.normal(size=(n, field.N))
    if field.kind == "subspace":
        direction[:, field.k:] = 0.0
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    radii = R * (0.001 + 0.998 * rng.random(n))
    x = direction * radii[:, None]
    if field.kind == "subspace":
        x[:, field.k:] = rng.random((n, field.N - field.k))
    if field.kind == "point" and len(field.points) > 1:
        x = x[np.all(np.linalg.norm(x[:, None, :] - np.asarray(field.points), axis=-1) > 1e-9,
                     axis=1)]
    return x


def field_from_descriptor(desc: dict):
    """Build a field from flat descriptor keys (``kind``, ``N``, ``k``, ...)."""
    kind = desc.get("kind")
    try:
        if kind == "point":
            N = int(desc.get("N", 5))
            return PointSet(N, ((0.0,) * N,), float(desc.get("radius", 1.0)))
        if kind == "subspace":
            return AffineSubspace(int(desc["N"]), int(desc["k"]), float(desc.get("radius", 1.0)),
                                  float(desc.get("period", 1.0)))
        if kind == "ball":
            return BallBoundary(int(desc.get("N", 2)), float(desc.get("R0", 1.0)))
        if kind == "slab":
            return SlabBoundary(float(desc.get("L", 1.0)), int(desc.get("N", 1)))
        if kind == "polygon":
            verts = desc["vertices"]
            if isinstance(verts, str):
                verts = [tuple(float(c) for c in pair.split(",")) for pair in verts.split(";")]
            return ConvexPolygonBoundary(tuple(verts))
    except KeyError as exc:
        raise GeometryError(f"geometry '{kind}' is missing key {exc.args[0]}") from None
    raise GeometryError(f"unknown geometry kind {kind!r}")
