"""Cones over a spherical cross-section chart, line intersections, tubes.

The cone with apex z over a chart Sigma is {z + r * Sigma(x), r in [-1, 1]}.
Every distance query factors through the angular nearest point on the
cross-section: for p != z with d = (p - z)/|p - z|, the distance from p to
the full cone is |p - z| * sin(theta) where theta is the spherical distance
from d to Sigma union -Sigma, as long as the radial foot r = |p-z| cos
(theta) stays inside [-1, 1]; outside, the rim point is used directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .manifold import ManifoldChart

__all__ = [
    "Cone",
    "LineSegment",
    "GeneratrixError",
    "ApexError",
    "ProjectionError",
    "cone_distance",
    "nearest_direction",
    "tangent_plane_angle",
    "line_cone_points",
    "line_cone_tube_volume",
    "tube_components",
    "graph_gradient_bound",
    "tangency_locus",
    "make_transversal_lines",
    "TubeReport",
    "GradientReport",
    "TangencyProfile",
]


class GeneratrixError(ValueError):
    pass


class ApexError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


@dataclass
class LineSegment:
    """Parametrized segment p + t*u for t in [t0, t1], |u| = 1."""

    base: np.ndarray
    direction: np.ndarray
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        u = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(u))
        if norm < 1e-14:
            raise ValueError("line direction must be nonzero")
        self.direction = u / norm

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self.base + t[..., None] * self.direction

    @property
    def length(self) -> float:
        return self.t1 - self.t0

    @classmethod
    def through(cls, p, q, pad: float = 0.0):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        length = float(np.linalg.norm(q - p))
        return cls(p, q - p, -pad * length, (1.0 + pad) * length)


# ---------------------------------------------------------------------------
# angular nearest point on the cross-section


def _seed_grid(chart: ManifoldChart, per_axis: int) -> tuple[np.ndarray, np.ndarray]:
    d = chart.dim
    axes = [np.linspace(0.0, 1.0, per_axis) for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    return grid, chart.point(grid)


_SEED_CACHE: dict = {}


def _seeds(chart: ManifoldChart, per_axis: int):
    key = (id(chart), per_axis)
    hit = _SEED_CACHE.get(key)
    if hit is None or hit[0] is not chart:
        grid, pts = _seed_grid(chart, per_axis)
        hit = (chart, grid, pts)
        _SEED_CACHE[key] = hit
    return hit[1], hit[2]


def _newton_step(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    # solve hess s = -grad with a guard for the flat (singular) case
    d = grad.shape[-1]
    if d == 1:
        h = hess[..., 0, 0]
        safe = np.abs(h) > 1e-14
        return np.where(safe, -grad[..., 0] / np.where(safe, h, 1.0), 0.0)[..., None]
    if d == 2:
        a, b = hess[..., 0, 0], hess[..., 0, 1]
        c, e = hess[..., 1, 0], hess[..., 1, 1]
        det = a * e - b * c
        safe = np.abs(det) > 1e-14
        det = np.where(safe, det, 1.0)
        s0 = -(e * grad[..., 0] - b * grad[..., 1]) / det
        s1 = -(-c * grad[..., 0] + a * grad[..., 1]) / det
        keep = safe.astype(float)
        return np.stack([s0 * keep, s1 * keep], axis=-1)
    flat = hess.reshape(-1, d, d) + 1e-14 * np.eye(d)
    g = grad.reshape(-1, d)
    out = np.linalg.solve(flat, -g[..., None])[..., 0]
    return out.reshape(grad.shape)


def nearest_direction(
    chart: ManifoldChart,
    dirs: np.ndarray,
    seeds_per_axis: int = 64,
    iters: int = 24,
):
    """Chart parameters maximizing dirs . Sigma(x), i.e. the angular nearest
    points on the cross-section, by seeded damped Newton ascent clamped to
    the closed parameter cube.  Returns (params, cosines)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    grid, pts = _seeds(chart, seeds_per_axis)
    dots = dirs @ pts.T
    x = grid[np.argmax(dots, axis=1)].copy()
    val = np.max(dots, axis=1)
    mesh = 1.0 / (seeds_per_axis - 1)
    cap = 2.0 * mesh
    for _ in range(iters):
        J = chart.jacobian(x)
        H = chart.hessian(x)
        g = np.einsum("...nk,...n->...k", J, dirs)
        hess = np.einsum("...nkl,...n->...kl", H, dirs)
        step = _newton_step(g, hess)
        norm = np.linalg.norm(step, axis=-1, keepdims=True)
        step = np.where(norm > cap, step * (cap / np.maximum(norm, 1e-300)), step)
        # at an interior max the Newton step descends the negated objective;
        # fall back to a plain ascent step wherever it loses ground
        cand = np.clip(x + step, 0.0, 1.0)
        new_val = np.einsum("...n,...n->...", chart.point(cand), dirs)
        bad = new_val < val - 1e-15
        if np.any(bad):
            gstep = np.clip(x + mesh * g / np.maximum(
                np.linalg.norm(g, axis=-1, keepdims=True), 1e-300), 0.0, 1.0)
            gval = np.einsum("...n,...n->...", chart.point(gstep), dirs)
            use = bad & (gval > new_val)
            cand = np.where(use[..., None], gstep, cand)
            new_val = np.where(use, gval, new_val)
        moved = np.linalg.norm(cand - x, axis=-1)
        x, val = cand, np.maximum(val, new_val)
        if float(moved.max(initial=0.0)) < 1e-14:
            break
    return x, np.clip(val, -1.0, 1.0)


@dataclass
class Cone:
    """Two-sided cone {apex + r*Sigma(x) : r in [-1,1], x in the chart cube}.

    one_sided restricts to r in [0, 1] (the half used in graph arguments).
    """

    chart: ManifoldChart
    apex: np.ndarray
    one_sided: bool = False
    seeds_per_axis: int = 64

    def __post_init__(self):
        self.apex = np.asarray(self.apex, dtype=float)
        if self.apex.shape != (self.chart.n,):
            raise ValueError("apex dimension does not match the chart")

    def generatrix(self, x, pad: float = 0.0) -> LineSegment:
        direction = self.chart.point(np.atleast_2d(np.asarray(x, dtype=float)))[0]
        lo = 0.0 if self.one_sided else -1.0
        return LineSegment(self.apex, direction, lo - pad, 1.0 + pad)

    def surface_points(self, x, r) -> np.ndarray:
        pts = self.chart.point(np.asarray(x, dtype=float))
        return self.apex + np.asarray(r, dtype=float)[..., None] * pts

    def distance(self, p) -> np.ndarray:
        return cone_distance(self, p)

    def contains(self, p, tol: float = 1e-9) -> np.ndarray:
        return cone_distance(self, p) <= tol

    def nearest(self, p):
        """(distance, params, radius) of the closest surface point per query."""
        return _cone_nearest(self, np.atleast_2d(np.asarray(p, dtype=float)))


def _cone_nearest(cone: Cone, p: np.ndarray):
    rel = p - cone.apex
    dist_apex = np.linalg.norm(rel, axis=-1)
    safe = np.maximum(dist_apex, 1e-300)
    d = rel / safe[..., None]
    x_pos, cos_pos = nearest_direction(cone.chart, d, cone.seeds_per_axis)
    if cone.one_sided:
        x, cosine, sign = x_pos, cos_pos, np.ones_like(cos_pos)
    else:
        x_neg, cos_neg = nearest_direction(cone.chart, -d, cone.seeds_per_axis)
        neg_better = cos_neg > cos_pos
        x = np.where(neg_better[..., None], x_neg, x_pos)
        cosine = np.where(neg_better, cos_neg, cos_pos)
        sign = np.where(neg_better, -1.0, 1.0)
    r = np.clip(sign * dist_apex * cosine, -1.0 if not cone.one_sided else 0.0, 1.0)
    foot = cone.apex + r[..., None] * cone.chart.point(x)
    dist = np.linalg.norm(p - foot, axis=-1)
    # the apex itself lies on the cone (r = 0)
    dist = np.where(dist_apex < 1e-300, 0.0, np.minimum(dist, dist_apex))
    return dist, x, r


def cone_distance(cone: Cone, p) -> np.ndarray:
    """Distance from p to the cone surface; 0 exactly on generatrix points."""
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    dist, _, _ = _cone_nearest(cone, np.atleast_2d(arr))
    return float(dist[0]) if single else dist


# ---------------------------------------------------------------------------
# tangent planes


def tangent_plane_angle(cone: Cone, p, line: LineSegment) -> float:
    """Angle in [0, pi/2] between the line direction and the cone's tangent
    plane at p; the plane is the normal complement of the cross-section
    normal at the radial foot, so sin(angle) = |u . nu(x)|."""
    p = np.asarray(p, dtype=float)
    dist, x, r = _cone_nearest(cone, p[None, :])
    if float(dist[0]) > 1e-8:
        raise ValueError(f"point is off the cone surface by {float(dist[0]):.3e}")
    if float(np.linalg.norm(p - cone.apex)) < 1e-12:
        raise ApexError("tangent plane undefined at the apex")
    nu = cone.chart.normal(x)[0]
    s = float(np.clip(np.abs(np.dot(line.direction, nu)), 0.0, 1.0))
    return math.asin(s)


# ---------------------------------------------------------------------------
# line intersections


def _radial_defect(cone: Cone, pts: np.ndarray):
    """Signed side indicator of the radial projection relative to the
    cross-section: (d - Sigma(xhat)) . nu(xhat) with xhat the angular nearest
    chart point of the better of +-d.  C1 away from the apex; vanishes on
    the cone."""
    rel = pts - cone.apex
    rad = np.linalg.norm(rel, axis=-1)
    d = rel / np.maximum(rad, 1e-300)[..., None]
    x_pos, cos_pos = nearest_direction(cone.chart, d, cone.seeds_per_axis)
    x_neg, cos_neg = nearest_direction(cone.chart, -d, cone.seeds_per_axis)
    neg = cos_neg > cos_pos
    x = np.where(neg[..., None], x_neg, x_pos)
    signed_d = np.where(neg[..., None], -d, d)
    sigma = cone.chart.point(x)
    nu = cone.chart.normal(x)
    return np.einsum("...n,...n->...", signed_d - sigma, nu), x, neg


def line_cone_points(
    cone: Cone,
    line: LineSegment,
    grid: int = 10_000,
    tol: float = 1e-12,
) -> list[np.ndarray]:
    """All intersection points of the segment with the cone surface.

    Brackets sign changes of the radial side defect along a fine t-grid,
    bisects each bracket, then polishes on the full system
    line(t) = apex + r*Sigma(x) and keeps roots with on-surface residual
    below 1e-10.  Segments lying inside a generatrix are rejected.
    """
    ts = np.linspace(line.t0, line.t1, grid)
    pts = line.point(ts)
    rel = pts - cone.apex
    rad = np.linalg.norm(rel, axis=-1)
    ok = rad > 1e-12
    if np.count_nonzero(ok) >= 2:
        d = rel[ok] / rad[ok][..., None]
        spread = np.linalg.norm(d - d[0], axis=-1)
        anti = np.linalg.norm(d + d[0], axis=-1)
        if float(np.minimum(spread, anti).max()) < 1e-8:
            raise GeneratrixError("segment lies along a single generatrix direction")
    sigma, _, _ = _radial_defect(cone, pts)
    roots: list[float] = []
    zero_hits = np.flatnonzero(np.abs(sigma) < 1e-15)
    flips = np.flatnonzero(np.sign(sigma[:-1]) * np.sign(sigma[1:]) < 0)
    for i in flips:
        lo, hi = ts[i], ts[i + 1]
        flo = sigma[i]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fmid = float(_radial_defect(cone, line.point(np.array([mid])))[0][0])
            if flo * fmid <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fmid
            if hi - lo < tol:
                break
        roots.append(0.5 * (lo + hi))
    roots.extend(float(ts[i]) for i in zero_hits)
    out: list[np.ndarray] = []
    seen: list[float] = []
    for t in sorted(roots):
        t = _polish_root(cone, line, t)
        if t is None or any(abs(t - s) < 1e-9 * max(1.0, abs(t)) + 1e-12 for s in seen):
            continue
        if t < line.t0 - 1e-9 or t > line.t1 + 1e-9:
            continue
        seen.append(t)
        out.append(line.point(np.array([t]))[0])
    return out


def _polish_root(cone: Cone, line: LineSegment, t: float):
    """Newton on F(t, r, x) = line(t) - apex - r*Sigma(x) = 0 (n equations in
    n unknowns), seeded from the radial projection at t."""
    p = line.point(np.array([t]))
    dist, x, r = _cone_nearest(cone, p)
    x = x[0].copy()
    r = float(r[0])
    for _ in range(60):
        pt = line.point(np.array([t]))[0]
        sig = cone.chart.point(x[None, :])[0]
        J = cone.chart.jacobian(x[None, :])[0]
        F = pt - cone.apex - r * sig
        if float(np.linalg.norm(F)) < 1e-14:
            break
        M = np.concatenate(
            [line.direction[:, None], -sig[:, None], -r * J], axis=1
        )
        try:
            step = np.linalg.solve(M, -F)
        except np.linalg.LinAlgError:
            return None
        scale = min(1.0, 0.05 / max(float(np.abs(step).max()), 1e-300))
        t += float(step[0]) * scale
        r += float(step[1]) * scale
        x = np.clip(x + step[2:] * scale, 0.0, 1.0)
    resid = float(cone_distance(cone, line.point(np.array([t]))[0]))
    if resid > 1e-10:
        return None
    if cone.one_sided and r < -1e-9:
        return None
    if abs(r) > 1.0 + 1e-9:
        return None
    return t


# ---------------------------------------------------------------------------
# tube volumes


@dataclass
class TubeReport:
    volume: float
    stderr: float
    hits: int
    samples: int
    components: int
    min_tangent_angle: float
    angle_flag: bool


def _tube_samples(line: LineSegment, delta: float, count: int, rng: np.random.Generator):
    n = line.base.shape[0]
    ts = rng.uniform(line.t0 - delta, line.t1 + delta, size=count)
    # orthonormal complement of the direction
    basis = _complement_basis(line.direction)
    radial = rng.standard_normal((count, n - 1))
    radial /= np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-300)
    radius = delta * rng.uniform(0.0, 1.0, size=count) ** (1.0 / (n - 1))
    pts = line.point(ts) + (radial * radius[:, None]) @ basis
    # keep only points truly inside the segment tube (spherical end caps)
    tt = np.clip(((pts - line.base) @ line.direction), line.t0, line.t1)
    foot = line.base + tt[:, None] * line.direction
    inside = np.linalg.norm(pts - foot, axis=1) < delta
    return pts[inside]


def _complement_basis(u: np.ndarray) -> np.ndarray:
    n = u.shape[0]
    M = np.concatenate([u[None, :], np.eye(n)], axis=0)
    q, _ = np.linalg.qr(M.T)
    return q[:, 1:].T


def _tube_volume_exact(line: LineSegment, delta: float) -> float:
    from .util import unit_ball_volume

    n = line.base.shape[0]
    cyl = line.length * unit_ball_volume(n - 1) * delta ** (n - 1)
    caps = unit_ball_volume(n) * delta ** n
    return cyl + caps


def tube_components(cone: Cone, line: LineSegment, delta: float) -> int:
    """Connected components of the 2*delta cone slice along the line,
    discretized at step delta/4 (components have length >= delta)."""
    step = delta / 4.0
    ts = np.arange(line.t0, line.t1 + step, step)
    near = cone_distance(cone, line.point(ts)) < 2.0 * delta
    return int(np.count_nonzero(np.diff(near.astype(int)) == 1) + int(near[0]))


def line_cone_tube_volume(
    cone: Cone,
    line: LineSegment,
    delta: float,
    samples: int,
    rng: np.random.Generator,
    a: float | None = None,
) -> TubeReport:
    """Monte Carlo volume of (cone delta-neighborhood) intersect (line
    delta-tube), plus the component count of the 2*delta slice along the
    line (discretized at step delta/4; true components have length >= delta).

    Tangent angles are checked at intersection points at least 10*delta from
    the apex; a transversality parameter `a` below any of them flags the
    report instead of failing it.
    """
    pts = _tube_samples(line, delta, samples, rng)
    hits = 0
    chunk = 262_144
    for i in range(0, pts.shape[0], chunk):
        dist = cone_distance(cone, pts[i : i + chunk])
        hits += int(np.count_nonzero(dist < delta))
    frac = hits / max(pts.shape[0], 1)
    vol_tube = _tube_volume_exact(line, delta)
    volume = frac * vol_tube
    stderr = vol_tube * math.sqrt(max(frac * (1.0 - frac), 0.0) / max(pts.shape[0], 1))
    components = tube_components(cone, line, delta)

    min_angle = math.pi / 2.0
    try:
        cuts = line_cone_points(cone, line, grid=2000)
    except GeneratrixError:
        cuts = []
    for q in cuts:
        if float(np.linalg.norm(q - cone.apex)) < 10.0 * delta:
            continue
        min_angle = min(min_angle, tangent_plane_angle(cone, q, line))
    flag = a is not None and min_angle < a
    return TubeReport(volume, stderr, hits, int(pts.shape[0]), components, min_angle, flag)


def make_transversal_lines(
    cone: Cone,
    a: float,
    count: int,
    rng: np.random.Generator,
    max_tries: int = 50,
) -> list[LineSegment]:
    """Random secant lines whose tangent angle at every intersection point
    (outside the apex ball) is at least `a`."""
    out: list[LineSegment] = []
    tries = 0
    while len(out) < count and tries < max_tries * count:
        tries += 1
        x = rng.uniform(0.05, 0.95, size=(2, cone.chart.dim))
        r = rng.uniform(0.35, 0.9, size=2)
        p, q = cone.surface_points(x, r)
        if float(np.linalg.norm(p - q)) < 0.2:
            continue
        line = LineSegment.through(p, q, pad=0.15)
        try:
            cuts = line_cone_points(cone, line, grid=4000)
        except GeneratrixError:
            continue
        if not cuts:
            continue
        angles = []
        for c in cuts:
            if float(np.linalg.norm(c - cone.apex)) < 0.05:
                break
            angles.append(tangent_plane_angle(cone, c, line))
        else:
            if angles and min(angles) >= a:
                out.append(line)
    if len(out) < count:
        raise RuntimeError(f"only found {len(out)} of {count} transversal lines")
    return out


# ---------------------------------------------------------------------------
# rotated-graph representation


@dataclass
class GradientReport:
    max_gradient: float
    bound: float
    passed: bool
    required_depth: int
    min_height_component: float


def graph_gradient_bound(
    cone: Cone,
    piece,  # a (sub)chart covering the piece of the cross-section
    a: float,
    grid: int = 33,
) -> GradientReport:
    """Max gradient of the cone surface written as a graph over the
    hyperplane orthogonal to the rotated center normal.

    Rotates the center generatrix to the first axis and its normal to the
    last; the surface normal along a generatrix is the chart normal at its
    base, so the graph gradient at (x, r) is the tilted part of nu(x) over
    its height component.  The gradient vanishes on the center generatrix.
    """
    d = piece.dim
    from .manifold import frame_at

    # the frame rows (point, tangents, normal) are orthonormal because the
    # cross-section lies on the unit sphere
    fr = frame_at(piece, np.full(d, 0.5))
    R = np.concatenate([fr.point[None, :], fr.e, fr.nu[None, :]], axis=0)
    axes = [np.linspace(0.0, 1.0, grid) for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=-1)
    nu = piece.normal(xs)
    rot = nu @ R.T
    height = rot[:, -1]
    if float(np.min(np.abs(height))) < 0.2:
        raise ProjectionError(
            "normal tilts too far from the center normal; piece too large "
            "for a single graph representation"
        )
    grad = np.linalg.norm(rot[:, :-1], axis=1) / np.abs(height)
    gmax = float(grad.max())
    bound = a / 10.0
    passed = gmax <= bound
    depth = 0 if passed else max(1, math.ceil(math.log2(gmax / bound)))
    return GradientReport(gmax, bound, passed, depth, float(np.min(np.abs(height))))


# ---------------------------------------------------------------------------
# tangency locus of a direction


@dataclass
class TangencyProfile:
    params: list[np.ndarray]
    counts: dict[int, int] = field(default_factory=dict)
    slope: float | None = None

    @property
    def empty(self) -> bool:
        return not self.params and all(c == 0 for c in self.counts.values())


def tangency_locus(cone: Cone, y: np.ndarray, grid: int = 512) -> TangencyProfile:
    """Zero set of nu(x) . y on the parameter cube.

    For one-parameter charts the isolated roots are returned (sign brackets
    refined by bisection).  For higher-dimensional charts the locus is a
    hypersurface-or-smaller; the profile records sign-change cell counts per
    dyadic scale, whose slope estimates its box dimension.
    """
    y = np.asarray(y, dtype=float)
    y = y / np.linalg.norm(y)
    chart = cone.chart
    d = chart.dim
    if d == 1:
        ts = np.linspace(0.0, 1.0, grid + 1)
        vals = np.einsum("...n,n->...", chart.normal(ts[:, None]), y)
        roots = []
        for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
            lo, hi = float(ts[i]), float(ts[i + 1])
            flo = float(vals[i])
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                fm = float(np.einsum("n,n->", chart.normal(np.array([[mid]]))[0], y))
                if flo * fm <= 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            roots.append(np.array([0.5 * (lo + hi)]))
        for i in np.flatnonzero(np.abs(vals) < 1e-15):
            roots.append(np.array([float(ts[i])]))
        return TangencyProfile(params=roots)
    k_max = int(math.log2(grid))
    fine = 1 << k_max
    axes = [np.linspace(0.0, 1.0, fine + 1) for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = np.einsum("...n,n->...", chart.normal(xs), y).reshape(*[fine + 1] * d)
    signs = np.sign(vals)
    counts: dict[int, int] = {}
    for k in range(2, k_max + 1):
        step = fine >> k
        sub = signs[::step, ::step] if d == 2 else signs[(slice(None, None, step),) * d]
        cell_min = sub
        cell_max = sub
        for ax in range(d):
            lo = np.minimum(np.take(cell_min, range(0, sub.shape[ax] - 1), axis=ax),
                            np.take(cell_min, range(1, sub.shape[ax]), axis=ax))
            hi = np.maximum(np.take(cell_max, range(0, sub.shape[ax] - 1), axis=ax),
                            np.take(cell_max, range(1, sub.shape[ax]), axis=ax))
            cell_min, cell_max = lo, hi
        counts[k] = int(np.count_nonzero((cell_min <= 0) & (cell_max >= 0)))
    ks = [k for k, c in counts.items() if c > 0]
    slope = None
    if len(ks) >= 2:
        from .util import fit_line

        fit = fit_line(np.array(ks, dtype=float),
                       np.log2([counts[k] for k in ks]))
        slope = fit.slope
    return TangencyProfile(params=[], counts=counts, slope=slope)
