"""Distorted projections onto the moving tangent planes of a chart.

For a chart point Sigma(x) with frame {e_1..e_(n-2), nu}, the map sends a
displacement z to f_z(x) = (e_1.z, ..., e_(n-2).z, nu.z).  Everything here
exploits that f_z is linear in z: one grid of frame tensors B, dB, d2B per
chart serves every map of the family, and differences f_y - f_z equal
f_(y-z) exactly.

C^0/C^1/C^2 suprema are measured on sample grids and reported together
with an explicit continuity margin (empirical Lipschitz constant of the
sampled quantity times the mesh half-diagonal), so infimum-type outputs
can be certified lower bounds rather than bare grid minima.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .manifold import ManifoldChart, frame_matrices
from .util import sample_ball, unit_ball_volume, unit_directions

__all__ = [
    "CinematicMap",
    "FrameField",
    "C2Distance",
    "InfimumCertificate",
    "MCVolume",
    "PieceDiameters",
    "CinematicReport",
    "eval_map",
    "c2_distance",
    "cinematic_infimum",
    "vertical_neighborhood_volume",
    "vertical_slab_volume",
    "pair_intersection_volume",
    "projected_intersection_diameter",
    "survey_family",
]


class CinematicMap:
    """One member f_z of the projection family of a chart."""

    def __init__(self, chart: ManifoldChart, z):
        self.chart = chart
        self.z = np.asarray(z, dtype=float)
        if self.z.shape != (chart.n,):
            raise ValueError(f"displacement must have shape ({chart.n},)")

    def value(self, x) -> np.ndarray:
        return frame_matrices(self.chart, np.asarray(x, dtype=float)) @ self.z

    __call__ = value

    def gradient(self, x) -> np.ndarray:
        """(n-1) x (n-2) Jacobian of f_z at x (batched)."""
        return _map_gradient(self.chart, self.z, np.asarray(x, dtype=float))

    def hessian(self, x) -> np.ndarray:
        return _map_hessian(self.chart, self.z, np.asarray(x, dtype=float))


def eval_map(chart: ManifoldChart, z, x) -> np.ndarray:
    return CinematicMap(chart, z).value(x)


# ---------------------------------------------------------------------------
# frame tensor fields


def _tensor_grid(d: int, per_axis: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, per_axis)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


_FD_STEP = 2e-4
_FD4 = ((-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0))


def _map_gradient(chart: ManifoldChart, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise derivative of B(x) z: Hessian columns for e-rows, Weingarten for nu."""
    H = chart.hessian(x)
    dnu = chart.normal_jacobian(x)
    ge = np.einsum("...kij,k->...ij", H, z) / chart.m_sigma
    gn = np.einsum("...kj,k->...j", dnu, z)
    return np.concatenate([ge, gn[..., None, :]], axis=-2)


def _map_hessian(chart: ManifoldChart, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    d = chart.dim
    base = _map_gradient(chart, z, x)
    out = np.zeros(base.shape + (d,))
    for j in range(d):
        acc = np.zeros_like(base)
        for off, wgt in _FD4:
            xs = np.array(x, dtype=float, copy=True)
            xs[..., j] += off * _FD_STEP
            acc += wgt * _map_gradient(chart, z, xs)
        out[..., j] = acc / _FD_STEP
    return 0.5 * (out + np.swapaxes(out, -1, -2))


class FrameField:
    """Frame tensors of a chart sampled on a regular parameter grid.

    B has shape (G, n-1, n); dB appends a derivative axis, d2B two.  Map
    values, gradients and Hessians are einsums of these against z.
    """

    def __init__(self, chart: ManifoldChart, per_axis: int | None = None):
        d = chart.dim
        if per_axis is None:
            per_axis = {1: 65, 2: 25, 3: 13}[d]
        self.chart = chart
        self.per_axis = per_axis
        self.mesh = 1.0 / (per_axis - 1)
        self.x = _tensor_grid(d, per_axis)
        self.B = frame_matrices(chart, self.x)
        self.dB = self._frame_derivative(self.x)
        self.d2B = self._frame_second_derivative(self.x)

    # -- tensor assembly ----------------------------------------------------

    def _frame_derivative(self, x) -> np.ndarray:
        """d/dx of the frame rows: Hessian columns for e_i, Weingarten for nu."""
        ch = self.chart
        H = ch.hessian(x)
        dnu = ch.normal_jacobian(x)
        de = np.einsum("...kij->...ikj", H) / ch.m_sigma
        return np.concatenate([de, dnu[..., None, :, :]], axis=-3)

    def _frame_second_derivative(self, x) -> np.ndarray:
        d = self.chart.dim
        out = np.zeros(self.dB.shape + (d,))
        for j in range(d):
            acc = np.zeros_like(self.dB)
            for off, wgt in _FD4:
                xs = np.array(x, copy=True)
                xs[..., j] += off * _FD_STEP
                acc += wgt * self._frame_derivative(xs)
            out[..., j] = acc / _FD_STEP
        # symmetrize the two derivative axes
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    # -- batched per-displacement suprema -----------------------------------

    def values(self, W) -> np.ndarray:
        """(P, G, n-1) values for a batch of displacements W (P, n)."""
        return np.einsum("gck,pk->pgc", self.B, np.atleast_2d(W))

    def gradients(self, W) -> np.ndarray:
        # dB axes: (grid, component, ambient, deriv)
        return np.einsum("gckj,pk->pgcj", self.dB, np.atleast_2d(W))

    def hessians(self, W) -> np.ndarray:
        return np.einsum("gckjl,pk->pgcjl", self.d2B, np.atleast_2d(W))


_FIELD_CACHE: dict[tuple[int, int | None], FrameField] = {}


def _field(chart: ManifoldChart, per_axis: int | None) -> FrameField:
    key = (id(chart), per_axis)
    ff = _FIELD_CACHE.get(key)
    if ff is None or ff.chart is not chart:
        ff = FrameField(chart, per_axis)
        _FIELD_CACHE[key] = ff
    return ff


def _grid_lipschitz(values: np.ndarray, per_axis: int, d: int, mesh: float) -> np.ndarray:
    """Empirical Lipschitz constant of grid-sampled scalars, batch-leading.

    Maximum absolute difference between grid neighbors along each axis,
    divided by the mesh.  values shape (..., G) with G = per_axis**d.
    """
    shaped = values.reshape(values.shape[:-1] + (per_axis,) * d)
    lip = 0.0
    for axis in range(d):
        ax = axis + values.ndim - 1
        diff = np.abs(np.diff(shaped, axis=ax))
        m = diff.max(axis=tuple(range(values.ndim - 1, values.ndim - 1 + d)))
        lip = np.maximum(lip, m / mesh)
    return lip


@dataclass
class C2Distance:
    value: float  # the C^2 norm estimate: max of the three suprema
    sup_value: float
    sup_gradient: float
    sup_hessian: float
    slack: float  # continuity margin: possible excess of the true sup
    grid_per_axis: int

    @property
    def upper(self) -> float:
        return self.value + self.slack


def _c2_stats(ff: FrameField, W: np.ndarray):
    """Per-displacement sup-norms (value, gradient op, Hessian form) + slacks."""
    d = ff.chart.dim
    vals = np.linalg.norm(ff.values(W), axis=-1)  # (P, G)
    grads = ff.gradients(W)  # (P, G, c, d)
    gnorm = np.linalg.norm(grads, ord=2, axis=(-2, -1)) if d > 1 else np.linalg.norm(
        grads[..., 0], axis=-1
    )
    hess = ff.hessians(W)  # (P, G, c, d, d)
    if d == 1:
        hnorm = np.linalg.norm(hess[..., 0, 0], axis=-1)
    else:
        xi = unit_directions(d, 32 * d)
        quad = np.einsum("pgcjl,kj,kl->pgkc", hess, xi, xi)
        hnorm = np.linalg.norm(quad, axis=-1).max(axis=-1)
    sup_v = vals.max(axis=-1)
    sup_g = gnorm.max(axis=-1)
    sup_h = hnorm.max(axis=-1)
    half_diag = 0.5 * ff.mesh * math.sqrt(d)
    lip_v = _grid_lipschitz(vals, ff.per_axis, d, ff.mesh)
    lip_g = _grid_lipschitz(gnorm, ff.per_axis, d, ff.mesh)
    lip_h = _grid_lipschitz(hnorm, ff.per_axis, d, ff.mesh)
    slack = np.maximum(np.maximum(lip_v, lip_g), lip_h) * half_diag
    return vals, gnorm, hnorm, sup_v, sup_g, sup_h, slack


def c2_distance(f: CinematicMap, g: CinematicMap, per_axis: int | None = None) -> C2Distance:
    """C^2 distance of two maps of one family, via the single map f_(y-z)."""
    if f.chart is not g.chart:
        raise ValueError("c2_distance requires maps over the same chart")
    ff = _field(f.chart, per_axis)
    w = (f.z - g.z)[None, :]
    _, _, _, sv, sg, sh, slack = _c2_stats(ff, w)
    value = float(max(sv[0], sg[0], sh[0]))
    return C2Distance(
        value=value,
        sup_value=float(sv[0]),
        sup_gradient=float(sg[0]),
        sup_hessian=float(sh[0]),
        slack=float(slack[0]),
        grid_per_axis=ff.per_axis,
    )


@dataclass
class InfimumCertificate:
    raw: float  # grid minimum of |h| + |grad_xi h|
    certified: float  # raw minus the continuity margin
    margin: float
    norm_c2: float  # C^2 norm of h (grid estimate)
    norm_upper: float  # norm estimate plus its own slack
    ratio: float  # certified / norm_upper: a certified lower bound
    argmin_x: np.ndarray
    grid_per_axis: int

    @property
    def positive(self) -> bool:
        return self.certified > 0.0


def cinematic_infimum(
    f: CinematicMap,
    g: CinematicMap,
    per_axis: int | None = None,
    xi_count: int | None = None,
) -> InfimumCertificate:
    """Certified lower bound of inf_(x,xi) (|h(x)| + |grad_xi h(x)|), h = f - g.

    The infimum runs over parameter points and unit directions xi.  The raw
    grid minimum is reduced by (sup|grad| + sup|Hess|) times the mesh
    half-diagonal plus a direction-mesh term, so a positive `certified`
    value genuinely separates the two maps.
    """
    if f.chart is not g.chart:
        raise ValueError("cinematic_infimum requires maps over the same chart")
    if np.array_equal(f.z, g.z):
        raise ValueError("degenerate pair: the two maps coincide")
    ff = _field(f.chart, per_axis)
    d = ff.chart.dim
    w = (f.z - g.z)[None, :]
    vals, gnorm, _, sup_v, sup_g, sup_h, slack = _c2_stats(ff, w)
    grads = ff.gradients(w)[0]  # (G, c, d)
    if xi_count is None:
        xi_count = {1: 2, 2: 64, 3: 192}[d]
    xi = unit_directions(d, xi_count)
    dgrad = np.linalg.norm(np.einsum("gcj,kj->gkc", grads, xi), axis=-1)  # (G, K)
    objective = vals[0][:, None] + dgrad
    flat = int(np.argmin(objective))
    gi, ki = divmod(flat, xi.shape[0])
    raw = float(objective[gi, ki])
    half_diag = 0.5 * ff.mesh * math.sqrt(d)
    margin_x = (sup_g[0] + sup_h[0]) * half_diag
    if d == 1:
        margin_xi = 0.0
    else:
        # neighboring xi samples are within ~2pi/K on the sphere of directions
        xi_mesh = 2.0 * math.pi / xi_count if d == 2 else 2.0 * math.sqrt(4.0 * math.pi / xi_count)
        margin_xi = sup_g[0] * 0.5 * xi_mesh
    margin = float(margin_x + margin_xi)
    norm = float(max(sup_v[0], sup_g[0], sup_h[0]))
    norm_upper = norm + float(slack[0])
    certified = raw - margin
    ratio = certified / norm_upper if norm_upper > 0.0 else math.inf
    return InfimumCertificate(
        raw=raw,
        certified=float(certified),
        margin=margin,
        norm_c2=norm,
        norm_upper=float(norm_upper),
        ratio=float(ratio),
        argmin_x=ff.x[gi],
        grid_per_axis=ff.per_axis,
    )


# ---------------------------------------------------------------------------
# neighborhood volumes


@dataclass
class MCVolume:
    value: float
    stderr: float
    samples: int
    hits: int
    low_hits: bool = False
    extra: dict = field(default_factory=dict)


def vertical_slab_volume(n: int, delta: float) -> float:
    """Exact volume of a vertical delta-slab over the unit parameter cube.

    The fiber over each x is an (n-1)-ball of radius delta, so the slab
    volume is ball_volume * 1 independently of the map.
    """
    return unit_ball_volume(n - 1) * delta ** (n - 1)


def vertical_neighborhood_volume(
    f: CinematicMap, delta: float, samples: int, rng: np.random.Generator
) -> MCVolume:
    """Monte Carlo volume of {(x, y): |y - f(x)| < delta} in R^(2n-3)."""
    chart = f.chart
    d, c = chart.dim, chart.n - 1
    probe = _field(chart, None).values(f.z[None, :])[0]
    lo = probe.min(axis=0) - 1.05 * delta
    hi = probe.max(axis=0) + 1.05 * delta
    box_vol = float(np.prod(hi - lo))
    hits = 0
    chunk = 262_144
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = rng.random((m, d))
        y = lo + rng.random((m, c)) * (hi - lo)
        fx = frame_matrices(chart, x) @ f.z
        hits += int(np.count_nonzero(np.linalg.norm(y - fx, axis=-1) < delta))
        done += m
    rate = hits / samples
    value = box_vol * rate
    stderr = box_vol * math.sqrt(max(rate * (1.0 - rate), 1e-300) / samples)
    return MCVolume(value=value, stderr=stderr, samples=samples, hits=hits,
                    low_hits=hits < 100, extra={"box_volume": box_vol})


def pair_intersection_volume(
    f: CinematicMap, g: CinematicMap, delta: float, samples: int, rng: np.random.Generator
) -> MCVolume:
    """Volume of the intersection of the two vertical delta-slabs.

    Importance sampler: x uniform in the cube, y uniform in the delta-ball
    around f(x); the estimate is slab_volume * hit rate for |y - g(x)| <
    delta, which is unbiased for the intersection volume.
    """
    if f.chart is not g.chart:
        raise ValueError("pair_intersection_volume requires maps over the same chart")
    chart = f.chart
    d, c = chart.dim, chart.n - 1
    slab = vertical_slab_volume(chart.n, delta)
    w = g.z - f.z
    hits = 0
    chunk = 262_144
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = rng.random((m, d))
        B = frame_matrices(chart, x)
        # y - g(x) = (y - f(x)) - (g - f)(x); only the difference map matters
        offset = sample_ball(rng, c, m, delta)
        hx = B @ w
        hits += int(np.count_nonzero(np.linalg.norm(offset - hx, axis=-1) < delta))
        done += m
    rate = hits / samples
    value = slab * rate
    stderr = slab * math.sqrt(max(rate * (1.0 - rate), 1e-300) / samples)
    out = MCVolume(value=value, stderr=stderr, samples=samples, hits=hits,
                   low_hits=hits < 100, extra={"slab_volume": slab})
    if out.low_hits:
        warnings.warn(
            f"pair_intersection_volume: only {hits} hits at delta={delta:g}; "
            "estimate is unreliable",
            stacklevel=2,
        )
    return out


@dataclass
class PieceDiameters:
    """Base-projection diameters of the slab intersection, per dyadic piece."""

    pieces: list  # (lo, hi, diameter or None)
    max_diameter: float | None  # None when the intersection is empty
    bound: float  # 32 K^2 delta / d
    vacuous: bool  # d <= 4 K delta: the bound carries no information
    bound_ok: bool
    d_c2: float
    delta: float
    k_used: float


def projected_intersection_diameter(
    f: CinematicMap,
    g: CinematicMap,
    delta: float,
    cinematic_k: float,
    per_axis: int | None = None,
) -> PieceDiameters:
    """Diameter of {x : |f(x) - g(x)| < 2 delta} on each dyadic parameter piece.

    Pieces have diameter below 1/(4K^2).  On every piece the set is expected
    inside a ball of radius 16 K^2 delta / d, d the C^2 distance; diameters
    are reported against twice that radius.  When d <= 4 K delta the regime
    is flagged vacuous and the bound not asserted.  Only pieces that meet
    the sublevel set are listed; an empty list means empty intersection.
    """
    if f.chart is not g.chart:
        raise ValueError("maps must share a chart")
    d_dim = f.chart.dim
    if per_axis is None:
        per_axis = {1: 4097, 2: 129, 3: 17}[d_dim]
    dist = c2_distance(f, g).value
    side = 2.0 ** -math.ceil(math.log2(max(4.0 * cinematic_k**2 * math.sqrt(d_dim), 1.0)))
    bound = 32.0 * cinematic_k**2 * delta / dist if dist > 0 else math.inf
    vacuous = dist <= 4.0 * cinematic_k * delta
    ff = _field(f.chart, per_axis)
    vals = np.linalg.norm(ff.values((f.z - g.z)[None, :])[0], axis=-1)
    pts = ff.x[vals < 2.0 * delta]
    mesh_slack = ff.mesh * math.sqrt(d_dim)
    pieces = []
    max_diam = None
    if pts.shape[0]:
        cells = np.minimum(np.floor(pts / side).astype(np.int64), int(round(1.0 / side)) - 1)
        order = np.lexsort(cells.T[::-1])
        cells, pts = cells[order], pts[order]
        boundaries = np.flatnonzero(np.any(np.diff(cells, axis=0) != 0, axis=1)) + 1
        for group in np.split(np.arange(pts.shape[0]), boundaries):
            sub = pts[group]
            lo = cells[group[0]].astype(float) * side
            diam = float(
                np.max(np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=-1))
            ) + mesh_slack
            pieces.append((lo.tolist(), (lo + side).tolist(), diam))
            max_diam = diam if max_diam is None else max(max_diam, diam)
    bound_ok = vacuous or max_diam is None or max_diam <= bound
    return PieceDiameters(
        pieces=pieces,
        max_diameter=max_diam,
        bound=bound,
        vacuous=vacuous,
        bound_ok=bound_ok,
        d_c2=dist,
        delta=delta,
        k_used=cinematic_k,
    )


# ---------------------------------------------------------------------------
# family survey


@dataclass
class CinematicReport:
    K_est: float  # certified cinematic constant: sup of norm/infimum ratios
    D_est: float  # empirical doubling constant of the family
    bilipschitz_lo: float  # C^1 distance / displacement ratio bounds
    bilipschitz_hi: float
    samples: int
    diameter_c2: float  # largest pairwise C^2 distance seen
    min_ratio: float  # smallest certified infimum ratio
    all_certified: bool
    grid_per_axis: int


def survey_family(
    chart: ManifoldChart,
    zs: np.ndarray,
    pair_count: int,
    rng: np.random.Generator,
    per_axis: int | None = None,
    xi_count: int | None = None,
) -> CinematicReport:
    """Empirical cinematic constants over random pairs drawn from zs.

    Evaluates |h| + |grad_xi h| for every sampled pair via one shared frame
    field; reports the certified worst-case ratio (its reciprocal is the
    cinematic constant), C^1 bilipschitz bounds against |y - z|, and a
    packing-based doubling estimate.
    """
    zs = np.asarray(zs, dtype=float)
    ff = _field(chart, per_axis)
    d = chart.dim
    idx = rng.integers(0, zs.shape[0], size=(pair_count, 2))
    idx = idx[idx[:, 0] != idx[:, 1]]
    W = zs[idx[:, 0]] - zs[idx[:, 1]]
    sep = np.linalg.norm(W, axis=-1)
    vals, gnorm, hnorm, sup_v, sup_g, sup_h, slack = _c2_stats(ff, W)
    grads = ff.gradients(W)
    if xi_count is None:
        xi_count = {1: 2, 2: 64, 3: 192}[d]
    xi = unit_directions(d, xi_count)
    dgrad = np.linalg.norm(np.einsum("pgcj,kj->pgkc", grads, xi), axis=-1)
    objective = vals[:, :, None] + dgrad
    raw = objective.reshape(objective.shape[0], -1).min(axis=-1)
    half_diag = 0.5 * ff.mesh * math.sqrt(d)
    if d == 1:
        margin_xi = 0.0
    else:
        xi_mesh = 2.0 * math.pi / xi_count if d == 2 else 2.0 * math.sqrt(4.0 * math.pi / xi_count)
        margin_xi = 0.5 * xi_mesh
    margin = (sup_g + sup_h) * half_diag + sup_g * margin_xi
    certified = raw - margin
    norm_c2 = np.maximum(np.maximum(sup_v, sup_g), sup_h)
    norm_upper = norm_c2 + slack
    ratios = certified / norm_upper
    c1 = np.maximum(sup_v, sup_g)
    bil = c1 / sep
    # doubling constant: largest (r/2)-packing of a C^1 ball of radius r,
    # measured in the displacement surrogate metric
    hi_scale = float(bil.max())
    D_est = _doubling_estimate(zs, hi_scale, rng)
    return CinematicReport(
        K_est=float(1.0 / max(ratios.min(), 1e-300)),
        D_est=D_est,
        bilipschitz_lo=float(bil.min()),
        bilipschitz_hi=float(bil.max()),
        samples=int(W.shape[0]),
        diameter_c2=float(norm_c2.max()),
        min_ratio=float(ratios.min()),
        all_certified=bool(np.all(certified > 0.0)),
        grid_per_axis=ff.per_axis,
    )


def _doubling_estimate(zs: np.ndarray, scale: float, rng: np.random.Generator,
                       trials: int = 24) -> float:
    n = zs.shape[0]
    if n < 8:
        return float("nan")
    dist = np.linalg.norm(zs[:, None, :] - zs[None, :, :], axis=-1) * scale
    finite = dist[dist > 0.0]
    best = 1
    for _ in range(trials):
        center = int(rng.integers(0, n))
        r = float(rng.choice(finite))
        members = np.flatnonzero(dist[center] <= r)
        # greedy r/2 packing inside the ball
        kept: list[int] = []
        for m in members:
            if all(dist[m, k] > r / 2.0 for k in kept):
                kept.append(int(m))
        best = max(best, len(kept))
    return float(best)
