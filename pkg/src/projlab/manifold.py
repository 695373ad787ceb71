"""Curved cross-section charts on the unit sphere.

A chart maps the parameter cube [0,1]^(n-2) onto an (n-2)-dimensional C^2
submanifold of S^(n-1) whose principal curvatures all share one sign.  The
unit normal inside the sphere is oriented so the second fundamental form
(acceleration dotted with the normal) is positive definite; with that
orientation the normal field of a chart parametrizes a second manifold of
the same kind, the dual, whose principal curvatures are the reciprocals of
the original ones.

All chart evaluators are batched: parameter arrays of shape (..., n-2)
produce points (..., n), Jacobians (..., n, n-2) and Hessians
(..., n, n-2, n-2).  Charts are immutable; derived global constants are
cached lazily (worst case under concurrent first access is a duplicated
computation, never an inconsistent one).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "ChartError",
    "ChartDomainError",
    "DegenerateJacobianError",
    "NonConvexityError",
    "ManifoldChart",
    "CapChart",
    "PerturbedCapChart",
    "DualChart",
    "SubChart",
    "ChartConstants",
    "Frame",
    "CurvatureData",
    "make_cap_chart",
    "make_perturbed_cap_chart",
    "dual_chart",
    "frame_at",
    "frame_matrices",
    "curvature_at",
    "principal_curvatures",
    "second_fundamental_bounds",
    "second_fundamental_quotients",
    "subdivide",
    "image_diameter",
    "injectivity_ratio",
]

# Fourth-order central differences; the step is a compromise between
# truncation (~h^4) and cancellation (~eps/h) error for C^2 quantities.
FD_STEP = 1e-4
_FD4_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_FD4_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0

_DEGENERATE_TOL = 1e-10


class ChartError(Exception):
    pass


class ChartDomainError(ChartError, ValueError):
    """Parameter or constructor argument outside the admissible range."""


class DegenerateJacobianError(ChartError):
    """Chart Jacobian lost rank (smallest singular value below tolerance)."""


class NonConvexityError(ChartError):
    """Principal curvatures vanish or change sign somewhere on the chart."""


# ---------------------------------------------------------------------------
# angle-product embedding of the unit (d)-sphere patch


def _sphere_embed(u: np.ndarray, order: int = 2):
    """Unit-vector embedding y(u) of d angles into R^(d+1), with derivatives.

    y_k = (prod_{i<k} sin u_i) * cos u_k for k < d, y_d = prod_i sin u_i.
    Returns (y,), (y, dy) or (y, dy, d2y) depending on `order`; derivative
    axes are appended last.
    """
    u = np.asarray(u, dtype=float)
    d = u.shape[-1]
    batch = u.shape[:-1]
    s, c = np.sin(u), np.cos(u)

    def fac(kind, i, der):
        # kind: 'sin' | 'cos' | 'one'; der: derivative order 0..2
        if kind == "one":
            return None if der else 1.0
        a = s[..., i] if kind == "sin" else c[..., i]
        if der == 0:
            return a
        if der == 2:
            return -a
        b = c[..., i] if kind == "sin" else s[..., i]
        return b if kind == "sin" else -b

    def product(kinds, ders):
        out = np.ones(batch)
        for i, kind in enumerate(kinds):
            f = fac(kind, i, ders[i])
            if f is None:
                return None
            out = out * f
        return out

    comps = d + 1
    y = np.empty(batch + (comps,))
    dy = np.zeros(batch + (comps, d)) if order >= 1 else None
    d2y = np.zeros(batch + (comps, d, d)) if order >= 2 else None
    for k in range(comps):
        if k < d:
            kinds = ["sin" if i < k else ("cos" if i == k else "one") for i in range(d)]
        else:
            kinds = ["sin"] * d
        y[..., k] = product(kinds, [0] * d)
        if order >= 1:
            for j in range(d):
                ders = [1 if i == j else 0 for i in range(d)]
                v = product(kinds, ders)
                if v is not None:
                    dy[..., k, j] = v
        if order >= 2:
            for j in range(d):
                for l in range(j, d):
                    ders = [(1 if i == j else 0) + (1 if i == l else 0) for i in range(d)]
                    v = product(kinds, ders)
                    if v is not None:
                        d2y[..., k, j, l] = v
                        if l != j:
                            d2y[..., k, l, j] = v
    if order == 0:
        return (y,)
    if order == 1:
        return y, dy
    return y, dy, d2y


def _fd_tensor(func, x: np.ndarray, d: int, step: float = FD_STEP) -> np.ndarray:
    """Fourth-order central difference of `func` along each parameter axis.

    `func` maps (..., d) parameters to arrays with trailing value axes; the
    result gains one final axis of length d.  Evaluation slightly outside
    [0,1]^d is deliberate: every chart formula extends analytically.
    """
    base = func(x)
    out = np.zeros(base.shape + (d,))
    for j in range(d):
        acc = np.zeros_like(base)
        for off, wgt in zip(_FD4_OFFSETS, _FD4_WEIGHTS):
            xs = np.array(x, dtype=float, copy=True)
            xs[..., j] += off * step
            acc += wgt * func(xs)
        out[..., j] = acc / step
    return out


# ---------------------------------------------------------------------------
# chart classes


class ManifoldChart:
    """Base chart; subclasses provide point/jacobian/hessian."""

    n: int
    kind: str

    @property
    def dim(self) -> int:
        return self.n - 2

    # -- geometry kernels ---------------------------------------------------

    def point(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, x: np.ndarray) -> np.ndarray:
        """Unit normal of the chart inside the sphere, oriented positively.

        Generic path: orthogonal complement of span{point, tangent} via a
        complete QR factorization, then the sign fixed pointwise so the
        second fundamental form is positive definite.
        """
        p = self.point(x)
        J = self.jacobian(x)
        H = self.hessian(x)
        sv = np.linalg.svd(J, compute_uv=False)
        if np.any(sv[..., -1] < _DEGENERATE_TOL):
            raise DegenerateJacobianError(
                f"chart Jacobian singular value below {_DEGENERATE_TOL:g}"
            )
        A = np.concatenate([p[..., :, None], J], axis=-1)
        q = np.linalg.qr(A, mode="complete")[0]
        nu = q[..., :, -1]
        ii = np.einsum("...k,...kij->...ij", nu, H)
        eig = np.linalg.eigvalsh(ii)
        pos = eig[..., 0] > 0.0
        neg = eig[..., -1] < 0.0
        if not np.all(pos | neg):
            raise NonConvexityError(
                "second fundamental form is not definite on the sampled points"
            )
        return nu * np.where(pos, 1.0, -1.0)[..., None]

    def normal_jacobian(self, x: np.ndarray) -> np.ndarray:
        """d(normal)/dx via the Weingarten identity dnu = -J (J^T J)^-1 (nu . H)."""
        J = self.jacobian(x)
        H = self.hessian(x)
        nu = self.normal(x)
        gram = np.swapaxes(J, -1, -2) @ J
        ii = np.einsum("...k,...kij->...ij", nu, H)
        return -J @ np.linalg.solve(gram, ii)

    # -- cached global constants -------------------------------------------

    @cached_property
    def constants(self) -> "ChartConstants":
        return _estimate_constants(self)

    @property
    def m_sigma(self) -> float:
        """Global Jacobian scale used to normalize tangent frame vectors."""
        return self.constants.jacobian_scale

    def dual(self) -> "ManifoldChart":
        return DualChart(self)

    def describe(self) -> dict:
        return {"kind": self.kind, "n": self.n}


class CapChart(ManifoldChart):
    """Horizontal cross-section of the sphere at height c, all in closed form.

    The section {x in S^(n-1) : x_n = c} is an (n-2)-sphere of radius
    sqrt(1-c^2).  Polar angles run over a window inside (0, pi) and the
    azimuth over slightly less than a full turn, which keeps the map
    injective on the closed cube with a nondegenerate Jacobian; all
    principal curvatures equal |c|/sqrt(1-c^2).
    """

    kind = "cap"

    # azimuth stops 1/64 turn short of closing the circle (injectivity)
    AZIMUTH_SPAN = 2.0 * math.pi * (63.0 / 64.0)
    POLAR_WINDOW = (0.25 * math.pi, 0.75 * math.pi)

    def __init__(self, n: int, c: float):
        if n < 3:
            raise ChartDomainError(f"ambient dimension must be >= 3, got {n}")
        if not (-1.0 < c < 1.0) or c == 0.0:
            raise ChartDomainError(f"cap height must lie in (-1,0) or (0,1), got {c}")
        self.n = int(n)
        self.c = float(c)
        self.radius = math.sqrt(1.0 - c * c)
        d = self.dim
        lo = [self.POLAR_WINDOW[0]] * (d - 1) + [0.0]
        hi = [self.POLAR_WINDOW[1]] * (d - 1) + [self.AZIMUTH_SPAN]
        self.lo = np.array(lo)
        self.span = np.array(hi) - self.lo

    def _angles(self, x):
        x = np.asarray(x, dtype=float)
        # slack so finite-difference stencils can reach past the corners
        if x.size and (x.min() < -0.01 or x.max() > 1.01):
            raise ChartDomainError(
                f"parameter outside [0,1]^{self.dim}: range "
                f"[{x.min():.4g}, {x.max():.4g}]"
            )
        return self.lo + x * self.span

    def _assemble(self, horiz, vert):
        out = np.concatenate([horiz, np.broadcast_to(vert, horiz.shape[:-1] + (1,))], axis=-1)
        return out

    def point(self, x):
        (y,) = _sphere_embed(self._angles(x), order=0)
        return self._assemble(self.radius * y, self.c)

    def jacobian(self, x):
        _, dy = _sphere_embed(self._angles(x), order=1)
        horiz = self.radius * dy * self.span
        pad = np.zeros(horiz.shape[:-2] + (1, self.dim))
        return np.concatenate([horiz, pad], axis=-2)

    def hessian(self, x):
        _, _, d2y = _sphere_embed(self._angles(x), order=2)
        horiz = self.radius * d2y * self.span[:, None] * self.span[None, :]
        pad = np.zeros(horiz.shape[:-3] + (1, self.dim, self.dim))
        return np.concatenate([horiz, pad], axis=-3)

    def normal(self, x):
        # (-|c| y, sign(c) radius): the orientation with positive definite
        # second fundamental form; for c > 0 the dual image sits at height
        # sqrt(1-c^2).
        (y,) = _sphere_embed(self._angles(x), order=0)
        return self._assemble(-abs(self.c) * y, math.copysign(self.radius, self.c))

    def normal_jacobian(self, x):
        _, dy = _sphere_embed(self._angles(x), order=1)
        horiz = -abs(self.c) * dy * self.span
        pad = np.zeros(horiz.shape[:-2] + (1, self.dim))
        return np.concatenate([horiz, pad], axis=-2)

    def describe(self):
        return {"kind": self.kind, "n": self.n, "c": self.c}


class PerturbedCapChart(ManifoldChart):
    """Cap with a normal-direction sinusoidal ripple, renormalized to S^(n-1).

    point(x) = normalize(cap(x) + amplitude*sin(2 pi frequency x_1)*nu(x)).
    The map value is closed-form (the cap normal is analytic); first and
    second derivatives use fourth-order central differences.  Construction
    rejects amplitudes that destroy one-signed curvature.
    """

    kind = "perturbed-cap"

    def __init__(self, n: int, c: float, amplitude: float, frequency: float):
        if amplitude < 0.0:
            raise ChartDomainError(f"amplitude must be nonnegative, got {amplitude}")
        self.base = CapChart(n, c)
        self.n = self.base.n
        self.c = self.base.c
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self._preflight()

    def point(self, x):
        x = np.asarray(x, dtype=float)
        p = self.base.point(x)
        nu = self.base.normal(x)
        bump = self.amplitude * np.sin(2.0 * np.pi * self.frequency * x[..., 0])
        q = p + bump[..., None] * nu
        return q / np.linalg.norm(q, axis=-1, keepdims=True)

    def jacobian(self, x):
        return _fd_tensor(self.point, np.asarray(x, dtype=float), self.dim)

    def hessian(self, x):
        h = _fd_tensor(self.jacobian, np.asarray(x, dtype=float), self.dim)
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    def _preflight(self):
        d = self.dim
        g = 33 if d == 1 else 9
        axes = [np.linspace(0.0, 1.0, g)] * d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        try:
            kappa = principal_curvatures(self, grid)
            nu = self.normal(grid)
        except (NonConvexityError, DegenerateJacobianError) as exc:
            raise NonConvexityError(
                f"perturbation amplitude {self.amplitude} breaks the chart hypotheses: {exc}"
            ) from exc
        if np.min(np.abs(kappa)) < 1e-3:
            raise NonConvexityError(
                "perturbation drives a principal curvature through zero"
            )
        # the pointwise sign rule hides curvature sign changes as jumps of
        # the normal field; reject any flip between grid neighbors
        dots = np.einsum("in,in->i", nu[:-1], nu[1:])
        interior = (np.arange(grid.shape[0] - 1) + 1) % g != 0
        if np.any(dots[interior] <= 0.0):
            raise NonConvexityError(
                "normal orientation flips across the chart: curvature changes sign"
            )

    def describe(self):
        return {
            "kind": self.kind,
            "n": self.n,
            "c": self.c,
            "amplitude": self.amplitude,
            "frequency": self.frequency,
        }


class DualChart(ManifoldChart):
    """Normal field of a base chart, parametrized over the same cube.

    The Jacobian is closed-form via the Weingarten identity applied to the
    base chart; the Hessian falls back to finite differences of that
    Jacobian.  The dual's own normal is the base point itself, up to the
    orientation sign fixed at construction.
    """

    kind = "dual"

    def __init__(self, base: ManifoldChart):
        self.base = base
        self.n = base.n
        self._orient = self._orientation()

    def point(self, x):
        return self.base.normal(x)

    def jacobian(self, x):
        return self.base.normal_jacobian(x)

    def hessian(self, x):
        h = _fd_tensor(self.jacobian, np.asarray(x, dtype=float), self.dim)
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    def normal(self, x):
        return self._orient * self.base.point(x)

    def normal_jacobian(self, x):
        return self._orient * self.base.jacobian(x)

    def _orientation(self) -> float:
        # The candidate normal of the dual at parameter x is +-(base point);
        # pick the sign making its second fundamental form positive.
        d = self.dim
        probe = np.full((1, d), 0.5)
        probe = np.concatenate([probe, np.full((1, d), 0.25), np.full((1, d), 0.75)])
        nu = self.base.point(probe)
        H = self.hessian(probe)
        ii = np.einsum("...k,...kij->...ij", nu, H)
        eig = np.linalg.eigvalsh(ii)
        if np.all(eig[..., 0] > 0.0):
            return 1.0
        if np.all(eig[..., -1] < 0.0):
            return -1.0
        raise NonConvexityError("dual chart has indefinite second fundamental form")

    def describe(self):
        return {"kind": self.kind, "n": self.n, "base": self.base.describe()}


class SubChart(ManifoldChart):
    """Affine restriction of a chart to a parameter subcube, rescaled to [0,1]^d."""

    def __init__(self, base: ManifoldChart, lo, hi):
        self.base = base
        self.n = base.n
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != (base.dim,) or np.any(self.hi <= self.lo):
            raise ChartDomainError("subchart corners must satisfy lo < hi componentwise")
        self.width = self.hi - self.lo
        self.kind = f"sub[{base.kind}]"

    def _map(self, x):
        return self.lo + np.asarray(x, dtype=float) * self.width

    def point(self, x):
        return self.base.point(self._map(x))

    def jacobian(self, x):
        return self.base.jacobian(self._map(x)) * self.width

    def hessian(self, x):
        return self.base.hessian(self._map(x)) * self.width[:, None] * self.width[None, :]

    def normal(self, x):
        return self.base.normal(self._map(x))

    def normal_jacobian(self, x):
        return self.base.normal_jacobian(self._map(x)) * self.width

    def describe(self):
        return {
            "kind": self.kind,
            "n": self.n,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
        }


def make_cap_chart(n: int, c: float) -> CapChart:
    return CapChart(n, c)


def make_perturbed_cap_chart(n: int, c: float, amplitude: float, frequency: float) -> PerturbedCapChart:
    return PerturbedCapChart(n, c, amplitude, frequency)


def dual_chart(chart: ManifoldChart) -> DualChart:
    return DualChart(chart)


# ---------------------------------------------------------------------------
# frames and curvature


@dataclass
class Frame:
    """Distorted projection frame at one parameter point.

    e holds the Jacobian columns divided by the global scale m_sigma (not
    unit vectors in general), nu the oriented unit normal, nu_star the
    chart point itself in its role as normal of the dual manifold, and
    conditioning the smallest singular value of [point, e..., nu].
    """

    x: np.ndarray
    point: np.ndarray
    e: np.ndarray  # (n-2, n)
    nu: np.ndarray
    nu_star: np.ndarray
    conditioning: float


@dataclass
class CurvatureData:
    principal_curvatures: np.ndarray  # ascending, shape (n-2,)
    principal_directions: np.ndarray  # ambient unit vectors, rows
    dual_curvatures: np.ndarray  # reciprocals, descending
    kappa_min: float  # global over the chart
    kappa_max: float
    christoffel_bound: float


def principal_curvatures(chart: ManifoldChart, x: np.ndarray, with_directions: bool = False):
    """Eigenvalues (ascending) of the shape operator at x, batched.

    Solves the symmetric generalized problem II v = kappa (J^T J) v by
    Cholesky whitening; directions are returned as ambient unit vectors.
    """
    J = chart.jacobian(x)
    H = chart.hessian(x)
    nu = chart.normal(x)
    gram = np.swapaxes(J, -1, -2) @ J
    ii = np.einsum("...k,...kij->...ij", nu, H)
    L = np.linalg.cholesky(gram)
    t = np.linalg.solve(L, ii)
    sym = np.linalg.solve(L, np.swapaxes(t, -1, -2))
    sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
    if not with_directions:
        return np.linalg.eigvalsh(sym)
    w, v = np.linalg.eigh(sym)
    coeff = np.linalg.solve(np.swapaxes(L, -1, -2), v)
    xi = J @ coeff
    xi = xi / np.linalg.norm(xi, axis=-2, keepdims=True)
    return w, np.swapaxes(xi, -1, -2)


def frame_at(chart: ManifoldChart, x: np.ndarray) -> Frame:
    """Projection frame {e_1..e_(n-2), nu} at a single parameter point."""
    x = np.asarray(x, dtype=float)
    J = chart.jacobian(x)
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] < _DEGENERATE_TOL:
        raise DegenerateJacobianError(
            f"Jacobian is rank deficient at x={x} (sigma_min={sv[-1]:.3e})"
        )
    p = chart.point(x)
    nu = chart.normal(x)
    e = J.T / chart.m_sigma
    stacked = np.concatenate([p[None, :], e, nu[None, :]], axis=0)
    cond = float(np.linalg.svd(stacked, compute_uv=False)[-1])
    return Frame(x=x, point=p, e=e, nu=nu, nu_star=p, conditioning=cond)


def frame_matrices(chart: ManifoldChart, x: np.ndarray) -> np.ndarray:
    """Batched (n-1) x n matrices B(x) with rows (e_1 .. e_(n-2), nu).

    The associated projection of a displacement z is simply B(x) @ z, so a
    single frame batch serves every map with the same chart.
    """
    J = chart.jacobian(x)
    nu = chart.normal(x)
    e = np.swapaxes(J, -1, -2) / chart.m_sigma
    return np.concatenate([e, nu[..., None, :]], axis=-2)


def curvature_at(chart: ManifoldChart, x: np.ndarray) -> CurvatureData:
    kappa, xi = principal_curvatures(chart, np.asarray(x, dtype=float), with_directions=True)
    if np.min(kappa) <= 0.0:
        raise NonConvexityError(f"nonpositive principal curvature at x={x}")
    consts = chart.constants
    return CurvatureData(
        principal_curvatures=kappa,
        principal_directions=xi,
        dual_curvatures=1.0 / kappa,
        kappa_min=consts.kappa_min,
        kappa_max=consts.kappa_max,
        christoffel_bound=consts.christoffel_bound,
    )


def second_fundamental_quotients(chart: ManifoldChart, x: np.ndarray):
    """Min and max of II(zeta,zeta)/|zeta|^2 over tangent directions, batched.

    These are the extreme principal curvatures at each sampled point; the
    quotient is over ambient tangent vectors zeta = J u.
    """
    kappa = principal_curvatures(chart, x)
    return kappa[..., 0], kappa[..., -1]


def second_fundamental_bounds(chart: ManifoldChart, samples: int = 4096, seed: int = 7):
    """(max II-quotient on the chart, min II-quotient on its dual).

    The first bounds curvature from above by kappa_max, the second from
    below by 1/kappa_max; for a cap both are exactly attained.
    """
    rng = np.random.default_rng(seed)
    x = rng.random((samples, chart.dim))
    _, hi = second_fundamental_quotients(chart, x)
    lo_dual, _ = second_fundamental_quotients(chart.dual(), x)
    return float(np.max(hi)), float(np.min(lo_dual))


# ---------------------------------------------------------------------------
# global constants


@dataclass
class ChartConstants:
    """Sampled global quantities of one chart.

    jacobian_scale   sup of the Jacobian operator norm (the frame scale)
    jacobian_floor   inf of the smallest Jacobian singular value
    kappa_min/max    principal curvature range over the chart
    sectional_min    min of kappa_i*kappa_j + 1 over pairs (n >= 4 only)
    frame_conditioning  inf of the smallest singular value of [point,e,nu]
    christoffel_bound   max |Gamma^k_ij| of the tangential connection
    coeff_margin     threshold constant separating the value-dominant from
                     the gradient-dominant regime in displacement splits
    samples          number of sample points used
    """

    jacobian_scale: float
    jacobian_floor: float
    kappa_min: float
    kappa_max: float
    sectional_min: float
    frame_conditioning: float
    christoffel_bound: float
    coeff_margin: float
    samples: int

    def as_dict(self) -> dict:
        return {
            "jacobian_scale": self.jacobian_scale,
            "jacobian_floor": self.jacobian_floor,
            "kappa_min": self.kappa_min,
            "kappa_max": self.kappa_max,
            "sectional_min": self.sectional_min,
            "frame_conditioning": self.frame_conditioning,
            "christoffel_bound": self.christoffel_bound,
            "coeff_margin": self.coeff_margin,
            "samples": self.samples,
        }


def _constant_sample_points(d: int, rng: np.random.Generator) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, 64)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    rand = rng.random((10_000, d))
    return np.concatenate([grid, rand], axis=0)


def _estimate_constants(chart: ManifoldChart) -> ChartConstants:
    d = chart.dim
    xs = _constant_sample_points(d, np.random.default_rng(2024))
    j_scale = 0.0
    j_floor = math.inf
    k_lo, k_hi = math.inf, -math.inf
    sec_min = math.inf
    gamma_max = 0.0
    for start in range(0, xs.shape[0], 32_768):
        x = xs[start : start + 32_768]
        J = chart.jacobian(x)
        H = chart.hessian(x)
        sv = np.linalg.svd(J, compute_uv=False)
        j_scale = max(j_scale, float(np.max(sv[:, 0])))
        j_floor = min(j_floor, float(np.min(sv[:, -1])))
        kappa = principal_curvatures(chart, x)
        k_lo = min(k_lo, float(np.min(kappa)))
        k_hi = max(k_hi, float(np.max(kappa)))
        if d >= 2:
            prod = kappa[:, :, None] * kappa[:, None, :]
            iu = np.triu_indices(d, k=1)
            sec_min = min(sec_min, float(np.min(prod[:, iu[0], iu[1]] + 1.0)))
        # Christoffel symbols: tangential coordinates of each Hessian column,
        # Gamma^k_ij = ((J^T J)^-1 J^T H_ij)_k
        gram = np.swapaxes(J, -1, -2) @ J
        jth = np.einsum("...nk,...nij->...kij", J, H)
        gamma = np.linalg.solve(gram, jth.reshape(x.shape[0], d, d * d))
        gamma_max = max(gamma_max, float(np.max(np.abs(gamma))))
    if j_floor < _DEGENERATE_TOL:
        raise DegenerateJacobianError(
            f"chart Jacobian degenerates on the sample set (min sv {j_floor:.3e})"
        )
    if k_lo <= 0.0:
        raise NonConvexityError("chart has nonpositive principal curvature samples")
    # second pass for the frame conditioning (needs the final jacobian scale)
    cond = math.inf
    for start in range(0, xs.shape[0], 32_768):
        x = xs[start : start + 32_768]
        p = chart.point(x)
        J = chart.jacobian(x)
        nu = chart.normal(x)
        stacked = np.concatenate(
            [p[:, None, :], np.swapaxes(J, -1, -2) / j_scale, nu[:, None, :]], axis=1
        )
        sv = np.linalg.svd(stacked, compute_uv=False)
        cond = min(cond, float(np.min(sv[:, -1])))
    # The margin constant is only meaningful as a small threshold: floor the
    # Christoffel bound at 1 so charts with vanishing tangential connection
    # (constant-speed circles) still get a finite, valid value.
    coeff_margin = cond / (16.0 * chart.n * max(gamma_max, 1.0) * max(1.0, k_hi * k_hi))
    return ChartConstants(
        jacobian_scale=j_scale,
        jacobian_floor=j_floor,
        kappa_min=k_lo,
        kappa_max=k_hi,
        sectional_min=(sec_min if d >= 2 else math.nan),
        frame_conditioning=cond,
        christoffel_bound=gamma_max,
        coeff_margin=coeff_margin,
        samples=xs.shape[0],
    )


# ---------------------------------------------------------------------------
# diameters, injectivity, subdivision


def _sample_grid(d: int, per_axis: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, per_axis)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def image_diameter(chart: ManifoldChart, per_axis: int | None = None) -> float:
    """Upper estimate of the chart image diameter.

    Max pairwise distance over a sample grid, inflated by the sampled
    Jacobian norm times the mesh half-diagonal so the result is a certified
    upper bound up to second-order terms.
    """
    d = chart.dim
    if per_axis is None:
        per_axis = {1: 33, 2: 17, 3: 9}.get(d, 9)
    grid = _sample_grid(d, per_axis)
    pts = chart.point(grid)
    if pts.shape[0] > 600:
        idx = np.linspace(0, pts.shape[0] - 1, 600).astype(int)
        sub = pts[idx]
    else:
        sub = pts
    diff = sub[:, None, :] - sub[None, :, :]
    diam = float(np.max(np.linalg.norm(diff, axis=-1)))
    J = chart.jacobian(grid)
    jmax = float(np.max(np.linalg.svd(J, compute_uv=False)[:, 0]))
    mesh = math.sqrt(d) / (per_axis - 1)
    return diam + jmax * mesh


def injectivity_ratio(chart: ManifoldChart, per_axis: int | None = None) -> float:
    """Min over sampled parameter pairs of |point(x)-point(x')| / |x-x'|."""
    d = chart.dim
    if per_axis is None:
        per_axis = {1: 129, 2: 17, 3: 9}.get(d, 9)
    grid = _sample_grid(d, per_axis)
    pts = chart.point(grid)
    dx = np.linalg.norm(grid[:, None, :] - grid[None, :, :], axis=-1)
    dp = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    mask = dx > 0.0
    return float(np.min(dp[mask] / dx[mask]))


def subdivide(chart: ManifoldChart, max_diameter: float) -> list[SubChart]:
    """Split the parameter cube until each piece's image diameter fits.

    Pieces are SubCharts over dyadic subcubes; the diameter estimate is the
    inflated sample-grid bound from image_diameter.
    """
    if max_diameter <= 0.0:
        raise ChartDomainError("max_diameter must be positive")
    d = chart.dim
    done: list[SubChart] = []
    queue = [(np.zeros(d), np.ones(d))]
    while queue:
        lo, hi = queue.pop()
        piece = SubChart(chart, lo, hi)
        if image_diameter(piece) <= max_diameter:
            done.append(piece)
            continue
        axis = int(np.argmax(hi - lo))
        mid = 0.5 * (lo[axis] + hi[axis])
        hi_l = np.array(hi, copy=True)
        hi_l[axis] = mid
        lo_r = np.array(lo, copy=True)
        lo_r[axis] = mid
        queue.append((lo, hi_l))
        queue.append((lo_r, hi))
    return done
