"""Fractal test sets, dyadic covering counts, and spread-set extraction.

Conventions: all scales are dyadic (delta = 2^-k), grids are anchored at
the origin so negative coordinates are handled by floor, and box-counting
cells are half-open cubes.  Cell counts on axis-aligned grids are
comparable to ball-covering numbers up to a dimensional factor (2 sqrt(d))^d.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .util import fit_line

__all__ = [
    "ScaleError",
    "OverlapError",
    "InfeasibleExtractionError",
    "DyadicGrid",
    "FractalSet",
    "DeltaSSet",
    "BoxCountFit",
    "FrostmanReport",
    "build_cantor_dust",
    "product_fractal",
    "covering_number",
    "box_dimension",
    "extract_delta_s_set",
    "spread_delta_s_set",
    "separate_points",
    "frostman_check",
    "write_pts",
    "read_pts",
]

_MAX_SCALE_EXP = 50  # beyond this, floor(x * 2^k) is no longer exact in float64


class ScaleError(ValueError):
    pass


class OverlapError(ValueError):
    pass


class InfeasibleExtractionError(ValueError):
    pass


def scale_exponent(delta: float) -> int:
    """k such that delta = 2^-k exactly; rejects non-dyadic or too-fine scales."""
    if delta <= 0.0:
        raise ScaleError(f"scale must be positive, got {delta}")
    k = round(-math.log2(delta))
    if k < 0 or k > _MAX_SCALE_EXP:
        raise ScaleError(f"scale 2^-{k} outside supported range (0 <= k <= {_MAX_SCALE_EXP})")
    if abs(delta - 2.0 ** -k) > 1e-12 * delta:
        raise ScaleError(f"scale {delta} is not a dyadic power 2^-k")
    return k


def _cell_indices(points: np.ndarray, k: int) -> np.ndarray:
    return np.floor(np.asarray(points, dtype=float) * (1 << k)).astype(np.int64)


def _cell_keys(idx: np.ndarray, k: int) -> np.ndarray | None:
    """Pack index rows into single int64 keys when the bit budget allows."""
    d = idx.shape[1]
    bits = k + 2
    if bits * d > 62:
        return None
    key = np.zeros(idx.shape[0], dtype=np.int64)
    for i in range(d):
        key = (key << bits) | (idx[:, i] + (1 << (bits - 1)))
    return key


def _unique_rows(idx: np.ndarray, k: int) -> np.ndarray:
    keys = _cell_keys(idx, k)
    if keys is not None:
        _, first = np.unique(keys, return_index=True)
        return idx[np.sort(first)]
    return np.unique(idx, axis=0)


def _count_unique(idx: np.ndarray, k: int) -> int:
    keys = _cell_keys(idx, k)
    if keys is not None:
        return int(np.unique(keys).size)
    return int(np.unique(idx, axis=0).shape[0])


class DyadicGrid:
    """Occupancy record of half-open dyadic cells at one scale.

    Cells are index tuples floor(p * 2^k); grids built independently (for
    example by different workers over point ranges) merge by union.
    """

    def __init__(self, d: int, k: int):
        if k > _MAX_SCALE_EXP:
            raise ScaleError(f"k = {k} exceeds the supported index width")
        self.d = d
        self.k = k
        self.cells: set[tuple[int, ...]] = set()

    @property
    def side(self) -> float:
        return 2.0 ** -self.k

    def insert(self, points: np.ndarray) -> None:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.d:
            raise ValueError(f"points must have {self.d} columns")
        idx = _unique_rows(_cell_indices(pts, self.k), self.k)
        self.cells.update(map(tuple, idx.tolist()))

    def contains(self, cell: tuple[int, ...]) -> bool:
        return tuple(cell) in self.cells

    def merge(self, other: "DyadicGrid") -> None:
        if (other.d, other.k) != (self.d, self.k):
            raise ValueError("can only merge grids of equal dimension and scale")
        self.cells |= other.cells

    def __len__(self) -> int:
        return len(self.cells)


def covering_number(points: np.ndarray, delta: float) -> int:
    """Number of occupied half-open dyadic cells of side delta."""
    k = scale_exponent(delta)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return _count_unique(_cell_indices(pts, k), k)


# ---------------------------------------------------------------------------
# fractal constructions


@dataclass
class FractalSet:
    """Finite approximation of a self-similar set with its natural measure.

    Points are level-cell centers; the natural measure puts equal weight on
    each point.  similarity_dim is the exact exponent of the construction,
    cell_side the final cell scale after any rescaling into B(0, 1/2).
    """

    n: int
    points: np.ndarray
    similarity_dim: float
    cell_side: float
    level: int
    generator: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.points.shape[0], 1.0 / self.points.shape[0])

    def thin_to_scale(self, delta: float) -> np.ndarray:
        """One representative point per delta-cell (a delta-net of the set)."""
        k = scale_exponent(delta)
        idx = _cell_indices(self.points, k)
        keys = _cell_keys(idx, k)
        if keys is None:
            _, first = np.unique(idx, axis=0, return_index=True)
        else:
            _, first = np.unique(keys, return_index=True)
        return self.points[np.sort(first)]


def _ball_transform(points: np.ndarray, n: int) -> np.ndarray:
    # affine image of [0,1]^n in the centered cube whose half-diagonal is 0.49
    side = 0.98 / math.sqrt(n)
    return (points - 0.5) * side


_PLACEMENTS = ("axis", "planar", "diagonal", "product")


def _branch_offsets(n: int, m: int, r: float, placement: str) -> np.ndarray:
    gap = 1.0 - r
    center = gap / 2.0
    if placement == "axis":
        if m == 1:
            pos = np.array([center])
        else:
            pos = np.linspace(0.0, gap, m)
        off = np.full((m, n), center)
        off[:, 0] = pos
        return off
    if placement == "diagonal":
        pos = np.linspace(0.0, gap, m) if m > 1 else np.array([center])
        return np.tile(pos[:, None], (1, n))
    if placement == "planar":
        if n < 2:
            raise ValueError("planar placement needs ambient dimension >= 2")
        g = math.isqrt(m)
        if g * g != m:
            raise ValueError(f"planar placement needs a square branch count, got {m}")
        pos = np.linspace(0.0, gap, g) if g > 1 else np.array([center])
        a, b = np.meshgrid(pos, pos, indexing="ij")
        off = np.full((m, n), center)
        off[:, 0] = a.ravel()
        off[:, 1] = b.ravel()
        return off
    if placement == "product":
        pos = np.linspace(0.0, gap, m) if m > 1 else np.array([center])
        grids = np.meshgrid(*([pos] * n), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)
    raise ValueError(f"unknown placement {placement!r}; choose from {_PLACEMENTS}")


def _check_disjoint(offsets: np.ndarray, r: float) -> None:
    m = offsets.shape[0]
    if m == 1:
        return
    diff = np.abs(offsets[:, None, :] - offsets[None, :, :]).max(axis=-1)
    iu = np.triu_indices(m, k=1)
    if float(diff[iu].min()) < r - 1e-12:
        raise OverlapError("branch cells overlap; reduce the ratio or branch count")


def build_cantor_dust(
    n: int,
    m: int,
    r: float,
    level: int,
    placement: str = "axis",
    offsets: np.ndarray | None = None,
    scale_to_ball: bool = True,
) -> FractalSet:
    """Self-similar dust from m branches of ratio r iterated `level` times.

    Placement presets lay the branch translations on a coordinate axis, a
    2-plane grid, the main diagonal, or as an n-fold product of the axis
    digit set; explicit offsets (m rows in [0, 1-r]^n) override the preset.
    The similarity dimension is log(branches)/log(1/r).
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"ratio must lie in (0,1), got {r}")
    if m < 1 or level < 0:
        raise ValueError("branch count must be >= 1 and level >= 0")
    if offsets is None:
        offsets = _branch_offsets(n, m, r, placement)
    else:
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != (m, n) or offsets.min() < 0.0 or offsets.max() > 1.0 - r + 1e-12:
            raise ValueError("offsets must be (m, n) values in [0, 1-r]")
        placement = "explicit"
    branches = offsets.shape[0]
    if branches ** level > 100_000_000:
        raise ValueError(f"{branches}^{level} points exceed the 1e8 construction cap")
    _check_disjoint(offsets, r)
    pts = np.zeros((1, n))
    for _ in range(level):
        pts = (offsets[None, :, :] + r * pts[:, None, :]).reshape(-1, n)
    pts = pts + (r ** level) / 2.0
    cell = r ** level
    if scale_to_ball:
        pts = _ball_transform(pts, n)
        cell *= 0.98 / math.sqrt(n)
    dim = 0.0 if branches == 1 else math.log(branches) / math.log(1.0 / r)
    return FractalSet(
        n=n,
        points=pts,
        similarity_dim=dim,
        cell_side=cell,
        level=level,
        generator={"m": branches, "ratio": r, "placement": placement},
    )


def product_fractal(axes: list, scale_to_ball: bool = True) -> FractalSet:
    """Cartesian product of independent one-dimensional constructions.

    Each axis spec is ('cantor', m, ratio, level), ('uniform', count) for
    count equispaced points filling the axis, or ('point',) for a centered
    singleton.  Box-counting dimensions add across factors.
    """
    coords = []
    dims = []
    cells = []
    levels = []
    for spec in axes:
        kind = spec[0]
        if kind == "cantor":
            _, m, r, level = spec
            f = build_cantor_dust(1, m, r, level, placement="axis", scale_to_ball=False)
            coords.append(f.points[:, 0])
            dims.append(f.similarity_dim)
            cells.append(f.cell_side)
            levels.append(level)
        elif kind == "uniform":
            count = spec[1]
            coords.append((np.arange(count) + 0.5) / count)
            dims.append(1.0)
            cells.append(1.0 / count)
            levels.append(int(math.ceil(math.log2(max(count, 2)))))
        elif kind == "point":
            coords.append(np.array([0.5]))
            dims.append(0.0)
            cells.append(1.0)
            levels.append(0)
        else:
            raise ValueError(f"unknown product axis kind {kind!r}")
    n = len(coords)
    total = int(np.prod([c.size for c in coords]))
    if total > 100_000_000:
        raise ValueError("product construction exceeds the 1e8 point cap")
    mesh = np.meshgrid(*coords, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    cell = min(cells)
    if scale_to_ball:
        pts = _ball_transform(pts, n)
        cell *= 0.98 / math.sqrt(n)
    return FractalSet(
        n=n,
        points=pts,
        similarity_dim=float(sum(dims)),
        cell_side=cell,
        level=max(levels),
        generator={"axes": [list(s) for s in axes], "product": True},
    )


# ---------------------------------------------------------------------------
# box dimension


@dataclass
class BoxCountFit:
    slope: float
    intercept: float
    r2: float
    scales: list[int]  # exponents k actually used
    counts: list[int]
    residuals: np.ndarray
    excluded: list[int]
    warning: str | None = None


def box_dimension(points: np.ndarray, k_min: int, k_max: int) -> BoxCountFit:
    """Least-squares slope of log2 N(2^-k) against k over [k_min, k_max].

    Scales where the covering count saturates (approaches the raw point
    count, or stops growing) are excluded from the fit and reported.
    """
    if k_max - k_min < 3:
        raise ScaleError("need at least four scales: k_max - k_min >= 3")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("cannot fit a dimension to an empty set")
    ks = list(range(k_min, k_max + 1))
    counts = [covering_number(pts, 2.0 ** -k) for k in ks]
    n_pts = pts.shape[0]
    warning = None
    cut = len(ks)
    for i, c in enumerate(counts):
        if c > 0.45 * n_pts:
            cut = i
            warning = f"counts saturate at k={ks[i]} (N={c} of {n_pts} points)"
            break
    kept_ks = ks[:cut]
    kept_counts = counts[:cut]
    excluded = ks[cut:]
    # trim only the trailing plateau; interior flat steps are real structure
    # (lacunary constructions alternate flat and jumping scales)
    while len(kept_counts) >= 2 and kept_counts[-1] < kept_counts[-2] * 2 ** 0.02:
        if warning is None:
            warning = f"counts stop growing at k={kept_ks[-1]}"
        excluded.insert(0, kept_ks[-1])
        kept_ks = kept_ks[:-1]
        kept_counts = kept_counts[:-1]
    if len(kept_ks) < 2:
        if len(set(counts)) == 1:
            # a single occupied cell at every scale: dimension zero exactly
            return BoxCountFit(0.0, math.log2(counts[0]), 1.0, ks, counts,
                               np.zeros(len(ks)), [], None)
        raise ScaleError("fewer than two usable scales after saturation exclusion")
    fit = fit_line(np.array(kept_ks, dtype=float), np.log2(kept_counts))
    return BoxCountFit(
        slope=fit.slope,
        intercept=fit.intercept,
        r2=fit.r2,
        scales=kept_ks,
        counts=kept_counts,
        residuals=fit.residuals,
        excluded=excluded,
        warning=warning,
    )


# ---------------------------------------------------------------------------
# spread (delta, s) subsets


@dataclass
class DeltaSSet:
    """delta-separated point set whose ball counts obey a power law.

    For every center x and radius r >= delta the subset puts at most
    witnessed_C * r^s * len(points) points into B(x, r); witnessed_C is
    measured on dyadic probe radii after construction.
    """

    points: np.ndarray
    delta: float
    s: float
    witnessed_C: float
    source_count: int

    def __len__(self) -> int:
        return self.points.shape[0]


def _witness_ball_constant(points: np.ndarray, delta: float, s: float) -> float:
    n_pts = points.shape[0]
    if n_pts <= 1:
        return 1.0
    tree = cKDTree(points)
    probes = points[:: max(1, n_pts // 128)]
    k = scale_exponent(delta)
    worst = 0.0
    for i in range(0, k):
        r = 2.0 ** -i
        if r < delta:
            break
        counts = tree.query_ball_point(probes, r, return_length=True)
        worst = max(worst, float(np.max(counts)) / (r ** s * n_pts))
    return worst


def _rows_as_void(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.view([("", a.dtype)] * a.shape[1]).ravel()


def extract_delta_s_set(
    points: np.ndarray,
    delta: float,
    s: float,
    budget_constant: float = 1.0,
) -> DeltaSSet:
    """Largest-practical subset that is delta-separated with r^s ball counts.

    Descends the dyadic tree keeping at most ceil(budget_constant * 2^(j s))
    occupied cells per depth j (per level-0 root), picks one source point in
    each surviving delta-cell, then greedily enforces delta-separation.
    Raises when the source cannot support the requested exponent at all
    (its delta-covering is smaller than delta^-s / 4).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = scale_exponent(delta)
    if s < 0.0:
        raise ValueError("exponent s must be nonnegative")
    cover = covering_number(pts, delta)
    if cover < 2.0 ** (k * s) / 4.0:
        raise InfeasibleExtractionError(
            f"source covering {cover} cannot support a (2^-{k}, {s}) set"
        )
    budgets = [int(math.ceil(budget_constant * 2.0 ** (j * s))) for j in range(k + 1)]
    kept_cells = _descend(pts, k, budgets)
    reps = _cell_representatives(pts, kept_cells, k)
    reps = _separate(reps, delta)
    if reps.shape[0] < budgets[k] / 8.0:
        raise InfeasibleExtractionError(
            f"descent starved: kept {reps.shape[0]} of a {budgets[k]} target; "
            "the source is too sparse at intermediate scales for this exponent"
        )
    return DeltaSSet(
        points=reps,
        delta=delta,
        s=s,
        witnessed_C=_witness_ball_constant(reps, delta, s),
        source_count=pts.shape[0],
    )


def _descend(pts: np.ndarray, k: int, budgets: list[int]) -> np.ndarray:
    """Keep at most budgets[j] occupied cells per depth j, chosen by even
    striding through the lexicographic order (which spreads them spatially);
    a kept cell always has an occupied child, so the chain never dies."""
    kept = _unique_rows(_cell_indices(pts, 0), 0)
    for j in range(1, k + 1):
        cells = _unique_rows(_cell_indices(pts, j), j)
        mask = np.isin(_rows_as_void(cells >> 1), _rows_as_void(kept))
        cand = cells[mask]
        b = budgets[j]
        if cand.shape[0] > b:
            sel = (np.arange(b, dtype=np.int64) * cand.shape[0]) // b
            cand = cand[sel]
        kept = cand
    return kept


def _cell_representatives(pts: np.ndarray, cells: np.ndarray, k: int) -> np.ndarray:
    idx = _cell_indices(pts, k)
    mask = np.isin(_rows_as_void(idx), _rows_as_void(cells))
    chosen = pts[mask]
    cidx = idx[mask]
    order = np.lexsort(np.concatenate([chosen.T[::-1], cidx.T[::-1]], axis=0))
    chosen, cidx = chosen[order], cidx[order]
    first = np.ones(chosen.shape[0], dtype=bool)
    first[1:] = np.any(np.diff(cidx, axis=0) != 0, axis=1)
    return chosen[first]


def separate_points(pts: np.ndarray, delta: float) -> np.ndarray:
    """Greedy thinning of a point set to pairwise distance >= delta."""
    return _separate(np.atleast_2d(np.asarray(pts, dtype=float)), delta)


def _separate(pts: np.ndarray, delta: float) -> np.ndarray:
    """Greedy thinning to pairwise distance >= delta (closed comparison)."""
    if pts.shape[0] <= 1:
        return pts
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    tree = cKDTree(pts)
    keep = np.ones(pts.shape[0], dtype=bool)
    pairs = tree.query_pairs(delta * (1.0 - 1e-12), output_type="ndarray")
    for a, b in pairs:
        if keep[a] and keep[b]:
            keep[max(a, b)] = False
    return pts[keep]


def spread_delta_s_set(d: int, delta: float, s: float, budget_constant: float = 1.0) -> np.ndarray:
    """Canonical (delta, s) spread set in [0,1]^d without a source point set.

    Equivalent to extracting from the full delta-grid: every dyadic cell is
    occupied, so the tree descent just strides through complete index sets.
    Returns delta-cell centers.
    """
    k = scale_exponent(delta)
    kept = np.zeros((1, d), dtype=np.int64)
    offs = np.stack(np.meshgrid(*([np.arange(2)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    for j in range(1, k + 1):
        cand = (kept[:, None, :] * 2 + offs[None, :, :]).reshape(-1, d)
        order = np.lexsort(cand.T[::-1])
        cand = cand[order]
        b = int(math.ceil(budget_constant * 2.0 ** (j * s)))
        if cand.shape[0] > b:
            sel = (np.arange(b, dtype=np.int64) * cand.shape[0]) // b
            cand = cand[sel]
        kept = cand
    return (kept + 0.5) * delta


# ---------------------------------------------------------------------------
# Frostman-type measure checks


@dataclass
class FrostmanReport:
    exponent: float
    max_ratio: float
    p99_ratio: float
    trials: int
    r_min: float
    r_max: float


def frostman_check(
    fractal: FractalSet,
    exponent: float,
    trials: int,
    rng: np.random.Generator,
    r_min: float | None = None,
    r_max: float = 1.0,
) -> FrostmanReport:
    """Ratios mu(B(x, r)) / r^exponent for the natural measure, at random
    centers on the set and log-uniform radii."""
    pts = fractal.points
    n_pts = pts.shape[0]
    if r_min is None:
        r_min = max(fractal.cell_side * 2.0, 1e-6)
    tree = cKDTree(pts)
    centers = pts[rng.integers(0, n_pts, size=trials)]
    radii = np.exp(rng.uniform(math.log(r_min), math.log(r_max), size=trials))
    counts = np.array(
        [tree.query_ball_point(c, r, return_length=True) for c, r in zip(centers, radii)],
        dtype=float,
    )
    ratios = (counts / n_pts) / radii ** exponent
    return FrostmanReport(
        exponent=exponent,
        max_ratio=float(ratios.max()),
        p99_ratio=float(np.quantile(ratios, 0.99)),
        trials=trials,
        r_min=float(r_min),
        r_max=float(r_max),
    )


# ---------------------------------------------------------------------------
# binary point-cloud interchange


_PTS_MAGIC = b"PTS1"


def write_pts(path, points: np.ndarray) -> None:
    """Binary point cloud: magic 'PTS1', u32 dimension, u64 count, then
    count*dimension little-endian float64 coordinates."""
    pts = np.atleast_2d(np.asarray(points, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(_PTS_MAGIC)
        fh.write(struct.pack("<IQ", pts.shape[1], pts.shape[0]))
        fh.write(np.ascontiguousarray(pts).tobytes())


def read_pts(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _PTS_MAGIC:
            raise ValueError(f"bad magic {magic!r}; not a PTS1 file")
        dim, count = struct.unpack("<IQ", fh.read(12))
        data = np.frombuffer(fh.read(8 * dim * count), dtype="<f8")
        if data.size != dim * count:
            raise ValueError("truncated PTS1 payload")
        return data.reshape(count, dim).copy()
