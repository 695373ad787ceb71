"""projlab: numerical laboratory for sphere cross-sections, their distorted
tangent-plane projections, fractal test sets, and the associated cones."""

from .manifold import (  # noqa: F401
    CapChart,
    ChartConstants,
    ChartDomainError,
    CurvatureData,
    DegenerateJacobianError,
    DualChart,
    Frame,
    ManifoldChart,
    NonConvexityError,
    PerturbedCapChart,
    SubChart,
    curvature_at,
    dual_chart,
    frame_at,
    make_cap_chart,
    make_perturbed_cap_chart,
    second_fundamental_bounds,
    subdivide,
)

__version__ = "0.1.0"
