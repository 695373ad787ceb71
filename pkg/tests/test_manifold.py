import numpy as np
import pytest

from projlab.manifold import (
    CapChart,
    ChartDomainError,
    NonConvexityError,
    curvature_at,
    dual_chart,
    frame_at,
    frame_matrices,
    image_diameter,
    make_cap_chart,
    make_perturbed_cap_chart,
    principal_curvatures,
    second_fundamental_bounds,
    second_fundamental_quotients,
    subdivide,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_cap_point_on_sphere():
    for n in (3, 4, 5):
        ch = make_cap_chart(n, 0.6)
        x = rng(1).random((200, ch.dim))
        p = ch.point(x)
        assert np.abs(np.linalg.norm(p, axis=1) - 1.0).max() <= 1e-9
        assert np.abs(p[:, -1] - 0.6).max() <= 1e-12


def test_cap_height_range_rejected():
    with pytest.raises(ValueError):
        make_cap_chart(3, 1.5)
    with pytest.raises(ValueError):
        make_cap_chart(3, 0.0)
    with pytest.raises(ValueError):
        make_cap_chart(3, -1.0)


def test_domain_validation():
    ch = make_cap_chart(3, 0.6)
    with pytest.raises(ChartDomainError):
        ch.point(np.array([[1.7]]))
    with pytest.raises(ChartDomainError):
        ch.point(np.array([[-0.2]]))


def test_normal_is_unit_and_orthogonal():
    ch = make_cap_chart(3, 0.6)
    x = rng(2).random((300, 1))
    nu = ch.normal(x)
    p = ch.point(x)
    assert np.abs(np.linalg.norm(nu, axis=-1) - 1.0).max() <= 1e-9
    assert np.abs(np.einsum("xn,xn->x", nu, p)).max() <= 1e-9


def test_normal_height_is_dual_height():
    # the normal of the cap at height c has constant vertical part sqrt(1-c^2)
    for c in (0.3, 0.6, 0.9):
        ch = make_cap_chart(3, c)
        x = rng(3).random((100, 1))
        nu = ch.normal(x)
        assert np.abs(nu[..., -1] - np.sqrt(1 - c * c)).max() <= 1e-9


def test_normal_lipschitz_bound():
    ch = make_cap_chart(3, 0.6)
    consts = ch.constants
    bound = (consts.kappa_max * consts.jacobian_scale + 0.1) * 1e-3
    x = rng(4).random((200, 1)) * 0.99
    nu = ch.normal(x)
    nu2 = ch.normal(x + 1e-3)
    step = np.linalg.norm(nu2 - nu, axis=-1).max()
    assert step <= bound


def test_cap_curvature_value():
    # height 0.6 gives radius 0.8 and curvature 0.6/0.8 = 0.75 in every
    # principal direction, for any ambient dimension
    ch = make_cap_chart(3, 0.6)
    data = curvature_at(ch, np.full(1, 0.5))
    assert data.principal_curvatures.shape == (1,)
    assert abs(data.principal_curvatures[0] - 0.75) <= 1e-9
    assert abs(data.dual_curvatures[0] - 4.0 / 3.0) <= 1e-9

    ch5 = make_cap_chart(5, 0.6)
    x = rng(5).random((100, 3))
    kap = principal_curvatures(ch5, x)
    assert kap.shape == (100, 3)
    assert np.abs(kap - 0.75).max() <= 1e-7


def test_perturbed_zero_amplitude_matches_cap():
    ch = make_cap_chart(3, 0.6)
    pz = make_perturbed_cap_chart(3, 0.6, amplitude=0.0, frequency=2.0)
    x = rng(6).random((50, 1))
    assert np.abs(ch.point(x) - pz.point(x)).max() <= 1e-12
    ka = principal_curvatures(ch, x)
    kb = principal_curvatures(pz, x)
    assert np.abs(ka - kb).max() <= 1e-5


def test_perturbed_amplitude_keeps_convexity():
    pz = make_perturbed_cap_chart(3, 0.6, amplitude=0.01, frequency=2.0)
    x = rng(7).random((100, 1))
    kap = principal_curvatures(pz, x)
    assert kap.min() > 0


def test_perturbed_large_amplitude_rejected():
    with pytest.raises(NonConvexityError):
        make_perturbed_cap_chart(3, 0.6, amplitude=0.4, frequency=6.0)


def test_dual_image_height():
    # duality sends the height-c cross-section to the height sqrt(1-c^2) one
    for c in (0.3, 0.6, 0.9):
        ch = make_cap_chart(3, c)
        du = dual_chart(ch)
        x = rng(8).random((100, 1))
        h = du.point(x)[:, -1]
        assert np.abs(h - np.sqrt(1 - c * c)).max() <= 1e-10


def test_dual_involution():
    ch = make_cap_chart(3, 0.6)
    dd = dual_chart(dual_chart(ch))
    x = rng(9).random((100, 1))
    assert np.abs(dd.point(x)[:, -1] - 0.6).max() <= 1e-8
    # dual normal points back at the original surface point
    du = dual_chart(ch)
    assert np.abs(du.normal(x) - ch.point(x)).max() <= 1e-8


def test_dual_curvature_product():
    for n in (3, 4, 5):
        ch = make_cap_chart(n, 0.6)
        du = dual_chart(ch)
        x = rng(10).random((200, ch.dim))
        prod = principal_curvatures(ch, x) * principal_curvatures(du, x)
        assert np.abs(prod - 1.0).max() <= 1e-6


def test_tangent_space_duality():
    # tangent planes of the chart and its dual agree at matching parameters
    for n in (3, 4, 5):
        ch = make_cap_chart(n, 0.6)
        du = dual_chart(ch)
        x = rng(11).random((100, ch.dim))
        d = ch.dim
        Q1 = np.linalg.qr(np.swapaxes(frame_matrices(ch, x)[:, :d, :], 1, 2))[0]
        Q2 = np.linalg.qr(np.swapaxes(frame_matrices(du, x)[:, :d, :], 1, 2))[0]
        R = Q2 - Q1 @ (np.swapaxes(Q1, 1, 2) @ Q2)
        assert np.linalg.norm(R, axis=(1, 2)).max() <= 1e-7


def test_frame_orthogonality_and_conditioning():
    ch = make_cap_chart(4, 0.6)
    fr = frame_at(ch, np.array([0.3, 0.7]))
    # position, tangent rows, and normal are mutually orthogonal
    assert np.abs(fr.e @ fr.point).max() <= 1e-9
    assert abs(fr.nu @ fr.point) <= 1e-9
    assert np.abs(fr.e @ fr.nu).max() <= 1e-9
    assert abs(np.linalg.norm(fr.nu) - 1.0) <= 1e-9
    rows = np.concatenate([fr.point[None, :], fr.e, fr.nu[None, :]], axis=0)
    sv = np.linalg.svd(rows, compute_uv=False)
    assert fr.conditioning == sv[-1]
    assert ch.constants.frame_conditioning > 0.1
    assert fr.conditioning >= ch.constants.frame_conditioning * 0.99


def test_second_fundamental_bounds():
    ch = make_cap_chart(3, 0.6)
    hi, lo_dual = second_fundamental_bounds(ch, samples=2000)
    assert abs(hi - 0.75) <= 1e-6
    assert abs(lo_dual - 4.0 / 3.0) <= 1e-6


def test_second_fundamental_quadratic_scaling():
    # the form nu . (u^T H u) is bilinear, so doubling u multiplies it by 4
    ch = make_cap_chart(4, 0.6)
    x = np.array([[0.4, 0.6]])
    H = ch.hessian(x)
    nu = ch.normal(x)
    u = np.array([0.3, -0.7])
    form = lambda v: float(np.einsum("xk,xkij,i,j->x", nu, H, v, v)[0])
    assert abs(form(2.0 * u) / form(u) - 4.0) <= 1e-12


def test_second_fundamental_quotients_match_curvature():
    ch = make_cap_chart(4, 0.6)
    x = np.array([[0.4, 0.6], [0.1, 0.9]])
    lo, hi = second_fundamental_quotients(ch, x)
    assert np.abs(lo - 0.75).max() <= 1e-7
    assert np.abs(hi - 0.75).max() <= 1e-7


def test_perturbed_bounds_near_cap():
    base_hi, base_lo = second_fundamental_bounds(make_cap_chart(3, 0.6), samples=1500)
    hi, lo = second_fundamental_bounds(
        make_perturbed_cap_chart(3, 0.6, amplitude=0.01, frequency=2.0), samples=1500
    )
    assert abs(hi / base_hi - 1.0) <= 0.1
    assert abs(lo / base_lo - 1.0) <= 0.1


def test_sectional_curvature_hypothesis():
    for n in (4, 5):
        ch = make_cap_chart(n, 0.6)
        assert ch.constants.sectional_min > 1.0
    ch3 = make_cap_chart(3, 0.6)
    assert ch3.constants.kappa_min > 0


def test_subdivide_meets_diameter():
    ch = make_cap_chart(3, 0.6)
    pieces = subdivide(ch, np.pi / 100)
    assert len(pieces) >= 2
    for piece in pieces[:8]:
        assert image_diameter(piece) <= np.pi / 100 * 1.05
    # pieces tile the parameter interval
    los = sorted(p.lo[0] for p in pieces)
    assert los[0] == 0.0


def test_degenerate_jacobian_detected():
    class Collapsed(CapChart):
        def jacobian(self, x):
            return np.zeros_like(super().jacobian(x))

    ch = Collapsed(3, 0.6)
    from projlab.manifold import DegenerateJacobianError

    with pytest.raises(DegenerateJacobianError):
        frame_at(ch, np.array([0.5]))
