import math

import numpy as np
import pytest

from symcrit import grid
from symcrit.errors import ConfigurationError, ParameterError

from conftest import random_function


# ---------------------------------------------------------------------------
# independent quadrature oracle


def radial_l2_oracle(radius, dimension, profile, samples=400_000):
    """Midpoint-rule integral of profile(r)^2 over the ball, no grid code."""
    r = (np.arange(samples) + 0.5) * (radius / samples)
    sphere = 2.0 * math.pi ** (dimension / 2) / math.gamma(dimension / 2)
    shell = sphere * r ** (dimension - 1) * (radius / samples)
    return math.sqrt(float(np.sum(profile(r) ** 2 * shell)))


# ---------------------------------------------------------------------------
# construction


def test_square_node_counts_and_weights():
    dom = grid.build_domain("square", side=1.0, resolution=3)
    assert dom.n_nodes == 25
    assert int(np.sum(~dom.boundary)) == 9
    assert int(np.sum(dom.boundary)) == 16
    interior_w = dom.weights[~dom.boundary]
    assert np.allclose(interior_w, 0.25 ** 2, rtol=0, atol=1e-15)


def test_weights_sum_to_volume(square_small, disk_small, annulus_small, ball_small):
    for dom in (square_small, disk_small, annulus_small, ball_small):
        assert abs(np.sum(dom.weights) - dom.volume) <= 1e-10 * dom.volume
        assert np.all(dom.weights > 0)


def test_radial_ball_weight_profile():
    dom = grid.build_domain("radial-ball-1d", dimension=3, radius=10.0,
                            resolution=100)
    exact = 4.0 / 3.0 * math.pi * 10.0 ** 3
    assert abs(np.sum(dom.weights) - exact) <= 1e-2 * exact
    # away from the ends the weight is the exact shell volume, which is
    # 4 pi r^2 dr up to the cubic correction pi dr^3 / 3
    dr = dom.meta["dr"]
    r = dom.coords[5:-5, 0]
    shell = 4 * math.pi * r ** 2 * dr + math.pi * dr ** 3 / 3
    assert np.allclose(dom.weights[5:-5], shell, rtol=1e-12)
    assert np.allclose(dom.weights[5:-5], 4 * math.pi * r ** 2 * dr, rtol=1e-2)


def test_angular_resolution_divisibility():
    with pytest.raises(ConfigurationError):
        grid.build_domain("disk-polar", radius=1.0, resolution=4,
                          angular_resolution=12)
    # relaxing the supported rotation order admits 12
    dom = grid.build_domain("disk-polar", radius=1.0, resolution=4,
                            angular_resolution=12, max_rotation_order=4)
    assert dom.meta["n_theta"] == 12


def test_resolution_floor():
    with pytest.raises(ConfigurationError):
        grid.build_domain("square", side=1.0, resolution=2)
    with pytest.raises(ConfigurationError):
        grid.build_domain("radial-ball-1d", dimension=3, radius=1.0,
                          resolution=1)
    # the radial chain supports the minimal two-unknown configuration
    dom = grid.build_domain("radial-ball-1d", dimension=3, radius=1.0,
                            resolution=2)
    assert int(np.count_nonzero(dom.interior)) == 2


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        grid.build_domain("hexagon", side=1.0, resolution=4)


def test_ball_needs_dimension():
    with pytest.raises(ConfigurationError):
        grid.build_domain("radial-ball-1d", radius=1.0, resolution=10)
    with pytest.raises(ConfigurationError):
        grid.build_domain("radial-ball-1d", dimension=1, radius=1.0,
                          resolution=10)


def test_polar_excludes_center():
    disk = grid.build_domain("disk-polar", radius=2.0, resolution=5,
                             angular_resolution=8)
    assert np.min(disk.radius2) > 0


# ---------------------------------------------------------------------------
# gradients


def test_zero_field_gradient(square_small, disk_small, ball_small):
    for dom in (square_small, disk_small, ball_small):
        u = grid.zeros(dom)
        assert np.all(grid.gradient_magnitude(u) == 0.0)


def test_radial_linear_gradient():
    R, a = 10.0, 0.7
    dom = grid.build_domain("radial-ball-1d", dimension=3, radius=R,
                            resolution=40)
    u = grid.GridFunction(dom, a * (R - dom.coords[:, 0]))
    du = grid.gradient_magnitude(u)
    assert np.max(np.abs(du - a)) <= 1e-12


def test_square_coordinate_gradient():
    dom = grid.build_domain("square", side=2.0, resolution=7)
    vals = dom.coords[:, 0].copy()
    vals[dom.boundary] = 0.0
    u = grid.GridFunction(dom, vals)
    du = grid.gradient_magnitude(u)
    # cells whose four corners are all interior see the exact slope
    cs = dom.cells
    all_interior = np.all(~dom.boundary[cs.nodes], axis=1)
    assert np.any(all_interior)
    assert np.max(np.abs(du[all_interior] - 1.0)) <= 1e-12


# ---------------------------------------------------------------------------
# norms


def test_norm_rejects_bad_exponents(ball_small):
    u = grid.zeros(ball_small)
    with pytest.raises(ParameterError):
        grid.norm_lm(u, 0.5)
    with pytest.raises(ParameterError):
        grid.norm_w1p(u, 1.0)
    with pytest.raises(ParameterError):
        grid.norm(u, "huh", 2.0)


def test_zero_norms(square_small):
    u = grid.zeros(square_small)
    assert grid.norm_lm(u, 2) == 0.0
    assert grid.norm_w1p(u, 2) == 0.0


def test_gaussian_l2_against_refined_oracle():
    R = 10.0
    dom = grid.build_domain("radial-ball-1d", dimension=3, radius=R,
                            resolution=400)
    vals = np.exp(-dom.coords[:, 0] ** 2)
    vals[dom.boundary] = 0.0
    u = grid.GridFunction(dom, vals)
    oracle = radial_l2_oracle(R, 3, lambda r: np.exp(-r * r))
    # sanity: the closed form of the integral is (pi/2)^{3/2}
    assert abs(oracle ** 2 - (math.pi / 2) ** 1.5) < 1e-6
    assert abs(grid.norm_lm(u, 2) - oracle) <= 1e-3 * oracle


@pytest.mark.parametrize("m", [1.0, 2.0, 4.0])
def test_triangle_inequality_lm(square_small, rng, m):
    dom = square_small
    for _ in range(250):
        u = random_function(dom, rng)
        v = random_function(dom, rng)
        s = grid.GridFunction(dom, u.values + v.values)
        lhs = grid.norm_lm(s, m)
        rhs = grid.norm_lm(u, m) + grid.norm_lm(v, m)
        assert lhs <= rhs + 1e-12 * (1 + rhs)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_triangle_inequality_w1p(disk_small, rng, p):
    dom = disk_small
    for _ in range(100):
        u = random_function(dom, rng)
        v = random_function(dom, rng)
        s = grid.GridFunction(dom, u.values + v.values)
        lhs = grid.norm_w1p(s, p)
        rhs = grid.norm_w1p(u, p) + grid.norm_w1p(v, p)
        assert lhs <= rhs + 1e-12 * (1 + rhs)


def test_norm_homogeneity(ball_small, rng):
    u = random_function(ball_small, rng)
    for c in (-3.5, 0.25, 7.0):
        cu = grid.GridFunction(ball_small, c * u.values)
        assert abs(grid.norm_lm(cu, 3) - abs(c) * grid.norm_lm(u, 3)) \
            <= 1e-12 * (1 + grid.norm_lm(u, 3))
        assert abs(grid.norm_w1p(cu, 2) - abs(c) * grid.norm_w1p(u, 2)) \
            <= 1e-12 * (1 + grid.norm_w1p(u, 2))


def test_refinement_consistency():
    """Norms of a fixed smooth profile settle as the grid refines."""
    R = 6.0
    profile = lambda r: np.cos(math.pi * r / (2 * R))
    oracle = radial_l2_oracle(R, 3, profile)
    errors = []
    for res in (16, 32, 64, 128):
        dom = grid.build_domain("radial-ball-1d", dimension=3, radius=R,
                                resolution=res)
        vals = profile(dom.coords[:, 0])
        vals[dom.boundary] = 0.0
        errors.append(abs(grid.norm_lm(grid.GridFunction(dom, vals), 2) - oracle))
    assert errors[-1] <= 0.01 * oracle
    for a, b in zip(errors, errors[1:]):
        assert b <= a * 1.05


# ---------------------------------------------------------------------------
# serialization


def test_gridfunction_roundtrip(tmp_path, disk_small, rng):
    u = random_function(disk_small, rng)
    path = tmp_path / "u.csv"
    grid.write_gridfunction(u, path, extra_comments=["config_hash = deadbeef"])
    text = path.read_text()
    assert text.startswith(grid.GRIDFUNCTION_HEADER + "\n")
    back = grid.read_gridfunction(disk_small, path)
    assert np.array_equal(back.values, u.values)


def test_gridfunction_header_check(tmp_path, disk_small):
    path = tmp_path / "bad.csv"
    path.write_text("not a header\n0,0,0,0\n")
    with pytest.raises(ConfigurationError):
        grid.read_gridfunction(disk_small, path)


def test_gridfunction_boundary_clamp(ball_small):
    vals = np.ones(ball_small.n_nodes)
    u = grid.GridFunction(ball_small, vals)
    assert np.all(u.values[ball_small.boundary] == 0.0)


def test_gridfunction_rejects_nan(ball_small):
    vals = np.zeros(ball_small.n_nodes)
    vals[0] = np.nan
    with pytest.raises(ParameterError):
        grid.GridFunction(ball_small, vals)
