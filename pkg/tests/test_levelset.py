import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import field_from_function
from hcwreach.levelset import (
    RECOVERY_BOX,
    BoxTarget,
    DiscTarget,
    FieldFormatError,
    GridSpec,
    Interpolator,
    ScalarField,
    axis_index,
    build_target_field,
    cell_increment_scale,
    field_from_bytes,
    field_to_bytes,
    gradient_central,
    gradient_upwind,
    one_sided_differences,
    read_field,
    sample,
    slice_2d,
    target_value,
    write_field,
    zero_contour_slice,
)

SPEC = GridSpec((-1500.0, -750.0, -5.0, -5.0), (1500.0, 750.0, 5.0, 5.0), (13, 11, 9, 9))


def random_field(spec=SPEC, seed=0):
    return ScalarField(spec, np.random.default_rng(seed).normal(size=spec.shape))


# --- grid and field ---------------------------------------------------------------


def test_default_grid():
    g = GridSpec.default()
    assert g.shape == (31, 31, 31, 31)
    assert g.size == 923521
    assert np.allclose(g.spacing, [100.0, 50.0, 1.0 / 3.0, 1.0 / 3.0])
    assert g.box() == [(-1500.0, 1500.0), (-750.0, 750.0), (-5.0, 5.0), (-5.0, 5.0)]


@pytest.mark.parametrize(
    "mins,maxs,counts",
    [
        ((0, 0, 0, 0), (1, 1, 1, 0), (3, 3, 3, 3)),
        ((0, 0, 0, 0), (1, 1, 1, 1), (3, 3, 3, 2)),
        ((0, 0, 0), (1, 1, 1), (3, 3, 3)),
        ((0, 0, 0, float("nan")), (1, 1, 1, 1), (3, 3, 3, 3)),
    ],
)
def test_grid_validation(mins, maxs, counts):
    with pytest.raises(ValueError):
        GridSpec(mins, maxs, counts)


def test_grid_node_and_contains():
    assert np.allclose(SPEC.node((0, 0, 0, 0)), SPEC.mins)
    assert np.allclose(SPEC.node((12, 10, 8, 8)), SPEC.maxs)
    assert SPEC.contains((0, 0, 0, 0))
    assert not SPEC.contains((1501, 0, 0, 0))


def test_field_is_read_only_and_finite():
    f = random_field()
    with pytest.raises(ValueError):
        f.values[0, 0, 0, 0] = 1.0
    bad = np.zeros(SPEC.shape)
    bad[1, 1, 1, 1] = np.inf
    with pytest.raises(ValueError):
        ScalarField(SPEC, bad)
    assert f == ScalarField(SPEC, f.values.copy())
    assert f != random_field(seed=1)


# --- targets ----------------------------------------------------------------------


def test_disc_target_signed_distance():
    d = DiscTarget(200.0)
    assert target_value(d, (0, 0, 3, -3)) == -200.0
    assert target_value(d, (300, 400, 0, 0)) == pytest.approx(300.0)
    with pytest.raises(ValueError):
        DiscTarget(0.0)


def test_box_target_signed_linf():
    assert target_value(RECOVERY_BOX, (1000, 0, 0, 0)) == pytest.approx(-0.01)
    assert target_value(RECOVERY_BOX, (1100, 0, 0, 0)) == pytest.approx(50.0)
    assert target_value(RECOVERY_BOX, (1000, 0, 0.02, 0)) == pytest.approx(0.01)
    b = BoxTarget.from_mapping({"x": (-200, 200)})
    assert b.bounds[1:] == (None, None, None)
    assert target_value(b, (150, 9999, 9, 9)) == pytest.approx(-50.0)
    with pytest.raises(ValueError):
        BoxTarget(((1, 0), None, None, None))
    with pytest.raises(ValueError):
        BoxTarget((None, None, None, None))


def test_build_target_field_matches_pointwise():
    f = build_target_field(SPEC, DiscTarget(200.0))
    for idx in [(0, 0, 0, 0), (6, 5, 4, 4), (3, 7, 1, 8)]:
        assert f.values[idx] == pytest.approx(target_value(DiscTarget(200.0), SPEC.node(idx)))
    box = BoxTarget.from_mapping({"x": (-200, 200), "vx": (-1, 1)})
    fb = build_target_field(SPEC, box)
    assert fb.values[6, 0, 4, 0] == pytest.approx(-1.0)


# --- interpolation ------------------------------------------------------------------


@settings(max_examples=40)
@given(i=st.integers(0, 12), j=st.integers(0, 10), k=st.integers(0, 8), m=st.integers(0, 8))
def test_interpolation_exact_on_nodes(i, j, k, m):
    f = random_field()
    val, off = sample(f, SPEC.node((i, j, k, m)))
    assert not off
    assert val == pytest.approx(f.values[i, j, k, m], abs=1e-12)


@settings(max_examples=40)
@given(
    idx=st.tuples(st.integers(0, 11), st.integers(0, 9), st.integers(0, 7), st.integers(0, 7)),
    axis=st.integers(0, 3),
    t=st.floats(0, 1),
)
def test_interpolation_linear_along_edges(idx, axis, t):
    f = random_field()
    a = np.array(idx)
    b = a.copy()
    b[axis] += 1
    pa, pb = SPEC.node(a), SPEC.node(b)
    val, _ = sample(f, pa + t * (pb - pa))
    expected = (1 - t) * f.values[tuple(a)] + t * f.values[tuple(b)]
    assert val == pytest.approx(expected, abs=1e-9)


def test_interpolation_reproduces_multilinear_functions():
    f = field_from_function(SPEC, lambda x, y, vx, vy: 2 * x - y + 30 * vx * vy + 0.001 * x * y)
    interp = Interpolator(f)
    pts = np.random.default_rng(3).uniform(SPEC.mins, SPEC.maxs, size=(50, 4))
    vals, off = interp.many(pts)
    exact = 2 * pts[:, 0] - pts[:, 1] + 30 * pts[:, 2] * pts[:, 3] + 0.001 * pts[:, 0] * pts[:, 1]
    assert np.allclose(vals, exact, atol=1e-8)
    assert not off.any()
    assert all(interp(p)[0] == pytest.approx(v, abs=1e-10) for p, v in zip(pts[:5], vals[:5]))


def test_off_grid_clamp_plus_distance():
    f = random_field()
    edge, _ = sample(f, (1500, 0, 0, 0))
    val, off = sample(f, (1600, 0, 0, 7))
    edge2, _ = sample(f, (1500, 0, 0, 5))
    assert off
    assert val == pytest.approx(edge2 + 100.0)
    assert edge == pytest.approx(sample(f, (1500, 0, 0, 0))[0])


def test_disc_field_sampled_just_outside_radius():
    spec = GridSpec.default()
    f = build_target_field(spec, DiscTarget(200.0))
    eps = 7.0
    val, _ = sample(f, (200.0 + eps, 0.0, 0.0, 0.0))
    # x = 207 lies between nodes 200 and 300, where the field is exactly linear
    assert val == pytest.approx(eps, abs=spec.spacing[0] * 0.01)


def test_extra_channels_share_weights():
    f = field_from_function(SPEC, lambda x, y, vx, vy: x + 0 * y)
    interp = Interpolator(f, extra=[f.values, 2 * f.values])
    val, extra, off = interp.with_extra((123.0, 4.0, 0.5, -0.5))
    assert val == pytest.approx(123.0)
    assert np.allclose(extra, [123.0, 246.0])


# --- finite differences ----------------------------------------------------------------


def test_one_sided_differences_at_kink():
    xs = np.linspace(-5, 5, 11)
    minus, plus = one_sided_differences(np.abs(xs - 0.0), 0, 1.0)
    assert minus[5] == -1.0 and plus[5] == 1.0
    # linear extrapolation ghosts: edge differences equal the interior slope
    assert minus[0] == plus[0] == -1.0
    assert minus[-1] == plus[-1] == 1.0


def test_upwind_and_central_exact_for_linear_field():
    f = field_from_function(SPEC, lambda x, y, vx, vy: 0.5 * x - 2 * y + 3 * vx - vy)
    minus, plus = gradient_upwind(f)
    central = gradient_central(f)
    for i, c in enumerate([0.5, -2.0, 3.0, -1.0]):
        assert np.allclose(minus[i], c) and np.allclose(plus[i], c) and np.allclose(central[i], c)


def test_cell_increment_scale_linear_field():
    f = field_from_function(SPEC, lambda x, y, vx, vy: 0.01 * x + 0.02 * y)
    expected = np.hypot(0.01 * SPEC.spacing[0], 0.02 * SPEC.spacing[1])
    assert cell_increment_scale(f) == pytest.approx(expected)


# --- slicing and contours ----------------------------------------------------------


def test_axis_index():
    assert axis_index("vy") == 3 and axis_index(1) == 1
    with pytest.raises(ValueError):
        axis_index("z")
    with pytest.raises(ValueError):
        axis_index(4)


def test_slice_2d_validation_and_values():
    f = field_from_function(SPEC, lambda x, y, vx, vy: x + 100 * vx + 1000 * vy + 0 * y)
    plane, free = slice_2d(f, {"vx": 0.5, "vy": -1.25})
    assert free == (0, 1)
    assert np.allclose(plane[:, 0], SPEC.axis(0) + 50.0 - 1250.0)
    with pytest.raises(ValueError):
        slice_2d(f, {"vx": 0.0})
    with pytest.raises(ValueError):
        slice_2d(f, {"vx": 0.0, "vy": 6.0})


def test_disc_contour_is_circle():
    spec = GridSpec.default()
    f = build_target_field(spec, DiscTarget(200.0))
    polys = zero_contour_slice(f, {"vx": 0.0, "vy": 0.0})
    assert len(polys) == 1
    poly = polys[0]
    assert np.allclose(poly[0], poly[-1])
    radial = np.abs(np.hypot(poly[:, 0], poly[:, 1]) - 200.0)
    assert radial.max() <= np.hypot(*spec.spacing[:2])


def test_recovery_box_contour_within_one_cell():
    spec = GridSpec((800.0, -100.0, -1.0, -1.0), (1200.0, 100.0, 1.0, 1.0), (41, 41, 5, 5))
    box = BoxTarget(((950.0, 1050.0), (-25.0, 25.0), None, None))
    polys = zero_contour_slice(build_target_field(spec, box), {"vx": 0.0, "vy": 0.0})
    assert len(polys) == 1
    lo, hi = polys[0].min(axis=0), polys[0].max(axis=0)
    h = spec.spacing[:2]
    assert np.all(np.abs(lo - [950.0, -25.0]) <= h)
    assert np.all(np.abs(hi - [1050.0, 25.0]) <= h)


def test_uniform_sign_slice_has_no_contour():
    f = field_from_function(SPEC, lambda x, y, vx, vy: 1.0 + 0 * x)
    assert zero_contour_slice(f, {"x": 0.0, "y": 0.0}) == []


# --- HJF1 files ------------------------------------------------------------------------


def test_hjf1_layout():
    spec = GridSpec((0, 1, 2, 3), (1, 2, 3, 4), (3, 4, 5, 6))
    f = random_field(spec)
    data = field_to_bytes(f)
    assert data[:4] == b"HJF1"
    assert struct.unpack_from("<I", data, 4) == (4,)
    assert struct.unpack_from("<ddI", data, 8) == (0.0, 1.0, 3)
    assert struct.unpack_from("<ddI", data, 8 + 3 * 20) == (3.0, 4.0, 6)
    assert len(data) == 8 + 4 * 20 + 8 * spec.size
    # row-major, last axis fastest
    assert struct.unpack_from("<d", data, 88 + 8) == (f.values[0, 0, 0, 1],)


def test_hjf1_roundtrip_bit_exact(tmp_path):
    f = random_field()
    path = tmp_path / "f.hjf"
    write_field(path, f)
    g = read_field(path)
    assert g == f
    assert field_to_bytes(g) == path.read_bytes()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"HJF2" + b[4:],
        lambda b: b[:4] + struct.pack("<I", 3) + b[8:],
        lambda b: b[:-8],
        lambda b: b[:30],
        lambda b: b[:8] + struct.pack("<ddI", 1.0, 0.0, 13) + b[28:],
    ],
)
def test_hjf1_rejects_malformed(mutate):
    data = field_to_bytes(random_field())
    with pytest.raises(FieldFormatError):
        field_from_bytes(mutate(data))
