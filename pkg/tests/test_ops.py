import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecco.equilinear import EquiLinear
from ecco.field import FeatureField, PointSet
from ecco.kernel import PolarGridSpec, PolarKernel
from ecco.ops import AttentionWindow, cts_conv, equi_linear, naive_cts_conv, pointwise_nonlinearity
from ecco.repr import RepSpec, Rotation, act_field

K_REG = 8
PAIRINGS = [("rho1", "rho1"), ("rho1", "rhoreg"), ("rhoreg", "rho1"), ("rhoreg", "rhoreg")]


def spec(kind, n=1, k=K_REG):
    return RepSpec.rho1(n, k) if kind == "rho1" else RepSpec.rhoreg(n, k)


def setup(i, o, seed, n=6, n_in=2, n_out=1, R=2.0, spread=1.5):
    rng = np.random.default_rng(seed)
    grid = PolarGridSpec(8, 3, R)
    K = PolarKernel(grid, spec(i, n_in), spec(o, n_out), rng=rng)
    pts = PointSet(rng.uniform(-spread, spread, size=(n, 2)))
    f = FeatureField(pts, K.in_spec, rng.normal(size=(n, K.in_spec.dim)))
    return K, AttentionWindow(R), f


def conv(K, w, f, q=None):
    return cts_conv(K, w, f, f.points if q is None else q).data


def set_single(L, value):
    (p,) = L.params.values()
    p.value = np.asarray(value, dtype=float).reshape(p.value.shape)
    return L


# --- attention window


def test_attention_window_shape():
    a = AttentionWindow(2.0)
    r = np.linspace(0, 3, 301)
    v = a(r)
    assert v[0] == 1.0
    assert np.all(v[r > 2.0] == 0.0)
    assert np.all(np.diff(v[r <= 2.0]) <= 0)
    assert a(1.0) == pytest.approx(0.5625)


# --- equivariant linear maps


def test_rho1_to_rhoreg_quadrant_samples():
    L = set_single(EquiLinear(RepSpec.rho1(1, 4), RepSpec.rhoreg(1, 4)), 1.0)
    out = L.apply(np.array([[1.0, 0.0]])).value[0]
    assert np.allclose(out, [1, 0, -1, 0], atol=1e-15)


@pytest.mark.parametrize("k", [3, 4, 8, 16])
def test_round_trip_scales_by_pi(k):
    up = set_single(EquiLinear(RepSpec.rho1(1, k), RepSpec.rhoreg(1, k)), 1.0)
    down = set_single(EquiLinear(RepSpec.rhoreg(1, k), RepSpec.rho1(1, k)), 1.0)
    v = np.array([[0.3, -1.7]])
    out = down.apply(up.apply(v)).value
    assert np.allclose(out, math.pi * v, atol=1e-13)


def test_rhoreg_to_rho1_formula(rng):
    down = set_single(EquiLinear(RepSpec.rhoreg(1, 8), RepSpec.rho1(1, 8)), 0.7)
    f = rng.normal(size=8)
    ang = 2 * math.pi * np.arange(8) / 8
    want = 0.7 * (2 * math.pi / 8) * np.array([np.sum(f * np.cos(ang)), np.sum(f * np.sin(ang))])
    assert np.allclose(down.apply(f[None]).value[0], want, atol=1e-13)


def test_rho1_to_rho1_scaling():
    L = set_single(EquiLinear(RepSpec.rho1(1), RepSpec.rho1(1)), -2.5)
    assert np.allclose(L.apply(np.array([[1.0, 2.0]])).value, [[-2.5, -5.0]])


def test_delta_kappa_is_identity(rng):
    kappa = np.zeros(8)
    kappa[0] = 8 / (2 * math.pi)
    L = set_single(EquiLinear(RepSpec.rhoreg(1, 8), RepSpec.rhoreg(1, 8)), kappa)
    f = rng.normal(size=(3, 8))
    assert np.allclose(L.apply(f).value, f, atol=1e-14)


def test_rhoreg_circular_convolution_formula(rng):
    kappa = rng.normal(size=8)
    L = set_single(EquiLinear(RepSpec.rhoreg(1, 8), RepSpec.rhoreg(1, 8)), kappa)
    f = rng.normal(size=8)
    want = [(2 * math.pi / 8) * sum(kappa[(a - b) % 8] * f[b] for b in range(8)) for a in range(8)]
    assert np.allclose(L.apply(f[None]).value[0], want, atol=1e-13)


@pytest.mark.parametrize("pair", PAIRINGS)
def test_equi_linear_commutes_with_grid_rotations(pair, rng):
    L = EquiLinear(spec(pair[0], 2), spec(pair[1], 3), rng=rng)
    pts = PointSet(rng.normal(size=(4, 2)))
    f = FeatureField(pts, L.in_spec, rng.normal(size=(4, L.in_spec.dim)))
    for m in range(8):
        rot = Rotation(2 * math.pi * m / 8)
        lhs = act_field(rot, L.out_spec, equi_linear(L, f).data)
        rhs = equi_linear(L, f.rotated(rot)).data
        assert np.abs(lhs - rhs).max() < 1e-12


def test_equi_linear_spec_mismatch(rng):
    L = EquiLinear(RepSpec.rho1(1, 8), RepSpec.rho1(1, 8))
    f = FeatureField(PointSet(np.zeros((1, 2))), RepSpec.rho1(2, 8), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        equi_linear(L, f)
    with pytest.raises(ValueError):
        EquiLinear(RepSpec.rho1(1, 8), RepSpec.rho1(1, 4))


# --- continuous convolution


def test_no_neighbours_gives_zero():
    K, w, f = setup("rho1", "rho1", 0)
    far = PointSet(np.array([[50.0, 50.0]]))
    assert np.array_equal(conv(K, w, f, far), np.zeros((1, K.out_spec.dim)))


@pytest.mark.parametrize("pair", PAIRINGS)
def test_self_interaction_is_bullseye_map(pair, rng):
    K, w, _ = setup(*pair, 3)
    x = PointSet(np.array([[0.4, -0.2]]))
    f = FeatureField(x, K.in_spec, rng.normal(size=(1, K.in_spec.dim)))
    want = K.bullseye.apply(f.data).value
    assert np.allclose(conv(K, w, f), want, atol=1e-13)
    # the same thing viewed as a per-particle layer
    assert np.allclose(conv(K, w, f), equi_linear(K.bullseye, f).data, atol=1e-13)


def test_matches_double_loop_rho1():
    K, w, f = setup("rho1", "rho1", 11, n=5)
    assert np.abs(conv(K, w, f) - naive_cts_conv(K, w, f, f.points)).max() <= 1e-12


@pytest.mark.parametrize("pair", PAIRINGS)
@pytest.mark.parametrize("mode", ["bilinear", "nearest"])
def test_matches_double_loop_all_pairings(pair, mode):
    K, w, f = setup(*pair, 12, n=7)
    q = PointSet(np.random.default_rng(1).uniform(-1, 1, size=(3, 2)))
    fast = cts_conv(K, w, f, q, mode=mode).data
    assert np.abs(fast - naive_cts_conv(K, w, f, q, mode=mode)).max() <= 1e-12


def test_spec_mismatch_raises():
    K, w, f = setup("rho1", "rho1", 0)
    bad = FeatureField(f.points, RepSpec.rhoreg(1, K_REG), np.zeros((len(f.points), K_REG)))
    with pytest.raises(ValueError):
        cts_conv(K, w, bad, f.points)


@pytest.mark.parametrize("pair", PAIRINGS)
@given(m=st.integers(0, 7), seed=st.integers(0, 10**6))
def test_conv_equivariant_at_grid_angles(pair, m, seed):
    K, w, f = setup(*pair, seed)
    rot = Rotation(2 * math.pi * m / 8)
    lhs = act_field(rot, K.out_spec, conv(K, w, f))
    rhs = conv(K, w, f.rotated(rot))
    assert np.abs(lhs - rhs).max() <= 1e-8


@given(seed=st.integers(0, 10**6))
def test_conv_permutation_invariant(seed):
    K, w, f = setup("rhoreg", "rho1", seed, n=8)
    perm = np.random.default_rng(seed).permutation(8)
    g = FeatureField(PointSet(f.points.positions[perm]), f.spec, f.data[perm])
    assert np.allclose(conv(K, w, f, f.points), conv(K, w, g, f.points), atol=1e-12)


@given(seed=st.integers(0, 10**6), shift=st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)))
def test_conv_translation_invariant(seed, shift):
    K, w, f = setup("rho1", "rhoreg", seed)
    moved = f.translated(shift)
    assert np.abs(conv(K, w, f) - conv(K, w, moved)).max() <= 1e-10


# --- nonlinearity


def test_nonlinearity_examples():
    s = RepSpec.rhoreg(1, 2)
    pts = PointSet(np.zeros((1, 2)))
    pos = FeatureField(pts, s, np.array([[0.5, 2.0]]))
    assert np.array_equal(pointwise_nonlinearity(pos).data, pos.data)
    mixed = FeatureField(pts, s, np.array([[-1.0, 2.0]]))
    assert np.allclose(pointwise_nonlinearity(mixed).data, [[-0.01, 2.0]])


def test_nonlinearity_rejects_rho1():
    f = FeatureField(PointSet(np.zeros((1, 2))), RepSpec(((("rhoreg", 1), ("rho1", 1))), 4), np.zeros((1, 6)))
    with pytest.raises(ValueError):
        pointwise_nonlinearity(f)


@given(m=st.integers(0, 15), seed=st.integers(0, 10**6))
def test_nonlinearity_commutes_with_shifts(m, seed):
    rng = np.random.default_rng(seed)
    s = RepSpec.rhoreg(3, 16)
    f = FeatureField(PointSet(rng.normal(size=(5, 2))), s, rng.normal(size=(5, s.dim)))
    rot = Rotation(2 * math.pi * m / 16)
    lhs = act_field(rot, s, pointwise_nonlinearity(f).data)
    rhs = pointwise_nonlinearity(f.rotated(rot)).data
    assert np.abs(lhs - rhs).max() < 1e-12
