import numpy as np
import pytest

from hexsphere import mesh as M
from hexsphere import sphereops as S
from hexsphere import tensor as T
from hexsphere.oracle import upsample_touches_pole
from hexsphere.sphereops import HexKernelBank, SphereTensor


def corners(W):
    return [(0, W), (0, W + 1), (2 * W, 0), (2 * W + 1, 0)]


def const(r, c, val=1.0):
    W = 2**r
    return SphereTensor(r, np.full((5, c, 2 * W, W), val, np.float32))


def test_tensor_validation():
    with pytest.raises(ValueError):
        SphereTensor(2, np.zeros((5, 1, 8, 8), np.float32))
    with pytest.raises(ValueError):
        SphereTensor(2, np.zeros((4, 1, 8, 4), np.float32))
    x = SphereTensor(1, np.zeros((5, 2, 4, 2)))
    assert x.data.dtype == np.float32 and x.channels == 2


@pytest.mark.parametrize("r", [0, 1, 3])
def test_pad_constant(r):
    W = 2**r
    P = S.pad(const(r, 2, 1.5), "full")
    assert P.shape == (5, 2, 2 * W + 2, W + 2)
    mask = np.ones(P.shape[2:], bool)
    for rc in corners(W):
        mask[rc] = False
    assert np.all(P[:, :, mask] == 1.5)
    assert np.all(P[:, :, ~mask] == 0)
    Pw = S.pad(const(r, 1), "west")
    assert Pw.shape == (5, 1, 2 * W + 1, W + 1)
    assert Pw[0, 0, 0, W] == 0 and Pw[0, 0, 2 * W, 0] == 0
    with pytest.raises(ValueError):
        S.pad(const(r, 1), "north")


@pytest.mark.parametrize("r", [0, 1, 2])
def test_pad_fills_from_neighbors(r):
    W = 2**r
    data = np.broadcast_to(np.arange(5, dtype=np.float32)[:, None, None, None] + 10, (5, 1, 2 * W, W))
    P = S.pad(SphereTensor(r, data.copy()), "full")[:, 0]
    zero = set(corners(W))
    for i in range(5):
        west_cells = [(0, c) for c in range(W + 1)] + [(rr, 0) for rr in range(2 * W + 1)]
        east_cells = [(2 * W + 1, c) for c in range(1, W + 2)] + [(rr, W + 1) for rr in range(1, 2 * W + 2)]
        assert {P[i][rc] for rc in west_cells if rc not in zero} == {10 + (i - 1) % 5}
        assert {P[i][rc] for rc in east_cells if rc not in zero} == {10 + (i + 1) % 5}


def test_hexconv_constant():
    r, c = 3, 0.75
    W = 2**r
    x = const(r, 2, c)
    bank = HexKernelBank(np.ones((3, 2, 7), np.float32))
    y = S.hexconv(x, bank).data
    near_zero = np.zeros((2 * W, W), bool)
    for pr, pc in corners(W):
        near_zero[max(pr - 2, 0):pr + 1, max(pc - 2, 0):pc + 1] = True
    assert np.allclose(y[:, :, ~near_zero], 7 * 2 * c)
    assert near_zero.sum() < 12


def test_hexconv_center_tap_is_identity():
    rng = np.random.default_rng(0)
    x = SphereTensor(2, rng.standard_normal((5, 3, 8, 4)).astype(np.float32))
    w = np.zeros((3, 3, 7), np.float32)
    w[np.arange(3), np.arange(3), 6] = 1
    y = S.hexconv(x, HexKernelBank(w, np.full(3, 0.5, np.float32)))
    np.testing.assert_allclose(y.data, x.data + 0.5, rtol=1e-6, atol=1e-7)


def test_hexconv_errors():
    x = const(2, 2)
    with pytest.raises(ValueError):
        S.hexconv(x, HexKernelBank(np.ones((1, 3, 7), np.float32)))
    with pytest.raises(ValueError):
        S.hexconv(x, HexKernelBank(np.ones((1, 2, 7), np.float32)), alpha=M.get_alpha(3))
    with pytest.raises(ValueError):
        HexKernelBank(np.ones((1, 2, 9), np.float32))


def test_kernel_bank_from_3x3():
    rng = np.random.default_rng(1)
    k = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    bank = HexKernelBank.from_3x3(k)
    k1 = bank.kernel(S.W1_TAPS)
    mask = np.ones((3, 3), bool)
    mask[0, 2] = mask[2, 0] = False
    assert np.array_equal(k1[..., mask], k[..., mask])
    assert np.all(k1[..., ~mask] == 0)


def test_pool_shapes_and_constants():
    x = const(3, 2, 2.5)
    for mode in ("max", "avg"):
        y = S.sphere_pool(x, mode)
        assert y.r == 2 and y.data.shape == (5, 2, 8, 4)
        assert np.all(y.data == 2.5)
    with pytest.raises(ValueError):
        S.sphere_pool(const(0, 1))


def test_upsample_keeps_coarse_values():
    rng = np.random.default_rng(2)
    for r in (0, 1, 3):
        x = SphereTensor(r, rng.standard_normal((5, 2, 2 * 2**r, 2**r)).astype(np.float32))
        y = S.sphere_upsample(x)
        assert y.r == r + 1
        # coarse cell (i, j) is fine cell (2i + 1, 2j + 1)
        assert np.array_equal(y.data[:, :, 1::2, 1::2], x.data)
    # poles carry no value, so only cells away from them stay constant
    y = S.sphere_upsample(const(2, 1, -4.0))
    polar = upsample_touches_pole(M.get_mesh(2), M.get_mesh(3)).reshape(5, 16, 8)
    assert np.all(y.data[:, 0][~polar] == -4.0)
    assert polar.sum() <= 5 * 4


def test_upsample_then_pool_max_recovers_bound():
    rng = np.random.default_rng(3)
    x = SphereTensor(2, rng.random((5, 1, 8, 4)).astype(np.float32))
    back = S.sphere_pool(S.sphere_upsample(x), "max")
    assert np.all(back.data >= x.data)


def test_pointwise_matches_conv():
    rng = np.random.default_rng(4)
    x = SphereTensor(2, rng.standard_normal((5, 3, 8, 4)).astype(np.float32))
    w = rng.standard_normal((4, 3, 1, 1)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    y = S.pointwise_conv(x, w, b)
    ref = T.conv2d_valid(x.data, w, b)
    np.testing.assert_allclose(y.data, ref, rtol=1e-5, atol=1e-6)
    with pytest.raises(ValueError):
        S.pointwise_conv(x, w[:, :2])
    t = S.hexconv_transpose(x, w, b)
    assert t.r == 3 and t.channels == 4


def test_bn_relu_concat():
    x = const(1, 2, -1.0)
    assert np.all(S.relu(x).data == 0)
    y = S.batchnorm(x, [2, 2], [1, 1], [0, 0], [1, 1], eps=0.0)
    assert np.all(y.data == -1.0)
    assert S.concat([x, y]).channels == 4
    with pytest.raises(ValueError):
        S.concat([x, const(2, 1)])


def test_rotate():
    rng = np.random.default_rng(5)
    x = SphereTensor(1, rng.standard_normal((5, 1, 4, 2)).astype(np.float32))
    assert np.array_equal(x.rotate(2).data[2], x.data[0])
    assert np.array_equal(x.rotate(5).data, x.data)


def test_sphere_file(tmp_path):
    rng = np.random.default_rng(6)
    x = SphereTensor(2, rng.standard_normal((5, 3, 8, 4)).astype(np.float32))
    f = tmp_path / "x.sph"
    S.save_sphere(f, x)
    y = S.load_sphere(f)
    assert y.r == 2 and np.array_equal(y.data, x.data)
    f.write_bytes(f.read_bytes() + b"\0")
    with pytest.raises(ValueError):
        S.load_sphere(f)
    f.write_bytes(b'{"r": 2}\n')
    with pytest.raises(ValueError):
        S.load_sphere(f)
