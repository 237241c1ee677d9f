import io

import numpy as np
import pytest

from hexsphere import tensor as T


def naive_conv(x, k):
    ci, h, w = x.shape
    co, _, kh, kw = k.shape
    out = np.zeros((co, h - kh + 1, w - kw + 1))
    for o in range(co):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                out[o, i, j] = np.sum(x[:, i:i + kh, j:j + kw] * k[o])
    return out


def test_conv_matches_loops():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 9, 7)).astype(np.float32)
    k = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    got = T.conv2d_valid(x, k, b)
    assert got.shape == (4, 7, 5)
    np.testing.assert_allclose(got, naive_conv(x, k) + b[:, None, None], rtol=1e-5, atol=1e-5)


def test_conv_batched_and_errors():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 2, 6, 6)).astype(np.float32)
    k = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    y = T.conv2d_valid(x, k)
    for n in range(5):
        np.testing.assert_allclose(y[n], naive_conv(x[n], k), rtol=1e-5, atol=1e-5)
    with pytest.raises(ValueError):
        T.conv2d_valid(x, k[:, :1])
    with pytest.raises(ValueError):
        T.conv2d_valid(x[:, :, :2, :2], k)


def test_pool_example():
    x = np.array([[1, 2], [3, 4]], np.float32)
    assert T.pool2x2(x, "max").item() == 4
    assert T.pool2x2(x, "avg").item() == 2.5
    with pytest.raises(ValueError):
        T.pool2x2(np.zeros((3, 4), np.float32))
    with pytest.raises(ValueError):
        T.pool2x2(x, "median")


def test_pool_constant_exact():
    x = np.full((2, 8, 4), 0.1, np.float32)
    assert np.all(T.pool2x2(x, "avg") == np.float32(0.1))


def bilinear_at(x, y, xx):
    h, w = x.shape
    y0, x0 = int(np.floor(y)), int(np.floor(xx))
    fy, fx = y - y0, xx - x0
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    return ((1 - fy) * ((1 - fx) * x[y0, x0] + fx * x[y0, x1])
            + fy * ((1 - fx) * x[y1, x0] + fx * x[y1, x1]))


def test_upsample_matches_point_sampling():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 3, 3)).astype(np.float32)
    up = T.upsample2x_bilinear(x)
    assert up.shape == (1, 6, 6)
    ref = np.array([[bilinear_at(x[0].astype(np.float64), i / 2, j / 2) for j in range(6)] for i in range(6)])
    np.testing.assert_allclose(up[0], ref, atol=1e-6)
    assert np.array_equal(up[0, ::2, ::2], x[0])


def test_upsample_constant_and_ramp():
    c = np.full((2, 4, 5), 3.7, np.float32)
    assert np.all(T.upsample2x_bilinear(c) == np.float32(3.7))
    ramp = np.tile(np.arange(5, dtype=np.float32), (4, 1))
    up = T.upsample2x_bilinear(ramp)
    np.testing.assert_allclose(up[0, :9], np.arange(9) / 2)
    with pytest.raises(ValueError):
        T.upsample2x_bilinear(np.zeros((1, 4), np.float32))


def test_batchnorm_relu_dense():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 4, 4)).astype(np.float32)
    ident = T.batchnorm_inference(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), eps=0.0)
    np.testing.assert_array_equal(ident, x)
    y = T.batchnorm_inference(x, [2, 2, 2], [1, 1, 1], [0.5] * 3, [4] * 3, eps=0.0)
    np.testing.assert_allclose(y, (x - 0.5) + 1, rtol=1e-6)
    assert np.all(T.relu(x) >= 0) and np.all(T.relu(x)[x > 0] == x[x > 0])
    w = rng.standard_normal((2, 5)).astype(np.float32)
    v = rng.standard_normal(5).astype(np.float32)
    np.testing.assert_allclose(T.dense(v, w, np.ones(2, np.float32)), w @ v + 1, rtol=1e-6)


def test_ten_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 4)).astype(np.float32)
    f = tmp_path / "a.ten"
    T.save_tensor(f, x)
    assert np.array_equal(T.load_tensor(f), x)
    buf = io.BytesIO()
    T.write_ten(buf, np.float32(2.5).reshape(()))
    buf.seek(0)
    assert T.read_ten(buf).item() == 2.5


@pytest.mark.parametrize("blob", [
    b"",
    b"not json\n",
    b'{"shape": [2], "dtype": "f64"}\n' + bytes(16),
    b'{"shape": [4]}\n' + bytes(8),
    b'{"shape": [2], "dtype": "f32"}\n' + bytes(6),
])
def test_ten_rejects(blob, tmp_path):
    f = tmp_path / "bad.ten"
    f.write_bytes(blob)
    with pytest.raises(ValueError):
        T.load_tensor(f)


def test_ten_trailing_and_int(tmp_path):
    f = tmp_path / "t.ten"
    T.save_tensor(f, np.zeros(2, np.float32))
    f.write_bytes(f.read_bytes() + b"x")
    with pytest.raises(ValueError):
        T.load_tensor(f)
    with pytest.raises(TypeError):
        T.save_tensor(f, np.zeros(2, np.int32))
