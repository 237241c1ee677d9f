import numpy as np
import pytest

from hexsphere import nn
from hexsphere.sphereops import SphereTensor


def rand_sphere(r, c, seed=0):
    W = 2**r
    return SphereTensor(r, np.random.default_rng(seed).standard_normal((5, c, 2 * W, W)).astype(np.float32))


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        nn.LayerSpec("Conv3d", 3, 1, c=2)
    with pytest.raises(ValueError):
        nn.LayerSpec("HexConv", 3, 1, c=2, s=3)
    with pytest.raises(ValueError):
        nn.LayerSpec("ResBlock", 3, 4, c=8)
    assert nn.LayerSpec("ResBlock", 3, 4, 4, 8, s=2).out_level == 2


def test_builders_structure():
    c = nn.build_hexrunet_c()
    assert [l.kind for l in c.layers] == ["HexConv", "ResBlock", "ResBlock", "MaxPool", "Dense"]
    assert c.layers[-1].c == 10 and c.in_level == 4
    r = nn.build_hexrunet(base=8)
    assert r.in_level == 5 and r.layers[-1].level == 5 and r.layers[-1].c == 13
    assert min(l.level for l in r.layers) == 0
    u = nn.build_hexunet()
    assert sum(l.kind == "Encoder" for l in u.layers) == 4
    assert sum(l.kind == "Decoder" for l in u.layers) == 4
    assert u.layers[-1].kind == "Pointwise"


def test_build_dispatch():
    assert nn.build("HexUNet", level=7).in_level == 7
    assert nn.build("hexrunet", base=32).meta["base"] == 32
    with pytest.raises(ValueError):
        nn.build("resnet")
    with pytest.raises(ValueError):
        nn.build_hexrunet().at_level(4)


def test_known_totals():
    assert nn.count_params(nn.build_hexrunet_c()) == 74_730
    assert nn.count_params(nn.build_hexrunet(4, 16, 13)) == 1_585_885
    assert nn.count_params(nn.build_hexunet(3, 13)) == 7_245_101


def test_audit_sums_to_total():
    spec = nn.build_hexunet()
    assert sum(r["params"] for r in nn.param_audit(spec)) == nn.count_params(spec)


@pytest.mark.parametrize("build", [nn.build_hexrunet_c, nn.build_hexrunet, nn.build_hexunet])
def test_flatten_length(build):
    spec = build()
    store = nn.init_weights(spec, seed=0)
    assert store.flatten().size == nn.count_params(spec)
    assert store.flatten(trainable_only=False).size > nn.count_params(spec)
    store.validate(spec)


def test_init_deterministic_and_corners_zero():
    spec = nn.build_hexunet(level=6)
    a, b = nn.init_weights(spec, 3), nn.init_weights(spec, 3)
    assert np.array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), nn.init_weights(spec, 4).flatten())
    w = a["00.encoder.hex1.weight"]
    assert w.shape[-2:] == (3, 3) and np.all(w[..., 0, 2] == 0) and np.all(w[..., 2, 0] == 0)


def test_zero_weights_zero_output():
    spec = nn.build_hexrunet(level=5)
    y = nn.forward(spec, nn.init_weights(spec, zero=True), rand_sphere(5, 4))
    assert y.channels == 13 and np.all(y.data == 0)


def test_resblock_levels():
    spec = nn.build_hexrunet(level=5)
    store = nn.init_weights(spec, 1)
    x = rand_sphere(5, 16)
    down = nn.resblock_forward(x, nn._Params(store, "01.resblock"), 2)
    assert down.r == 4 and down.channels == 32
    up_layer = 7
    assert spec.layers[up_layer].s == 0.5
    y = rand_sphere(spec.layers[up_layer].level, spec.layers[up_layer].a)
    up = nn.resblock_forward(y, nn._Params(store, f"{up_layer:02d}.resblock"), 0.5, tail=True)
    assert up.r == y.r + 1 and up.channels == spec.layers[up_layer].c
    with pytest.raises(ValueError):
        nn.resblock_forward(x, nn._Params(store, "01.resblock"), 3)


def test_encoder_skip_shape():
    spec = nn.build_hexunet(level=5)
    store = nn.init_weights(spec, 2)
    pooled, skip = nn.encoder_forward(rand_sphere(5, 3), nn._Params(store, "00.encoder"))
    assert (pooled.r, pooled.channels) == (4, 32)
    assert (skip.r, skip.channels) == (5, 32)


def test_classifier_logits():
    spec = nn.build_hexrunet_c()
    y = nn.forward(spec, nn.init_weights(spec, 0), rand_sphere(4, 1))
    assert y.shape == (10,) and np.all(np.isfinite(y))


def test_forward_deterministic_and_traced():
    spec = nn.build_hexunet(level=5)
    store = nn.init_weights(spec, 5)
    x = rand_sphere(5, 3, 1)
    seen = []
    y1 = nn.forward(spec, store, x, trace=lambda i, l, o: seen.append(i))
    y2 = nn.forward(spec, store, x)
    assert np.array_equal(y1.data, y2.data)
    assert seen == list(range(len(spec.layers)))


def test_mismatch_errors_name_layer():
    spec = nn.build_hexunet(level=5)
    store = nn.init_weights(spec, 0)
    with pytest.raises(ValueError, match="layer 0"):
        nn.forward(spec, store, rand_sphere(4, 3))
    with pytest.raises(ValueError, match="layer 0.*channels"):
        nn.forward(spec, store, rand_sphere(5, 2))


def test_weight_container_roundtrip(tmp_path):
    spec = nn.build_hexrunet_c()
    store = nn.init_weights(spec, 9)
    nn.save_weights(store, tmp_path / "w", spec)
    back, manifest = nn.load_weights(tmp_path / "w")
    assert manifest["network"] == "hexrunet-c" and manifest["hex_storage"] == 7
    assert list(back.arrays) == list(store.arrays)
    assert np.array_equal(back.flatten(False), store.flatten(False))
    back.validate(spec)
    with pytest.raises(ValueError):
        nn.load_weights(tmp_path / "missing")


def test_validate_catches_shape():
    spec = nn.build_hexrunet_c()
    store = nn.init_weights(spec)
    arrays = dict(store.arrays)
    name = next(iter(arrays))
    arrays[name] = arrays[name][:1]
    with pytest.raises(ValueError, match=name):
        nn.WeightStore(arrays, store.roles).validate(spec)


def test_transfer_store():
    spec = nn.build_hexunet(level=6)
    store = nn.init_weights(spec, 1)
    out = nn.transfer_store(store, 9)
    name = "00.encoder.hex1.weight"
    expect = nn.hex_to_3x3(nn.transfer_weights(store[name]))
    np.testing.assert_allclose(out[name], expect, rtol=1e-6)
    assert np.array_equal(out["00.encoder.hex1.bias"], store["00.encoder.hex1.bias"])
    seven = nn.transfer_store(store, 7)
    assert seven[name].shape[-1] == 7
