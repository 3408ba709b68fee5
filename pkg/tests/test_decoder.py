import numpy as np
import pytest

from c2fhand.decoder import DecoderConfig, MeshDecoder, global_feature_mapping, init_template, template_chain
from c2fhand.encoder import Encoder, EncoderConfig
from c2fhand.nn import functional as F
from c2fhand.nn.tensor import Tensor, backward, concat, relu, tsum
from c2fhand.spiral import precompute_spirals

CAMS = np.array([[128.0, 128.0, 32.0, 32.0]])


@pytest.fixture(scope="module")
def desk_setup(desk_hier):
    spirals = precompute_spirals(desk_hier, 12)
    return desk_hier, spirals


def _zero_heads(dec):
    for k in range(dec.cfg.levels):
        dec.params[f"dec{k}.head.w"].data[:] = 0
        dec.params[f"dec{k}.head.b"].data[:] = 0


def test_init_template(full_hier, ico_hier):
    t = init_template(full_hier)
    assert t.shape == (98, 3) and np.array_equal(t, full_hier.levels[-1].vertices)
    assert np.array_equal(init_template(ico_hier), ico_hier.levels[-1].vertices)


def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(mapping_mode="bogus")
    with pytest.raises(ValueError):
        DecoderConfig(widths=(6, 8, 8, 8))
    with pytest.raises(ValueError):
        DecoderConfig(spiral_lengths=(9,))


def test_shapes_and_identity(desk_setup, rng):
    hier, spirals = desk_setup
    enc = Encoder()
    dec = MeshDecoder(hier, spirals)
    pyr, _ = enc(rng.random((2, 64, 64, 3)))
    res = dec(pyr, np.repeat(CAMS, 2, 0), (64, 64))
    assert [m.shape for m in res.meshes] == [(2, n, 3) for n in hier.counts[::-1]]
    _zero_heads(dec)
    res = dec(pyr, np.repeat(CAMS, 2, 0), (64, 64))
    for got, ref in zip(res.meshes, template_chain(hier)):
        assert np.array_equal(got.data[0], ref) and np.array_equal(got.data[1], ref)


def test_full_scale_shapes(full_hier):
    spirals = precompute_spirals(full_hier, 9)
    ch = (4, 4, 4, 4)
    enc = Encoder(EncoderConfig(ch))
    dec = MeshDecoder(full_hier, spirals, DecoderConfig(widths=ch, spiral_lengths=(9,) * 4))
    pyr, _ = enc(np.random.default_rng(0).random((1, 64, 64, 3)))
    res = dec(pyr, CAMS, (64, 64))
    assert [m.shape[1] for m in res.meshes] == [98, 195, 389, 778]


def test_batch_independence(desk_setup, rng):
    hier, spirals = desk_setup
    enc, dec = Encoder(), MeshDecoder(hier, spirals)
    imgs = rng.random((2, 64, 64, 3))
    cams = np.array([[128.0, 128, 32, 32], [120.0, 120, 31, 33]])
    both = dec(enc(imgs)[0], cams, (64, 64)).finest.data
    dup = dec(enc(imgs[[0, 0]])[0], cams[[0, 0]], (64, 64)).finest.data
    single = dec(enc(imgs[:1])[0], cams[:1], (64, 64)).finest.data
    assert np.allclose(dup[0], dup[1], atol=1e-12, rtol=0)
    assert np.allclose(both[0], single[0], atol=1e-9, rtol=0)
    perm = dec(enc(imgs[::-1])[0], cams[::-1], (64, 64)).finest.data
    assert np.allclose(perm[::-1], both, atol=1e-9, rtol=0)


def test_global_repeat_rows_identical():
    out = global_feature_mapping(np.array([1.0, 2.0]), "global_repeat", 3)
    assert np.array_equal(out.data, [[1, 2], [1, 2], [1, 2]])
    with pytest.raises(ValueError):
        global_feature_mapping(np.ones(2), "pixel_aligned", 3)


def test_global_mlp(rng):
    c, n = 2, 3
    W = np.hstack([np.eye(c)] * n)  # identity-extended: every vertex row copies the vector
    out = global_feature_mapping(np.array([[1.0, -2.0]]), "global_mlp", n, (W, np.zeros(n * c)))
    assert np.array_equal(out.data, [[[1, -2]] * 3])
    g = rng.standard_normal((2, 4))
    W, b = rng.standard_normal((4, 5 * 4)), rng.standard_normal(20)
    out = global_feature_mapping(g, "global_mlp", 5, (W, b)).data
    assert np.max(np.abs(out - (g @ W + b).reshape(2, 5, 4))) <= 1e-12


def test_mesh_conv_layer_composition(ico_hier, rng):
    spirals = precompute_spirals(ico_hier, 7)
    cfg = DecoderConfig(widths=(4, 4, 4), spiral_lengths=(7, 7, 7), heads=2)
    dec = MeshDecoder(ico_hier, spirals, cfg)
    P = dec.params
    k = 2
    for j in range(2):  # keep the ReLUs active so every stage is exercised
        P[f"dec{k}.conv{j}.b"].data[:] = 1.0
    P[f"dec{k}.attn.ln_g"].data[:] = rng.uniform(0.5, 1.5, 4)
    P[f"dec{k}.attn.o"].data[:] = rng.standard_normal((4, 4))
    Q = Tensor(rng.standard_normal((1, 4, 4, 4)))
    V = Tensor(ico_hier.levels[k].vertices[None] * 30 + [0, 0, 300])
    X = Tensor(rng.standard_normal((1, 4, 3)))
    H, delta = dec.mesh_conv_layer(k, X, V, Q, CAMS, (64, 64))
    # oracle: explicit steps with numpy-level composition
    G = F.bilinear_sample(Q, F.pixels_to_grid(F.project_points(V, CAMS), (64, 64), (4, 4)))
    h = concat([G, X])
    for j in range(2):
        h = relu(F.spiral_conv(h, spirals[k], P[f"dec{k}.conv{j}.w"], P[f"dec{k}.conv{j}.b"]))
    a = (h.data - h.data.mean(-1, keepdims=True)) / np.sqrt(h.data.var(-1, keepdims=True) + 1e-5)
    a = a * P[f"dec{k}.attn.ln_g"].data + P[f"dec{k}.attn.ln_b"].data
    h = h + F.mhsa(Tensor(a), *(P[f"dec{k}.attn.{n}"] for n in "qkvo"), heads=2)
    assert np.abs(h.data).min() > 0
    d = F.linear(h, P[f"dec{k}.head.w"], P[f"dec{k}.head.b"]).data * cfg.offset_scale
    assert np.max(np.abs(H.data - h.data)) <= 1e-12
    assert np.max(np.abs(delta.data - d)) <= 1e-12


def test_attention_starts_as_identity(ico_hier):
    spirals = precompute_spirals(ico_hier, 7)
    cfg = DecoderConfig(widths=(4, 4, 4), spiral_lengths=(7,) * 3, heads=2)
    dec = MeshDecoder(ico_hier, spirals, cfg)
    assert all(not dec.params[f"dec{k}.attn.o"].data.any() for k in range(3))
    off = MeshDecoder(ico_hier, spirals, DecoderConfig(widths=(4, 4, 4), spiral_lengths=(7,) * 3, heads=2,
                                                       attn_zero_out=False))
    assert off.params["dec0.attn.o"].data.any()
    with pytest.raises(ValueError):
        DecoderConfig(attn_norm="post")


def test_zero_head_layer_leaves_vertices(ico_hier, rng):
    spirals = precompute_spirals(ico_hier, 7)
    dec = MeshDecoder(ico_hier, spirals, DecoderConfig(widths=(4, 4, 4), spiral_lengths=(7,) * 3, heads=2))
    _zero_heads(dec)
    V = Tensor(ico_hier.levels[1].vertices[None] * 30 + [0, 0, 300])
    _, delta = dec.mesh_conv_layer(1, Tensor(rng.standard_normal((1, 6, 4))), V,
                                   Tensor(rng.standard_normal((1, 4, 4, 4))), CAMS, (64, 64))
    assert np.array_equal(delta.data, np.zeros((1, 6, 3)))


def test_gradients_reach_encoder(desk_setup, rng):
    hier, spirals = desk_setup
    enc = Encoder()
    dec = MeshDecoder(hier, spirals)
    pyr, _ = enc(rng.random((1, 64, 64, 3)))
    res = dec(pyr, CAMS, (64, 64))
    target = hier.levels[0].vertices + 5.0
    backward(tsum((res.finest - target) * (res.finest - target)))
    for name in ("enc.stem.w", "enc.down0.w", "enc.fuse0.w", "enc.fuse3.w"):
        assert np.abs(enc.params[name].grad).max() > 0, name


def test_mismatched_tables(desk_hier):
    spirals = precompute_spirals(desk_hier, 12)
    with pytest.raises(ValueError):
        MeshDecoder(desk_hier, spirals[::-1])
    with pytest.raises(ValueError):
        MeshDecoder(desk_hier, spirals, DecoderConfig(widths=(8, 8, 8), spiral_lengths=(12,) * 3))
