import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from noisr.image import NormalizationStats
from noisr.net import (Checkpoint, CheckpointError, ConfigMismatchError, NetworkConfig, WNConvTranspose2d,
                       forward, init, load_checkpoint, param_count, save_checkpoint, weight_norm_effective)
from noisr.noise import NoiseSpec
from noisr.train import loss

STATS = NormalizationStats(0.45, 0.2)
SMALL = dict(width=4, num_blocks=2)


def test_config_defaults_and_validation():
    c2, c4 = NetworkConfig(2), NetworkConfig(4)
    assert (c2.kernel_size, c4.kernel_size) == (3, 5)
    assert c2.skip_width == c2.width
    with pytest.raises(ValueError):
        NetworkConfig(3)
    with pytest.raises(ValueError):
        NetworkConfig(2, kernel_size=4)
    with pytest.raises(ValueError):
        NetworkConfig(2, width=0)


def test_param_count_matches_model():
    for cfg in (NetworkConfig(2), NetworkConfig(4), NetworkConfig(2, width=5, num_blocks=3, skip_width=2)):
        assert param_count(cfg) == sum(p.numel() for p in init(cfg).parameters())


def test_param_count_targets():
    assert abs(param_count(NetworkConfig(2)) / 889_000 - 1) <= 0.10
    assert abs(param_count(NetworkConfig(4)) / 253_000 - 1) <= 0.10


@pytest.mark.parametrize("k", [2, 4])
def test_param_count_block_arithmetic(k):
    base = NetworkConfig(k)
    doubled = NetworkConfig(k, num_blocks=16)
    w, e, ks = base.width, base.expansion, base.kernel_size
    per_block = (e * w * w * ks * ks + 2 * e * w) + (w * e * w * ks * ks + 2 * w)
    assert param_count(doubled) - param_count(base) == 8 * per_block


@pytest.mark.parametrize("k,size", [(2, 32), (4, 16)])
def test_shape_contract(k, size, rng):
    model = init(NetworkConfig(k, **SMALL), STATS)
    out = forward(model, rng.random((size, size)))
    assert out.shape == (64, 64)
    assert np.isfinite(out).all()


@settings(max_examples=10, deadline=None)
@given(st.integers(5, 12), st.integers(5, 12), st.sampled_from([2, 4]))
def test_shape_property(h, w, k):
    model = init(NetworkConfig(k, width=2, num_blocks=1), STATS)
    out = forward(model, np.full((h, w), 0.5), clip=False)
    assert out.shape == (k * h, k * w)


def test_input_too_small():
    with pytest.raises(ValueError):
        forward(init(NetworkConfig(4, **SMALL)), np.zeros((4, 8)))


def test_init_deterministic():
    a, b = init(NetworkConfig(2, **SMALL)), init(NetworkConfig(2, **SMALL))
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)
    c = init(NetworkConfig(2, seed=1, **SMALL))
    assert not torch.equal(a.head.v, c.head.v)


def test_head_init_std():
    cfg = NetworkConfig(4, width=448, num_blocks=1, expansion=1)
    head = init(cfg).head
    w = head.weight().detach().numpy()
    assert w.size >= 10 ** 4
    expected = np.sqrt(2.0 / head.fan_in)
    assert abs(w.std() / expected - 1) <= 0.2


def test_zero_parameters_give_mean(rng):
    model = init(NetworkConfig(2, **SMALL), STATS)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    out = forward(model, rng.random((12, 12)), clip=False)
    np.testing.assert_allclose(out, STATS.mean, atol=1e-7)


@pytest.mark.parametrize("k", [2, 4])
def test_translation_covariance_circular(k, rng):
    model = init(NetworkConfig(k, padding="circular", **SMALL), STATS).double()
    x = rng.random((12, 12))
    out = forward(model, x, clip=False)
    shifted = forward(model, np.roll(x, (1, 1), axis=(0, 1)), clip=False)
    np.testing.assert_allclose(shifted, np.roll(out, (k, k), axis=(0, 1)), atol=1e-12)


def test_transposed_conv_can_express_bilinear():
    # a tent kernel of width 2k on a sample-aligned grid reproduces bilinear interpolation
    k = 2
    layer = WNConvTranspose2d(1, 1, k).double()
    tent = 1 - np.abs(np.arange(-k, k) / k)
    with torch.no_grad():
        layer.v.copy_(torch.tensor(np.outer(tent, tent))[None, None])
        layer.g.copy_(torch.linalg.vector_norm(layer.v).reshape(1))
        layer.b.zero_()
    x = torch.tensor([[0.0, 1.0, 2.0, 3.0]] * 4, dtype=torch.float64)[None, None]
    y = layer(x)[0, 0].detach()
    assert y.shape == (8, 8)
    np.testing.assert_allclose(y[0, :7].numpy(), np.arange(7) / 2, atol=1e-12)


def test_weight_norm_examples(rng):
    v, g = rng.normal(size=(5, 3, 3, 3)), rng.random(5) + 0.1
    np.testing.assert_allclose(weight_norm_effective(7 * v, g), weight_norm_effective(v, g), atol=1e-12)
    norms = np.sqrt((v * v).sum(axis=(1, 2, 3)))
    np.testing.assert_allclose(weight_norm_effective(v, norms), v, atol=1e-12)
    w = weight_norm_effective(v, g)
    np.testing.assert_allclose(np.sqrt((w * w).sum(axis=(1, 2, 3))), g, atol=1e-9)
    wt = weight_norm_effective(torch.tensor(v), torch.tensor(g))
    np.testing.assert_allclose(wt.numpy(), w, atol=1e-15)
    v[2] = 0
    with pytest.raises(ValueError):
        weight_norm_effective(v, g)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 100))
def test_loss_weight_norm_invariance(c):
    rng = np.random.default_rng(5)
    model = init(NetworkConfig(2, width=3, num_blocks=1), STATS).double()
    low = torch.tensor(rng.random((1, 1, 8, 8)))
    n = torch.tensor(rng.random((16, 16)))
    g = torch.tensor(rng.random((16, 16)))
    with torch.no_grad():
        before = float(loss(model(low)[0, 0], n, g, NoiseSpec()).total)
        for name, p in model.named_parameters():
            if name.endswith(".v"):
                p.mul_(c)
        after = float(loss(model(low)[0, 0], n, g, NoiseSpec()).total)
    assert abs(after - before) <= 1e-10 * max(1.0, abs(before))


def test_forward_deterministic_across_threads(rng):
    model = init(NetworkConfig(2, **SMALL), STATS)
    x = rng.random((16, 16))
    old = torch.get_num_threads()
    try:
        torch.set_num_threads(1)
        a = forward(model, x)
        b = forward(model, x)
    finally:
        torch.set_num_threads(old)
    assert a.tobytes() == b.tobytes()


def test_checkpoint_roundtrip(tmp_path, rng):
    model = init(NetworkConfig(2, **SMALL), STATS)
    ckpt = Checkpoint.from_model(model, epoch=3, val_total=-1.5)
    save_checkpoint(tmp_path / "m.ckpt", ckpt)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == ckpt.config and back.stats == ckpt.stats and back.meta == ckpt.meta
    for name, arr in ckpt.arrays.items():
        assert back.arrays[name].tobytes() == arr.tobytes()
    x = rng.random((10, 10))
    assert forward(back.build(), x).tobytes() == forward(ckpt.build(), x).tobytes()
    save_checkpoint(tmp_path / "again.ckpt", back)
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "m.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", Checkpoint.from_model(init(NetworkConfig(2, **SMALL))))
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(data[:len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc.ckpt")
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    (tmp_path / "flip.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "flip.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello world")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.ckpt")
    bad_version = bytearray(data)
    bad_version[8] = 9
    (tmp_path / "ver.ckpt").write_bytes(bytes(bad_version))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "ver.ckpt")
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(tmp_path / "m.ckpt", factor=4)


def test_checkpoint_shape_inconsistency():
    ckpt = Checkpoint.from_model(init(NetworkConfig(2, **SMALL)))
    ckpt.arrays["head.v"] = np.zeros((1, 1, 3, 3), dtype=np.float32)
    with pytest.raises(ConfigMismatchError):
        ckpt.build()
