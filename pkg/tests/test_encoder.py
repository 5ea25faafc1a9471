import numpy as np
import pytest

from multiasl import numerics as nx
from multiasl.encoder import (
    EncoderConfig, init_encoder_params, patchify, positional_encoding, spatial_encode, temporal_encode,
)
from multiasl.fusion import fuse_views


def make(cfg=None, channels=3, seed=0):
    cfg = cfg or EncoderConfig()
    return cfg, init_encoder_params(cfg, channels, np.random.default_rng(seed))


def test_zero_frame_gives_zero_feature():
    cfg, params = make()
    out = spatial_encode(np.zeros((2, 3, 16, 16)), params, cfg)
    assert np.all(out.data == 0)


def test_spatial_shape():
    cfg, params = make()
    frames = np.random.default_rng(0).normal(size=(16, 3, 32, 32))
    assert spatial_encode(frames, params, cfg).shape == (16, 64)


def test_single_patch_is_a_linear_projection_of_the_frame():
    cfg, params = make(EncoderConfig(patch_size=8, spatial_dim=5, temporal_dim=8, heads=2))
    frames = np.random.default_rng(1).normal(size=(4, 3, 8, 8))
    out = spatial_encode(frames, params, cfg).data
    direct = frames.reshape(4, -1) @ params["spatial.weight"].data + params["spatial.bias"].data
    assert np.abs(out - direct).max() < 1e-12


def test_spatial_matches_project_then_pool():
    cfg, params = make(EncoderConfig(patch_size=4, spatial_dim=6, temporal_dim=8, heads=2))
    rng = np.random.default_rng(2)
    params["spatial.bias"].data[:] = rng.normal(size=6)
    frames = rng.normal(size=(3, 3, 12, 8))
    w, b = params["spatial.weight"].data, params["spatial.bias"].data
    expected = np.zeros((3, 6))
    for t in range(3):
        projected = []
        for y in range(0, 12, 4):
            for x in range(0, 8, 4):
                projected.append(frames[t, :, y:y + 4, x:x + 4].reshape(-1) @ w + b)
        expected[t] = np.mean(projected, axis=0)
    assert np.abs(spatial_encode(frames, params, cfg).data - expected).max() < 1e-12


def test_patchify_rejects_indivisible_frames():
    with pytest.raises(ValueError):
        patchify(np.zeros((3, 10, 8)), 4)


def test_spatial_rejects_wrong_channels():
    cfg, params = make()
    with pytest.raises(ValueError):
        spatial_encode(np.zeros((2, 1, 32, 32)), params, cfg)


def test_temporal_shapes():
    cfg, params = make()
    f_t, f_cls = temporal_encode(nx.Tensor(np.random.default_rng(0).normal(size=(16, 64))), params, cfg)
    assert f_t.shape == (16, 128) and f_cls.shape == (128,)


def test_temporal_rejects_wrong_width():
    cfg, params = make()
    with pytest.raises(ValueError):
        temporal_encode(nx.Tensor(np.zeros((16, 32))), params, cfg)


def test_permuting_frames_changes_cls():
    cfg, params = make()
    x = np.random.default_rng(3).normal(size=(16, 64))
    _, cls = temporal_encode(nx.Tensor(x), params, cfg)
    _, cls_perm = temporal_encode(nx.Tensor(x[::-1].copy()), params, cfg)
    assert np.abs(cls.data - cls_perm.data).max() > 1e-6


def test_attention_rows_sum_to_one():
    cfg, params = make(EncoderConfig(layers=2))
    x = nx.Tensor(np.random.default_rng(4).normal(size=(2, 3, 16, 64)) * 5)
    *_, maps = temporal_encode(x, params, cfg, return_attention=True)
    assert len(maps) == 2
    for m in maps:
        assert m.shape == (2, 3, 4, 17, 17)
        assert np.abs(m.sum(axis=-1) - 1).max() < 1e-9


def test_positional_encoding_values():
    pe = positional_encoding(3, 4)
    assert np.allclose(pe[0], [0, 1, 0, 1])
    assert np.allclose(pe[1], [np.sin(1), np.cos(1), np.sin(1e-2), np.cos(1e-2)])


def test_weight_sharing_across_views():
    cfg, params = make(EncoderConfig(spatial_dim=8, temporal_dim=8, heads=2, feedforward_dim=16))
    rng = np.random.default_rng(5)
    views = rng.normal(size=(2, 6, 8))  # two views of six frames
    before = temporal_encode(nx.Tensor(views[1]), params, cfg)[1].data.copy()
    _, cls0 = temporal_encode(nx.Tensor(views[0]), params, cfg)
    plist = list(params.values())
    for p, g in zip(plist, nx.grad_of(cls0.sum(), plist)):
        p.data -= 0.1 * g
    after = temporal_encode(nx.Tensor(views[1]), params, cfg)[1].data
    assert np.abs(after - before).max() > 1e-6


def test_encoder_stack_gradients():
    cfg, params = make(EncoderConfig(patch_size=2, spatial_dim=4, temporal_dim=8, heads=2,
                                     feedforward_dim=6), channels=1, seed=6)
    rng = np.random.default_rng(7)
    frames = rng.normal(size=(2, 3, 1, 4, 4))  # two views, T=3
    for p in params.values():
        p.data += rng.normal(scale=0.1, size=p.shape)
    wf = rng.normal(size=(3, 12))
    wc = rng.normal(size=8)

    def loss():
        s = spatial_encode(frames, params, cfg)
        f_t, cls = temporal_encode(s, params, cfg)
        fused = fuse_views(cls, "max", axis=0)
        return (nx.concat([s, f_t], axis=-1).sum(axis=0) * wf).sum() + (fused * wc).sum()

    report = nx.finite_difference_check(loss, list(params.values()), probes=150, rng=rng)
    assert report["max_rel_err"] < 1e-4, report


@pytest.mark.parametrize("kw", [dict(temporal_dim=10, heads=4), dict(patch_size=0)])
def test_invalid_encoder_config(kw):
    with pytest.raises(ValueError):
        EncoderConfig(**kw).validate()


def test_frame_size_must_divide():
    with pytest.raises(ValueError):
        EncoderConfig(patch_size=5).validate(32, 32)
