import dataclasses

import numpy as np
import pytest
import torch

from cbdnet.model import (CBDNet, Decomposition, ModelConfig, Recombination, count_parameters,
                          decompose, desk_config, paper_full_config, recombine, sample_subset,
                          tiny_config)


@pytest.fixture(scope="module")
def desk_net():
    torch.manual_seed(0)
    return CBDNet(desk_config()).eval()


def test_decompose_constant_channels():
    f = np.broadcast_to(np.arange(6, dtype=float), (2, 2, 6))
    parts = decompose(f, 3)
    assert [sorted(set(p.ravel())) for p in parts] == [[0, 1], [2, 3], [4, 5]]


def test_decompose_widths_and_identity():
    f = torch.randn(1, 40, 8, 8)
    parts = decompose(f, 10)
    assert len(parts) == 10 and all(p.shape == (1, 4, 8, 8) for p in parts)
    assert torch.equal(decompose(f, 1)[0], f)
    with pytest.raises(ValueError):
        decompose(f, 3)


def test_recombine_closed_forms():
    maps = [torch.full((1, 4, 2, 2), float(c)) for c in (1, 2, 3)]
    out = recombine(maps, torch.tensor([1.0, 0.0, 1.0]))
    assert torch.equal(out, torch.full((1, 4, 2, 2), 4.0))
    assert torch.equal(recombine(maps, torch.tensor([0.0, 1.0, 0.0])), maps[1])
    assert torch.allclose(recombine(maps, torch.ones(3)), maps[0] + maps[1] + maps[2])


def test_recombine_rejects_wrong_length():
    with pytest.raises(ValueError):
        recombine([torch.zeros(1, 4, 2, 2)] * 3, torch.ones(2))


def test_parameter_free_blocks():
    assert count_parameters(Decomposition(5)) == 0
    assert count_parameters(Recombination()) == 0


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        dataclasses.replace(tiny_config(), components=["scene", "snow", "haze"])
    with pytest.raises(ValueError):
        ModelConfig(components=["snow", "scene"])
    with pytest.raises(ValueError):
        dataclasses.replace(tiny_config(), downsample_factor=4)


def test_config_hash_tracks_fields():
    a, b = desk_config(), desk_config()
    assert a.config_hash() == b.config_hash()
    assert dataclasses.replace(a, head_width=4).config_hash() != a.config_hash()


def test_desk_shapes(desk_net):
    cfg = desk_net.cfg
    x = torch.rand(2, 3, 64, 64)
    deep = desk_net.encode(x)
    s = cfg.downsample_factor
    assert deep.shape == (2, cfg.deep_channels, 64 // s, 64 // s)
    feats = desk_net.components(x)
    assert len(feats) == cfg.n_components
    out = desk_net.decoder(feats[0])
    assert out.shape == (2, 3, 64, 64)
    assert out.min() >= 0 and out.max() <= 1


def test_encoder_rejects_indivisible_sizes(desk_net):
    with pytest.raises(ValueError):
        desk_net.encode(torch.rand(1, 3, 63, 64))


def test_forward_is_deterministic_and_selection_matches_decode(desk_net):
    x = torch.rand(1, 3, 64, 64)
    v = torch.tensor([1.0, 0, 1, 0, 0])
    with torch.no_grad():
        a, la = desk_net(x, v)
        b, lb = desk_net(x, v)
        many = desk_net.decode_many(desk_net.components(x), torch.stack([v]))
    assert torch.equal(a, b) and torch.equal(la, lb)
    assert la.shape == (1, desk_net.n_components)
    assert torch.allclose(many[:, 0], a, atol=1e-6)


def test_forward_all_layout(desk_net):
    x = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        outs, logits = desk_net.forward_all(x, torch.tensor([1.0, 1, 0, 0, 0]))
        single, _ = desk_net(x, torch.tensor([0.0, 0, 0, 1, 0]))
    assert outs.shape == (1, 6, 3, 64, 64)
    assert torch.allclose(outs[:, 3], single, atol=1e-6)


def test_sample_subset_only_draws_present_nonempty_sets():
    rng = np.random.default_rng(0)
    presence = np.array([1.0, 1.0, 0.0])
    seen = {tuple(sample_subset(presence, rng)) for _ in range(200)}
    assert seen == {(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0, 0.0)}
    a = [tuple(sample_subset(presence, np.random.default_rng(9))) for _ in range(3)]
    assert len(set(a)) == 1


def test_paper_full_feature_shape():
    net = CBDNet(paper_full_config()).eval()
    with torch.no_grad():
        deep = net.encode(torch.rand(1, 3, 64, 64))
    assert deep.shape == (1, 40, 8, 8)
    assert all(f.shape[1] == 4 for f in decompose(deep, 10))


def test_split_and_recombine_add_no_parameters():
    net = CBDNet(desk_config())
    wired = sum(count_parameters(m) for m in (net.encoder, net.classifier, net.decoder))
    assert count_parameters(net) == wired


def test_recombine_linearity_in_double_precision():
    gen = torch.Generator().manual_seed(0)
    feats = [torch.randn(1, 4, 8, 8, generator=gen, dtype=torch.float64) for _ in range(5)]
    u = torch.rand(5, generator=gen, dtype=torch.float64)
    w = torch.rand(5, generator=gen, dtype=torch.float64)
    a, b = 0.7, -1.3
    lhs = recombine(feats, a * u + b * w)
    rhs = a * recombine(feats, u) + b * recombine(feats, w)
    assert (lhs - rhs).abs().max().item() < 1e-12
