import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbdnet.compositor import (ALL_COMPONENTS, DEGRADATION_KINDS, HAZE_SEVERITY, ComponentLayer,
                               CompositeSpec, apply_layer, compose, layer_truth, make_sample,
                               make_spec, random_scene, read_png, render_target, synth_mask,
                               write_png)
from cbdnet.presets import WEATHER_CASES

SIZE = (64, 64)


def _const_layer(kind, value, mask=1.0, **params):
    return ComponentLayer(kind, np.full(SIZE + (1,), mask), np.full(SIZE + (3,), value), params)


@pytest.mark.parametrize("kind", DEGRADATION_KINDS)
def test_every_generator_is_deterministic_and_in_range(kind):
    a = synth_mask(kind, 5, SIZE)
    b = synth_mask(kind, 5, SIZE)
    assert np.array_equal(a.mask, b.mask) and np.array_equal(a.payload, b.payload)
    assert a.mask.shape == SIZE + (1,) and a.payload.shape == SIZE + (3,)
    for arr in (a.mask, a.payload):
        assert arr.min() >= 0.0 and arr.max() <= 1.0


def test_watermark_seed_11_twice_is_bit_identical():
    a, b = synth_mask("watermark", 11, SIZE), synth_mask("watermark", 11, SIZE)
    assert a.mask.tobytes() == b.mask.tobytes()
    assert a.payload.tobytes() == b.payload.tobytes()


def test_zero_density_rain_is_empty():
    layer = synth_mask("rain_streak", 7, SIZE, {"density": 0})
    assert not layer.mask.any() and not layer.payload.any()


@pytest.mark.parametrize("severity", sorted(HAZE_SEVERITY))
def test_haze_mean_transmission_follows_severity(severity):
    lo, hi = HAZE_SEVERITY[severity]
    for seed in range(20):
        t = synth_mask("haze", seed, SIZE, {"severity": severity}).params["transmission"]
        assert lo <= t.mean() <= hi


def test_different_seeds_differ():
    assert not np.array_equal(synth_mask("snow", 1, SIZE).mask, synth_mask("snow", 2, SIZE).mask)


def test_unknown_kind_and_option_are_rejected():
    with pytest.raises(ValueError, match="unsupported degradation kind"):
        synth_mask("smoke", 0, SIZE)
    with pytest.raises(ValueError, match="unknown generator option"):
        synth_mask("snow", 0, SIZE, {"flakes": 3})


def test_apply_layer_closed_forms():
    img = np.full(SIZE + (3,), 0.8)
    haze = _const_layer("haze", 1.0, mask=0.5, transmission=np.full(SIZE, 0.5))
    np.testing.assert_allclose(apply_layer(img, haze), 0.9, atol=1e-12)
    wm = _const_layer("watermark", 0.3, alpha=1.0)
    assert np.array_equal(apply_layer(img, wm), wm.payload)
    shadow = _const_layer("shadow", 1.0, darkness=0.4)
    np.testing.assert_allclose(apply_layer(np.full(SIZE + (3,), 0.5), shadow), 0.3, atol=1e-12)


def test_apply_layer_rejects_mismatched_sizes():
    layer = synth_mask("snow", 0, (32, 32))
    with pytest.raises(ValueError, match="dimension mismatch"):
        apply_layer(np.zeros(SIZE + (3,)), layer)


def test_compose_without_layers_is_identity():
    scene = random_scene(3, SIZE)
    sample = compose(scene, CompositeSpec(3, []))
    assert np.array_equal(sample.input, scene)
    assert sample.presence.tolist() == [1.0] + [0.0] * (len(ALL_COMPONENTS) - 1)


def test_single_haze_matches_scattering_formula():
    scene = random_scene(4, SIZE)
    layer = synth_mask("haze", 4, SIZE)
    t = layer.params["transmission"][..., None]
    expected = scene * t + layer.payload * (1 - t)
    np.testing.assert_allclose(compose(scene, CompositeSpec(4, [layer])).input, expected, atol=1e-6)


def test_case6_presence():
    case6 = [p for p in WEATHER_CASES if p.name == "case6"][0]
    sample = make_sample(9, case6.kinds, SIZE, cfgs=case6.generator_cfgs())
    on = {c for c, p in zip(ALL_COMPONENTS, sample.presence) if p}
    assert on == {"scene", "rain_streak", "snow", "haze", "raindrop"}


def test_duplicate_kind_rejected():
    layer = synth_mask("snow", 0, SIZE)
    with pytest.raises(ValueError):
        CompositeSpec(0, [layer, layer])


def test_render_target_identities():
    sample = make_sample(21, ["rain_streak", "haze", "fence"], SIZE)
    np.testing.assert_allclose(render_target(sample, sample.presence), sample.input, atol=1e-12)
    onehot = np.eye(len(ALL_COMPONENTS))[0]
    assert np.array_equal(render_target(sample, onehot), sample.scene)
    fence = np.eye(len(ALL_COMPONENTS))[ALL_COMPONENTS.index("fence")]
    assert np.array_equal(render_target(sample, fence), sample.truth("fence"))


def test_render_target_partial_recomposition_oracle():
    sample = make_sample(22, ["rain_streak", "haze"], SIZE)
    rain = [layer for layer in sample.spec.layers if layer.kind == "rain_streak"]
    expected = compose(sample.scene, CompositeSpec(22, rain)).input
    v = np.zeros(len(ALL_COMPONENTS))
    v[[0, ALL_COMPONENTS.index("rain_streak")]] = 1
    np.testing.assert_allclose(render_target(sample, v), expected, atol=1e-6)


def test_render_target_rejects_absent_components():
    sample = make_sample(23, ["snow"], SIZE)
    v = np.eye(len(ALL_COMPONENTS))[ALL_COMPONENTS.index("haze")]
    with pytest.raises(ValueError, match="component not present"):
        render_target(sample, v)


def test_flip_mirrors_every_field():
    sample = make_sample(24, ["haze", "raindrop"], SIZE)
    f = sample.flipped()
    assert np.array_equal(f.input, sample.input[:, ::-1])
    for kind in ("haze", "raindrop"):
        assert np.array_equal(f.truth(kind), sample.truth(kind)[:, ::-1])
    np.testing.assert_allclose(render_target(f, f.presence), f.input, atol=1e-12)


def test_png_round_trip_within_one_level(tmp_path):
    img = random_scene(5, SIZE)
    write_png(tmp_path / "x.png", img)
    assert np.abs(read_png(tmp_path / "x.png") - img).max() <= 0.5 / 255 + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.lists(st.sampled_from(DEGRADATION_KINDS), min_size=0,
                                              max_size=4, unique=True))
def test_composites_stay_in_range(seed, kinds):
    sample = make_sample(seed, kinds, (32, 32))
    assert sample.input.min() >= 0.0 and sample.input.max() <= 1.0
    for kind in kinds:
        truth = layer_truth([l for l in sample.spec.layers if l.kind == kind][0])
        assert truth.min() >= 0.0 and truth.max() <= 1.0
