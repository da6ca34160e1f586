"""Procedural multi-degradation compositor.

Every degradation kind is synthesized from a seed as a ``ComponentLayer``
(an occupancy/intensity ``mask`` plus an appearance ``payload``) and blended
over a clean scene with a kind-specific physical blend rule. Layers are
always composed in ``CANONICAL_ORDER`` so any subset of the layers present in
a sample can be re-rendered as a ground-truth target.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage, ImageDraw, ImageFont
from scipy.ndimage import gaussian_filter
from skimage.draw import line_aa, polygon

from ._validation import check_image, check_size, check_vector

SCENE = "scene"
DEGRADATION_KINDS = (
    "rain_streak", "snow", "haze", "raindrop",
    "flare", "reflection", "shadow", "fence", "watermark",
)
ALL_COMPONENTS = (SCENE,) + DEGRADATION_KINDS

# scene-adjacent layers first, lens-adjacent occluders last
CANONICAL_ORDER = (
    "reflection", "shadow", "flare", "rain_streak", "snow",
    "raindrop", "haze", "watermark", "fence",
)

SCREEN_KINDS = ("rain_streak", "snow", "flare")
ALPHA_KINDS = ("raindrop", "fence", "watermark")

HAZE_SEVERITY = {
    "light": (0.7, 0.9),
    "moderate": (0.5, 0.7),
    "heavy": (0.3, 0.5),
}

DEFAULT_CFG: Dict[str, dict] = {
    "rain_streak": dict(density=0.004, length=(0.12, 0.3), angle=(-20.0, 20.0),
                        width=0.6, intensity=(0.6, 0.95), beta=0.5),
    "snow": dict(density=0.004, radius=(0.6, 1.8), opacity=(0.6, 1.0), beta=0.8),
    "haze": dict(severity=None, amplitude=0.1, airlight=(0.75, 0.95)),
    "raindrop": dict(count=(3, 7), radius=(0.04, 0.09), alpha=(0.7, 0.95)),
    "flare": dict(sigma=(0.12, 0.3), streaks=(4, 8), strength=(0.6, 0.9), beta=0.3),
    "reflection": dict(weight=(0.2, 0.5), blur=1.5),
    "shadow": dict(vertices=(3, 6), darkness=(0.3, 0.7), softness=0.03),
    "fence": dict(period=(0.12, 0.2), thickness=(0.015, 0.03), angle=(35.0, 55.0), alpha=1.0),
    "watermark": dict(alpha=(0.3, 0.6), spacing=(4, 10), text_len=(3, 6)),
}


def kind_index(kind):
    """Index of ``kind`` in the full component list (0 is the scene)."""
    try:
        return ALL_COMPONENTS.index(kind)
    except ValueError:
        raise ValueError(f"unsupported degradation kind: {kind!r}") from None


def mix_seed(*parts):
    """Mix integer parts into one 64-bit seed."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def merge_cfg(kind, cfg=None):
    base = dict(DEFAULT_CFG[kind])
    for key, value in (cfg or {}).items():
        if key not in base:
            raise ValueError(f"unknown generator option {key!r} for {kind}")
        base[key] = tuple(value) if isinstance(value, list) else value
    return base


def _uniform(rng, bounds):
    if isinstance(bounds, (tuple, list)):
        lo, hi = bounds
        return float(rng.uniform(lo, hi))
    return float(bounds)


def _randint(rng, bounds):
    if isinstance(bounds, (tuple, list)):
        lo, hi = bounds
        return int(rng.integers(int(lo), int(hi) + 1))
    return int(bounds)


@dataclass
class ComponentLayer:
    kind: str
    mask: np.ndarray  # H x W x 1
    payload: np.ndarray  # H x W x 3
    params: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.mask.shape[:2]


@dataclass
class CompositeSpec:
    """A seed plus the distinct degradation layers of one composite."""

    seed: int
    layers: List[ComponentLayer]
    components: Tuple[str, ...] = ALL_COMPONENTS

    def __post_init__(self):
        kinds = [layer.kind for layer in self.layers]
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"duplicate degradation kinds in composite: {kinds}")
        for kind in kinds:
            if kind == SCENE or kind not in self.components:
                raise ValueError(f"unsupported degradation kind: {kind!r}")

    @property
    def presence(self):
        kinds = {layer.kind for layer in self.layers}
        return np.array([1.0 if (c == SCENE or c in kinds) else 0.0
                         for c in self.components])


@dataclass
class CompositeSample:
    input: np.ndarray
    scene: np.ndarray
    component_truths: Dict[str, np.ndarray]
    presence: np.ndarray
    spec: CompositeSpec

    @property
    def components(self):
        return self.spec.components

    def truth(self, kind):
        if kind == SCENE:
            return self.scene
        if kind in self.component_truths:
            return self.component_truths[kind]
        return np.zeros_like(self.scene)

    def targets(self):
        """Per-component supervision targets in component order."""
        return [self.truth(c) for c in self.components]

    def flipped(self):
        """Horizontally mirrored copy; every image field flips together."""
        layers = [ComponentLayer(l.kind, l.mask[:, ::-1].copy(), l.payload[:, ::-1].copy(),
                                 _flip_params(l.params)) for l in self.spec.layers]
        spec = CompositeSpec(self.spec.seed, layers, self.spec.components)
        return CompositeSample(
            input=self.input[:, ::-1].copy(),
            scene=self.scene[:, ::-1].copy(),
            component_truths={k: v[:, ::-1].copy() for k, v in self.component_truths.items()},
            presence=self.presence.copy(),
            spec=spec,
        )


def _flip_params(params):
    out = dict(params)
    if "transmission" in out:
        out["transmission"] = out["transmission"][:, ::-1].copy()
    return out


# --------------------------------------------------------------------------
# scene and layer generators


def random_scene(seed, size):
    """Smooth procedural street-like scene: sky, ground, blocks and discs."""
    h, w = check_size(size)
    rng = np.random.default_rng([int(seed), 7919])
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    horizon = rng.uniform(0.35, 0.6)
    sky_top, sky_low = rng.uniform(0.4, 0.95, 3), rng.uniform(0.5, 1.0, 3)
    ground = rng.uniform(0.15, 0.55, 3)
    t = np.clip(yy / horizon, 0, 1)[..., None]
    img = sky_top * (1 - t) + sky_low * t
    below = (yy >= horizon)[..., None]
    img = np.where(below, ground * (0.8 + 0.4 * yy[..., None]), img)
    for _ in range(rng.integers(3, 7)):
        x0 = rng.uniform(-0.1, 0.9)
        bw = rng.uniform(0.08, 0.3)
        top = rng.uniform(0.1, horizon)
        color = rng.uniform(0.1, 0.9, 3)
        region = (xx >= x0) & (xx < x0 + bw) & (yy >= top) & (yy < horizon + 0.1)
        img[region] = color
    for _ in range(rng.integers(1, 4)):
        cy, cx, r = rng.uniform(0.2, 0.9), rng.uniform(0, 1), rng.uniform(0.04, 0.12)
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        img[disc] = rng.uniform(0.1, 0.9, 3)
    img = gaussian_filter(img, sigma=(0.8, 0.8, 0))
    return np.clip(img, 0.0, 1.0)


def _rain_streak(rng, h, w, cfg):
    n = int(round(cfg["density"] * h * w))
    acc = np.zeros((h, w))
    for _ in range(n):
        length = _uniform(rng, cfg["length"]) * h
        angle = np.deg2rad(_uniform(rng, cfg["angle"]))
        r0, c0 = rng.uniform(-0.2 * h, h), rng.uniform(0, w)
        r1, c1 = r0 + length * np.cos(angle), c0 + length * np.sin(angle)
        rr, cc, val = line_aa(int(r0), int(c0), int(r1), int(c1))
        keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        level = _uniform(rng, cfg["intensity"])
        np.maximum.at(acc, (rr[keep], cc[keep]), val[keep] * level)
    if cfg["width"] > 0:
        acc = gaussian_filter(acc, cfg["width"]) * 1.6
    mask = np.clip(acc, 0, 1)[..., None]
    color = rng.uniform(0.85, 1.0) * np.ones(3)
    payload = color * (mask > 0)
    return mask, payload, {"beta": float(cfg["beta"])}


def _snow(rng, h, w, cfg):
    n = int(round(cfg["density"] * h * w))
    yy, xx = np.mgrid[0:h, 0:w]
    scale = max(h, w) / 64.0
    mask = np.zeros((h, w))
    for _ in range(n):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = _uniform(rng, cfg["radius"]) * scale
        op = _uniform(rng, cfg["opacity"])
        blob = op * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        np.maximum(mask, blob, out=mask)
    mask[mask < 1e-3] = 0.0
    mask = mask[..., None]
    color = rng.uniform(0.9, 1.0) * np.ones(3)
    payload = color * (mask > 0)
    return mask, payload, {"beta": float(cfg["beta"])}


def _smooth_field(rng, h, w, sigma):
    f = gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    f -= f.min()
    peak = f.max()
    return f / peak if peak > 0 else f


def _haze(rng, h, w, cfg):
    severity = cfg["severity"]
    if severity is None:
        severity = ("light", "moderate", "heavy")[rng.integers(0, 3)]
    if severity not in HAZE_SEVERITY:
        raise ValueError(f"unknown haze severity {severity!r}")
    lo, hi = HAZE_SEVERITY[severity]
    target = rng.uniform(lo, hi)
    depth = np.linspace(0.0, 1.0, h)[::-1, None] * np.ones((1, w))
    f = 0.5 * _smooth_field(rng, h, w, max(h, w) / 6.0) + 0.5 * depth
    t = target + cfg["amplitude"] * (f - f.mean())
    t = np.clip(t, 0.0, 1.0)[..., None]
    base = _uniform(rng, cfg["airlight"])
    airlight = np.clip(base + rng.uniform(-0.03, 0.03, 3), 0.0, 1.0)
    mask = 1.0 - t
    payload = np.broadcast_to(airlight, (h, w, 3)).copy()
    return mask, payload, {"transmission": t[..., 0], "airlight": airlight, "severity": severity}


def _raindrop(rng, h, w, cfg):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    side = min(h, w)
    n = max(1, int(round(_randint(rng, cfg["count"]) * h * w / 4096.0)))
    field = np.zeros((h, w))
    for _ in range(n):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = _uniform(rng, cfg["radius"]) * side
        field += r * r / ((yy - cy) ** 2 + (xx - cx) ** 2 + 1e-6)
    # metaball iso-surface at field == 1 with a soft rim
    mask = np.clip((field - 1.0) / 0.6, 0.0, 1.0)
    gy = np.gradient(gaussian_filter(np.minimum(field, 4.0), 1.0), axis=0)
    shade = 0.5 + 0.5 * np.tanh(2.0 * gy)
    tint = rng.uniform(0.55, 0.85, 3)
    payload = np.clip(tint * (0.6 + 0.5 * shade[..., None]), 0, 1) * (mask[..., None] > 0)
    return mask[..., None], payload, {"alpha": _uniform(rng, cfg["alpha"])}


def _flare(rng, h, w, cfg):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    cy, cx = rng.uniform(0.05, 0.5) * h, rng.uniform(0.1, 0.9) * w
    sigma = _uniform(rng, cfg["sigma"]) * max(h, w)
    k = _randint(rng, cfg["streaks"])
    phase = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    r2 = dy * dy + dx * dx
    theta = np.arctan2(dy, dx)
    glow = np.exp(-r2 / (2 * sigma * sigma))
    rays = np.exp(-np.sqrt(r2) / (2.5 * sigma)) * np.cos(k * theta / 2 + phase) ** 16
    mask = np.clip(_uniform(rng, cfg["strength"]) * (glow + 0.6 * rays), 0, 1)[..., None]
    color = np.array([1.0, rng.uniform(0.8, 0.95), rng.uniform(0.55, 0.8)])
    payload = np.broadcast_to(color, (h, w, 3)).copy()
    return mask, payload, {"beta": float(cfg["beta"])}


def _reflection(rng, h, w, cfg):
    other = random_scene(int(rng.integers(0, 2**63 - 1)), (h, w))[:, ::-1]
    payload = gaussian_filter(other, sigma=(cfg["blur"], cfg["blur"], 0))
    mask = np.ones((h, w, 1))
    return mask, np.clip(payload, 0, 1), {"weight": _uniform(rng, cfg["weight"])}


def _shadow(rng, h, w, cfg):
    n = _randint(rng, cfg["vertices"])
    cy, cx = rng.uniform(0.3, 0.8) * h, rng.uniform(0.2, 0.8) * w
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(0.2, 0.45, n) * min(h, w)
    rows, cols = cy + radii * np.sin(angles), cx + radii * np.cos(angles)
    mask = np.zeros((h, w))
    rr, cc = polygon(rows, cols, shape=(h, w))
    mask[rr, cc] = 1.0
    mask = np.clip(gaussian_filter(mask, cfg["softness"] * min(h, w)), 0, 1)[..., None]
    payload = np.ones((h, w, 3))
    return mask, payload, {"darkness": _uniform(rng, cfg["darkness"])}


def _fence(rng, h, w, cfg):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    period = _uniform(rng, cfg["period"]) * min(h, w)
    thick = max(1.0, _uniform(rng, cfg["thickness"]) * min(h, w))
    angle = np.deg2rad(_uniform(rng, cfg["angle"]))
    offset = rng.uniform(0, period, 2)
    u = xx * np.cos(angle) + yy * np.sin(angle) + offset[0]
    v = xx * np.cos(angle) - yy * np.sin(angle) + offset[1]

    def bars(coord):
        d = np.abs(coord - period * np.round(coord / period))
        return np.clip(1.0 - d / thick, 0.0, 1.0)

    mask = np.clip(2.0 * np.maximum(bars(u), bars(v)), 0, 1)[..., None]
    shade = rng.uniform(0.25, 0.5)
    payload = np.clip(shade + 0.15 * (yy / h)[..., None] * np.ones(3), 0, 1)
    return mask, payload, {"alpha": float(cfg["alpha"])}


_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


def _watermark(rng, h, w, cfg):
    n = _randint(rng, cfg["text_len"])
    text = "".join(_LETTERS[i] for i in rng.integers(0, len(_LETTERS), n))
    font = ImageFont.load_default()
    left, top, right, bottom = font.getbbox(text)
    gap = _randint(rng, cfg["spacing"])
    tile_w, tile_h = right - left + gap, bottom - top + gap
    canvas = PILImage.new("L", (w + 2 * tile_w, h + 2 * tile_h), 0)
    draw = ImageDraw.Draw(canvas)
    shift = int(rng.integers(0, tile_w))
    for row, y in enumerate(range(0, canvas.height, tile_h)):
        x0 = (shift + row * tile_w // 2) % tile_w - tile_w
        for x in range(x0, canvas.width, tile_w):
            draw.text((x - left, y - top), text, fill=255, font=font)
    oy, ox = int(rng.integers(0, tile_h)), int(rng.integers(0, tile_w))
    glyphs = np.asarray(canvas, dtype=np.float64)[oy:oy + h, ox:ox + w] / 255.0
    mask = glyphs[..., None]
    color = rng.uniform(0.85, 1.0, 3)
    payload = np.broadcast_to(color, (h, w, 3)).copy()
    return mask, payload, {"alpha": _uniform(rng, cfg["alpha"])}


_GENERATORS = {
    "rain_streak": _rain_streak,
    "snow": _snow,
    "haze": _haze,
    "raindrop": _raindrop,
    "flare": _flare,
    "reflection": _reflection,
    "shadow": _shadow,
    "fence": _fence,
    "watermark": _watermark,
}


def synth_mask(kind, seed, size, cfg=None):
    """Synthesize one seeded degradation layer of the given kind.

    The result is a deterministic function of ``(kind, seed, size, cfg)``.
    ``cfg`` overrides entries of ``DEFAULT_CFG[kind]``; a range is given as a
    ``(low, high)`` pair and a scalar pins the value.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unsupported degradation kind: {kind!r}")
    h, w = check_size(size)
    rng = np.random.default_rng([int(seed), kind_index(kind), h, w])
    mask, payload, params = _GENERATORS[kind](rng, h, w, merge_cfg(kind, cfg))
    mask = np.clip(np.asarray(mask, dtype=np.float64), 0.0, 1.0)
    payload = np.clip(np.asarray(payload, dtype=np.float64), 0.0, 1.0)
    return ComponentLayer(kind, mask, payload, params)


# --------------------------------------------------------------------------
# blending


def apply_layer(img, layer):
    """Blend one degradation layer over ``img``.

    ==============================  =========================================
    rain_streak, snow, flare        ``clip(img*(1-beta*m) + payload*m)``
    haze                            ``img*t + A*(1-t)`` with ``t = 1 - m``
    raindrop, fence, watermark      ``img*(1-alpha*m) + payload*alpha*m``
    shadow                          ``img*(1-d*m)``
    reflection                      ``clip((1-w*m)*img + w*m*payload)``
    ==============================  =========================================
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] != layer.mask.shape[:2] or img.shape[:2] != layer.payload.shape[:2]:
        raise ValueError(f"layer {layer.kind} dimension mismatch: image {img.shape[:2]}, "
                         f"mask {layer.mask.shape[:2]}, payload {layer.payload.shape[:2]}")
    m, p, kind = layer.mask, layer.payload, layer.kind
    if kind in SCREEN_KINDS:
        beta = layer.params.get("beta", 1.0)
        return np.clip(img * (1.0 - m * beta) + p * m, 0.0, 1.0)
    if kind == "haze":
        t = 1.0 - m
        return img * t + p * (1.0 - t)
    if kind in ALPHA_KINDS:
        a = layer.params.get("alpha", 1.0) * m
        return img * (1.0 - a) + p * a
    if kind == "shadow":
        return img * (1.0 - layer.params["darkness"] * m)
    if kind == "reflection":
        wm = layer.params["weight"] * m
        return np.clip((1.0 - wm) * img + wm * p, 0.0, 1.0)
    raise ValueError(f"unsupported degradation kind: {kind!r}")


def layer_truth(layer):
    """The appearance image a model must reconstruct for one layer.

    For every kind but shadow this is the layer rendered over black; shadows
    render nothing over black, so their truth is the darkening map instead.
    """
    if layer.kind == "shadow":
        return np.clip(layer.params["darkness"] * layer.mask * layer.payload, 0.0, 1.0)
    return apply_layer(np.zeros(layer.payload.shape), layer)


def _ordered(layers):
    return sorted(layers, key=lambda layer: CANONICAL_ORDER.index(layer.kind))


def compose(scene, spec):
    """Compose ``spec``'s layers over ``scene`` in canonical order."""
    scene = check_image(scene, "scene")
    out = scene
    for layer in _ordered(spec.layers):
        out = apply_layer(out, layer)
    truths = {layer.kind: layer_truth(layer) for layer in spec.layers}
    return CompositeSample(input=out, scene=scene, component_truths=truths,
                           presence=spec.presence, spec=spec)


def render_target(sample, selection):
    """Re-render the composite keeping only the selected components.

    Excluding the scene renders the kept layers over black; keeping exactly
    one degradation and nothing else yields that component's truth.
    """
    comps = sample.components
    sel = check_vector(selection, len(comps), "selection", binary=True)
    for k, keep in enumerate(sel):
        if keep and not sample.presence[k]:
            raise ValueError(f"component not present: {comps[k]}")
    kept = [layer for layer in sample.spec.layers if sel[comps.index(layer.kind)]]
    if not sel[0]:
        if len(kept) == 1:
            return sample.truth(kept[0].kind)
        if not kept:
            return np.zeros_like(sample.scene)
        out = np.zeros_like(sample.scene)
    else:
        out = sample.scene
    for layer in _ordered(kept):
        out = apply_layer(out, layer)
    return out


def make_spec(seed, kinds, size, components=ALL_COMPONENTS, cfgs=None):
    """Synthesize a ``CompositeSpec`` with one layer per kind in ``kinds``."""
    cfgs = cfgs or {}
    layers = [synth_mask(kind, mix_seed(seed, kind_index(kind)), size, cfgs.get(kind))
              for kind in kinds]
    return CompositeSpec(int(seed), layers, tuple(components))


def make_sample(seed, kinds, size, components=ALL_COMPONENTS, cfgs=None, scene=None):
    """Scene plus composite for one seed; the scene is procedural unless given."""
    if scene is None:
        scene = random_scene(mix_seed(seed, 0), size)
    return compose(scene, make_spec(seed, kinds, size, components, cfgs))


# --------------------------------------------------------------------------
# PNG I/O


def read_png(path):
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path, img):
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    PILImage.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)
