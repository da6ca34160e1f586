"""Evaluation cases and prompt presets.

``WEATHER_CASES`` are the weather-removal cases, ``MIXED_CASES`` the
multi-degradation cases. ``PROMPT_CASES`` run on rain streak + snow +
moderate haze + raindrop inputs; ``STYLE_PROMPTS`` carry their own inputs.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .compositor import DEGRADATION_KINDS

WEATHER = ("rain_streak", "snow", "haze", "raindrop")


@dataclass(frozen=True)
class CasePreset:
    name: str
    kinds: Tuple[str, ...]
    haze_severity: Optional[str] = None
    prompt: str = ""

    def generator_cfgs(self):
        if "haze" in self.kinds and self.haze_severity:
            return {"haze": {"severity": self.haze_severity}}
        return {}

    def presence(self, components):
        return np.array([1.0 if (c == "scene" or c in self.kinds) else 0.0 for c in components])


WEATHER_CASES = (
    CasePreset("case1", ("rain_streak",)),
    CasePreset("case2", ("rain_streak", "snow")),
    CasePreset("case3", ("rain_streak", "haze"), "light"),
    CasePreset("case4", ("rain_streak", "haze"), "heavy"),
    CasePreset("case5", ("rain_streak", "haze", "raindrop"), "moderate"),
    CasePreset("case6", ("rain_streak", "snow", "haze", "raindrop"), "moderate"),
)

MIXED_CASES = (
    CasePreset("mixed1", ("rain_streak",)),
    CasePreset("mixed2", ("rain_streak", "snow", "haze", "raindrop"), "moderate"),
    CasePreset("mixed3", ("flare", "reflection", "shadow")),
    CasePreset("mixed4", ("fence", "watermark")),
    CasePreset("mixed5", ("rain_streak", "shadow", "fence")),
    CasePreset("mixed6", DEGRADATION_KINDS, "moderate"),
)

_ALL_WEATHER = ("rain_streak", "snow", "haze", "raindrop")

PROMPT_CASES = (
    CasePreset("prompt1", _ALL_WEATHER, "moderate", "remove rain streak"),
    CasePreset("prompt2", _ALL_WEATHER, "moderate", "remove haze"),
    CasePreset("prompt3", _ALL_WEATHER, "moderate", "remove snow and raindrop"),
    CasePreset("prompt4", _ALL_WEATHER, "moderate", "remove rain streak and haze"),
    CasePreset("prompt5", _ALL_WEATHER, "moderate", "reconstruct the scene and rain streak"),
)

STYLE_PROMPTS = (
    CasePreset("style1", _ALL_WEATHER, "moderate", "remove the haze and the raindrop"),
    CasePreset("style2", _ALL_WEATHER, "moderate", "generate the foggy cityscape"),
    CasePreset("style3", _ALL_WEATHER, "moderate", "retain the scene image and the snow"),
    CasePreset("style4", DEGRADATION_KINDS, "moderate",
               "keep the background and all weather components"),
    CasePreset("style5", DEGRADATION_KINDS, "moderate", "compose image with watermark"),
    CasePreset("style6", DEGRADATION_KINDS, "moderate", "restore scene, flare and shadow together"),
    CasePreset("style7", DEGRADATION_KINDS, "moderate", "remove watermark, reflection and shadow"),
)

PRESET_GROUPS = {
    "weather": WEATHER_CASES,
    "mixed": MIXED_CASES,
    "prompts": PROMPT_CASES,
    "styles": STYLE_PROMPTS,
}


def get_presets(name_or_names):
    """Look up presets by group name or individual preset name."""
    names = [name_or_names] if isinstance(name_or_names, str) else list(name_or_names)
    index = {p.name: p for group in PRESET_GROUPS.values() for p in group}
    out = []
    for name in names:
        if name in PRESET_GROUPS:
            out.extend(PRESET_GROUPS[name])
        elif name in index:
            out.append(index[name])
        else:
            raise ValueError(f"unknown preset {name!r}; groups: {sorted(PRESET_GROUPS)}")
    return out
