"""Controllable blind image decomposition at desk scale."""

from .compositor import (ALL_COMPONENTS, DEGRADATION_KINDS, CompositeSample, CompositeSpec,
                         compose, make_sample, render_target, synth_mask)
from .estimator import BlindDecomposer
from .metrics import psnr, ssim
from .model import CBDNet, ModelConfig, decompose, recombine
from .prompt import PromptConverter, parse_prompt

__version__ = "0.1.0"
