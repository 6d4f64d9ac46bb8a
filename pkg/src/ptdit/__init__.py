"""Proxy-tokenized diffusion transformer: sparse global/window attention,
a v-prediction harness, a cost model and an attention redundancy profiler."""

from .analysis import attention_flops_global, ptdit_attention_flops, redundancy_profile
from .giim import GIIM, ProxyStrategy, extract_proxies, giim_forward
from .grid import CompressionRatio, ConfigError, LatentGrid
from .model import ConditioningInput, ModelConfig, PTDiT, build_model, preset
from .tcm import TCM, WindowAttention, shift_window_attention, window_attention

__version__ = "0.1.0"

__all__ = [
    "GIIM",
    "TCM",
    "CompressionRatio",
    "ConditioningInput",
    "ConfigError",
    "LatentGrid",
    "ModelConfig",
    "PTDiT",
    "ProxyStrategy",
    "WindowAttention",
    "attention_flops_global",
    "build_model",
    "extract_proxies",
    "giim_forward",
    "preset",
    "ptdit_attention_flops",
    "redundancy_profile",
    "shift_window_attention",
    "window_attention",
]
