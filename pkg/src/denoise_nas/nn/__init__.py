"""Network building blocks and U-Net assembly."""

from .blocks import (
    BlockKind,
    CandidateSpec,
    ConvBNReLUBlock,
    FoldedConvReLUBlock,
    NAFBlock,
    fold_conv_bn,
    make_block,
    make_candidate,
)
from .container import load_params, save_params
from .module import BatchNorm2d, Conv2d, LayerNorm2d, Module, Sequential
from .unet import UNet, UNetConfig, build_unet, reference_base_config

__all__ = [
    "BatchNorm2d",
    "BlockKind",
    "CandidateSpec",
    "Conv2d",
    "ConvBNReLUBlock",
    "FoldedConvReLUBlock",
    "LayerNorm2d",
    "Module",
    "NAFBlock",
    "Sequential",
    "UNet",
    "UNetConfig",
    "build_unet",
    "fold_conv_bn",
    "load_params",
    "make_block",
    "make_candidate",
    "reference_base_config",
    "save_params",
]
