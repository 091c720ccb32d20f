"""
3D U-Net backbone returning the multi-scale decoder features
"""

import math
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from exceptions import RejectedInputError
from models.training_models import BackboneConfig


def conv_block(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1),
        nn.InstanceNorm3d(out_ch, affine=True),
        nn.ReLU(inplace=True),
        nn.Conv3d(out_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm3d(out_ch, affine=True),
        nn.ReLU(inplace=True)
    )


class UNet3D(nn.Module):
    """
    Plain 3D U-Net: conv-norm-ReLU blocks, strided downsampling, trilinear
    upsampling with skip concatenation.

    forward() returns the S decoder features coarsest first: feature i has
    spatial size input / 2^(S-1-i) and channels base * 2^(S-1-i).
    """

    def __init__(self, config: BackboneConfig, in_channels: int = 1):
        super().__init__()
        self.config = config
        channels = config.stage_channels
        coarsest = [s // 2 ** (config.stages - 1) for s in config.input_shape]
        if min(coarsest) < 2:
            raise RejectedInputError(
                f"input {config.input_shape} leaves a bottleneck of {coarsest}; need >= 2 per axis"
            )

        self.encoders = nn.ModuleList([conv_block(in_channels, channels[0])])
        for k in range(1, config.stages):
            self.encoders.append(conv_block(channels[k - 1], channels[k], stride=2))

        # decoders[j] fuses stage j+1 (upsampled) with encoder skip j
        self.decoders = nn.ModuleList([
            conv_block(channels[j + 1] + channels[j], channels[j])
            for j in range(config.stages - 1)
        ])

    @property
    def pyramid_channels(self) -> List[int]:
        return list(reversed(self.config.stage_channels))

    @property
    def pyramid_shapes(self) -> List[Tuple[int, int, int]]:
        """Spatial (Z, Y, X) shape of each decoder feature, coarsest first"""
        width, height, depth = self.config.input_shape
        stages = self.config.stages
        return [(depth // 2 ** (stages - 1 - i), height // 2 ** (stages - 1 - i),
                 width // 2 ** (stages - 1 - i)) for i in range(stages)]

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        return forward_backbone(self, x)


def forward_backbone(backbone: UNet3D, volume: torch.Tensor) -> List[torch.Tensor]:
    """Run the encoder-decoder; `volume` is (N, 1, Z, Y, X)"""
    width, height, depth = backbone.config.input_shape
    if volume.dim() != 5 or tuple(volume.shape[2:]) != (depth, height, width):
        raise RejectedInputError(
            f"expected input (N, C, {depth}, {height}, {width}), got {tuple(volume.shape)}"
        )

    skips = []
    x = volume
    for encoder in backbone.encoders:
        x = encoder(x)
        skips.append(x)

    pyramid = [x]
    for j in reversed(range(len(backbone.decoders))):
        up = F.interpolate(x, size=skips[j].shape[2:], mode="trilinear", align_corners=False)
        x = backbone.decoders[j](torch.cat([up, skips[j]], dim=1))
        pyramid.append(x)
    return pyramid


def middle_stage_size(config: BackboneConfig) -> Tuple[int, int, int]:
    """(Z, Y, X) size of the middle decoder stage: input / 2^ceil((S-1)/2)"""
    factor = 2 ** math.ceil((config.stages - 1) / 2)
    width, height, depth = config.input_shape
    return (depth // factor, height // factor, width // factor)


def aggregate_features(pyramid: Sequence[torch.Tensor],
                       target_size: Tuple[int, int, int]) -> torch.Tensor:
    """Resize every stage to `target_size` (Z, Y, X) trilinearly and concatenate channels"""
    resized = []
    for feature in pyramid:
        if tuple(feature.shape[2:]) == tuple(target_size):
            resized.append(feature)
        else:
            resized.append(F.interpolate(feature, size=tuple(target_size), mode="trilinear",
                                         align_corners=False))
    return torch.cat(resized, dim=1)
