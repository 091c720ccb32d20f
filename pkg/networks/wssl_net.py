"""
WSSL network: U-Net backbone, feature aggregation and the configured heads
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from config import TEMPERATURE_INIT
from models.training_models import NetworkConfig
from networks.backbone import UNet3D, aggregate_features, middle_stage_size
from networks.heads import ConvPoolHead, SegHead, det_head, text_projector
from services.losses import TemperatureParams


@dataclass
class HeadOutputs:
    """Outputs of one forward pass; heads that are not built stay None"""
    seg_logits: Optional[torch.Tensor] = None  # (N, 2, Z, Y, X)
    det_logits: Optional[torch.Tensor] = None  # (N, 2)
    i_det: Optional[torch.Tensor] = None  # (N, D)
    i_loc: Optional[torch.Tensor] = None  # (N, D)
    loc_logits: Optional[torch.Tensor] = None  # (N, L+1), linear location head


class WSSLNet(nn.Module):
    """
    Backbone plus any of: segmentation head, detection head, the two text
    projectors (with their learnable temperatures) and a linear location head.
    Detection, projectors and the location head all read the same aggregated
    multi-scale feature.
    """

    def __init__(self, config: NetworkConfig, temp_init: float = TEMPERATURE_INIT):
        super().__init__()
        self.config = config
        heads = config.heads
        self.backbone = UNet3D(config.backbone)

        if heads.aggregation_size is None:
            self.aggregation_size = middle_stage_size(config.backbone)
        else:
            width, height, depth = heads.aggregation_size
            self.aggregation_size = (depth, height, width)
        total = sum(self.backbone.pyramid_channels)

        self.seg_head = SegHead(config.backbone.base_channels) if heads.with_seg else None
        self.det_head = det_head(total, heads.det_channels, heads.padding_mode) if heads.with_det else None
        if heads.with_text:
            self.det_projector = text_projector(total, heads.text_dim, heads.padding_mode)
            self.loc_projector = text_projector(total, heads.text_dim, heads.padding_mode)
            self.temperatures = TemperatureParams(temp_init)
        else:
            self.det_projector = None
            self.loc_projector = None
            self.temperatures = None
        self.loc_head = ConvPoolHead(total, heads.det_channels, heads.num_locations, heads.padding_mode) \
            if heads.with_loc_head else None

    @property
    def aggregated_channels(self) -> int:
        return sum(self.backbone.pyramid_channels)

    def _needs_aggregate(self) -> bool:
        return any(h is not None for h in (self.det_head, self.det_projector, self.loc_head))

    def features(self, volume: torch.Tensor) -> Tuple[List[torch.Tensor], Optional[torch.Tensor]]:
        pyramid = self.backbone(volume)
        aggregated = aggregate_features(pyramid, self.aggregation_size) if self._needs_aggregate() else None
        return pyramid, aggregated

    def project_text_features(self, aggregated: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.det_projector(aggregated), self.loc_projector(aggregated)

    def forward(self, volume: torch.Tensor) -> HeadOutputs:
        pyramid, aggregated = self.features(volume)
        out = HeadOutputs()
        if self.seg_head is not None:
            out.seg_logits = self.seg_head(pyramid[-1])
        if self.det_head is not None:
            out.det_logits = self.det_head(aggregated)
        if self.det_projector is not None:
            out.i_det, out.i_loc = self.project_text_features(aggregated)
        if self.loc_head is not None:
            out.loc_logits = self.loc_head(aggregated)
        return out


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
