"""
Segmentation, detection, location and text-projection heads
"""

import torch
import torch.nn as nn


class SegHead(nn.Module):
    """1x1x1 conv on the finest decoder feature -> 2-class voxel logits"""

    def __init__(self, in_channels: int, num_classes: int = 2):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, num_classes, kernel_size=1)

    def forward(self, last_feature: torch.Tensor) -> torch.Tensor:
        return self.conv(last_feature)


class ConvPoolHead(nn.Module):
    """
    conv 3x3x3 -> global average pool -> fully connected.

    Used for the detection head (hidden = det channels, out = 2), the text
    projectors (hidden = out = D) and the linear location head (out = L+1).
    """

    def __init__(self, in_channels: int, hidden_channels: int, out_features: int,
                 padding_mode: str = "zeros"):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, hidden_channels, kernel_size=3, padding=1,
                              padding_mode=padding_mode)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.fc = nn.Linear(hidden_channels, out_features)

    def pooled(self, aggregated: torch.Tensor) -> torch.Tensor:
        return self.pool(self.conv(aggregated)).flatten(1)

    def forward(self, aggregated: torch.Tensor) -> torch.Tensor:
        return self.fc(self.pooled(aggregated))


def det_head(in_channels: int, hidden_channels: int, padding_mode: str = "zeros") -> ConvPoolHead:
    return ConvPoolHead(in_channels, hidden_channels, 2, padding_mode)


def text_projector(in_channels: int, text_dim: int, padding_mode: str = "zeros") -> ConvPoolHead:
    return ConvPoolHead(in_channels, text_dim, text_dim, padding_mode)
