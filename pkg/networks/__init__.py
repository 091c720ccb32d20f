# WSSL Networks
from .backbone import UNet3D, forward_backbone, aggregate_features, middle_stage_size
from .heads import SegHead, ConvPoolHead, det_head, text_projector
from .wssl_net import WSSLNet, HeadOutputs, count_parameters

__all__ = [
    'UNet3D', 'forward_backbone', 'aggregate_features', 'middle_stage_size',
    'SegHead', 'ConvPoolHead', 'det_head', 'text_projector',
    'WSSLNet', 'HeadOutputs', 'count_parameters'
]
