"""
Training objectives: segmentation (CE + Dice), detection CE, text-guided
similarity losses with learnable temperatures, and the teacher / joint /
student compositions. All batched functions average over samples.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from config import TEMPERATURE_BOUNDS, TEMPERATURE_INIT
from exceptions import RejectedInputError
from models.training_models import LossConfig, PromptSet

Number = Union[float, torch.Tensor]


class LearnableTemperature(nn.Module):
    """T = exp(log_T), clamped to the configured bounds"""

    def __init__(self, init: float = TEMPERATURE_INIT):
        super().__init__()
        if init <= 0:
            raise RejectedInputError(f"temperature must be positive, got {init}")
        self.log_t = nn.Parameter(torch.tensor(math.log(init)))

    def forward(self) -> torch.Tensor:
        low, high = TEMPERATURE_BOUNDS
        return self.log_t.exp().clamp(low, high)


class TemperatureParams(nn.Module):
    """Separate temperatures for the location and detection text heads"""

    def __init__(self, init: float = TEMPERATURE_INIT):
        super().__init__()
        self.loc = LearnableTemperature(init)
        self.det = LearnableTemperature(init)


# ==============================================================================
# SEGMENTATION & DETECTION
# ==============================================================================

def dice_loss(probs: torch.Tensor, mask: torch.Tensor, smooth: float = 1e-5) -> torch.Tensor:
    """1 - (2 sum(p m) + eps) / (sum p + sum m + eps) per sample, averaged; dim 0 is the batch"""
    if probs.shape != mask.shape:
        raise RejectedInputError(f"probs {tuple(probs.shape)} and mask {tuple(mask.shape)} differ")
    p = probs.reshape(probs.shape[0], -1)
    m = mask.reshape(mask.shape[0], -1).to(p.dtype)
    intersection = (p * m).sum(dim=1)
    dice = (2 * intersection + smooth) / (p.sum(dim=1) + m.sum(dim=1) + smooth)
    return (1 - dice).mean()


def seg_loss(seg_logits: torch.Tensor, mask: torch.Tensor, smooth: float = 1e-5) -> torch.Tensor:
    """Voxel-mean 2-class CE plus Dice on the softmax foreground; logits (N, 2, ...)"""
    if seg_logits.shape[0] != mask.shape[0] or seg_logits.shape[2:] != mask.shape[1:]:
        raise RejectedInputError(f"logits {tuple(seg_logits.shape)} do not match mask {tuple(mask.shape)}")
    ce = F.cross_entropy(seg_logits, mask.long())
    foreground = torch.softmax(seg_logits, dim=1)[:, 1]
    return ce + dice_loss(foreground, mask, smooth)


def det_loss(det_logits: torch.Tensor, diagnosis: torch.Tensor) -> torch.Tensor:
    """2-class CE; logits (N, 2)"""
    if torch.any((diagnosis != 0) & (diagnosis != 1)):
        raise RejectedInputError("diagnosis labels must be 0 or 1")
    return F.cross_entropy(det_logits, diagnosis.long())


# ==============================================================================
# TEXT-GUIDED LOSSES
# ==============================================================================

def similarity(i: torch.Tensor, E: torch.Tensor) -> torch.Tensor:
    """s_k = i . e_k; i is (D,) or (N, D), E is (K, D)"""
    if i.shape[-1] != E.shape[-1]:
        raise RejectedInputError(f"feature dim {i.shape[-1]} does not match text dim {E.shape[-1]}")
    return i @ E.T


def _check_temperature(T: Number) -> torch.Tensor:
    T = torch.as_tensor(T)
    if torch.any(T <= 0):
        raise RejectedInputError("temperature must be strictly positive")
    return T


def temperature_softmax(s: torch.Tensor, T: Number) -> torch.Tensor:
    """softmax(s / T) over the last axis (max-subtracted by torch)"""
    return torch.softmax(s / _check_temperature(T), dim=-1)


def _text_ce(i: torch.Tensor, E: torch.Tensor, labels: torch.Tensor, T: Number) -> torch.Tensor:
    logits = similarity(i, E) / _check_temperature(T)
    if logits.dim() == 1:
        logits, labels = logits[None], labels.reshape(1)
    if torch.any((labels < 0) | (labels >= E.shape[0])):
        raise RejectedInputError(f"label out of range [0..{E.shape[0] - 1}]")
    return F.cross_entropy(logits, labels.long())


def text_loc_loss(i_loc: torch.Tensor, E_loc: torch.Tensor, location: torch.Tensor,
                  T_loc: Number) -> torch.Tensor:
    """CE of the temperature softmax over location similarities against one-hot labels"""
    return _text_ce(i_loc, E_loc, location, T_loc)


def text_det_loss(i_det: torch.Tensor, E_det: torch.Tensor, diagnosis: torch.Tensor,
                  T_det: Number) -> torch.Tensor:
    """CE of the temperature softmax over the two diagnostic similarities"""
    return _text_ce(i_det, E_det, diagnosis, T_det)


@dataclass
class TextInputs:
    """Projected image features, frozen text matrices, weak labels and temperatures"""
    i_det: torch.Tensor
    i_loc: torch.Tensor
    E_det: torch.Tensor
    E_loc: torch.Tensor
    diagnosis: torch.Tensor
    location: torch.Tensor
    T_det: Number
    T_loc: Number
    prompts: PromptSet = PromptSet.DET_LOC


def text_loss(text: TextInputs, components: Optional[Dict[str, float]] = None) -> torch.Tensor:
    """text_loc_loss + text_det_loss, restricted to the enabled prompts"""
    total = text.i_loc.new_zeros(())
    if text.prompts.uses_loc:
        loc = text_loc_loss(text.i_loc, text.E_loc, text.location, text.T_loc)
        total = total + loc
        _record(components, "text_loc", loc)
    if text.prompts.uses_det:
        det = text_det_loss(text.i_det, text.E_det, text.diagnosis, text.T_det)
        total = total + det
        _record(components, "text_det", det)
    _record(components, "text", total)
    return total


# ==============================================================================
# COMPOSITIONS
# ==============================================================================

def _record(components: Optional[Dict[str, float]], name: str, value: torch.Tensor) -> None:
    if components is not None:
        components[name] = float(value.detach())


def _text_enabled(text: Optional[TextInputs], weight: float) -> bool:
    return text is not None and weight != 0 and text.prompts != PromptSet.NONE


def teacher_loss(seg_logits: torch.Tensor, mask: torch.Tensor, text: Optional[TextInputs],
                 cfg: LossConfig, components: Optional[Dict[str, float]] = None) -> torch.Tensor:
    """L_seg + lambda * L_text; the text term is skipped without text inputs"""
    seg = seg_loss(seg_logits, mask, cfg.dice_smooth)
    _record(components, "seg", seg)
    if not _text_enabled(text, cfg.lambda_):
        return seg
    return seg + cfg.lambda_ * text_loss(text, components)


def joint_loss(seg_logits: torch.Tensor, mask: torch.Tensor, det_logits: torch.Tensor,
               diagnosis: torch.Tensor, cfg: LossConfig,
               components: Optional[Dict[str, float]] = None) -> torch.Tensor:
    """L_seg + beta * L_det"""
    seg = seg_loss(seg_logits, mask, cfg.dice_smooth)
    det = det_loss(det_logits, diagnosis)
    _record(components, "seg", seg)
    _record(components, "det", det)
    return seg + cfg.beta * det


def student_loss(seg_logits: torch.Tensor, mask: torch.Tensor, det_logits: torch.Tensor,
                 diagnosis: torch.Tensor, text: Optional[TextInputs], cfg: LossConfig,
                 components: Optional[Dict[str, float]] = None) -> torch.Tensor:
    """L_joint + alpha * L_text"""
    joint = joint_loss(seg_logits, mask, det_logits, diagnosis, cfg, components)
    if not _text_enabled(text, cfg.alpha):
        return joint
    return joint + cfg.alpha * text_loss(text, components)
