"""
Preprocess Service
Organ ROI extraction, resizing, intensity normalization and augmentation.
All arrays are indexed [z, y, x]; specs use (x, y, z) order.
"""

import math
import warnings
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from config import NORMALIZE_VARIANCE_FLOOR
from exceptions import DegenerateInputError, DegenerateVolumeWarning, RejectedInputError
from logger_config import setup_logger
from models.training_models import AugmentSpec, RoiSpec

logger = setup_logger(__name__)

Box = Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]  # inclusive (x, y, z) bounds


# ==============================================================================
# ROI EXTRACTION
# ==============================================================================

def roi_box(organ_mask: np.ndarray, margin: Tuple[int, int, int]) -> Box:
    """Tight organ bounding box grown by `margin` and clamped; inclusive (x, y, z) bounds"""
    if not organ_mask.any():
        raise DegenerateInputError("organ mask is empty; cannot extract an ROI")
    bounds = []
    # numpy axes are (z, y, x); margins are (x, y, z)
    for axis_xyz, axis_np in ((0, 2), (1, 1), (2, 0)):
        other = tuple(a for a in range(3) if a != axis_np)
        present = np.flatnonzero(organ_mask.any(axis=other))
        lo = max(int(present[0]) - margin[axis_xyz], 0)
        hi = min(int(present[-1]) + margin[axis_xyz], organ_mask.shape[axis_np] - 1)
        bounds.append((lo, hi))
    return tuple(bounds)


def extract_roi(volume: np.ndarray, organ_mask: np.ndarray, tumor_mask: Optional[np.ndarray],
                spec: RoiSpec):
    """Crop volume and masks identically to the organ box plus margin"""
    (x0, x1), (y0, y1), (z0, z1) = roi_box(organ_mask, spec.margin)
    window = (slice(z0, z1 + 1), slice(y0, y1 + 1), slice(x0, x1 + 1))
    cropped_mask = tumor_mask[window] if tumor_mask is not None else None
    return volume[window], organ_mask[window], cropped_mask


# ==============================================================================
# RESIZING
# ==============================================================================

def _check_shapes(source: Tuple[int, ...], target: Tuple[int, ...]) -> None:
    if len(source) != 3 or len(target) != 3:
        raise RejectedInputError("resize expects 3D arrays and 3D target shapes")
    if min(source) < 2 or min(target) < 2:
        raise RejectedInputError(f"resize needs at least 2 voxels per axis, got {source} -> {target}")


def resize_trilinear(volume: np.ndarray, target_shape: Tuple[int, int, int]) -> np.ndarray:
    """Trilinear resize with aligned corners; `target_shape` in numpy (Z, Y, X) order"""
    target_shape = tuple(int(s) for s in target_shape)
    _check_shapes(volume.shape, target_shape)
    if tuple(volume.shape) == target_shape:
        return volume.copy()
    tensor = torch.from_numpy(np.ascontiguousarray(volume, dtype=np.float64))[None, None]
    resized = F.interpolate(tensor, size=target_shape, mode="trilinear", align_corners=True)
    return resized[0, 0].numpy().astype(volume.dtype if volume.dtype.kind == "f" else np.float32)


def resize_nearest(mask: np.ndarray, target_shape: Tuple[int, int, int]) -> np.ndarray:
    """Nearest-neighbor resize; binary masks stay binary. (Z, Y, X) order"""
    target_shape = tuple(int(s) for s in target_shape)
    _check_shapes(mask.shape, target_shape)
    if tuple(mask.shape) == target_shape:
        return mask.copy()
    tensor = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))[None, None]
    resized = F.interpolate(tensor, size=target_shape, mode="nearest")
    return resized[0, 0].numpy().astype(mask.dtype)


# ==============================================================================
# NORMALIZATION
# ==============================================================================

def normalize(volume: np.ndarray) -> np.ndarray:
    """Zero mean, unit population variance; constant volumes become zeros with a warning"""
    data = volume.astype(np.float64)
    mean = data.mean()
    variance = data.var()
    if variance < NORMALIZE_VARIANCE_FLOOR:
        message = f"volume variance {variance:.3g} below floor; returning zeros"
        logger.warning(f"⚠️ {message}")
        warnings.warn(message, DegenerateVolumeWarning, stacklevel=2)
        return np.zeros_like(volume, dtype=np.float32)
    return ((data - mean) / math.sqrt(variance)).astype(np.float32)


# ==============================================================================
# AUGMENTATION
# ==============================================================================

def augment(volume: np.ndarray, mask: Optional[np.ndarray], spec: AugmentSpec,
            seed: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Random in-plane rotation and scaling about the volume center, random x/y
    flips and random intensity scaling. The same geometric transform is applied
    to volume and mask; the mask is resampled nearest and re-binarized.
    """
    if mask is not None and mask.shape != volume.shape:
        raise RejectedInputError(f"volume {volume.shape} and mask {mask.shape} differ in shape")
    if not spec.enabled:
        return volume, mask

    rng = np.random.default_rng(seed)
    angle = math.radians(rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg))
    scale = rng.uniform(*spec.scale_range)
    flips = [axis for axis in spec.flip_axes if rng.random() < spec.flip_probability]
    intensity = rng.uniform(*spec.intensity_scale_range)

    out_volume = volume.astype(np.float32)
    out_mask = None if mask is None else (mask > 0.5).astype(np.float32)

    if angle != 0.0 or scale != 1.0:
        # Output -> input mapping in (z, y, x): z untouched, (y, x) rotated and scaled
        cos, sin = math.cos(angle) / scale, math.sin(angle) / scale
        matrix = np.array([[1.0, 0.0, 0.0], [0.0, cos, -sin], [0.0, sin, cos]])
        center = (np.asarray(volume.shape, dtype=np.float64) - 1) / 2
        offset = center - matrix @ center
        out_volume = ndimage.affine_transform(out_volume, matrix, offset=offset, order=1,
                                              mode="constant", cval=float(volume.min()))
        if out_mask is not None:
            out_mask = ndimage.affine_transform(out_mask, matrix, offset=offset, order=0,
                                                mode="constant", cval=0.0)

    for axis in flips:
        np_axis = 2 if axis == "x" else 1
        out_volume = np.flip(out_volume, axis=np_axis)
        if out_mask is not None:
            out_mask = np.flip(out_mask, axis=np_axis)

    out_volume = np.ascontiguousarray(out_volume * intensity, dtype=np.float32)
    if out_mask is not None:
        out_mask = np.ascontiguousarray(out_mask > 0.5).astype(mask.dtype)
    return out_volume, out_mask


# ==============================================================================
# FULL RECORD PIPELINE
# ==============================================================================

def prepare_case(volume: np.ndarray, organ_mask: np.ndarray, tumor_mask: Optional[np.ndarray],
                 spec: RoiSpec):
    """ROI -> resize -> normalize into model space; returns (volume, organ, tumor?)"""
    roi_volume, roi_organ, roi_tumor = extract_roi(volume, organ_mask, tumor_mask, spec)
    shape = spec.array_shape
    out_volume = normalize(resize_trilinear(roi_volume.astype(np.float32), shape))
    out_organ = resize_nearest(roi_organ.astype(np.uint8), shape)
    out_tumor = resize_nearest(roi_tumor.astype(np.uint8), shape) if roi_tumor is not None else None
    return out_volume, out_organ, out_tumor
