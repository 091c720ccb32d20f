"""
Phantom Models
Synthetic patient records, dataset manifests and generator settings
"""

import json
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from exceptions import SchemaError
from config import (
    CANCER_PREVALENCE, DEFAULT_SEED, FULL_FRACTION, NOISE_SIGMA, NUM_LOCATION_BINS,
    ORGAN_RADIUS_RANGE, SPLIT_RATIOS, TUMOR_CONTRAST, TUMOR_RADIUS_RANGE,
    VOLUME_SHAPE, VOXEL_SPACING_MM
)

# Tumors may bulge past the organ tube by at most this many voxels
TUMOR_ORGAN_MARGIN = 2.0


class Supervision(str, Enum):
    FULL = "full"
    WEAK = "weak"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class TumorStage(str, Enum):
    STAGE_I = "I"
    STAGE_II = "II"


class PhantomConfig(BaseModel):
    """Settings of the synthetic volume generator"""
    model_config = ConfigDict(extra="forbid")

    volume_shape: Tuple[int, int, int] = Field(default=VOLUME_SHAPE, description="(W, H, Z) voxels")
    voxel_spacing: Tuple[float, float, float] = Field(default=VOXEL_SPACING_MM, description="(sx, sy, sz) mm")
    organ_radius_range: Tuple[float, float] = Field(default=ORGAN_RADIUS_RANGE, description="voxels")
    tumor_radius_range: Tuple[float, float] = Field(default=TUMOR_RADIUS_RANGE, description="voxels")
    tumor_contrast: float = Field(default=TUMOR_CONTRAST, description="intensity offset of tumor tissue")
    noise_sigma: float = Field(default=NOISE_SIGMA, ge=0)
    cancer_prevalence: float = Field(default=CANCER_PREVALENCE, ge=0, le=1)
    seed: int = DEFAULT_SEED

    @field_validator('volume_shape')
    def validate_volume_shape(cls, v):
        if any(s < 8 for s in v):
            raise ValueError('volume_shape must be at least 8 voxels per axis')
        return v

    @field_validator('organ_radius_range', 'tumor_radius_range')
    def validate_range(cls, v):
        if v[0] <= 0 or v[0] > v[1]:
            raise ValueError('radius range must satisfy 0 < low <= high')
        return v

    @field_validator('tumor_radius_range')
    def validate_tumor_renderable(cls, v):
        if v[0] < 1.0:
            raise ValueError('tumor radii below one voxel cannot be rendered')
        return v

    @model_validator(mode='after')
    def validate_tumor_fits_organ(self):
        if self.tumor_radius_range[1] > self.organ_radius_range[1] + TUMOR_ORGAN_MARGIN:
            raise ValueError('tumor_radius_range must fit inside organ_radius_range + margin')
        width, height, _ = self.volume_shape
        if 2 * self.organ_radius_range[1] + 2 > min(width, height):
            raise ValueError('organ does not fit in the volume cross-section')
        return self

    @property
    def array_shape(self) -> Tuple[int, int, int]:
        """numpy shape of generated arrays, (Z, Y, X)"""
        width, height, depth = self.volume_shape
        return (depth, height, width)


class TumorGeometry(BaseModel):
    """Ellipsoid parameters of a rendered tumor, voxel units, (x, y, z) order"""
    model_config = ConfigDict(extra="forbid")

    center: Tuple[float, float, float]
    radii: Tuple[float, float, float]
    stage: TumorStage


class PatientRecord(BaseModel):
    """One synthetic patient; arrays are indexed [z, y, x]"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str
    volume: np.ndarray
    mask: Optional[np.ndarray] = None
    organ_mask: np.ndarray
    diagnosis: int = Field(..., ge=0, le=1)
    location: int = Field(..., ge=0, le=NUM_LOCATION_BINS)
    supervision: Supervision = Supervision.FULL
    tumor: Optional[TumorGeometry] = None

    @model_validator(mode='after')
    def validate_labels(self):
        if (self.diagnosis == 0) != (self.location == 0):
            raise ValueError('diagnosis = 0 must coincide with location = 0')
        if self.mask is not None:
            if self.supervision != Supervision.FULL:
                raise ValueError('a visible mask requires full supervision')
            if bool(self.mask.any()) != bool(self.diagnosis):
                raise ValueError('mask must be non-empty exactly for cancer records')
        return self


class ManifestRecord(BaseModel):
    """One manifest line; paths are relative to the dataset root"""
    model_config = ConfigDict(extra="forbid")

    id: str
    volume: str
    organ_mask: str
    mask: Optional[str] = None
    diagnosis: int = Field(..., ge=0, le=1)
    location: int = Field(..., ge=0, le=NUM_LOCATION_BINS)
    stage: Optional[TumorStage] = None
    supervision: Supervision
    split: Split

    @model_validator(mode='after')
    def validate_visibility(self):
        if self.mask is not None and self.supervision != Supervision.FULL:
            raise ValueError('weak records must not expose a mask path')
        if (self.diagnosis == 0) != (self.location == 0):
            raise ValueError('diagnosis = 0 must coincide with location = 0')
        return self


class Manifest(BaseModel):
    """Dataset manifest: records plus the ratios they were drawn with"""
    model_config = ConfigDict(extra="forbid")

    records: List[ManifestRecord]
    split_ratios: Tuple[float, float, float] = SPLIT_RATIOS
    full_fraction: float = Field(default=1.0, gt=0, le=1)
    seed: int = DEFAULT_SEED

    @model_validator(mode='after')
    def validate_unique_ids(self):
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError('record ids must be unique')
        return self

    def split(self, split: Split) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def full_train(self) -> List[ManifestRecord]:
        return [r for r in self.split(Split.TRAIN) if r.supervision == Supervision.FULL]

    def weak_train(self) -> List[ManifestRecord]:
        return [r for r in self.split(Split.TRAIN) if r.supervision == Supervision.WEAK]

    def by_id(self) -> Dict[str, ManifestRecord]:
        return {r.id: r for r in self.records}

    # --- JSON-lines persistence -------------------------------------------

    def header(self) -> Dict:
        return {
            "split_ratios": list(self.split_ratios),
            "full_fraction": self.full_fraction,
            "seed": self.seed,
        }

    def write(self, path: Path) -> None:
        """Header line followed by one record per line, sorted keys"""
        lines = [json.dumps({"manifest": self.header()}, sort_keys=True)]
        lines += [json.dumps(r.model_dump(mode="json"), sort_keys=True) for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: Path) -> "Manifest":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines or "manifest" not in json.loads(lines[0]):
            raise SchemaError(f'{path} has no manifest header line')
        header = json.loads(lines[0])["manifest"]
        records = [ManifestRecord(**json.loads(ln)) for ln in lines[1:]]
        return cls(records=records, **header)


class DatasetInfo(BaseModel):
    """Sidecar describing how a dataset directory was generated"""
    model_config = ConfigDict(extra="forbid")

    phantom: PhantomConfig
    n: int
    split_ratios: Tuple[float, float, float] = SPLIT_RATIOS
    seed: int
    full_fraction: float = FULL_FRACTION
