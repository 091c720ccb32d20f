"""
Training Models
Preprocessing, network, loss and experiment configuration schemas
"""

from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import (
    ALPHA_TEXT, AUGMENT_FLIP_AXES, AUGMENT_FLIP_PROBABILITY, AUGMENT_INTENSITY_SCALE_RANGE,
    AUGMENT_ROTATION_MAX_DEG, AUGMENT_SCALE_RANGE, BACKBONE_STAGES, BASE_CHANNELS, BATCH_SIZE,
    BETA_DET, DATA_DIR, DEFAULT_SEED, DET_HEAD_CHANNELS, DICE_SMOOTH, EMBEDDING_TABLE, EPOCHS,
    FULL_FRACTION, LAMBDA_TEXT, LEARNING_RATE, PSEUDO_THRESHOLD, ROI_MARGIN, RUN_DIR,
    TARGET_SHAPE, TEMPERATURE_INIT, TEXT_DIM, WARMUP_EPOCHS, WEIGHT_DECAY
)


class TrainMode(str, Enum):
    TEACHER = "teacher"
    STUDENT = "student"
    WEAK_ONLY_CLASSIFIER = "weak_only_classifier"
    FULLY_SUPERVISED = "fully_supervised"
    JOINT_NO_TEXT = "joint_no_text"
    MULTITASK_CLS_LOC = "multitask_cls_loc"
    PANDA_LIKE_WSSL = "panda_like_wssl"


class PromptSet(str, Enum):
    """Which text prompts feed the text-guided loss"""
    NONE = "none"
    DET = "det"
    LOC = "loc"
    DET_LOC = "det+loc"

    @property
    def uses_det(self) -> bool:
        return self in (PromptSet.DET, PromptSet.DET_LOC)

    @property
    def uses_loc(self) -> bool:
        return self in (PromptSet.LOC, PromptSet.DET_LOC)


# Heads trained by each joint-network ablation variant: (seg, det, loc)
TABLE3_VARIANTS: Dict[str, Tuple[bool, bool, bool]] = {
    "a": (False, True, False),
    "b": (False, False, True),
    "c": (True, True, False),
    "d": (True, False, True),
    "e": (True, True, True),
}


class RoiSpec(BaseModel):
    """Organ ROI crop margins and the model input shape, both (x, y, z)"""
    model_config = ConfigDict(extra="forbid")

    margin: Tuple[int, int, int] = ROI_MARGIN
    target_shape: Tuple[int, int, int] = TARGET_SHAPE

    @field_validator('margin')
    def validate_margin(cls, v):
        if any(m < 0 for m in v):
            raise ValueError('ROI margins must be non-negative')
        return v

    @field_validator('target_shape')
    def validate_target_shape(cls, v):
        if any(s < 4 for s in v):
            raise ValueError('target_shape must be at least 4 per axis')
        return v

    @property
    def array_shape(self) -> Tuple[int, int, int]:
        """Target shape in numpy (Z, Y, X) order"""
        width, height, depth = self.target_shape
        return (depth, height, width)


class AugmentSpec(BaseModel):
    """Training-time augmentation; rotation is about the z-axis only"""
    model_config = ConfigDict(extra="forbid")

    rotation_max_deg: float = Field(default=AUGMENT_ROTATION_MAX_DEG, ge=0, le=180)
    scale_range: Tuple[float, float] = AUGMENT_SCALE_RANGE
    flip_axes: List[Literal["x", "y"]] = Field(default_factory=lambda: list(AUGMENT_FLIP_AXES))
    flip_probability: float = Field(default=AUGMENT_FLIP_PROBABILITY, ge=0, le=1)
    intensity_scale_range: Tuple[float, float] = AUGMENT_INTENSITY_SCALE_RANGE
    enabled: bool = True

    @field_validator('scale_range')
    def validate_scale_range(cls, v):
        if not (0 < v[0] <= v[1] < 2):
            raise ValueError('scale_range must lie inside (0, 2)')
        return v

    @field_validator('intensity_scale_range')
    def validate_intensity_range(cls, v):
        if not (0 < v[0] <= v[1]):
            raise ValueError('intensity_scale_range must be positive and ordered')
        return v


class BackboneConfig(BaseModel):
    """3D U-Net backbone; channels double per stage"""
    model_config = ConfigDict(extra="forbid")

    stages: int = Field(default=BACKBONE_STAGES, ge=2)
    base_channels: int = Field(default=BASE_CHANNELS, ge=1)
    input_shape: Tuple[int, int, int] = Field(default=TARGET_SHAPE, description="(W, H, Z)")

    @model_validator(mode='after')
    def validate_divisibility(self):
        factor = 2 ** (self.stages - 1)
        if any(s % factor for s in self.input_shape):
            raise ValueError(f'input_shape must be divisible by 2^(stages-1) = {factor}')
        return self

    @property
    def stage_channels(self) -> List[int]:
        """Encoder channels, finest stage first"""
        return [self.base_channels * 2 ** i for i in range(self.stages)]


class HeadsConfig(BaseModel):
    """Which heads the network carries and their widths"""
    model_config = ConfigDict(extra="forbid")

    with_seg: bool = True
    with_det: bool = True
    with_text: bool = True
    with_loc_head: bool = False
    det_channels: int = Field(default=DET_HEAD_CHANNELS, ge=1)
    text_dim: int = Field(default=TEXT_DIM, ge=2)
    num_locations: int = 5
    aggregation_size: Optional[Tuple[int, int, int]] = Field(
        default=None, description="(W, H, Z); None = middle decoder stage"
    )
    padding_mode: Literal["zeros", "circular"] = "zeros"


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    heads: HeadsConfig = Field(default_factory=HeadsConfig)


class LossConfig(BaseModel):
    """Loss weights; `lambda` is spelled `lambda_` in Python"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lambda_: float = Field(default=LAMBDA_TEXT, ge=0, alias="lambda")
    alpha: float = Field(default=ALPHA_TEXT, ge=0)
    beta: float = Field(default=BETA_DET, ge=0)
    dice_smooth: float = Field(default=DICE_SMOOTH, gt=0)
    temp_init: float = Field(default=TEMPERATURE_INIT, gt=0)


class TrainConfig(BaseModel):
    """One training stage"""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=EPOCHS, ge=1)
    warmup_epochs: int = Field(default=WARMUP_EPOCHS, ge=0)
    lr: float = Field(default=LEARNING_RATE, gt=0)
    weight_decay: float = Field(default=WEIGHT_DECAY, ge=0)
    batch_size: int = Field(default=BATCH_SIZE, ge=1)
    seed: int = DEFAULT_SEED
    loss: LossConfig = Field(default_factory=LossConfig)
    mode: TrainMode = TrainMode.STUDENT
    prompts: PromptSet = PromptSet.DET_LOC
    table3_variant: Optional[Literal["a", "b", "c", "d", "e"]] = None
    augment: bool = True

    @model_validator(mode='after')
    def validate_schedule(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError('warmup_epochs must be smaller than epochs')
        if self.mode == TrainMode.MULTITASK_CLS_LOC and self.table3_variant is None:
            raise ValueError('multitask_cls_loc needs a table3_variant')
        return self

    def head_flags(self) -> Tuple[bool, bool, bool, bool]:
        """(seg, det, text, loc_head) trained in this mode; projectors exist only when a text loss trains them"""
        if self.mode == TrainMode.TEACHER:
            return True, False, self.prompts != PromptSet.NONE and self.loss.lambda_ > 0, False
        if self.mode == TrainMode.WEAK_ONLY_CLASSIFIER:
            return False, True, False, False
        if self.mode in (TrainMode.FULLY_SUPERVISED, TrainMode.JOINT_NO_TEXT, TrainMode.PANDA_LIKE_WSSL):
            return True, True, False, False
        if self.mode == TrainMode.MULTITASK_CLS_LOC:
            seg, det, loc = TABLE3_VARIANTS[self.table3_variant]
            return seg, det, False, loc
        return True, True, self.prompts != PromptSet.NONE and self.loss.alpha > 0, False


class TextConfig(BaseModel):
    """Where text embeddings come from"""
    model_config = ConfigDict(extra="forbid")

    table_path: Optional[str] = EMBEDDING_TABLE or None
    dim: int = Field(default=TEXT_DIM, ge=2)
    normalize: bool = True


class ExperimentConfig(BaseModel):
    """Everything a WSSL run needs; unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")

    name: str = "wssl"
    dataset_dir: str = DATA_DIR
    run_dir: str = RUN_DIR
    seed: int = DEFAULT_SEED
    full_fraction: float = Field(default=FULL_FRACTION, gt=0, le=1)
    roi: RoiSpec = Field(default_factory=RoiSpec)
    augment: AugmentSpec = Field(default_factory=AugmentSpec)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    det_channels: int = Field(default=DET_HEAD_CHANNELS, ge=1)
    text: TextConfig = Field(default_factory=TextConfig)
    teacher: TrainConfig = Field(default_factory=lambda: TrainConfig(mode=TrainMode.TEACHER))
    student: TrainConfig = Field(default_factory=lambda: TrainConfig(mode=TrainMode.STUDENT))
    pseudo_threshold: float = Field(default=PSEUDO_THRESHOLD, ge=0, le=1)
    bosma_filter: bool = False
    save_probabilities: bool = False
    pseudo_dir: Optional[str] = Field(default=None, description="reuse pseudo masks, skip step 1")
    analyze_teacher: bool = Field(default=True, description="teacher Dice on hidden weak masks after training")
    audit: bool = False

    @model_validator(mode='after')
    def validate_shapes(self):
        if tuple(self.backbone.input_shape) != tuple(self.roi.target_shape):
            raise ValueError('backbone.input_shape must equal roi.target_shape')
        return self

    def network_config(self, train: TrainConfig, num_locations: int) -> NetworkConfig:
        seg, det, text, loc = train.head_flags()
        heads = HeadsConfig(
            with_seg=seg, with_det=det, with_text=text, with_loc_head=loc,
            det_channels=self.det_channels, text_dim=self.text.dim,
            num_locations=num_locations,
        )
        return NetworkConfig(backbone=self.backbone, heads=heads)


class PseudoMaskEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mask: str
    probabilities: Optional[str] = None
    voxels: int = Field(..., ge=0)


class PseudoLabelSet(BaseModel):
    """Pseudo masks for the weak train records, in model (ROI + resized) space"""
    model_config = ConfigDict(extra="forbid")

    teacher_hash: str
    threshold: float
    filter_applied: bool
    provenance_hash: str
    entries: Dict[str, PseudoMaskEntry]
