"""
Dataset
Preprocessed cases in model space and the torch Dataset used for training.
Only visible masks (full records) or pseudo masks (weak records) are ever
loaded here; hidden weak-record masks are not reachable through this module.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from exceptions import ConfigError, StorageError
from logger_config import setup_logger
from models.phantom_models import ManifestRecord, Supervision
from models.training_models import AugmentSpec, RoiSpec
from services.array_store import ArrayStore
from services.preprocess_service import augment, prepare_case

logger = setup_logger(__name__)


@dataclass
class PreparedCase:
    """One record after ROI -> resize -> normalize; arrays are [z, y, x]"""
    id: str
    volume: np.ndarray
    organ: np.ndarray
    mask: Optional[np.ndarray]
    diagnosis: int
    location: int
    supervision: Supervision


def prepare_records(store: ArrayStore, records: Sequence[ManifestRecord], roi: RoiSpec,
                    with_masks: bool = True) -> List[PreparedCase]:
    """
    Load and preprocess records. A mask is loaded only when the manifest
    exposes one (full supervision) and `with_masks` is set.
    """
    cases = []
    for record in records:
        try:
            volume = store.read(record.volume, purpose="volume")
            organ = store.read(record.organ_mask, purpose="organ")
            mask = store.read(record.mask, purpose="mask") if with_masks and record.mask else None
        except StorageError as e:
            raise StorageError(f"record {record.id}: {e}") from e
        volume, organ, mask = prepare_case(volume, organ, mask, roi)
        cases.append(PreparedCase(
            id=record.id, volume=volume, organ=organ, mask=mask,
            diagnosis=record.diagnosis, location=record.location, supervision=record.supervision,
        ))
    return cases


def attach_pseudo_masks(cases: Sequence[PreparedCase], pseudo: Dict[str, np.ndarray]) -> List[PreparedCase]:
    """Weak cases take their pseudo mask; full cases keep their true mask"""
    attached = []
    for case in cases:
        if case.supervision == Supervision.WEAK:
            if case.id not in pseudo:
                raise ConfigError(f"weak record {case.id} has no pseudo mask")
            mask = pseudo[case.id]
        else:
            mask = case.mask
        attached.append(PreparedCase(case.id, case.volume, case.organ, mask,
                                     case.diagnosis, case.location, case.supervision))
    return attached


class CaseDataset(Dataset):
    """
    Yields dicts of tensors: volume (1, Z, Y, X), mask (Z, Y, X), has_mask,
    diagnosis, location. Augmentation is seeded by (seed, epoch, index) so a
    given epoch always produces the same samples.
    """

    def __init__(self, cases: Sequence[PreparedCase], augment_spec: Optional[AugmentSpec] = None,
                 seed: int = 0, require_masks: bool = False):
        self.cases = list(cases)
        self.augment_spec = augment_spec
        self.seed = seed
        self.epoch = 0
        if require_masks:
            missing = [c.id for c in self.cases if c.mask is None]
            if missing:
                raise ConfigError(f"records without a mask in a segmentation stage: {missing[:5]}")

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.cases)

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        case = self.cases[index]
        volume, mask = case.volume, case.mask
        if self.augment_spec is not None and self.augment_spec.enabled:
            seed = int(np.random.SeedSequence([self.seed, self.epoch, index]).generate_state(1)[0])
            volume, mask = augment(volume, mask, self.augment_spec, seed)
        has_mask = mask is not None
        if mask is None:
            mask = np.zeros(volume.shape, dtype=np.uint8)
        return {
            "volume": torch.from_numpy(np.ascontiguousarray(volume, dtype=np.float32))[None],
            "mask": torch.from_numpy(np.ascontiguousarray(mask, dtype=np.int64)),
            "has_mask": torch.tensor(has_mask),
            "diagnosis": torch.tensor(case.diagnosis, dtype=torch.long),
            "location": torch.tensor(case.location, dtype=torch.long),
            "index": torch.tensor(index, dtype=torch.long),
        }
