"""
Pseudo Labels
Teacher-predicted tumor masks for weak records, the optional location-matched
component filter, and provenance bookkeeping
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy import ndimage

from config import NUM_LOCATION_BINS, PSEUDO_THRESHOLD
from exceptions import ConfigError, RejectedInputError, SchemaError, StorageError
from logger_config import setup_logger
from models.phantom_models import ManifestRecord
from models.training_models import PseudoLabelSet, PseudoMaskEntry, RoiSpec
from services.array_store import ArrayStore
from services.checkpoint_service import load_checkpoint
from services.dataset import prepare_records
from services.phantom_service import location_bin_ranges
from services.trainer import predict_cases

logger = setup_logger(__name__)

PROVENANCE_FILE = "provenance.json"

# 26-connectivity
CONNECTIVITY = np.ones((3, 3, 3), dtype=bool)


def provenance_hash(teacher_hash: str, threshold: float, filter_applied: bool) -> str:
    payload = json.dumps({"teacher": teacher_hash, "threshold": repr(float(threshold)),
                          "filter": bool(filter_applied)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def filter_pseudo_by_location(pseudo_mask: np.ndarray, location_label: int,
                              organ_mask: np.ndarray) -> np.ndarray:
    """
    Keep only connected components whose centroid z lies in the reported
    location bin; bins come from the organ's z-extent. Label 0 empties the mask.
    """
    if not 0 <= location_label <= NUM_LOCATION_BINS:
        raise RejectedInputError(f"location label must be in [0..{NUM_LOCATION_BINS}], got {location_label}")
    if location_label == 0:
        return np.zeros_like(pseudo_mask)

    foreground = pseudo_mask > 0
    labeled, count = ndimage.label(foreground, structure=CONNECTIVITY)
    if count == 0:
        return pseudo_mask.copy()

    lo, hi = location_bin_ranges(organ_mask)[location_label - 1]
    centroids = ndimage.center_of_mass(foreground, labeled, range(1, count + 1))
    keep = [index for index, centroid in enumerate(centroids, start=1) if lo <= centroid[0] < hi]
    return np.isin(labeled, keep).astype(pseudo_mask.dtype)


def generate_pseudo_masks(teacher_ckpt: str, weak_records: Sequence[ManifestRecord], store: ArrayStore,
                          roi: RoiSpec, out_dir: str, threshold: float = PSEUDO_THRESHOLD,
                          filter_by_location: bool = False, save_probabilities: bool = False,
                          batch_size: int = 4) -> PseudoLabelSet:
    """
    Binarize the teacher's foreground probability (> threshold) for every
    weak record and write masks in model space under `out_dir`.
    """
    if not 0 <= threshold <= 1:
        raise RejectedInputError(f"threshold must be in [0, 1], got {threshold}")
    net, meta = load_checkpoint(teacher_ckpt)
    if net.seg_head is None:
        raise ConfigError(f"checkpoint {teacher_ckpt} has no segmentation head")

    cases = prepare_records(store, weak_records, roi, with_masks=False)
    preds = predict_cases(net, cases, batch_size)
    out = ArrayStore(out_dir)
    entries: Dict[str, PseudoMaskEntry] = {}
    for case, prob in zip(cases, preds.seg_prob or []):
        mask = (prob > threshold).astype(np.uint8)
        if filter_by_location:
            mask = filter_pseudo_by_location(mask, case.location, case.organ)
        probabilities = out.write(f"{case.id}_prob.raw", prob.astype(np.float32)) if save_probabilities else None
        entries[case.id] = PseudoMaskEntry(mask=out.write(f"{case.id}.raw", mask),
                                           probabilities=probabilities, voxels=int(mask.sum()))

    pseudo = PseudoLabelSet(
        teacher_hash=meta.state_hash, threshold=threshold, filter_applied=filter_by_location,
        provenance_hash=provenance_hash(meta.state_hash, threshold, filter_by_location),
        entries=entries,
    )
    try:
        (Path(out_dir) / PROVENANCE_FILE).write_text(
            json.dumps(pseudo.model_dump(mode="json"), sort_keys=True, indent=2), encoding="utf-8"
        )
    except OSError as e:
        raise StorageError(f"cannot write pseudo-mask provenance into {out_dir}: {e}") from e

    empty = sum(1 for e in entries.values() if e.voxels == 0)
    logger.info(f"🏷️ {len(entries)} pseudo masks ({empty} empty), threshold {threshold}, "
                f"filter {'on' if filter_by_location else 'off'}")
    return pseudo


def load_pseudo_masks(pseudo_dir: str, expected_ids: Sequence[str]) -> Tuple[PseudoLabelSet, Dict[str, np.ndarray]]:
    """Read provenance and masks; the set must cover exactly `expected_ids`"""
    path = Path(pseudo_dir) / PROVENANCE_FILE
    if not path.exists():
        raise ConfigError(f"no pseudo-mask provenance at {path}")
    try:
        pseudo = PseudoLabelSet(**json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValueError) as e:
        raise SchemaError(f"{path} is malformed: {e}") from e

    missing = sorted(set(expected_ids) - set(pseudo.entries))
    extra = sorted(set(pseudo.entries) - set(expected_ids))
    if missing or extra:
        raise ConfigError(f"pseudo masks do not match the weak records: missing {missing[:5]}, extra {extra[:5]}")

    store = ArrayStore(pseudo_dir)
    masks = {record_id: store.read(entry.mask, purpose="pseudo") for record_id, entry in pseudo.entries.items()}
    return pseudo, masks


def pseudo_set_hash(masks: Dict[str, np.ndarray]) -> str:
    """Content hash of a pseudo-mask set, in id order"""
    digest = hashlib.sha256()
    for record_id in sorted(masks):
        digest.update(record_id.encode("utf-8"))
        digest.update(np.ascontiguousarray(masks[record_id], dtype=np.uint8).tobytes())
    return digest.hexdigest()
