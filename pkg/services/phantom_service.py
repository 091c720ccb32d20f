"""
Phantom Service
Synthetic tube-organ volumes with optional tumors, weak labels and manifests
"""

import json
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import NUM_LOCATION_BINS, STAGE_I_CONTRAST_FACTOR
from exceptions import RejectedInputError, StorageError
from logger_config import setup_logger
from models.phantom_models import (
    DatasetInfo, Manifest, ManifestRecord, PatientRecord, PhantomConfig,
    Split, Supervision, TumorGeometry, TumorStage
)
from services.array_store import ArrayStore

logger = setup_logger(__name__)

ORGAN_INTENSITY = 1.0
ORGAN_MARGIN_FRACTION = 0.08  # empty slabs above and below the organ
CENTERLINE_WOBBLE = 1.0  # voxels
STOMACH_CAP_WIDENING = 1.5

MANIFEST_FILE = "manifest.jsonl"
DATASET_INFO_FILE = "dataset.json"


# ==============================================================================
# LOCATION BINS
# ==============================================================================

def location_bin_ranges(organ_mask: np.ndarray,
                        num_bins: int = NUM_LOCATION_BINS) -> List[Tuple[float, float]]:
    """
    Half-open z-ranges [lo, hi) of the location bins, bin 1 first.

    The organ's z-extent (first to last slice containing organ voxels) is cut
    into `num_bins` equal contiguous ranges; bin `num_bins` is the bottom.
    """
    slices = np.flatnonzero(organ_mask.reshape(organ_mask.shape[0], -1).any(axis=1))
    if slices.size == 0:
        raise RejectedInputError("organ mask is empty; location bins are undefined")
    z0, extent = float(slices[0]), float(slices[-1] - slices[0] + 1)
    edges = [z0 + extent * k / num_bins for k in range(num_bins + 1)]
    return [(edges[k], edges[k + 1]) for k in range(num_bins)]


def bin_of_z(z: float, ranges: Sequence[Tuple[float, float]]) -> int:
    """1-based bin containing z, 0 if outside the organ extent"""
    for index, (lo, hi) in enumerate(ranges, start=1):
        if lo <= z < hi:
            return index
    return 0


# ==============================================================================
# SINGLE PATIENT
# ==============================================================================

def _organ_geometry(config: PhantomConfig, rng: np.random.Generator):
    depth, height, width = config.array_shape
    z_start = int(round(ORGAN_MARGIN_FRACTION * depth))
    z_end = depth - 1 - z_start
    radius = rng.uniform(*config.organ_radius_range)
    phase_x, phase_y = rng.uniform(0, 2 * math.pi, size=2)

    z = np.arange(depth, dtype=np.float64)
    center_x = (width - 1) / 2 + CENTERLINE_WOBBLE * np.sin(2 * math.pi * z / depth + phase_x)
    center_y = (height - 1) / 2 + CENTERLINE_WOBBLE * np.sin(2 * math.pi * z / depth + phase_y)

    # Widened stomach cap over the lower half of the bottom bin
    cap_limit = min(width, height) / 2 - 2
    cap_radius = min(radius * STOMACH_CAP_WIDENING, cap_limit)
    cap_start = z_start + (z_end - z_start + 1) * (1 - 0.5 / NUM_LOCATION_BINS)
    ramp = np.clip((z - cap_start) / max(z_end - cap_start, 1.0), 0.0, 1.0)
    radii = radius + (max(cap_radius, radius) - radius) * ramp

    return z_start, z_end, center_x, center_y, radii, radius


def _render_tube(shape, z_start, z_end, center_x, center_y, radii) -> np.ndarray:
    depth, height, width = shape
    zz, yy, xx = np.meshgrid(np.arange(depth), np.arange(height), np.arange(width), indexing="ij")
    inside = (xx - center_x[:, None, None]) ** 2 + (yy - center_y[:, None, None]) ** 2 \
        <= radii[:, None, None] ** 2
    inside &= (zz >= z_start) & (zz <= z_end)
    return inside


def ellipsoid_mask(shape: Tuple[int, int, int], center: Tuple[float, float, float],
                   radii: Tuple[float, float, float]) -> np.ndarray:
    """Voxels [z, y, x] inside the ellipsoid with (x, y, z) center and radii"""
    depth, height, width = shape
    zz, yy, xx = np.meshgrid(np.arange(depth), np.arange(height), np.arange(width), indexing="ij")
    cx, cy, cz = center
    rx, ry, rz = radii
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 + ((zz - cz) / rz) ** 2 <= 1.0


def generate_patient(config: PhantomConfig, cancer: bool, location_bin: int, seed: int,
                     record_id: str = "P0000") -> PatientRecord:
    """Render one patient; deterministic given (config, cancer, location_bin, seed)"""
    if cancer and not 1 <= location_bin <= NUM_LOCATION_BINS:
        raise RejectedInputError(f"location_bin must be in [1..{NUM_LOCATION_BINS}] for cancer, got {location_bin}")
    if not cancer and location_bin != 0:
        raise RejectedInputError(f"location_bin must be 0 without cancer, got {location_bin}")

    rng = np.random.default_rng(seed)
    shape = config.array_shape
    z_start, z_end, center_x, center_y, radii, organ_radius = _organ_geometry(config, rng)
    organ = _render_tube(shape, z_start, z_end, center_x, center_y, radii)

    tumor = np.zeros(shape, dtype=bool)
    geometry: Optional[TumorGeometry] = None
    contrast = 0.0
    if cancer:
        stage = TumorStage.STAGE_I if rng.random() < 0.5 else TumorStage.STAGE_II
        lo, hi = config.tumor_radius_range
        mid = (lo + hi) / 2
        tier = (lo, mid) if stage == TumorStage.STAGE_I else (mid, hi)
        rx, ry, rz = rng.uniform(*tier, size=3)

        band_lo, band_hi = location_bin_ranges(organ)[location_bin - 1]
        first, last = math.ceil(band_lo), math.ceil(band_hi) - 1
        cz = (first + last) / 2
        rz = min(rz, (last - first) / 2 + 0.5)

        zc = int(round(cz))
        angle = rng.uniform(0, 2 * math.pi)
        offset = rng.uniform(0, 0.5 * organ_radius)
        cx = float(round(center_x[zc] + offset * math.cos(angle)))
        cy = float(round(center_y[zc] + offset * math.sin(angle)))

        geometry = TumorGeometry(center=(cx, cy, cz), radii=(rx, ry, rz), stage=stage)
        tumor = ellipsoid_mask(shape, geometry.center, geometry.radii)
        contrast = config.tumor_contrast * (STAGE_I_CONTRAST_FACTOR if stage == TumorStage.STAGE_I else 1.0)
        # Tumors grow in the organ wall
        organ |= tumor

    volume = ORGAN_INTENSITY * organ.astype(np.float64) + contrast * tumor
    volume += rng.normal(0.0, config.noise_sigma, size=shape)

    return PatientRecord(
        id=record_id,
        volume=volume.astype(np.float32),
        mask=tumor.astype(np.uint8),
        organ_mask=organ.astype(np.uint8),
        diagnosis=int(cancer),
        location=location_bin if cancer else 0,
        supervision=Supervision.FULL,
        tumor=geometry,
    )


# ==============================================================================
# DATASETS
# ==============================================================================

def allocate(total: int, weights: Sequence[float]) -> List[int]:
    """Largest-remainder split of `total` into integer parts proportional to weights"""
    weights = np.asarray(weights, dtype=np.float64)
    if total == 0 or weights.sum() == 0:
        return [0] * len(weights)
    exact = total * weights / weights.sum()
    parts = np.floor(exact + 1e-9).astype(int)
    remainder = total - int(parts.sum())
    order = np.argsort(-(exact - parts), kind="stable")
    for index in order[:remainder]:
        parts[index] += 1
    return [int(p) for p in parts]


def _record_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_dataset(config: PhantomConfig, n: int, split_ratios: Tuple[float, float, float],
                     seed: int, out_dir: str) -> Manifest:
    """
    Render `n` patients stratified by diagnosis into train/val/test and write
    volumes, organ masks, tumor masks and the manifest under `out_dir`.
    """
    if n < 20:
        raise RejectedInputError(f"n must be at least 20, got {n}")
    if len(split_ratios) != 3 or abs(sum(split_ratios) - 1.0) > 1e-6 or min(split_ratios) < 0:
        raise RejectedInputError(f"split ratios must be three non-negative numbers summing to 1, got {split_ratios}")

    try:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create dataset directory {out_dir}: {e}") from e

    rng = np.random.default_rng(seed)
    n_cancer = int(math.floor(n * config.cancer_prevalence + 0.5))
    sizes = allocate(n, split_ratios)
    cancers = [min(c, s) for c, s in zip(allocate(n_cancer, split_ratios), sizes)]

    slots: List[Tuple[Split, int]] = []
    for split, size, n_pos in zip((Split.TRAIN, Split.VAL, Split.TEST), sizes, cancers):
        slots += [(split, 1)] * n_pos + [(split, 0)] * (size - n_pos)
    slots = [slots[i] for i in rng.permutation(len(slots))]

    n_pos_total = sum(d for _, d in slots)
    bins = [(k % NUM_LOCATION_BINS) + 1 for k in range(n_pos_total)]
    bins = [bins[i] for i in rng.permutation(len(bins))]

    store = ArrayStore(out_dir)
    records: List[ManifestRecord] = []
    next_bin = iter(bins)
    logger.info(f"🧪 Generating {n} phantoms ({n_cancer} cancer) into {out_dir}")
    for index, (split, diagnosis) in enumerate(tqdm(slots, desc="phantoms", disable=None)):
        record_id = f"P{index:04d}"
        location = next(next_bin) if diagnosis else 0
        patient = generate_patient(config, bool(diagnosis), location, _record_seed(seed, index), record_id)
        volume_path = store.write(f"volumes/{record_id}.raw", patient.volume, config.voxel_spacing)
        organ_path = store.write(f"organs/{record_id}.raw", patient.organ_mask, config.voxel_spacing)
        mask_path = store.write(ArrayStore.hidden_mask_path(record_id), patient.mask, config.voxel_spacing)
        records.append(ManifestRecord(
            id=record_id,
            volume=volume_path,
            organ_mask=organ_path,
            mask=mask_path,
            diagnosis=diagnosis,
            location=location,
            stage=patient.tumor.stage if patient.tumor else None,
            supervision=Supervision.FULL,
            split=split,
        ))

    manifest = Manifest(records=records, split_ratios=tuple(split_ratios), full_fraction=1.0, seed=seed)
    info = DatasetInfo(phantom=config, n=n, split_ratios=tuple(split_ratios), seed=seed, full_fraction=1.0)
    try:
        manifest.write(Path(out_dir) / MANIFEST_FILE)
        (Path(out_dir) / DATASET_INFO_FILE).write_text(
            json.dumps(info.model_dump(mode="json"), sort_keys=True, indent=2), encoding="utf-8"
        )
    except OSError as e:
        raise StorageError(f"cannot write manifest into {out_dir}: {e}") from e

    logger.info(f"✅ Dataset ready: train/val/test = {sizes[0]}/{sizes[1]}/{sizes[2]}")
    return manifest


def assign_supervision(manifest: Manifest, full_fraction: float, seed: int) -> Manifest:
    """
    Mark a stratified random `full_fraction` of the train split as fully
    supervised; the rest become weak and lose their visible mask path.
    Validation and test records keep their masks.
    """
    if not 0 < full_fraction <= 1:
        raise RejectedInputError(f"full_fraction must be in (0, 1], got {full_fraction}")

    train = sorted(manifest.split(Split.TRAIN), key=lambda r: r.id)
    n_full = max(1, int(math.floor(full_fraction * len(train) + 0.5))) if train else 0
    positives = [r for r in train if r.diagnosis == 1]
    negatives = [r for r in train if r.diagnosis == 0]
    n_full_pos, n_full_neg = allocate(n_full, [len(positives), len(negatives)])

    rng = np.random.default_rng(seed)
    full_ids = set()
    for group, count in ((positives, n_full_pos), (negatives, n_full_neg)):
        chosen = rng.permutation(len(group))[:count]
        full_ids.update(group[i].id for i in chosen)

    records = []
    for record in manifest.records:
        if record.split != Split.TRAIN or record.id in full_ids:
            update = {"supervision": Supervision.FULL, "mask": ArrayStore.hidden_mask_path(record.id)}
        else:
            update = {"supervision": Supervision.WEAK, "mask": None}
        records.append(record.model_copy(update=update))

    logger.info(f"📋 Supervision: {len(full_ids)} full / {len(train) - len(full_ids)} weak train records")
    return Manifest(records=records, split_ratios=manifest.split_ratios,
                    full_fraction=full_fraction, seed=manifest.seed)


def load_manifest(dataset_dir: str) -> Manifest:
    path = Path(dataset_dir) / MANIFEST_FILE
    if not path.exists():
        raise StorageError(f"no manifest at {path}")
    return Manifest.read(path)
