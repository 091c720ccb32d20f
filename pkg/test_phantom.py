"""
Phantom generator, supervision assignment and array storage tests
"""

import json

import numpy as np
import pytest

from exceptions import RejectedInputError, SchemaError, StorageError
from models.phantom_models import Manifest, PhantomConfig, Split, Supervision
from services.array_store import ArrayStore, read_audit_log
from services.phantom_service import (
    MANIFEST_FILE, allocate, assign_supervision, bin_of_z, ellipsoid_mask, generate_dataset,
    generate_patient, load_manifest, location_bin_ranges
)


@pytest.fixture
def phantom_config() -> PhantomConfig:
    return PhantomConfig(volume_shape=(24, 24, 24), organ_radius_range=(3.0, 4.0),
                         tumor_radius_range=(2.0, 3.0), seed=5)


class TestGeneratePatient:
    def test_no_cancer_has_empty_mask(self, phantom_config):
        patient = generate_patient(phantom_config, cancer=False, location_bin=0, seed=1)
        assert patient.diagnosis == 0
        assert patient.location == 0
        assert patient.mask.sum() == 0
        assert patient.tumor is None
        assert patient.organ_mask.any()

    @pytest.mark.parametrize("location_bin", [1, 2, 3, 4])
    def test_tumor_lies_in_requested_bin(self, phantom_config, location_bin):
        patient = generate_patient(phantom_config, cancer=True, location_bin=location_bin, seed=11)
        assert patient.diagnosis == 1
        assert patient.location == location_bin
        assert patient.mask.any()
        ranges = location_bin_ranges(patient.organ_mask)
        cz = patient.tumor.center[2]
        assert bin_of_z(cz, ranges) == location_bin
        # every tumor slice stays in the bin
        slices = np.flatnonzero(patient.mask.any(axis=(1, 2)))
        lo, hi = ranges[location_bin - 1]
        assert slices.min() >= lo and slices.max() < hi

    def test_tumor_mask_is_the_ellipsoid(self, phantom_config):
        patient = generate_patient(phantom_config, cancer=True, location_bin=2, seed=4)
        center, radii = patient.tumor.center, patient.tumor.radii
        depth, height, width = patient.mask.shape
        count = 0
        for z in range(depth):
            for y in range(height):
                for x in range(width):
                    inside = sum(((p - c) / r) ** 2 for p, c, r in zip((x, y, z), center, radii)) <= 1.0
                    count += inside
        assert int(patient.mask.sum()) == count

    def test_tumor_is_inside_organ_mask(self, phantom_config):
        patient = generate_patient(phantom_config, cancer=True, location_bin=3, seed=9)
        assert not np.any(patient.mask.astype(bool) & ~patient.organ_mask.astype(bool))

    def test_deterministic_for_seed(self, phantom_config):
        a = generate_patient(phantom_config, cancer=True, location_bin=1, seed=21)
        b = generate_patient(phantom_config, cancer=True, location_bin=1, seed=21)
        np.testing.assert_array_equal(a.volume, b.volume)
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_arrays_are_z_major(self, phantom_config):
        config = phantom_config.model_copy(update={"volume_shape": (24, 20, 16)})
        patient = generate_patient(config, cancer=False, location_bin=0, seed=1)
        assert patient.volume.shape == (16, 20, 24)
        assert patient.volume.dtype == np.float32

    def test_rejects_inconsistent_labels(self, phantom_config):
        with pytest.raises(RejectedInputError):
            generate_patient(phantom_config, cancer=True, location_bin=0, seed=1)
        with pytest.raises(RejectedInputError):
            generate_patient(phantom_config, cancer=False, location_bin=2, seed=1)


class TestLocationBins:
    def test_bins_partition_organ_extent(self):
        organ = np.zeros((20, 4, 4), dtype=np.uint8)
        organ[2:18, 1:3, 1:3] = 1
        ranges = location_bin_ranges(organ)
        assert ranges[0][0] == 2.0
        assert ranges[-1][1] == 18.0
        for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
            assert hi == lo
        assert bin_of_z(1.0, ranges) == 0
        assert bin_of_z(17.5, ranges) == 4

    def test_empty_organ_rejected(self):
        with pytest.raises(RejectedInputError):
            location_bin_ranges(np.zeros((4, 4, 4)))


class TestGenerateDataset:
    def test_split_sizes_and_prevalence(self, phantom_config, tmp_path):
        manifest = generate_dataset(phantom_config, 100, (0.64, 0.16, 0.20), 7, str(tmp_path))
        sizes = [len(manifest.split(s)) for s in (Split.TRAIN, Split.VAL, Split.TEST)]
        assert sizes == [64, 16, 20]
        n_cancer = sum(r.diagnosis for r in manifest.records)
        assert n_cancer == 59
        assert all(r.supervision == Supervision.FULL for r in manifest.records)
        assert (tmp_path / MANIFEST_FILE).exists()

    def test_too_few_records_rejected(self, phantom_config, tmp_path):
        with pytest.raises(RejectedInputError):
            generate_dataset(phantom_config, 10, (0.64, 0.16, 0.20), 7, str(tmp_path))

    def test_bad_split_ratios_rejected(self, phantom_config, tmp_path):
        with pytest.raises(RejectedInputError):
            generate_dataset(phantom_config, 40, (0.5, 0.5, 0.5), 7, str(tmp_path))

    def test_manifest_bytes_reproducible(self, phantom_config, tmp_path):
        generate_dataset(phantom_config, 20, (0.6, 0.2, 0.2), 3, str(tmp_path / "a"))
        generate_dataset(phantom_config, 20, (0.6, 0.2, 0.2), 3, str(tmp_path / "b"))
        assert (tmp_path / "a" / MANIFEST_FILE).read_bytes() == (tmp_path / "b" / MANIFEST_FILE).read_bytes()
        assert (tmp_path / "a" / "volumes" / "P0003.raw").read_bytes() == \
            (tmp_path / "b" / "volumes" / "P0003.raw").read_bytes()

    def test_manifest_round_trip(self, tiny_dataset_dir):
        manifest = load_manifest(tiny_dataset_dir)
        assert len(manifest.records) == 24
        assert len({r.id for r in manifest.records}) == 24


class TestAssignSupervision:
    def test_fraction_and_stratification(self, tiny_dataset_dir):
        manifest = load_manifest(tiny_dataset_dir)
        assigned = assign_supervision(manifest, 0.5, seed=2)
        train = assigned.split(Split.TRAIN)
        full = assigned.full_train()
        assert len(full) == int(np.floor(0.5 * len(train) + 0.5))
        n_pos = sum(r.diagnosis for r in train)
        full_pos = sum(r.diagnosis for r in full)
        assert abs(full_pos - 0.5 * n_pos) <= 1

    def test_weak_records_lose_mask_path(self, tiny_dataset_dir):
        assigned = assign_supervision(load_manifest(tiny_dataset_dir), 0.3, seed=2)
        assert assigned.weak_train()
        assert all(r.mask is None for r in assigned.weak_train())
        assert all(r.mask is not None for r in assigned.split(Split.TEST))

    def test_same_seed_same_assignment(self, tiny_dataset_dir):
        manifest = load_manifest(tiny_dataset_dir)
        a = assign_supervision(manifest, 0.3, seed=8)
        b = assign_supervision(manifest, 0.3, seed=8)
        assert [r.id for r in a.full_train()] == [r.id for r in b.full_train()]

    def test_full_fraction_one_keeps_everything(self, tiny_dataset_dir):
        assigned = assign_supervision(load_manifest(tiny_dataset_dir), 1.0, seed=2)
        assert not assigned.weak_train()

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_fraction_out_of_range(self, tiny_dataset_dir, fraction):
        with pytest.raises(RejectedInputError):
            assign_supervision(load_manifest(tiny_dataset_dir), fraction, seed=2)


class TestAllocate:
    def test_largest_remainder(self):
        assert allocate(100, [0.64, 0.16, 0.20]) == [64, 16, 20]
        assert sum(allocate(7, [1, 1, 1])) == 7

    def test_zero_total(self):
        assert allocate(0, [1, 2]) == [0, 0]


class TestArrayStore:
    def test_sidecar_describes_array(self, tmp_path):
        store = ArrayStore(str(tmp_path))
        data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        store.write("volumes/x.raw", data, (0.7, 0.7, 5.0))
        sidecar = json.loads((tmp_path / "volumes" / "x.json").read_text())
        assert sidecar == {"shape": [2, 3, 4], "dtype": "<f4", "spacing_mm": [0.7, 0.7, 5.0], "order": "zyx"}
        assert (tmp_path / "volumes" / "x.raw").stat().st_size == 24 * 4
        np.testing.assert_array_equal(store.read("volumes/x.raw"), data)

    def test_masks_stored_as_bytes(self, tmp_path):
        store = ArrayStore(str(tmp_path))
        store.write("m.raw", np.ones((2, 2, 2), dtype=bool))
        assert store.read("m.raw").dtype == np.uint8

    def test_truncated_file_is_storage_error(self, tmp_path):
        store = ArrayStore(str(tmp_path))
        store.write("v.raw", np.zeros((2, 2, 2), dtype=np.float32))
        (tmp_path / "v.raw").write_bytes(b"\x00" * 5)
        with pytest.raises(StorageError):
            store.read("v.raw")

    def test_missing_file_is_storage_error(self, tmp_path):
        with pytest.raises(StorageError):
            ArrayStore(str(tmp_path)).read("nothing.raw")

    def test_audit_records_reads(self, tmp_path):
        log = tmp_path / "audit.jsonl"
        store = ArrayStore(str(tmp_path), audit_log=str(log), stage="teacher")
        store.write("a.raw", np.zeros((2, 2, 2), dtype=np.float32))
        store.read("a.raw", purpose="train")
        store.close()
        entries = read_audit_log(str(log))
        assert len(entries) == 1
        assert entries[0]["path"] == "a.raw"
        assert entries[0]["purpose"] == "train"
        assert entries[0]["stage"] == "teacher"


class TestManifestSchema:
    def test_missing_header_is_schema_error(self, tmp_path):
        path = tmp_path / MANIFEST_FILE
        path.write_text('{"id": "P0000"}\n')
        with pytest.raises(SchemaError):
            Manifest.read(path)

    def test_missing_manifest_is_storage_error(self, tmp_path):
        with pytest.raises(StorageError):
            load_manifest(str(tmp_path))

    def test_ellipsoid_center_voxel(self):
        mask = ellipsoid_mask((5, 5, 5), (2.0, 2.0, 2.0), (0.5, 0.5, 0.5))
        assert mask.sum() == 1
        assert mask[2, 2, 2]
