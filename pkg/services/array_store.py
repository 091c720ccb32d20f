"""
Array Store
Raw little-endian arrays with JSON sidecars, plus an optional file-access audit
"""

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from exceptions import StorageError
from logger_config import close_file_logger, setup_file_logger, setup_logger

logger = setup_logger(__name__)

# On-disk dtypes per array kind
VOLUME_DTYPE = np.dtype("<f4")
MASK_DTYPE = np.dtype("u1")


class ArrayStore:
    """
    Reads and writes `<name>.raw` + `<name>.json` pairs under a root directory.

    Sidecar schema: {"shape": [Z, Y, X], "dtype": "<f4" | "|u1",
    "spacing_mm": [sx, sy, sz] | null, "order": "zyx"}. Arrays are C-order,
    z-major. When an audit log is configured every read is recorded as a JSON
    line with the path, the purpose of the read and the current stage.
    """

    def __init__(self, root: str, audit_log: Optional[str] = None, stage: str = ""):
        self.root = Path(root)
        self.stage = stage
        self.audit_log = audit_log
        self._audit = setup_file_logger("audit", audit_log) if audit_log else None

    def set_stage(self, stage: str) -> None:
        self.stage = stage

    def close(self) -> None:
        if self._audit is not None:
            close_file_logger(self._audit)
            self._audit = None

    # ------------------------------------------------------------------

    def path(self, rel_path: str) -> Path:
        return self.root / rel_path

    def exists(self, rel_path: str) -> bool:
        return self.path(rel_path).exists()

    def write(self, rel_path: str, array: np.ndarray,
              spacing_mm: Optional[Sequence[float]] = None) -> str:
        """Write an array (float -> <f4, bool/int -> u1); returns rel_path"""
        dtype = MASK_DTYPE if array.dtype.kind in "biu" else VOLUME_DTYPE
        data = np.ascontiguousarray(array, dtype=dtype)
        target = self.path(rel_path)
        sidecar = {
            "shape": list(data.shape),
            "dtype": dtype.str,
            "spacing_mm": list(spacing_mm) if spacing_mm is not None else None,
            "order": "zyx",
        }
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data.tobytes(order="C"))
            target.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True), encoding="utf-8")
        except OSError as e:
            raise StorageError(f"cannot write {target}: {e}") from e
        return rel_path

    def read(self, rel_path: str, purpose: str = "load") -> np.ndarray:
        target = self.path(rel_path)
        if self._audit is not None:
            self._audit.info("read", extra={
                "event": "read", "path": rel_path, "purpose": purpose, "stage": self.stage
            })
        try:
            sidecar = json.loads(target.with_suffix(".json").read_text(encoding="utf-8"))
            data = np.fromfile(target, dtype=np.dtype(sidecar["dtype"]))
        except (OSError, KeyError, ValueError) as e:
            raise StorageError(f"cannot read {target}: {e}") from e
        try:
            return data.reshape(sidecar["shape"])
        except ValueError as e:
            raise StorageError(f"{target} does not match its sidecar shape {sidecar['shape']}") from e

    @staticmethod
    def hidden_mask_path(record_id: str) -> str:
        """Location of a record's tumor mask, whether or not the manifest exposes it"""
        return f"masks/{record_id}.raw"


def read_audit_log(path: str) -> list:
    """Parse an audit log into a list of dicts"""
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            entries.append(json.loads(line))
    return entries
