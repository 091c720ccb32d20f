"""
Text Service
Prompt construction, frozen text-embedding tables and text-feature matrices
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from exceptions import ConfigError, RejectedInputError, SchemaError, StorageError
from logger_config import setup_logger
from models.text_models import PROMPT_TEMPLATE, LabelVocabulary, TextEmbeddingTable

logger = setup_logger(__name__)

PSEUDO_ENCODER_NAME = "pseudo-blake2b-boxmuller"
SHIPPED_TABLE = "embeddings/pseudo_d768.json"


def build_prompt(label: str, vocabulary: Optional[LabelVocabulary] = None) -> str:
    """Fill the report prompt template with a vocabulary label"""
    vocabulary = vocabulary or LabelVocabulary()
    if label not in vocabulary.labels:
        raise RejectedInputError(f'unknown label "{label}"')
    return " ".join(PROMPT_TEMPLATE.format(label=label).split())


def prompt_hash(prompt: str) -> int:
    """64-bit little-endian BLAKE2b digest of the UTF-8 prompt bytes"""
    digest = hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _counter_block(key: int, counter: int) -> Tuple[int, int]:
    """Two little-endian uint64 words from BLAKE2b-512(key || counter)"""
    digest = hashlib.blake2b(key.to_bytes(8, "little") + counter.to_bytes(8, "little")).digest()
    return int.from_bytes(digest[:8], "little"), int.from_bytes(digest[8:16], "little")


def pseudo_encode(prompt: str, dim: int) -> np.ndarray:
    """
    Deterministic stand-in for a frozen text encoder.

    Counter blocks keyed by the prompt hash each give two 53-bit uniforms,
    u1 in (0, 1] and u2 in [0, 1); Box-Muller turns them into a pair of
    standard normals. The first `dim` normals are L2-normalized. Only BLAKE2b
    and IEEE double arithmetic are involved.
    """
    if dim < 2:
        raise RejectedInputError(f"embedding dimension must be >= 2, got {dim}")
    key = prompt_hash(prompt)
    words = np.array([_counter_block(key, c) for c in range((dim + 1) // 2)], dtype=np.uint64)
    u1 = ((words[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    u2 = (words[:, 1] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    normals = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).ravel()[:dim]
    return normals / np.linalg.norm(normals)


def vocabulary_prompts(vocabulary: Optional[LabelVocabulary] = None) -> Dict[str, str]:
    vocabulary = vocabulary or LabelVocabulary()
    return {label: build_prompt(label, vocabulary) for label in vocabulary.labels}


def pseudo_table(dim: int, vocabulary: Optional[LabelVocabulary] = None) -> TextEmbeddingTable:
    rows = {prompt: tuple(float(v) for v in pseudo_encode(prompt, dim))
            for prompt in vocabulary_prompts(vocabulary).values()}
    return TextEmbeddingTable(encoder=PSEUDO_ENCODER_NAME, dim=dim, normalized=True, rows=rows)


def write_embedding_table(table: TextEmbeddingTable, path: str) -> None:
    payload = {
        "encoder": table.encoder,
        "dim": table.dim,
        "normalized": table.normalized,
        "rows": {prompt: list(row) for prompt, row in table.rows.items()},
    }
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    except OSError as e:
        raise StorageError(f"cannot write embedding table {path}: {e}") from e


def load_embedding_table(path: str, expected_dim: Optional[int] = None, normalize: bool = True,
                         vocabulary: Optional[LabelVocabulary] = None) -> TextEmbeddingTable:
    """Load and validate a table file; rows are unit-normalized unless disabled"""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise StorageError(f"cannot read embedding table {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"embedding table {path} is not valid JSON: {e}") from e

    for key in ("encoder", "dim", "normalized", "rows"):
        if key not in payload:
            raise SchemaError(f'embedding table {path} lacks "{key}"')
    missing = [p for p in vocabulary_prompts(vocabulary).values() if p not in payload["rows"]]
    if missing:
        raise SchemaError(f"embedding table {path} misses prompts: {missing}")

    dim = int(payload["dim"])
    if expected_dim is not None and dim != expected_dim:
        raise ConfigError(f"embedding table dim {dim} does not match model text dim {expected_dim}")

    rows = {}
    for prompt, row in payload["rows"].items():
        vector = np.asarray(row, dtype=np.float64)
        if vector.shape != (dim,):
            raise SchemaError(f'row "{prompt}" has shape {vector.shape}, expected ({dim},)')
        if normalize:
            norm = np.linalg.norm(vector)
            if norm == 0:
                raise SchemaError(f'row "{prompt}" is all zeros and cannot be normalized')
            vector = vector / norm
        rows[prompt] = tuple(float(v) for v in vector)

    table = TextEmbeddingTable(encoder=str(payload["encoder"]), dim=dim,
                               normalized=bool(payload["normalized"]) or normalize, rows=rows)
    logger.info(f"📚 Loaded {len(rows)} text embeddings ({table.encoder}, D={dim}) from {path}")
    return table


def assemble_text_matrices(table: TextEmbeddingTable,
                           vocabulary: Optional[LabelVocabulary] = None) -> Tuple[np.ndarray, np.ndarray]:
    """E_det (2 x D) and E_loc ((L+1) x D), rows in vocabulary index order, read-only"""
    vocabulary = vocabulary or LabelVocabulary()
    try:
        e_det = np.array([table.rows[build_prompt(l, vocabulary)] for l in vocabulary.diagnostic_labels])
        e_loc = np.array([table.rows[build_prompt(l, vocabulary)] for l in vocabulary.location_labels])
    except KeyError as e:
        raise SchemaError(f"embedding table lacks prompt {e}") from e
    e_det.setflags(write=False)
    e_loc.setflags(write=False)
    return e_det, e_loc


def resolve_table(table_path: Optional[str], dim: int, normalize: bool = True) -> TextEmbeddingTable:
    """Table from file when configured, otherwise the in-memory pseudo encoder"""
    if table_path:
        return load_embedding_table(table_path, expected_dim=dim, normalize=normalize)
    return pseudo_table(dim)
