"""
Checkpoint Service
Named float32 parameter arrays in `<name>.npz` with a `<name>.json` metadata sidecar
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError

from exceptions import ConfigError, SchemaError, StorageError
from logger_config import setup_logger
from models.training_models import NetworkConfig, TrainMode
from networks.wssl_net import WSSLNet

logger = setup_logger(__name__)

PARAM_DTYPE = np.dtype("<f4")


class CheckpointMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int
    metric_name: str
    metric: Optional[float] = None
    mode: TrainMode
    config_hash: str
    network: NetworkConfig
    state_hash: str


def state_arrays(net: torch.nn.Module) -> Dict[str, np.ndarray]:
    """Every parameter and buffer as little-endian float32"""
    return {name: tensor.detach().cpu().numpy().astype(PARAM_DTYPE)
            for name, tensor in net.state_dict().items()}


def state_hash(arrays: Dict[str, np.ndarray]) -> str:
    """SHA-256 over (name, shape, bytes) in name order"""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name], dtype=PARAM_DTYPE)
        digest.update(name.encode("utf-8"))
        digest.update(json.dumps(list(array.shape)).encode("utf-8"))
        digest.update(array.tobytes())
    return digest.hexdigest()


def save_checkpoint(net: WSSLNet, path_stem: str, epoch: int, metric_name: str,
                    metric: Optional[float], mode: TrainMode, config_hash: str) -> CheckpointMeta:
    arrays = state_arrays(net)
    meta = CheckpointMeta(
        epoch=epoch, metric_name=metric_name, metric=metric, mode=mode,
        config_hash=config_hash, network=net.config, state_hash=state_hash(arrays),
    )
    stem = Path(path_stem)
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        with open(stem.with_suffix(".npz"), "wb") as handle:
            np.savez(handle, **arrays)
        stem.with_suffix(".json").write_text(
            json.dumps(meta.model_dump(mode="json"), sort_keys=True, indent=2), encoding="utf-8"
        )
    except OSError as e:
        raise StorageError(f"cannot write checkpoint {stem}: {e}") from e
    return meta


def read_checkpoint_meta(path_stem: str) -> CheckpointMeta:
    sidecar = Path(path_stem).with_suffix(".json")
    if not sidecar.exists():
        raise ConfigError(f"checkpoint {path_stem} not found")
    try:
        return CheckpointMeta(**json.loads(sidecar.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise SchemaError(f"checkpoint metadata {sidecar} is malformed: {e}") from e


def load_checkpoint(path_stem: str) -> Tuple[WSSLNet, CheckpointMeta]:
    """Rebuild the network from the sidecar and load its parameters; hash is verified"""
    meta = read_checkpoint_meta(path_stem)
    archive = Path(path_stem).with_suffix(".npz")
    if not archive.exists():
        raise ConfigError(f"checkpoint {archive} not found")
    try:
        with np.load(archive) as data:
            arrays = {name: data[name] for name in data.files}
    except (OSError, ValueError) as e:
        raise StorageError(f"cannot read checkpoint {archive}: {e}") from e
    if state_hash(arrays) != meta.state_hash:
        raise SchemaError(f"checkpoint {archive} does not match its state hash")

    net = WSSLNet(meta.network)
    reference = net.state_dict()
    if set(arrays) != set(reference):
        raise SchemaError(f"checkpoint {archive} parameters do not match the network layout")
    net.load_state_dict({name: torch.from_numpy(arrays[name]).to(reference[name].dtype)
                         for name in reference})
    net.eval()
    return net, meta


def checkpoint_summary(meta: CheckpointMeta) -> Dict[str, Any]:
    return {"epoch": meta.epoch, meta.metric_name: meta.metric, "state_hash": meta.state_hash[:16]}
