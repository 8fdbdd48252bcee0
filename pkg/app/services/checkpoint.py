"""Versioned checkpoint files: JSON header plus little-endian raw tensor payloads.

Layout::

    MAGIC (8 bytes) | header length (uint64 LE) | header JSON (UTF-8) | payloads
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from app.models.bundle import ModelBundle
from app.models.schemas import ModelConfig
from app.utils.exceptions import CheckpointError
from app.utils.logger import log

MAGIC = b"VALIDCK\x00"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.uint8: "|u1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


class TensorEntry(BaseModel):
    """Location of one tensor inside the payload section."""
    name: str
    shape: List[int]
    dtype: str
    offset: int
    nbytes: int


class CheckpointHeader(BaseModel):
    """Everything but the raw tensor bytes."""
    format_version: int
    global_step: int
    stage: int
    config: Dict[str, Any]
    optimizer: Dict[str, Any]
    rng: Dict[str, Any]
    tensors: List[TensorEntry]


@dataclass
class Checkpoint:
    """In-memory checkpoint.

    ``parameters`` holds model tensors by dotted name; ``optimizer_tensors``
    holds per-parameter optimizer moments keyed ``<param>/<slot>``.
    """
    parameters: Dict[str, torch.Tensor]
    config: Dict[str, Any]
    global_step: int = 0
    stage: int = 1
    optimizer: Dict[str, Any] = field(default_factory=dict)
    optimizer_tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    rng: Dict[str, Any] = field(default_factory=dict)
    rng_tensors: Dict[str, torch.Tensor] = field(default_factory=dict)
    checkpoint_id: Optional[str] = None


def _tensor_bytes(tensor: torch.Tensor) -> Tuple[str, bytes]:
    tensor = tensor.detach().cpu().contiguous()
    if tensor.dtype not in _DTYPES:
        raise CheckpointError(None, f"unsupported tensor dtype {tensor.dtype}")
    code = _DTYPES[tensor.dtype]
    return code, tensor.numpy().astype(np.dtype(code), copy=False).tobytes()


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> str:
    """Write ``checkpoint`` and return its content hash."""
    path = Path(path)
    groups = [
        ("param", checkpoint.parameters),
        ("optim", checkpoint.optimizer_tensors),
        ("rng", checkpoint.rng_tensors),
    ]
    entries: List[TensorEntry] = []
    payloads: List[bytes] = []
    offset = 0
    for prefix, tensors in groups:
        for name in sorted(tensors):
            code, raw = _tensor_bytes(tensors[name])
            entries.append(TensorEntry(
                name=f"{prefix}:{name}",
                shape=list(tensors[name].shape),
                dtype=code,
                offset=offset,
                nbytes=len(raw),
            ))
            payloads.append(raw)
            offset += len(raw)

    header = CheckpointHeader(
        format_version=FORMAT_VERSION,
        global_step=checkpoint.global_step,
        stage=checkpoint.stage,
        config=checkpoint.config,
        optimizer=checkpoint.optimizer,
        rng=checkpoint.rng,
        tensors=entries,
    )
    header_bytes = json.dumps(header.model_dump(), sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(payloads)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(blob)
        tmp.replace(path)
    except OSError as e:
        raise CheckpointError(path, f"write failed: {e}") from e
    digest = hashlib.sha256(blob).hexdigest()[:16]
    log.info(f"Checkpoint saved to {path} (step {checkpoint.global_step}, id {digest})")
    return digest


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(path, "file does not exist")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(path, "not a checkpoint file")
    (header_len,) = struct.unpack("<Q", blob[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = CheckpointHeader.model_validate_json(blob[start:start + header_len])
    except ValidationError as e:
        raise CheckpointError(path, f"malformed header: {e}") from e
    if header.format_version != FORMAT_VERSION:
        raise CheckpointError(path, f"unsupported format version {header.format_version}")

    payload = memoryview(blob)[start + header_len:]
    groups: Dict[str, Dict[str, torch.Tensor]] = {"param": {}, "optim": {}, "rng": {}}
    for entry in header.tensors:
        prefix, name = entry.name.split(":", 1)
        if entry.dtype not in _TORCH_DTYPES or prefix not in groups:
            raise CheckpointError(path, f"unknown tensor entry {entry.name} ({entry.dtype})")
        if entry.offset + entry.nbytes > len(payload):
            raise CheckpointError(path, f"truncated payload for {entry.name}")
        array = np.frombuffer(payload[entry.offset:entry.offset + entry.nbytes], dtype=np.dtype(entry.dtype))
        groups[prefix][name] = torch.from_numpy(array.astype(array.dtype.newbyteorder("="), copy=True)).reshape(entry.shape)

    return Checkpoint(
        parameters=groups["param"],
        config=header.config,
        global_step=header.global_step,
        stage=header.stage,
        optimizer=header.optimizer,
        optimizer_tensors=groups["optim"],
        rng=header.rng,
        rng_tensors=groups["rng"],
        checkpoint_id=hashlib.sha256(blob).hexdigest()[:16],
    )


def bundle_config(checkpoint: Checkpoint) -> ModelConfig:
    """ModelConfig stored in a checkpoint."""
    try:
        return ModelConfig.model_validate(checkpoint.config["model"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(None, f"checkpoint carries no valid model config: {e}") from e


def load_bundle(path: Union[str, Path], fusion: Optional[str] = None) -> Tuple[ModelBundle, Checkpoint]:
    """Rebuild a ModelBundle from a checkpoint, bit-exact.

    Args:
        path: Checkpoint file.
        fusion: Optional fusion-mode override recorded in the returned config.

    Returns:
        (bundle in eval mode, checkpoint)
    """
    checkpoint = load_checkpoint(path)
    config = bundle_config(checkpoint)
    if fusion is not None and fusion != config.fusion:
        if fusion == "global" or config.fusion == "global":
            raise CheckpointError(path, f"cannot switch fusion from '{config.fusion}' to '{fusion}'")
        config = config.model_copy(update={"fusion": fusion})
    bundle = ModelBundle(config)
    missing, unexpected = bundle.load_state_dict(checkpoint.parameters, strict=False)
    if missing or unexpected:
        raise CheckpointError(path, f"parameter mismatch: missing={missing} unexpected={unexpected}")
    bundle.eval()
    return bundle, checkpoint
