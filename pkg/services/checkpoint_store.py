"""
Binary checkpoint container

Layout (little-endian):
    b"SCENCKPT", u32 version
    u32 x 7: feature_dim, embed_dim, hidden, proto_dim, n_states, n_objects, classifier_layers
    SCEN section: u32 tensor count, then tensors
    STM section:  u32 present flag; if 1: b"STM1", u32 stm_hidden, u32 tensor count, tensors
    tensor: u16 name length, UTF-8 name, u32 ndim, u32 x ndim shape, float64 x size
Tensors follow the parameters() order of each module group.
"""
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Tuple

import numpy as np
from loguru import logger

from core.bundle import DatasetBundle
from core.exceptions import CheckpointError
from networks.scen import ModelDims, ScenParams
from networks.stm import StmParams

CHECKPOINT_MAGIC = b"SCENCKPT"
CHECKPOINT_VERSION = 1
STM_TAG = b"STM1"
_DIMS = struct.Struct("<7I")


def _write_tensors(f: BinaryIO, arrays: Dict[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        f.write(struct.pack("<H", len(encoded)))
        f.write(encoded)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, path: Path):
        self.path = path
        self.raw = path.read_bytes()
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def tensors(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (length,) = self.unpack("<H")
            name = self.take(length).decode("utf-8")
            (ndim,) = self.unpack("<I")
            shape = self.unpack(f"<{ndim}I") if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64)
            arrays[name] = data.reshape(shape)
        return arrays


def save_checkpoint(path: Path, scen: ScenParams, stm: Optional[StmParams] = None) -> None:
    d = scen.dims
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(_DIMS.pack(d.feature_dim, d.embed_dim, d.hidden, d.proto_dim, d.n_states, d.n_objects, d.classifier_layers))
        _write_tensors(f, scen.state_arrays())
        f.write(struct.pack("<I", int(stm is not None)))
        if stm is not None:
            f.write(STM_TAG)
            f.write(struct.pack("<I", stm.hidden))
            _write_tensors(f, stm.state_arrays())
    logger.info(f"Checkpoint saved: {path}")


def load_checkpoint(path: Path) -> Tuple[ScenParams, Optional[StmParams]]:
    """
    Rebuild parameters from a checkpoint

    Returns:
        (ScenParams, StmParams or None)
    """
    path = Path(path)
    reader = _Reader(path)
    if reader.take(8) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a SCEN checkpoint")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    dims = ModelDims(*reader.unpack(_DIMS.format))

    rng = np.random.default_rng(0)
    scen = ScenParams(dims, rng)
    arrays = reader.tensors()
    if list(arrays) != list(scen.parameters()):
        raise CheckpointError(f"{path}: SCEN tensor names do not match the architecture")
    scen.load_arrays(arrays)

    stm = None
    (has_stm,) = reader.unpack("<I")
    if has_stm:
        if reader.take(4) != STM_TAG:
            raise CheckpointError(f"{path}: malformed STM section at byte {reader.pos - 4}")
        (hidden,) = reader.unpack("<I")
        stm = StmParams(dims, rng, hidden=hidden)
        arrays = reader.tensors()
        if list(arrays) != list(stm.parameters()):
            raise CheckpointError(f"{path}: STM tensor names do not match the architecture")
        stm.load_arrays(arrays)
    if reader.pos != len(reader.raw):
        raise CheckpointError(f"{path}: {len(reader.raw) - reader.pos} trailing bytes")
    logger.info(f"Checkpoint loaded: {path}")
    return scen, stm


def check_compatible(scen: ScenParams, bundle: DatasetBundle) -> None:
    d = scen.dims
    expected = (bundle.feature_dim, bundle.n_states, bundle.n_objects)
    actual = (d.feature_dim, d.n_states, d.n_objects)
    if expected != actual:
        raise CheckpointError(
            f"checkpoint (feature_dim, |A|, |O|) = {actual} does not match the bundle's {expected}"
        )
