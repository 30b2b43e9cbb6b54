"""
On-disk bundle format: a UTF-8 metadata file plus a little-endian float32 features file
"""
import struct
from pathlib import Path
from typing import Dict, Iterator, List, Tuple

import numpy as np
from loguru import logger

from core.bundle import DatasetBundle
from core.exceptions import BundleFormatError
from core.models import CompositionLabel, Split

FEATURES_MAGIC = b"SCENFEAT"
FEATURES_VERSION = 1
_HEADER = struct.Struct("<8sIII")
_SECTIONS = ("states", "objects", "pairs", "images")


# ---------------------------------------------------------------------------
# features file
# ---------------------------------------------------------------------------

def save_features(features: np.ndarray, path: Path) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(features, dtype="<f4")
    if not np.array_equal(payload.astype(np.float64), features):
        logger.warning(f"{path}: features are not float32-exact; saved values are rounded")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FEATURES_MAGIC, FEATURES_VERSION, features.shape[0], features.shape[1]))
        f.write(payload.tobytes())


def load_features(path: Path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise BundleFormatError(path, len(raw), "file shorter than the features header")
    magic, version, n_rows, dim = _HEADER.unpack_from(raw, 0)
    if magic != FEATURES_MAGIC:
        raise BundleFormatError(path, 0, f"bad magic {magic!r}, expected {FEATURES_MAGIC!r}")
    if version != FEATURES_VERSION:
        raise BundleFormatError(path, 8, f"unsupported version {version}")
    expected = n_rows * dim * 4
    available = len(raw) - _HEADER.size
    if available != expected:
        raise BundleFormatError(
            path, _HEADER.size, f"payload holds {available} bytes, header declares {n_rows}x{dim} float32"
        )
    values = np.frombuffer(raw, dtype="<f4", count=n_rows * dim, offset=_HEADER.size)
    return values.astype(np.float64).reshape(n_rows, dim)


# ---------------------------------------------------------------------------
# metadata file
# ---------------------------------------------------------------------------

def _lines(path: Path) -> Iterator[Tuple[int, str]]:
    """(byte offset, stripped text) for every non-blank, non-comment line"""
    offset = 0
    for raw in path.read_bytes().splitlines(keepends=True):
        try:
            text = raw.decode("utf-8").strip()
        except UnicodeDecodeError:
            raise BundleFormatError(path, offset, "line is not valid UTF-8")
        if text and not text.startswith("#"):
            yield offset, text
        offset += len(raw)


def _parse_metadata(path: Path) -> Dict[str, List[Tuple[int, List[str]]]]:
    sections: Dict[str, List[Tuple[int, List[str]]]] = {}
    current = None
    for offset, text in _lines(path):
        if text.startswith("[") and text.endswith("]"):
            current = text[1:-1].strip()
            if current not in _SECTIONS:
                raise BundleFormatError(path, offset, f"unknown section [{current}]")
            if current in sections:
                raise BundleFormatError(path, offset, f"duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise BundleFormatError(path, offset, "content before the first section header")
        sections[current].append((offset, text.split()))
    for name in _SECTIONS:
        if name not in sections:
            raise BundleFormatError(path, 0, f"missing section [{name}]")
    return sections


def save_bundle(bundle: DatasetBundle, metadata_path: Path, features_path: Path) -> None:
    """Write both files of a bundle"""
    metadata_path = Path(metadata_path)
    features_path = Path(features_path)
    for name in bundle.state_names + bundle.object_names:
        if not name or any(ch.isspace() for ch in name):
            raise BundleFormatError(metadata_path, 0, f"vocabulary name {name!r} must be a single token")

    lines = ["[states]", *bundle.state_names, "", "[objects]", *bundle.object_names, "", "[pairs]"]
    for pair in bundle.all_pairs:
        tag = "seen" if pair in bundle.seen_pairs else "unseen"
        lines.append(f"{bundle.state_names[pair.state_id]} {bundle.object_names[pair.object_id]} {tag}")
    lines += ["", "[images]"]
    for i in range(bundle.n_images):
        lines.append(
            f"{i} {bundle.state_names[bundle.state_ids[i]]} "
            f"{bundle.object_names[bundle.object_ids[i]]} {bundle.splits[i]}"
        )
    metadata_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_features(bundle.features, features_path)
    logger.info(f"Bundle saved: {metadata_path} + {features_path} ({bundle.n_images} images)")


def load_bundle(metadata_path: Path, features_path: Path) -> DatasetBundle:
    """
    Read and validate a bundle

    Args:
        metadata_path: text file with [states], [objects], [pairs], [images]
        features_path: SCENFEAT binary file

    Returns:
        DatasetBundle with float64 features
    """
    metadata_path = Path(metadata_path)
    features_path = Path(features_path)
    sections = _parse_metadata(metadata_path)

    def vocabulary(name: str) -> Dict[str, int]:
        table: Dict[str, int] = {}
        for offset, fields in sections[name]:
            if len(fields) != 1:
                raise BundleFormatError(metadata_path, offset, f"[{name}] lines hold one name")
            if fields[0] in table:
                raise BundleFormatError(metadata_path, offset, f"duplicate name {fields[0]!r} in [{name}]")
            table[fields[0]] = len(table)
        return table

    states = vocabulary("states")
    objects = vocabulary("objects")

    def lookup(table: Dict[str, int], token: str, kind: str, offset: int) -> int:
        if token not in table:
            raise BundleFormatError(metadata_path, offset, f"unknown {kind} {token!r}")
        return table[token]

    seen, unseen = set(), set()
    for offset, fields in sections["pairs"]:
        if len(fields) != 3 or fields[2] not in ("seen", "unseen"):
            raise BundleFormatError(metadata_path, offset, "pair lines read '<state> <object> seen|unseen'")
        pair = CompositionLabel(
            state_id=lookup(states, fields[0], "state", offset),
            object_id=lookup(objects, fields[1], "object", offset),
        )
        (seen if fields[2] == "seen" else unseen).add(pair)

    features = load_features(features_path)
    n_rows = features.shape[0]
    images = sections["images"]
    if len(images) != n_rows:
        raise BundleFormatError(
            features_path, 12, f"features file has {n_rows} rows but metadata lists {len(images)} images"
        )

    state_ids = np.full(n_rows, -1, dtype=np.int64)
    object_ids = np.full(n_rows, -1, dtype=np.int64)
    splits = np.empty(n_rows, dtype="<U5")
    split_names = {s.value for s in Split}
    for offset, fields in images:
        if len(fields) != 4:
            raise BundleFormatError(metadata_path, offset, "image lines read '<row> <state> <object> <split>'")
        try:
            row = int(fields[0])
        except ValueError:
            raise BundleFormatError(metadata_path, offset, f"row index {fields[0]!r} is not an integer")
        if not 0 <= row < n_rows:
            raise BundleFormatError(metadata_path, offset, f"row index {row} outside [0, {n_rows})")
        if state_ids[row] != -1:
            raise BundleFormatError(metadata_path, offset, f"row index {row} listed twice")
        if fields[3] not in split_names:
            raise BundleFormatError(metadata_path, offset, f"unknown split {fields[3]!r}")
        state_ids[row] = lookup(states, fields[1], "state", offset)
        object_ids[row] = lookup(objects, fields[2], "object", offset)
        splits[row] = fields[3]

    bundle = DatasetBundle(
        state_names=list(states),
        object_names=list(objects),
        features=features,
        state_ids=state_ids,
        object_ids=object_ids,
        splits=splits,
        seen_pairs=seen,
        unseen_pairs=unseen,
    )
    logger.info(f"Bundle loaded: {bundle.n_images} images, {len(seen)} seen / {len(unseen)} unseen pairs")
    return bundle
