"""
Array-backed dataset containers
"""
from dataclasses import dataclass, field
from typing import FrozenSet, List, Tuple

import numpy as np

from core.exceptions import DatasetError
from core.models import CompositionLabel, DatasetStats, Split

_SPLITS = {s.value for s in Split}


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """Features, labels, pair sets and per-image split tags"""

    state_names: Tuple[str, ...]
    object_names: Tuple[str, ...]
    features: np.ndarray
    state_ids: np.ndarray
    object_ids: np.ndarray
    splits: np.ndarray
    seen_pairs: FrozenSet[CompositionLabel]
    unseen_pairs: FrozenSet[CompositionLabel]

    def __post_init__(self):
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "object_names", tuple(self.object_names))
        object.__setattr__(self, "features", _frozen(np.array(self.features, dtype=np.float64)))
        object.__setattr__(self, "state_ids", _frozen(np.array(self.state_ids, dtype=np.int64)))
        object.__setattr__(self, "object_ids", _frozen(np.array(self.object_ids, dtype=np.int64)))
        object.__setattr__(self, "splits", _frozen(np.array([s.value if isinstance(s, Split) else str(s) for s in self.splits], dtype="<U5")))
        object.__setattr__(self, "seen_pairs", frozenset(self.seen_pairs))
        object.__setattr__(self, "unseen_pairs", frozenset(self.unseen_pairs))
        self.validate()

    # -- shape ---------------------------------------------------------------

    @property
    def n_images(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_objects(self) -> int:
        return len(self.object_names)

    @property
    def labels(self) -> List[CompositionLabel]:
        return [
            CompositionLabel(state_id=int(a), object_id=int(o))
            for a, o in zip(self.state_ids, self.object_ids)
        ]

    @property
    def all_pairs(self) -> List[CompositionLabel]:
        """C^s ∪ C^u sorted by (state_id, object_id)"""
        return sorted(self.seen_pairs | self.unseen_pairs, key=lambda p: p.key)

    def split_indices(self, split: Split) -> np.ndarray:
        return np.flatnonzero(self.splits == Split(split).value)

    def pairs_in(self, split: Split) -> Tuple[set, set]:
        """(seen, unseen) pairs that actually occur among a split's images"""
        idx = self.split_indices(split)
        present = {(int(self.state_ids[i]), int(self.object_ids[i])) for i in idx}
        seen = {p for p in self.seen_pairs if p.key in present}
        unseen = {p for p in self.unseen_pairs if p.key in present}
        return seen, unseen

    # -- checks --------------------------------------------------------------

    def validate(self) -> None:
        n = self.features.shape[0] if self.features.ndim == 2 else -1
        if self.features.ndim != 2:
            raise DatasetError(f"features must be a matrix, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain NaN or Inf")
        for name, arr in (("state_ids", self.state_ids), ("object_ids", self.object_ids), ("splits", self.splits)):
            if arr.shape != (n,):
                raise DatasetError(f"{name} has {arr.shape[0]} entries for {n} feature rows")
        if n and (self.state_ids.min() < 0 or self.state_ids.max() >= self.n_states):
            raise DatasetError("state id outside the state vocabulary")
        if n and (self.object_ids.min() < 0 or self.object_ids.max() >= self.n_objects):
            raise DatasetError("object id outside the object vocabulary")
        bad_split = set(np.unique(self.splits)) - _SPLITS
        if bad_split:
            raise DatasetError(f"unknown split tags {sorted(bad_split)}")
        for pair in self.seen_pairs | self.unseen_pairs:
            if pair.state_id >= self.n_states or pair.object_id >= self.n_objects:
                raise DatasetError(f"pair {pair.key} outside the vocabulary")
        overlap = self.seen_pairs & self.unseen_pairs
        if overlap:
            raise DatasetError(f"{len(overlap)} pairs are both seen and unseen, e.g. {next(iter(overlap)).key}")

        seen_keys = {p.key for p in self.seen_pairs}
        all_keys = seen_keys | {p.key for p in self.unseen_pairs}
        for i in range(n):
            key = (int(self.state_ids[i]), int(self.object_ids[i]))
            if self.splits[i] == Split.TRAIN.value:
                if key not in seen_keys:
                    raise DatasetError(f"train image {i} has label {key} outside the seen pairs")
            elif key not in all_keys:
                raise DatasetError(f"{self.splits[i]} image {i} has label {key} outside the pair sets")

    def describe(self) -> DatasetStats:
        counts = {}
        for split in Split:
            seen, unseen = self.pairs_in(split)
            counts[split] = (len(seen), len(unseen), len(self.split_indices(split)))
        return DatasetStats(
            n_states=self.n_states,
            n_objects=self.n_objects,
            train_seen_pairs=counts[Split.TRAIN][0],
            train_images=counts[Split.TRAIN][2],
            val_seen_pairs=counts[Split.VAL][0],
            val_unseen_pairs=counts[Split.VAL][1],
            val_images=counts[Split.VAL][2],
            test_seen_pairs=counts[Split.TEST][0],
            test_unseen_pairs=counts[Split.TEST][1],
            test_images=counts[Split.TEST][2],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetBundle):
            return NotImplemented
        return (
            self.state_names == other.state_names
            and self.object_names == other.object_names
            and self.seen_pairs == other.seen_pairs
            and self.unseen_pairs == other.unseen_pairs
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.state_ids, other.state_ids)
            and np.array_equal(self.object_ids, other.object_ids)
            and np.array_equal(self.splits, other.splits)
        )

    __hash__ = None


@dataclass(frozen=True)
class SpecificDatabases:
    """Per-anchor index sets over train images"""

    anchor: int
    d_s: np.ndarray
    d_o: np.ndarray
    d_ir: np.ndarray

    @property
    def usable(self) -> bool:
        """True when every contrastive term is defined for this anchor"""
        return bool(self.d_s.size and self.d_o.size and self.d_ir.size)


@dataclass(frozen=True)
class TrainBatch:
    anchors: np.ndarray
    state_positives: np.ndarray
    object_positives: np.ndarray
    negatives: np.ndarray
    transitions: np.ndarray
    extras: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.anchors.shape[0])

    @property
    def k(self) -> int:
        return int(self.negatives.shape[1])

    @property
    def state_negatives(self) -> np.ndarray:
        return self.negatives

    @property
    def object_negatives(self) -> np.ndarray:
        # same array as state_negatives; both spaces share one draw
        return self.negatives

    @property
    def classified(self) -> np.ndarray:
        """Images contributing to the classification loss: anchors then extras"""
        return np.concatenate([self.anchors, self.extras])
