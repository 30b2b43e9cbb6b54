"""
Specific databases (state-constant, object-constant, irrelevant) and batch sampling
"""
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from loguru import logger

from core.bundle import DatasetBundle, SpecificDatabases, TrainBatch
from core.exceptions import DatasetError
from core.models import Split


def build_specific_databases(bundle: DatasetBundle, anchor_index: int) -> SpecificDatabases:
    """
    Exhaustive D_s / D_o / D_ir for one train anchor

    Args:
        bundle: dataset
        anchor_index: row of a train-split image

    Returns:
        Sorted index arrays over train images; the anchor is excluded from d_s and d_o
    """
    if bundle.splits[anchor_index] != Split.TRAIN.value:
        raise DatasetError(f"anchor {anchor_index} is a {bundle.splits[anchor_index]} image, not train")
    train = bundle.split_indices(Split.TRAIN)
    a = bundle.state_ids[anchor_index]
    o = bundle.object_ids[anchor_index]
    states = bundle.state_ids[train]
    objects = bundle.object_ids[train]
    not_self = train != anchor_index
    return SpecificDatabases(
        anchor=int(anchor_index),
        d_s=train[(states == a) & not_self],
        d_o=train[(objects == o) & not_self],
        d_ir=train[(states != a) & (objects != o)],
    )


class CompositionSampler:
    """Draws anchors, positives, shared negatives and transition partners from the train split"""

    def __init__(self, bundle: DatasetBundle, k: int, rng: np.random.Generator):
        """
        Args:
            bundle: dataset
            k: negatives per anchor
            rng: generator owned by this sampler
        """
        if k < 1:
            raise DatasetError(f"K must be at least 1, got {k}")
        self.bundle = bundle
        self.k = int(k)
        self.rng = rng
        self.train = bundle.split_indices(Split.TRAIN)

        states = bundle.state_ids[self.train]
        objects = bundle.object_ids[self.train]
        self._same_state = {int(a): self.train[states == a] for a in np.unique(states)}
        self._same_object = {int(o): self.train[objects == o] for o in np.unique(objects)}
        self._other_state = {int(a): self.train[states != a] for a in np.unique(states)}
        self._irrelevant: Dict[Tuple[int, int], np.ndarray] = {}
        for a, o in {(int(a), int(o)) for a, o in zip(states, objects)}:
            self._irrelevant[(a, o)] = self.train[(states != a) & (objects != o)]

        usable = np.array([self._usable(int(i)) for i in self.train], dtype=bool)
        self.eligible = self.train[usable]
        self.ineligible = self.train[~usable]
        if self.ineligible.size:
            logger.warning(
                f"{self.ineligible.size} train images lack a positive or irrelevant sample; "
                "they contribute to classification only"
            )
        logger.info(f"Sampler initialized: {self.eligible.size} eligible anchors, K={self.k}")

    def _label(self, index: int) -> Tuple[int, int]:
        return int(self.bundle.state_ids[index]), int(self.bundle.object_ids[index])

    def _usable(self, index: int) -> bool:
        a, o = self._label(index)
        return (
            self._same_state[a].size > 1
            and self._same_object[o].size > 1
            and self._irrelevant[(a, o)].size > 0
        )

    def databases(self, anchor: int) -> SpecificDatabases:
        a, o = self._label(anchor)
        d_s = self._same_state[a]
        d_o = self._same_object[o]
        return SpecificDatabases(
            anchor=int(anchor),
            d_s=d_s[d_s != anchor],
            d_o=d_o[d_o != anchor],
            d_ir=self._irrelevant[(a, o)],
        )

    def _require_eligible(self) -> None:
        if self.eligible.size == 0:
            raise DatasetError(
                "No train image has non-empty D_s, D_o and D_ir; check dataset connectivity "
                "(every state and object should appear in at least two seen pairs)"
            )

    def sample_rows(self, anchors: np.ndarray, extras: Optional[np.ndarray] = None) -> TrainBatch:
        """Draw positives, K shared negatives and a transition partner for each given anchor"""
        anchors = np.asarray(anchors, dtype=np.int64)
        n = anchors.shape[0]
        pos_s = np.empty(n, dtype=np.int64)
        pos_o = np.empty(n, dtype=np.int64)
        negatives = np.empty((n, self.k), dtype=np.int64)
        transitions = np.empty(n, dtype=np.int64)
        for row, anchor in enumerate(anchors):
            db = self.databases(int(anchor))
            if not db.usable:
                raise DatasetError(f"anchor {int(anchor)} has an empty specific database")
            pos_s[row] = db.d_s[self.rng.integers(db.d_s.size)]
            pos_o[row] = db.d_o[self.rng.integers(db.d_o.size)]
            negatives[row] = self.rng.choice(db.d_ir, size=self.k, replace=db.d_ir.size < self.k)
            partners = self._other_state[int(self.bundle.state_ids[anchor])]
            transitions[row] = partners[self.rng.integers(partners.size)]
        if extras is None:
            extras = np.zeros(0, dtype=np.int64)
        return TrainBatch(
            anchors=anchors,
            state_positives=pos_s,
            object_positives=pos_o,
            negatives=negatives,
            transitions=transitions,
            extras=np.asarray(extras, dtype=np.int64),
        )

    def sample_batch(self, batch_size: int) -> TrainBatch:
        """B anchors drawn uniformly without replacement from the eligible set"""
        self._require_eligible()
        size = min(int(batch_size), self.eligible.size)
        anchors = self.rng.choice(self.eligible, size=size, replace=False)
        return self.sample_rows(anchors)

    def num_batches(self, batch_size: int) -> int:
        return int(np.ceil(self.eligible.size / batch_size))

    def epoch(self, batch_size: int) -> Iterator[TrainBatch]:
        """One pass over eligible anchors; ineligible images ride along as classification extras"""
        self._require_eligible()
        order = self.rng.permutation(self.eligible)
        n_batches = self.num_batches(batch_size)
        extras = np.array_split(self.rng.permutation(self.ineligible), n_batches)
        for b in range(n_batches):
            anchors = order[b * batch_size:(b + 1) * batch_size]
            yield self.sample_rows(anchors, extras[b])


def sample_batch(bundle: DatasetBundle, batch_size: int, k: int, rng: np.random.Generator) -> TrainBatch:
    """Convenience wrapper building a sampler around `rng` and drawing one batch"""
    return CompositionSampler(bundle, k, rng).sample_batch(batch_size)
