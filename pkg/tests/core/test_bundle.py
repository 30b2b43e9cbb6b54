import numpy as np
import pytest

from core.bundle import DatasetBundle
from core.exceptions import DatasetError
from core.models import CompositionLabel, Split


def test_train_image_must_carry_a_seen_pair(bundle_factory):
    with pytest.raises(DatasetError, match="outside the seen pairs"):
        bundle_factory([(0, 0, "train"), (1, 1, "train")], 2, 2, unseen=[(1, 1)])


def test_seen_and_unseen_must_be_disjoint():
    pair = CompositionLabel(state_id=0, object_id=0)
    with pytest.raises(DatasetError, match="both seen and unseen"):
        DatasetBundle(
            state_names=["a"],
            object_names=["x"],
            features=np.zeros((1, 2)),
            state_ids=[0],
            object_ids=[0],
            splits=["val"],
            seen_pairs={pair},
            unseen_pairs={pair},
        )


def test_non_finite_features_rejected(bundle_factory):
    bundle = bundle_factory([(0, 0, "train")], 1, 1)
    features = bundle.features.copy()
    features[0, 0] = np.nan
    with pytest.raises(DatasetError, match="NaN"):
        DatasetBundle(
            state_names=bundle.state_names,
            object_names=bundle.object_names,
            features=features,
            state_ids=bundle.state_ids,
            object_ids=bundle.object_ids,
            splits=bundle.splits,
            seen_pairs=bundle.seen_pairs,
            unseen_pairs=bundle.unseen_pairs,
        )


def test_unknown_split_tag_rejected(bundle_factory):
    with pytest.raises(DatasetError, match="split"):
        bundle_factory([(0, 0, "dev")], 1, 1)


def test_arrays_are_read_only(tiny_bundle):
    with pytest.raises(ValueError):
        tiny_bundle.features[0, 0] = 1.0


def test_describe_counts(tiny_bundle):
    stats = tiny_bundle.describe()
    assert (stats.n_states, stats.n_objects) == (4, 5)
    assert stats.train_seen_pairs == 16
    assert (stats.val_seen_pairs, stats.val_unseen_pairs) == (16, 4)
    assert (stats.test_seen_pairs, stats.test_unseen_pairs) == (16, 4)
    assert stats.train_images + stats.val_images + stats.test_images == tiny_bundle.n_images


def test_all_pairs_sorted(tiny_bundle):
    keys = [p.key for p in tiny_bundle.all_pairs]
    assert keys == sorted(keys)
    assert len(keys) == 20


def test_split_indices_partition(tiny_bundle):
    parts = [tiny_bundle.split_indices(s) for s in Split]
    joined = np.sort(np.concatenate(parts))
    np.testing.assert_array_equal(joined, np.arange(tiny_bundle.n_images))
