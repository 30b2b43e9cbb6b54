"""
Desk-scale synthetic compositional datasets
"""
from typing import List, Tuple

import numpy as np
from loguru import logger

from core.bundle import DatasetBundle
from core.exceptions import DatasetError
from core.models import CompositionLabel, Split

MAX_PAIR_DRAWS = 1000


def _split_counts(samples_per_pair: int) -> Tuple[int, int, int]:
    n_val = max(1, int(round(0.2 * samples_per_pair)))
    n_test = max(1, int(round(0.2 * samples_per_pair)))
    return samples_per_pair - n_val - n_test, n_val, n_test


def _draw_seen_pairs(
    rng: np.random.Generator, n_states: int, n_objects: int, n_seen: int
) -> List[Tuple[int, int]]:
    """Random seen set in which every state and every object occurs at least twice"""
    all_pairs = [(a, o) for a in range(n_states) for o in range(n_objects)]
    for _ in range(MAX_PAIR_DRAWS):
        pick = rng.permutation(len(all_pairs))[:n_seen]
        chosen = [all_pairs[i] for i in sorted(pick)]
        state_counts = np.bincount([a for a, _ in chosen], minlength=n_states)
        object_counts = np.bincount([o for _, o in chosen], minlength=n_objects)
        if state_counts.min() >= 2 and object_counts.min() >= 2:
            return chosen
    raise DatasetError(
        f"Could not draw {n_seen} seen pairs covering every state and object twice "
        f"in {MAX_PAIR_DRAWS} attempts; raise seen_fraction"
    )


def generate_synthetic(
    n_states: int,
    n_objects: int,
    seen_fraction: float,
    samples_per_pair: int,
    feature_dim: int,
    noise_sigma: float,
    seed: int,
    latent_dim: int = 8,
) -> DatasetBundle:
    """
    Build a compositional dataset from per-primitive latent vectors

    Each image feature is tanh(W [z_a ; z_o]) plus Gaussian noise, with one random
    mixing matrix W. Seen-pair images are split 60/20/20 into train/val/test; unseen-pair
    images are split evenly between val and test. Values are rounded to float32 so the
    bundle survives the features file format unchanged.

    Args:
        n_states: |A|
        n_objects: |O|
        seen_fraction: share of A x O used as seen pairs
        samples_per_pair: images per pair
        feature_dim: dimension of each feature vector
        noise_sigma: standard deviation of the additive noise
        seed: generator seed
        latent_dim: size of each primitive latent

    Returns:
        A validated DatasetBundle
    """
    if n_states < 2 or n_objects < 2:
        raise DatasetError("need at least two states and two objects")
    if not 0.0 < seen_fraction <= 1.0:
        raise DatasetError(f"seen_fraction must lie in (0, 1], got {seen_fraction}")
    if samples_per_pair < 3:
        raise DatasetError("samples_per_pair must be at least 3 to populate train, val and test")
    if feature_dim < 1 or latent_dim < 1:
        raise DatasetError("feature_dim and latent_dim must be positive")
    if noise_sigma < 0:
        raise DatasetError("noise_sigma must be non-negative")

    n_pairs = n_states * n_objects
    n_seen = int(round(seen_fraction * n_pairs))
    n_unseen = n_pairs - n_seen
    if n_unseen < 1:
        raise DatasetError(f"seen_fraction={seen_fraction} leaves no unseen pairs")
    if n_seen < 2 * max(n_states, n_objects):
        raise DatasetError(
            f"{n_seen} seen pairs cannot cover every state and object twice "
            f"({n_states} states, {n_objects} objects)"
        )

    rng = np.random.default_rng(seed)
    seen = _draw_seen_pairs(rng, n_states, n_objects, n_seen)
    seen_set = set(seen)
    unseen = [(a, o) for a in range(n_states) for o in range(n_objects) if (a, o) not in seen_set]

    z_state = rng.normal(size=(n_states, latent_dim))
    z_object = rng.normal(size=(n_objects, latent_dim))
    mixing = rng.normal(scale=1.0 / np.sqrt(2 * latent_dim), size=(feature_dim, 2 * latent_dim))

    n_train, n_val, n_test = _split_counts(samples_per_pair)
    n_val_unseen = samples_per_pair // 2

    features, state_ids, object_ids, splits = [], [], [], []
    for a, o in sorted(seen_set | set(unseen)):
        clean = np.tanh(mixing @ np.concatenate([z_state[a], z_object[o]]))
        noise = rng.normal(scale=noise_sigma, size=(samples_per_pair, feature_dim))
        features.append(clean[None, :] + noise)
        state_ids.extend([a] * samples_per_pair)
        object_ids.extend([o] * samples_per_pair)
        if (a, o) in seen_set:
            tags = [Split.TRAIN] * n_train + [Split.VAL] * n_val + [Split.TEST] * n_test
        else:
            tags = [Split.VAL] * n_val_unseen + [Split.TEST] * (samples_per_pair - n_val_unseen)
        splits.extend(t.value for t in tags)

    order = rng.permutation(len(state_ids))
    stacked = np.vstack(features).astype(np.float32).astype(np.float64)

    bundle = DatasetBundle(
        state_names=[f"state{a:02d}" for a in range(n_states)],
        object_names=[f"object{o:02d}" for o in range(n_objects)],
        features=stacked[order],
        state_ids=np.asarray(state_ids)[order],
        object_ids=np.asarray(object_ids)[order],
        splits=np.asarray(splits)[order],
        seen_pairs={CompositionLabel(state_id=a, object_id=o) for a, o in seen},
        unseen_pairs={CompositionLabel(state_id=a, object_id=o) for a, o in unseen},
    )
    logger.info(
        f"Synthetic bundle: {n_states} states x {n_objects} objects, "
        f"{n_seen} seen / {n_unseen} unseen pairs, {bundle.n_images} images"
    )
    return bundle
