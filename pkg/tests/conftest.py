from typing import Iterable, List, Tuple

import numpy as np
import pytest

from config.settings import RunConfig
from core.autograd import set_deterministic
from core.bundle import DatasetBundle
from core.models import CompositionLabel
from networks.scen import ModelDims, ScenParams
from services.synthetic import generate_synthetic


def make_bundle(
    rows: Iterable[Tuple[int, int, str]],
    n_states: int,
    n_objects: int,
    unseen: Iterable[Tuple[int, int]] = (),
    feature_dim: int = 4,
    seed: int = 0,
) -> DatasetBundle:
    """Hand-built bundle; every row label outside `unseen` is a seen pair"""
    rows = list(rows)
    rng = np.random.default_rng(seed)
    unseen = {CompositionLabel(state_id=a, object_id=o) for a, o in unseen}
    seen = {CompositionLabel(state_id=a, object_id=o) for a, o, _ in rows} - unseen
    return DatasetBundle(
        state_names=[f"s{a}" for a in range(n_states)],
        object_names=[f"o{o}" for o in range(n_objects)],
        features=rng.normal(size=(len(rows), feature_dim)),
        state_ids=[a for a, _, _ in rows],
        object_ids=[o for _, o, _ in rows],
        splits=[split for _, _, split in rows],
        seen_pairs=seen,
        unseen_pairs=unseen,
    )


def random_train_bundle(rng: np.random.Generator, max_states: int = 10, max_objects: int = 10, max_images: int = 500) -> DatasetBundle:
    n_states = int(rng.integers(2, max_states + 1))
    n_objects = int(rng.integers(2, max_objects + 1))
    n_images = int(rng.integers(2, max_images + 1))
    rows: List[Tuple[int, int, str]] = [
        (int(rng.integers(n_states)), int(rng.integers(n_objects)), "train") for _ in range(n_images)
    ]
    return make_bundle(rows, n_states, n_objects, seed=int(rng.integers(1 << 31)))


@pytest.fixture(autouse=True)
def deterministic_matmul():
    set_deterministic(True)
    yield
    set_deterministic(True)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_bundle() -> DatasetBundle:
    """4 states x 5 objects, 16 seen / 4 unseen pairs, 6 images per pair"""
    return generate_synthetic(
        n_states=4,
        n_objects=5,
        seen_fraction=0.8,
        samples_per_pair=6,
        feature_dim=8,
        noise_sigma=0.1,
        seed=0,
    )


@pytest.fixture(scope="session")
def desk_bundle() -> DatasetBundle:
    return generate_synthetic(
        n_states=8,
        n_objects=10,
        seen_fraction=0.75,
        samples_per_pair=40,
        feature_dim=32,
        noise_sigma=0.1,
        seed=0,
    )


@pytest.fixture
def tiny_dims() -> ModelDims:
    return ModelDims.resolve(feature_dim=8, n_states=4, n_objects=5, proto_dim=6, hidden=10)


@pytest.fixture
def tiny_scen(tiny_dims: ModelDims) -> ScenParams:
    return ScenParams(tiny_dims, np.random.default_rng(0))


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    return RunConfig(
        n_states=4,
        n_objects=5,
        seen_fraction=0.8,
        samples_per_pair=6,
        feature_dim=8,
        proto_dim=6,
        hidden=10,
        k=3,
        batch_size=16,
        epochs=2,
        lr=1e-3,
        output_dir=tmp_path / "run",
    )


@pytest.fixture
def bundle_factory():
    return make_bundle


@pytest.fixture
def random_bundle_factory():
    return random_train_bundle
