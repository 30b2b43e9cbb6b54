"""
Siamese contrastive core: projection, the two specific encoders, the two classifier
heads and the contrastive / classification losses.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from core.autograd import (
    Node,
    Parameter,
    add,
    batched_matvec,
    concat,
    constant,
    l2_normalize,
    log_softmax,
    mean,
    pick,
    reshape,
    rowwise_dot,
    scale,
    take_rows,
)
from core.bundle import TrainBatch
from core.exceptions import ConfigurationError, DatasetError, ShapeError
from core.models import CompositionLabel
from networks.layers import MLP


@dataclass(frozen=True)
class ModelDims:
    feature_dim: int
    embed_dim: int
    hidden: int
    proto_dim: int
    n_states: int
    n_objects: int
    classifier_layers: int = 1

    @classmethod
    def resolve(
        cls,
        feature_dim: int,
        n_states: int,
        n_objects: int,
        proto_dim: int = 300,
        embed_dim: Optional[int] = None,
        hidden: Optional[int] = None,
        classifier_layers: int = 1,
    ) -> "ModelDims":
        """Fill the defaults: embed_dim = feature_dim, hidden = 2 x proto_dim"""
        return cls(
            feature_dim=feature_dim,
            embed_dim=embed_dim or feature_dim,
            hidden=hidden or 2 * proto_dim,
            proto_dim=proto_dim,
            n_states=n_states,
            n_objects=n_objects,
            classifier_layers=classifier_layers,
        )


class ContrastiveConfig(BaseModel):
    tau_s: float = Field(default=0.1, gt=0)
    tau_o: float = Field(default=0.1, gt=0)
    k: int = Field(default=10, ge=1)
    normalize: bool = True


class ScenParams:
    """FC, E_s, E_o, C_a, C_o"""

    def __init__(self, dims: ModelDims, rng: np.random.Generator):
        self.dims = dims
        head = [dims.proto_dim] * dims.classifier_layers
        self.fc = MLP("fc", [dims.feature_dim, dims.embed_dim], rng)
        self.e_s = MLP("e_s", [dims.embed_dim, dims.hidden, dims.proto_dim], rng)
        self.e_o = MLP("e_o", [dims.embed_dim, dims.hidden, dims.proto_dim], rng)
        self.c_a = MLP("c_a", head + [dims.n_states], rng)
        self.c_o = MLP("c_o", head + [dims.n_objects], rng)

    @property
    def modules(self) -> Dict[str, MLP]:
        return {"fc": self.fc, "e_s": self.e_s, "e_o": self.e_o, "c_a": self.c_a, "c_o": self.c_o}

    def parameters(self) -> Dict[str, Parameter]:
        params: Dict[str, Parameter] = {}
        for module in self.modules.values():
            params.update(module.parameters())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            if arrays[name].shape != p.shape:
                raise ShapeError(f"load {name}", p.shape, arrays[name].shape)
            p.value[...] = arrays[name]

    def snapshot(self) -> "ScenParams":
        """Independent copy for evaluation"""
        twin = ScenParams(self.dims, np.random.default_rng(0))
        twin.load_arrays(self.state_arrays())
        return twin


def _as_rows(x: Union[Node, np.ndarray]) -> Node:
    return x if isinstance(x, Node) else constant(x)


def encode(params: ScenParams, x: Union[Node, np.ndarray]) -> Tuple[Node, Node]:
    """
    h_s = E_s(FC(x)), h_o = E_o(FC(x))

    Args:
        params: model
        x: one feature vector [feature_dim] or a batch [n, feature_dim]

    Returns:
        (h_s, h_o), each [proto_dim] or [n, proto_dim]
    """
    x = _as_rows(x)
    single = x.value.ndim == 1
    if x.shape[-1] != params.dims.feature_dim:
        raise ShapeError("encode", x.shape, (params.dims.feature_dim,))
    if single:
        x = reshape(x, (1, -1))
    z = params.fc(x)
    h_s, h_o = params.e_s(z), params.e_o(z)
    if single:
        h_s, h_o = reshape(h_s, (-1,)), reshape(h_o, (-1,))
    return h_s, h_o


def info_nce(
    anchor: Node, positive: Node, negatives: Node, tau: float, normalize: bool = False
) -> Node:
    """
    -log( e^{a.p/tau} / (e^{a.p/tau} + sum_i e^{a.n_i/tau}) ), averaged over rows

    Args:
        anchor: [d] or [B, d]
        positive: same shape as anchor
        negatives: [K, d] or [B, K, d]
        tau: temperature > 0
        normalize: L2-normalize every vector first

    Returns:
        scalar loss
    """
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    if anchor.value.ndim == 1:
        anchor = reshape(anchor, (1, -1))
        positive = reshape(positive, (1, -1))
        negatives = reshape(negatives, (1,) + negatives.shape)
    if negatives.value.ndim != 3 or negatives.shape[1] < 1:
        raise ShapeError("info_nce negatives", negatives.shape)
    if normalize:
        anchor, positive, negatives = l2_normalize(anchor), l2_normalize(positive), l2_normalize(negatives)
    pos = reshape(rowwise_dot(anchor, positive), (-1, 1))
    neg = batched_matvec(negatives, anchor)
    logits = scale(concat([pos, neg], axis=1), 1.0 / tau)
    log_p = pick(log_softmax(logits, axis=1), np.zeros(anchor.shape[0], dtype=np.int64))
    return scale(mean(log_p), -1.0)


@dataclass
class BatchEncoding:
    """Prototypes for every role in a TrainBatch, sharing one FC pass"""

    h_s: Node  # classified images (anchors then extras)
    h_o: Node
    anchor_s: Node
    anchor_o: Node
    pos_s: Optional[Node] = None
    pos_o: Optional[Node] = None
    neg_s: Optional[Node] = None
    neg_o: Optional[Node] = None
    transition_s: Optional[Node] = None


def encode_batch(
    params: ScenParams,
    batch: TrainBatch,
    features: np.ndarray,
    contrastive: bool = True,
    transitions: bool = False,
) -> BatchEncoding:
    """Encode the rows of a batch once; negatives go through both E_s and E_o"""
    b, k = batch.size, batch.k
    n_cls = batch.classified.size
    parts = [batch.classified]
    if contrastive:
        parts += [batch.state_positives, batch.object_positives, batch.negatives.reshape(-1)]
    if transitions:
        parts.append(batch.transitions)
    rows = np.concatenate(parts)
    z = params.fc(constant(features[rows]))

    offsets = np.cumsum([0] + [p.size for p in parts])
    cls_rows = np.arange(offsets[0], offsets[1])
    state_rows = [cls_rows]
    object_rows = [cls_rows]
    if contrastive:
        state_rows += [np.arange(offsets[1], offsets[2]), np.arange(offsets[3], offsets[4])]
        object_rows += [np.arange(offsets[2], offsets[3]), np.arange(offsets[3], offsets[4])]
    if transitions:
        state_rows.append(np.arange(offsets[-2], offsets[-1]))

    hs_all = params.e_s(take_rows(z, np.concatenate(state_rows)))
    ho_all = params.e_o(take_rows(z, np.concatenate(object_rows)))

    h_s = take_rows(hs_all, np.arange(n_cls))
    h_o = take_rows(ho_all, np.arange(n_cls))
    enc = BatchEncoding(
        h_s=h_s,
        h_o=h_o,
        anchor_s=take_rows(hs_all, np.arange(b)),
        anchor_o=take_rows(ho_all, np.arange(b)),
    )
    cursor = n_cls
    if contrastive:
        enc.pos_s = take_rows(hs_all, np.arange(cursor, cursor + b))
        enc.pos_o = take_rows(ho_all, np.arange(cursor, cursor + b))
        neg_rows = np.arange(cursor + b, cursor + b + b * k)
        enc.neg_s = reshape(take_rows(hs_all, neg_rows), (b, k, -1))
        enc.neg_o = reshape(take_rows(ho_all, neg_rows), (b, k, -1))
        cursor += b + b * k
    if transitions:
        enc.transition_s = take_rows(hs_all, np.arange(cursor, cursor + b))
    return enc


def contrastive_from_encoding(enc: BatchEncoding, cfg: ContrastiveConfig) -> Tuple[Node, Node]:
    l_scl = info_nce(enc.anchor_s, enc.pos_s, enc.neg_s, cfg.tau_s, cfg.normalize)
    l_ocl = info_nce(enc.anchor_o, enc.pos_o, enc.neg_o, cfg.tau_o, cfg.normalize)
    return l_scl, l_ocl


def contrastive_losses(
    params: ScenParams, cfg: ContrastiveConfig, batch: TrainBatch, features: np.ndarray
) -> Tuple[Node, Node]:
    """
    (L_scl, L_ocl) for a batch

    Args:
        params: model
        cfg: temperatures and normalization
        batch: rows from the sampler; its single negative draw feeds both spaces
        features: full feature matrix the batch indexes into

    Returns:
        Scalar nodes, each averaged over batch rows
    """
    return contrastive_from_encoding(encode_batch(params, batch, features, contrastive=True), cfg)


def cross_entropy(logits: Node, targets: np.ndarray) -> Node:
    targets = np.asarray(targets, dtype=np.int64)
    n_classes = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise DatasetError(f"class id outside [0, {n_classes})")
    return scale(mean(pick(log_softmax(logits, axis=1), targets)), -1.0)


LabelBatch = Union[Sequence[CompositionLabel], Tuple[np.ndarray, np.ndarray]]


def _label_arrays(labels: LabelBatch) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(labels, tuple) and len(labels) == 2 and isinstance(labels[0], np.ndarray):
        return labels
    return (
        np.array([lab.state_id for lab in labels], dtype=np.int64),
        np.array([lab.object_id for lab in labels], dtype=np.int64),
    )


def classification_loss(params: ScenParams, h_s: Node, h_o: Node, labels: LabelBatch) -> Node:
    """CE(C_a(h_s), a) + CE(C_o(h_o), o), each a batch mean"""
    states, objects = _label_arrays(labels)
    if h_s.value.ndim == 1:
        h_s, h_o = reshape(h_s, (1, -1)), reshape(h_o, (1, -1))
    return add(cross_entropy(params.c_a(h_s), states), cross_entropy(params.c_o(h_o), objects))


def cts_loss(l_scl: Node, l_ocl: Node, l_cls: Node) -> Node:
    """L_cts = L_scl + L_ocl + L_cls"""
    return add(add(l_scl, l_ocl), l_cls)
