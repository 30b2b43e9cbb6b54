"""
Generalized compositional evaluation: pair scoring, calibration-bias sweep, AUC / HM
and primitive accuracies
"""
import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from loguru import logger

from core.autograd import log_softmax
from core.bundle import DatasetBundle
from core.exceptions import DatasetError, ScenException
from core.models import CompositionLabel, CurvePoint, EvalReport, Split
from networks.scen import ScenParams, encode


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-image scores over candidate pairs sorted by (state_id, object_id)"""

    scores: np.ndarray
    candidate_pairs: Tuple[CompositionLabel, ...]
    truth: Tuple[CompositionLabel, ...]
    is_unseen_pair: np.ndarray
    image_indices: np.ndarray

    def __post_init__(self):
        columns = {p.key: j for j, p in enumerate(self.candidate_pairs)}
        missing = [t.key for t in self.truth if t.key not in columns]
        if missing:
            raise DatasetError(f"truth labels {missing[:3]} are not candidate pairs")
        if self.scores.shape != (len(self.truth), len(self.candidate_pairs)):
            raise DatasetError(
                f"scores shaped {self.scores.shape} for {len(self.truth)} images x {len(self.candidate_pairs)} pairs"
            )
        object.__setattr__(self, "truth_columns", np.array([columns[t.key] for t in self.truth], dtype=np.int64))

    @property
    def truth_is_unseen(self) -> np.ndarray:
        return self.is_unseen_pair[self.truth_columns]


def harmonic_mean(s: float, u: float) -> float:
    return 0.0 if s + u == 0 else 2.0 * s * u / (s + u)


def _head_log_probs(scen: ScenParams, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    h_s, h_o = encode(scen, features)
    return log_softmax(scen.c_a(h_s), axis=1).value, log_softmax(scen.c_o(h_o), axis=1).value


def score_pairs(scen: ScenParams, bundle: DatasetBundle, split: Split) -> ScoreMatrix:
    """
    score(i, (a, o)) = log p_state(a | i) + log p_object(o | i)

    Args:
        scen: trained parameters (read only)
        bundle: dataset
        split: images to score

    Returns:
        ScoreMatrix over every seen and unseen pair
    """
    idx = bundle.split_indices(split)
    if idx.size == 0:
        raise DatasetError(f"split {Split(split).value} has no images")
    pairs = bundle.all_pairs
    pair_states = np.array([p.state_id for p in pairs], dtype=np.int64)
    pair_objects = np.array([p.object_id for p in pairs], dtype=np.int64)
    log_a, log_o = _head_log_probs(scen, bundle.features[idx])
    labels = bundle.labels
    return ScoreMatrix(
        scores=log_a[:, pair_states] + log_o[:, pair_objects],
        candidate_pairs=tuple(pairs),
        truth=tuple(labels[i] for i in idx),
        is_unseen_pair=np.array([p in bundle.unseen_pairs for p in pairs], dtype=bool),
        image_indices=idx,
    )


def predict(sm: ScoreMatrix, bias: float) -> np.ndarray:
    """Column argmax after adding `bias` to unseen-pair columns; ties go to the lowest column"""
    return predict_columns(sm, np.array([bias], dtype=np.float64))[0]


def candidate_biases(sm: ScoreMatrix) -> np.ndarray:
    """-inf, every per-image margin, midpoints between consecutive margins, +inf"""
    seen_cols = ~sm.is_unseen_pair
    margins = sm.scores[:, seen_cols].max(axis=1) - sm.scores[:, sm.is_unseen_pair].max(axis=1)
    d = np.unique(margins)
    mids = (d[:-1] + d[1:]) / 2.0
    return np.concatenate([[-np.inf], np.unique(np.concatenate([d, mids])), [np.inf]])


def predict_columns(sm: ScoreMatrix, biases: np.ndarray) -> np.ndarray:
    """
    Predicted column for every (bias, image), shaped (biases, images)

    Only the best seen and best unseen column of each row can win, so each bias
    reduces to comparing two numbers per image.
    """
    seen_cols = np.flatnonzero(~sm.is_unseen_pair)
    unseen_cols = np.flatnonzero(sm.is_unseen_pair)
    seen_scores = sm.scores[:, seen_cols]
    unseen_scores = sm.scores[:, unseen_cols]
    s_best = seen_scores.max(axis=1)
    u_best = unseen_scores.max(axis=1)
    s_arg = seen_cols[np.argmax(seen_scores, axis=1)]
    u_arg = unseen_cols[np.argmax(unseen_scores, axis=1)]

    shifted = u_best[None, :] + biases[:, None]
    unseen_wins = (shifted > s_best[None, :]) | ((shifted == s_best[None, :]) & (u_arg < s_arg)[None, :])
    return np.where(unseen_wins, u_arg[None, :], s_arg[None, :])


def curve_auc(points: Sequence[CurvePoint]) -> float:
    """
    Trapezoid area under unseen-vs-seen accuracy over distinct operating points

    Points run by seen accuracy ascending and, at equal seen accuracy, unseen accuracy
    descending, which walks a monotone curve from its unseen end to its seen end.
    """
    if not points:
        return 0.0
    unique = np.unique(np.array([[p.seen_acc, p.unseen_acc] for p in points]), axis=0)
    if unique.shape[0] < 2:
        return 0.0
    order = np.lexsort((-unique[:, 1], unique[:, 0]))
    return float(np.trapezoid(unique[order, 1], unique[order, 0]))


def bias_sweep(sm: ScoreMatrix) -> EvalReport:
    """
    Sweep the calibration bias over every achievable operating point

    Returns:
        EvalReport with auc, best_hm, best_seen, best_unseen and the curve
        (state/object accuracies left at 0; see primitive_accuracies)
    """
    if not sm.is_unseen_pair.any() or sm.is_unseen_pair.all():
        raise DatasetError("candidate pairs must include both seen and unseen compositions")
    unseen_truth = sm.truth_is_unseen
    seen_truth = ~unseen_truth
    if not seen_truth.any():
        raise DatasetError("no seen-truth images in the evaluated split")
    if not unseen_truth.any():
        raise DatasetError("no unseen-truth images in the evaluated split")

    biases = candidate_biases(sm)
    correct = predict_columns(sm, biases) == sm.truth_columns[None, :]
    seen_accs = correct[:, seen_truth].mean(axis=1)
    unseen_accs = correct[:, unseen_truth].mean(axis=1)
    curve = [
        CurvePoint(seen_acc=float(s), unseen_acc=float(u), bias=float(b))
        for s, u, b in zip(seen_accs, unseen_accs, biases)
    ]

    seen = np.array([p.seen_acc for p in curve])
    unseen = np.array([p.unseen_acc for p in curve])
    if np.any(np.diff(seen) > 0) or np.any(np.diff(unseen) < 0):
        logger.error("Seen/unseen curve is not monotone in the bias")
        raise ScenException("calibration curve violates monotonicity")

    return EvalReport(
        auc=curve_auc(curve),
        best_hm=max(harmonic_mean(p.seen_acc, p.unseen_acc) for p in curve),
        best_seen=curve[0].seen_acc,
        best_unseen=curve[-1].unseen_acc,
        curve=curve,
    )


def primitive_accuracies(sm: ScoreMatrix, scen: ScenParams, bundle: DatasetBundle) -> Tuple[float, float]:
    """Unbiased state-head and object-head accuracy over the scored images"""
    log_a, log_o = _head_log_probs(scen, bundle.features[sm.image_indices])
    true_states = np.array([t.state_id for t in sm.truth])
    true_objects = np.array([t.object_id for t in sm.truth])
    state_acc = float(np.mean(np.argmax(log_a, axis=1) == true_states))
    object_acc = float(np.mean(np.argmax(log_o, axis=1) == true_objects))
    return state_acc, object_acc


def evaluate(scen: ScenParams, bundle: DatasetBundle, split: Split) -> EvalReport:
    """Score, sweep and attach primitive accuracies"""
    sm = score_pairs(scen, bundle, split)
    report = bias_sweep(sm)
    state_acc, object_acc = primitive_accuracies(sm, scen, bundle)
    return report.model_copy(update={"state_acc": state_acc, "object_acc": object_acc})


def write_curve_csv(report: EvalReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["bias", "seen_acc", "unseen_acc"])
        for p in report.curve:
            writer.writerow([repr(p.bias), repr(p.seen_acc), repr(p.unseen_acc)])


def write_report_json(report: EvalReport, path: Path) -> None:
    Path(path).write_text(json.dumps(report.scalars(), indent=2) + "\n", encoding="utf-8")


def format_row(name: str, report: EvalReport) -> str:
    """One table row in percent: AUC, HM, Seen, Unseen, s, o"""
    cells = [report.auc, report.best_hm, report.best_seen, report.best_unseen, report.state_acc, report.object_acc]
    return f"{name:<12}" + "".join(f"{100 * c:>8.1f}" for c in cells)
