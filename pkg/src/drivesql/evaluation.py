"""Scoring of model predictions against generated pairs.

Four metric families: mean absolute error over extracted numbers, label
accuracy by containment, mean average precision over grounded detections,
and corpus BLEU for free-text plans. A deterministic scene-level splitter
rounds out the toolbox.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import UndefinedScore
from .generation import (
    DetectionList,
    FreeText,
    InstructionResponsePair,
    Label,
    Numeric,
)
from .scene_db import BBox2D, View
from .task_sql import RISK_SUBTASKS, Subtask
from .textutil import count_mentions, extract_numbers, tokenize

__all__ = [
    "extract_numbers",
    "MaeResult",
    "mae",
    "accuracy",
    "iou",
    "RankedDetection",
    "ReferenceBox",
    "average_precision",
    "map_score",
    "bleu",
    "clipped_ngram_counts",
    "Split",
    "split_dataset",
    "DetectionPred",
    "Prediction",
    "MetricReport",
    "evaluate",
    "predictions_from_pairs",
    "read_predictions_jsonl",
    "write_predictions_jsonl",
]

# Built-in candidate labels per label subtask; reference labels seen in the
# evaluation corpus are always added on top.
_BUILTIN_LABELS: dict[Subtask, frozenset[str]] = {
    Subtask.SAME_ROAD: frozenset({"yes", "no"}),
    Subtask.STATUS_EGO: frozenset({"moving", "stationary"}),
    Subtask.STATUS: frozenset({"moving", "stopped", "parked", "standing", "sitting"}),
    Subtask.STATUS_OTHERS: frozenset({"moving", "stopped", "parked", "standing", "sitting"}),
    Subtask.CLOSEST: frozenset(),
}

_MAE_SUBTASKS = frozenset(
    {Subtask.DISTANCE, Subtask.INSTANCE_NUMBER, Subtask.SPEEDS, Subtask.MOTION_EGO, Subtask.MOTION_OTHERS}
)
_ACC_SUBTASKS = frozenset(_BUILTIN_LABELS)


# ------------------------------------------------------------------- numbers


@dataclass(frozen=True)
class MaeResult:
    value: float
    extraction_failure_rate: float
    scored: int
    failed: int


def mae(predictions: Sequence[str], references: Sequence[Sequence[float]]) -> MaeResult:
    """Mean absolute error between extracted numbers and references.

    Per pair, the first k extracted numbers align with the k reference
    values. Pairs with fewer numbers are excluded and counted into the
    extraction failure rate. With nothing scorable the MAE is undefined.
    """
    if len(predictions) != len(references):
        raise ValueError("predictions and references must align one to one")
    per_pair: list[float] = []
    failed = 0
    for text, refs in zip(predictions, references):
        refs = list(refs)
        if not refs:
            raise ValueError("reference value lists must be non-empty")
        found = extract_numbers(text)
        if len(found) < len(refs) or any(not math.isfinite(v) for v in found[: len(refs)]):
            failed += 1
            continue
        per_pair.append(
            sum(abs(p - r) for p, r in zip(found, refs)) / len(refs)
        )
    if not per_pair:
        raise UndefinedScore("no pair yielded enough numbers to score")
    total = len(predictions)
    return MaeResult(
        value=sum(per_pair) / len(per_pair),
        extraction_failure_rate=failed / total,
        scored=len(per_pair),
        failed=failed,
    )


# -------------------------------------------------------------------- labels


def accuracy(
    predictions: Sequence[str],
    references: Sequence[str],
    label_set: Iterable[str] | None = None,
) -> float:
    """Fraction of predictions containing exactly the reference label.

    A prediction is correct when, across the candidate label set, it
    mentions exactly one label exactly once, and that label equals the
    reference. Matching is case-insensitive on whitespace-normalized
    tokens.
    """
    if len(predictions) != len(references):
        raise ValueError("predictions and references must align one to one")
    if not references:
        raise UndefinedScore("no labelled pairs to score")
    labels = {r.lower() for r in references}
    if label_set is not None:
        labels |= {l.lower() for l in label_set}
    correct = 0
    for text, ref in zip(predictions, references):
        tokens = tokenize(text)
        mentions = {label: count_mentions(tokens, label) for label in labels}
        total = sum(mentions.values())
        if total == 1 and mentions.get(ref.lower(), 0) == 1:
            correct += 1
    return correct / len(references)


# ---------------------------------------------------------------- detections


def iou(a: BBox2D, b: BBox2D) -> float:
    """Intersection over union of two pixel boxes."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class RankedDetection:
    pair_id: str
    view: View
    bbox: BBox2D
    score: float


@dataclass(frozen=True)
class ReferenceBox:
    pair_id: str
    view: View
    bbox: BBox2D


def average_precision(
    detections: Sequence[RankedDetection],
    references: Sequence[ReferenceBox],
    iou_threshold: float = 0.5,
) -> float:
    """Area under the all-point interpolated precision-recall curve.

    Detections rank by descending score, ties broken by pair id and then
    input order. A detection is a true positive when it overlaps an
    unmatched reference in the same pair and view at or above the IoU
    threshold; among candidates the highest overlap wins.
    """
    if not references:
        raise UndefinedScore("average precision needs at least one reference")
    ranked = sorted(
        enumerate(detections), key=lambda item: (-item[1].score, item[1].pair_id, item[0])
    )
    by_group: dict[tuple[str, View], list[int]] = {}
    for idx, ref in enumerate(references):
        by_group.setdefault((ref.pair_id, ref.view), []).append(idx)
    matched: set[int] = set()
    flags: list[bool] = []
    for _, det in ranked:
        best_idx = -1
        best_overlap = 0.0
        for ref_idx in by_group.get((det.pair_id, det.view), []):
            if ref_idx in matched:
                continue
            overlap = iou(det.bbox, references[ref_idx].bbox)
            if overlap >= iou_threshold and overlap > best_overlap:
                best_idx, best_overlap = ref_idx, overlap
        if best_idx >= 0:
            matched.add(best_idx)
            flags.append(True)
        else:
            flags.append(False)
    recalls: list[float] = []
    precisions: list[float] = []
    tp = 0
    for i, flag in enumerate(flags, start=1):
        tp += int(flag)
        recalls.append(tp / len(references))
        precisions.append(tp / i)
    # All-point interpolation with boundary sentinels.
    mrec = [0.0, *recalls, 1.0]
    mpre = [0.0, *precisions, 0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return sum(
        (mrec[i] - mrec[i - 1]) * mpre[i] for i in range(1, len(mrec)) if mrec[i] != mrec[i - 1]
    )


def map_score(
    detections_by_kind: Mapping[Subtask, Sequence[RankedDetection]],
    references_by_kind: Mapping[Subtask, Sequence[ReferenceBox]],
    iou_threshold: float = 0.5,
) -> float:
    """Mean AP over the risk kinds that have at least one reference."""
    scores = []
    for kind in RISK_SUBTASKS:
        refs = references_by_kind.get(kind, ())
        if not refs:
            continue
        scores.append(
            average_precision(detections_by_kind.get(kind, ()), refs, iou_threshold)
        )
    if not scores:
        raise UndefinedScore("no risk kind has any reference detection")
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------- bleu


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_ngram_counts(
    candidates: Sequence[str], references: Sequence[str], n: int
) -> tuple[int, int]:
    """Corpus-level clipped n-gram matches and candidate n-gram total."""
    matches = 0
    total = 0
    for cand, ref in zip(candidates, references):
        cand_counts = _ngram_counts(tokenize(cand), n)
        ref_counts = _ngram_counts(tokenize(ref), n)
        matches += sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total += sum(cand_counts.values())
    return matches, total


def bleu(
    candidates: Sequence[str],
    references: Sequence[str],
    max_n: int = 4,
    smooth: bool = False,
) -> float:
    """Corpus BLEU with uniform weights up to 4-grams.

    Precisions clip per n-gram against the single reference, the brevity
    penalty is exp(1 - r/c) when the candidate corpus is shorter, and any
    zero precision floors the score at zero unless add-one smoothing is on.
    Orders longer than every candidate are treated as perfectly matched so
    that scoring a corpus against itself is exactly 1.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must align one to one")
    if not candidates:
        raise UndefinedScore("cannot score an empty corpus")
    cand_len = sum(len(tokenize(c)) for c in candidates)
    ref_len = sum(len(tokenize(r)) for r in references)
    if cand_len == 0:
        return 1.0 if ref_len == 0 else 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matches, total = clipped_ngram_counts(candidates, references, n)
        if smooth:
            matches, total = matches + 1, total + 1
        if total == 0:
            continue  # no candidate n-grams of this order to get wrong
        if matches == 0:
            return 0.0
        log_sum += math.log(matches / total) / max_n
    brevity = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_sum)


# --------------------------------------------------------------------- split


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


def split_dataset(
    scene_ids: Iterable[str],
    ratios: tuple[float, float, float] = (7.5, 1.5, 1.5),
    seed: int = 0,
) -> Split:
    """Deterministic scene-level split.

    The sorted id list is shuffled with the seed, sizes come from the
    normalized ratios by floor plus largest remainder (ties resolved in
    train, val, test order), and the shuffled list is sliced in that order.
    """
    ids = sorted(scene_ids)
    if not ids:
        raise ValueError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise ValueError("scene ids must be unique")
    if any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError("ratios must be non-negative and sum to a positive value")
    rng = random.Random(seed)
    rng.shuffle(ids)
    total = sum(ratios)
    quotas = [len(ids) * r / total for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    leftover = len(ids) - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    train = tuple(ids[: sizes[0]])
    val = tuple(ids[sizes[0] : sizes[0] + sizes[1]])
    test = tuple(ids[sizes[0] + sizes[1] :])
    return Split(train=train, val=val, test=test)


# ----------------------------------------------------------------- evaluate


@dataclass(frozen=True)
class DetectionPred:
    view: View
    bbox: BBox2D
    score: float


@dataclass(frozen=True)
class Prediction:
    """One model answer; detections only accompany risk subtasks."""

    pair_id: str
    response_text: str
    detections: tuple[DetectionPred, ...] | None = None


@dataclass
class MetricReport:
    per_subtask: dict[Subtask, float]
    groups: dict[str, float | None]
    extraction_failure_rate: float

    def as_dict(self) -> dict[str, Any]:
        return {
            "per_subtask": {s.value: v for s, v in self.per_subtask.items()},
            "groups": dict(self.groups),
            "extraction_failure_rate": self.extraction_failure_rate,
        }


GROUP_NAMES = (
    "perception_mae",
    "perception_acc",
    "prediction_mae",
    "prediction_acc",
    "risk_map",
    "reasoning_bleu",
)

_GROUP_OF: dict[Subtask, str] = {
    Subtask.DISTANCE: "perception_mae",
    Subtask.SPEEDS: "perception_mae",
    Subtask.INSTANCE_NUMBER: "perception_mae",
    Subtask.CLOSEST: "perception_acc",
    Subtask.STATUS: "perception_acc",
    Subtask.SAME_ROAD: "perception_acc",
    Subtask.MOTION_EGO: "prediction_mae",
    Subtask.MOTION_OTHERS: "prediction_mae",
    Subtask.STATUS_EGO: "prediction_acc",
    Subtask.STATUS_OTHERS: "prediction_acc",
    **{kind: "risk_map" for kind in RISK_SUBTASKS},
    Subtask.PLANNING_WITH_REASONING: "reasoning_bleu",
}


def evaluate(
    pairs: Sequence[InstructionResponsePair],
    predictions: Sequence[Prediction],
    iou_threshold: float = 0.5,
) -> MetricReport:
    """Score predictions against their pairs, worst-casing missing ones.

    A missing prediction counts as an extraction failure, an incorrect
    label, no detections, or an empty plan, depending on the family.
    Duplicate or unknown prediction ids are rejected.
    """
    by_id: dict[str, InstructionResponsePair] = {}
    for pair in pairs:
        if pair.pair_id in by_id:
            raise ValueError(f"duplicate pair id {pair.pair_id!r} in the dataset")
        by_id[pair.pair_id] = pair
    pred_map: dict[str, Prediction] = {}
    for pred in predictions:
        if pred.pair_id in pred_map:
            raise ValueError(f"duplicate prediction for pair {pred.pair_id!r}")
        if pred.pair_id not in by_id:
            raise ValueError(f"prediction references unknown pair {pred.pair_id!r}")
        target = by_id[pred.pair_id]
        if pred.detections is not None and target.subtask not in RISK_SUBTASKS:
            raise ValueError(
                f"prediction for {target.subtask.value} pair {pred.pair_id!r} "
                "must not carry detections"
            )
        pred_map[pred.pair_id] = pred

    mae_texts: dict[Subtask, list[str]] = {}
    mae_refs: dict[Subtask, list[list[float]]] = {}
    acc_texts: dict[Subtask, list[str]] = {}
    acc_refs: dict[Subtask, list[str]] = {}
    det_preds: dict[Subtask, list[RankedDetection]] = {k: [] for k in RISK_SUBTASKS}
    det_refs: dict[Subtask, list[ReferenceBox]] = {k: [] for k in RISK_SUBTASKS}
    bleu_cands: list[str] = []
    bleu_refs: list[str] = []

    for pair in pairs:
        pred = pred_map.get(pair.pair_id)
        text = pred.response_text if pred is not None else ""
        truth = pair.ground_truth
        if isinstance(truth, Numeric):
            mae_texts.setdefault(pair.subtask, []).append(text)
            mae_refs.setdefault(pair.subtask, []).append(list(truth.values))
        elif isinstance(truth, Label):
            acc_texts.setdefault(pair.subtask, []).append(text)
            acc_refs.setdefault(pair.subtask, []).append(truth.value)
        elif isinstance(truth, DetectionList):
            for ref in truth.items:
                det_refs[pair.subtask].append(ReferenceBox(pair.pair_id, ref.view, ref.bbox))
            if pred is not None and pred.detections:
                for det in pred.detections:
                    det_preds[pair.subtask].append(
                        RankedDetection(pair.pair_id, det.view, det.bbox, det.score)
                    )
        elif isinstance(truth, FreeText):
            bleu_cands.append(text)
            bleu_refs.append(truth.text)

    per_subtask: dict[Subtask, float] = {}
    failures = 0
    mae_pair_count = 0

    for subtask in Subtask:
        if subtask in mae_texts:
            mae_pair_count += len(mae_texts[subtask])
            try:
                result = mae(mae_texts[subtask], mae_refs[subtask])
                per_subtask[subtask] = result.value
                failures += result.failed
            except UndefinedScore:
                failures += len(mae_texts[subtask])
        if subtask in acc_texts:
            per_subtask[subtask] = accuracy(
                acc_texts[subtask], acc_refs[subtask], _BUILTIN_LABELS[subtask]
            )
        if subtask in RISK_SUBTASKS and det_refs[subtask]:
            per_subtask[subtask] = average_precision(
                det_preds[subtask], det_refs[subtask], iou_threshold
            )
    if bleu_cands:
        per_subtask[Subtask.PLANNING_WITH_REASONING] = bleu(bleu_cands, bleu_refs)

    groups: dict[str, float | None] = {}
    groups["perception_mae"] = _pooled_mae(
        mae_texts, mae_refs, lambda s: _GROUP_OF[s] == "perception_mae"
    )
    groups["prediction_mae"] = _pooled_mae(
        mae_texts, mae_refs, lambda s: _GROUP_OF[s] == "prediction_mae"
    )
    groups["perception_acc"] = _pooled_accuracy(
        acc_texts, acc_refs, lambda s: _GROUP_OF[s] == "perception_acc"
    )
    groups["prediction_acc"] = _pooled_accuracy(
        acc_texts, acc_refs, lambda s: _GROUP_OF[s] == "prediction_acc"
    )
    try:
        groups["risk_map"] = map_score(det_preds, det_refs, iou_threshold)
    except UndefinedScore:
        groups["risk_map"] = None
    groups["reasoning_bleu"] = bleu(bleu_cands, bleu_refs) if bleu_cands else None

    rate = failures / mae_pair_count if mae_pair_count else 0.0
    return MetricReport(
        per_subtask=per_subtask, groups=groups, extraction_failure_rate=rate
    )


def _pooled_mae(texts, refs, selector) -> float | None:
    pooled_texts: list[str] = []
    pooled_refs: list[list[float]] = []
    for subtask, items in texts.items():
        if selector(subtask):
            pooled_texts.extend(items)
            pooled_refs.extend(refs[subtask])
    if not pooled_texts:
        return None
    try:
        return mae(pooled_texts, pooled_refs).value
    except UndefinedScore:
        return None


def _pooled_accuracy(texts, refs, selector) -> float | None:
    """Pairs are judged with their own subtask's label set, then pooled."""
    total = 0
    weighted = 0.0
    for subtask, items in texts.items():
        if not selector(subtask):
            continue
        score = accuracy(items, refs[subtask], _BUILTIN_LABELS[subtask])
        weighted += score * len(items)
        total += len(items)
    if total == 0:
        return None
    return weighted / total


def predictions_from_pairs(pairs: Iterable[InstructionResponsePair]) -> list[Prediction]:
    """Echo every pair's own response and ground truth as a prediction.

    Useful as the round-trip baseline: a perfect model should score
    perfectly against the dataset it was generated from.
    """
    out = []
    for pair in pairs:
        detections = None
        if isinstance(pair.ground_truth, DetectionList):
            detections = tuple(
                DetectionPred(view=d.view, bbox=d.bbox, score=1.0)
                for d in pair.ground_truth.items
            )
        out.append(
            Prediction(pair_id=pair.pair_id, response_text=pair.response, detections=detections)
        )
    return out


# ----------------------------------------------------------------- file I/O


def read_predictions_jsonl(path: str | Path) -> list[Prediction]:
    preds = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        detections = None
        if "detections" in doc and doc["detections"] is not None:
            detections = tuple(
                DetectionPred(
                    view=View(d["view"]),
                    bbox=BBox2D(*[float(c) for c in d["bbox"]]),
                    score=float(d["score"]),
                )
                for d in doc["detections"]
            )
        preds.append(
            Prediction(
                pair_id=str(doc["pair_id"]),
                response_text=str(doc["response_text"]),
                detections=detections,
            )
        )
    return preds


def write_predictions_jsonl(preds: Iterable[Prediction], path: str | Path) -> None:
    rows = []
    for pred in preds:
        doc: dict[str, Any] = {"pair_id": pred.pair_id, "response_text": pred.response_text}
        if pred.detections is not None:
            doc["detections"] = [
                {"view": d.view.value, "bbox": d.bbox.as_list(), "score": d.score}
                for d in pred.detections
            ]
        rows.append(doc)
    from .canonical import canonical_jsonl

    Path(path).write_text(canonical_jsonl(rows), encoding="utf-8")
