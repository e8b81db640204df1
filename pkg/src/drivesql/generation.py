"""Instruction-response pair generation and verification.

For every eligible scene the generator samples three-keyframe windows,
runs each enabled subtask against the database, and renders deterministic
instruction and response text. Rendering quantizes numbers to one decimal
while ground truths keep the untruncated values. Verification applies
offline format rules and, optionally, an external reviewing service.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import random
import time
import urllib.error
import urllib.request
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .canonical import canonical_dumps
from .errors import TemplateError, VerifierProtocolError
from .geometry import Vec3, planar_norm
from .scene_db import (
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    BBox2D,
    InstanceInfo,
    SceneDatabase,
    SceneRecord,
    View,
)
from .task_sql import (
    RISK_SUBTASKS,
    PlanningResult,
    RiskThresholds,
    Subtask,
    closest,
    detect_risk,
    distance,
    instance_number,
    motion_ego,
    motion_others,
    planning_with_reasoning,
    same_road,
    speeds,
    status,
    status_ego,
    status_others,
)
from .textutil import count_mentions, extract_numbers, tokenize

# Ego displacement (meters per window step) above which the ego counts as
# moving when a status label has to be derived from motion alone.
EGO_MOVING_DISPLACEMENT = 0.5


# --------------------------------------------------------------------------
# Ground truth variants. Exactly one per metric family.


@dataclass(frozen=True)
class Numeric:
    values: tuple[float, ...]


@dataclass(frozen=True)
class Label:
    value: str


@dataclass(frozen=True)
class DetectionRef:
    view: View
    bbox: BBox2D
    instance_id: str


@dataclass(frozen=True)
class DetectionList:
    items: tuple[DetectionRef, ...]


@dataclass(frozen=True)
class FreeText:
    text: str


GroundTruth = Numeric | Label | DetectionList | FreeText


@dataclass(frozen=True)
class InstructionResponsePair:
    pair_id: str
    scene_id: str
    frame_ids: tuple[str, str, str]
    task: str
    subtask: Subtask
    views_used: tuple[View, ...]
    instruction: str
    response: str
    ground_truth: GroundTruth
    thresholds_used: RiskThresholds | None = None


@dataclass(frozen=True)
class OfflineRules:
    """Marker config: verify with the built-in format rules only."""


@dataclass(frozen=True)
class ExternalClient:
    """Config for the HTTP reviewing service used after the offline rules."""

    endpoint: str
    timeout_s: float = 10.0
    retries: int = 2


@dataclass
class GenerationConfig:
    master_seed: int = 0
    windows_per_scene: int = 1
    max_instances_per_subtask: int = 3
    thresholds: RiskThresholds = field(default_factory=RiskThresholds)
    enabled_subtasks: frozenset[Subtask] = frozenset(Subtask)
    verifier: OfflineRules | ExternalClient = field(default_factory=OfflineRules)

    def digest(self) -> str:
        doc = {
            "master_seed": self.master_seed,
            "windows_per_scene": self.windows_per_scene,
            "max_instances_per_subtask": self.max_instances_per_subtask,
            "thresholds": self.thresholds.as_dict(),
            "enabled_subtasks": sorted(s.value for s in self.enabled_subtasks),
            "verifier": dataclasses.asdict(self.verifier),
        }
        return hashlib.sha256(canonical_dumps(doc).encode("utf-8")).hexdigest()


@dataclass
class GenerationDiagnostics:
    eligible_scenes: int = 0
    ineligible_scenes: int = 0
    windows_sampled: int = 0
    windows_unique: int = 0
    skipped_instances: int = 0
    pair_failures: int = 0
    failure_messages: list[str] = field(default_factory=list)

    def merge(self, other: "GenerationDiagnostics") -> None:
        self.eligible_scenes += other.eligible_scenes
        self.ineligible_scenes += other.ineligible_scenes
        self.windows_sampled += other.windows_sampled
        self.windows_unique += other.windows_unique
        self.skipped_instances += other.skipped_instances
        self.pair_failures += other.pair_failures
        self.failure_messages.extend(other.failure_messages)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


# --------------------------------------------------------------------------
# Window sampling.


def sample_window(scene: SceneRecord, rng: random.Random) -> tuple[str, str, str]:
    """Three consecutive keyframes with a uniformly random start index."""
    n = len(scene.frame_ids)
    if n < 3:
        from .errors import IneligibleScene

        raise IneligibleScene(f"scene {scene.scene_id!r} has {n} keyframes, needs 3")
    start = rng.randrange(n - 2)
    return tuple(scene.frame_ids[start : start + 3])  # type: ignore[return-value]


def derive_scene_seed(master_seed: int, scene_id: str) -> int:
    """Stable per-scene seed so worker order cannot change the output."""
    digest = hashlib.sha256(f"{master_seed}:{scene_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


# --------------------------------------------------------------------------
# Rendering.


def format_grounding(view: View, bbox: BBox2D) -> str:
    """Instance reference of the form ``<front, x1, y1, x2, y2>``."""
    return (
        f"<{view.phrase}, {bbox.x1:.1f}, {bbox.y1:.1f}, {bbox.x2:.1f}, {bbox.y2:.1f}>"
    )


def _view_phrase(view: View) -> str:
    return "all views" if view is View.ALL else f"the {view.phrase} view"


def _category_phrase(category: str) -> str:
    return category.replace("_", " ").replace(".", " ")


_COORD_FORMAT_HINT = (
    "Please use the format as (x,y) where x and y are the forward and "
    "leftward {unit} in meters."
)

_INSTRUCTIONS: dict[Subtask, str] = {
    Subtask.DISTANCE: (
        "What is the distance between {grounding} and the ego car? "
        + _COORD_FORMAT_HINT.format(unit="offsets")
    ),
    Subtask.CLOSEST: "What are the closest objects in {view_phrase} of the ego car?",
    Subtask.INSTANCE_NUMBER: (
        "How many instances of {category} are there in {view_phrase} of the ego car?"
    ),
    Subtask.SPEEDS: "What is the speed for {grounding}?",
    Subtask.STATUS: "What is the status for {grounding}?",
    Subtask.SAME_ROAD: "Is {grounding} in the same road with the ego car?",
    Subtask.MOTION_EGO: (
        "What is the next motion for the ego car? "
        + _COORD_FORMAT_HINT.format(unit="displacements")
    ),
    Subtask.MOTION_OTHERS: (
        "What is the next motion for {grounding}? "
        + _COORD_FORMAT_HINT.format(unit="displacements")
    ),
    Subtask.STATUS_EGO: "What's the next status for the ego car?",
    Subtask.STATUS_OTHERS: "What's the next status for {grounding}?",
    Subtask.OVERTAKING: "Do any objects overtake the ego car?",
    Subtask.ON_COMING: "Do any objects go on coming to the ego car?",
    Subtask.APPROACHING: "Do any objects approach the ego car?",
    Subtask.CROSSING: "Do any objects cross the head of the ego car?",
    Subtask.BRAKING: "Do any objects brake ahead of the ego car?",
    Subtask.LANE_CHANGING: "Do any objects change to the same lane of the ego car?",
    Subtask.PLANNING_WITH_REASONING: "Please give the next plan for the ego car with reasons.",
}

_RISK_CLAUSE: dict[Subtask, str] = {
    Subtask.OVERTAKING: "overtaking",
    Subtask.ON_COMING: "on coming",
    Subtask.APPROACHING: "approaching",
    Subtask.CROSSING: "crossing",
    Subtask.BRAKING: "braking",
    Subtask.LANE_CHANGING: "changing lanes",
}


def render_instruction(subtask: Subtask, context: Mapping[str, Any]) -> str:
    template = _INSTRUCTIONS[subtask]
    try:
        return template.format(**context)
    except KeyError as exc:
        raise TemplateError(
            f"instruction for {subtask.value} is missing context field {exc.args[0]!r}"
        ) from None


def _join_clauses(clauses: list[str]) -> str:
    if len(clauses) == 1:
        return clauses[0]
    return ", ".join(clauses[:-1]) + " and " + clauses[-1]


def render_response(subtask: Subtask, result: Any) -> tuple[str, GroundTruth]:
    """Deterministic response text plus the matching ground truth.

    Real values are printed at one decimal; counts are printed exactly; the
    ground truth always keeps full precision.
    """
    if subtask is Subtask.DISTANCE:
        x, y, _ = result
        return f"({x:.1f}, {y:.1f})", Numeric((x, y))
    if subtask is Subtask.CLOSEST:
        view, info = result
        text = (
            f"The closest object in {_view_phrase(view)} is "
            f"a {_category_phrase(info.category)}."
        )
        return text, Label(info.category)
    if subtask is Subtask.INSTANCE_NUMBER:
        view, category, count = result
        text = (
            f"There are {count} instances of {_category_phrase(category)} "
            f"in {_view_phrase(view)}."
        )
        return text, Numeric((float(count),))
    if subtask is Subtask.SPEEDS:
        return f"{result:.1f} m/s", Numeric((result,))
    if subtask is Subtask.STATUS:
        return f"It is {_category_phrase(result)}.", Label(result)
    if subtask is Subtask.SAME_ROAD:
        return ("Yes" if result else "No"), Label("yes" if result else "no")
    if subtask in (Subtask.MOTION_EGO, Subtask.MOTION_OTHERS):
        return f"({result.x:.1f}, {result.y:.1f})", Numeric((result.x, result.y))
    if subtask is Subtask.STATUS_EGO:
        _, motion = result
        label = "moving" if planar_norm(motion) > EGO_MOVING_DISPLACEMENT else "stationary"
        return f"The ego car will be {label}.", Label(label)
    if subtask is Subtask.STATUS_OTHERS:
        _, _, next_attribute = result
        return f"It will be {_category_phrase(next_attribute)}.", Label(next_attribute)
    if subtask in RISK_SUBTASKS:
        items: tuple[DetectionRef, ...] = tuple(result)
        if not items:
            return "No.", DetectionList(())
        refs = _join_clauses([format_grounding(d.view, d.bbox) for d in items])
        return f"Yes, {refs}.", DetectionList(items)
    if subtask is Subtask.PLANNING_WITH_REASONING:
        return _render_planning(result)
    raise TemplateError(f"no response template for {subtask!r}")


def _render_planning(result: PlanningResult) -> tuple[str, FreeText]:
    clauses: list[str] = []
    for kind in RISK_SUBTASKS:
        for info in result.risks.get(kind, ()):
            clauses.append(f"a {_category_phrase(info.category)} {_RISK_CLAUSE[kind]}")
    if clauses:
        lead = f"There are {_join_clauses(clauses)} the ego car."
    else:
        lead = "There are no risky objects around the ego car."
    dv = result.ego_speed_delta
    if dv > 0.1:
        speed_phrase = "speeding up"
    elif dv < -0.1:
        speed_phrase = "slowing down"
    else:
        speed_phrase = "keeping the current speed"
    if result.ego_motion.y > 0.5:
        direction = "the left"
    elif result.ego_motion.y < -0.5:
        direction = "the right"
    else:
        direction = "the front"
    text = f"{lead} Hence the ego car should be {speed_phrase} and move to {direction}."
    return text, FreeText(text)


# --------------------------------------------------------------------------
# Pair assembly.


def _pair_id(scene_id: str, window: tuple[str, str, str], subtask: Subtask, target: str) -> str:
    key = "|".join((scene_id, *window, subtask.value, target))
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


def _grounding_view(info: InstanceInfo) -> View:
    """Deterministic view choice for referencing an instance in text."""
    for view in View:
        if view in info.camera_pos:
            return view
    raise ValueError(f"instance {info.info_id!r} is visible in no view")


def _nearest_first(infos: Iterable[InstanceInfo], cap: int) -> list[InstanceInfo]:
    """Deterministic per-instance selection: nearest planar range first."""
    ranked = sorted(infos, key=lambda i: (planar_norm(i.local_t), i.info_id))
    return ranked[:cap]


def _make_pair(
    scene_id: str,
    window: tuple[str, str, str],
    subtask: Subtask,
    target: str,
    views_used: tuple[View, ...],
    instruction: str,
    response: str,
    ground_truth: GroundTruth,
    thresholds: RiskThresholds | None = None,
) -> InstructionResponsePair:
    return InstructionResponsePair(
        pair_id=_pair_id(scene_id, window, subtask, target),
        scene_id=scene_id,
        frame_ids=window,
        task=subtask.task.value,
        subtask=subtask,
        views_used=views_used,
        instruction=instruction,
        response=response,
        ground_truth=ground_truth,
        thresholds_used=thresholds,
    )


def _instance_views(info: InstanceInfo) -> tuple[View, ...]:
    return (_grounding_view(info),)


def _pairs_for_window(
    db: SceneDatabase,
    scene_id: str,
    window: tuple[str, str, str],
    config: GenerationConfig,
    diag: GenerationDiagnostics,
) -> list[InstructionResponsePair]:
    frame_prev, frame_i, frame_next = window
    cap = config.max_instances_per_subtask
    enabled = config.enabled_subtasks
    pairs: list[InstructionResponsePair] = []

    def grounded_instruction(subtask: Subtask, info: InstanceInfo) -> tuple[str, View]:
        view = _grounding_view(info)
        text = render_instruction(
            subtask, {"grounding": format_grounding(view, info.camera_pos[view])}
        )
        return text, view

    current = list(db.instances_in_frame(frame_i))
    selected = _nearest_first(current, cap)

    per_instance_perception = (
        (Subtask.DISTANCE, lambda info: distance(db, info.info_id)),
        (Subtask.SPEEDS, lambda info: speeds(db, info.info_id)),
        (Subtask.STATUS, lambda info: status(db, info.info_id)),
        (Subtask.SAME_ROAD, lambda info: same_road(db, info.info_id, frame_i)),
    )

    for subtask, op in per_instance_perception:
        if subtask not in enabled:
            continue
        for info in selected:
            instruction, view = grounded_instruction(subtask, info)
            response, truth = render_response(subtask, op(info))
            pairs.append(
                _make_pair(
                    scene_id, window, subtask, info.info_id, (view,), instruction, response, truth
                )
            )

    if Subtask.CLOSEST in enabled:
        nearest = closest(db, frame_i)
        for view in View:
            info = nearest.get(view)
            if info is None:
                continue
            instruction = render_instruction(Subtask.CLOSEST, {"view_phrase": _view_phrase(view)})
            response, truth = render_response(Subtask.CLOSEST, (view, info))
            views = _all_views_seen(current) if view is View.ALL else (view,)
            pairs.append(
                _make_pair(
                    scene_id, window, Subtask.CLOSEST, view.value, views, instruction, response, truth
                )
            )

    if Subtask.INSTANCE_NUMBER in enabled:
        counts = instance_number(db, frame_i)
        for view in View:
            per_view = counts[view]
            for category in sorted(per_view):
                instruction = render_instruction(
                    Subtask.INSTANCE_NUMBER,
                    {"category": _category_phrase(category), "view_phrase": _view_phrase(view)},
                )
                response, truth = render_response(
                    Subtask.INSTANCE_NUMBER, (view, category, per_view[category])
                )
                views = _all_views_seen(current) if view is View.ALL else (view,)
                pairs.append(
                    _make_pair(
                        scene_id,
                        window,
                        Subtask.INSTANCE_NUMBER,
                        f"{view.value}:{category}",
                        views,
                        instruction,
                        response,
                        truth,
                    )
                )

    shared_motion = motion_others(db, frame_i, frame_next)
    prediction_enabled = enabled & {Subtask.MOTION_OTHERS, Subtask.STATUS_OTHERS}
    if prediction_enabled:
        diag.skipped_instances += len(current) - len(shared_motion)

    if Subtask.MOTION_EGO in enabled:
        instruction = render_instruction(Subtask.MOTION_EGO, {})
        response, truth = render_response(Subtask.MOTION_EGO, motion_ego(db, frame_i, frame_next))
        pairs.append(
            _make_pair(
                scene_id, window, Subtask.MOTION_EGO, "ego", (View.FRONT,), instruction, response, truth
            )
        )

    if Subtask.MOTION_OTHERS in enabled:
        candidates = _nearest_first(
            (db.instances[i] for i in shared_motion), cap
        )
        for info in candidates:
            instruction, view = grounded_instruction(Subtask.MOTION_OTHERS, info)
            response, truth = render_response(Subtask.MOTION_OTHERS, shared_motion[info.info_id])
            pairs.append(
                _make_pair(
                    scene_id, window, Subtask.MOTION_OTHERS, info.info_id, (view,), instruction, response, truth
                )
            )

    if Subtask.STATUS_EGO in enabled:
        instruction = render_instruction(Subtask.STATUS_EGO, {})
        response, truth = render_response(Subtask.STATUS_EGO, status_ego(db, frame_i, frame_next))
        pairs.append(
            _make_pair(
                scene_id, window, Subtask.STATUS_EGO, "ego", (View.FRONT,), instruction, response, truth
            )
        )

    if Subtask.STATUS_OTHERS in enabled:
        deltas, motions = status_others(db, frame_i, frame_next)
        candidates = _nearest_first((db.instances[i] for i in motions), cap)
        for info in candidates:
            follower = db.instance_at_frame(info.instance_id, frame_next)
            assert follower is not None
            instruction, view = grounded_instruction(Subtask.STATUS_OTHERS, info)
            response, truth = render_response(
                Subtask.STATUS_OTHERS,
                (deltas[info.info_id], motions[info.info_id], follower.attribute),
            )
            pairs.append(
                _make_pair(
                    scene_id, window, Subtask.STATUS_OTHERS, info.info_id, (view,), instruction, response, truth
                )
            )

    risk_enabled = [k for k in RISK_SUBTASKS if k in enabled]
    if risk_enabled or Subtask.PLANNING_WITH_REASONING in enabled:
        full_window = sum(
            1
            for info in current
            if db.instance_at_frame(info.instance_id, frame_prev) is None
            or db.instance_at_frame(info.instance_id, frame_next) is None
        )
        diag.skipped_instances += full_window

    for kind in risk_enabled:
        hits = detect_risk(db, kind, frame_prev, frame_i, frame_next, config.thresholds)
        items = tuple(
            DetectionRef(
                view=_grounding_view(info),
                bbox=info.camera_pos[_grounding_view(info)],
                instance_id=info.instance_id,
            )
            for info in hits
        )
        instruction = render_instruction(kind, {})
        response, truth = render_response(kind, items)
        views = tuple(dict.fromkeys(d.view for d in items)) or (View.FRONT,)
        pairs.append(
            _make_pair(
                scene_id, window, kind, "risk", views, instruction, response, truth, config.thresholds
            )
        )

    if Subtask.PLANNING_WITH_REASONING in enabled:
        result = planning_with_reasoning(db, frame_prev, frame_i, frame_next, config.thresholds)
        instruction = render_instruction(Subtask.PLANNING_WITH_REASONING, {})
        response, truth = render_response(Subtask.PLANNING_WITH_REASONING, result)
        contributing = tuple(
            dict.fromkeys(
                _grounding_view(info)
                for kind in RISK_SUBTASKS
                for info in result.risks[kind]
            )
        ) or (View.FRONT,)
        pairs.append(
            _make_pair(
                scene_id,
                window,
                Subtask.PLANNING_WITH_REASONING,
                "plan",
                contributing,
                instruction,
                response,
                truth,
                config.thresholds,
            )
        )

    return pairs


def _all_views_seen(infos: list[InstanceInfo]) -> tuple[View, ...]:
    seen = [v for v in View if any(v in info.camera_pos for info in infos)]
    return tuple(seen) or (View.FRONT,)


def _generate_scene(
    db: SceneDatabase, scene_id: str, config: GenerationConfig
) -> tuple[list[InstructionResponsePair], GenerationDiagnostics]:
    diag = GenerationDiagnostics(eligible_scenes=1)
    scene = db.scenes[scene_id]
    rng = random.Random(derive_scene_seed(config.master_seed, scene_id))
    windows: list[tuple[str, str, str]] = []
    for _ in range(config.windows_per_scene):
        window = sample_window(scene, rng)
        diag.windows_sampled += 1
        if window not in windows:
            windows.append(window)
    diag.windows_unique += len(windows)

    pairs: list[InstructionResponsePair] = []
    for window in windows:
        try:
            pairs.extend(_pairs_for_window(db, scene_id, window, config, diag))
        except Exception as exc:  # noqa: BLE001 - diagnosed, not fatal
            diag.pair_failures += 1
            diag.failure_messages.append(f"{scene_id}/{window}: {exc}")
    return pairs, diag


def _scene_job(args: tuple[SceneDatabase, str, GenerationConfig]):
    return _generate_scene(*args)


def generate_dataset(
    db: SceneDatabase, config: GenerationConfig, *, jobs: int = 1
) -> tuple[list[InstructionResponsePair], GenerationDiagnostics]:
    """Generate pairs for every eligible scene.

    Scenes are processed independently, each from its own derived seed, so
    any worker count yields the same pair list: scenes in sorted order,
    windows in sampling order, subtasks in declaration order.
    """
    if config.windows_per_scene < 1:
        raise ValueError("windows_per_scene must be at least 1")
    if config.max_instances_per_subtask < 1:
        raise ValueError("max_instances_per_subtask must be at least 1")
    diag = GenerationDiagnostics()
    eligible = []
    for scene_id in sorted(db.scenes):
        if len(db.scenes[scene_id].frame_ids) >= 3:
            eligible.append(scene_id)
        else:
            diag.ineligible_scenes += 1

    results: list[tuple[list[InstructionResponsePair], GenerationDiagnostics]]
    if jobs <= 1 or len(eligible) <= 1:
        results = [_generate_scene(db, scene_id, config) for scene_id in eligible]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_scene_job, [(db, s, config) for s in eligible]))

    pairs: list[InstructionResponsePair] = []
    for scene_pairs, scene_diag in results:
        pairs.extend(scene_pairs)
        diag.merge(scene_diag)
    return pairs, diag


# --------------------------------------------------------------------------
# JSON serialization of pairs.


def ground_truth_to_dict(truth: GroundTruth) -> dict[str, Any]:
    if isinstance(truth, Numeric):
        return {"kind": "numeric", "values": list(truth.values)}
    if isinstance(truth, Label):
        return {"kind": "label", "value": truth.value}
    if isinstance(truth, DetectionList):
        return {
            "kind": "detection",
            "items": [
                {"view": d.view.value, "bbox": d.bbox.as_list(), "instance_id": d.instance_id}
                for d in truth.items
            ],
        }
    if isinstance(truth, FreeText):
        return {"kind": "free_text", "text": truth.text}
    raise TypeError(f"unknown ground truth {truth!r}")


def ground_truth_from_dict(doc: Mapping[str, Any]) -> GroundTruth:
    kind = doc.get("kind")
    if kind == "numeric":
        return Numeric(tuple(float(v) for v in doc["values"]))
    if kind == "label":
        return Label(str(doc["value"]))
    if kind == "detection":
        return DetectionList(
            tuple(
                DetectionRef(
                    view=View(item["view"]),
                    bbox=BBox2D(*[float(c) for c in item["bbox"]]),
                    instance_id=str(item["instance_id"]),
                )
                for item in doc["items"]
            )
        )
    if kind == "free_text":
        return FreeText(str(doc["text"]))
    raise ValueError(f"unknown ground truth kind {kind!r}")


def pair_to_dict(pair: InstructionResponsePair) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "pair_id": pair.pair_id,
        "scene_id": pair.scene_id,
        "frame_ids": list(pair.frame_ids),
        "task": pair.task,
        "subtask": pair.subtask.value,
        "views_used": [v.value for v in pair.views_used],
        "instruction": pair.instruction,
        "response": pair.response,
        "ground_truth": ground_truth_to_dict(pair.ground_truth),
    }
    if pair.thresholds_used is not None:
        doc["thresholds_used"] = pair.thresholds_used.as_dict()
    return doc


def pair_from_dict(doc: Mapping[str, Any]) -> InstructionResponsePair:
    thresholds = None
    if "thresholds_used" in doc:
        t = doc["thresholds_used"]
        thresholds = RiskThresholds(
            dis=float(t["dis"]), dis_x=float(t["dis_x"]), dis_y=float(t["dis_y"]), s=float(t["s"])
        )
    frame_ids = tuple(str(f) for f in doc["frame_ids"])
    if len(frame_ids) != 3:
        raise ValueError(f"pair {doc.get('pair_id')!r} must reference exactly 3 frames")
    return InstructionResponsePair(
        pair_id=str(doc["pair_id"]),
        scene_id=str(doc["scene_id"]),
        frame_ids=frame_ids,  # type: ignore[arg-type]
        task=str(doc["task"]),
        subtask=Subtask(doc["subtask"]),
        views_used=tuple(View(v) for v in doc["views_used"]),
        instruction=str(doc["instruction"]),
        response=str(doc["response"]),
        ground_truth=ground_truth_from_dict(doc["ground_truth"]),
        thresholds_used=thresholds,
    )


def write_pairs_jsonl(pairs: Iterable[InstructionResponsePair], path: str | Path) -> None:
    lines = "".join(canonical_dumps(pair_to_dict(p)) + "\n" for p in pairs)
    Path(path).write_text(lines, encoding="utf-8")


def read_pairs_jsonl(path: str | Path) -> list[InstructionResponsePair]:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            pairs.append(pair_from_dict(json.loads(line)))
    return pairs


# --------------------------------------------------------------------------
# Verification.


@dataclass
class VerificationResult:
    kept: list[InstructionResponsePair]
    rejected: list[tuple[str, str]]
    unverified: set[str] = field(default_factory=set)
    revised: set[str] = field(default_factory=set)


_FAMILY_OF_TRUTH = {
    Numeric: (
        Subtask.DISTANCE,
        Subtask.INSTANCE_NUMBER,
        Subtask.SPEEDS,
        Subtask.MOTION_EGO,
        Subtask.MOTION_OTHERS,
    ),
    Label: (
        Subtask.CLOSEST,
        Subtask.STATUS,
        Subtask.SAME_ROAD,
        Subtask.STATUS_EGO,
        Subtask.STATUS_OTHERS,
    ),
    DetectionList: RISK_SUBTASKS,
    FreeText: (Subtask.PLANNING_WITH_REASONING,),
}


def offline_check(pair: InstructionResponsePair, db: SceneDatabase | None = None) -> str | None:
    """Reason the pair breaks a format rule, or None when it is clean."""
    if len(pair.frame_ids) != 3:
        return "pair must reference exactly three frames"
    truth = pair.ground_truth
    family = next(
        (kinds for cls, kinds in _FAMILY_OF_TRUTH.items() if isinstance(truth, cls)), ()
    )
    if pair.subtask not in family:
        return f"ground truth type does not fit subtask {pair.subtask.value}"
    if isinstance(truth, Numeric):
        if any(not math.isfinite(v) for v in truth.values):
            return "ground truth contains a non-finite value"
        found = extract_numbers(pair.response)
        if len(found) < len(truth.values):
            return (
                f"response has {len(found)} parseable numbers, "
                f"needs {len(truth.values)}"
            )
        if any(not math.isfinite(v) for v in found[: len(truth.values)]):
            return "response numbers are not finite"
    elif isinstance(truth, Label):
        if not truth.value:
            return "empty reference label"
        mentions = count_mentions(tokenize(pair.response), truth.value)
        if mentions != 1:
            return f"response mentions the reference label {mentions} times, needs exactly 1"
    elif isinstance(truth, DetectionList):
        if pair.thresholds_used is None:
            return "risk pair is missing its thresholds"
        if not truth.items and pair.response != "No.":
            return "empty detection list requires the response 'No.'"
        if truth.items and pair.response == "No.":
            return "non-empty detection list contradicts the response 'No.'"
        for det in truth.items:
            if det.view is View.ALL:
                return "detections must name a concrete view"
            box = det.bbox
            if not (
                0.0 <= box.x1 < box.x2 <= IMAGE_WIDTH and 0.0 <= box.y1 < box.y2 <= IMAGE_HEIGHT
            ):
                return "detection box leaves the image bounds"
            if not det.instance_id:
                return "detection references an empty instance id"
            if db is not None and not any(
                db.instance_at_frame(det.instance_id, f) for f in pair.frame_ids
            ):
                return f"detection references unknown instance {det.instance_id!r}"
            if format_grounding(det.view, det.bbox) not in pair.response:
                return "response does not mention every detection"
    elif isinstance(truth, FreeText):
        if pair.thresholds_used is None:
            return "planning pair is missing its thresholds"
        if pair.response != truth.text:
            return "free text ground truth must equal the response"
    return None


def _post_json(url: str, payload: dict[str, Any], timeout_s: float) -> dict[str, Any]:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    with urllib.request.urlopen(request, timeout=timeout_s) as response:
        return json.loads(response.read().decode("utf-8"))


def _consult_external(
    client: ExternalClient, pair: InstructionResponsePair
) -> dict[str, Any] | None:
    payload = {
        "pair_id": pair.pair_id,
        "instruction": pair.instruction,
        "response": pair.response,
        "subtask": pair.subtask.value,
        "ground_truth": ground_truth_to_dict(pair.ground_truth),
    }
    for attempt in range(client.retries + 1):
        try:
            return _post_json(client.endpoint, payload, client.timeout_s)
        except (urllib.error.URLError, TimeoutError, OSError, ValueError):
            if attempt < client.retries:
                time.sleep(0.05)
    return None


def _apply_verdict(
    pair: InstructionResponsePair, reply: Mapping[str, Any]
) -> tuple[InstructionResponsePair | None, bool]:
    """Returns the surviving pair (None for drop) and a revised flag."""
    verdict = reply.get("verdict")
    if verdict == "keep":
        return pair, False
    if verdict == "drop":
        return None, False
    if verdict == "revise":
        revised = reply.get("revised_response")
        if not isinstance(revised, str) or not revised:
            raise VerifierProtocolError("revise verdict without a revised_response")
        truth = pair.ground_truth
        if isinstance(truth, FreeText):
            truth = FreeText(revised)
        return dataclasses.replace(pair, response=revised, ground_truth=truth), True
    raise VerifierProtocolError(f"unknown verdict {verdict!r}")


def verify_pairs(
    pairs: Iterable[InstructionResponsePair],
    config: GenerationConfig,
    db: SceneDatabase | None = None,
) -> VerificationResult:
    """Apply offline format rules, then the external reviewer if configured.

    A pair that fails an offline rule is rejected with a reason. When the
    external service stays unreachable through all retries the pair is kept
    and flagged unverified.
    """
    result = VerificationResult(kept=[], rejected=[])
    survivors: list[InstructionResponsePair] = []
    for pair in pairs:
        reason = offline_check(pair, db)
        if reason is None:
            survivors.append(pair)
        else:
            result.rejected.append((pair.pair_id, f"format contract: {reason}"))

    client = config.verifier if isinstance(config.verifier, ExternalClient) else None
    for pair in survivors:
        if client is None:
            result.kept.append(pair)
            continue
        reply = _consult_external(client, pair)
        if reply is None:
            result.unverified.add(pair.pair_id)
            result.kept.append(pair)
            continue
        try:
            updated, revised = _apply_verdict(pair, reply)
        except VerifierProtocolError:
            result.unverified.add(pair.pair_id)
            result.kept.append(pair)
            continue
        if updated is None:
            result.rejected.append((pair.pair_id, str(reply.get("reason") or "dropped by verifier")))
            continue
        if revised:
            result.revised.add(pair.pair_id)
        result.kept.append(updated)
    return result
