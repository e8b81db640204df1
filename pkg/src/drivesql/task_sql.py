"""Windowed query operations over the scene database.

Each public function answers one subtask for a window of up to three
consecutive keyframes (previous, current, next). Perception subtasks read
the current frame, prediction subtasks relate the current frame to the next
one, and risk detection relates all three.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import NonConsecutiveFrames
from .geometry import Vec3, planar_norm, relative_motion
from .scene_db import InstanceInfo, SceneDatabase, View


class Task(Enum):
    PERCEPTION = "perception"
    PREDICTION = "prediction"
    RISK = "risk"
    PLANNING_WITH_REASONING = "planning_with_reasoning"


class Subtask(Enum):
    DISTANCE = "distance"
    CLOSEST = "closest"
    INSTANCE_NUMBER = "instance_number"
    SPEEDS = "speeds"
    STATUS = "status"
    SAME_ROAD = "same_road"
    MOTION_EGO = "motion_ego"
    MOTION_OTHERS = "motion_others"
    STATUS_EGO = "status_ego"
    STATUS_OTHERS = "status_others"
    OVERTAKING = "overtaking"
    ON_COMING = "on_coming"
    APPROACHING = "approaching"
    CROSSING = "crossing"
    BRAKING = "braking"
    LANE_CHANGING = "lane_changing"
    PLANNING_WITH_REASONING = "planning_with_reasoning"

    @property
    def task(self) -> Task:
        return _TASK_OF[self]


RISK_SUBTASKS: tuple[Subtask, ...] = (
    Subtask.OVERTAKING,
    Subtask.ON_COMING,
    Subtask.APPROACHING,
    Subtask.CROSSING,
    Subtask.BRAKING,
    Subtask.LANE_CHANGING,
)

_TASK_OF = {
    Subtask.DISTANCE: Task.PERCEPTION,
    Subtask.CLOSEST: Task.PERCEPTION,
    Subtask.INSTANCE_NUMBER: Task.PERCEPTION,
    Subtask.SPEEDS: Task.PERCEPTION,
    Subtask.STATUS: Task.PERCEPTION,
    Subtask.SAME_ROAD: Task.PERCEPTION,
    Subtask.MOTION_EGO: Task.PREDICTION,
    Subtask.MOTION_OTHERS: Task.PREDICTION,
    Subtask.STATUS_EGO: Task.PREDICTION,
    Subtask.STATUS_OTHERS: Task.PREDICTION,
    **{kind: Task.RISK for kind in RISK_SUBTASKS},
    Subtask.PLANNING_WITH_REASONING: Task.PLANNING_WITH_REASONING,
}


@dataclass(frozen=True)
class RiskThresholds:
    """Distance and speed gates shared by the six risk predicates.

    ``dis`` bounds lateral offsets and planar ranges in meters, ``dis_x``
    and ``dis_y`` bound longitudinal and lateral displacement deltas, and
    ``s`` splits slow from moving in meters per second.
    """

    dis: float = 20.0
    dis_x: float = 3.0
    dis_y: float = 3.0
    s: float = 0.5

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if not (isinstance(value, (int, float)) and value > 0):
                raise ValueError(f"threshold {name} must be positive, got {value!r}")

    def as_dict(self) -> dict[str, float]:
        return {"dis": self.dis, "dis_x": self.dis_x, "dis_y": self.dis_y, "s": self.s}


@dataclass(frozen=True)
class PlanningResult:
    """Risk summary plus the ego's own speed change and next displacement."""

    risks: dict[Subtask, tuple[InstanceInfo, ...]]
    ego_speed_delta: float
    ego_motion: Vec3


# ---------------------------------------------------------------- perception


def distance(db: SceneDatabase, instance_info_id: str) -> tuple[float, float, float]:
    """Planar offsets of an instance in the ego frame plus their norm."""
    info: InstanceInfo = db.query("instance", instance_info_id)
    x, y = info.local_t.x, info.local_t.y
    return x, y, planar_norm(info.local_t)


def closest(db: SceneDatabase, frame_id: str) -> dict[View, InstanceInfo]:
    """Nearest instance per view, including the union view.

    Distance is the planar ego range; ties go to the smaller info id. Views
    with no visible instance are absent from the result.
    """
    best: dict[View, InstanceInfo] = {}

    def consider(view: View, info: InstanceInfo) -> None:
        cur = best.get(view)
        if cur is None:
            best[view] = info
            return
        d_new, d_cur = planar_norm(info.local_t), planar_norm(cur.local_t)
        if d_new < d_cur or (d_new == d_cur and info.info_id < cur.info_id):
            best[view] = info

    for info in db.instances_in_frame(frame_id):
        for view in info.camera_pos:
            consider(view, info)
        consider(View.ALL, info)
    return best


def instance_number(db: SceneDatabase, frame_id: str) -> dict[View, dict[str, int]]:
    """Category counts per view; a missing category means a count of zero.

    The union view counts each frame instance exactly once, regardless of
    how many cameras see it.
    """
    counts: dict[View, dict[str, int]] = {view: {} for view in View}
    for info in db.instances_in_frame(frame_id):
        for view in info.camera_pos:
            per_view = counts[view]
            per_view[info.category] = per_view.get(info.category, 0) + 1
        union = counts[View.ALL]
        union[info.category] = union.get(info.category, 0) + 1
    return counts


def speeds(db: SceneDatabase, instance_info_id: str) -> float:
    """Annotated speed of the appearance row, in meters per second."""
    info: InstanceInfo = db.query("instance", instance_info_id)
    return info.velocity


def status(db: SceneDatabase, instance_info_id: str) -> str:
    """Annotated movement attribute of the appearance row."""
    info: InstanceInfo = db.query("instance", instance_info_id)
    return info.attribute


def same_road(db: SceneDatabase, instance_info_id: str, frame_id: str) -> bool:
    """Whether the instance's road map equals the ego's at this frame."""
    info: InstanceInfo = db.query("instance", instance_info_id)
    return info.road_info == db.ego_in_frame(frame_id).road_info


# ---------------------------------------------------------------- prediction


def motion_ego(db: SceneDatabase, frame_i: str, frame_next: str) -> Vec3:
    """Ego displacement to the target frame, in the current ego frame."""
    ego_i = db.ego_in_frame(frame_i)
    ego_next = db.ego_in_frame(frame_next)
    return relative_motion(ego_i.pose, ego_i.rotation, ego_next.pose)


def motion_others(db: SceneDatabase, frame_i: str, frame_next: str) -> dict[str, Vec3]:
    """Per-instance displacement to the target frame, in each own frame.

    Keys are the instance info ids at ``frame_i``. Instances with no
    appearance at the target frame are omitted.
    """
    out: dict[str, Vec3] = {}
    for info in db.instances_in_frame(frame_i):
        target = db.instance_at_frame(info.instance_id, frame_next)
        if target is None:
            continue
        out[info.info_id] = relative_motion(info.global_t, info.global_r, target.global_t)
    return out


def status_ego(db: SceneDatabase, frame_i: str, frame_next: str) -> tuple[float, Vec3]:
    """Ego speed change and displacement toward the target frame."""
    dv = db.ego_in_frame(frame_next).velocity - db.ego_in_frame(frame_i).velocity
    return dv, motion_ego(db, frame_i, frame_next)


def status_others(
    db: SceneDatabase, frame_i: str, frame_next: str
) -> tuple[dict[str, float], dict[str, Vec3]]:
    """Speed deltas and displacements for instances shared by both frames.

    Both maps are keyed by the ``frame_i`` info id and always hold exactly
    the same keys.
    """
    motions = motion_others(db, frame_i, frame_next)
    deltas: dict[str, float] = {}
    for info_id in motions:
        info = db.instances[info_id]
        target = db.instance_at_frame(info.instance_id, frame_next)
        assert target is not None  # guaranteed by the motion map
        deltas[info_id] = target.velocity - info.velocity
    return deltas, motions


# ---------------------------------------------------------------------- risk


def _check_window(db: SceneDatabase, *frame_ids: str) -> None:
    for frame_id in frame_ids:
        db.query("frame", frame_id)
    if not db.are_consecutive(*frame_ids):
        raise NonConsecutiveFrames(
            f"frames {frame_ids!r} are not consecutive keyframes of one scene"
        )


@dataclass(frozen=True)
class _RiskContext:
    m_prev: Vec3
    m_next: Vec3 | None
    l_i: float
    l_prev: float
    v_i: float
    v_prev: float
    same_now: bool
    same_prev: bool


def _overtaking(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.m_prev.x < 0
        and c.m_next.x > 0
        and abs(c.m_prev.y) < t.dis
        and abs(c.m_next.y) < t.dis
        and c.v_i > 0
        and c.v_prev > 0
    )


def _on_coming(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.m_prev.x > 0
        and c.m_next.x > 0
        and c.m_next.x < c.m_prev.x
        and abs(c.m_prev.y) < t.dis
        and abs(c.m_next.y) < t.dis
        and abs(c.m_next.y - c.m_prev.y) < t.dis
        and c.v_i > 0
        and c.v_prev > 0
    )


def _approaching(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.m_next.x < c.m_prev.x
        and abs(c.m_prev.y) < t.dis
        and abs(c.m_next.y) < t.dis
        and abs(c.m_next.y - c.m_prev.y) < t.dis
        and c.v_i > 0
        and c.v_prev > 0
    )


def _crossing(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.l_i < t.dis
        and c.l_prev < t.dis
        and abs(c.m_next.x - c.m_prev.x) < t.dis_x
        and abs(c.m_next.y - c.m_prev.y) > t.dis_y
        and c.v_i > 0
        and c.v_prev > 0
    )


def _braking(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.l_i < c.l_prev < t.dis
        and abs(c.m_next.x - c.m_prev.x) > t.dis_x
        and abs(c.m_next.y) < t.dis_y
        and abs(c.m_prev.y) < t.dis_y
        and c.v_prev > t.s
        and c.v_i < t.s
    )


def _lane_changing(c: _RiskContext, t: RiskThresholds) -> bool:
    return (
        c.l_i < c.l_prev < t.dis
        and c.same_now
        and not c.same_prev
        and c.v_prev > t.s
        and c.v_i > t.s
    )


# Literal transcriptions of the published predicate tables, kept behind a
# compatibility switch. The overtaking row contradicts itself (x < 0 and
# x > 0), so it never fires, and lateral bounds compare signed values.
def _overtaking_literal(c: _RiskContext, t: RiskThresholds) -> bool:
    return (
        c.m_prev.x < 0
        and c.m_prev.x > 0
        and c.m_prev.y < t.dis
        and c.m_prev.y < t.dis
        and c.v_i > 0
        and c.v_prev > 0
    )


def _on_coming_literal(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.m_prev.x > 0
        and c.m_prev.x > 0
        and c.m_next.x < c.m_prev.x
        and c.m_prev.y < t.dis
        and c.m_next.y < t.dis
        and abs(c.m_next.y - c.m_prev.y) < t.dis
        and c.v_i > 0
        and c.v_prev > 0
    )


def _approaching_literal(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.m_next.x < c.m_prev.x
        and c.m_prev.y < t.dis
        and c.m_next.y < t.dis
        and abs(c.m_next.y - c.m_prev.y) < t.dis
        and c.v_i > 0
        and c.v_prev > 0
    )


def _braking_literal(c: _RiskContext, t: RiskThresholds) -> bool:
    assert c.m_next is not None
    return (
        c.l_i < c.l_prev < t.dis
        and abs(c.m_next.x - c.m_prev.x) > t.dis_x
        and c.m_next.y < t.dis_y
        and c.m_prev.y < t.dis_y
        and c.v_prev > t.s
        and c.v_i < t.s
    )


_PREDICATES = {
    Subtask.OVERTAKING: _overtaking,
    Subtask.ON_COMING: _on_coming,
    Subtask.APPROACHING: _approaching,
    Subtask.CROSSING: _crossing,
    Subtask.BRAKING: _braking,
    Subtask.LANE_CHANGING: _lane_changing,
}

_PREDICATES_LITERAL = {
    Subtask.OVERTAKING: _overtaking_literal,
    Subtask.ON_COMING: _on_coming_literal,
    Subtask.APPROACHING: _approaching_literal,
    Subtask.CROSSING: _crossing,
    Subtask.BRAKING: _braking_literal,
    Subtask.LANE_CHANGING: _lane_changing,
}

# Lane changing only compares the current frame against the previous one;
# every other predicate also needs the instance at the next frame.
_NEEDS_NEXT = {kind: kind is not Subtask.LANE_CHANGING for kind in RISK_SUBTASKS}


def detect_risk(
    db: SceneDatabase,
    kind: Subtask,
    frame_prev: str,
    frame_i: str,
    frame_next: str,
    thresholds: RiskThresholds = RiskThresholds(),
    *,
    literal: bool = False,
) -> list[InstanceInfo]:
    """Instances at the current frame whose window matches one risk kind.

    Instances missing an appearance at a frame the predicate needs are
    skipped. ``literal`` switches to the uncorrected predicate table.
    """
    if kind not in RISK_SUBTASKS:
        raise ValueError(f"{kind} is not a risk kind")
    _check_window(db, frame_prev, frame_i, frame_next)
    predicate = (_PREDICATES_LITERAL if literal else _PREDICATES)[kind]
    m_prev_map = motion_others(db, frame_i, frame_prev)
    m_next_map = motion_others(db, frame_i, frame_next)
    ego_road_prev = db.ego_in_frame(frame_prev).road_info
    ego_road_i = db.ego_in_frame(frame_i).road_info

    hits: list[InstanceInfo] = []
    for info in db.instances_in_frame(frame_i):
        prev = db.instance_at_frame(info.instance_id, frame_prev)
        if prev is None:
            continue
        m_prev = m_prev_map.get(info.info_id)
        if m_prev is None:
            continue
        m_next = m_next_map.get(info.info_id)
        if _NEEDS_NEXT[kind] and m_next is None:
            continue
        ctx = _RiskContext(
            m_prev=m_prev,
            m_next=m_next,
            l_i=planar_norm(info.local_t),
            l_prev=planar_norm(prev.local_t),
            v_i=info.velocity,
            v_prev=prev.velocity,
            same_now=info.road_info == ego_road_i,
            same_prev=prev.road_info == ego_road_prev,
        )
        if predicate(ctx, thresholds):
            hits.append(info)
    return hits


def planning_with_reasoning(
    db: SceneDatabase,
    frame_prev: str,
    frame_i: str,
    frame_next: str,
    thresholds: RiskThresholds = RiskThresholds(),
) -> PlanningResult:
    """Combine all six risk detections with the ego's own next move."""
    risks = {
        kind: tuple(detect_risk(db, kind, frame_prev, frame_i, frame_next, thresholds))
        for kind in RISK_SUBTASKS
    }
    dv, motion = status_ego(db, frame_i, frame_next)
    return PlanningResult(risks=risks, ego_speed_delta=dv, ego_motion=motion)
