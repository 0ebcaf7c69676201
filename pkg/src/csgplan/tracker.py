"""Greedy IoU multi-object tracker.

Stand-in for a full MOT tracker: same interface (detections in, tracked
detections out) without motion models.  Matching is class-gated and greedy by
descending IoU; ties go to the lower track id, then the lower detection index.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .stream import BBox, Detection, Frame


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


@dataclass(frozen=True)
class TrackedDetection:
    detection: Detection
    track_id: int

    @property
    def class_label(self) -> str:
        return self.detection.class_label

    @property
    def bbox(self) -> BBox:
        return self.detection.bbox

    @property
    def confidence(self) -> float:
        return self.detection.confidence


@dataclass(frozen=True)
class Track:
    track_id: int
    bbox: BBox
    class_label: str
    frames_since_seen: int = 0


@dataclass(frozen=True)
class TrackerState:
    tracks: tuple[Track, ...] = ()
    next_id: int = 0
    iou_match_threshold: float = 0.3
    max_age: int = 10


def associate(state: TrackerState, frame: Frame) -> tuple[TrackerState, list[TrackedDetection]]:
    """Assign track ids to the frame's detections.

    Pure: returns a new state.  Output order follows the detection order.
    """
    dets = frame.detections
    candidates = []
    for ti, trk in enumerate(state.tracks):
        for di, det in enumerate(dets):
            if det.class_label != trk.class_label:
                continue
            score = iou(trk.bbox, det.bbox)
            if score >= state.iou_match_threshold and score > 0.0:
                candidates.append((-score, trk.track_id, di, ti))
    candidates.sort()

    det_track: dict[int, int] = {}
    used_tracks: set[int] = set()
    for _, tid, di, ti in candidates:
        if di in det_track or ti in used_tracks:
            continue
        det_track[di] = ti
        used_tracks.add(ti)

    next_id = state.next_id
    tracks: list[Track] = []
    out: list[TrackedDetection] = []
    matched_by_det = {}
    for di, ti in det_track.items():
        trk = state.tracks[ti]
        matched_by_det[di] = replace(trk, bbox=dets[di].bbox, frames_since_seen=0)

    for ti, trk in enumerate(state.tracks):
        if ti in used_tracks:
            continue
        age = trk.frames_since_seen + 1
        if age <= state.max_age:
            tracks.append(replace(trk, frames_since_seen=age))

    for di, det in enumerate(dets):
        trk = matched_by_det.get(di)
        if trk is None:
            trk = Track(next_id, det.bbox, det.class_label)
            next_id += 1
        tracks.append(trk)
        out.append(TrackedDetection(det, trk.track_id))

    tracks.sort(key=lambda t: t.track_id)
    return replace(state, tracks=tuple(tracks), next_id=next_id), out


@dataclass
class Tracker:
    """Mutable convenience wrapper that owns a TrackerState."""

    state: TrackerState = field(default_factory=TrackerState)

    def update(self, frame: Frame) -> list[TrackedDetection]:
        self.state, tracked = associate(self.state, frame)
        return tracked
