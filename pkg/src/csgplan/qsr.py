"""Qualitative spatial relations derived from tracked boxes.

Directions are measured in image space around the reference centroid (y grows
downward, so "above" means a smaller y).  The plane is split into four sectors
by the two diagonals; a centroid exactly on a diagonal goes to left/right.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .layering import LayeredRelation, LayerId
from .tracker import TrackedDetection, iou

log = logging.getLogger(__name__)

SPATIAL_PREDICATES = ("left_of", "right_of", "above", "below", "inside")
HOLDING = "holding"


@dataclass(frozen=True)
class ReferenceSystem:
    reference_class: str = "plate"
    hand_classes: frozenset[str] = field(default_factory=lambda: frozenset({"hand", "person"}))


def _centroid(bbox):
    return (bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0


def direction(point, ref_bbox) -> str:
    """Spatial predicate of ``point`` relative to ``ref_bbox``."""
    px, py = point
    if ref_bbox[0] <= px <= ref_bbox[2] and ref_bbox[1] <= py <= ref_bbox[3]:
        return "inside"
    cx, cy = _centroid(ref_bbox)
    dx, dy = px - cx, py - cy
    if abs(dx) >= abs(dy):
        return "left_of" if dx < 0 else "right_of"
    return "above" if dy < 0 else "below"


def resolve_reference(tracked: Sequence[TrackedDetection], ref: ReferenceSystem) -> TrackedDetection | None:
    candidates = [t for t in tracked if t.class_label == ref.reference_class]
    if not candidates:
        return None
    if len(candidates) > 1:
        log.info(
            "%d instances of reference class %r; keeping the most confident",
            len(candidates),
            ref.reference_class,
        )
    return min(candidates, key=lambda t: (-t.confidence, t.track_id))


def derive_relations(
    tracked: Sequence[TrackedDetection],
    ref: ReferenceSystem,
    holding_iou_threshold: float = 0.1,
) -> list[LayeredRelation]:
    """Spatial relations to the reference plus hand-object holding relations.

    Hands are effectors and get no spatial predicate.  Each hand keeps only
    its highest-IoU object (ties to the lower track id).  Confidence of a
    derived relation is the lower of its two detection confidences.
    """
    out: list[LayeredRelation] = []
    reference = resolve_reference(tracked, ref)
    hands = [t for t in tracked if t.class_label in ref.hand_classes]
    objects = [t for t in tracked if t.class_label not in ref.hand_classes]

    if reference is not None:
        rb = reference.bbox
        for o in objects:
            if o.track_id == reference.track_id:
                continue
            pred = direction(_centroid(o.bbox), rb)
            out.append(
                LayeredRelation(
                    o.track_id,
                    reference.track_id,
                    pred,
                    LayerId.TOPOLOGICAL,
                    min(o.confidence, reference.confidence),
                )
            )

    for h in hands:
        best = None
        for o in objects:
            score = iou(h.bbox, o.bbox)
            if score >= holding_iou_threshold and score > 0.0:
                key = (-score, o.track_id)
                if best is None or key < best[0]:
                    best = (key, o)
        if best is not None:
            o = best[1]
            out.append(
                LayeredRelation(
                    h.track_id, o.track_id, HOLDING, LayerId.FUNCTIONAL, min(h.confidence, o.confidence)
                )
            )
    return out


def held_objects(relations: Iterable[LayeredRelation]) -> set[int]:
    return {r.object for r in relations if r.layer is LayerId.FUNCTIONAL and r.predicate == HOLDING}
