"""Scripted demonstrations rendered from the simulated world.

A script is a list of ``(object, relation)`` moves.  Each move is a forced
successful pick followed by a forced successful place, so demonstrations and
policy executions share the same motion model.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterator, Sequence

from ..errors import ValidationError
from ..qsr import SPATIAL_PREDICATES, ReferenceSystem, derive_relations
from ..stream import Detection, Frame, RawRelation
from ..tracker import TrackedDetection
from .world import ZONES, PolicyRun, PolicySpec, WorldState

Move = tuple[str, str]


@dataclass(frozen=True)
class NoiseConfig:
    label_flip: float = 0.0
    bbox_jitter: float = 0.0
    emit_relations: bool = False

    def __post_init__(self):
        if not 0.0 <= self.label_flip <= 1.0:
            raise ValidationError("label_flip", f"{self.label_flip!r} not in [0, 1]")
        if self.bbox_jitter < 0:
            raise ValidationError("bbox_jitter", "must be >= 0")


@dataclass(frozen=True)
class DemoTiming:
    lead_in: int = 5
    gap: int = 5
    tail: int = 30
    duration: int = 30
    retreat: int = 20


def validate_script(world: WorldState, script: Sequence[Move]) -> list[Move]:
    out = []
    for i, move in enumerate(script):
        if len(move) != 2:
            raise ValidationError(f"script[{i}]", "expected [object, relation]")
        obj, rel = str(move[0]), str(move[1])
        e = world.entities.get(obj)
        if e is None or not e.movable:
            raise ValidationError(f"script[{i}]", f"unknown movable object {obj!r}")
        if rel not in ZONES:
            raise ValidationError(f"script[{i}]", f"unknown target relation {rel!r}")
        out.append((obj, rel))
    return out


def load_script(path) -> list[Move]:
    """Script JSON: ``{"moves": [["knife", "right_of"], ...]}`` or a bare list."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    moves = obj["moves"] if isinstance(obj, dict) else obj
    return [tuple(m) for m in moves]


def _clean_frames(world: WorldState, script: Sequence[Move], timing: DemoTiming) -> Iterator[Frame]:
    for _ in range(timing.lead_in):
        yield world.render()
    for n, (obj, rel) in enumerate(script):
        cls = world.entities[obj].class_label
        pick = PolicyRun(world, PolicySpec(f"pick_{cls}", "pick", cls, duration=timing.duration), force_success=True)
        yield from pick.frames(world)
        place = PolicyRun(
            world, PolicySpec(f"place_{rel}", "place", rel, duration=timing.duration), timing.retreat, force_success=True
        )
        yield from place.frames(world)
        for _ in range(timing.gap if n + 1 < len(script) else timing.tail):
            yield world.render()
    if not script:
        for _ in range(timing.tail):
            yield world.render()


def _jitter(frame: Frame, sd: float, rng: random.Random) -> Frame:
    dets = []
    for d in frame.detections:
        x0, y0, x1, y1 = (min(max(v + rng.gauss(0.0, sd), 0.0), 1.0) for v in d.bbox)
        x0, x1 = min(x0, x1), max(x0, x1)
        y0, y1 = min(y0, y1), max(y0, y1)
        if x1 - x0 < 1e-3 or y1 - y0 < 1e-3:
            x0, y0, x1, y1 = d.bbox
        dets.append(Detection((x0, y0, x1, y1), d.class_label, d.confidence))
    return Frame(frame.timestamp, tuple(dets), frame.relations)


def _relations(frame: Frame, ref: ReferenceSystem, flip: float, rng: random.Random) -> Frame:
    tracked = [
        TrackedDetection(d, i) for i, d in enumerate(frame.detections)
    ]
    rels = []
    for r in derive_relations(tracked, ref):
        pred = r.predicate
        if pred in SPATIAL_PREDICATES and flip > 0 and rng.random() < flip:
            pred = rng.choice([p for p in SPATIAL_PREDICATES if p != pred])
        rels.append(RawRelation(r.subject, r.object, pred, r.confidence))
    return Frame(frame.timestamp, frame.detections, tuple(rels))


def generate_demonstration(
    script: Sequence[Move],
    seed: int = 0,
    noise: NoiseConfig | None = None,
    timing: DemoTiming | None = None,
    world: WorldState | None = None,
) -> list[Frame]:
    """Render a demonstration of ``script`` as a frame list.

    With relation emission or label noise enabled, each frame also carries
    the ground-truth spatial and holding relations (detection indices as
    endpoints), with spatial labels flipped at rate ``noise.label_flip``.
    """
    noise = noise or NoiseConfig()
    timing = timing or DemoTiming()
    world = world or WorldState(seed=seed)
    script = validate_script(world, script)
    rng = random.Random(seed)
    ref = ReferenceSystem()
    out = []
    for f in _clean_frames(world, script, timing):
        if noise.bbox_jitter > 0:
            f = _jitter(f, noise.bbox_jitter, rng)
        if noise.emit_relations or noise.label_flip > 0:
            f = _relations(f, ref, noise.label_flip, rng)
        out.append(f)
    return out
