"""Tabletop world simulation for the policy bank.

Entities are axis-aligned boxes in normalized image coordinates.  A gripper
(class ``hand``) moves by linear interpolation; an entity held by the
gripper is drawn centred on it.  The plate is static.

Policies:

* ``pick(<class>)``: gripper travels to the first entity of that class and
  grasps it on the last motion frame.
* ``place(<relation>)``: gripper carries the held entity to that entity's
  slot in the target zone, releases it, and retreats home.

Success is drawn once per execution.  On failure, at a uniformly drawn frame
the policy either gives up and returns to where it started (``no_op``) or
drops the target at a random free spot and returns (``drop_random``).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterator

from ..errors import ValidationError
from ..stream import Detection, Frame

RENDER_CONFIDENCE = 0.95
ZONES = ("left_of", "right_of", "inside", "above", "below")


def box_at(center, size) -> tuple[float, float, float, float]:
    cx, cy = center
    w, h = size
    return (
        min(max(cx - w / 2, 0.0), 1.0),
        min(max(cy - h / 2, 0.0), 1.0),
        min(max(cx + w / 2, 0.0), 1.0),
        min(max(cy + h / 2, 0.0), 1.0),
    )


def center_of(bbox) -> tuple[float, float]:
    return (bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0


def lerp(a, b, f: float) -> tuple[float, float]:
    return a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f


@dataclass
class Entity:
    name: str
    class_label: str
    center: tuple[float, float]
    size: tuple[float, float]
    held_by: str | None = None
    movable: bool = True

    @property
    def bbox(self):
        return box_at(self.center, self.size)


@dataclass(frozen=True)
class Layout:
    """Static table layout: plate, loading area, per-object slots per zone."""

    plate_center: tuple[float, float] = (0.5, 0.55)
    plate_size: tuple[float, float] = (0.2, 0.2)
    object_size: tuple[float, float] = (0.05, 0.12)
    gripper_size: tuple[float, float] = (0.12, 0.12)
    gripper_home: tuple[float, float] = (0.9, 0.9)
    objects: tuple[str, ...] = ("knife", "fork", "spoon")
    loading_y: float = 0.12
    slot_spacing: float = 0.06

    def loading_position(self, i: int) -> tuple[float, float]:
        n = len(self.objects)
        x = self.plate_center[0] + (i - (n - 1) / 2) * 0.2
        return (x, self.loading_y)

    def slot(self, zone: str, i: int) -> tuple[float, float]:
        cx, cy = self.plate_center
        pw, ph = self.plate_size
        n = len(self.objects)
        s = self.slot_spacing
        if zone == "above":
            return self.loading_position(i)
        if zone == "inside":
            return (cx + (i - (n - 1) / 2) * s, cy)
        if zone == "left_of":
            return (cx - pw / 2 - 0.075 - (n - 1 - i) * s, cy)
        if zone == "right_of":
            return (cx + pw / 2 + 0.075 + i * s, cy)
        if zone == "below":
            return (cx + (i - (n - 1) / 2) * s, min(cy + ph / 2 + 0.23, 0.93))
        raise ValidationError("relation", f"unknown target relation {zone!r}")


@dataclass
class WorldState:
    layout: Layout = field(default_factory=Layout)
    seed: int = 0
    entities: dict[str, Entity] = field(default_factory=dict)
    frame: int = 0
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = random.Random(self.seed)
        if not self.entities:
            lay = self.layout
            self.entities["plate"] = Entity("plate", "plate", lay.plate_center, lay.plate_size, movable=False)
            for i, name in enumerate(lay.objects):
                self.entities[name] = Entity(name, name, lay.loading_position(i), lay.object_size)
            self.entities["gripper"] = Entity("gripper", "hand", lay.gripper_home, lay.gripper_size, movable=False)

    @property
    def gripper(self) -> Entity:
        return self.entities["gripper"]

    @property
    def plate(self) -> Entity:
        return self.entities["plate"]

    def held(self) -> Entity | None:
        for e in self.entities.values():
            if e.held_by == "gripper":
                return e
        return None

    def object_index(self, name: str) -> int:
        movable = [e.name for e in self.entities.values() if e.movable]
        if name in self.layout.objects:
            return self.layout.objects.index(name)
        return len(self.layout.objects) + movable.index(name)

    def find(self, class_label: str) -> Entity | None:
        for name in sorted(self.entities):
            e = self.entities[name]
            if e.class_label == class_label and e.movable:
                return e
        return None

    def move_gripper(self, center) -> None:
        g = self.gripper
        g.center = center
        for e in self.entities.values():
            if e.held_by == "gripper":
                e.center = center

    def render(self) -> Frame:
        """Current world as a frame; advances the frame counter."""
        dets = tuple(
            Detection(e.bbox, e.class_label, RENDER_CONFIDENCE) for e in self.entities.values()
        )
        f = Frame(self.frame, dets)
        self.frame += 1
        return f

    def random_free_center(self, size, avoid=()) -> tuple[float, float]:
        """Uniform spot clear of resting entities and of the ``avoid`` boxes."""
        for _ in range(200):
            c = (self.rng.uniform(0.1, 0.9), self.rng.uniform(0.1, 0.9))
            b = box_at(c, size)
            blocked = [e.bbox for e in self.entities.values() if e.name != "gripper" and e.held_by is None]
            if not any(_overlap(b, x) for x in (*blocked, *avoid)):
                return c
        return c

    def configuration(self) -> dict[str, str | None]:
        """Zone of each movable entity relative to the plate; None while held."""
        from ..qsr import direction

        out = {}
        for e in self.entities.values():
            if e.movable:
                out[e.name] = None if e.held_by else direction(e.center, self.plate.bbox)
        return out


def _overlap(a, b) -> bool:
    return min(a[2], b[2]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[1], b[1])


@dataclass(frozen=True)
class PolicySpec:
    name: str
    kind: str  # "pick" or "place"
    target: str  # class label for pick, zone for place
    success_probability: float = 1.0
    duration: int = 30
    failure_mode: str = "no_op"

    def __post_init__(self):
        if self.kind not in ("pick", "place"):
            raise ValidationError("kind", f"unknown policy kind {self.kind!r}")
        if self.kind == "place" and self.target not in ZONES:
            raise ValidationError("target", f"unknown target relation {self.target!r}")
        if not 0.0 <= self.success_probability <= 1.0:
            raise ValidationError("success_probability", f"{self.success_probability!r} not in [0, 1]")
        if self.duration < 2:
            raise ValidationError("duration", "must be at least 2 frames")
        if self.failure_mode not in ("no_op", "drop_random"):
            raise ValidationError("failure_mode", f"unknown failure mode {self.failure_mode!r}")


# Per-policy accuracies of the six reference skills.
DEFAULT_PROBABILITIES = {
    "pick_knife": 0.8,
    "pick_fork": 0.6,
    "pick_spoon": 0.7,
    "place_left": 1.0,
    "place_right": 1.0,
    "place_inside": 1.0,
}


def default_policies(probabilities: dict[str, float] | None = None, failure_mode: str = "no_op") -> list[PolicySpec]:
    p = dict(DEFAULT_PROBABILITIES)
    if probabilities:
        p.update(probabilities)
    return [
        PolicySpec("pick_knife", "pick", "knife", p["pick_knife"], failure_mode=failure_mode),
        PolicySpec("pick_fork", "pick", "fork", p["pick_fork"], failure_mode=failure_mode),
        PolicySpec("pick_spoon", "pick", "spoon", p["pick_spoon"], failure_mode=failure_mode),
        PolicySpec("place_left", "place", "left_of", p["place_left"], failure_mode=failure_mode),
        PolicySpec("place_right", "place", "right_of", p["place_right"], failure_mode=failure_mode),
        PolicySpec("place_inside", "place", "inside", p["place_inside"], failure_mode=failure_mode),
    ]


@dataclass
class _Keyframe:
    gripper: tuple[float, float]
    events: tuple = ()


class PolicyRun:
    """One execution of a policy: a precomputed list of gripper keyframes.

    Frame ``i`` (1-based) applies keyframe ``i`` to the world.  The success
    draw happens in the constructor, i.e. at execute time.
    """

    def __init__(self, world: WorldState, policy: PolicySpec, retreat_frames: int = 20, force_success: bool | None = None):
        self.policy = policy
        rng = world.rng
        self.success = rng.random() < policy.success_probability if force_success is None else force_success
        self.failure_frame = None if self.success else rng.randint(1, policy.duration - 1)
        self.achieved = False
        self.keyframes: list[_Keyframe] = []
        start = world.gripper.center
        self.start = start
        d = policy.duration

        if policy.kind == "pick":
            target = world.find(policy.target)
            if target is None:
                return
            pre = ()
            held = world.held()
            if held is not None and held.name != target.name:
                pre = (("release", held.name),)
            goal = target.center
            if self.success:
                for i in range(1, d + 1):
                    ev = pre if i == 1 else ()
                    if i == d:
                        ev = ev + (("attach", target.name),)
                    self.keyframes.append(_Keyframe(lerp(start, goal, i / d), ev))
                self.achieved = True
            else:
                self._failing(world, start, goal, target.name, pre)
        else:
            held = world.held()
            if held is None:
                return
            goal = world.layout.slot(policy.target, world.object_index(held.name))
            if self.success:
                for i in range(1, d + 1):
                    ev = (("release", held.name),) if i == d else ()
                    self.keyframes.append(_Keyframe(lerp(start, goal, i / d), ev))
                home = world.layout.gripper_home
                for i in range(1, retreat_frames + 1):
                    self.keyframes.append(_Keyframe(lerp(goal, home, i / retreat_frames)))
                self.achieved = True
            else:
                self._failing(world, start, goal, held.name, ())

    def _failing(self, world, start, goal, target_name, pre):
        d = self.policy.duration
        f = self.failure_frame
        turn = lerp(start, goal, f / d)
        for i in range(1, f + 1):
            ev = pre if i == 1 else ()
            if i == f and self.policy.failure_mode == "drop_random":
                ev = ev + (("drop", target_name),)
            self.keyframes.append(_Keyframe(lerp(start, goal, i / d), ev))
        # Return at the approach speed; a fast snap-back would break tracking.
        for i in range(1, f + 1):
            self.keyframes.append(_Keyframe(lerp(turn, start, i / f)))

    def __len__(self):
        return len(self.keyframes)

    def frames(self, world: WorldState) -> Iterator[Frame]:
        for i in range(1, len(self.keyframes) + 1):
            _, frame = step_world(world, self, i)
            yield frame


def step_world(world: WorldState, run: PolicyRun, i: int) -> tuple[WorldState, Frame]:
    """Apply keyframe ``i`` (1-based) of ``run`` and render the result."""
    kf = run.keyframes[i - 1]
    for ev, name in kf.events:
        if ev == "release":
            world.entities[name].held_by = None
    world.move_gripper(kf.gripper)
    for ev, name in kf.events:
        e = world.entities[name]
        if ev == "attach":
            e.held_by = "gripper"
            e.center = world.gripper.center
        elif ev == "release":
            e.held_by = None
        elif ev == "drop":
            e.held_by = None
            # Not where the gripper comes to rest, or it would look held.
            e.center = world.random_free_center(e.size, [box_at(run.start, world.layout.gripper_size)])
    return world, world.render()


def policies_from_config(obj: dict) -> list[PolicySpec]:
    return [
        PolicySpec(
            p["name"],
            p["kind"],
            p["target"],
            float(p.get("success_probability", 1.0)),
            int(p.get("duration", 30)),
            p.get("failure_mode", "no_op"),
        )
        for p in obj["policies"]
    ]


def load_world_config(path) -> tuple[WorldState, list[PolicySpec], dict]:
    """World config JSON: ``{"seed": 0, "policies": [...], "retreat_frames": 20}``.

    Missing ``policies`` selects the six default skills.
    """
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    world = WorldState(seed=int(obj.get("seed", 0)))
    policies = policies_from_config(obj) if "policies" in obj else default_policies()
    return world, policies, obj
