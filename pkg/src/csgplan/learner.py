"""Transitional-state detection and action extraction from a scene graph.

For each functional relation ``<s, p, o>`` committed at time ``k``:

* preconditions are the topological relations with subject ``o`` committed
  anywhere in ``[k - zeta, k]``;
* effects are those committed anywhere in ``[k, k + zeta]`` that are not
  preconditions;
* when both are non-empty, every precondition missing from the effects is
  added as a negated effect and the action is emitted.

Lifting keeps the functional trigger as an extra precondition and negates it
in the effects, so a learned ``holding`` action also releases the object.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .csg import ContinuousSceneGraph, Triplet
from .layering import LayerId

DEFAULT_ZETA = 10


@dataclass(frozen=True)
class GroundedAction:
    trigger: Triplet
    trigger_time: int
    preconditions: frozenset[Triplet]
    effects: frozenset[Triplet]
    negated_effects: frozenset[Triplet]
    classes: tuple[tuple[int, str], ...] = field(default=(), compare=False, repr=False)

    @property
    def class_map(self) -> dict[int, str]:
        return dict(self.classes)

    def class_of(self, track_id) -> str:
        return self.class_map[track_id]

    @property
    def key(self) -> tuple:
        """Grounded identity, ignoring the trigger time."""
        return (self.trigger, self.preconditions, self.effects, self.negated_effects)

    def to_dict(self) -> dict:
        def trip(t):
            return [t.subject, t.predicate, t.object]

        return {
            "trigger": trip(self.trigger),
            "trigger_time": self.trigger_time,
            "preconditions": sorted(trip(t) for t in self.preconditions),
            "effects": sorted(trip(t) for t in self.effects),
            "negated_effects": sorted(trip(t) for t in self.negated_effects),
            "classes": {str(k): v for k, v in self.classes},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GroundedAction":
        def trip(v):
            return Triplet(v[0], str(v[1]), v[2])

        return cls(
            trip(obj["trigger"]),
            int(obj["trigger_time"]),
            frozenset(trip(v) for v in obj["preconditions"]),
            frozenset(trip(v) for v in obj["effects"]),
            frozenset(trip(v) for v in obj.get("negated_effects", ())),
            tuple(sorted(((_id_key(k), v) for k, v in obj.get("classes", {}).items()), key=lambda kv: str(kv[0]))),
        )


def _id_key(k: str):
    return int(k) if re.fullmatch(r"-?\d+", k) else k


def _classes_for(g: ContinuousSceneGraph, triplets: Iterable[Triplet]) -> tuple[tuple[int, str], ...]:
    ids = set()
    for t in triplets:
        ids.add(t.subject)
        ids.add(t.object)
    return tuple(sorted((i, g.nodes[i].class_label) for i in ids))


def extract_actions(g: ContinuousSceneGraph, k: int, zeta: int = DEFAULT_ZETA) -> list[GroundedAction]:
    """Actions triggered by the functional relations committed at ``k``.

    Raises HistoryError unless the graph holds ``[k - zeta, k + zeta]``.
    """
    g._check_range(k - zeta, k + zeta)
    out = []
    for rf in sorted(g.relations_at(LayerId.FUNCTIONAL, k)):
        o = rf.object
        pre = g.relations_in_window(LayerId.TOPOLOGICAL, k - zeta, k, subject=o)
        if not pre:
            continue
        eff = g.relations_in_window(LayerId.TOPOLOGICAL, k, k + zeta, subject=o) - pre
        if not eff:
            continue
        neg = pre - eff
        out.append(
            GroundedAction(
                rf, k, frozenset(pre), frozenset(eff), frozenset(neg), _classes_for(g, [rf, *pre, *eff])
            )
        )
    return out


def evaluable_timestamps(g: ContinuousSceneGraph, zeta: int) -> list[int]:
    h = g.horizon
    if h is None:
        return []
    return [k for k in g.timestamps if k - zeta >= h[0] and k + zeta <= h[1]]


def extract_all(g: ContinuousSceneGraph, zeta: int = DEFAULT_ZETA) -> list[GroundedAction]:
    """Batch extraction over every timestamp with a full window on both sides."""
    out = []
    for k in evaluable_timestamps(g, zeta):
        out.extend(extract_actions(g, k, zeta))
    return out


class StreamingExtractor:
    """Emits actions for timestamp ``k`` once ``k + zeta`` has been ingested.

    Call ``step(g)`` after every graph update.  Committed states never change
    retroactively, so emissions equal batch extraction over the full record.
    """

    def __init__(self, zeta: int = DEFAULT_ZETA):
        if zeta < 0:
            raise ValueError("zeta must be >= 0")
        self.zeta = zeta
        self._waiting: deque[int] = deque()
        self._first: int | None = None

    def step(self, g: ContinuousSceneGraph) -> list[GroundedAction]:
        if g.current is None:
            return []
        if self._first is None:
            self._first = g.horizon[0]
        self._waiting.append(g.current)
        out = []
        while self._waiting and self._waiting[0] + self.zeta <= g.current:
            k = self._waiting.popleft()
            if k - self.zeta < g.horizon[0]:
                continue
            out.extend(extract_actions(g, k, self.zeta))
        return out


# --------------------------------------------------------------------- lifting


class Atom(NamedTuple):
    predicate: str
    args: tuple[str, ...]
    negated: bool = False

    def positive(self) -> "Atom":
        return Atom(self.predicate, self.args, False)


@dataclass(frozen=True)
class LiftedAction:
    name: str
    parameters: tuple[tuple[str, str], ...]
    precondition: tuple[Atom, ...]
    effect: tuple[Atom, ...]
    trigger_time: int | None = field(default=None, compare=False)

    @property
    def types(self) -> dict[str, str]:
        return dict(self.parameters)

    @property
    def trigger(self) -> Atom:
        """By construction the last precondition atom is the functional trigger."""
        return self.precondition[-1]

    @property
    def signature(self) -> tuple:
        return (self.name, self.parameters, self.precondition, self.effect)


_NAME_RE = re.compile(r"[^A-Za-z0-9_-]")


def pddl_name(label: str) -> str:
    """Turn a class or predicate label into a PDDL identifier."""
    name = _NAME_RE.sub("_", label.strip()).lower()
    if not name or not name[0].isalpha():
        name = "c_" + name
    if name in _RESERVED:
        name += "_"
    return name


_RESERVED = frozenset({"object", "agent", "and", "not", "define", "domain", "either", "forall", "exists"})


def lift(a: GroundedAction) -> LiftedAction:
    classes = a.class_map

    def order_key(t: Triplet):
        return (t.predicate, classes[t.subject], classes[t.object], str(t.subject), str(t.object))

    pre = sorted(a.preconditions, key=order_key)
    eff = sorted(a.effects, key=order_key)
    neg = sorted(a.negated_effects, key=order_key)

    names: dict = {}
    per_class: dict[str, int] = {}
    params = []

    def var(track_id):
        v = names.get(track_id)
        if v is None:
            cls = pddl_name(classes[track_id])
            idx = per_class.get(cls, 0)
            per_class[cls] = idx + 1
            v = names[track_id] = f"?{cls}{idx}"
            params.append((v, cls))
        return v

    def atom(t: Triplet, negated=False):
        return Atom(pddl_name(t.predicate), (var(t.subject), var(t.object)), negated)

    rf = a.trigger
    var(rf.subject)
    var(rf.object)
    pre_atoms = [atom(t) for t in pre]
    eff_atoms = [atom(t) for t in eff]
    neg_atoms = [atom(t, True) for t in neg]
    trigger_atom = atom(rf)
    return LiftedAction(
        name=f"{pddl_name(rf.predicate)}_{pddl_name(classes[rf.object])}",
        parameters=tuple(params),
        precondition=tuple(pre_atoms) + (trigger_atom,),
        effect=tuple(eff_atoms) + tuple(neg_atoms) + (Atom(trigger_atom.predicate, trigger_atom.args, True),),
        trigger_time=a.trigger_time,
    )


def dedup(actions: Iterable[GroundedAction]) -> list[GroundedAction]:
    """Collapse actions whose lifted schemas coincide; keep the earliest."""
    seen = set()
    out = []
    for a in sorted(actions, key=lambda a: a.trigger_time):
        sig = lift(a).signature
        if sig not in seen:
            seen.add(sig)
            out.append(a)
    return out


def collapse_episodes(actions: Iterable[GroundedAction], max_gap: int = 1) -> list[GroundedAction]:
    """Merge emissions of one grounded action at consecutive trigger times.

    Unlike ``dedup`` this keeps a repeated action that recurs later in the
    demonstration, so the result is the demonstrated schedule.
    """
    last: dict[tuple, int] = {}
    out = []
    for a in sorted(actions, key=lambda a: a.trigger_time):
        prev = last.get(a.key)
        if prev is None or a.trigger_time - prev > max_gap:
            out.append(a)
        last[a.key] = a.trigger_time
    return out


def write_action_log(path, actions: Iterable[GroundedAction]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for a in actions:
            fh.write(json.dumps(a.to_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_action_log(path) -> list[GroundedAction]:
    with open(path, encoding="utf-8") as fh:
        return [GroundedAction.from_dict(json.loads(line)) for line in fh if line.strip()]
