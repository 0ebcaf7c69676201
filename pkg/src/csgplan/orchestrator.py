"""Phase II: map learned actions to skills and execute them against the live CSG.

Each learned action splits into a pick-style step (keyed by its functional
trigger) and place-style steps (one per positive effect).  Steps run strictly
one after another.  Preconditions and effects are checked at class level,
since track ids differ between the demonstration and the live run.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Protocol, Sequence

from .csg import ContinuousSceneGraph, Triplet
from .errors import PolicyRejected, ProtocolError, ValidationError
from .layering import LayerId
from .learner import GroundedAction, LiftedAction
from .stream import Frame

log = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 3

# A class-level relation: (subject class, predicate, object class).
ClassTriplet = tuple[str, str, str]


class StepOutcome(enum.Enum):
    EXECUTED = "Executed"
    SKIPPED_PRECONDITIONS = "SkippedPreconditions"
    FAILED_AFTER_RETRIES = "FailedAfterRetries"
    UNMAPPED_SKILL = "UnmappedSkill"


@dataclass(frozen=True)
class SkillMap:
    """(predicate, object class) -> policy, separately for triggers and effects."""

    triggers: dict[tuple[str, str], str] = field(default_factory=dict)
    effects: dict[tuple[str, str], str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict) -> "SkillMap":
        maps = []
        for section in ("triggers", "effects"):
            out: dict[tuple[str, str], str] = {}
            for i, entry in enumerate(obj.get(section, [])):
                if isinstance(entry, dict):
                    entry = (entry.get("predicate"), entry.get("class"), entry.get("policy"))
                if len(entry) != 3 or not all(isinstance(v, str) and v for v in entry):
                    raise ValidationError(f"{section}[{i}]", "expected [predicate, class, policy]")
                key = (entry[0], entry[1])
                if key in out:
                    raise ValidationError(f"{section}[{i}]", f"duplicate key {key}")
                out[key] = entry[2]
            maps.append(out)
        return cls(*maps)

    def to_dict(self) -> dict:
        return {
            "triggers": [[p, c, v] for (p, c), v in sorted(self.triggers.items())],
            "effects": [[p, c, v] for (p, c), v in sorted(self.effects.items())],
        }

    @classmethod
    def load(cls, path) -> "SkillMap":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "SkillMap":
        """The six tabletop skills."""
        text = resources.files("csgplan").joinpath("data/skills.json").read_text("utf-8")
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PlanStep:
    policy: str | None
    kind: str  # "pick", "place" or "unmapped"
    preconditions: frozenset[ClassTriplet]
    expected_effects: frozenset[ClassTriplet]
    max_retries: int = DEFAULT_MAX_RETRIES
    source: int = 0
    description: str = ""


@dataclass
class ExecutionPlan:
    steps: list[PlanStep]

    def policies(self) -> list[str | None]:
        return [s.policy for s in self.steps]


@dataclass
class StepReport:
    index: int
    policy: str | None
    outcome: StepOutcome
    retries: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "policy": self.policy,
            "outcome": self.outcome.value,
            "retries": self.retries,
            "seconds": round(self.seconds, 6),
        }


@dataclass
class ExecutionReport:
    steps: list[StepReport] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None

    @property
    def success(self) -> bool:
        return not self.aborted and all(s.outcome is StepOutcome.EXECUTED for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "aborted": self.aborted,
            "error": self.error,
            "success": self.success,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def summary(self) -> str:
        lines = []
        for s in self.steps:
            extra = f" (retries {s.retries})" if s.retries else ""
            lines.append(f"{s.index + 1:>3}. {s.policy or '-':<16} {s.outcome.value}{extra}")
        if self.aborted:
            lines.append(f"aborted: {self.error}")
        lines.append("task " + ("succeeded" if self.success else "did not succeed"))
        return "\n".join(lines)


# ---------------------------------------------------------------- scheduling


def _class_triplets(triplets: Iterable[Triplet], classes: dict) -> frozenset[ClassTriplet]:
    return frozenset((classes[t.subject], t.predicate, classes[t.object]) for t in triplets)


def _grounded_from_lifted(a: LiftedAction) -> GroundedAction:
    """Read a lifted action as if its variables were track ids."""
    trig = a.trigger
    pre = [Triplet(x.args[0], x.predicate, x.args[1]) for x in a.precondition[:-1] if not x.negated]
    eff = [Triplet(x.args[0], x.predicate, x.args[1]) for x in a.effect if not x.negated]
    neg = [
        Triplet(x.args[0], x.predicate, x.args[1])
        for x in a.effect
        if x.negated and x.positive() != trig.positive()
    ]
    return GroundedAction(
        Triplet(trig.args[0], trig.predicate, trig.args[1]),
        a.trigger_time or 0,
        frozenset(pre),
        frozenset(eff),
        frozenset(neg),
        tuple(sorted(a.parameters)),
    )


def build_schedule(
    actions: Sequence[GroundedAction | LiftedAction],
    skills: SkillMap,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> ExecutionPlan:
    """Expand time-ordered actions into pick/place steps."""
    steps: list[PlanStep] = []
    grounded = [(_grounded_from_lifted(a) if isinstance(a, LiftedAction) else a) for a in actions]
    order = sorted(range(len(grounded)), key=lambda i: (grounded[i].trigger_time, i))
    for i in order:
        a = grounded[i]
        cls = a.class_map
        pre = _class_triplets(a.preconditions, cls)
        trig = _class_triplets([a.trigger], cls)
        eff = _class_triplets(a.effects, cls)
        mapped: list[PlanStep] = []
        pick = skills.triggers.get((a.trigger.predicate, cls[a.trigger.object]))
        if pick is not None:
            mapped.append(PlanStep(pick, "pick", pre, trig, max_retries, i, f"{a.trigger.predicate} {cls[a.trigger.object]}"))
        for t in sorted(a.effects):
            place = skills.effects.get((t.predicate, cls[t.object]))
            if place is not None:
                need = trig if pick is not None else pre
                mapped.append(
                    PlanStep(place, "place", need, _class_triplets([t], cls), max_retries, i, f"{t.predicate} {cls[t.object]}")
                )
        if not mapped:
            desc = f"{a.trigger.predicate}({cls[a.trigger.subject]}, {cls[a.trigger.object]})"
            mapped.append(PlanStep(None, "unmapped", pre | trig, eff, max_retries, i, desc))
        steps.extend(mapped)
    return ExecutionPlan(steps)


# ----------------------------------------------------------------- execution


def live_relations(g: ContinuousSceneGraph) -> set[ClassTriplet]:
    """Topological and functional relations committed now, lifted to classes.

    Only nodes detected in the latest frame count: a lost track keeps its
    last committed relations, which say nothing about the scene now.
    """
    if g.current is None:
        return set()
    k = g.current
    seen = {tid for tid, rec in g.nodes.items() if rec.last_seen == k}
    out = set()
    for layer in (LayerId.TOPOLOGICAL, LayerId.FUNCTIONAL):
        for t in g.relations_at(layer, k):
            if t.subject in seen and t.object in seen:
                out.add((g.class_of(t.subject), t.predicate, g.class_of(t.object)))
    return out


def check_preconditions(step: PlanStep, g: ContinuousSceneGraph) -> bool:
    return step.preconditions <= live_relations(g)


def effects_hold(step: PlanStep, g: ContinuousSceneGraph) -> bool:
    return step.expected_effects <= live_relations(g)


class PolicyClient(Protocol):
    def list_policies(self) -> list[str]: ...

    def execute(self, policy: str, on_frame=None) -> bool: ...

    def observe(self) -> Frame: ...


class _Live(Protocol):
    graph: ContinuousSceneGraph

    def ingest(self, frame: Frame): ...


def execute_plan(
    plan: ExecutionPlan,
    client: PolicyClient,
    live: _Live,
    grace_frames: int | None = None,
) -> ExecutionReport:
    """Run the plan step by step, feeding streamed frames into ``live``.

    After a policy finishes, ``theta`` settle frames are observed so stale
    commits from the motion resolve; effects are then checked, observing up
    to ``grace_frames`` (default ``2 * theta``) frames in total.
    """
    theta = live.graph.config.theta
    grace = 2 * theta if grace_frames is None else grace_frames
    settle = min(theta, grace)
    report = ExecutionReport()

    def verify(step: PlanStep) -> bool:
        for _ in range(settle):
            live.ingest(client.observe())
        seen = settle
        while not effects_hold(step, live.graph):
            if seen >= grace:
                return False
            live.ingest(client.observe())
            seen += 1
        return True

    try:
        available = set(client.list_policies())
        if live.graph.current is None:
            live.ingest(client.observe())
        for idx, step in enumerate(plan.steps):
            t0 = time.perf_counter()
            retries = 0
            if step.policy is None or step.policy not in available:
                outcome = StepOutcome.UNMAPPED_SKILL
            elif not check_preconditions(step, live.graph):
                outcome = StepOutcome.SKIPPED_PRECONDITIONS
            else:
                attempts = 0
                while True:
                    attempts += 1
                    try:
                        client.execute(step.policy, live.ingest)
                    except PolicyRejected as e:
                        log.warning("policy %s rejected: %s", step.policy, e)
                        outcome = StepOutcome.UNMAPPED_SKILL
                        break
                    # The done flag is advisory; the CSG decides.
                    if verify(step):
                        outcome = StepOutcome.EXECUTED
                        break
                    if attempts > step.max_retries:
                        outcome = StepOutcome.FAILED_AFTER_RETRIES
                        break
                retries = attempts - 1
            report.steps.append(StepReport(idx, step.policy, outcome, retries, time.perf_counter() - t0))
    except (ProtocolError, OSError) as e:
        report.aborted = True
        report.error = str(e)
    return report
