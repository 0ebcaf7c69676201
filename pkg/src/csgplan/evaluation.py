"""Monte Carlo evaluation of learn -> orchestrate chains in the simulator.

A task of ``K`` skills is ``K / 2`` pick-and-place moves.  Each move picks a
uniformly random object and sends it to a uniformly random place zone other
than its current one, so every move changes a relation and is learnable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from statistics import fmean
from typing import Mapping, Sequence

from .config import RunConfig
from .errors import ValidationError
from .learner import GroundedAction
from .orchestrator import ExecutionPlan, SkillMap, build_schedule, execute_plan
from .pipeline import Ingestor, learn
from .policybank.client import LocalClient
from .policybank.demo import generate_demonstration
from .policybank.server import PolicyBank
from .policybank.world import DEFAULT_PROBABILITIES, WorldState, default_policies

OBJECTS = ("knife", "fork", "spoon")
PLACE_ZONES = ("left_of", "right_of", "inside")
START_ZONE = "above"


def sample_script(rng: random.Random, moves: int) -> tuple[tuple[str, str], ...]:
    where = {o: START_ZONE for o in OBJECTS}
    out = []
    for _ in range(moves):
        obj = rng.choice(OBJECTS)
        target = rng.choice([z for z in PLACE_ZONES if z != where[obj]])
        where[obj] = target
        out.append((obj, target))
    return tuple(out)


def final_configuration(script: Sequence[tuple[str, str]]) -> dict[str, str]:
    where = {o: START_ZONE for o in OBJECTS}
    for obj, zone in script:
        where[obj] = zone
    return where


def learned_moves(schedule: Sequence[GroundedAction]) -> list[tuple[str, str]]:
    """(object class, effect predicate) per learned action."""
    out = []
    for a in schedule:
        cls = a.class_map
        preds = sorted(t.predicate for t in a.effects)
        out.append((cls[a.trigger.object], preds[0] if len(preds) == 1 else "+".join(preds)))
    return out


def action_accuracy(script: Sequence[tuple[str, str]], learned: Sequence[tuple[str, str]]) -> float:
    n = max(len(script), len(learned))
    if n == 0:
        return 1.0
    return sum(1 for a, b in zip(script, learned) if tuple(a) == tuple(b)) / n


def analytic_success(probabilities: Mapping[str, float], moves: int, retries: int) -> float:
    """Expected task success for uniform objects and independent draws.

    Place zones are averaged uniformly; exact when all places share one
    probability, as in the reference skill set.
    """

    def with_retries(p):
        return 1.0 - (1.0 - p) ** (retries + 1)

    pick = fmean(with_retries(probabilities[f"pick_{o}"]) for o in OBJECTS)
    place = fmean(with_retries(probabilities[n]) for n in ("place_left", "place_right", "place_inside"))
    return (pick * place) ** moves


@dataclass(frozen=True)
class EvalResult:
    skills: int
    episodes: int
    retries: int
    seed: int
    task_success: float
    action_accuracy: float
    analytic_success: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def summary(self) -> str:
        return (
            f"K={self.skills} N={self.episodes} retries={self.retries} seed={self.seed}\n"
            f"task success     {self.task_success:.4f} (analytic {self.analytic_success:.4f})\n"
            f"action accuracy  {self.action_accuracy:.4f}"
        )


def eval_chain(
    skills: int,
    episodes: int,
    retries: int = 0,
    seed: int = 0,
    probabilities: Mapping[str, float] | None = None,
    config: RunConfig | None = None,
    skill_map: SkillMap | None = None,
    failure_mode: str = "no_op",
) -> EvalResult:
    if skills < 2 or skills % 2:
        raise ValidationError("skills", f"K={skills}: must be an even number >= 2 (pick + place per move)")
    if episodes < 1:
        raise ValidationError("episodes", "must be >= 1")
    cfg = config or RunConfig()
    probs = dict(DEFAULT_PROBABILITIES)
    probs.update(probabilities or {})
    skill_map = skill_map or SkillMap.default()
    rng = random.Random(seed)
    moves = skills // 2
    cache: dict[tuple, tuple[ExecutionPlan, float]] = {}
    successes = 0
    accuracies = []
    for _ in range(episodes):
        script = sample_script(rng, moves)
        world_seed = rng.randrange(2**31)
        if script not in cache:
            res = learn(generate_demonstration(script), cfg)
            plan = build_schedule(res.schedule, skill_map, retries)
            cache[script] = (plan, action_accuracy(script, learned_moves(res.schedule)))
        plan, acc = cache[script]
        accuracies.append(acc)
        world = WorldState(seed=world_seed)
        bank = PolicyBank(world, default_policies(probs, failure_mode))
        report = execute_plan(plan, LocalClient(bank), Ingestor(cfg))
        if report.success and world.configuration() == final_configuration(script):
            successes += 1
    return EvalResult(
        skills,
        episodes,
        retries,
        seed,
        successes / episodes,
        fmean(accuracies),
        analytic_success(probs, moves, retries),
    )
