"""Frame ingestion and the batch learning pipeline.

``Ingestor`` runs one frame through filter -> tracker -> relations -> CSG and,
optionally, the streaming action extractor.  ``learn`` drives it over a whole
demonstration and lifts the result into a PDDL domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .config import RunConfig
from .csg import ContinuousSceneGraph
from .errors import CsgError
from .layering import filter_detections, layered_from_raw
from .learner import GroundedAction, LiftedAction, StreamingExtractor, collapse_episodes, dedup, lift
from .pddl import Domain, build_domain, render_domain
from .qsr import derive_relations
from .stream import Frame
from .tracker import Tracker

log = logging.getLogger(__name__)


class PipelineError(CsgError):
    """Wraps an error with the module it came from."""

    def __init__(self, module: str, cause: Exception, timestamp: int | None = None):
        self.module = module
        self.cause = cause
        self.timestamp = timestamp
        at = f" at t={timestamp}" if timestamp is not None else ""
        super().__init__(f"[{module}]{at} {cause}")


class Ingestor:
    def __init__(self, config: RunConfig | None = None, extract: bool = False):
        self.config = cfg = config or RunConfig()
        self.lexicon = cfg.lexicon()
        self.tracker = Tracker(cfg.tracker_state())
        self.graph = ContinuousSceneGraph(cfg.csg_config())
        self.reference = cfg.reference_system()
        self.extractor = StreamingExtractor(cfg.zeta) if extract else None
        self.raw_actions: list[GroundedAction] = []
        self.frames = 0

    def ingest(self, frame: Frame) -> list[GroundedAction]:
        cfg = self.config
        t = frame.timestamp
        frame = filter_detections(frame, self.lexicon.alpha)
        try:
            tracked = self.tracker.update(frame)
        except CsgError as e:
            raise PipelineError("tracker", e, t) from e
        try:
            if cfg.qsr:
                rels = derive_relations(tracked, self.reference, cfg.holding_iou_threshold)
            elif frame.relations is not None:
                rels = layered_from_raw(self.lexicon, frame.relations, [td.track_id for td in tracked])
            else:
                rels = []
        except CsgError as e:
            raise PipelineError("qsr" if cfg.qsr else "layering", e, t) from e
        try:
            self.graph.update(tracked, rels, t)
        except CsgError as e:
            raise PipelineError("csg", e, t) from e
        self.frames += 1
        if self.extractor is None:
            return []
        try:
            new = self.extractor.step(self.graph)
        except CsgError as e:
            raise PipelineError("action-learner", e, t) from e
        self.raw_actions.extend(new)
        return new


@dataclass
class LearnResult:
    graph: ContinuousSceneGraph
    raw_actions: list[GroundedAction]
    schedule: list[GroundedAction]
    domain_actions: list[GroundedAction]
    lifted: list[LiftedAction] = field(default_factory=list)
    domain: Domain | None = None
    frames: int = 0

    @property
    def domain_text(self) -> str | None:
        return render_domain(self.domain) if self.domain is not None else None


def learn(frames: Iterable[Frame], config: RunConfig | None = None) -> LearnResult:
    """Phase I over a full demonstration.

    ``schedule`` keeps repeated actions in demonstration order (one entry per
    episode); ``domain_actions`` collapses them to unique lifted schemas.
    """
    cfg = config or RunConfig()
    ing = Ingestor(cfg, extract=True)
    for f in frames:
        ing.ingest(f)
    schedule = collapse_episodes(ing.raw_actions)
    unique = dedup(schedule)
    lifted = [lift(a) for a in unique]
    domain = None
    if lifted:
        try:
            domain = build_domain(lifted, cfg.domain_name, cfg.agent_classes)
        except CsgError as e:
            raise PipelineError("pddl", e) from e
    else:
        log.warning("no actions extracted from %d frames", ing.frames)
    return LearnResult(ing.graph, ing.raw_actions, schedule, unique, lifted, domain, ing.frames)
