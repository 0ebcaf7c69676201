"""Run configuration shared by the pipeline, orchestrator and CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .csg import CsgConfig
from .errors import ValidationError
from .layering import LayerId, PredicateLexicon
from .qsr import ReferenceSystem
from .tracker import TrackerState


@dataclass(frozen=True)
class RunConfig:
    theta: int = 3
    zeta: int = 10
    sigma: float = 0.5
    decay: float = 0.02
    prune_threshold: float = 0.05
    alpha: float = 0.194
    # Per-layer thresholds keyed by layer name; empty keeps the lexicon's.
    layer_thresholds: dict = field(default_factory=dict)
    qsr: bool = True
    reference_class: str = "plate"
    hand_classes: tuple[str, ...] = ("hand", "person")
    holding_iou_threshold: float = 0.1
    agent_classes: tuple[str, ...] = ("hand", "person")
    iou_match_threshold: float = 0.3
    max_age: int = 10
    weight_rule: str = "literal"
    history_cap: int = 100_000
    seed: int = 0
    max_retries: int = 3
    domain_name: str = "learned"
    lexicon_path: str | None = None

    def __post_init__(self):
        if self.theta < 1:
            raise ValidationError("theta", "must be >= 1")
        if self.zeta < 1:
            raise ValidationError("zeta", "must be >= 1")
        if self.sigma < 0:
            raise ValidationError("sigma", "must be >= 0")
        if self.decay < 0:
            raise ValidationError("decay", "must be >= 0")
        if self.max_age < 1:
            raise ValidationError("max_age", "must be >= 1")
        if self.max_retries < 0:
            raise ValidationError("max_retries", "must be >= 0")
        for name in ("prune_threshold", "alpha", "holding_iou_threshold", "iou_match_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(name, f"{v!r} not in [0, 1]")
        for k, v in self.layer_thresholds.items():
            LayerId.parse(k)
            if not 0.0 <= float(v) <= 1.0:
                raise ValidationError(f"layer_thresholds.{k}", f"{v!r} not in [0, 1]")

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError("config", f"unknown keys {sorted(unknown)}")
        vals = dict(obj)
        for k in ("hand_classes", "agent_classes"):
            if k in vals:
                vals[k] = tuple(vals[k])
        return cls(**vals)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hand_classes"] = list(self.hand_classes)
        d["agent_classes"] = list(self.agent_classes)
        return d

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def csg_config(self) -> CsgConfig:
        return CsgConfig(
            theta=self.theta,
            sigma=self.sigma,
            decay=self.decay,
            prune_threshold=self.prune_threshold,
            max_age=self.max_age,
            agent_classes=frozenset(self.agent_classes),
            history_cap=self.history_cap,
            weight_rule=self.weight_rule,
        )

    def tracker_state(self) -> TrackerState:
        return TrackerState(iou_match_threshold=self.iou_match_threshold, max_age=self.max_age)

    def reference_system(self) -> ReferenceSystem:
        return ReferenceSystem(self.reference_class, frozenset(self.hand_classes))

    def lexicon(self) -> PredicateLexicon:
        lex = PredicateLexicon.load(self.lexicon_path) if self.lexicon_path else PredicateLexicon.default()
        lex = replace(lex, alpha=self.alpha)
        if self.layer_thresholds:
            lex = lex.with_thresholds(**self.layer_thresholds)
        return lex
