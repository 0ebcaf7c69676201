"""Relation layers, the predicate lexicon, and per-layer argmax selection.

Lexicon files are JSON::

    {"version": 1,
     "alpha": 0.194,
     "thresholds": {"functional": 0.3, "topological": 0.3, ...},
     "predicates": {"on": ["topological", "functional"], ...}}

Missing thresholds default to 0.3.  All thresholds are inclusive.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Mapping

from .errors import ValidationError
from .stream import Frame, RawRelation

DEFAULT_ALPHA = 0.194
DEFAULT_LAYER_THRESHOLD = 0.3


class LayerId(enum.IntEnum):
    FUNCTIONAL = 0
    TOPOLOGICAL = 1
    PART_WHOLE = 2
    ATTRIBUTIVE = 3

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "LayerId":
        try:
            return cls[name.strip().upper().replace("-", "_")]
        except KeyError:
            raise ValidationError("layer", f"unknown layer {name!r}") from None


NUM_LAYERS = len(LayerId)


@dataclass(frozen=True)
class PredicateLexicon:
    predicates: Mapping[str, frozenset[LayerId]]
    thresholds: Mapping[LayerId, float] = field(
        default_factory=lambda: {layer: DEFAULT_LAYER_THRESHOLD for layer in LayerId}
    )
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        for pred, layers in self.predicates.items():
            if not layers:
                raise ValidationError(f"predicates.{pred}", "maps to no layer")
        for layer in LayerId:
            v = self.thresholds.get(layer)
            if v is None or not 0.0 <= v <= 1.0:
                raise ValidationError(f"thresholds.{layer.key}", f"{v!r} not in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha", f"{self.alpha!r} not in [0, 1]")

    def with_thresholds(self, **overrides: float) -> "PredicateLexicon":
        th = dict(self.thresholds)
        for name, v in overrides.items():
            th[LayerId.parse(name)] = v
        return replace(self, thresholds=th)

    @classmethod
    def from_dict(cls, obj: dict) -> "PredicateLexicon":
        preds = {
            str(p): frozenset(LayerId.parse(n) for n in names)
            for p, names in obj.get("predicates", {}).items()
        }
        th = {layer: DEFAULT_LAYER_THRESHOLD for layer in LayerId}
        for name, v in obj.get("thresholds", {}).items():
            th[LayerId.parse(name)] = float(v)
        return cls(preds, th, float(obj.get("alpha", DEFAULT_ALPHA)))

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "alpha": self.alpha,
            "thresholds": {layer.key: self.thresholds[layer] for layer in LayerId},
            "predicates": {
                p: [layer.key for layer in sorted(layers)] for p, layers in sorted(self.predicates.items())
            },
        }

    @classmethod
    def load(cls, path) -> "PredicateLexicon":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "PredicateLexicon":
        text = resources.files("csgplan").joinpath("data/lexicon.json").read_text("utf-8")
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LayeredRelation:
    subject: int
    object: int
    predicate: str
    layer: LayerId
    confidence: float


def classify_layers(lexicon: PredicateLexicon, predicate: str) -> frozenset[LayerId]:
    return lexicon.predicates.get(predicate, frozenset())


def select_per_layer(
    lexicon: PredicateLexicon,
    pair_scores: Mapping[str, float],
    subject: int,
    object: int,
) -> list[LayeredRelation]:
    """Argmax over each layer's predicate subset, then the layer threshold.

    Equal scores resolve to the lexicographically smaller predicate.
    """
    best: dict[LayerId, tuple[float, str]] = {}
    for pred, score in pair_scores.items():
        for layer in lexicon.predicates.get(pred, ()):
            cur = best.get(layer)
            if cur is None or score > cur[0] or (score == cur[0] and pred < cur[1]):
                best[layer] = (score, pred)
    out = []
    for layer in LayerId:
        if layer in best:
            score, pred = best[layer]
            if score >= lexicon.thresholds[layer]:
                out.append(LayeredRelation(subject, object, pred, layer, score))
    return out


def filter_detections(frame: Frame, alpha: float) -> Frame:
    """Drop detections below alpha (inclusive keep) and reindex relations.

    Relations that referenced a dropped detection are discarded.
    """
    keep = [i for i, d in enumerate(frame.detections) if d.confidence >= alpha]
    if len(keep) == len(frame.detections):
        return frame
    remap = {old: new for new, old in enumerate(keep)}
    rels = None
    if frame.relations is not None:
        rels = tuple(
            RawRelation(remap[r.subject_index], remap[r.object_index], r.predicate, r.confidence)
            for r in frame.relations
            if r.subject_index in remap and r.object_index in remap
        )
    return Frame(frame.timestamp, tuple(frame.detections[i] for i in keep), rels)


def layered_from_raw(
    lexicon: PredicateLexicon, relations, track_ids: list[int]
) -> list[LayeredRelation]:
    """Group a frame's raw relations per ordered pair and apply select_per_layer.

    ``track_ids[i]`` is the track id of detection ``i``.  Duplicate
    predicates for one pair keep their highest score.
    """
    pairs: dict[tuple[int, int], dict[str, float]] = {}
    for r in relations:
        scores = pairs.setdefault((r.subject_index, r.object_index), {})
        if r.confidence > scores.get(r.predicate, -1.0):
            scores[r.predicate] = r.confidence
    out = []
    for (si, oi), scores in pairs.items():
        out.extend(select_per_layer(lexicon, scores, track_ids[si], track_ids[oi]))
    return out
