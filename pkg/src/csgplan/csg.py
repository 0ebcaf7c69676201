"""Continuous scene graph: persistent nodes and per-pair, per-layer state timelines.

Every ordered node pair owns one cell timeline per layer.  A cell holds a
committed predicate (or nothing) at each ingested timestamp; changes go
through a debouncing rule that needs ``theta`` consecutive raw observations.
Timelines are stored as change points, so the dense ``n x 4`` matrix is
materialized only on request.

Per frame, each active cell sees one of three things:

* a label: the relation source reported a predicate for the pair and layer;
* empty: both endpoints were detected and visible but nothing was reported;
* unknown: an endpoint is missing or occluded; the committed state carries over.

Nodes that are the object of an agent's occluding relation (``holding`` by
default) are occluded for the topological layer: their topological reports
are dropped for that frame.
"""

from __future__ import annotations

import copy
import enum
import threading
from bisect import bisect_right
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import CsgError, HistoryError
from .layering import NUM_LAYERS, LayeredRelation, LayerId
from .tracker import TrackedDetection

_TOPO = int(LayerId.TOPOLOGICAL)
_FUNC = int(LayerId.FUNCTIONAL)
_LAYER_INDEX = {layer: int(layer) for layer in LayerId}


class Triplet(NamedTuple):
    subject: int
    predicate: str
    object: int


class NodeKind(enum.Enum):
    AGENT = "agent"
    OBJECT = "object"


@dataclass(frozen=True)
class CsgConfig:
    theta: int = 3
    sigma: float = 0.5
    decay: float = 0.02
    prune_threshold: float = 0.05
    max_age: int = 10
    agent_classes: frozenset[str] = frozenset({"person", "hand"})
    occluding_predicates: frozenset[str] = frozenset({"holding"})
    history_cap: int = 100_000
    # "literal": w + sigma * gap.  "inverse_gap": w + sigma / gap (non-default).
    weight_rule: str = "literal"

    def __post_init__(self):
        if self.theta < 1:
            raise CsgError("theta must be >= 1")
        if self.sigma < 0 or self.decay < 0:
            raise CsgError("sigma and decay must be >= 0")
        if self.weight_rule not in ("literal", "inverse_gap"):
            raise CsgError(f"unknown weight rule {self.weight_rule!r}")
        if self.history_cap < 1:
            raise CsgError("history_cap must be >= 1")


def update_weight(w_prev: float, t_current: int, t_last: int, sigma: float) -> float:
    """Confidence after a re-detection: ``w_prev + sigma * (t_current - t_last)``."""
    if t_current < t_last:
        raise CsgError(f"current timestamp {t_current} precedes last detection {t_last}")
    return w_prev + sigma * (t_current - t_last)


def update_weight_inverse_gap(w_prev: float, t_current: int, t_last: int, sigma: float) -> float:
    if t_current < t_last:
        raise CsgError(f"current timestamp {t_current} precedes last detection {t_last}")
    gap = t_current - t_last
    return w_prev + sigma / gap if gap else w_prev


@dataclass
class NodeRecord:
    track_id: int
    class_label: str
    bbox: tuple
    confidence: float
    first_seen: int
    last_seen: int
    kind: NodeKind
    active: bool = True


class _NoPending:
    __slots__ = ()

    def __repr__(self):
        return "<no pending>"

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __reduce__(self):
        return "_NO_PENDING"


_NO_PENDING = _NoPending()


class Cell:
    """Timeline of one layer for one ordered pair."""

    __slots__ = ("times", "states", "pending", "count", "weight", "last_detected", "observed_at", "detected_at")

    def __init__(self):
        self.times: list[int] = []
        self.states: list[str | None] = []
        self.pending = _NO_PENDING
        self.count = 0
        self.weight = 0.0
        self.last_detected = -1
        self.observed_at = -1
        self.detected_at = -1

    @property
    def committed(self) -> str | None:
        return self.states[-1] if self.states else None

    @property
    def pending_label(self):
        return None if self.pending is _NO_PENDING else self.pending

    @property
    def has_pending(self) -> bool:
        return self.pending is not _NO_PENDING

    def commit(self, label, t: int) -> None:
        if self.times and self.times[-1] == t:
            self.states[-1] = label
            if len(self.states) > 1 and self.states[-2] == label:
                self.times.pop()
                self.states.pop()
        elif self.committed != label:
            self.times.append(t)
            self.states.append(label)
        self.pending = _NO_PENDING
        self.count = 0

    def at(self, t: int) -> str | None:
        i = bisect_right(self.times, t) - 1
        return self.states[i] if i >= 0 else None

    def labels_in(self, start: int, end: int) -> set[str]:
        """Labels committed at any timestamp in ``[start, end]``."""
        times, states = self.times, self.states
        i = bisect_right(times, start) - 1
        out = set()
        if i >= 0 and states[i] is not None:
            out.add(states[i])
        j = i + 1
        n = len(times)
        while j < n and times[j] <= end:
            if states[j] is not None:
                out.add(states[j])
            j += 1
        return out

    def trim_before(self, horizon: int) -> None:
        i = bisect_right(self.times, horizon) - 1
        if i > 0:
            del self.times[:i]
            del self.states[:i]


def refine_state(cell: Cell, raw_label: str | None, t: int, theta: int) -> bool:
    """Apply one raw observation to ``cell``.  Returns True if the committed state changed.

    A label equal to the committed state clears any pending candidate.  A
    different label (``None`` meaning "nothing reported") becomes the pending
    candidate; ``theta`` consecutive observations of it commit it at ``t``.
    An empty cell commits its first label immediately.
    """
    committed = cell.committed
    if raw_label == committed:
        cell.pending = _NO_PENDING
        cell.count = 0
        return False
    if committed is None and raw_label is not None:
        cell.commit(raw_label, t)
        return True
    if cell.pending is not _NO_PENDING and cell.pending == raw_label:
        cell.count += 1
    else:
        cell.pending = raw_label
        cell.count = 1
    if cell.count >= theta:
        cell.commit(raw_label, t)
        return True
    return False


class PairTimeline:
    __slots__ = ("subject", "object", "cells", "created_at")

    def __init__(self, subject: int, obj: int, created_at: int):
        self.subject = subject
        self.object = obj
        self.cells: list[Cell | None] = [None] * NUM_LAYERS
        self.created_at = created_at

    def cell(self, layer: LayerId) -> Cell | None:
        return self.cells[int(layer)]

    def committed(self, layer: LayerId, t: int | None = None) -> str | None:
        c = self.cells[int(layer)]
        if c is None:
            return None
        return c.committed if t is None else c.at(t)

    def weight(self, layer: LayerId) -> float:
        c = self.cells[int(layer)]
        return 0.0 if c is None else c.weight

    def matrix(self, timestamps: Iterable[int]) -> list[list[str | None]]:
        """Dense committed-state matrix: one row per timestamp, one column per layer."""
        rows = []
        for t in timestamps:
            rows.append([None if c is None else c.at(t) for c in self.cells])
        return rows


class ContinuousSceneGraph:
    """The agent's memory.  One writer; readers use the query methods or snapshot()."""

    def __init__(self, config: CsgConfig | None = None):
        self.config = config or CsgConfig()
        self.nodes: dict[int, NodeRecord] = {}
        self.pairs: dict[tuple[int, int], PairTimeline] = {}
        self.current: int | None = None
        self.timestamps: deque[int] = deque(maxlen=self.config.history_cap)
        self.diagnostics: Counter = Counter()
        self._by_subject: dict[int, list[PairTimeline]] = {}
        self._active: dict[tuple[int, int, int], tuple[PairTimeline, Cell]] = {}
        self._lock = threading.RLock()
        self._frames_since_trim = 0

    # ------------------------------------------------------------------ update

    def update(
        self,
        tracked: Iterable[TrackedDetection],
        relations: Iterable[LayeredRelation],
        t: int,
    ) -> "ContinuousSceneGraph":
        with self._lock:
            if self.current is not None and t <= self.current:
                raise CsgError(f"timestamp {t} does not follow current timestamp {self.current}")
            self._update(tracked, relations, t)
        return self

    def _update(self, tracked, relations, t):
        cfg = self.config
        nodes = self.nodes
        detected = set()
        for td in tracked:
            tid = td.track_id
            detected.add(tid)
            rec = nodes.get(tid)
            if rec is None:
                kind = NodeKind.AGENT if td.class_label in cfg.agent_classes else NodeKind.OBJECT
                nodes[tid] = NodeRecord(tid, td.class_label, td.bbox, td.confidence, t, t, kind)
            else:
                rec.bbox = td.bbox
                rec.confidence = td.confidence
                rec.last_seen = t
                rec.active = True

        obs: dict[tuple[int, int, int], tuple[str, float]] = {}
        occluded = set()
        occluding = cfg.occluding_predicates
        for r in relations:
            s, o = r.subject, r.object
            if s not in nodes or o not in nodes:
                self.diagnostics["unknown_endpoint"] += 1
                continue
            li = _LAYER_INDEX[r.layer]
            key = (s, o, li)
            prev = obs.get(key)
            if prev is None or r.confidence > prev[1]:
                obs[key] = (r.predicate, r.confidence)
            if li == _FUNC and r.predicate in occluding and nodes[s].kind is NodeKind.AGENT:
                occluded.add(o)

        theta = cfg.theta
        sigma = cfg.sigma
        literal = cfg.weight_rule == "literal"
        active = self._active
        for key, (pred, conf) in obs.items():
            s, o, li = key
            if li == _TOPO and (s in occluded or o in occluded):
                self.diagnostics["occluded_observation"] += 1
                continue
            pair = self.pairs.get((s, o))
            if pair is None:
                pair = PairTimeline(s, o, t)
                self.pairs[(s, o)] = pair
                self._by_subject.setdefault(s, []).append(pair)
            cell = pair.cells[li]
            if cell is None:
                cell = pair.cells[li] = Cell()
            cell.observed_at = t
            committed = cell.states[-1] if cell.states else None
            if pred == committed:
                gap = t - cell.last_detected
                if literal:
                    cell.weight += sigma * gap
                elif gap:
                    cell.weight += sigma / gap
                cell.last_detected = t
                cell.detected_at = t
                cell.pending = _NO_PENDING
                cell.count = 0
            elif refine_state(cell, pred, t, theta):
                cell.weight = conf
                cell.last_detected = t
                cell.detected_at = t
            active[key] = (pair, cell)

        decay = cfg.decay
        w_min = cfg.prune_threshold
        dead = []
        for key, (pair, cell) in active.items():
            # Re-detected this frame: committed is a label and nothing decays.
            if cell.detected_at == t and cell.weight >= w_min:
                continue
            if cell.observed_at != t:
                s, o, li = key
                visible = s in detected and o in detected
                if visible and li == _TOPO and (s in occluded or o in occluded):
                    visible = False
                if visible:
                    if refine_state(cell, None, t, theta):
                        cell.weight = 0.0
            if cell.detected_at != t and cell.states and cell.states[-1] is not None:
                cell.weight = max(0.0, cell.weight - decay)
            if cell.states and cell.states[-1] is not None and cell.weight < w_min:
                cell.commit(None, t)
                cell.weight = 0.0
                self.diagnostics["pruned"] += 1
            if (not cell.states or cell.states[-1] is None) and cell.pending is _NO_PENDING:
                dead.append(key)
        for key in dead:
            del active[key]

        max_age = cfg.max_age
        for rec in nodes.values():
            if rec.active and t - rec.last_seen > max_age:
                rec.active = False

        self.current = t
        self.timestamps.append(t)
        self._frames_since_trim += 1
        if self._frames_since_trim >= cfg.history_cap:
            self._trim()

    def _trim(self):
        horizon = self.timestamps[0]
        for pair in self.pairs.values():
            for c in pair.cells:
                if c is not None:
                    c.trim_before(horizon)
        self._frames_since_trim = 0

    def prune(self, t: int) -> "ContinuousSceneGraph":
        """Decay every live cell not re-detected at ``t`` and clear weak ones.

        ``update`` applies this as part of each frame; calling it directly is
        for inspection and tests.
        """
        with self._lock:
            cfg = self.config
            dead = []
            for key, (pair, cell) in self._active.items():
                if cell.detected_at != t and cell.committed is not None:
                    cell.weight = max(0.0, cell.weight - cfg.decay)
                if cell.committed is not None and cell.weight < cfg.prune_threshold:
                    cell.commit(None, t)
                    cell.weight = 0.0
                if cell.committed is None and not cell.has_pending:
                    dead.append(key)
            for key in dead:
                del self._active[key]
        return self

    # ----------------------------------------------------------------- queries

    @property
    def horizon(self) -> tuple[int, int] | None:
        if not self.timestamps:
            return None
        return self.timestamps[0], self.timestamps[-1]

    def _check_range(self, start: int, end: int) -> None:
        h = self.horizon
        if h is None:
            raise HistoryError("graph has no history yet")
        if start < h[0] or end > h[1]:
            raise HistoryError(f"requested [{start}, {end}] outside retained history [{h[0]}, {h[1]}]")

    def relations_at(self, layer: LayerId, t: int) -> set[Triplet]:
        """Committed, non-empty relations of ``layer`` at timestamp ``t``."""
        with self._lock:
            self._check_range(t, t)
            li = int(layer)
            out = set()
            for pair in self.pairs.values():
                c = pair.cells[li]
                if c is not None:
                    label = c.at(t)
                    if label is not None:
                        out.add(Triplet(pair.subject, label, pair.object))
            return out

    def relations_in_window(
        self, layer: LayerId, start: int, end: int, subject: int | None = None
    ) -> set[Triplet]:
        """Relations committed at any timestamp in ``[start, end]``."""
        with self._lock:
            self._check_range(start, end)
            li = int(layer)
            pairs = self.pairs.values() if subject is None else self._by_subject.get(subject, ())
            out = set()
            for pair in pairs:
                c = pair.cells[li]
                if c is not None:
                    for label in c.labels_in(start, end):
                        out.add(Triplet(pair.subject, label, pair.object))
            return out

    def class_of(self, track_id: int) -> str:
        return self.nodes[track_id].class_label

    def matrix(self, subject: int, obj: int) -> list[list[str | None]]:
        pair = self.pairs.get((subject, obj))
        if pair is None:
            return [[None] * NUM_LAYERS for _ in self.timestamps]
        return pair.matrix(self.timestamps)

    def snapshot(self) -> "ContinuousSceneGraph":
        """Deep copy taken under the writer lock."""
        with self._lock:
            lock = self._lock
            self._lock = None
            try:
                snap = copy.deepcopy(self)
            finally:
                self._lock = lock
            snap._lock = threading.RLock()
            return snap

    def to_dict(self) -> dict:
        """Stable dump: nodes, per-cell change points, weights, pending buffers."""
        with self._lock:
            h = self.horizon
            pairs = []
            for (s, o), pair in sorted(self.pairs.items()):
                cells = {}
                for layer in LayerId:
                    c = pair.cells[int(layer)]
                    if c is None:
                        continue
                    cells[layer.key] = {
                        "changes": [[t, label] for t, label in zip(c.times, c.states)],
                        "weight": c.weight,
                        "last_detected": c.last_detected,
                        "pending": None if not c.has_pending else {"label": c.pending, "count": c.count},
                    }
                pairs.append({"subject": s, "object": o, "layers": cells})
            return {
                "format": "csgplan.graph/1",
                "current": self.current,
                "history": None if h is None else list(h),
                "config": {
                    "theta": self.config.theta,
                    "sigma": self.config.sigma,
                    "decay": self.config.decay,
                    "prune_threshold": self.config.prune_threshold,
                    "weight_rule": self.config.weight_rule,
                },
                "nodes": [
                    {
                        "track_id": n.track_id,
                        "class": n.class_label,
                        "kind": n.kind.value,
                        "bbox": list(n.bbox),
                        "conf": n.confidence,
                        "first_seen": n.first_seen,
                        "last_seen": n.last_seen,
                        "active": n.active,
                    }
                    for _, n in sorted(self.nodes.items())
                ],
                "pairs": pairs,
                "diagnostics": dict(self.diagnostics),
            }


def update(g: ContinuousSceneGraph, tracked, relations, t: int) -> ContinuousSceneGraph:
    return g.update(tracked, relations, t)


def relations_at(g: ContinuousSceneGraph, layer: LayerId, t: int) -> set[Triplet]:
    return g.relations_at(layer, t)
