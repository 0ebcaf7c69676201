"""Scenario builders and independent oracles shared by the test modules."""

from __future__ import annotations

import json
import random
import socket
from dataclasses import dataclass

from csgplan.csg import ContinuousSceneGraph, CsgConfig, Triplet
from csgplan.layering import LayeredRelation, LayerId
from csgplan.policybank import protocol as proto
from csgplan.stream import Detection, Frame, RawRelation
from csgplan.tracker import TrackedDetection

FUNC = LayerId.FUNCTIONAL
TOPO = LayerId.TOPOLOGICAL


def box(cx, cy, w, h):
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def lerp(a, b, f):
    return a + (b - a) * f


# ----------------------------------------------------------------- scenarios


def glass_shelf_frames(carry: int = 40) -> list[Frame]:
    """A person picks a glass off a table and puts it on a shelf.

    Relations are carried in the stream (no geometry derivation).  While the
    glass is held no support relation is reported for it.
    """
    table = box(0.3, 0.75, 0.4, 0.3)
    shelf = box(0.78, 0.3, 0.35, 0.2)
    start, goal = (0.3, 0.55), (0.78, 0.15)
    person_home = (0.1, 0.3)
    frames = []
    t = 0

    def frame(person_c, glass_c, rels):
        nonlocal t
        dets = (
            Detection(box(*person_c, 0.15, 0.2), "person", 0.9),
            Detection(box(*glass_c, 0.06, 0.1), "glass", 0.9),
            Detection(table, "table", 0.95),
            Detection(shelf, "shelf", 0.95),
        )
        f = Frame(t, dets, tuple(RawRelation(s, o, p, c) for s, o, p, c in rels))
        t += 1
        frames.append(f)

    on_table = [(1, 2, "on", 0.85)]
    on_shelf = [(1, 3, "on", 0.85)]
    for _ in range(10):
        frame(person_home, start, on_table)
    for i in range(1, 21):
        f = i / 20
        frame((lerp(person_home[0], start[0], f), lerp(person_home[1], start[1], f)), start, on_table)
    for i in range(1, carry + 1):
        f = i / carry
        c = (lerp(start[0], goal[0], f), lerp(start[1], goal[1], f))
        frame(c, c, [(0, 1, "holding", 0.8)])
    for i in range(1, 21):
        f = i / 20
        frame((lerp(goal[0], person_home[0], f), lerp(goal[1], person_home[1], f)), goal, on_shelf)
    for _ in range(15):
        frame(person_home, goal, on_shelf)
    return frames


# ------------------------------------------------------- refinement oracle


def committed_sequence(raw, theta, initial):
    """Committed label after each raw observation, written directly from the rule.

    The state becomes L at step i exactly when the last ``theta`` raw labels
    all equal L and L differs from the current state.
    """
    out = []
    cur = initial
    for i, x in enumerate(raw):
        if x != cur and i >= theta - 1 and all(y == x for y in raw[i - theta + 1 : i + 1]):
            cur = x
        out.append(cur)
    return out


# --------------------------------------------------------- graph replay oracle


@dataclass
class OracleCell:
    committed: str | None = None
    pending: object = None
    has_pending: bool = False
    count: int = 0
    weight: float = 0.0
    last: int = -1


def replay(inputs, cfg: CsgConfig):
    """From-scratch replay of the graph rules.

    ``inputs`` is a list of ``(t, {track_id: class}, [LayeredRelation])``.
    Returns ``{t: {(s, o, layer): label}}`` of committed non-empty cells.
    """
    known: dict[int, str] = {}
    cells: dict[tuple, OracleCell] = {}
    history = {}
    for t, dets, rels in inputs:
        known.update(dets)
        best = {}
        held = set()
        for r in rels:
            if r.subject not in known or r.object not in known:
                continue
            key = (r.subject, r.object, int(r.layer))
            if key not in best or r.confidence > best[key][1]:
                best[key] = (r.predicate, r.confidence)
            if (
                r.layer == FUNC
                and r.predicate in cfg.occluding_predicates
                and known[r.subject] in cfg.agent_classes
            ):
                held.add(r.object)
        for key in best:
            s, o, li = key
            if li == int(TOPO) and (s in held or o in held):
                continue
            cells.setdefault(key, OracleCell())
        for key, c in cells.items():
            s, o, li = key
            hidden = li == int(TOPO) and (s in held or o in held)
            detected = False
            if hidden:
                pass
            elif key in best:
                p, conf = best[key]
                if p == c.committed:
                    c.weight += cfg.sigma * (t - c.last) if cfg.weight_rule == "literal" else (
                        cfg.sigma / (t - c.last) if t != c.last else 0.0
                    )
                    c.last = t
                    detected = True
                    c.has_pending = False
                    c.count = 0
                elif c.committed is None:
                    c.committed, c.weight, c.last = p, conf, t
                    c.has_pending, c.count = False, 0
                    detected = True
                else:
                    if c.has_pending and c.pending == p:
                        c.count += 1
                    else:
                        c.pending, c.has_pending, c.count = p, True, 1
                    if c.count >= cfg.theta:
                        c.committed, c.weight, c.last = p, conf, t
                        c.has_pending, c.count = False, 0
                        detected = True
            elif s in dets and o in dets and c.committed is not None:
                if c.has_pending and c.pending is None:
                    c.count += 1
                else:
                    c.pending, c.has_pending, c.count = None, True, 1
                if c.count >= cfg.theta:
                    c.committed, c.weight = None, 0.0
                    c.has_pending, c.count = False, 0
            elif s in dets and o in dets:
                c.has_pending, c.count = False, 0
            if not detected and c.committed is not None:
                c.weight = max(0.0, c.weight - cfg.decay)
            if c.committed is not None and c.weight < cfg.prune_threshold:
                c.committed, c.weight = None, 0.0
                c.has_pending, c.count = False, 0
        history[t] = {k: c.committed for k, c in cells.items() if c.committed is not None}
    return history


def feed(g: ContinuousSceneGraph, inputs) -> ContinuousSceneGraph:
    for t, dets, rels in inputs:
        tracked = [TrackedDetection(Detection((0.1, 0.1, 0.2, 0.2), cls, 0.9), tid) for tid, cls in dets.items()]
        g.update(tracked, rels, t)
    return g


def random_inputs(rng: random.Random, frames: int, entities: int, p_drop: float = 0.1):
    """Random layered observations over a small vocabulary, biased toward runs."""
    classes = {0: "hand"} | {i: f"obj{i % 3}" for i in range(1, entities)}
    topo_preds = ["on", "in", "left_of"]
    state: dict = {}
    out = []
    for t in range(frames):
        dets = {i: c for i, c in classes.items() if rng.random() > p_drop}
        rels = []
        for s in dets:
            for o in dets:
                if s == o:
                    continue
                key = (s, o)
                if rng.random() < 0.15:
                    state[key] = rng.choice(topo_preds + [None, None])
                p = state.get(key)
                if p is not None and s != 0:
                    rels.append(LayeredRelation(s, o, p, TOPO, round(rng.uniform(0.3, 1.0), 2)))
        if 0 in dets:
            holder = state.get("held")
            if rng.random() < 0.1:
                holder = rng.choice([None] + [i for i in classes if i != 0])
                state["held"] = holder
            if holder is not None and holder in dets:
                rels.append(LayeredRelation(0, holder, "holding", FUNC, 0.8))
        out.append((t, dets, rels))
    return out


# ------------------------------------------------------ extraction oracle


def brute_force_actions(history: dict, zeta: int):
    """Evaluate the extraction rule at every (trigger, k) from dense history."""
    times = sorted(history)
    lo, hi = times[0], times[-1]
    found = set()
    for k in times:
        if k - zeta < lo or k + zeta > hi:
            continue
        for (s, o, li), p in history[k].items():
            if li != int(FUNC):
                continue
            pre = set()
            for t in range(k - zeta, k + 1):
                for (a, b, lj), q in history[t].items():
                    if lj == int(TOPO) and a == o:
                        pre.add(Triplet(a, q, b))
            eff = set()
            for t in range(k, k + zeta + 1):
                for (a, b, lj), q in history[t].items():
                    if lj == int(TOPO) and a == o:
                        eff.add(Triplet(a, q, b))
            eff -= pre
            if pre and eff:
                found.add((Triplet(s, p, o), k, frozenset(pre), frozenset(eff), frozenset(pre - eff)))
    return found


# ------------------------------------------------------- random domains


def random_grounded_actions(rng: random.Random, n: int):
    """Grounded actions over a small vocabulary, with distinct trigger times."""
    from csgplan.learner import GroundedAction

    classes_pool = ["cup", "glass", "plate", "table", "shelf", "wine glass", "bowl"]
    preds = ["on", "in", "left_of", "right_of", "inside", "next_to"]
    out = []
    for i in range(n):
        k = rng.randint(3, 5)
        classes = [(0, rng.choice(["hand", "person"]))] + [(j, rng.choice(classes_pool)) for j in range(1, k)]
        o = 1
        others = list(range(2, k))
        pre = {Triplet(o, rng.choice(preds), rng.choice(others)) for _ in range(rng.randint(1, 3))}
        eff = {Triplet(o, rng.choice(preds), rng.choice(others)) for _ in range(rng.randint(1, 3))} - pre
        if not eff:
            eff = {Triplet(o, "above", others[0])}
        trigger = Triplet(0, rng.choice(["holding", "using"]), o)
        out.append(
            GroundedAction(trigger, 10 * i, frozenset(pre), frozenset(eff), frozenset(pre - eff), tuple(classes))
        )
    return out


# ------------------------------------------------------------ wire client


class Raw:
    """Line-level socket client for poking at the wire format."""

    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10)
        self.r = self.sock.makefile("rb")

    def send(self, obj):
        data = obj if isinstance(obj, bytes) else proto.encode(obj)
        self.sock.sendall(data)

    def recv(self):
        line = self.r.readline()
        return None if not line else json.loads(line)

    def until_done(self, rid):
        msgs = []
        while True:
            m = self.recv()
            assert m is not None, "connection closed early"
            msgs.append(m)
            if m["type"] in ("done", "error") and m.get("request_id") == rid:
                return msgs

    def close(self):
        self.r.close()
        self.sock.close()
