from __future__ import annotations

import itertools
import json

import pytest

from csgplan.errors import ValidationError
from csgplan.layering import (
    LayerId,
    PredicateLexicon,
    classify_layers,
    filter_detections,
    layered_from_raw,
    select_per_layer,
)
from csgplan.stream import Detection, Frame, RawRelation

LEX = PredicateLexicon.default()


def test_classify():
    assert classify_layers(LEX, "on") == {LayerId.TOPOLOGICAL, LayerId.FUNCTIONAL}
    assert classify_layers(LEX, "holding") == {LayerId.FUNCTIONAL}
    assert classify_layers(LEX, "unknown_pred") == frozenset()


def test_argmax_per_layer():
    out = select_per_layer(LEX, {"on": 0.9, "holding": 0.2}, 1, 2)
    got = {(r.layer, r.predicate, r.confidence) for r in out}
    assert got == {(LayerId.TOPOLOGICAL, "on", 0.9), (LayerId.FUNCTIONAL, "on", 0.9)}


def test_below_threshold_dropped():
    assert select_per_layer(LEX, {"on": 0.1, "holding": 0.29}, 1, 2) == []


def test_tie_breaks_lexicographically():
    (r,) = select_per_layer(LEX, {"right_of": 0.5, "left_of": 0.5}, 1, 2)
    assert r.predicate == "left_of"


def test_dense_scores_bounded():
    scores = {p: 0.9 for p in LEX.predicates}
    ids = [0, 1, 2]
    out = []
    for s, o in itertools.permutations(ids, 2):
        out.extend(select_per_layer(LEX, scores, s, o))
    assert len(out) <= 3 * 2 * 4
    assert len(out) == 24


def _frame():
    confs = [0.1, 0.194, 0.5]
    dets = tuple(Detection((0.1 * i, 0.1, 0.1 * i + 0.05, 0.2), "cup", c) for i, c in enumerate(confs))
    rels = (RawRelation(0, 1, "on", 0.8), RawRelation(1, 2, "on", 0.7))
    return Frame(0, dets, rels)


def test_filter_boundary_inclusive():
    f = filter_detections(_frame(), 0.194)
    assert [d.confidence for d in f.detections] == [0.194, 0.5]
    # The relation touching the dropped detection goes; the other is reindexed.
    assert f.relations == (RawRelation(0, 1, "on", 0.7),)


def test_filter_extremes():
    assert len(filter_detections(_frame(), 0.0).detections) == 3
    assert filter_detections(_frame(), 1.0).detections == ()


def test_layered_from_raw_keeps_best_duplicate():
    rels = [RawRelation(0, 1, "on", 0.4), RawRelation(0, 1, "on", 0.8), RawRelation(0, 1, "holding", 0.6)]
    out = layered_from_raw(LEX, rels, [10, 11])
    got = {(r.subject, r.object, r.layer, r.predicate, r.confidence) for r in out}
    assert got == {
        (10, 11, LayerId.TOPOLOGICAL, "on", 0.8),
        (10, 11, LayerId.FUNCTIONAL, "on", 0.8),
    }


def test_lexicon_file_round_trip(tmp_path):
    p = tmp_path / "lex.json"
    p.write_text(json.dumps(LEX.to_dict()))
    assert PredicateLexicon.load(p) == LEX


def test_lexicon_thresholds_override():
    lex = LEX.with_thresholds(functional=0.95)
    assert select_per_layer(lex, {"holding": 0.9}, 0, 1) == []


def test_lexicon_rejects_unknown_layer():
    obj = LEX.to_dict()
    obj["predicates"]["on"] = ["sideways"]
    with pytest.raises(ValidationError):
        PredicateLexicon.from_dict(obj)
