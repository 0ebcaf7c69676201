"""Frame data model and line-delimited demonstration streams.

One frame per line, UTF-8 JSON object with keys::

    {"t": 3,
     "detections": [{"bbox": [x1, y1, x2, y2], "class": "plate", "conf": 0.9}],
     "relations": [{"sub": 0, "obj": 1, "predicate": "on", "conf": 0.8}]}

``relations`` may be omitted; QSR mode derives relations downstream.
Bounding boxes are normalized to [0, 1].  ``t`` is a frame index.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import ParseError, StreamError, ValidationError

BBox = tuple[float, float, float, float]


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(name, f"{value!r} not in [0, 1]")


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_label: str
    confidence: float

    def __post_init__(self):
        if len(self.bbox) != 4:
            raise ValidationError("bbox", "expected 4 coordinates")
        x1, y1, x2, y2 = self.bbox
        for name, v in zip(("x1", "y1", "x2", "y2"), self.bbox):
            _check_unit(f"bbox.{name}", v)
        if not (x1 < x2 and y1 < y2):
            raise ValidationError("bbox", f"coordinates not ordered: {self.bbox}")
        _check_unit("conf", self.confidence)
        if not self.class_label:
            raise ValidationError("class", "empty class label")

    @property
    def centroid(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return (x1 + x2) / 2.0, (y1 + y2) / 2.0


@dataclass(frozen=True)
class RawRelation:
    subject_index: int
    object_index: int
    predicate: str
    confidence: float

    def __post_init__(self):
        if self.subject_index == self.object_index:
            raise ValidationError("relations.sub", "subject_index equals object_index")
        _check_unit("relations.conf", self.confidence)


@dataclass(frozen=True)
class Frame:
    timestamp: int
    detections: tuple[Detection, ...] = ()
    relations: tuple[RawRelation, ...] | None = None

    def __post_init__(self):
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise ValidationError("t", f"{self.timestamp!r} is not a nonnegative integer")
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.relations is not None:
            object.__setattr__(self, "relations", tuple(self.relations))
            n = len(self.detections)
            for r in self.relations:
                for name, idx in (("sub", r.subject_index), ("obj", r.object_index)):
                    if not 0 <= idx < n:
                        raise ValidationError(
                            f"relations.{name}", f"index {idx} out of range for {n} detections"
                        )


def _as_int(value, name):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(name, f"expected integer, got {value!r}")
    return value


def _as_float(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(name, f"expected number, got {value!r}")
    return float(value)


def frame_from_dict(obj: dict) -> Frame:
    """Build a validated Frame from a decoded record."""
    if not isinstance(obj, dict):
        raise ValidationError("record", "expected a JSON object")
    try:
        t = _as_int(obj["t"], "t")
        raw_dets = obj["detections"]
    except KeyError as exc:
        raise ValidationError(exc.args[0], "missing key") from None
    if not isinstance(raw_dets, list):
        raise ValidationError("detections", "expected a list")
    dets = []
    for d in raw_dets:
        if not isinstance(d, dict):
            raise ValidationError("detections", f"expected an object, got {d!r}")
        try:
            if not isinstance(d["bbox"], list):
                raise ValidationError("bbox", "expected a list of 4 numbers")
            bbox = tuple(_as_float(v, "bbox") for v in d["bbox"])
            dets.append(Detection(bbox, str(d["class"]), _as_float(d["conf"], "conf")))
        except KeyError as exc:
            raise ValidationError(f"detections.{exc.args[0]}", "missing key") from None
    relations = None
    if "relations" in obj and obj["relations"] is not None:
        if not isinstance(obj["relations"], list):
            raise ValidationError("relations", "expected a list")
        relations = []
        for r in obj["relations"]:
            if not isinstance(r, dict):
                raise ValidationError("relations", f"expected an object, got {r!r}")
            try:
                relations.append(
                    RawRelation(
                        _as_int(r["sub"], "relations.sub"),
                        _as_int(r["obj"], "relations.obj"),
                        str(r["predicate"]),
                        _as_float(r["conf"], "relations.conf"),
                    )
                )
            except KeyError as exc:
                raise ValidationError(f"relations.{exc.args[0]}", "missing key") from None
    return Frame(t, tuple(dets), None if relations is None else tuple(relations))


def frame_to_dict(f: Frame) -> dict:
    out = {
        "t": f.timestamp,
        "detections": [
            {"bbox": list(d.bbox), "class": d.class_label, "conf": d.confidence}
            for d in f.detections
        ],
    }
    if f.relations is not None:
        out["relations"] = [
            {"sub": r.subject_index, "obj": r.object_index, "predicate": r.predicate, "conf": r.confidence}
            for r in f.relations
        ]
    return out


def parse_frame(line: str, lineno: int | None = None) -> Frame:
    """Parse one stream record.  Key order is irrelevant."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed record: {exc.msg}", lineno, exc.colno) from None
    try:
        return frame_from_dict(obj)
    except ValidationError as exc:
        if lineno is not None:
            exc.args = (f"line {lineno}: {exc.args[0]}",)
        raise


def serialize_frame(f: Frame) -> str:
    return json.dumps(frame_to_dict(f), separators=(",", ":"))


def open_stream(source: str | os.PathLike | Iterable[Frame | str]) -> Iterator[Frame]:
    """Yield frames from a file path or an in-memory sequence, in stored order.

    Files are read lazily, one line at a time.  Blank lines are skipped.
    Raises StreamError when timestamps do not strictly increase.
    """
    if isinstance(source, (str, os.PathLike)):
        return _checked(_read_file(os.fspath(source)))
    return _checked(_read_items(source))


def _read_file(path: str) -> Iterator[tuple[int, Frame]]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise StreamError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, parse_frame(line, lineno)


def _read_items(items: Iterable[Frame | str]) -> Iterator[tuple[int, Frame]]:
    for i, item in enumerate(items, start=1):
        if isinstance(item, Frame):
            yield i, item
        elif item.strip():
            yield i, parse_frame(item, i)


def _checked(records: Iterator[tuple[int, Frame]]) -> Iterator[Frame]:
    prev = None
    for n, (lineno, frame) in enumerate(records, start=1):
        if prev is not None and frame.timestamp <= prev:
            raise StreamError(
                f"record {n} (line {lineno}): timestamp {frame.timestamp} does not "
                f"follow previous timestamp {prev}"
            )
        prev = frame.timestamp
        yield frame


def write_stream(path: str | os.PathLike, frames: Iterable[Frame]) -> int:
    """Write frames one per line; returns the count written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            fh.write(serialize_frame(f))
            fh.write("\n")
            n += 1
    return n
