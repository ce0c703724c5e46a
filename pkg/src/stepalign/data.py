"""Annotation data model: tasks, procedural texts, segments, mistake labels.

This module is the single source of truth for label vocabularies, the
segment/video record types, their validation rules, and the JSON corpus
layout understood by the rest of the package.

Corpus directory layout::

    <dir>/texts/<task>.json          one procedural text per task
    <dir>/annotations/<video_id>.json  one annotation record per video
    <dir>/features/...               binary feature matrices (see features.py)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable

from .errors import ParseError, ValidationError


class TaskDomain(Enum):
    """The five recorded activity domains."""

    ELECTRICAL_CIRCUIT = "electrical_circuit"
    COLOR_MIXTURE = "color_mixture"
    IONIC_REACTION = "ionic_reaction"
    BUILDING_BLOCK = "building_block"
    CARDBOARD = "cardboard"


class Intent(Enum):
    """Whether the worker tried to follow the instructions or to err."""

    CORRECT_RUN = "correct_run"
    MISTAKE_RUN = "mistake_run"


class MistakeLabel(IntEnum):
    """Fine-grained execution-mistake taxonomy; CORRECT means no mistake."""

    CORRECT = 0
    OBJECT = 1      # worked with the wrong object
    MISPICK = 2     # grasped a wrong object, released without use
    CORRECTION = 3  # fixed an earlier mistake
    ACCIDENT = 4    # unintended action
    HOWTO = 5       # performed the step in the wrong way
    OTHERS = 6


MISTAKE_CODES: dict[MistakeLabel, str] = {
    MistakeLabel.CORRECT: "correct",
    MistakeLabel.OBJECT: "object",
    MistakeLabel.MISPICK: "mispick",
    MistakeLabel.CORRECTION: "correction",
    MistakeLabel.ACCIDENT: "accident",
    MistakeLabel.HOWTO: "howto",
    MistakeLabel.OTHERS: "others",
}
CODES_TO_MISTAKE = {code: label for label, code in MISTAKE_CODES.items()}


class CoarseLabel(IntEnum):
    """Three-way classification target. Integer values fix the argmax
    tie-break order (CORRECT wins ties)."""

    CORRECT = 0
    MISTAKE = 1
    CORRECTION = 2


def coarse_label(mistake: MistakeLabel) -> CoarseLabel:
    """Collapse the fine taxonomy: corrections stay their own class, every
    other mistake kind becomes MISTAKE."""
    if mistake == MistakeLabel.CORRECT:
        return CoarseLabel.CORRECT
    if mistake == MistakeLabel.CORRECTION:
        return CoarseLabel.CORRECTION
    return CoarseLabel.MISTAKE


@dataclass(frozen=True, order=True)
class Segment:
    """Half-open frame interval [start, end) in feature-row units."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValidationError(
                f"segment empty or negative: [{self.start}, {self.end})"
            )

    @property
    def length(self) -> int:
        return self.end - self.start

    def intersection(self, other: "Segment") -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))

    def union(self, other: "Segment") -> int:
        return self.length + other.length - self.intersection(other)

    def tiou(self, other: "Segment") -> float:
        return self.intersection(other) / self.union(other)


@dataclass(frozen=True)
class ProceduralText:
    """Ordered instruction steps for one task. Step indices are 1-based."""

    task: TaskDomain
    steps: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.steps) < 1:
            raise ValidationError(f"{self.task.value}: procedural text has no steps")
        for i, text in enumerate(self.steps, start=1):
            if not text.strip():
                raise ValidationError(f"{self.task.value}: step {i} text is empty")

    @property
    def num_steps(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class AnnotatedSegment:
    """One labelled video span. ``step`` is a 1-based index into the task's
    procedural text, or None for spans not covered by any written step."""

    segment: Segment
    step: int | None
    mistake: MistakeLabel
    description: str | None = None


@dataclass(frozen=True)
class AnnotatedVideo:
    video_id: str
    worker_id: str
    task: TaskDomain
    intent: Intent
    num_frames: int
    segments: tuple[AnnotatedSegment, ...]

    def defined_steps(self) -> set[int]:
        return {s.step for s in self.segments if s.step is not None}


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


def validate_video(video: AnnotatedVideo, text: ProceduralText) -> None:
    """Check every record invariant; raises ValidationError naming the
    video and the violated rule."""
    vid = video.video_id
    if video.num_frames < 1:
        raise ValidationError(f"{vid}: num_frames must be >= 1")
    if video.task != text.task:
        raise ValidationError(f"{vid}: annotation task {video.task.value} does not "
                              f"match text task {text.task.value}")
    prev_start = -1
    for seg in video.segments:
        if seg.segment.end > video.num_frames:
            raise ValidationError(
                f"{vid}: segment [{seg.segment.start}, {seg.segment.end}) "
                f"exceeds num_frames {video.num_frames}")
        if seg.segment.start < prev_start:
            raise ValidationError(f"{vid}: segments not sorted by start")
        prev_start = seg.segment.start
        if seg.step is not None and not (1 <= seg.step <= text.num_steps):
            raise ValidationError(
                f"{vid}: unknown step {seg.step} (text has {text.num_steps})")
        has_desc = seg.description is not None
        if seg.mistake == MistakeLabel.CORRECT and has_desc:
            raise ValidationError(f"{vid}: correct segment carries a description")
        if seg.mistake != MistakeLabel.CORRECT and not has_desc:
            raise ValidationError(
                f"{vid}: {MISTAKE_CODES[seg.mistake]} segment lacks a description")


# ---------------------------------------------------------------------------
# JSON (de)serialization


def segment_to_json(seg: AnnotatedSegment) -> dict:
    obj: dict = {
        "start": seg.segment.start,
        "end": seg.segment.end,
        "step": seg.step if seg.step is not None else "undefined",
        "mistake": MISTAKE_CODES[seg.mistake],
    }
    if seg.description is not None:
        obj["description"] = seg.description
    return obj


def video_to_json(video: AnnotatedVideo) -> dict:
    return {
        "video_id": video.video_id,
        "worker_id": video.worker_id,
        "task": video.task.value,
        "intent": video.intent.value,
        "num_frames": video.num_frames,
        "segments": [segment_to_json(s) for s in video.segments],
    }


def text_to_json(text: ProceduralText) -> dict:
    return {"task": text.task.value, "steps": list(text.steps)}


def _parse_enum(cls, value, where: str):
    try:
        return cls(value)
    except ValueError:
        raise ParseError(f"{where}: unknown {cls.__name__} value {value!r}") from None


def parse_segment(obj: dict, where: str) -> AnnotatedSegment:
    try:
        start, end = int(obj["start"]), int(obj["end"])
        raw_step = obj["step"]
        code = obj["mistake"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: malformed segment record: {exc}") from None
    if raw_step == "undefined":
        step = None
    else:
        step = int(raw_step)
    if code not in CODES_TO_MISTAKE:
        raise ParseError(f"{where}: unknown mistake code {code!r}")
    return AnnotatedSegment(
        segment=Segment(start, end),
        step=step,
        mistake=CODES_TO_MISTAKE[code],
        description=obj.get("description"),
    )


def parse_video(obj: dict, where: str = "<memory>") -> AnnotatedVideo:
    try:
        segments = tuple(
            parse_segment(s, where) for s in obj["segments"]
        )
        return AnnotatedVideo(
            video_id=str(obj["video_id"]),
            worker_id=str(obj["worker_id"]),
            task=_parse_enum(TaskDomain, obj["task"], where),
            intent=_parse_enum(Intent, obj["intent"], where),
            num_frames=int(obj["num_frames"]),
            segments=segments,
        )
    except KeyError as exc:
        raise ParseError(f"{where}: missing annotation field {exc}") from None


def parse_text(obj: dict, where: str = "<memory>") -> ProceduralText:
    try:
        return ProceduralText(
            task=_parse_enum(TaskDomain, obj["task"], where),
            steps=tuple(str(s) for s in obj["steps"]),
        )
    except KeyError as exc:
        raise ParseError(f"{where}: missing text field {exc}") from None


def _load_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def load_annotation_file(path: str | Path) -> AnnotatedVideo:
    path = Path(path)
    return parse_video(_load_json(path), where=str(path))


def load_corpus(path: str | Path) -> tuple[list[ProceduralText], list[AnnotatedVideo]]:
    """Read and fully validate a corpus directory.

    Returns procedural texts sorted by task value and videos sorted by id.
    Raises ParseError for malformed files and ValidationError when a record
    breaks an invariant.
    """
    root = Path(path)
    text_dir, anno_dir = root / "texts", root / "annotations"
    if not text_dir.is_dir() or not anno_dir.is_dir():
        raise ParseError(f"{root}: expected texts/ and annotations/ subdirectories")

    texts: dict[TaskDomain, ProceduralText] = {}
    for file in sorted(text_dir.glob("*.json")):
        text = parse_text(_load_json(file), where=str(file))
        if text.task in texts:
            raise ValidationError(f"{file}: duplicate text for task {text.task.value}")
        texts[text.task] = text

    videos: list[AnnotatedVideo] = []
    seen: set[str] = set()
    for file in sorted(anno_dir.glob("*.json")):
        video = parse_video(_load_json(file), where=str(file))
        if video.video_id in seen:
            raise ValidationError(f"{file}: duplicate video_id {video.video_id}")
        seen.add(video.video_id)
        if video.task not in texts:
            raise ValidationError(
                f"{video.video_id}: no procedural text for task {video.task.value}")
        validate_video(video, texts[video.task])
        videos.append(video)

    ordered_texts = [texts[t] for t in sorted(texts, key=lambda t: t.value)]
    videos.sort(key=lambda v: v.video_id)
    return ordered_texts, videos


def save_corpus(path: str | Path,
                texts: Iterable[ProceduralText],
                videos: Iterable[AnnotatedVideo]) -> None:
    """Write texts/ and annotations/ so that load_corpus round-trips."""
    root = Path(path)
    (root / "texts").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    for text in texts:
        with open(root / "texts" / f"{text.task.value}.json", "w", encoding="utf-8") as fh:
            json.dump(text_to_json(text), fh, indent=2, sort_keys=True)
            fh.write("\n")
    for video in videos:
        with open(root / "annotations" / f"{video.video_id}.json", "w", encoding="utf-8") as fh:
            json.dump(video_to_json(video), fh, indent=2, sort_keys=True)
            fh.write("\n")


def save_folds(path: str | Path, folds: Iterable[FoldSpec]) -> None:
    payload = [
        {"fold_id": f.fold_id, "train": list(f.train), "val": list(f.val),
         "test": list(f.test)}
        for f in folds
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_folds(path: str | Path) -> list[FoldSpec]:
    payload = _load_json(Path(path))
    try:
        return [
            FoldSpec(fold_id=int(f["fold_id"]), train=tuple(f["train"]),
                     val=tuple(f["val"]), test=tuple(f["test"]))
            for f in payload
        ]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed fold file: {exc}") from None


__all__ = [
    "TaskDomain", "Intent", "MistakeLabel", "CoarseLabel", "coarse_label",
    "Segment", "ProceduralText", "AnnotatedSegment", "AnnotatedVideo",
    "FoldSpec", "validate_video", "load_corpus", "save_corpus",
    "load_annotation_file", "save_folds", "load_folds",
    "video_to_json", "text_to_json", "parse_video", "parse_text",
    "MISTAKE_CODES", "CODES_TO_MISTAKE",
]
