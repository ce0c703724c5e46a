import json

import pytest

from stepalign.data import (
    AnnotatedSegment, AnnotatedVideo, CoarseLabel, Intent, MistakeLabel,
    ProceduralText, Segment, TaskDomain, coarse_label, load_corpus,
    load_folds, parse_video, save_corpus, save_folds, validate_video,
)
from stepalign.data import FoldSpec
from stepalign.errors import ParseError, ValidationError


def _text(task=TaskDomain.COLOR_MIXTURE, n=3):
    return ProceduralText(task=task, steps=tuple(f"do thing {i}" for i in range(1, n + 1)))


def _video(video_id="v0", task=TaskDomain.COLOR_MIXTURE, segments=None, num_frames=50):
    if segments is None:
        segments = (
            AnnotatedSegment(Segment(0, 10), step=1, mistake=MistakeLabel.CORRECT),
            AnnotatedSegment(Segment(12, 20), step=2, mistake=MistakeLabel.OBJECT,
                             description="used the blue one"),
            AnnotatedSegment(Segment(25, 30), step=None, mistake=MistakeLabel.MISPICK,
                             description="grabbed the wrong jar"),
        )
    return AnnotatedVideo(video_id=video_id, worker_id="w0", task=task,
                          intent=Intent.MISTAKE_RUN, num_frames=num_frames,
                          segments=segments)


class TestCoarseLabel:
    def test_correct_maps_to_correct(self):
        assert coarse_label(MistakeLabel.CORRECT) == CoarseLabel.CORRECT

    def test_correction_keeps_own_class(self):
        assert coarse_label(MistakeLabel.CORRECTION) == CoarseLabel.CORRECTION

    def test_other_kinds_collapse_to_mistake(self):
        assert coarse_label(MistakeLabel.HOWTO) == CoarseLabel.MISTAKE

    def test_total_and_surjective(self):
        images = {coarse_label(m) for m in MistakeLabel}
        assert images == set(CoarseLabel)


class TestValidation:
    def test_valid_video_passes(self):
        validate_video(_video(), _text())

    def test_empty_segment_rejected(self):
        with pytest.raises(ValidationError, match="segment empty"):
            Segment(5, 5)

    def test_unknown_step_rejected(self):
        video = _video(segments=(
            AnnotatedSegment(Segment(0, 5), step=9, mistake=MistakeLabel.CORRECT),
        ))
        with pytest.raises(ValidationError, match="unknown step"):
            validate_video(video, _text(n=8))

    def test_segment_beyond_frames_rejected(self):
        video = _video(num_frames=15)
        with pytest.raises(ValidationError, match="exceeds num_frames"):
            validate_video(video, _text())

    def test_unsorted_segments_rejected(self):
        video = _video(segments=(
            AnnotatedSegment(Segment(10, 20), step=1, mistake=MistakeLabel.CORRECT),
            AnnotatedSegment(Segment(0, 5), step=2, mistake=MistakeLabel.CORRECT),
        ))
        with pytest.raises(ValidationError, match="not sorted"):
            validate_video(video, _text())

    def test_description_required_for_mistakes(self):
        video = _video(segments=(
            AnnotatedSegment(Segment(0, 5), step=1, mistake=MistakeLabel.ACCIDENT),
        ))
        with pytest.raises(ValidationError, match="lacks a description"):
            validate_video(video, _text())

    def test_description_forbidden_for_correct(self):
        video = _video(segments=(
            AnnotatedSegment(Segment(0, 5), step=1, mistake=MistakeLabel.CORRECT,
                             description="spurious"),
        ))
        with pytest.raises(ValidationError, match="carries a description"):
            validate_video(video, _text())


class TestCorpusIO:
    def test_round_trip_is_identity(self, tmp_path):
        texts = [_text(TaskDomain.COLOR_MIXTURE), _text(TaskDomain.CARDBOARD, n=5)]
        videos = [_video("v0"), _video("v1", task=TaskDomain.CARDBOARD)]
        save_corpus(tmp_path, texts, videos)
        loaded_texts, loaded_videos = load_corpus(tmp_path)
        assert {t.task: t for t in loaded_texts} == {t.task: t for t in texts}
        assert loaded_videos == sorted(videos, key=lambda v: v.video_id)

    def test_two_video_corpus_loads(self, tmp_path):
        save_corpus(tmp_path, [_text()], [_video("a"), _video("b")])
        _, videos = load_corpus(tmp_path)
        assert [v.video_id for v in videos] == ["a", "b"]

    def test_malformed_json_names_file_and_line(self, tmp_path):
        save_corpus(tmp_path, [_text()], [_video()])
        bad = tmp_path / "annotations" / "v0.json"
        bad.write_text("{\n  broken\n}")
        with pytest.raises(ParseError, match=r"v0\.json: line 2"):
            load_corpus(tmp_path)

    def test_invalid_video_names_rule(self, tmp_path):
        save_corpus(tmp_path, [_text()], [_video()])
        obj = json.loads((tmp_path / "annotations" / "v0.json").read_text())
        obj["segments"][0]["step"] = 9
        (tmp_path / "annotations" / "v0.json").write_text(json.dumps(obj))
        with pytest.raises(ValidationError, match="unknown step"):
            load_corpus(tmp_path)

    def test_unknown_mistake_code_rejected(self):
        obj = {"video_id": "v", "worker_id": "w", "task": "cardboard",
               "intent": "correct_run", "num_frames": 10,
               "segments": [{"start": 0, "end": 2, "step": 1, "mistake": "oops"}]}
        with pytest.raises(ParseError, match="unknown mistake code"):
            parse_video(obj)

    def test_fold_round_trip(self, tmp_path):
        folds = [FoldSpec(0, ("a", "b"), ("c",), ("d",)),
                 FoldSpec(1, ("c", "d"), ("a",), ("b",))]
        save_folds(tmp_path / "folds.json", folds)
        assert load_folds(tmp_path / "folds.json") == folds
