import numpy as np
import pytest

from stepalign.agreement import agreement_tiou, cohens_kappa, pair_segment_labels
from stepalign.data import (
    AnnotatedSegment, AnnotatedVideo, Intent, MistakeLabel, Segment, TaskDomain,
)
from stepalign.errors import ValidationError

C, M = "correct", "mistake"


def _video(segments, video_id="v", num_frames=100):
    return AnnotatedVideo(video_id=video_id, worker_id="w",
                          task=TaskDomain.BUILDING_BLOCK,
                          intent=Intent.CORRECT_RUN, num_frames=num_frames,
                          segments=tuple(segments))


def _seg(start, end, step, mistake=MistakeLabel.CORRECT, description=None):
    if mistake != MistakeLabel.CORRECT and description is None:
        description = "something went wrong"
    return AnnotatedSegment(Segment(start, end), step=step, mistake=mistake,
                            description=description)


def _tiou_by_counting(frames_a, frames_b):
    # independent oracle: explicit per-frame set arithmetic
    inter = len(frames_a & frames_b)
    union = len(frames_a | frames_b)
    return inter / union


class TestAgreementTiou:
    def test_identical_annotations(self):
        video = _video([_seg(0, 10, 1), _seg(20, 30, 2)])
        assert agreement_tiou(video, video) == 1.0

    def test_half_overlap_single_step(self):
        a = _video([_seg(0, 10, 1)])
        b = _video([_seg(5, 15, 1)])
        expected = _tiou_by_counting(set(range(0, 10)), set(range(5, 15)))
        assert expected == pytest.approx(1 / 3)
        assert agreement_tiou(a, b) == pytest.approx(expected, abs=1e-12)

    def test_step_missing_on_one_side_scores_zero(self):
        a = _video([_seg(0, 10, 1), _seg(20, 30, 2)])
        b = _video([_seg(0, 10, 1)])
        # step 1 agrees fully, step 2 contributes 0
        assert agreement_tiou(a, b) == pytest.approx(0.5)

    def test_undefined_segments_ignored(self):
        a = _video([_seg(0, 10, 1),
                    _seg(40, 60, None, MistakeLabel.MISPICK)])
        b = _video([_seg(0, 10, 1),
                    _seg(70, 90, None, MistakeLabel.MISPICK)])
        assert agreement_tiou(a, b) == 1.0

    def test_split_steps_use_union_of_segments(self):
        a = _video([_seg(0, 5, 1), _seg(10, 15, 1)])
        b = _video([_seg(0, 15, 1)])
        expected = _tiou_by_counting(
            set(range(0, 5)) | set(range(10, 15)), set(range(0, 15)))
        assert agreement_tiou(a, b) == pytest.approx(expected)

    def test_symmetry_on_random_annotations(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            def rand_video():
                segs = []
                cursor = 0
                for _ in range(rng.integers(1, 5)):
                    start = cursor + int(rng.integers(0, 4))
                    end = start + int(rng.integers(1, 8))
                    if end > 100:
                        break
                    segs.append(_seg(start, end, int(rng.integers(1, 4))))
                    cursor = end
                return _video(segs or [_seg(0, 1, 1)])
            a, b = rand_video(), rand_video()
            assert agreement_tiou(a, b) == pytest.approx(agreement_tiou(b, a), abs=1e-15)

    def test_mismatched_ids_rejected(self):
        a = _video([_seg(0, 10, 1)], video_id="x")
        b = _video([_seg(0, 10, 1)], video_id="y")
        with pytest.raises(ValidationError, match="video_id"):
            agreement_tiou(a, b)


def _kappa_by_formula(a, b):
    # independent oracle: direct textbook evaluation
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    labels = set(a) | set(b)
    p_e = sum((a.count(l) / n) * (b.count(l) / n) for l in labels)
    return (p_o - p_e) / (1 - p_e)


class TestCohensKappa:
    def test_identical_lists(self):
        assert cohens_kappa([C, M, C], [C, M, C]) == 1.0

    def test_two_thirds_agreement(self):
        a, b = [C, C, M], [C, M, M]
        assert _kappa_by_formula(a, b) == pytest.approx(0.4)
        assert cohens_kappa(a, b) == pytest.approx(0.4, abs=1e-12)

    def test_perfect_disagreement(self):
        a, b = [C, M], [M, C]
        assert _kappa_by_formula(a, b) == pytest.approx(-1.0)
        assert cohens_kappa(a, b) == pytest.approx(-1.0, abs=1e-12)

    def test_single_shared_label_convention(self):
        assert cohens_kappa([C, C], [C, C]) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            a = [str(x) for x in rng.integers(0, 3, n)]
            b = [str(x) for x in rng.integers(0, 3, n)]
            assert cohens_kappa(a, b) == pytest.approx(cohens_kappa(b, a), abs=1e-15)

    def test_one_iff_identical_with_two_labels(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            a = [str(x) for x in rng.integers(0, 2, n)]
            b = [str(x) for x in rng.integers(0, 2, n)]
            if len(set(a) | set(b)) < 2:
                continue
            kappa = cohens_kappa(a, b)
            if a == b:
                assert kappa == 1.0
            else:
                assert kappa < 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            cohens_kappa([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            cohens_kappa([C], [C, M])


class TestPairing:
    def test_pairs_by_step_and_overlap(self):
        a = _video([_seg(0, 10, 1), _seg(20, 30, 2, MistakeLabel.OBJECT)])
        b = _video([_seg(2, 12, 1), _seg(18, 28, 2, MistakeLabel.OBJECT)])
        la, lb = pair_segment_labels(a, b)
        assert la == lb
        assert len(la) == 2

    def test_unmatched_segments_excluded(self):
        a = _video([_seg(0, 10, 1), _seg(20, 30, 2)])
        b = _video([_seg(0, 10, 1)])
        la, lb = pair_segment_labels(a, b)
        assert len(la) == len(lb) == 1
