"""Inter-annotator agreement: per-step temporal IoU and Cohen's kappa.

Two annotators label the same video independently; agreement_tiou scores
how well their step extents line up, cohens_kappa scores how well their
mistake labels line up on paired segments.
"""

from __future__ import annotations

from collections import Counter
from typing import Hashable, Sequence

import numpy as np

from .data import AnnotatedVideo, CoarseLabel, coarse_label
from .errors import ValidationError


def _step_masks(video: AnnotatedVideo) -> dict[int, np.ndarray]:
    """Frame coverage per defined step, unioned over split segments."""
    masks: dict[int, np.ndarray] = {}
    for seg in video.segments:
        if seg.step is None:
            continue
        mask = masks.setdefault(seg.step, np.zeros(video.num_frames, dtype=bool))
        mask[seg.segment.start:seg.segment.end] = True
    return masks


def agreement_tiou(a: AnnotatedVideo, b: AnnotatedVideo) -> float:
    """Average per-step temporal IoU between two annotations of one video.

    A step's extent is the union of all its segments. Steps annotated by
    only one side contribute 0; undefined segments are ignored. Returns 1.0
    for the vacuous case where neither side has any defined step.
    """
    if a.video_id != b.video_id:
        raise ValidationError(
            f"annotations disagree on video_id: {a.video_id} vs {b.video_id}")
    if a.num_frames != b.num_frames:
        raise ValidationError(
            f"{a.video_id}: annotations disagree on num_frames: "
            f"{a.num_frames} vs {b.num_frames}")

    masks_a, masks_b = _step_masks(a), _step_masks(b)
    steps = sorted(set(masks_a) | set(masks_b))
    if not steps:
        return 1.0
    scores = []
    for step in steps:
        m_a = masks_a.get(step)
        m_b = masks_b.get(step)
        if m_a is None or m_b is None:
            scores.append(0.0)
            continue
        inter = int(np.count_nonzero(m_a & m_b))
        union = int(np.count_nonzero(m_a | m_b))
        scores.append(inter / union)
    return float(np.mean(scores))


def cohens_kappa(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """Chance-corrected agreement between two equally long label lists.

    kappa = (p_o - p_e) / (1 - p_e) with p_o the observed agreement rate and
    p_e the chance rate from the raters' marginal label frequencies. When
    both raters use a single identical label (p_e = 1, p_o = 1) the result
    is 1.0 by convention.
    """
    if len(labels_a) == 0:
        raise ValidationError("kappa needs at least one paired label")
    if len(labels_a) != len(labels_b):
        raise ValidationError(
            f"label lists differ in length: {len(labels_a)} vs {len(labels_b)}")
    n = len(labels_a)
    p_o = sum(x == y for x, y in zip(labels_a, labels_b)) / n
    freq_a = Counter(labels_a)
    freq_b = Counter(labels_b)
    p_e = sum(freq_a[l] * freq_b.get(l, 0) for l in freq_a) / (n * n)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def pair_segment_labels(
    a: AnnotatedVideo, b: AnnotatedVideo
) -> tuple[list[CoarseLabel], list[CoarseLabel]]:
    """Pair segments across annotators for kappa.

    Segments are matched greedily by descending temporal IoU among pairs
    that refer to the same step (undefined pairs with undefined). Unmatched
    segments on either side are left out. Returns the paired coarse labels.
    """
    if a.video_id != b.video_id:
        raise ValidationError(
            f"annotations disagree on video_id: {a.video_id} vs {b.video_id}")
    candidates = []
    for i, sa in enumerate(a.segments):
        for j, sb in enumerate(b.segments):
            if sa.step != sb.step:
                continue
            tiou = sa.segment.tiou(sb.segment)
            if tiou > 0.0:
                candidates.append((tiou, i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    out_a = [coarse_label(a.segments[i].mistake) for i, _ in pairs]
    out_b = [coarse_label(b.segments[j].mistake) for _, j in pairs]
    return out_a, out_b


__all__ = ["agreement_tiou", "cohens_kappa", "pair_segment_labels"]
