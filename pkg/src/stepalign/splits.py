"""Grouped k-fold construction with per-task intent balance.

Every fold's validation and test sets each contain exactly one correct-run
and one mistake-run video per task, and the evaluation half of a fold
(val plus test) is a union of whole worker groups so that no worker's
videos appear on both sides of the train/eval boundary. Val and test may
share a worker only when the corpus leaves no alternative.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .data import AnnotatedVideo, FoldSpec, Intent, TaskDomain
from .errors import InfeasibleSplitError

_MAX_WORKERS_FOR_SEARCH = 24


def _eval_subsets(worker_counts: dict[str, dict[tuple[TaskDomain, Intent], int]],
                  keys: list[tuple[TaskDomain, Intent]]) -> list[tuple[str, ...]]:
    """All worker subsets whose video counts sum to exactly 2 per (task, intent)."""
    workers = sorted(worker_counts)
    target = {key: 2 for key in keys}
    found: list[tuple[str, ...]] = []

    def extend(idx: int, chosen: list[str], acc: dict) -> None:
        if all(acc.get(k, 0) == 2 for k in keys):
            found.append(tuple(chosen))
            # a proper superset would overshoot some count, so stop here
            return
        if idx == len(workers):
            return
        worker = workers[idx]
        counts = worker_counts[worker]
        if all(acc.get(k, 0) + counts.get(k, 0) <= target[k] for k in keys):
            chosen.append(worker)
            extend(idx + 1, chosen,
                   {k: acc.get(k, 0) + counts.get(k, 0)
                    for k in set(acc) | set(counts)})
            chosen.pop()
        extend(idx + 1, chosen, acc)

    extend(0, [], {})
    return found


def _balanced_bipartitions(subset: tuple[str, ...],
                           worker_counts: dict,
                           keys: list) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Splits of an eval subset into two worker groups with exactly one
    video per (task, intent) each."""
    out = []
    n = len(subset)
    for bits in range(1, 2 ** n - 1):
        side_a = tuple(subset[i] for i in range(n) if bits & (1 << i))
        acc: dict = defaultdict(int)
        for w in side_a:
            for k, c in worker_counts[w].items():
                acc[k] += c
        if all(acc.get(k, 0) == 1 for k in keys):
            side_b = tuple(w for w in subset if w not in side_a)
            if side_a < side_b:  # canonical orientation, rng flips later
                out.append((side_a, side_b))
    return out


def make_group_kfold(videos: list[AnnotatedVideo], k: int, seed: int) -> list[FoldSpec]:
    """Build k folds over the corpus; deterministic given the seed.

    Raises InfeasibleSplitError when the corpus cannot satisfy the
    constraints instead of silently relaxing them.
    """
    if k < 2:
        raise InfeasibleSplitError(f"k must be >= 2, got {k}")
    if not videos:
        raise InfeasibleSplitError("empty corpus")

    tasks = sorted({v.task for v in videos}, key=lambda t: t.value)
    keys = [(t, i) for t in tasks for i in (Intent.CORRECT_RUN, Intent.MISTAKE_RUN)]

    per_key: dict[tuple[TaskDomain, Intent], list[str]] = defaultdict(list)
    for v in videos:
        per_key[(v.task, v.intent)].append(v.video_id)
    for task, intent in keys:
        have = len(per_key[(task, intent)])
        if have < k:
            raise InfeasibleSplitError(
                f"task {task.value} has {have} {intent.value} videos, "
                f"need at least {k}")

    workers = sorted({v.worker_id for v in videos})
    if len(workers) > _MAX_WORKERS_FOR_SEARCH:
        raise InfeasibleSplitError(
            f"{len(workers)} workers exceed the subset-search bound "
            f"{_MAX_WORKERS_FOR_SEARCH}")
    worker_counts: dict[str, dict] = {w: defaultdict(int) for w in workers}
    worker_videos: dict[str, dict] = {w: defaultdict(list) for w in workers}
    for v in videos:
        worker_counts[v.worker_id][(v.task, v.intent)] += 1
        worker_videos[v.worker_id][(v.task, v.intent)].append(v.video_id)
    for w in workers:
        for key in worker_videos[w]:
            worker_videos[w][key].sort()

    all_ids = sorted(v.video_id for v in videos)
    subsets = [
        s for s in _eval_subsets(worker_counts, keys)
        if sum(sum(worker_counts[w].values()) for w in s) < len(all_ids)
    ]
    if not subsets:
        raise InfeasibleSplitError(
            "no union of whole worker groups yields exactly one correct and "
            "one mistake video per task for both val and test")

    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(subsets)))
    folds: list[FoldSpec] = []
    for fold_id in range(k):
        subset = subsets[order[fold_id % len(subsets)]]
        reuse_round = fold_id // len(subsets)
        bipartitions = _balanced_bipartitions(subset, worker_counts, keys)
        val_ids: list[str] = []
        test_ids: list[str] = []
        if bipartitions:
            side_a, side_b = bipartitions[int(rng.integers(len(bipartitions)))]
            flip = bool(rng.integers(2)) ^ bool(reuse_round % 2)
            val_side, test_side = (side_b, side_a) if flip else (side_a, side_b)
            for w in val_side:
                for key in keys:
                    val_ids.extend(worker_videos[w].get(key, []))
            for w in test_side:
                for key in keys:
                    test_ids.extend(worker_videos[w].get(key, []))
        else:
            # single-worker (or otherwise unsplittable) eval set: the two
            # videos per (task, intent) are divided directly
            for key in keys:
                pair = sorted(
                    vid for w in subset for vid in worker_videos[w].get(key, []))
                first_to_val = bool(rng.integers(2)) ^ bool(reuse_round % 2)
                if first_to_val:
                    val_ids.append(pair[0])
                    test_ids.append(pair[1])
                else:
                    val_ids.append(pair[1])
                    test_ids.append(pair[0])
        eval_set = set(val_ids) | set(test_ids)
        train_ids = [vid for vid in all_ids if vid not in eval_set]
        folds.append(FoldSpec(
            fold_id=fold_id,
            train=tuple(sorted(train_ids)),
            val=tuple(sorted(val_ids)),
            test=tuple(sorted(test_ids)),
        ))
    return folds


__all__ = ["make_group_kfold"]
