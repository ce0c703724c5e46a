"""Step-slot decoder: learnable queries, one cross-attention layer, slot
selection against step texts, and the alignment losses with hand-derived
gradients.

The decoder computes S = softmax(Q' K^T / sqrt(d')) V' W_o with Q' = Q W_q,
K = (X P_v) W_k, V' = (X P_v) W_v for video features X. Slots are matched
to the task's step texts by droppable DTW over negative cosines (steps may
not drop, slots may), and the matched slot of each step is trained to land
on its annotated frames.

The supervised loss per step is
    -log( sum_{j in segment} exp(cos(s_k, v_j) / gamma)
        / sum_{all j}       exp(cos(s_k, v_j) / gamma) )
with l2-normalized slot and frame vectors; the temperature divides the
cosine inside the exponent, so small gamma sharpens the frame softmax. The
batch-level contrastive loss pulls each video's pooled slots toward its
own pooled step text against the other videos in the batch, symmetrically
in both directions.

Slot selection is recomputed every step but treated as a constant mapping
inside the losses, so no gradient flows through the discrete alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .alignment import decode_segments, drop_dtw, percentile_drop_cost
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus
from .data import FoldSpec, Segment
from .errors import NumericalError, ValidationError
from .features import cosine_matrix, l2_normalize_rows
from .metrics import frame_metrics, gt_frame_labels, rasterize
from .optim import Adam

_TENSOR_ORDER = ("proj_v", "proj_t", "queries", "w_q", "w_k", "w_v", "w_o")


@dataclass
class ModelParams:
    proj_v: np.ndarray   # d x d'
    proj_t: np.ndarray   # d x d'
    queries: np.ndarray  # U x d'
    w_q: np.ndarray      # d' x d'
    w_k: np.ndarray      # d' x d'
    w_v: np.ndarray      # d' x d'
    w_o: np.ndarray      # d' x d'

    @property
    def feature_dim(self) -> int:
        return self.proj_v.shape[0]

    @property
    def working_dim(self) -> int:
        return self.proj_v.shape[1]

    @property
    def num_queries(self) -> int:
        return self.queries.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _TENSOR_ORDER}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    @classmethod
    def init(cls, rng: np.random.Generator, feature_dim: int,
             working_dim: int = 64, num_queries: int = 32) -> "ModelParams":
        """Near-identity projections keep raw feature geometry readable at
        step zero; random unit queries break slot symmetry."""
        def near_eye(rows, cols):
            return np.eye(rows, cols) + 0.01 * rng.normal(size=(rows, cols))

        queries = rng.normal(size=(num_queries, working_dim))
        queries /= np.linalg.norm(queries, axis=1, keepdims=True)
        return cls(
            proj_v=near_eye(feature_dim, working_dim),
            proj_t=near_eye(feature_dim, working_dim),
            queries=queries,
            w_q=near_eye(working_dim, working_dim),
            w_k=near_eye(working_dim, working_dim),
            w_v=near_eye(working_dim, working_dim),
            w_o=near_eye(working_dim, working_dim),
        )


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.03
    batch_size: int = 6
    learning_rate: float = 1e-3
    epochs: int = 40
    seed: int = 0
    w_sup: float = 1.0
    w_global: float = 1.0
    drop_pct: float = 80.0
    working_dim: int = 64
    num_queries: int = 32
    normalize_features: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.gamma <= 0:
            raise ValidationError("gamma must be positive")
        if self.batch_size < 2 and self.w_global > 0:
            raise ValidationError(
                "batch_size must be >= 2 for the batch-contrastive loss")
        if not (0 < self.drop_pct <= 100):
            raise ValidationError("drop_pct must be in (0, 100]")


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def forward_slots(params: ModelParams, video: np.ndarray,
                  with_cache: bool = False):
    """Run the decoder over one video's features; returns the U x d' slot
    matrix, plus the intermediate activations when requested."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 2 or video.shape[1] != params.feature_dim:
        raise ValidationError(
            f"video features must be L x {params.feature_dim}, got {video.shape}")
    xp = video @ params.proj_v
    qp = params.queries @ params.w_q
    km = xp @ params.w_k
    vm = xp @ params.w_v
    scale = 1.0 / math.sqrt(params.working_dim)
    z = (qp @ km.T) * scale
    attn = _softmax_rows(z)
    ctx = attn @ vm
    slots = ctx @ params.w_o
    if not np.all(np.isfinite(slots)):
        raise NumericalError("slot matrix contains non-finite values")
    if not with_cache:
        return slots
    cache = {"x": video, "xp": xp, "qp": qp, "km": km, "vm": vm,
             "attn": attn, "ctx": ctx, "slots": slots, "scale": scale}
    return slots, cache


def select_slots(slots: np.ndarray, step_feats: np.ndarray,
                 drop_pct: float = 80.0) -> tuple[np.ndarray, list[int]]:
    """Assign one slot to every step by droppable DTW on negative cosine.

    Steps cannot drop; surplus slots drop at the percentile cost. When a
    step's alignment run covers several slots, the cheapest one represents
    it (ties go to the lower slot index). Returns the K selected slot rows
    in step order plus their indices.
    """
    n_steps = step_feats.shape[0]
    if n_steps > slots.shape[0]:
        raise ValidationError(
            f"{n_steps} steps but only {slots.shape[0]} slots")
    cost = -cosine_matrix(step_feats, slots)
    delta = percentile_drop_cost(cost, drop_pct)
    path = drop_dtw(cost, delta)
    chosen: list[int] = []
    for step_row in range(n_steps):
        slot_cols = [j for i, j in path.matches if i == step_row]
        best = min(slot_cols, key=lambda j: (cost[step_row, j], j))
        chosen.append(best)
    return slots[chosen], chosen


def loss_supervised_indices(slot: np.ndarray, frame_indices: np.ndarray,
                            frames: np.ndarray, gamma: float) -> float:
    """Supervised alignment loss with an explicit positive-frame index set
    (split steps pass the union of their segments)."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    frame_indices = np.asarray(frame_indices, dtype=np.int64)
    if frame_indices.size == 0:
        raise ValidationError("empty positive frame set")
    v_hat = l2_normalize_rows(frames)
    s_hat = slot / np.linalg.norm(slot)
    logits = (v_hat @ s_hat) / gamma
    return _logsumexp(logits) - _logsumexp(logits[frame_indices])


def loss_supervised(slot: np.ndarray, seg: Segment, frames: np.ndarray,
                    gamma: float) -> float:
    """Alignment loss for a single contiguous ground-truth segment."""
    if seg.end > frames.shape[0]:
        raise ValidationError(
            f"segment [{seg.start}, {seg.end}) outside video of {frames.shape[0]}")
    return loss_supervised_indices(slot, np.arange(seg.start, seg.end),
                                   frames, gamma)


def loss_global(pooled_pairs: list[tuple[np.ndarray, np.ndarray]],
                gamma: float) -> float:
    """Symmetric batch-contrastive loss over pooled (slots, step-text)
    representations; each video is its own positive, the rest negatives."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    n = len(pooled_pairs)
    if n < 2:
        raise ValidationError("batch-contrastive loss needs at least 2 videos")
    a = l2_normalize_rows(np.stack([np.mean(s, axis=0) for s, _ in pooled_pairs]))
    b = l2_normalize_rows(np.stack([np.mean(t, axis=0) for _, t in pooled_pairs]))
    logits = (a @ b.T) / gamma
    total = 0.0
    for i in range(n):
        total += _logsumexp(logits[i]) - logits[i, i]
        total += _logsumexp(logits[:, i]) - logits[i, i]
    return total / (2 * n)


@dataclass
class TrainExample:
    """One video prepared for training: features, step texts, and the
    ground-truth frame set of every annotated step."""

    video_id: str
    frames: np.ndarray                       # L x d
    step_feats: np.ndarray                   # K x d
    step_frames: dict[int, np.ndarray] = field(default_factory=dict)


def make_train_example(corpus: Corpus, video_id: str,
                       normalize_features: bool = True) -> TrainExample:
    video = corpus.video_by_id(video_id)
    frames = corpus.video_features(video_id)
    if normalize_features:
        frames = l2_normalize_rows(frames)
    step_frames: dict[int, np.ndarray] = {}
    for step in sorted(video.defined_steps()):
        parts = [
            np.arange(s.segment.start, s.segment.end)
            for s in video.segments if s.step == step
        ]
        step_frames[step] = np.concatenate(parts)
    return TrainExample(video_id=video_id, frames=frames,
                        step_feats=corpus.task_step_features(video.task),
                        step_frames=step_frames)


def compute_selections(params: ModelParams, batch: list[TrainExample],
                       drop_pct: float) -> list[list[int]]:
    out = []
    for ex in batch:
        slots = forward_slots(params, ex.frames)
        tp = ex.step_feats @ params.proj_t
        _, chosen = select_slots(slots, tp, drop_pct)
        out.append(chosen)
    return out


def batch_loss(params: ModelParams, batch: list[TrainExample],
               selections: list[list[int]], config: TrainConfig) -> float:
    """Pure loss evaluation at a fixed slot selection (the finite-difference
    reference for the analytic gradients)."""
    loss = 0.0
    sup_terms = []
    pooled = []
    for ex, chosen in zip(batch, selections):
        slots = forward_slots(params, ex.frames)
        xp = ex.frames @ params.proj_v
        tp = ex.step_feats @ params.proj_t
        sel = slots[chosen]
        if ex.step_frames:
            per_step = [
                loss_supervised_indices(sel[step - 1], idx, xp, config.gamma)
                for step, idx in ex.step_frames.items()
            ]
            sup_terms.append(float(np.mean(per_step)))
        pooled.append((sel, tp))
    if config.w_sup > 0 and sup_terms:
        loss += config.w_sup * float(np.mean(sup_terms))
    if config.w_global > 0 and len(batch) >= 2:
        loss += config.w_global * loss_global(pooled, config.gamma)
    return loss


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.as_dict().items()}


def batch_loss_and_grads(params: ModelParams, batch: list[TrainExample],
                         selections: list[list[int]], config: TrainConfig
                         ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus exact analytic gradients for every parameter tensor.

    Slot selection is a constant: gradients flow through the decoder and
    both losses but not through the discrete assignment.
    """
    grads = _zero_grads(params)
    caches = []
    xps = []
    tps = []
    sels = []
    for ex, chosen in zip(batch, selections):
        slots, cache = forward_slots(params, ex.frames, with_cache=True)
        caches.append(cache)
        xps.append(cache["xp"])
        tps.append(ex.step_feats @ params.proj_t)
        sels.append(slots[chosen])

    d_slots_list = [np.zeros_like(c["slots"]) for c in caches]
    d_xp_extra = [np.zeros_like(x) for x in xps]
    d_tp_list = [np.zeros_like(t) for t in tps]
    total_loss = 0.0
    gamma = config.gamma

    # supervised loss: mean over steps within a video, then over videos
    if config.w_sup > 0:
        with_steps = [i for i, ex in enumerate(batch) if ex.step_frames]
        sup_losses = []
        for i in with_steps:
            ex, chosen = batch[i], selections[i]
            xp = xps[i]
            v_hat = l2_normalize_rows(xp)
            xp_norms = np.linalg.norm(xp, axis=1)
            per_video_scale = config.w_sup / (len(ex.step_frames) * len(with_steps))
            step_losses = []
            for step, idx in ex.step_frames.items():
                slot_row = chosen[step - 1]
                u = sels[i][step - 1]
                u_norm = float(np.linalg.norm(u))
                u_hat = u / u_norm
                cos = v_hat @ u_hat
                logits = cos / gamma
                step_losses.append(_logsumexp(logits) - _logsumexp(logits[idx]))
                p = _softmax_rows(logits[None, :])[0]
                q = np.zeros_like(p)
                q[idx] = _softmax_rows(logits[idx][None, :])[0]
                g_cos = (p - q) * (per_video_scale / gamma)
                # d cos_j / du = (v_hat_j - cos_j * u_hat) / |u|
                d_u = (v_hat.T @ g_cos - u_hat * float(g_cos @ cos)) / u_norm
                d_slots_list[i][slot_row] += d_u
                # d cos_j / d xp_j = (u_hat - cos_j * v_hat_j) / |xp_j|
                coef = g_cos / xp_norms
                d_xp_extra[i] += np.outer(coef, u_hat) \
                    - (coef * cos)[:, None] * v_hat
            sup_losses.append(float(np.mean(step_losses)))
        if sup_losses:
            total_loss += config.w_sup * float(np.mean(sup_losses))

    # batch-contrastive loss over pooled representations
    if config.w_global > 0 and len(batch) >= 2:
        n = len(batch)
        m_rows = np.stack([np.mean(s, axis=0) for s in sels])
        t_rows = np.stack([np.mean(t, axis=0) for t in tps])
        m_norms = np.linalg.norm(m_rows, axis=1)
        t_norms = np.linalg.norm(t_rows, axis=1)
        a = m_rows / m_norms[:, None]
        b = t_rows / t_norms[:, None]
        sim = a @ b.T
        logits = sim / gamma
        row_sm = _softmax_rows(logits)
        col_sm = _softmax_rows(logits.T).T
        per = 0.0
        for i in range(n):
            per += _logsumexp(logits[i]) - logits[i, i]
            per += _logsumexp(logits[:, i]) - logits[i, i]
        total_loss += config.w_global * per / (2 * n)
        d_sim = config.w_global * (row_sm + col_sm - 2 * np.eye(n)) / (2 * n * gamma)
        d_a = d_sim @ b
        d_b = d_sim.T @ a
        for i in range(n):
            d_m = (d_a[i] - a[i] * float(d_a[i] @ a[i])) / m_norms[i]
            d_t = (d_b[i] - b[i] * float(d_b[i] @ b[i])) / t_norms[i]
            k_i = sels[i].shape[0]
            for row, slot_row in enumerate(selections[i]):
                d_slots_list[i][slot_row] += d_m / k_i
            d_tp_list[i] += d_t / tps[i].shape[0]

    # backpropagate through the decoder for every video
    for i, ex in enumerate(batch):
        cache = caches[i]
        d_slots = d_slots_list[i]
        d_ctx = d_slots @ params.w_o.T
        grads["w_o"] += cache["ctx"].T @ d_slots
        d_attn = d_ctx @ cache["vm"].T
        d_vm = cache["attn"].T @ d_ctx
        attn = cache["attn"]
        d_z = attn * (d_attn - np.sum(attn * d_attn, axis=1, keepdims=True))
        d_z *= cache["scale"]
        d_qp = d_z @ cache["km"]
        d_km = d_z.T @ cache["qp"]
        grads["queries"] += d_qp @ params.w_q.T
        grads["w_q"] += params.queries.T @ d_qp
        d_xp = d_km @ params.w_k.T + d_vm @ params.w_v.T + d_xp_extra[i]
        grads["w_k"] += cache["xp"].T @ d_km
        grads["w_v"] += cache["xp"].T @ d_vm
        grads["proj_v"] += cache["x"].T @ d_xp
        grads["proj_t"] += ex.step_feats.T @ d_tp_list[i]

    if not math.isfinite(total_loss):
        raise NumericalError("non-finite training loss")
    return total_loss, grads


def backward(params: ModelParams, batch: list[TrainExample],
             selections: list[list[int]], config: TrainConfig
             ) -> dict[str, np.ndarray]:
    """Gradients only; see batch_loss_and_grads."""
    _, grads = batch_loss_and_grads(params, batch, selections, config)
    return grads


def align_frames_to_slots(selected: np.ndarray, frame_embed: np.ndarray,
                          drop_pct: float = 80.0) -> list[tuple[int, Segment]]:
    """Inference tail: align the per-step slot sequence to frames with
    droppable DTW (slots must match, frames may drop at the percentile
    cost) and decode one segment per step."""
    cost = -cosine_matrix(selected, frame_embed)
    delta = percentile_drop_cost(cost, drop_pct)
    path = drop_dtw(cost, delta)
    slot_to_step = {row: row + 1 for row in range(selected.shape[0])}
    return decode_segments(path, slot_to_step, num_frames=frame_embed.shape[0])


def align_video(params: ModelParams, frames: np.ndarray,
                step_feats: np.ndarray, drop_pct: float = 80.0,
                normalize_features: bool = True) -> list[tuple[int, Segment]]:
    """Full inference for one video: decode slots, pick one per step, then
    align the selected slots to frames and read off the per-step segments."""
    if normalize_features:
        frames = l2_normalize_rows(frames)
    slots = forward_slots(params, frames)
    tp = step_feats @ params.proj_t
    selected, _ = select_slots(slots, tp, drop_pct)
    xp = frames @ params.proj_v
    return align_frames_to_slots(selected, xp, drop_pct)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_f1: float


@dataclass
class FoldTraining:
    fold_id: int
    params: ModelParams
    best_epoch: int
    best_val_f1: float
    log: list[EpochLog] = field(default_factory=list)


def evaluate_alignment_f1(params: ModelParams, corpus: Corpus,
                          video_ids: tuple[str, ...],
                          config: TrainConfig) -> float:
    """Mean frame-F1 of predicted vs annotated alignments over videos."""
    scores = []
    for vid in video_ids:
        video = corpus.video_by_id(vid)
        frames = corpus.video_features(vid)
        predicted = align_video(params, frames,
                                corpus.task_step_features(video.task),
                                drop_pct=config.drop_pct,
                                normalize_features=config.normalize_features)
        pred = rasterize(predicted, video.num_frames)
        gt = gt_frame_labels(video)
        scores.append(frame_metrics(pred, gt)["f1"])
    return float(np.mean(scores)) if scores else 0.0


def train_alignment_fold(corpus: Corpus, fold: FoldSpec,
                         config: TrainConfig) -> FoldTraining:
    """Mini-batch training on one fold; returns the checkpoint with the
    best validation frame-F1 (earlier epoch wins ties)."""
    config.validate()
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(101, fold.fold_id)))
    corpus.set_phase(f"fold{fold.fold_id}:train-align")
    examples = [make_train_example(corpus, vid, config.normalize_features)
                for vid in fold.train]
    params = ModelParams.init(rng, feature_dim=corpus.feature_dim,
                              working_dim=config.working_dim,
                              num_queries=config.num_queries)
    opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2,
               config.adam_eps)
    best = FoldTraining(fold_id=fold.fold_id, params=params.copy(),
                        best_epoch=-1, best_val_f1=-1.0)
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[lo:lo + config.batch_size]]
            selections = compute_selections(params, batch, config.drop_pct)
            try:
                loss, grads = batch_loss_and_grads(params, batch, selections,
                                                   config)
            except NumericalError as exc:
                raise NumericalError(
                    f"fold {fold.fold_id} epoch {epoch}: {exc}") from None
            tensors = params.as_dict()
            opt.step(tensors, grads)
            epoch_losses.append(loss)
        val_f1 = evaluate_alignment_f1(params, corpus, fold.val, config)
        best.log.append(EpochLog(epoch=epoch, loss=float(np.mean(epoch_losses)),
                                 val_f1=val_f1))
        if val_f1 > best.best_val_f1:
            best.best_val_f1 = val_f1
            best.best_epoch = epoch
            best.params = params.copy()
    return best


def train_alignment(corpus: Corpus, folds: list[FoldSpec],
                    config: TrainConfig) -> dict[int, FoldTraining]:
    return {fold.fold_id: train_alignment_fold(corpus, fold, config)
            for fold in folds}


def save_model(path, training: FoldTraining, config: TrainConfig) -> None:
    params = training.params
    meta = {
        "kind": "alignment",
        "U": params.num_queries,
        "d": params.feature_dim,
        "d_prime": params.working_dim,
        "seed": config.seed,
        "epoch": training.best_epoch,
        "val_f1": training.best_val_f1,
        "fold_id": training.fold_id,
    }
    save_checkpoint(path, params.as_dict(), meta)


def load_model(path) -> tuple[ModelParams, dict]:
    tensors, meta = load_checkpoint(path)
    missing = [n for n in _TENSOR_ORDER if n not in tensors]
    if missing:
        raise ValidationError(f"{path}: checkpoint missing tensors {missing}")
    return ModelParams(**{n: tensors[n] for n in _TENSOR_ORDER}), meta


__all__ = [
    "ModelParams", "TrainConfig", "TrainExample", "EpochLog", "FoldTraining",
    "forward_slots", "select_slots", "loss_supervised",
    "loss_supervised_indices", "loss_global", "make_train_example",
    "compute_selections", "batch_loss", "batch_loss_and_grads", "backward",
    "align_frames_to_slots", "align_video", "evaluate_alignment_f1",
    "train_alignment_fold", "train_alignment", "save_model", "load_model",
]
