"""Cross-frame attention and the object scoring / ranking heads.

Per frame, the object-mean of the value features gives one global map; the
T stacked maps attend over each other (a T x T attention), producing a mixed
context map per frame.  Fusing each object's relation block with its frame's
context map, embedding the object's initial mask, and applying a fully
connected head yields a saliency score per object.  Scores are differentiable;
rank assignment and rank-map rendering operate on their detached values.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    concat,
    conv1x1,
    linear,
    matmul,
    mean_axis,
    scaled_softmax,
    stack,
    take,
    transpose_last2,
)
from .spatial import EmptyFrameError, Projection, projection_init

__all__ = [
    "TemporalParams",
    "ScoringParams",
    "FrameObjects",
    "RankedFrame",
    "temporal_params_init",
    "scoring_params_init",
    "pooled_frame_values",
    "temporal_mix",
    "frame_scores",
    "sequence_scores",
    "temporal_forward",
    "rank_assign",
    "render_rank_map",
    "downsample_mask",
]


@dataclass(frozen=True)
class TemporalParams:
    """Three C->C projections applied to the stacked per-frame value maps."""

    k_proj: Projection
    q_proj: Projection
    v_proj: Projection


@dataclass(frozen=True)
class ScoringParams:
    """Mask embedding (H*W -> C) and the score head (2C -> 1)."""

    mask_embed: Projection
    score_head: Projection


@dataclass(frozen=True)
class FrameObjects:
    """Inputs of the scoring stage for one frame.

    ``relation`` and ``value`` are (N, C, H, W) tensors sharing all extents;
    ``masks`` holds one binary mask per object at a common frame resolution.
    """

    relation: Tensor
    value: Tensor
    masks: np.ndarray  # (N, frame_h, frame_w), bool

    def __post_init__(self):
        if self.relation.ndim != 4 or self.value.ndim != 4:
            raise ShapeError("relation and value must be (N, C, H, W)")
        if self.relation.shape != self.value.shape:
            raise ShapeError(
                f"relation {self.relation.shape} and value {self.value.shape} differ"
            )
        if self.masks.ndim != 3 or self.masks.shape[0] != self.relation.shape[0]:
            raise ShapeError(
                f"need one mask per object: {self.masks.shape[0] if self.masks.ndim == 3 else 'bad'}"
                f" masks for {self.relation.shape[0]} objects"
            )


@dataclass(frozen=True)
class RankedFrame:
    """Scored and ranked objects of one frame.

    ``ranks`` is a permutation of 1..N with 1 for the most salient object;
    ``rank_map`` holds (N - r + 1) / N at each object's pixels, 0 elsewhere.
    """

    scores: np.ndarray  # (N,)
    ranks: np.ndarray  # (N,), int
    rank_map: np.ndarray  # (frame_h, frame_w)


def temporal_params_init(channels: int, rng_seed: int) -> TemporalParams:
    rng = np.random.default_rng(rng_seed)
    return TemporalParams(
        k_proj=projection_init(channels, channels, rng),
        q_proj=projection_init(channels, channels, rng),
        v_proj=projection_init(channels, channels, rng),
    )


def scoring_params_init(channels: int, height: int, width: int, rng_seed: int) -> ScoringParams:
    # Score head starts at zero so an untrained model carries no systematic
    # rank preference; it picks up gradient from the first step on.
    rng = np.random.default_rng(rng_seed)
    return ScoringParams(
        mask_embed=projection_init(channels, height * width, rng),
        score_head=projection_init(1, 2 * channels, rng, zero=True),
    )


def _check_frames(frames: list[FrameObjects]) -> tuple[int, int, int]:
    if not frames:
        raise ValueError("need at least one frame")
    c, h, w = frames[0].relation.shape[1:]
    for t, frame in enumerate(frames):
        if frame.relation.shape[0] == 0:
            raise EmptyFrameError(f"frame {t} has zero objects")
        if frame.relation.shape[1:] != (c, h, w):
            raise ShapeError(
                f"frame {t} block shape {frame.relation.shape[1:]} differs from {(c, h, w)}"
            )
    return c, h, w


def pooled_frame_values(frames: list[FrameObjects]) -> Tensor:
    """Object-mean value map per frame, stacked to (T, C, H, W)."""
    _check_frames(frames)
    return stack([mean_axis(frame.value, 0) for frame in frames])


def temporal_mix(values: Tensor, params: TemporalParams) -> Tensor:
    """T x T attention over stacked frame maps; returns mixed maps (T, C, H, W)."""
    if values.ndim != 4:
        raise ShapeError(f"stacked values must be (T, C, H, W), got {values.shape}")
    t, c, h, w = values.shape
    chw = c * h * w

    keys = conv1x1(values, params.k_proj.weight, params.k_proj.bias).reshape(t, chw)
    queries = conv1x1(values, params.q_proj.weight, params.q_proj.bias).reshape(t, chw)
    mixed_values = conv1x1(values, params.v_proj.weight, params.v_proj.bias).reshape(t, chw)

    attention = scaled_softmax(matmul(keys, transpose_last2(queries)), chw)  # (T, T)
    return matmul(attention, mixed_values).reshape(t, c, h, w)


def frame_scores(relation: Tensor, context: Tensor, masks: np.ndarray,
                 scoring: ScoringParams) -> Tensor:
    """Saliency score per object of one frame, shape (N,).

    Each object's (C, HW) relation block is multiplied with the frame context
    viewed as (HW, C); the row means of the resulting C x C map, concatenated
    with the embedded initial mask, feed the score head.
    """
    n, c, h, w = relation.shape
    hw = h * w
    if context.shape != (c, h, w):
        raise ShapeError(f"context shape {context.shape} does not match blocks {(c, h, w)}")

    context_flat = transpose_last2(context.reshape(c, hw))  # (HW, C)
    fused = matmul(relation.reshape(n, c, hw), context_flat)  # (N, C, C)
    pooled = mean_axis(fused, 2)  # (N, C)

    mask_inputs = np.stack([downsample_mask(m, h, w).reshape(hw) for m in masks])
    mask_vec = linear(Tensor(mask_inputs), scoring.mask_embed.weight, scoring.mask_embed.bias)

    joint = concat(pooled, mask_vec)  # (N, 2C)
    return linear(joint, scoring.score_head.weight, scoring.score_head.bias).reshape(n)


def sequence_scores(frames: list[FrameObjects], temporal: TemporalParams,
                    scoring: ScoringParams) -> list[Tensor]:
    """Differentiable per-frame score vectors for a whole sequence."""
    pooled = pooled_frame_values(frames)
    context = temporal_mix(pooled, temporal)
    return [
        frame_scores(frame.relation, take(context, t), frame.masks, scoring)
        for t, frame in enumerate(frames)
    ]


def temporal_forward(frames: list[FrameObjects], temporal: TemporalParams,
                     scoring: ScoringParams) -> list[RankedFrame]:
    """Score, rank, and render every frame of a sequence."""
    results = []
    for frame, scores in zip(frames, sequence_scores(frames, temporal, scoring)):
        values = scores.data.copy()
        ranks = rank_assign(values)
        rank_map = render_rank_map(frame.masks, ranks, frame.masks.shape[1:])
        results.append(RankedFrame(scores=values, ranks=ranks, rank_map=rank_map))
    return results


def rank_assign(scores) -> np.ndarray:
    """Rank objects by score, 1 for the highest; ties broken by lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError(f"scores must be a non-empty vector, got shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise ValueError("scores contain non-finite values")
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


def render_rank_map(masks: np.ndarray, ranks: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Paint normalized rank values (N - r + 1) / N onto a zero background.

    Masks are painted from least to most salient, so where objects overlap
    the more salient one wins.
    """
    masks = np.asarray(masks)
    ranks = np.asarray(ranks)
    n = len(ranks)
    if masks.shape[0] != n:
        raise ShapeError(f"{masks.shape[0]} masks for {n} ranks")
    out_shape = tuple(out_shape)
    for i, mask in enumerate(masks):
        if mask.shape != out_shape:
            raise ShapeError(f"mask {i} has shape {mask.shape}, expected {out_shape}")
    rank_map = np.zeros(out_shape, dtype=np.float64)
    for r in range(n, 0, -1):
        (idx,) = np.nonzero(ranks == r)
        for i in idx:
            rank_map[masks[i].astype(bool)] = (n - r + 1) / n
    return rank_map


def downsample_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a single 2D mask, half-pixel centers, clamped edges."""
    src = np.asarray(mask, dtype=np.float64)
    in_h, in_w = src.shape
    sy = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    sy = np.clip(sy, 0.0, in_h - 1.0)
    sx = np.clip(sx, 0.0, in_w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bottom = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy
