"""Variant wiring from raw object features to scored, ranked frames.

Four configurations mirror the ablation grid:

* ``basic``    -- raw features serve as both relation and value inputs; each
                  frame is scored against its own pooled value map.
* ``spatial``  -- the per-frame relation attention is enabled; still no
                  cross-frame mixing.
* ``temporal`` -- raw features feed the cross-frame attention directly.
* ``full``     -- both attention stages enabled.
"""

import json
import os
from dataclasses import dataclass

from .autodiff import Tensor, mean_axis
from .dataset import FrameSample, read_tensor_file, write_tensor_file
from .spatial import (
    RoiFeatureBatch,
    SpatialParams,
    spatial_forward,
    spatial_params_init,
)
from .temporal import (
    FrameObjects,
    RankedFrame,
    ScoringParams,
    TemporalParams,
    frame_scores,
    rank_assign,
    render_rank_map,
    scoring_params_init,
    sequence_scores,
    temporal_params_init,
)

__all__ = [
    "VARIANTS",
    "ModelParams",
    "init_model_params",
    "named_params",
    "model_scores",
    "model_forward",
    "save_model_params",
    "load_model_params",
]

VARIANTS = ("basic", "spatial", "temporal", "full")


@dataclass(frozen=True)
class ModelParams:
    spatial: SpatialParams
    temporal: TemporalParams
    scoring: ScoringParams


def init_model_params(channels: int, height: int, width: int, seed: int) -> ModelParams:
    """All learnable projections, deterministically derived from one seed."""
    return ModelParams(
        spatial=spatial_params_init(channels, seed),
        temporal=temporal_params_init(channels, seed + 1),
        scoring=scoring_params_init(channels, height, width, seed + 2),
    )


def named_params(params: ModelParams) -> list[tuple[str, Tensor]]:
    out = []
    for stage_name, stage in (("spatial", params.spatial), ("temporal", params.temporal),
                              ("scoring", params.scoring)):
        for proj_name in stage.__dataclass_fields__:
            proj = getattr(stage, proj_name)
            out.append((f"{stage_name}.{proj_name}.weight", proj.weight))
            out.append((f"{stage_name}.{proj_name}.bias", proj.bias))
    return out


def _frame_objects(frames: list[FrameSample], params: ModelParams,
                   variant: str) -> list[FrameObjects]:
    use_spatial = variant in ("spatial", "full")
    out = []
    for frame in frames:
        features = Tensor(frame.features, requires_grad=True)
        if use_spatial:
            attended = spatial_forward(RoiFeatureBatch(features), params.spatial)
            relation, value = attended.relation, attended.value
        else:
            relation = value = features
        out.append(FrameObjects(relation=relation, value=value, masks=frame.masks))
    return out


def model_scores(frames: list[FrameSample], params: ModelParams,
                 variant: str) -> list[Tensor]:
    """Differentiable per-frame score vectors under the chosen variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    frame_objects = _frame_objects(frames, params, variant)
    if variant in ("temporal", "full"):
        return sequence_scores(frame_objects, params.temporal, params.scoring)
    # Without cross-frame mixing each frame is scored against its own pooled
    # value map, so scores depend on the current frame only.
    return [
        frame_scores(fo.relation, mean_axis(fo.value, 0), fo.masks, params.scoring)
        for fo in frame_objects
    ]


def model_forward(frames: list[FrameSample], params: ModelParams,
                  variant: str) -> list[RankedFrame]:
    """Score, rank, and render every frame of a sequence."""
    results = []
    for frame, scores in zip(frames, model_scores(frames, params, variant)):
        values = scores.data.copy()
        ranks = rank_assign(values)
        rank_map = render_rank_map(frame.masks, ranks, frame.masks.shape[1:])
        results.append(RankedFrame(scores=values, ranks=ranks, rank_map=rank_map))
    return results


def save_model_params(path, params: ModelParams, config=None) -> None:
    """One raw tensor file per projection, plus a manifest of names."""
    os.makedirs(path, exist_ok=True)
    names = []
    for name, tensor in named_params(params):
        write_tensor_file(os.path.join(path, f"{name}.bin"), tensor.data)
        names.append(name)
    manifest = {"params": names}
    if config is not None:
        manifest["config"] = {
            "variant": config.variant, "C": config.C, "H": config.H,
            "W": config.W, "T": config.T,
        }
    with open(os.path.join(path, "params.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f)
        f.write("\n")


def load_model_params(path) -> ModelParams:
    with open(os.path.join(path, "params.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    arrays = {
        name: read_tensor_file(os.path.join(path, f"{name}.bin"))
        for name in manifest["params"]
    }
    channels = arrays["spatial.kq_proj.weight"].shape[0]
    height_width = arrays["scoring.mask_embed.weight"].shape[1]
    # Rebuild with the right structure, then overwrite every tensor.
    params = init_model_params(channels, 1, height_width, seed=0)
    for name, tensor in named_params(params):
        tensor.data[...] = arrays[name]
    return params
