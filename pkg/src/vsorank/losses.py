"""Training objective for saliency scores.

The ranking term is a pairwise hinge: every object ranked above another must
outscore it by at least a margin.  Detector-side terms (box, mask, class) are
accepted as optional plug-in scalars so the total keeps the shape of the full
objective even though those heads live outside this toolkit.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, matmul, relu

__all__ = ["RankTarget", "rank_loss", "total_loss", "DEFAULT_MARGIN"]

DEFAULT_MARGIN = 0.5


@dataclass(frozen=True)
class RankTarget:
    """Ground-truth ranks aligned with a frame's object order (1 = most salient)."""

    gt_ranks: tuple[int, ...]

    def __post_init__(self):
        ranks = sorted(self.gt_ranks)
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError(f"ranks {self.gt_ranks} are not a permutation of 1..{len(ranks)}")


def rank_loss(scores: Tensor, target: RankTarget, margin: float = DEFAULT_MARGIN) -> Tensor:
    """Mean hinge over all ordered pairs (more salient, less salient).

    Zero exactly when every more-salient object outscores every less-salient
    one by at least ``margin``.
    """
    n = scores.size
    if n < 2:
        raise ValueError(f"need at least two objects to rank, got {n}")
    if len(target.gt_ranks) != n:
        raise ValueError(f"{len(target.gt_ranks)} ranks for {n} scores")
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")

    pairs = [
        (i, j)
        for i in range(n)
        for j in range(n)
        if target.gt_ranks[i] < target.gt_ranks[j]
    ]
    selector = np.zeros((len(pairs), n))
    for row, (i, j) in enumerate(pairs):
        selector[row, i] = 1.0
        selector[row, j] = -1.0

    diffs = matmul(Tensor(selector), scores.reshape(n, 1)).reshape(len(pairs))
    return relu(margin - diffs).mean()


def total_loss(rank_term, box_term=None, mask_term=None, cls_term=None):
    """Unweighted sum of the provided terms; absent detector terms add zero."""
    total = None
    for term in (rank_term, box_term, mask_term, cls_term):
        if term is None:
            continue
        value = term.item() if isinstance(term, Tensor) else float(term)
        if not np.isfinite(value):
            raise ValueError(f"loss term is not finite: {value}")
        if not isinstance(term, Tensor):
            term = value
        total = term if total is None else total + term
    return total
