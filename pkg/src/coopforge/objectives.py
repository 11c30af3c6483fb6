"""Loss functions and the energy-model gradient estimator.

The estimator follows the contrastive maximum-likelihood form: observed
batches push parameters to raise f, synthesized batches to lower it. All
losses return scalar tensors so they can be recorded on a tape and
differentiated; revision targets are always treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .networks import EnergyModel, Net, TemporalPredictor
from .tensor import Graph, Tensor, backward

__all__ = [
    "LossWeights",
    "ebm_grad",
    "teach_loss",
    "cycle_loss",
    "temporal_loss",
    "spatiotemporal_loss",
    "combine_sequence_losses",
    "sequence_objective",
    "SequenceNets",
    "SequenceBatches",
]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objectives.

    ``lambda_cyc`` scales the cycle term in the image objective; ``lambda1``
    and ``lambda2`` scale the temporal and spatiotemporal terms in the
    sequence objective. All published values are 9.
    """

    lambda_cyc: float = 9.0
    lambda1: float = 9.0
    lambda2: float = 9.0

    def __post_init__(self):
        for field in ("lambda_cyc", "lambda1", "lambda2"):
            if getattr(self, field) < 0:
                raise ValueError(f"{field} must be non-negative, got {getattr(self, field)}")


def _constant(batch) -> Tensor:
    if isinstance(batch, Tensor):
        return batch.detach()
    return Tensor(np.asarray(batch))


def ebm_grad(model: EnergyModel, data_batch, synth_batch) -> dict[str, np.ndarray]:
    """Ascent direction on the data log-likelihood of the energy model.

    Returns, per parameter of f, mean over the data batch of df/dtheta minus
    the same mean over the synthesized batch. The Gaussian reference term
    carries no parameters, so only the score network receives gradient.
    Swapping the two batches negates the result exactly.
    """
    data = _constant(data_batch)
    synth = _constant(synth_batch)
    if data.shape[0] == 0 or synth.shape[0] == 0:
        raise ValueError("ebm_grad: batches must be non-empty")
    params = model.params
    for p in params.values():
        p.zero_grad()
    with Graph() as g:
        surrogate = model.score(data).mean() - model.score(synth).mean()
    backward(g, surrogate)
    return {k: p.grad.copy() for k, p in params.items()}


def teach_loss(g: Net, sources, targets) -> Tensor:
    """Regression of the translator onto revised targets.

    (1/n) sum_i ||target_i - G(source_i)||^2; targets are constants, so the
    gradient reaches only translator parameters.
    """
    src = _constant(sources)
    tgt = _constant(targets)
    if src.shape[0] != tgt.shape[0] or src.shape[0] == 0:
        raise ValueError(
            f"teach_loss: need equal non-empty batches, got {src.shape[0]} sources, {tgt.shape[0]} targets"
        )
    diff = T.sub(tgt, g.forward(src))
    return diff.sq_norm() * (1.0 / src.shape[0])


def cycle_loss(g_xy: Net, g_yx: Net, x_batch, y_batch) -> Tensor:
    """Round-trip consistency in both directions, L1 per sample.

    (1/n) sum ||x - G_yx(G_xy(x))||_1 + (1/m) sum ||y - G_xy(G_yx(y))||_1.
    """
    x = _constant(x_batch)
    y = _constant(y_batch)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("cycle_loss: batches must be non-empty")
    x_round = g_yx.forward(g_xy.forward(x))
    y_round = g_xy.forward(g_yx.forward(y))
    term_x = T.sub(x, x_round).l1_norm() * (1.0 / x.shape[0])
    term_y = T.sub(y, y_round).l1_norm() * (1.0 / y.shape[0])
    return term_x + term_y


def _split_clips(clips, k: int) -> tuple[list[Tensor], Tensor]:
    """Validate clip length k+1 and return per-step constant frames."""
    arr = np.asarray(clips.data if isinstance(clips, Tensor) else clips)
    if arr.ndim != 5:
        raise T.ShapeError(f"clips must be (n, k+1, C, H, W), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("clip batch must be non-empty")
    if arr.shape[1] != k + 1:
        raise ValueError(f"clips of length {arr.shape[1]} incompatible with k = {k} (need k+1)")
    past = [Tensor(np.ascontiguousarray(arr[:, t])) for t in range(k)]
    future = Tensor(np.ascontiguousarray(arr[:, k]))
    return past, future


def temporal_loss(r: TemporalPredictor, clips) -> Tensor:
    """Next-frame prediction error: mean over clips of
    ||x_{t+k} - R(x_t, ..., x_{t+k-1})||_1."""
    past, future = _split_clips(clips, r.k)
    context = T.concat(past, axis=1)
    pred = r.forward(context, past[-1])
    n = future.shape[0]
    return T.sub(future, pred).l1_norm() * (1.0 / n)


def spatiotemporal_loss(g_fwd: Net, r_other: TemporalPredictor, g_back: Net, clips) -> Tensor:
    """Round-trip prediction error through the other domain.

    Translate the k past frames with ``g_fwd`` (frame-wise), predict the
    next translated frame with ``r_other``, translate back with ``g_back``,
    and compare to the true next frame: mean over clips of
    ||x_{t+k} - G_back(R_other(G_fwd(x_t..x_{t+k-1})))||_1.
    """
    past, future = _split_clips(clips, r_other.k)
    moved = [g_fwd.forward(frame) for frame in past]
    context = T.concat(moved, axis=1)
    pred_other = r_other.forward(context, moved[-1])
    pred_back = g_back.forward(pred_other)
    n = future.shape[0]
    return T.sub(future, pred_back).l1_norm() * (1.0 / n)


@dataclass
class SequenceNets:
    """The four networks trained jointly on sequences."""

    g_xy: Net
    g_yx: Net
    r_x: TemporalPredictor
    r_y: TemporalPredictor


@dataclass
class SequenceBatches:
    """Inputs of one sequence-objective evaluation.

    ``y_sources``/``x_targets`` teach the Y-to-X translator (targets come
    from Langevin revision and are constants); ``x_sources``/``y_targets``
    the other direction. ``x_clips``/``y_clips`` are (n, k+1, C, H, W)
    windows from each domain for the temporal terms.
    """

    y_sources: np.ndarray
    x_targets: np.ndarray
    x_sources: np.ndarray
    y_targets: np.ndarray
    x_clips: np.ndarray
    y_clips: np.ndarray


def combine_sequence_losses(
    teach_yx: Tensor,
    teach_xy: Tensor,
    tp_x: Tensor,
    tp_y: Tensor,
    st_x: Tensor,
    st_y: Tensor,
    w: LossWeights,
) -> Tensor:
    """Weighted sum of the six sequence components:
    teach_yx + teach_xy + lambda1 (tp_x + tp_y) + lambda2 (st_x + st_y).

    The teaching terms enter unweighted; e.g. all components equal to 1
    with both lambdas 9 gives 1 + 1 + 9*2 + 9*2 = 38.
    """
    return (teach_yx + teach_xy) + w.lambda1 * (tp_x + tp_y) + w.lambda2 * (st_x + st_y)


def sequence_objective(nets: SequenceNets, batches: SequenceBatches, w: LossWeights) -> Tensor:
    """Joint objective of translators and temporal predictors on sequences."""
    teach_yx = teach_loss(nets.g_yx, batches.y_sources, batches.x_targets)
    teach_xy = teach_loss(nets.g_xy, batches.x_sources, batches.y_targets)
    tp_x = temporal_loss(nets.r_x, batches.x_clips)
    tp_y = temporal_loss(nets.r_y, batches.y_clips)
    st_x = spatiotemporal_loss(nets.g_xy, nets.r_y, nets.g_yx, batches.x_clips)
    st_y = spatiotemporal_loss(nets.g_yx, nets.r_x, nets.g_xy, batches.y_clips)
    return combine_sequence_losses(teach_yx, teach_xy, tp_x, tp_y, st_x, st_y, w)
