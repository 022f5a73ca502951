"""Self-contained finite-difference check of the embedding gradients.

Runs the full pipeline (convolutions, batch normalization with pooled
statistics, residual shortcuts, GAP, triplet loss) on a small architecture
and compares the analytic parameter gradient against central differences.
"""

from __future__ import annotations

import numpy as np

from .network import ArchSpec, backward_batch, build_model, embed_batch
from .params import ParamSet
from .triplet import TripletLossConfig, enumerate_valid_triplets, triplet_loss, triplet_loss_grad

CHECK_SPEC = ArchSpec(blocks=1, convs_per_block=2, filter_lengths=(2, 3), filters_per_length=2)


def gradient_check(
    spec: ArchSpec = CHECK_SPEC,
    batch_size: int = 4,
    length: int = 8,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and numeric gradients of the
    batch-all triplet loss with respect to every parameter."""
    rng = np.random.default_rng(seed)
    model = build_model(spec, rng)
    series = [rng.standard_normal(length) for _ in range(batch_size)]
    labels = np.array([i % 2 for i in range(batch_size)])
    triplets = enumerate_valid_triplets(labels)
    cfg = TripletLossConfig()

    def loss_at(values: np.ndarray) -> float:
        probe = model.copy()
        probe.set_params(ParamSet(probe.params.layout, values.copy()))
        z = embed_batch(probe, series, mode="train", update_buffers=False)
        return triplet_loss(z, triplets, cfg)[0]

    z, cache = embed_batch(model, series, mode="train", return_cache=True,
                           update_buffers=False)
    analytic = backward_batch(model, cache, triplet_loss_grad(z, triplets, cfg)).values

    base = model.params.values
    numeric = np.empty_like(base)
    for i in range(base.size):
        up = base.copy()
        up[i] += h
        down = base.copy()
        down[i] -= h
        numeric[i] = (loss_at(up) - loss_at(down)) / (2.0 * h)

    # Normalize by the gradient scale, not per coordinate: conv biases feed
    # straight into batch norm, so their true gradient is zero and central
    # differences return pure roundoff noise there.
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)
