"""Residual 1-D convolutional embedding network.

Each conv layer runs a bank of filters at several lengths in parallel (the
per-length outputs are concatenated along the channel axis), so one layer
sees multiple receptive-field scales. A block is

    [conv -> BN -> ReLU] x (convs_per_block - 1), conv -> BN,
    + shortcut, ReLU

where the shortcut is the identity, or a 1x1 convolution followed by BN
exactly when the block changes the channel count (only the first block,
1 -> channels). Global average pooling over time turns the last block's
output into a fixed-size embedding; there is no feedforward head and the
embedding is not L2-normalized.

Batches may mix series lengths: each series is convolved at its own length
and train-mode BN statistics are pooled across the concatenated time axes
of the whole batch.
"""

from __future__ import annotations

import io
import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CheckpointError, ConfigError, UsageError
from .kernels import BnState
from .params import Layout, ParamSet

_MODEL_IDS = itertools.count(1)

CHECKPOINT_MAGIC = "fewts-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    """Architecture hyperparameters of the embedding network."""

    blocks: int = 2
    convs_per_block: int = 2
    filter_lengths: tuple[int, ...] = (4, 8, 16, 32, 64)
    filters_per_length: int = 33

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.convs_per_block < 1:
            raise ConfigError("convs_per_block must be >= 1")
        if not self.filter_lengths:
            raise ConfigError("filter_lengths must be non-empty")
        if any(int(f) < 1 for f in self.filter_lengths):
            raise ConfigError("filter lengths must be >= 1")
        if self.filters_per_length < 1:
            raise ConfigError("filters_per_length must be >= 1")
        object.__setattr__(self, "filter_lengths", tuple(int(f) for f in self.filter_lengths))

    @property
    def channels(self) -> int:
        """Embedding dimension; every conv layer outputs this many channels."""
        return len(self.filter_lengths) * self.filters_per_length

    @property
    def conv_layers(self) -> int:
        return self.blocks * self.convs_per_block

    def to_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "convs_per_block": self.convs_per_block,
            "filter_lengths": list(self.filter_lengths),
            "filters_per_length": self.filters_per_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            blocks=int(d["blocks"]),
            convs_per_block=int(d["convs_per_block"]),
            filter_lengths=tuple(int(f) for f in d["filter_lengths"]),
            filters_per_length=int(d["filters_per_length"]),
        )


def _block_input_channels(spec: ArchSpec, block: int) -> int:
    return 1 if block == 0 else spec.channels


def build_layout(spec: ArchSpec) -> Layout:
    """Parameter records in a fixed, documented order: for each block, each
    conv layer contributes per-length filter banks, a bias and BN gamma/beta;
    blocks that change channel count append projection filters plus BN."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    m = spec.channels
    for bi in range(spec.blocks):
        block_in = _block_input_channels(spec, bi)
        for j in range(spec.convs_per_block):
            cin = block_in if j == 0 else m
            for f in spec.filter_lengths:
                shapes.append((f"b{bi}.c{j}.w{f}", (spec.filters_per_length, cin, f)))
            shapes.append((f"b{bi}.c{j}.bias", (m,)))
            shapes.append((f"b{bi}.c{j}.gamma", (m,)))
            shapes.append((f"b{bi}.c{j}.beta", (m,)))
        if block_in != m:
            shapes.append((f"b{bi}.proj.w", (m, block_in, 1)))
            shapes.append((f"b{bi}.proj.gamma", (m,)))
            shapes.append((f"b{bi}.proj.beta", (m,)))
    return Layout.from_shapes(shapes)


def bn_site_names(spec: ArchSpec) -> list[str]:
    names = []
    for bi in range(spec.blocks):
        for j in range(spec.convs_per_block):
            names.append(f"b{bi}.c{j}")
        if _block_input_channels(spec, bi) != spec.channels:
            names.append(f"b{bi}.proj")
    return names


class ResNetModel:
    """Architecture + parameters + task-local BN buffers + freeze mask.

    BN buffers are deliberately NOT part of the ParamSet: they are estimated
    per task and never touched by the optimizer or the meta-update.
    """

    def __init__(
        self,
        spec: ArchSpec,
        params: ParamSet,
        bn: dict[str, BnState] | None = None,
        freeze_mask: np.ndarray | None = None,
    ):
        self.spec = spec
        expected = build_layout(spec)
        if params.layout != expected:
            raise ConfigError("parameter layout does not match the architecture")
        self.params = params
        if bn is None:
            bn = {name: BnState.fresh(spec.channels) for name in bn_site_names(spec)}
        if sorted(bn) != sorted(bn_site_names(spec)):
            raise ConfigError("BN buffer names do not match the architecture")
        self.bn = bn
        self.freeze_mask = freeze_mask
        self._uid = next(_MODEL_IDS)
        self._revision = 0

    @property
    def embedding_dim(self) -> int:
        return self.spec.channels

    def set_params(self, params: ParamSet) -> None:
        if params.layout != self.params.layout:
            raise ConfigError("replacement parameters have a different layout")
        self.params = params
        self._revision += 1

    def copy(self) -> "ResNetModel":
        mask = None if self.freeze_mask is None else self.freeze_mask.copy()
        return ResNetModel(
            self.spec,
            self.params.copy(),
            {name: st.copy() for name, st in self.bn.items()},
            mask,
        )

    def reset_bn(self) -> None:
        """Forget task-local running statistics."""
        self.bn = {name: BnState.fresh(self.spec.channels) for name in bn_site_names(self.spec)}


def build_model(spec: ArchSpec, rng: np.random.Generator) -> ResNetModel:
    """Fresh model: orthogonal conv filters, zero biases, BN gamma=1/beta=0,
    uninitialized BN buffers. The rng is consumed in layout-record order, so
    equal seeds give bit-identical models."""
    layout = build_layout(spec)
    params = ParamSet(layout)
    for rec in layout.records:
        leaf = rec.name.rsplit(".", 1)[1]
        if leaf.startswith("w"):
            params.set(rec.name, kernels.orthogonal_init(rec.shape, rng))
        elif leaf == "gamma":
            params.set(rec.name, np.ones(rec.shape))
        # bias and beta stay zero
    return ResNetModel(spec, params)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _multi_conv_forward(x: np.ndarray, weights: list[np.ndarray], bias: np.ndarray) -> np.ndarray:
    outs = [kernels.conv1d_forward(x, w, np.zeros(w.shape[0])) for w in weights]
    return np.concatenate(outs, axis=1) + bias[None, :, None]


def _multi_conv_backward(
    x: np.ndarray, weights: list[np.ndarray], upstream: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    dbias = upstream.sum(axis=(0, 2))
    dx = np.zeros_like(x)
    dws = []
    ofs = 0
    for w in weights:
        o = w.shape[0]
        dxi, dwi, _ = kernels.conv1d_backward(x, w, upstream[:, ofs : ofs + o, :])
        dx += dxi
        dws.append(dwi)
        ofs += o
    return dx, dws, dbias


def _layer_weights(model: ResNetModel, block: int, conv: int) -> list[np.ndarray]:
    return [model.params.get(f"b{block}.c{conv}.w{f}") for f in model.spec.filter_lengths]


def _bn_forward_site(
    model: ResNetModel,
    site: str,
    groups: list[np.ndarray],
    mode: str,
    update_buffers: bool,
) -> tuple[list[np.ndarray], dict | None]:
    gamma = model.params.get(f"{site}.gamma")
    beta = model.params.get(f"{site}.beta")
    if mode == "train":
        mean, var, n_total = kernels.pooled_batch_stats(groups)
        ys, xhats = kernels.bn_apply(groups, gamma, beta, mean, var)
        if update_buffers:
            model.bn[site] = model.bn[site].update(mean, var)
        return ys, {"xhats": xhats, "var": var, "n": n_total}
    state = model.bn[site]
    if state.updates == 0:
        raise UsageError(f"BN site {site!r}: infer mode before any running-stat update")
    ys, _ = kernels.bn_apply(groups, gamma, beta, state.mean, state.var)
    return ys, None


def _forward_groups(
    model: ResNetModel,
    groups: list[np.ndarray],
    mode: str,
    update_buffers: bool,
) -> tuple[list[np.ndarray], list[dict]]:
    """Run the conv blocks over per-length groups ([g, ch, T] arrays).

    Returns the post-block activations per group and a per-block cache
    sufficient for the backward pass.
    """
    h = groups
    block_caches = []
    for bi in range(model.spec.blocks):
        x_in = h
        conv_caches = []
        cur = x_in
        pre_relu = None
        for j in range(model.spec.convs_per_block):
            weights = _layer_weights(model, bi, j)
            bias = model.params.get(f"b{bi}.c{j}.bias")
            pre_bn = [_multi_conv_forward(g, weights, bias) for g in cur]
            ys, bn_cache = _bn_forward_site(model, f"b{bi}.c{j}", pre_bn, mode, update_buffers)
            conv_caches.append({"x": cur, "bn": bn_cache, "bn_out": ys})
            if j < model.spec.convs_per_block - 1:
                cur = [kernels.relu_forward(y) for y in ys]
            else:
                pre_relu = ys
        proj_cache = None
        if _block_input_channels(model.spec, bi) != model.spec.channels:
            pw = model.params.get(f"b{bi}.proj.w")
            pre_bn_p = [kernels.conv1d_forward(g, pw, np.zeros(pw.shape[0])) for g in x_in]
            shortcut, bn_cache_p = _bn_forward_site(
                model, f"b{bi}.proj", pre_bn_p, mode, update_buffers
            )
            proj_cache = {"bn": bn_cache_p}
        else:
            shortcut = x_in
        pre_act = [m + s for m, s in zip(pre_relu, shortcut)]
        h = [kernels.relu_forward(p) for p in pre_act]
        block_caches.append(
            {"x_in": x_in, "convs": conv_caches, "proj": proj_cache, "pre_act": pre_act}
        )
    return h, block_caches


def _coerce_series(batch) -> list[np.ndarray]:
    if isinstance(batch, np.ndarray) and batch.ndim == 2:
        batch = list(batch)
    series = []
    for s in batch:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] < 1:
            raise ConfigError("each series must be a non-empty 1-D array")
        series.append(s)
    return series


def embed_batch(
    model: ResNetModel,
    batch,
    mode: str = "infer",
    return_cache: bool = False,
    update_buffers: bool = True,
):
    """Embed a batch of series (lengths may differ) into [batch, dim] rows.

    Train mode needs at least 2 series, pools BN statistics across the whole
    batch and (by default) updates the model's running stats; pass
    ``return_cache=True`` to get the cache :func:`backward_batch` needs.
    Infer mode processes each series independently with frozen statistics,
    so batched rows are bit-identical to single :func:`embed` calls.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown mode {mode!r}")
    series = _coerce_series(batch)
    if not series:
        raise ConfigError("empty batch")

    if mode == "infer":
        if return_cache:
            raise UsageError("backward caches exist only in train mode")
        rows = []
        for s in series:
            outs, _ = _forward_groups(model, [s[None, None, :]], "infer", False)
            rows.append(kernels.gap_forward(outs[0])[0])
        return np.vstack(rows)

    if len(series) < 2:
        raise ConfigError("train mode needs a batch of >= 2 series")
    # Group by length, keeping first-appearance order; remember where each
    # row came from so outputs line up with the input order.
    lengths: list[int] = []
    members: dict[int, list[int]] = {}
    for i, s in enumerate(series):
        t = s.shape[0]
        if t not in members:
            members[t] = []
            lengths.append(t)
        members[t].append(i)
    groups = [np.stack([series[i] for i in members[t]])[:, None, :] for t in lengths]

    outs, block_caches = _forward_groups(model, groups, "train", update_buffers)
    dim = model.embedding_dim
    z = np.empty((len(series), dim))
    for t, out in zip(lengths, outs):
        z[members[t]] = kernels.gap_forward(out)
    if not return_cache:
        return z
    cache = {
        "uid": model._uid,
        "revision": model._revision,
        "lengths": lengths,
        "members": members,
        "blocks": block_caches,
        "n_series": len(series),
    }
    return z, cache


def embed(model: ResNetModel, x: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Embedding of a single series. Train mode is only valid inside
    :func:`embed_batch`, where batch statistics exist."""
    if mode == "train":
        raise UsageError("train mode needs a batch; use embed_batch")
    return embed_batch(model, [x], mode=mode)[0]


def backward_batch(model: ResNetModel, cache: dict, upstream: np.ndarray) -> ParamSet:
    """Reverse-mode through a train-mode forward pass.

    ``upstream`` is the loss gradient w.r.t. the embedding rows, [batch, dim].
    Returns parameter gradients as a ParamSet; entries under the model's
    freeze mask are zeroed.
    """
    if cache.get("uid") != model._uid or cache.get("revision") != model._revision:
        raise UsageError("stale forward cache: model parameters changed since the forward pass")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cache["n_series"], model.embedding_dim):
        raise ConfigError(
            f"upstream must be [{cache['n_series']}, {model.embedding_dim}], got {upstream.shape}"
        )
    grads = ParamSet(model.params.layout)

    # Scatter rows back to their length groups and undo the average pooling.
    d_groups = []
    for t in cache["lengths"]:
        rows = upstream[cache["members"][t]]
        d_groups.append(kernels.gap_backward(rows, t))

    for bi in reversed(range(model.spec.blocks)):
        bc = cache["blocks"][bi]
        d_pre = [g * (p > 0) for g, p in zip(d_groups, bc["pre_act"])]

        # Shortcut branch.
        if bc["proj"] is not None:
            bn_c = bc["proj"]["bn"]
            gamma_p = model.params.get(f"b{bi}.proj.gamma")
            dxs, dgamma, dbeta = kernels.bn_backward_pooled(
                d_pre, bn_c["xhats"], bn_c["var"], gamma_p, bn_c["n"]
            )
            grads.get(f"b{bi}.proj.gamma")[:] += dgamma
            grads.get(f"b{bi}.proj.beta")[:] += dbeta
            pw = model.params.get(f"b{bi}.proj.w")
            d_short = []
            dw_total = np.zeros_like(pw)
            for x_g, d_g in zip(bc["x_in"], dxs):
                dx_g, dw_g, _ = kernels.conv1d_backward(x_g, pw, d_g)
                d_short.append(dx_g)
                dw_total += dw_g
            grads.get(f"b{bi}.proj.w")[:] += dw_total
        else:
            d_short = d_pre

        # Main branch, last conv first. The final conv's BN output feeds the
        # residual sum directly (no ReLU in between).
        d_cur = d_pre
        for j in reversed(range(model.spec.convs_per_block)):
            cc = bc["convs"][j]
            if j < model.spec.convs_per_block - 1:
                d_cur = [g * (y > 0) for g, y in zip(d_cur, cc["bn_out"])]
            bn_c = cc["bn"]
            gamma = model.params.get(f"b{bi}.c{j}.gamma")
            dxs, dgamma, dbeta = kernels.bn_backward_pooled(
                d_cur, bn_c["xhats"], bn_c["var"], gamma, bn_c["n"]
            )
            grads.get(f"b{bi}.c{j}.gamma")[:] += dgamma
            grads.get(f"b{bi}.c{j}.beta")[:] += dbeta
            weights = _layer_weights(model, bi, j)
            dws_total = [np.zeros_like(w) for w in weights]
            dbias_total = np.zeros(model.spec.channels)
            d_prev = []
            for x_g, d_g in zip(cc["x"], dxs):
                dx_g, dws_g, dbias_g = _multi_conv_backward(x_g, weights, d_g)
                d_prev.append(dx_g)
                for acc, dw in zip(dws_total, dws_g):
                    acc += dw
                dbias_total += dbias_g
            for f, dw in zip(model.spec.filter_lengths, dws_total):
                grads.get(f"b{bi}.c{j}.w{f}")[:] += dw
            grads.get(f"b{bi}.c{j}.bias")[:] += dbias_total
            d_cur = d_prev

        d_groups = [a + b for a, b in zip(d_cur, d_short)]

    if model.freeze_mask is not None:
        grads.values[model.freeze_mask] = 0.0
    return grads


# ---------------------------------------------------------------------------
# Freezing
# ---------------------------------------------------------------------------


def freeze_mask_for(spec: ArchSpec, frozen_layers: int) -> np.ndarray:
    """Boolean mask over the flat parameter vector freezing the lowest
    ``frozen_layers`` conv layers (filters, bias and their BN gamma/beta).
    A block's shortcut projection freezes together with the whole block."""
    if not (0 <= frozen_layers <= spec.conv_layers):
        raise ConfigError(
            f"frozen_layers must be in [0, {spec.conv_layers}], got {frozen_layers}"
        )
    layout = build_layout(spec)
    mask = np.zeros(layout.total_size, dtype=bool)
    for bi in range(spec.blocks):
        for j in range(spec.convs_per_block):
            if bi * spec.convs_per_block + j >= frozen_layers:
                continue
            for f in spec.filter_lengths:
                rec = layout[f"b{bi}.c{j}.w{f}"]
                mask[rec.offset : rec.offset + rec.size] = True
            for leaf in ("bias", "gamma", "beta"):
                rec = layout[f"b{bi}.c{j}.{leaf}"]
                mask[rec.offset : rec.offset + rec.size] = True
        if f"b{bi}.proj.w" in layout and frozen_layers >= (bi + 1) * spec.convs_per_block:
            for leaf in ("w", "gamma", "beta"):
                rec = layout[f"b{bi}.proj.{leaf}"]
                mask[rec.offset : rec.offset + rec.size] = True
    return mask


def apply_freeze(model: ResNetModel, frozen_layers: int) -> ResNetModel:
    """Copy of the model with the freeze mask for ``frozen_layers`` set."""
    out = model.copy()
    out.freeze_mask = freeze_mask_for(model.spec, frozen_layers)
    return out


# ---------------------------------------------------------------------------
# Checkpoints: one file holding (version, ArchSpec, layout, raw little-endian
# float64 parameters, BN buffers). Round-trips are bit-exact.
# ---------------------------------------------------------------------------


def checkpoint_bytes(model: ResNetModel) -> bytes:
    bn_names = bn_site_names(model.spec)
    header = {
        "magic": CHECKPOINT_MAGIC,
        "format_version": CHECKPOINT_VERSION,
        "arch": model.spec.to_dict(),
        "layout": [
            {"name": r.name, "shape": list(r.shape), "offset": r.offset}
            for r in model.params.layout.records
        ],
        "param_count": model.params.layout.total_size,
        "bn": [{"name": n, "channels": model.spec.channels, "updates": model.bn[n].updates}
               for n in bn_names],
        "dtype": "<f8",
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8"))
    buf.write(b"\n")
    buf.write(np.ascontiguousarray(model.params.values, dtype="<f8").tobytes())
    for name in bn_names:
        st = model.bn[name]
        buf.write(np.ascontiguousarray(st.mean, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(st.var, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model: ResNetModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path) -> ResNetModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )
    spec = ArchSpec.from_dict(header["arch"])
    layout = build_layout(spec)
    stored = [(r["name"], tuple(r["shape"]), r["offset"]) for r in header["layout"]]
    derived = [(r.name, r.shape, r.offset) for r in layout.records]
    if stored != derived:
        raise CheckpointError(f"{path}: layout records do not match the architecture")
    if header["param_count"] != layout.total_size:
        raise CheckpointError(f"{path}: parameter count mismatch")

    body = blob[nl + 1 :]
    need = layout.total_size * 8
    names = bn_site_names(spec)
    if [b["name"] for b in header["bn"]] != names:
        raise CheckpointError(f"{path}: BN buffer list does not match the architecture")
    expected = need + len(names) * 2 * spec.channels * 8
    if len(body) != expected:
        raise CheckpointError(f"{path}: body has {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body[:need], dtype="<f8").astype(np.float64)
    bn: dict[str, BnState] = {}
    ofs = need
    for entry in header["bn"]:
        w = spec.channels * 8
        mean = np.frombuffer(body[ofs : ofs + w], dtype="<f8").astype(np.float64)
        var = np.frombuffer(body[ofs + w : ofs + 2 * w], dtype="<f8").astype(np.float64)
        bn[entry["name"]] = BnState(mean, var, int(entry["updates"]))
        ofs += 2 * w
    return ResNetModel(spec, ParamSet(layout, values), bn)
