"""The mask-aware graph imputation network.

Pipeline per forward pass: a mask-aware encoder embeds observed values
and substitutes a learnable missing embedding elsewhere; a stack of
spatio-temporal blocks runs masked temporal self-attention (with scores
accumulated residually across blocks), derives node-level spatial
attention from a temporally collapsed summary, aggregates the block
input through attention-modulated Chebyshev graph convolution, and
refines along time with gated convolutions; block outputs are summed and
projected back to feature space by a two-layer head.

Masked keys receive exactly zero attention weight in the default
``neg_inf`` mode, which is what makes the output bit-invariant to values
stored at unobserved positions. The literal multiplicative masking of
the scores is kept as ``mask_mode="multiply"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import IncompleteWindow, Normalizer
from .errors import ContractError, InputError
from .graph import ChebyshevBasis, TrafficGraph, build_basis

CHECKPOINT_VERSION = 1

ABLATIONS = (
    "zero_prefill",
    "mean_prefill",
    "no_amstenc",
    "no_mastatt",
    "no_graphconv",
    "no_gtconv",
    "no_mastdec",
)

# Paper-style variant names accepted by the ablation runner / CLI.
VARIANT_TOGGLES = {
    "zero prefill": "zero_prefill",
    "mean prefill": "mean_prefill",
    "w/o AMSTenc": "no_amstenc",
    "w/o MASTatt": "no_mastatt",
    "w/o Graphconv": "no_graphconv",
    "w/o GTconv": "no_gtconv",
    "w/o MASTdec": "no_mastdec",
}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters and ablation toggles."""

    d: int = 16                      # hidden size
    heads: int = 3                   # attention heads
    head_dim: int = 0                # per-head size; 0 means max(1, d // heads)
    spatial_dim: int = 16            # node-embedding size for spatial attention
    cheb_order: int = 3              # Chebyshev polynomial order
    kernel_sizes: tuple[int, ...] = (3, 5)   # gated temporal conv widths
    blocks: int = 2                  # stacked spatio-temporal blocks
    spatial_kernel: int = 3          # width of the temporal-collapse conv
    mask_mode: str = "neg_inf"       # neg_inf | multiply
    ablations: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if min(self.d, self.heads, self.spatial_dim, self.cheb_order, self.blocks) < 1:
            raise ContractError("d, heads, spatial_dim, cheb_order and blocks must all be >= 1")
        if self.head_dim < 0:
            raise ContractError(f"head_dim must be >= 0, got {self.head_dim}")
        if not self.kernel_sizes:
            raise ContractError("kernel_sizes must be nonempty")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ContractError(f"kernel sizes must be odd and positive, got {self.kernel_sizes}")
        if self.spatial_kernel < 1:
            raise ContractError("spatial_kernel must be >= 1")
        if self.mask_mode not in ("neg_inf", "multiply"):
            raise ContractError(f"mask_mode must be neg_inf or multiply, got {self.mask_mode!r}")
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ContractError(f"unknown ablation toggles: {sorted(unknown)}")
        object.__setattr__(self, "ablations", frozenset(self.ablations))

    @property
    def dh(self) -> int:
        return self.head_dim if self.head_dim else max(1, self.d // self.heads)

    def with_ablations(self, *names: str) -> "ModelConfig":
        return ModelConfig(**{**self.to_dict(), "ablations": frozenset(names)})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kernel_sizes"] = list(self.kernel_sizes)
        out["ablations"] = sorted(self.ablations)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise InputError(f"unknown model config keys: {sorted(unknown)}")
        raw = dict(raw)
        if "kernel_sizes" in raw:
            raw["kernel_sizes"] = tuple(raw["kernel_sizes"])
        if "ablations" in raw:
            raw["ablations"] = frozenset(raw["ablations"])
        return cls(**raw)


class ModelParams:
    """Named learnable tensors; the set is a pure function of (config, N, W, C)."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = [n for n in self.tensors if n not in state]
        extra = [n for n in state if n not in self.tensors]
        bad_shape = [
            n for n in self.tensors
            if n in state and np.asarray(state[n]).shape != self.tensors[n].shape
        ]
        if missing or extra or bad_shape:
            raise InputError(
                "checkpoint does not match model: "
                f"missing={missing} extra={extra} shape_mismatch={bad_shape}"
            )
        for name, t in self.tensors.items():
            t.data = np.array(state[name], dtype=np.float64)

    @classmethod
    def initialize(cls, config: ModelConfig, n_nodes: int, width: int, n_features: int,
                   seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d, dh, f = config.d, config.dh, config.spatial_dim
        tensors: dict[str, Tensor] = {}

        def weight(name: str, *shape: int, fan_in: int | None = None):
            fan = fan_in if fan_in is not None else shape[0]
            bound = 1.0 / math.sqrt(max(1, fan))
            tensors[name] = ad.parameter(rng.uniform(-bound, bound, shape))

        def zeros(name: str, *shape: int):
            tensors[name] = ad.parameter(np.zeros(shape))

        def embedding(name: str, *shape: int):
            tensors[name] = ad.parameter(rng.normal(0.0, 0.02, shape))

        def ln(name: str):
            tensors[f"{name}.gain"] = ad.parameter(np.ones(d))
            tensors[f"{name}.bias"] = ad.parameter(np.zeros(d))

        weight("encoder.w_obs", n_features, d)
        zeros("encoder.b_obs", d)
        embedding("encoder.missing_embed", n_nodes, width, d)
        embedding("encoder.pos_time", width, d)
        embedding("pos_space", n_nodes, f)
        for b in range(config.blocks):
            p = f"block{b}"
            for h in range(config.heads):
                weight(f"{p}.attn.q{h}", d, dh)
                weight(f"{p}.attn.k{h}", d, dh)
                weight(f"{p}.attn.v{h}", d, dh)
            weight(f"{p}.attn.w_ctx", config.heads * dh, d)
            zeros(f"{p}.attn.b_ctx", d)
            ln(f"{p}.attn.ln")
            weight(f"{p}.collapse.kernel", config.spatial_kernel, d, d,
                   fan_in=config.spatial_kernel * d)
            zeros(f"{p}.collapse.bias", d)
            weight(f"{p}.collapse.w_proj", d, f)
            zeros(f"{p}.collapse.b_proj", f)
            for h in range(config.heads):
                weight(f"{p}.spatial.q{h}", f, dh, fan_in=f)
                weight(f"{p}.spatial.k{h}", f, dh, fan_in=f)
            for k in range(config.cheb_order):
                weight(f"{p}.cheb.theta{k}", d, d)
            for i, ksize in enumerate(config.kernel_sizes):
                weight(f"{p}.gate{i}.kernel", ksize, d, 2 * d, fan_in=ksize * d)
                zeros(f"{p}.gate{i}.bias", 2 * d)
            weight(f"{p}.merge_gates.w", len(config.kernel_sizes) * d, d)
            zeros(f"{p}.merge_gates.b", d)
            weight(f"{p}.merge_skip.w", 2 * d, d)
            zeros(f"{p}.merge_skip.b", d)
            ln(f"{p}.ln_out")
        weight("head.w1", d, d)
        zeros("head.b1", d)
        weight("head.w2", d, n_features)
        zeros("head.b2", n_features)
        if "no_mastdec" in config.ablations:
            weight("linear_head.w", d, n_features)
            zeros("linear_head.b", n_features)
        return cls(tensors)


# -- forward pieces ---------------------------------------------------------


def _prefill(x: np.ndarray, m: np.ndarray, mode: str) -> np.ndarray:
    """Replace unobserved entries of x by a constant (the pre-filling the
    default encoder exists to avoid; kept for the ablation variants)."""
    m3 = m[:, :, None]
    if mode == "zero":
        return x * m3
    per_node_sum = (x * m3).sum(axis=1)                       # (N, C)
    per_node_cnt = m.sum(axis=1)[:, None]                     # (N, 1)
    total_cnt = m.sum()
    global_mean = (x * m3).sum(axis=(0, 1)) / total_cnt if total_cnt else np.zeros(x.shape[2])
    node_mean = np.where(per_node_cnt > 0, per_node_sum / np.where(per_node_cnt > 0, per_node_cnt, 1.0),
                         global_mean)
    return x * m3 + node_mean[:, None, :] * (1.0 - m3)


def amst_encode(x: np.ndarray, m: np.ndarray, params: ModelParams, config: ModelConfig) -> Tensor:
    """Embed observations, substitute the missing embedding, add time positions.

    The output never depends on values stored at m = 0 positions.
    """
    if np.isnan(x[m == 1.0]).any():
        raise InputError("NaN at an observed position; convert NaNs to masked entries upstream")
    m3 = m[:, :, None]
    if "no_amstenc" in config.ablations:
        return ad.matmul(ad.constant(x * m3), params["encoder.w_obs"]) + params["encoder.b_obs"]
    if "zero_prefill" in config.ablations or "mean_prefill" in config.ablations:
        mode = "zero" if "zero_prefill" in config.ablations else "mean"
        filled = _prefill(x, m, mode)
        x_p = ad.matmul(ad.constant(filled), params["encoder.w_obs"]) + params["encoder.b_obs"]
    else:
        x_o = ad.matmul(ad.constant(x * m3), params["encoder.w_obs"]) + params["encoder.b_obs"]
        x_p = ad.scale_by(x_o, m3) + ad.scale_by(params["encoder.missing_embed"], 1.0 - m3)
    return x_p + params["encoder.pos_time"]


def temporal_attention(h: Tensor, m: np.ndarray, a_prev: Tensor, params: ModelParams,
                       config: ModelConfig, block: int,
                       internals: dict | None = None) -> tuple[Tensor, Tensor]:
    """Masked multi-head self-attention along time, per node.

    Scores accumulate across blocks through ``a_prev``; keys at m = 0 get
    exactly zero weight (neg_inf mode). A query whose keys are all masked
    receives zero context, so the residual passes the input through.
    """
    n, width, d = h.shape
    p = f"block{block}"
    dh = config.dh
    scale = 1.0 / math.sqrt(dh)
    values = []
    scores = []
    for head in range(config.heads):
        q = ad.matmul(h, params[f"{p}.attn.q{head}"])
        k = ad.matmul(h, params[f"{p}.attn.k{head}"])
        values.append(ad.matmul(h, params[f"{p}.attn.v{head}"]))
        scores.append(ad.matmul(q, ad.transpose(k, (0, 2, 1))) * scale)
    v_stack = ad.stack(values, axis=1)                    # (N, m, W, dh)
    a_new = ad.stack(scores, axis=1) + a_prev             # (N, m, W, W)
    key_mask = m[:, None, None, :]
    if "no_mastatt" in config.ablations:
        counts = m.sum(axis=1)
        uniform = np.where(counts[:, None, None, None] > 0,
                           key_mask / np.where(counts[:, None, None, None] > 0,
                                               counts[:, None, None, None], 1.0),
                           0.0)
        weights = ad.constant(np.broadcast_to(uniform, (n, config.heads, width, width)).copy())
    elif config.mask_mode == "neg_inf":
        weights = ad.softmax_lastdim(ad.masked_fill(a_new, key_mask, -np.inf))
    else:
        weights = ad.softmax_lastdim(ad.scale_by(a_new, key_mask))
    context = ad.matmul(weights, v_stack)                 # (N, m, W, dh)
    context = ad.reshape(ad.transpose(context, (0, 2, 1, 3)), (n, width, config.heads * dh))
    mixed = ad.matmul(context, params[f"{p}.attn.w_ctx"]) + params[f"{p}.attn.b_ctx"]
    h_matt = ad.layer_norm(mixed + h, params[f"{p}.attn.ln.gain"], params[f"{p}.attn.ln.bias"])
    if internals is not None:
        internals.setdefault("temporal_weights", []).append(weights.data.copy())
        internals.setdefault("temporal_scores", []).append(a_new.data.copy())
    return h_matt, a_new


def spatial_attention(h_matt: Tensor, m: np.ndarray, params: ModelParams, config: ModelConfig,
                      block: int, internals: dict | None = None) -> list[Tensor]:
    """Node-level attention from a temporally collapsed summary.

    Collapse = same-padded conv along time, mean pool over the window,
    linear map to the node-embedding size, plus the spatial positions.
    """
    n = h_matt.shape[0]
    p = f"block{block}"
    if "no_mastatt" in config.ablations:
        flat = ad.constant(np.full((n, n), 1.0 / n))
        heads = [flat for _ in range(config.heads)]
    else:
        z = ad.conv1d_time(h_matt, params[f"{p}.collapse.kernel"], "same") + params[f"{p}.collapse.bias"]
        z = z.mean(axis=1)
        z = ad.matmul(z, params[f"{p}.collapse.w_proj"]) + params[f"{p}.collapse.b_proj"]
        z = z + params["pos_space"]
        scale = 1.0 / math.sqrt(config.dh)
        heads = []
        for head in range(config.heads):
            q = ad.matmul(z, params[f"{p}.spatial.q{head}"])
            k = ad.matmul(z, params[f"{p}.spatial.k{head}"])
            heads.append(ad.softmax_lastdim(ad.matmul(q, ad.transpose(k, (1, 0))) * scale))
    if internals is not None:
        internals.setdefault("spatial_weights", []).append(
            np.stack([head.data for head in heads]))
    return heads


def graph_conv(h: Tensor, s_heads: list[Tensor], basis: ChebyshevBasis, params: ModelParams,
               config: ModelConfig, block: int) -> Tensor:
    """Chebyshev aggregation of the block input, modulated by attention.

    Order k uses T_k(L~) elementwise-weighted by spatial-attention head
    (k mod heads), then its own d x d channel mixer.
    """
    if basis.order < 1:
        raise ContractError("graph convolution needs a Chebyshev basis of order >= 1")
    n, width, d = h.shape
    p = f"block{block}"
    h_flat = ad.reshape(h, (n, width * d))
    out = None
    for k in range(basis.order):
        weighted = ad.scale_by(s_heads[k % config.heads], basis.matrices[k])
        mixed = ad.matmul(weighted, h_flat)                       # (N, W*d)
        mixed = ad.matmul(ad.reshape(mixed, (n * width, d)), params[f"{p}.cheb.theta{k}"])
        term = ad.reshape(mixed, (n, width, d))
        out = term if out is None else out + term
    return out


def gated_temporal_conv(e: Tensor, h: Tensor, params: ModelParams, config: ModelConfig,
                        block: int, internals: dict | None = None) -> Tensor:
    """Multi-scale tanh/sigmoid gated convolutions along time.

    The gated branches concatenate, project back to d channels, and
    residual-add onto the graph-conv output; the block then re-attaches
    its input through a second projected skip before layer norm.
    """
    n, width, d = e.shape
    p = f"block{block}"
    if "no_gtconv" not in config.ablations:
        gated = []
        for i in range(len(config.kernel_sizes)):
            c = ad.conv1d_time(e, params[f"{p}.gate{i}.kernel"], "same") + params[f"{p}.gate{i}.bias"]
            filt = ad.tanh(ad.slice_axis(c, 2, 0, d))
            gate = ad.sigmoid(ad.slice_axis(c, 2, d, 2 * d))
            gated.append(filt * gate)
        cat = ad.concat(gated, axis=2)
        merged = ad.matmul(cat, params[f"{p}.merge_gates.w"]) + params[f"{p}.merge_gates.b"]
        e_out = ad.relu(merged + e)
    else:
        e_out = e
    if internals is not None:
        internals.setdefault("conv_residual", []).append(e_out.data.copy())
    skip = ad.relu(ad.concat([e_out, h], axis=2))
    skip = ad.matmul(skip, params[f"{p}.merge_skip.w"]) + params[f"{p}.merge_skip.b"]
    return ad.layer_norm(skip, params[f"{p}.ln_out.gain"], params[f"{p}.ln_out.bias"])


def forward(x: np.ndarray, m: np.ndarray, params: ModelParams, config: ModelConfig,
            basis: ChebyshevBasis, internals: dict | None = None) -> Tensor:
    """Impute a window: (N, W, C) features + (N, W) mask -> (N, W, C)."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    n_nodes, width, n_feat = x.shape
    zu = params["encoder.missing_embed"]
    if zu.shape[0] != n_nodes or zu.shape[1] != width or params["encoder.w_obs"].shape[0] != n_feat:
        raise ContractError(
            f"window shape ({n_nodes}, {width}, {n_feat}) does not match parameters sized for "
            f"({zu.shape[0]}, {zu.shape[1]}, {params['encoder.w_obs'].shape[0]})"
        )
    if m.shape != (n_nodes, width):
        raise ContractError(f"mask shape {m.shape} does not match window ({n_nodes}, {width})")
    h = amst_encode(x, m, params, config)
    if "no_mastdec" in config.ablations:
        return ad.matmul(h, params["linear_head.w"]) + params["linear_head.b"]
    # Each block consumes the previous block's output (block 1 sees the
    # encoder output); the accumulated temporal-attention scores chain
    # alongside. Within a block the graph convolution aggregates the
    # block input itself, not the attention context, whose job is to
    # shape the aggregation weights.
    a_prev: Tensor = ad.constant(np.zeros((n_nodes, config.heads, width, width)))
    total = None
    h_in = h
    for b in range(config.blocks):
        h_matt, a_prev = temporal_attention(h_in, m, a_prev, params, config, b, internals)
        s_heads = spatial_attention(h_matt, m, params, config, b, internals)
        if "no_graphconv" in config.ablations:
            e = h_in
        else:
            e = graph_conv(h_in, s_heads, basis, params, config, b)
        h_out = gated_temporal_conv(e, h_in, params, config, b, internals)
        total = h_out if total is None else total + h_out
        h_in = h_out
    hidden = ad.relu(ad.matmul(total, params["head.w1"]) + params["head.b1"])
    return ad.matmul(hidden, params["head.w2"]) + params["head.b2"]


# -- bundled model -----------------------------------------------------------


class MagiNet:
    """Config + parameters + spectral basis, ready to impute windows."""

    def __init__(self, config: ModelConfig, graph: TrafficGraph, width: int, n_features: int,
                 seed: int = 0, params: ModelParams | None = None,
                 normalizer: Normalizer | None = None):
        self.config = config
        self.graph = graph
        self.width = width
        self.n_features = n_features
        self.seed = seed
        self.basis = build_basis(graph, config.cheb_order)
        self.params = params or ModelParams.initialize(config, graph.n_nodes, width, n_features, seed)
        self.normalizer = normalizer

    def forward(self, x: np.ndarray, m: np.ndarray, internals: dict | None = None) -> Tensor:
        return forward(x, m, self.params, self.config, self.basis, internals)

    def predict(self, window: IncompleteWindow, internals: dict | None = None) -> np.ndarray:
        """Imputed window in original units (gradient-free)."""
        x, m = window.x, window.m
        if self.normalizer is not None:
            x = np.where(m[:, :, None] == 1.0, self.normalizer.transform(x), 0.0)
        with ad.no_grad():
            out = self.forward(x, m, internals).data
        if self.normalizer is not None:
            out = self.normalizer.inverse(out)
        return out

    def impute(self, window: IncompleteWindow) -> np.ndarray:
        """Fill only m = 0 positions; observed values pass through untouched."""
        out = self.predict(window)
        return np.where(window.m[:, :, None] == 1.0, window.x, out)


# -- checkpointing -----------------------------------------------------------


def save_checkpoint(path, model: MagiNet, comment: str | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "width": model.width,
        "n_features": model.n_features,
        "seed": model.seed,
        "normalizer": None if model.normalizer is None else {
            "mean": model.normalizer.mean.tolist(),
            "std": model.normalizer.std.tolist(),
        },
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in model.params.items()
        },
    }
    with open(path, "w") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        json.dump(payload, handle)
        handle.write("\n")


def load_checkpoint(path, graph: TrafficGraph) -> MagiNet:
    with open(path) as handle:
        lines = handle.read().splitlines()
    body = "\n".join(line for line in lines if not line.startswith("#"))
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: not a valid checkpoint: {err}") from None
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    config = ModelConfig.from_dict(payload["config"])
    normalizer = None
    if payload.get("normalizer"):
        normalizer = Normalizer(mean=np.array(payload["normalizer"]["mean"]),
                                std=np.array(payload["normalizer"]["std"]))
    model = MagiNet(config, graph, width=int(payload["width"]), n_features=int(payload["n_features"]),
                    seed=int(payload["seed"]), normalizer=normalizer)
    state = {}
    for name, entry in payload["params"].items():
        state[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    model.params.load_state(state)
    return model
