"""Set-Sequence panel model.

Each layer summarizes the cross-section of units into a low-dimensional
series, concatenates that summary back onto every unit's feature stream,
embeds the result, and runs an independent causal sequence block per unit.
Three cross-sectional summaries are available (shared mean pooling, unit-to-
unit attention, gated selection), plus a ``none`` setting that drops the
summary entirely and leaves a pure per-unit sequence model.

Layouts: panels are (M, T, d) or batched (B, M, T, d); unit axis 1, time
axis 2. Outputs at position t depend only on inputs at positions <= t, and
parameters never depend on the number of units M.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sim import DomainError
from .streams import substream

VARIANTS = ("mean", "mha", "gated", "none")


@dataclass(frozen=True)
class SetSeqConfig:
    n_setseq_layers: int = 5
    n_plain_seq_layers: int = 1
    d_in: int = 4
    d_model: int = 800
    chunk_len: int = 3
    summary_dim: int = 2
    phi_out_dim: int = 5
    kernel_len: int = 30
    dropout: float = 0.0
    variant: str = "mean"
    mha_heads: int = 5
    conv_weight_decay: float = 0.0
    output_dim: int = 3
    ffn_mult: int = 4
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("n_plain_seq_layers",):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        for name in ("n_setseq_layers", "d_in", "d_model", "chunk_len", "summary_dim",
                     "phi_out_dim", "kernel_len", "output_dim", "ffn_mult"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError("dropout must be in [0, 1)")
        if self.variant == "mha" and self.phi_out_dim % self.mha_heads != 0:
            raise DomainError("phi_out_dim must be divisible by mha_heads")
        if self.dtype not in ("float32", "float64"):
            raise DomainError("dtype must be float32 or float64")

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SetSeqConfig":
        valid = set(cls.__dataclass_fields__)
        unknown = set(d) - valid
        if unknown:
            raise DomainError(
                f"unknown model config keys {sorted(unknown)}; valid keys: {sorted(valid)}"
            )
        return cls(**d)


@dataclass
class LayerTrace:
    """Per-layer cross-sectional summary series recorded during a forward.

    ``summaries[l]`` has shape (B, T, r); for the per-unit variants it is the
    unit average of the per-unit summaries.
    """

    summaries: list = field(default_factory=list)

    def series(self, layer: int, dim: int = 0, batch: int = 0) -> np.ndarray:
        return self.summaries[layer][batch, :, dim]

    @property
    def n_layers(self) -> int:
        return len(self.summaries)

    def to_rows(self, batch: int = 0):
        """Long-format rows (layer, dim, t, value)."""
        rows = []
        for layer, arr in enumerate(self.summaries):
            _, t_len, r = arr.shape
            for dim in range(r):
                for t in range(t_len):
                    rows.append((layer, dim, t, float(arr[batch, t, dim])))
        return rows

    def to_csv(self, path, batch: int = 0):
        from .dataio import write_csv

        write_csv(path, ["layer", "dim", "t", "value"], self.to_rows(batch=batch))
        return path


def _he_init(rng, fan_in, shape, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(config: SetSeqConfig, seed: int = 0) -> dict[str, Tensor]:
    """Build the named parameter map for one model."""
    dt = config.np_dtype()
    rng = substream(seed, "param_init")
    params: dict[str, Tensor] = {}

    def ffn(prefix, d_in, d_hidden, d_out):
        params[f"{prefix}.w1"] = ad.parameter(_he_init(rng, d_in, (d_in, d_hidden), dt))
        params[f"{prefix}.b1"] = ad.parameter(np.zeros(d_hidden, dtype=dt))
        params[f"{prefix}.w2"] = ad.parameter(_he_init(rng, d_hidden, (d_hidden, d_out), dt))
        params[f"{prefix}.b2"] = ad.parameter(np.zeros(d_out, dtype=dt))

    def seq_block(prefix):
        k = (rng.standard_normal((config.d_model, config.kernel_len))
             / np.sqrt(config.kernel_len)).astype(dt)
        params[f"{prefix}.conv.kernel"] = ad.parameter(k)
        params[f"{prefix}.mix.w"] = ad.parameter(
            _he_init(rng, config.d_model, (config.d_model, config.d_model), dt))
        params[f"{prefix}.mix.b"] = ad.parameter(np.zeros(config.d_model, dtype=dt))

    p_dim, r = config.phi_out_dim, config.summary_dim
    for layer in range(config.n_setseq_layers):
        d_layer = config.d_in if layer == 0 else config.d_model
        pre = f"set{layer}"
        if config.variant != "none":
            ffn(f"{pre}.embed", d_layer * config.chunk_len, config.ffn_mult * p_dim, p_dim)
            if config.variant in ("mean", "gated"):
                ffn(f"{pre}.pool", p_dim, config.ffn_mult * r, r)
            if config.variant == "mha":
                for name in ("wq", "wk", "wv"):
                    params[f"{pre}.attn.{name}"] = ad.parameter(
                        _he_init(rng, p_dim, (p_dim, p_dim), dt))
                params[f"{pre}.attn.wo"] = ad.parameter(_he_init(rng, p_dim, (p_dim, r), dt))
            if config.variant == "gated":
                params[f"{pre}.gate.w"] = ad.parameter(_he_init(rng, p_dim, (p_dim, p_dim), dt))
            fuse_in = d_layer + r
        else:
            fuse_in = d_layer
        ffn(f"{pre}.fuse", fuse_in, config.ffn_mult * config.d_model, config.d_model)
        seq_block(pre)
    for j in range(config.n_plain_seq_layers):
        seq_block(f"seq{j}")
    params["head.w"] = ad.parameter(_he_init(rng, config.d_model,
                                             (config.d_model, config.output_dim), dt))
    params["head.b"] = ad.parameter(np.zeros(config.output_dim, dtype=dt))
    return params


def conv_kernel_names(params: dict[str, Tensor]) -> list[str]:
    return [k for k in params if k.endswith("conv.kernel")]


def chunk(stream: Tensor, chunk_len: int) -> Tensor:
    """Stack the trailing ``chunk_len`` periods as features at each position.

    Position t holds [x_{t-L+1}, ..., x_t] with zero padding before the
    first period, so the result is strictly causal.
    """
    if chunk_len == 1:
        return stream
    parts = [ad.shift_time(stream, s) for s in range(chunk_len - 1, 0, -1)]
    parts.append(stream)
    return ad.concat(parts, axis=-1)


def _ffn(params, prefix, x, config, train, rng):
    # ReLU keeps the two-layer maps cheap; the sequence block carries GELU
    h = ad.relu(ad.affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    h = ad.dropout(h, config.dropout, train, rng)
    return ad.affine(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def set_summary_mean(emb: Tensor, params, prefix, config, train, rng) -> Tensor:
    """Shared summary: output net applied to the unit-mean embedding, (B, T, r)."""
    pooled = ad.mean(emb, axis=1)
    return _ffn(params, f"{prefix}.pool", pooled, config, train, rng)


def set_summary_mha(emb: Tensor, params, prefix, config) -> Tensor:
    """Per-unit summary via softmax attention across units, (B, M, T, r)."""
    b, m, t_len, p_dim = emb.data.shape
    q = ad.affine(emb, params[f"{prefix}.attn.wq"])
    k = ad.affine(emb, params[f"{prefix}.attn.wk"])
    v = ad.affine(emb, params[f"{prefix}.attn.wv"])
    d_h = p_dim // config.mha_heads
    per_batch = []
    for i in range(b):
        heads = []
        for h in range(config.mha_heads):
            sl = slice(h * d_h, (h + 1) * d_h)
            qh = ad.reshape(ad.narrow(ad.narrow(q, 0, i, i + 1), 3, sl.start, sl.stop),
                            (m, t_len, d_h))
            kh = ad.reshape(ad.narrow(ad.narrow(k, 0, i, i + 1), 3, sl.start, sl.stop),
                            (m, t_len, d_h))
            vh = ad.reshape(ad.narrow(ad.narrow(v, 0, i, i + 1), 3, sl.start, sl.stop),
                            (m, t_len, d_h))
            heads.append(ad.set_attention(qh, kh, vh))
        mixed = heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)
        per_batch.append(ad.reshape(mixed, (1, m, t_len, p_dim)))
    joined = per_batch[0] if b == 1 else ad.concat(per_batch, axis=0)
    return ad.affine(joined, params[f"{prefix}.attn.wo"])


def gated_matrix(emb_b: Tensor, w: Tensor) -> Tensor:
    """Row-softmax of cosine similarities between projected time-mean embeddings."""
    xbar = ad.mean(emb_b, axis=1)            # (M, P)
    proj = ad.matmul2d(xbar, w)              # (M, dw)
    sims = ad.gram(proj)                     # (M, M)
    norms = ad.sqrt(ad.sum_(ad.mul(proj, proj), axis=1, keepdims=True) + 1e-30)
    denom = ad.gram(norms) + 1e-12           # zero-norm rows yield similarity ~ 0
    return ad.softmax(ad.div(sims, denom), axis=1)


def set_summary_gated(emb: Tensor, params, prefix, config, train, rng,
                      g_override: np.ndarray | None = None) -> Tensor:
    """Per-unit summary through a per-sample selection matrix, (B, M, T, r)."""
    b, m, t_len, p_dim = emb.data.shape
    per_batch = []
    for i in range(b):
        emb_b = ad.reshape(ad.narrow(emb, 0, i, i + 1), (m, t_len, p_dim))
        if g_override is not None:
            g_mat = ad.tensor(np.asarray(g_override, dtype=emb.data.dtype))
        else:
            g_mat = gated_matrix(emb_b, params[f"{prefix}.gate.w"])
        mixed = ad.gated_mix(g_mat, emb_b)
        f_units = _ffn(params, f"{prefix}.pool", mixed, config, train, rng)
        per_batch.append(ad.reshape(f_units, (1, m, t_len, config.summary_dim)))
    return per_batch[0] if b == 1 else ad.concat(per_batch, axis=0)


def seq_layer(u: Tensor, params, prefix, config, train, rng) -> Tensor:
    """u + Dropout(PointwiseMix(GELU(CausalDepthwiseConv(u))))."""
    c = ad.causal_depthwise_conv(u, params[f"{prefix}.conv.kernel"])
    mixed = ad.affine(ad.gelu(c), params[f"{prefix}.mix.w"], params[f"{prefix}.mix.b"])
    return ad.add(u, ad.dropout(mixed, config.dropout, train, rng))


def forward(params: dict[str, Tensor], config: SetSeqConfig, panel: np.ndarray,
            train: bool = False, rng: np.random.Generator | None = None,
            collect_trace: bool = False, g_override: np.ndarray | None = None):
    """Run the full stack.

    ``panel`` is (M, T, d_in) or (B, M, T, d_in). Returns (outputs, trace)
    where outputs has the panel's leading layout with output_dim channels and
    trace is a LayerTrace (empty unless ``collect_trace``).
    """
    squeeze = panel.ndim == 3
    if squeeze:
        panel = panel[None]
    if panel.ndim != 4:
        raise DomainError(f"panel must be (M, T, d) or (B, M, T, d), got {panel.shape}")
    b, m, t_len, d = panel.shape
    if m < 1:
        raise DomainError("need at least one unit")
    if d != config.d_in:
        raise DomainError(f"panel features {d} != config.d_in {config.d_in}")
    if train and config.dropout > 0.0 and rng is None:
        raise DomainError("training forward with dropout needs an rng")

    stream = ad.input_tensor(panel, config.np_dtype())
    trace = LayerTrace()
    for layer in range(config.n_setseq_layers):
        pre = f"set{layer}"
        if config.variant == "none":
            aug = stream
        else:
            emb = _ffn(params, f"{pre}.embed", chunk(stream, config.chunk_len),
                       config, train, rng)
            if config.variant == "mean":
                f_shared = set_summary_mean(emb, params, pre, config, train, rng)
                if collect_trace:
                    trace.summaries.append(np.array(f_shared.data, copy=True))
                f_units = ad.broadcast_to_units(f_shared, m)
            elif config.variant == "mha":
                f_units = set_summary_mha(emb, params, pre, config)
                if collect_trace:
                    trace.summaries.append(f_units.data.mean(axis=1))
            else:
                f_units = set_summary_gated(emb, params, pre, config, train, rng,
                                            g_override=g_override)
                if collect_trace:
                    trace.summaries.append(f_units.data.mean(axis=1))
            aug = ad.concat([stream, f_units], axis=-1)
        u = _ffn(params, f"{pre}.fuse", aug, config, train, rng)
        stream = seq_layer(u, params, pre, config, train, rng)
    for j in range(config.n_plain_seq_layers):
        stream = seq_layer(stream, params, f"seq{j}", config, train, rng)
    out = ad.affine(stream, params["head.w"], params["head.b"])
    if squeeze:
        out = ad.reshape(out, out.data.shape[1:])
    return out, trace
