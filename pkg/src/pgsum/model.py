"""Pointer-generator network: encoder, attention, copy mixture, checkpoints.

The model follows the classic attention seq2seq shape: a bidirectional
LSTM encoder, a unidirectional LSTM decoder, additive attention scores
e_i = v . tanh(W_h h_i + W_s s_t (+ w_c c_i) + b_attn), a two-layer
vocabulary projection over [s_t, h*], and a scalar generation probability
p_gen = sigma(w_h* . h* + w_s . s + w_x . x + b_ptr) that mixes the
vocabulary distribution with the attention (copy) distribution over an
example-specific extended vocabulary.

All per-step math runs through the autodiff module so a single backward
pass differentiates the whole unrolled sequence.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import EncodedExample, UNK_ID

CHECKPOINT_MAGIC = b"PGCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    emb_dim: int = 64
    hidden_dim: int = 128

    def __post_init__(self):
        if self.vocab_size <= 4:
            raise ValueError("vocab_size must exceed the 4 reserved ids")
        if self.emb_dim < 1 or self.hidden_dim < 1:
            raise ValueError("emb_dim and hidden_dim must be positive")


# (name, shape builder) for every trainable array, in checkpoint order.
# LSTM kernels take [x, h] concatenated and emit the four gates i,f,g,o
# stacked along the output axis.
def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    V, E, H = cfg.vocab_size, cfg.emb_dim, cfg.hidden_dim
    A = H  # attention feature width
    return [
        ("embedding", (V, E)),
        ("enc_fw_kernel", (E + H, 4 * H)),
        ("enc_fw_bias", (4 * H,)),
        ("enc_bw_kernel", (E + H, 4 * H)),
        ("enc_bw_bias", (4 * H,)),
        ("reduce_c_kernel", (2 * H, H)),
        ("reduce_c_bias", (H,)),
        ("reduce_h_kernel", (2 * H, H)),
        ("reduce_h_bias", (H,)),
        ("dec_kernel", (E + H, 4 * H)),
        ("dec_bias", (4 * H,)),
        ("attn_wh", (2 * H, A)),
        ("attn_ws", (H, A)),
        ("attn_b", (A,)),
        ("attn_v", (A,)),
        ("attn_wc", (A,)),
        ("out_v", (3 * H, H)),
        ("out_b", (H,)),
        ("out_vprime", (H, V)),
        ("out_bprime", (V,)),
        ("ptr_wh", (2 * H,)),
        ("ptr_ws", (H,)),
        ("ptr_wx", (E,)),
        ("ptr_b", ()),
    ]


class ModelParameters:
    """All trainable arrays, each reachable by a stable name."""

    def __init__(self, cfg: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = cfg
        self._order: list[str] = []
        for name, shape in _param_shapes(cfg):
            arr = arrays[name]
            if arr.shape != shape:
                raise ValueError(f"parameter {name}: expected shape {shape}, "
                                 f"got {arr.shape}")
            setattr(self, name, Tensor(arr, requires_grad=True))
            self._order.append(name)
        extra = set(arrays) - set(self._order)
        if extra:
            raise ValueError(f"unknown parameter names: {sorted(extra)}")

    def named(self) -> list[tuple[str, Tensor]]:
        return [(n, getattr(self, n)) for n in self._order]

    def zero_grad(self) -> None:
        for _, t in self.named():
            t.zero_grad()

    def n_values(self) -> int:
        return sum(t.size for _, t in self.named())


def init_parameters(cfg: ModelConfig, seed: int = 0) -> ModelParameters:
    """Gaussian init scaled by 1/sqrt(fan_in); biases and w_c start at zero."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(cfg):
        if name == "attn_wc" or name.endswith("_b") or name.endswith("_bias") \
                or name == "out_bprime":
            arrays[name] = np.zeros(shape)
        elif name == "embedding":
            arrays[name] = rng.normal(0.0, 0.1, size=shape)
        elif len(shape) == 2:
            arrays[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        else:
            arrays[name] = rng.normal(0.0, 0.1, size=shape)
    return ModelParameters(cfg, arrays)


def zero_parameters(cfg: ModelConfig) -> ModelParameters:
    return ModelParameters(cfg, {n: np.zeros(s) for n, s in _param_shapes(cfg)})


def lstm_step(kernel: Tensor, bias: Tensor, x: Tensor,
              state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; state is (cell, hidden)."""
    c, h = state
    hidden = h.data.size
    z = ad.matmul(ad.concat([x, h]), kernel) + bias
    i = ad.sigmoid(ad.narrow(z, 0, hidden))
    f = ad.sigmoid(ad.narrow(z, hidden, hidden))
    g = ad.tanh(ad.narrow(z, 2 * hidden, hidden))
    o = ad.sigmoid(ad.narrow(z, 3 * hidden, hidden))
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return c_new, h_new


@dataclass
class EncoderOutput:
    """Per-position encoder states and the decoder's initial state."""

    hidden_states: Tensor               # [src_len, 2*hidden]
    initial_state: tuple[Tensor, Tensor]  # (cell, hidden), each [hidden]
    attn_features: Tensor               # [src_len, attn] - W_h h_i, precomputed


def encode(source_ids: list[int], params: ModelParameters) -> EncoderOutput:
    """Bidirectional LSTM pass; final states reduced to seed the decoder."""
    if not source_ids:
        raise ValueError("cannot encode an empty source")
    H = params.config.hidden_dim
    embs = ad.take_rows(params.embedding, source_ids)
    xs = [ad.take_row(embs, t) for t in range(len(source_ids))]

    def run(kernel, bias, seq):
        c, h = ad.zeros(H), ad.zeros(H)
        outs = []
        for x in seq:
            c, h = lstm_step(kernel, bias, x, (c, h))
            outs.append(h)
        return outs, (c, h)

    fw, (fw_c, fw_h) = run(params.enc_fw_kernel, params.enc_fw_bias, xs)
    bw_rev, (bw_c, bw_h) = run(params.enc_bw_kernel, params.enc_bw_bias, xs[::-1])
    bw = bw_rev[::-1]
    h_seq = ad.stack_rows([ad.concat([f, b]) for f, b in zip(fw, bw)])

    c0 = ad.tanh(ad.matmul(ad.concat([fw_c, bw_c]), params.reduce_c_kernel)
                 + params.reduce_c_bias)
    h0 = ad.tanh(ad.matmul(ad.concat([fw_h, bw_h]), params.reduce_h_kernel)
                 + params.reduce_h_bias)
    return EncoderOutput(h_seq, (c0, h0),
                         ad.matmul(h_seq, params.attn_wh))


def attention(enc: EncoderOutput, s_t: Tensor, coverage: Tensor | None,
              mask: np.ndarray | None, params: ModelParameters) -> tuple[Tensor, Tensor]:
    """Attention weights and raw scores over source positions.

    ``coverage`` (accumulated past attention, one scalar per position) is
    optional; when given, each position's score sees w_c * c_i inside the
    tanh, which is how repeat attendance gets discouraged once the
    coverage penalty is active.
    """
    feats = enc.attn_features
    dec_feat = ad.matmul(s_t, params.attn_ws) + params.attn_b
    if coverage is not None:
        L = coverage.data.size
        cov_feat = ad.matmul(ad.reshape(coverage, (L, 1)),
                             ad.reshape(params.attn_wc, (1, -1)))
        feats = feats + cov_feat
    scores = ad.matmul(ad.tanh(ad.add_rows(feats, dec_feat)), params.attn_v)
    return ad.softmax(scores, mask=mask), scores


def context_vector(attn: Tensor, enc: EncoderOutput) -> Tensor:
    """Attention-weighted sum of encoder states."""
    return ad.matmul(attn, enc.hidden_states)


def vocab_distribution(s_t: Tensor, h_star: Tensor,
                       params: ModelParameters) -> Tensor:
    """Two-layer projection of [s_t, h*] to a vocabulary distribution."""
    x = ad.concat([s_t, h_star])
    hidden = ad.matmul(x, params.out_v) + params.out_b
    logits = ad.matmul(hidden, params.out_vprime) + params.out_bprime
    return ad.softmax(logits)


def generation_probability(h_star: Tensor, s_t: Tensor, x_t: Tensor,
                           params: ModelParameters) -> Tensor:
    """Scalar probability of generating (vs copying), strictly in (0,1)."""
    z = (ad.matmul(params.ptr_wh, h_star) + ad.matmul(params.ptr_ws, s_t)
         + ad.matmul(params.ptr_wx, x_t) + params.ptr_b)
    return ad.sigmoid(z)


def final_distribution(p_vocab: Tensor, attn: Tensor, p_gen: Tensor,
                       source_ext_ids: list[int], n_source_oovs: int) -> Tensor:
    """Mix generation and copy distributions over the extended vocabulary.

    Attention on repeated source words accumulates onto one id; ids at or
    beyond vocab_size + n_source_oovs are rejected.
    """
    vocab_size = p_vocab.data.size
    ext_size = vocab_size + n_source_oovs
    if source_ext_ids and max(source_ext_ids) >= ext_size:
        raise IndexError(f"extended id {max(source_ext_ids)} out of range "
                         f"for extended vocabulary of size {ext_size}")
    gen = p_vocab * p_gen
    if n_source_oovs:
        gen = ad.concat([gen, ad.zeros(n_source_oovs)])
    copy = ad.scatter_add(attn * (Tensor(1.0) - p_gen), source_ext_ids, ext_size)
    return gen + copy


@dataclass
class DecoderStepTrace:
    """Everything one decoder step produced, kept as live tape tensors."""

    t: int
    token_id: int          # the input token this step consumed
    attention: Tensor      # [src_len]
    p_vocab: Tensor        # [vocab_size]
    p_gen: Tensor          # scalar
    p_final: Tensor        # [vocab_size + n_source_oovs]
    coverage: Tensor       # [src_len], sum of attention before this step


def decode_step(prev_token_id: int, state: tuple[Tensor, Tensor],
                enc: EncoderOutput, coverage: Tensor,
                example: EncodedExample, params: ModelParameters,
                use_coverage: bool,
                mask: np.ndarray | None = None,
                ) -> tuple[DecoderStepTrace, tuple[Tensor, Tensor], Tensor]:
    """One decoder step; returns (trace, new LSTM state, new coverage).

    ``prev_token_id`` may be an extended id (a copied source OOV); it is
    embedded as UNK since extended ids have no embedding rows. Coverage
    always accumulates so traces stay comparable across phases, but it
    only feeds the attention scores when ``use_coverage`` is set.
    """
    vocab_size = params.config.vocab_size
    if prev_token_id >= vocab_size + len(example.source_oovs):
        raise IndexError(f"token id {prev_token_id} out of extended range")
    emb_id = prev_token_id if prev_token_id < vocab_size else UNK_ID
    x = ad.take_row(params.embedding, emb_id)
    c, h = lstm_step(params.dec_kernel, params.dec_bias, x, state)
    attn, _ = attention(enc, h, coverage if use_coverage else None, mask, params)
    h_star = context_vector(attn, enc)
    p_vocab = vocab_distribution(h, h_star, params)
    p_gen = generation_probability(h_star, h, x, params)
    p_final = final_distribution(p_vocab, attn, p_gen,
                                 example.source_ext_ids, len(example.source_oovs))
    trace = DecoderStepTrace(t=-1, token_id=prev_token_id, attention=attn,
                             p_vocab=p_vocab, p_gen=p_gen, p_final=p_final,
                             coverage=coverage)
    return trace, (c, h), coverage + attn


def run_decoder(example: EncodedExample, enc: EncoderOutput,
                params: ModelParameters, use_coverage: bool) -> list[DecoderStepTrace]:
    """Teacher-forced pass over the example's decoder inputs."""
    state = enc.initial_state
    coverage = ad.zeros(len(example.source_ids))
    traces = []
    for t, tok in enumerate(example.target_ids):
        trace, state, coverage = decode_step(tok, state, enc, coverage,
                                             example, params, use_coverage)
        trace.t = t
        traces.append(trace)
    return traces


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, params: ModelParameters,
                    extra_meta: dict | None = None) -> None:
    """Binary container of named float64 arrays plus a text sidecar."""
    cfg = params.config
    header = json.dumps({
        "format_version": CHECKPOINT_VERSION,
        "vocab_size": cfg.vocab_size,
        "emb_dim": cfg.emb_dim,
        "hidden_dim": cfg.hidden_dim,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, t in params.named():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", t.data.ndim))
            for d in t.data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    meta = {"format_version": CHECKPOINT_VERSION, "vocab_size": cfg.vocab_size,
            "emb_dim": cfg.emb_dim, "hidden_dim": cfg.hidden_dim}
    if extra_meta:
        meta.update(extra_meta)
    with open(path + ".meta", "w", encoding="utf-8") as fh:
        for k, v in meta.items():
            fh.write(f"{k} = {v}\n")


def load_checkpoint(path: str) -> ModelParameters:
    """Read a checkpoint; a missing coverage weight loads as zeros so
    pre-coverage checkpoints feed later phases."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version "
                             f"{header.get('format_version')}")
        cfg = ModelConfig(vocab_size=header["vocab_size"],
                          emb_dim=header["emb_dim"],
                          hidden_dim=header["hidden_dim"])
        arrays: dict[str, np.ndarray] = {}
        while True:
            raw = fh.read(2)
            if not raw:
                break
            (name_len,) = struct.unpack("<H", raw)
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated data for parameter {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    expected = dict(_param_shapes(cfg))
    missing = set(expected) - set(arrays)
    if missing - {"attn_wc"}:
        raise ValueError(f"{path}: checkpoint missing parameters "
                         f"{sorted(missing - {'attn_wc'})}")
    if "attn_wc" in missing:
        arrays["attn_wc"] = np.zeros(expected["attn_wc"])
    return ModelParameters(cfg, arrays)
