"""Encoder-decoder transformer with structural attention biases.

Post-layer-norm residual blocks, learned absolute position embeddings,
GELU feed-forward, tied input/output embeddings. Structural biases can be
injected independently into encoder self-attention, decoder self-attention,
and decoder cross-attention; with all three sites off the model is
parameter-for-parameter a vanilla transformer.
"""

from __future__ import annotations

import io
import math
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .attention import AttnVariant, BiasGrads, StructBiasParams, bias_gradients, compute_bias
from .attention import LAMBDA_INIT, MU_INIT, softplus_inverse
from .autodiff import Tensor
from .errors import MissingCheckpoint
from .serializer import AnnotatedSequence, NUM_ROLES, TokenRole
from .tokenizer import BOS_ID, PAD_ID, Vocab

NEG_INF = -np.inf

N_BLOCK_CLASSES = 8


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_dim: int = 512
    dropout: float = 0.1
    max_source: int = 512
    max_target: int = 64
    variant: AttnVariant = AttnVariant.HYBRID
    encoder_self_struct: bool = True
    decoder_self_struct: bool = True
    decoder_cross_struct: bool = True
    per_head_bias: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class SourceBatch:
    """Padded annotated batch; pad positions carry role SEP and block 0."""

    ids: np.ndarray  # (B, T) int
    roles: np.ndarray  # (B, T) int
    blocks: np.ndarray  # (B, T) int
    lengths: np.ndarray  # (B,) int


def batch_sequences(seqs: list[AnnotatedSequence]) -> SourceBatch:
    width = max(len(s) for s in seqs)
    n = len(seqs)
    ids = np.full((n, width), PAD_ID, dtype=np.int64)
    roles = np.full((n, width), int(TokenRole.SEP), dtype=np.int64)
    blocks = np.zeros((n, width), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, seq in enumerate(seqs):
        lengths[i] = len(seq)
        ids[i, : len(seq)] = seq.ids()
        roles[i, : len(seq)] = seq.roles()
        blocks[i, : len(seq)] = seq.block_indices()
    return SourceBatch(ids, roles, blocks, lengths)


def _struct_param_names(variant: AttnVariant) -> list[str]:
    if variant in (AttnVariant.HYBRID,):
        return ["L", "lambda_raw", "mu_raw"]
    if variant is AttnVariant.TYPE_ONLY:
        return ["L"]
    if variant is AttnVariant.DIST_ONLY:
        return ["lambda_raw", "mu_raw"]
    if variant is AttnVariant.HYBRID_STAR:
        return ["L", "same_block_bias"]
    return []  # MASK has no learnable structural parameters


class Model:
    """Trainable seq2seq model; parameters live in a flat name -> Tensor map."""

    def __init__(self, config: ModelConfig, vocab: Vocab, seed: int = 0, dtype=np.float32):
        if config.vocab_size != vocab.size:
            config = replace(config, vocab_size=vocab.size)
        self.config = config
        self.vocab = vocab
        self.step = 0
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        self._init_params(rng)

    # ---------------------------------------------------------------- init

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(np.ascontiguousarray(data, dtype=self.dtype), requires_grad=True)

    def _matrix(self, rng, name: str, shape) -> None:
        self._add(name, rng.normal(0.0, 0.02, size=shape))

    def _zeros(self, name: str, shape=()) -> None:
        self._add(name, np.zeros(shape))

    def _ones(self, name: str, shape) -> None:
        self._add(name, np.ones(shape))

    def _struct_params(self, prefix: str) -> None:
        cfg = self.config
        heads = cfg.n_heads if cfg.per_head_bias else 1
        names = _struct_param_names(cfg.variant)
        if "L" in names:
            self._zeros(f"{prefix}.L", (heads, NUM_ROLES, NUM_ROLES))
        if "lambda_raw" in names:
            self._add(f"{prefix}.lambda_raw", np.full(heads, softplus_inverse(LAMBDA_INIT)))
        if "mu_raw" in names:
            self._add(f"{prefix}.mu_raw", np.full(heads, softplus_inverse(MU_INIT)))
        if "same_block_bias" in names:
            self._zeros(f"{prefix}.same_block_bias", (heads,))

    def _attn_params(self, rng, prefix: str) -> None:
        d = self.config.d_model
        for part in ("wq", "wk", "wv", "wo"):
            self._matrix(rng, f"{prefix}.{part}", (d, d))
        for part in ("bq", "bk", "bv", "bo"):
            self._zeros(f"{prefix}.{part}", (d,))

    def _ffn_params(self, rng, prefix: str) -> None:
        d, f = self.config.d_model, self.config.ffn_dim
        self._matrix(rng, f"{prefix}.w1", (d, f))
        self._zeros(f"{prefix}.b1", (f,))
        self._matrix(rng, f"{prefix}.w2", (f, d))
        self._zeros(f"{prefix}.b2", (d,))

    def _ln_params(self, prefix: str) -> None:
        d = self.config.d_model
        self._ones(f"{prefix}.g", (d,))
        self._zeros(f"{prefix}.b", (d,))

    def _init_params(self, rng) -> None:
        cfg = self.config
        self._matrix(rng, "tok_emb", (cfg.vocab_size, cfg.d_model))
        self._matrix(rng, "pos_enc", (cfg.max_source + 1, cfg.d_model))
        self._matrix(rng, "pos_dec", (cfg.max_source + 1, cfg.d_model))
        self._ln_params("emb_ln_enc")
        self._ln_params("emb_ln_dec")
        for i in range(cfg.encoder_layers):
            self._attn_params(rng, f"enc{i}.self")
            self._ln_params(f"enc{i}.ln1")
            self._ffn_params(rng, f"enc{i}.ffn")
            self._ln_params(f"enc{i}.ln2")
            if cfg.encoder_self_struct:
                self._struct_params(f"enc{i}.struct")
        for i in range(cfg.decoder_layers):
            self._attn_params(rng, f"dec{i}.self")
            self._ln_params(f"dec{i}.lnself")
            self._attn_params(rng, f"dec{i}.cross")
            self._ln_params(f"dec{i}.lncross")
            self._ffn_params(rng, f"dec{i}.ffn")
            self._ln_params(f"dec{i}.ln2")
            if cfg.decoder_self_struct:
                self._struct_params(f"dec{i}.self_struct")
            if cfg.decoder_cross_struct:
                self._struct_params(f"dec{i}.cross_struct")
        self._matrix(rng, "cls.w", (cfg.d_model, N_BLOCK_CLASSES))
        self._zeros("cls.b", (N_BLOCK_CLASSES,))

    # ------------------------------------------------------------ utilities

    def astype(self, dtype) -> "Model":
        """Cast all parameters in place (e.g. float64 for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for name, tensor in self.params.items():
            tensor.data = tensor.data.astype(self.dtype)
            tensor.grad = None
        return self

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def trainable(self, frozen_prefixes: tuple[str, ...] = ()) -> dict[str, Tensor]:
        return {
            name: t
            for name, t in self.params.items()
            if not any(name.startswith(p) for p in frozen_prefixes)
        }

    # ----------------------------------------------------------- sublayers

    def _linear(self, x: Tensor, prefix: str, w: str, b: str) -> Tensor:
        return ad.add(ad.matmul(x, self.params[f"{prefix}.{w}"]), self.params[f"{prefix}.{b}"])

    def _struct_bias_tensor(self, prefix: str, q_ann, k_ann):
        """Structural bias as a Tensor of shape (B, heads-or-1, Tq, Tk).

        Forward delegates to compute_bias; the backward closure delegates to
        bias_gradients (the analytic gradient path).
        """
        cfg = self.config
        q_roles, q_blocks = q_ann
        k_roles, k_blocks = k_ann
        n_batch = q_roles.shape[0]
        heads = cfg.n_heads if cfg.per_head_bias else 1
        names = _struct_param_names(cfg.variant)
        tensors = {name: self.params[f"{prefix}.{name}"] for name in names}

        def params_for(head: int) -> StructBiasParams:
            def val(name, default):
                if name not in tensors:
                    return default
                return tensors[name].data[head]

            return StructBiasParams(
                L=np.asarray(val("L", np.zeros((NUM_ROLES, NUM_ROLES))), dtype=np.float64),
                lambda_raw=float(val("lambda_raw", softplus_inverse(LAMBDA_INIT))),
                mu_raw=float(val("mu_raw", softplus_inverse(MU_INIT))),
                variant=cfg.variant,
                same_block_bias=float(val("same_block_bias", 0.0)),
            )

        head_params = [params_for(h) for h in range(heads)]
        data = np.stack(
            [
                np.stack(
                    [
                        compute_bias((q_roles[b], q_blocks[b]), (k_roles[b], k_blocks[b]), head_params[h])
                        for h in range(heads)
                    ]
                )
                for b in range(n_batch)
            ]
        )
        data = data.astype(self.dtype)
        parents = tuple(tensors.values())
        if not parents:
            return Tensor(data)

        def vjp(g):
            for h in range(heads):
                total: BiasGrads | None = None
                for b in range(n_batch):
                    grads = bias_gradients(
                        g[b, h],
                        (q_roles[b], q_blocks[b]),
                        (k_roles[b], k_blocks[b]),
                        head_params[h],
                    )
                    if total is None:
                        total = grads
                    else:
                        total = BiasGrads(
                            total.dL + grads.dL,
                            total.dlambda_raw + grads.dlambda_raw,
                            total.dmu_raw + grads.dmu_raw,
                            total.dsame_block_bias + grads.dsame_block_bias,
                        )
                for name, value in (
                    ("L", total.dL),
                    ("lambda_raw", total.dlambda_raw),
                    ("mu_raw", total.dmu_raw),
                    ("same_block_bias", total.dsame_block_bias),
                ):
                    if name in tensors:
                        t = tensors[name]
                        if t.grad is None:
                            t.grad = np.zeros_like(t.data)
                        t.grad[h] += np.asarray(value, dtype=t.data.dtype)

        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)

    def _mha(self, prefix, x_q, x_kv, mask_add, struct_prefix, q_ann, k_ann, train, rng):
        cfg = self.config
        n_batch, t_q, d = x_q.data.shape
        t_k = x_kv.data.shape[1]
        heads, dh = cfg.n_heads, d // cfg.n_heads

        def split(x: Tensor, t: int) -> Tensor:
            return ad.transpose(ad.reshape(x, (n_batch, t, heads, dh)), (0, 2, 1, 3))

        q = split(self._linear(x_q, prefix, "wq", "bq"), t_q)
        k = split(self._linear(x_kv, prefix, "wk", "bk"), t_k)
        v = split(self._linear(x_kv, prefix, "wv", "bv"), t_k)

        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        if mask_add is not None:
            scores = ad.add_constant(scores, mask_add)
        if struct_prefix is not None:
            scores = ad.add(scores, self._struct_bias_tensor(struct_prefix, q_ann, k_ann))
        probs = ad.softmax(scores)
        if train:
            probs = ad.dropout(probs, cfg.dropout, rng)
        ctx = ad.matmul(probs, v)
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (n_batch, t_q, d))
        return self._linear(merged, prefix, "wo", "bo")

    def _ffn(self, prefix: str, x: Tensor, train: bool, rng) -> Tensor:
        h = ad.gelu(self._linear(x, prefix, "w1", "b1"))
        if train:
            h = ad.dropout(h, self.config.dropout, rng)
        return ad.add(ad.matmul(h, self.params[f"{prefix}.w2"]), self.params[f"{prefix}.b2"])

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _embed(self, ids: np.ndarray, pos_table: str, ln_prefix: str, train, rng) -> Tensor:
        tok = ad.embedding(self.params["tok_emb"], ids)
        pos = ad.embedding(self.params[pos_table], np.arange(ids.shape[1]))
        x = self._ln(ln_prefix, ad.add(tok, pos))
        if train:
            x = ad.dropout(x, self.config.dropout, rng)
        return x

    # ------------------------------------------------------------- encoder

    @staticmethod
    def _key_pad_mask(lengths: np.ndarray, width: int) -> np.ndarray:
        cols = np.arange(width)[None, :]
        mask = np.where(cols < lengths[:, None], 0.0, NEG_INF)
        return mask[:, None, None, :]  # (B, 1, 1, Tk)

    def encode(self, src: SourceBatch, train: bool = False, rng=None) -> Tensor:
        cfg = self.config
        x = self._embed(src.ids, "pos_enc", "emb_ln_enc", train, rng)
        mask = self._key_pad_mask(src.lengths, src.ids.shape[1])
        ann = (src.roles, src.blocks)
        for i in range(cfg.encoder_layers):
            struct = f"enc{i}.struct" if cfg.encoder_self_struct else None
            attn = self._mha(f"enc{i}.self", x, x, mask, struct, ann, ann, train, rng)
            x = self._ln(f"enc{i}.ln1", ad.add(x, attn))
            x = self._ln(f"enc{i}.ln2", ad.add(x, self._ffn(f"enc{i}.ffn", x, train, rng)))
        return x

    # ------------------------------------------------------------- decoder

    def decode(
        self,
        tgt: SourceBatch,
        enc_out: Tensor,
        src: SourceBatch,
        train: bool = False,
        rng=None,
    ) -> Tensor:
        """Hidden states (B, Tt, D) for teacher-forced decoder inputs."""
        cfg = self.config
        t_t = tgt.ids.shape[1]
        y = self._embed(tgt.ids, "pos_dec", "emb_ln_dec", train, rng)
        causal = np.where(np.triu(np.ones((t_t, t_t), dtype=bool), k=1), NEG_INF, 0.0)
        self_mask = causal[None, None] + self._key_pad_mask(tgt.lengths, t_t)
        cross_mask = self._key_pad_mask(src.lengths, src.ids.shape[1])
        tgt_ann = (tgt.roles, tgt.blocks)
        src_ann = (src.roles, src.blocks)
        for i in range(cfg.decoder_layers):
            self_struct = f"dec{i}.self_struct" if cfg.decoder_self_struct else None
            cross_struct = f"dec{i}.cross_struct" if cfg.decoder_cross_struct else None
            attn = self._mha(f"dec{i}.self", y, y, self_mask, self_struct, tgt_ann, tgt_ann, train, rng)
            y = self._ln(f"dec{i}.lnself", ad.add(y, attn))
            cross = self._mha(f"dec{i}.cross", y, enc_out, cross_mask, cross_struct, tgt_ann, src_ann, train, rng)
            y = self._ln(f"dec{i}.lncross", ad.add(y, cross))
            y = self._ln(f"dec{i}.ln2", ad.add(y, self._ffn(f"dec{i}.ffn", y, train, rng)))
        return y

    def project_vocab(self, hidden: Tensor) -> Tensor:
        """Tied output projection onto the vocabulary."""
        emb = self.params["tok_emb"]
        return ad.matmul(hidden, ad.transpose(emb, (1, 0)))

    def seq2seq_logits(self, src: SourceBatch, tgt: SourceBatch, train=False, rng=None) -> Tensor:
        enc_out = self.encode(src, train, rng)
        hidden = self.decode(tgt, enc_out, src, train, rng)
        return self.project_vocab(hidden)

    def classify_logits(self, src: SourceBatch, train=False, rng=None) -> Tensor:
        """8-way block-type logits; the same input feeds encoder and decoder."""
        enc_out = self.encode(src, train, rng)
        hidden = self.decode(src, enc_out, src, train, rng)
        last = ad.gather_positions(hidden, src.lengths - 1)
        return ad.add(ad.matmul(last, self.params["cls.w"]), self.params["cls.b"])


@contextmanager
def frozen(model: Model):
    """Disable gradient graph construction (fast inference)."""
    flags = {name: t.requires_grad for name, t in model.params.items()}
    for t in model.params.values():
        t.requires_grad = False
    try:
        yield model
    finally:
        for name, t in model.params.items():
            t.requires_grad = flags[name]


# ------------------------------------------------------------- spec wrappers


def _target_batch(target_ids, target_roles, target_block_index) -> SourceBatch:
    ids = [BOS_ID] + list(target_ids)
    if isinstance(target_roles, TokenRole):
        roles = [int(target_roles)] * len(ids)
    else:
        roles = [int(target_roles[0]) if target_roles else int(TokenRole.BLOCK_TITLE)]
        roles += [int(r) for r in target_roles]
    blocks = [target_block_index] * len(ids)
    return SourceBatch(
        ids=np.asarray([ids], dtype=np.int64),
        roles=np.asarray([roles], dtype=np.int64),
        blocks=np.asarray([blocks], dtype=np.int64),
        lengths=np.asarray([len(ids)], dtype=np.int64),
    )


def forward_seq2seq(model: Model, source: AnnotatedSequence, target_ids, target_roles, target_block_index: int) -> np.ndarray:
    """Logits for the BOS-prefixed target prefix, shape (len(target)+1, V)."""
    src = batch_sequences([source])
    tgt = _target_batch(target_ids, target_roles, target_block_index)
    with frozen(model):
        logits = model.seq2seq_logits(src, tgt)
    return logits.data[0]


def classify_block_type(model: Model, source: AnnotatedSequence) -> np.ndarray:
    """8-way logits for a serialized type-suggestion context."""
    src = batch_sequences([source])
    with frozen(model):
        logits = model.classify_logits(src)
    return logits.data[0]


# ---------------------------------------------------------------- checkpoint

_MAGIC = "formseq-checkpoint 1"


def _config_items(model: Model) -> list[tuple[str, str]]:
    cfg = model.config
    items = [
        ("d_model", cfg.d_model),
        ("decoder_cross_struct", int(cfg.decoder_cross_struct)),
        ("decoder_layers", cfg.decoder_layers),
        ("decoder_self_struct", int(cfg.decoder_self_struct)),
        ("dropout", repr(cfg.dropout)),
        ("encoder_layers", cfg.encoder_layers),
        ("encoder_self_struct", int(cfg.encoder_self_struct)),
        ("ffn_dim", cfg.ffn_dim),
        ("max_source", cfg.max_source),
        ("max_target", cfg.max_target),
        ("n_heads", cfg.n_heads),
        ("per_head_bias", int(cfg.per_head_bias)),
        ("step", model.step),
        ("variant", cfg.variant.value),
        ("vocab_size", cfg.vocab_size),
    ]
    return [(k, str(v)) for k, v in items]


def save_checkpoint(model: Model, path) -> None:
    """Write the documented text-header + float32 little-endian container."""
    buf = io.BytesIO()

    def line(s: str) -> None:
        buf.write((s + "\n").encode("utf-8"))

    line(_MAGIC)
    line("[config]")
    for key, value in _config_items(model):
        line(f"{key}={value}")
    line("[vocab]")
    line(f"count={model.vocab.size}")
    for i in range(model.vocab.size):
        line(model.vocab.token_of(i))
    names = sorted(model.params)
    line("[tensors]")
    line(f"count={len(names)}")
    for name in names:
        shape = model.params[name].data.shape
        line(f"{name} {'x'.join(map(str, shape)) if shape else '-'}")
    line("[data]")
    for name in names:
        buf.write(np.ascontiguousarray(model.params[name].data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, dtype=np.float32) -> Model:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise MissingCheckpoint(str(path)) from exc
    marker = b"[data]\n"
    split_at = blob.find(marker)
    if split_at < 0:
        raise ValueError(f"{path}: not a formseq checkpoint")
    header = blob[:split_at].decode("utf-8").splitlines()
    payload = blob[split_at + len(marker) :]
    if header[0] != _MAGIC:
        raise ValueError(f"{path}: bad magic {header[0]!r}")

    pos = header.index("[config]") + 1
    config_map: dict[str, str] = {}
    while not header[pos].startswith("["):
        key, _, value = header[pos].partition("=")
        config_map[key] = value
        pos += 1
    assert header[pos] == "[vocab]"
    count = int(header[pos + 1].split("=")[1])
    tokens = header[pos + 2 : pos + 2 + count]
    pos = pos + 2 + count
    assert header[pos] == "[tensors]"
    n_tensors = int(header[pos + 1].split("=")[1])
    manifest = []
    for row in header[pos + 2 : pos + 2 + n_tensors]:
        name, _, shape_s = row.partition(" ")
        shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split("x"))
        manifest.append((name, shape))

    from .tokenizer import FIRST_CORPUS_ID

    vocab = Vocab(tokens[FIRST_CORPUS_ID:])
    config = ModelConfig(
        vocab_size=int(config_map["vocab_size"]),
        d_model=int(config_map["d_model"]),
        n_heads=int(config_map["n_heads"]),
        encoder_layers=int(config_map["encoder_layers"]),
        decoder_layers=int(config_map["decoder_layers"]),
        ffn_dim=int(config_map["ffn_dim"]),
        dropout=float(config_map["dropout"]),
        max_source=int(config_map["max_source"]),
        max_target=int(config_map["max_target"]),
        variant=AttnVariant(config_map["variant"]),
        encoder_self_struct=bool(int(config_map["encoder_self_struct"])),
        decoder_self_struct=bool(int(config_map["decoder_self_struct"])),
        decoder_cross_struct=bool(int(config_map["decoder_cross_struct"])),
        per_head_bias=bool(int(config_map["per_head_bias"])),
    )
    model = Model(config, vocab, seed=0, dtype=dtype)
    model.step = int(config_map["step"])
    expected = set(model.params)
    loaded = {name for name, _ in manifest}
    if expected != loaded:
        raise ValueError(f"{path}: tensor set mismatch (missing {expected - loaded}, extra {loaded - expected})")
    offset = 0
    for name, shape in manifest:
        size = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(payload, dtype="<f4", count=size, offset=offset).reshape(shape)
        offset += size * 4
        model.params[name].data = raw.astype(model.dtype)
        model.params[name].grad = None
    return model
