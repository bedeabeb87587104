"""Stage-2 decoder-only transformer over the [query][input][re-creation][answer] stream.

Token layout is fixed: Lt text positions, G*G input-image codes, G*G
re-creation codes, La answer positions. Image codes live in a joint
vocabulary above the text ids. Image positions get axial (row + column)
positional embeddings plus a per-segment offset; text positions use a
learned 1-D table. Attention is causal everywhere, with image-to-image
attention inside a segment restricted per layer to a row, column, or
convolutional neighborhood pattern; text positions are attendable from
everywhere later, and text queries see the whole prefix.

For rejected pairs there is no ground-truth re-creation: the slot is
filled with the input-image codes (or a dedicated null code) and its
positions carry zero loss weight, so nothing back-propagates from them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .nn import Embedding, LayerNorm, Linear
from .optim import Adam
from .rules import ANSWER_CAN, QueryRecord
from .tensor import Tensor
from .textcodec import SEPA, Vocabulary

SEG_T, SEG_V, SEG_M, SEG_A = 0, 1, 2, 3
MASK_PATTERN = ("row", "column", "row", "conv")
CONV_MASK_K = 3


class SequenceError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TransformerConfig:
    n_layers: int = 4
    n_heads: int = 4
    head_dim: int = 32
    model_dim: int = 128
    text_len: int = 64  # the template language is full size even at desk scale
    answer_len: int = 40
    grid: int = 8
    text_vocab: int = 0
    image_vocab: int = 512
    rejected_fill: str = "input"  # input | null
    rejected_m_augment: bool = True  # re-randomize the ungraded M slot per batch
    dense_causal: bool = False
    lr: float = 3e-4
    steps: int = 3000
    batch_size: int = 8
    seed: int = 0
    temperature: float = 1.0
    top_k: int = 0
    target_accuracy: float = 0.0  # early stop when weighted accuracy exceeds this

    @property
    def image_len(self) -> int:
        return self.grid * self.grid

    @property
    def seq_len(self) -> int:
        return self.text_len + 2 * self.image_len + self.answer_len

    @property
    def null_token(self) -> int | None:
        if self.rejected_fill == "null":
            return self.text_vocab + self.image_vocab
        return None

    @property
    def joint_vocab(self) -> int:
        extra = 1 if self.rejected_fill == "null" else 0
        return self.text_vocab + self.image_vocab + extra

    @classmethod
    def from_dict(cls, values: dict) -> "TransformerConfig":
        kwargs = {k: values[k] for k in cls.__dataclass_fields__ if k in values}
        return cls(**kwargs)

    def segment_ids(self) -> np.ndarray:
        out = np.empty(self.seq_len, dtype=np.int64)
        lt, li = self.text_len, self.image_len
        out[:lt] = SEG_T
        out[lt : lt + li] = SEG_V
        out[lt + li : lt + 2 * li] = SEG_M
        out[lt + 2 * li :] = SEG_A
        return out


@dataclass
class TokenSequence:
    ids: np.ndarray  # (L,) int64 in the joint vocabulary
    segments: np.ndarray  # (L,) int64 segment labels
    loss_weights: np.ndarray  # (L,) float32, weight of predicting position p
    answer_type: str
    query_id: str = ""


def build_sequence(
    query: QueryRecord,
    v_latents: np.ndarray,
    m_latents: np.ndarray | None,
    answer_text: str,
    vocab: Vocabulary,
    config: TransformerConfig,
) -> TokenSequence:
    """Assemble one training sequence from a query and its latents."""
    if config.text_vocab != len(vocab):
        raise SequenceError(
            f"config.text_vocab={config.text_vocab} but vocabulary has {len(vocab)}"
        )
    t_ids = np.array(vocab.encode(query.question_text, config.text_len), dtype=np.int64)
    a_ids = np.array(
        vocab.encode(answer_text, config.answer_len, start=SEPA), dtype=np.int64
    )
    v_flat = np.asarray(v_latents, dtype=np.int64).reshape(-1)
    if v_flat.shape != (config.image_len,):
        raise SequenceError(
            f"input latents have {v_flat.size} cells, expected {config.image_len}"
        )
    offset = config.text_vocab
    if query.answer_type == ANSWER_CAN:
        if m_latents is None:
            raise SequenceError(
                f"{query.query_id}: executable pair lacks a ground-truth re-creation"
            )
        m_flat = np.asarray(m_latents, dtype=np.int64).reshape(-1)
    elif config.rejected_fill == "null":
        m_flat = np.full(config.image_len, config.null_token - offset, dtype=np.int64)
    else:
        m_flat = v_flat.copy()
    ids = np.concatenate([t_ids, v_flat + offset, m_flat + offset, a_ids])
    weights = np.ones(config.seq_len, dtype=np.float32)
    weights[0] = 0.0  # position 0 is never a prediction target
    segments = config.segment_ids()
    if query.answer_type != ANSWER_CAN:
        weights[segments == SEG_M] = 0.0
    return TokenSequence(ids, segments, weights, query.answer_type, query.query_id)


# -- attention masks -------------------------------------------------------------


def _image_pattern(kind: str, grid: int) -> np.ndarray:
    """(G*G, G*G) allowance for image-to-image attention within one segment."""
    n = grid * grid
    pos = np.arange(n)
    r, c = pos // grid, pos % grid
    ri, rj = r[:, None], r[None, :]
    ci, cj = c[:, None], c[None, :]
    raster_causal = (rj < ri) | ((rj == ri) & (cj <= ci))
    if kind == "row":
        return (rj == ri) & (cj <= ci)
    if kind == "column":
        return (cj == ci) & (rj <= ri)
    if kind == "conv":
        reach = CONV_MASK_K // 2
        window = (np.abs(rj - ri) <= reach) & (np.abs(cj - ci) <= reach)
        return window & raster_causal
    raise ValueError(f"unknown image mask kind {kind!r}")


def build_masks(config: TransformerConfig) -> np.ndarray:
    """(n_layers, L, L) boolean masks; True means position i may attend to j."""
    L = config.seq_len
    seg = config.segment_ids()
    idx = np.arange(L)
    causal = idx[None, :] <= idx[:, None]
    text = (seg == SEG_T) | (seg == SEG_A)
    base = causal & (text[None, :] | text[:, None])
    same = seg[:, None] == seg[None, :]
    image_pair = ~text[:, None] & ~text[None, :]
    cross_image = causal & image_pair & ~same  # M attending back into V
    masks = np.empty((config.n_layers, L, L), dtype=bool)
    for layer in range(config.n_layers):
        if config.dense_causal:
            masks[layer] = causal
            continue
        kind = MASK_PATTERN[layer % len(MASK_PATTERN)]
        pattern = _image_pattern(kind, config.grid)
        m = base | cross_image
        for start in (config.text_len, config.text_len + config.image_len):
            end = start + config.image_len
            m[start:end, start:end] |= pattern
        masks[layer] = m & causal
    return masks


# -- model -------------------------------------------------------------------------


class SeqTransformer:
    def __init__(self, config: TransformerConfig, rng: np.random.Generator | None = None):
        if config.text_vocab <= 0:
            raise ValueError("config.text_vocab must be set from the vocabulary")
        rng = rng or np.random.default_rng(config.seed)
        self.config = config
        d = config.model_dim
        inner = config.n_heads * config.head_dim
        self.tok = Embedding(rng, config.joint_vocab, d)
        self.text_pos = Embedding(rng, config.text_len + config.answer_len, d)
        self.row_pos = Embedding(rng, config.grid, d)
        self.col_pos = Embedding(rng, config.grid, d)
        self.seg_pos = Embedding(rng, 4, d)
        self.blocks = []
        for _ in range(config.n_layers):
            self.blocks.append(
                {
                    "ln1": LayerNorm(d),
                    "wq": Linear(rng, d, inner, std=0.02),
                    "wk": Linear(rng, d, inner, std=0.02),
                    "wv": Linear(rng, d, inner, std=0.02),
                    "wo": Linear(rng, inner, d, std=0.02),
                    "ln2": LayerNorm(d),
                    "fc1": Linear(rng, d, 4 * d, std=0.02),
                    "fc2": Linear(rng, 4 * d, d, std=0.02),
                }
            )
        self.ln_f = LayerNorm(d)
        self.head = Linear(rng, d, config.joint_vocab, std=0.02)
        self.masks = build_masks(config)
        self._mask_bias = np.where(self.masks, 0.0, -1e9).astype(np.float32)
        self._pos_index = self._position_indices()

    def _position_indices(self):
        cfg = self.config
        li = cfg.image_len
        grid_r = np.arange(li) // cfg.grid
        grid_c = np.arange(li) % cfg.grid
        return {
            "text": np.concatenate(
                [np.arange(cfg.text_len), np.arange(cfg.answer_len) + cfg.text_len]
            ),
            "row": np.concatenate([grid_r, grid_r]),
            "col": np.concatenate([grid_c, grid_c]),
            "seg": cfg.segment_ids(),
        }

    def positional(self) -> Tensor:
        cfg = self.config
        text_emb = self.text_pos(self._pos_index["text"])  # (Lt+La, d)
        axial = self.row_pos(self._pos_index["row"]) + self.col_pos(self._pos_index["col"])
        pieces = [
            text_emb[: cfg.text_len],
            axial,
            text_emb[cfg.text_len :],
        ]
        pos = T.concat(pieces, axis=0)
        return pos + self.seg_pos(self._pos_index["seg"])

    def forward(self, ids: np.ndarray) -> Tensor:
        """(B, L) int ids -> (B, L, joint_vocab) logits."""
        cfg = self.config
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] != cfg.seq_len:
            raise SequenceError(f"forward: ids shape {ids.shape}, want (B, {cfg.seq_len})")
        b, L = ids.shape
        h = self.tok(ids) + self.positional()
        scale = 1.0 / np.sqrt(cfg.head_dim)
        for layer, blk in enumerate(self.blocks):
            x = blk["ln1"](h)
            q = _heads(blk["wq"](x), cfg)  # (B, H, L, hd)
            k = _heads(blk["wk"](x), cfg)
            v = _heads(blk["wv"](x), cfg)
            scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * scale
            scores = scores + Tensor(self._mask_bias[layer])
            att = T.matmul(T.softmax(scores, axis=-1), v)  # (B, H, L, hd)
            merged = att.transpose(0, 2, 1, 3).reshape(b, L, cfg.n_heads * cfg.head_dim)
            h = h + blk["wo"](merged)
            y = blk["ln2"](h)
            h = h + blk["fc2"](T.relu(blk["fc1"](y)))
        return self.head(self.ln_f(h))

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.tok.params("tok"))
        out.update(self.text_pos.params("text_pos"))
        out.update(self.row_pos.params("row_pos"))
        out.update(self.col_pos.params("col_pos"))
        out.update(self.seg_pos.params("seg_pos"))
        for i, blk in enumerate(self.blocks):
            for name, part in blk.items():
                out.update(part.params(f"blk{i}.{name}"))
        out.update(self.ln_f.params("ln_f"))
        out.update(self.head.params("head"))
        return out


def _heads(x: Tensor, cfg: TransformerConfig) -> Tensor:
    b, L, _ = x.shape
    return x.reshape(b, L, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)


def sequence_loss(model: SeqTransformer, ids: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted next-token cross-entropy over a batch."""
    logits = model.forward(ids)
    b, L, v = logits.shape
    flat = logits[:, :-1, :].reshape(b * (L - 1), v)
    targets = ids[:, 1:].reshape(-1)
    w = weights[:, 1:].reshape(-1)
    return T.cross_entropy(flat, targets, w)


def weighted_accuracy(model: SeqTransformer, ids: np.ndarray, weights: np.ndarray) -> float:
    with T.no_grad():
        logits = model.forward(ids).data
    pred = logits[:, :-1, :].argmax(axis=-1)
    hit = pred == ids[:, 1:]
    w = weights[:, 1:]
    return float((hit * w).sum() / max(w.sum(), 1.0))


def train_stage2(
    sequences: list[TokenSequence],
    config: TransformerConfig,
    out_dir,
    log_cb=None,
) -> Path:
    """Train the sequence model; returns the checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "stage2.atvc"
    log_path = out_dir / "stage2.log.jsonl"
    rng = np.random.default_rng(config.seed)
    model = SeqTransformer(config, rng)
    opt = Adam(model.params(), lr=config.lr)

    ids = np.stack([s.ids for s in sequences])
    weights = np.stack([s.loss_weights for s in sequences])
    # The M slot of rejected pairs is ungraded, so its content is free. A fixed
    # placeholder lets answers key on that exact content, and any single fill
    # distribution hands the model a slot statistic that separates the classes
    # (pure noise reads as "rejected", an edited-looking grid as "executable").
    # Re-filling per presentation with a mixture -- raw input grids, gold
    # re-creation grids, uniform codes -- leaves the query as the only
    # reliable signal, so answers survive whatever the model free-runs into
    # the slot at generation time.
    segments = config.segment_ids()
    rejected_rows = np.flatnonzero(
        [(s.loss_weights[segments == SEG_M] == 0).all() for s in sequences]
    )
    m_span = segments == SEG_M
    can_rows = np.setdiff1d(np.arange(len(sequences)), rejected_rows)
    grid_pool = ids[:, segments == SEG_V]
    if can_rows.size:
        grid_pool = np.concatenate([grid_pool, ids[can_rows][:, m_span]])
    n = len(sequences)
    order = rng.permutation(n)
    cursor = 0

    with open(log_path, "w", encoding="utf-8") as log_f:

        def emit(rec):
            log_f.write(json.dumps(rec) + "\n")
            log_f.flush()
            if log_cb:
                log_cb(rec)

        for step in range(1, config.steps + 1):
            take = min(config.batch_size, n)
            if cursor + take > n:
                order = rng.permutation(n)
                cursor = 0
            batch_idx = order[cursor : cursor + take]
            cursor += take
            batch_ids = ids[batch_idx]
            if config.rejected_m_augment:
                rejected_in_batch = np.flatnonzero(np.isin(batch_idx, rejected_rows))
                if rejected_in_batch.size:
                    batch_ids = batch_ids.copy()
                    for row in rejected_in_batch:
                        if rng.random() < 0.67:
                            batch_ids[row, m_span] = grid_pool[
                                int(rng.integers(len(grid_pool)))
                            ]
                        else:
                            batch_ids[row, m_span] = rng.integers(
                                config.text_vocab,
                                config.text_vocab + config.image_vocab,
                                size=int(m_span.sum()),
                            )
            loss = sequence_loss(model, batch_ids, weights[batch_idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite stage-2 loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % 100 == 0 or step == config.steps:
                acc = weighted_accuracy(model, ids, weights)
                emit(
                    {
                        "step": step,
                        "loss": float(loss.data),
                        "lr": config.lr,
                        "perplexity": float(np.exp(min(float(loss.data), 30.0))),
                        "weighted_accuracy": acc,
                    }
                )
                if config.target_accuracy > 0 and acc >= config.target_accuracy:
                    break
    checkpoint.save(ckpt_path, model.params())
    (out_dir / "stage2.config.json").write_text(
        json.dumps(config.__dict__, indent=1) + "\n"
    )
    return ckpt_path


def load_stage2(out_dir) -> SeqTransformer:
    out_dir = Path(out_dir)
    cfg_path = out_dir / "stage2.config.json"
    if not cfg_path.exists():
        raise checkpoint.CheckpointError(
            f"missing stage-2 config {cfg_path}; run the stage-2 trainer first"
        )
    config = TransformerConfig(**json.loads(cfg_path.read_text()))
    model = SeqTransformer(config)
    checkpoint.restore(out_dir / "stage2.atvc", model.params())
    return model


# -- generation ---------------------------------------------------------------------


class _Cache:
    """Per-layer key/value cache for incremental decoding (numpy fast path)."""

    def __init__(self, model: SeqTransformer):
        cfg = model.config
        self.k = np.zeros(
            (cfg.n_layers, cfg.seq_len, cfg.n_heads, cfg.head_dim), dtype=np.float32
        )
        self.v = np.zeros_like(self.k)


def _np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _np_softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _step(model: SeqTransformer, cache: _Cache, h: np.ndarray, p: int) -> np.ndarray:
    """Advance one position; h is the embedded input at p; returns logits."""
    cfg = model.config
    scale = 1.0 / np.sqrt(cfg.head_dim)
    for layer, blk in enumerate(model.blocks):
        x = _np_layer_norm(h, blk["ln1"].g.data, blk["ln1"].b.data)
        q = (x @ blk["wq"].w.data + blk["wq"].b.data).reshape(cfg.n_heads, cfg.head_dim)
        k = (x @ blk["wk"].w.data + blk["wk"].b.data).reshape(cfg.n_heads, cfg.head_dim)
        v = (x @ blk["wv"].w.data + blk["wv"].b.data).reshape(cfg.n_heads, cfg.head_dim)
        cache.k[layer, p] = k
        cache.v[layer, p] = v
        keys = cache.k[layer, : p + 1]  # (p+1, H, hd)
        vals = cache.v[layer, : p + 1]
        scores = np.einsum("hd,phd->hp", q, keys) * scale
        scores = np.where(model.masks[layer, p, : p + 1], scores, -1e9)
        att = _np_softmax(scores, axis=-1)
        ctx = np.einsum("hp,phd->hd", att, vals).reshape(-1)
        h = h + ctx @ blk["wo"].w.data + blk["wo"].b.data
        y = _np_layer_norm(h, blk["ln2"].g.data, blk["ln2"].b.data)
        inner = np.maximum(y @ blk["fc1"].w.data + blk["fc1"].b.data, 0.0)
        h = h + inner @ blk["fc2"].w.data + blk["fc2"].b.data
    out = _np_layer_norm(h, model.ln_f.g.data, model.ln_f.b.data)
    return out @ model.head.w.data + model.head.b.data


def generate(
    model: SeqTransformer,
    t_ids: np.ndarray,
    v_latents: np.ndarray,
    *,
    mode: str = "greedy",
    temperature: float = 1.0,
    top_k: int = 0,
    rng: np.random.Generator | None = None,
):
    """Emit (m_latents (G, G), a_ids (La,)) given query tokens and input codes.

    Image positions may only emit image codes, answer positions only text
    tokens. Greedy decoding is deterministic; top-k sampling needs ``rng``.
    """
    cfg = model.config
    t_ids = np.asarray(t_ids, dtype=np.int64).reshape(-1)
    if t_ids.shape != (cfg.text_len,):
        raise SequenceError(f"generate: got {t_ids.shape[0]} text ids, want {cfg.text_len}")
    v_flat = np.asarray(v_latents, dtype=np.int64).reshape(-1) + cfg.text_vocab
    prefix = np.concatenate([t_ids, v_flat])
    pos_emb = _np_positional(model)
    cache = _Cache(model)
    logits = None
    for p, tok in enumerate(prefix):
        h = model.tok.table.data[tok] + pos_emb[p]
        logits = _step(model, cache, h, p)

    generated = []
    image_lo, image_hi = cfg.text_vocab, cfg.text_vocab + cfg.image_vocab
    for p in range(len(prefix), cfg.seq_len):
        seg = SEG_M if p < cfg.text_len + 2 * cfg.image_len else SEG_A
        allowed = (image_lo, image_hi) if seg == SEG_M else (0, cfg.text_vocab)
        masked = np.full_like(logits, -np.inf)
        masked[allowed[0] : allowed[1]] = logits[allowed[0] : allowed[1]]
        if mode == "greedy":
            tok = int(masked.argmax())
        elif mode == "topk":
            if rng is None:
                raise ValueError("top-k sampling needs an rng")
            z = masked / max(temperature, 1e-6)
            kth = max(1, top_k)
            top = np.argpartition(z, -kth)[-kth:]
            probs = _np_softmax(z[top])
            tok = int(top[rng.choice(len(top), p=probs)])
        else:
            raise ValueError(f"unknown decoding mode {mode!r}")
        generated.append(tok)
        if p < cfg.seq_len - 1:
            h = model.tok.table.data[tok] + pos_emb[p]
            logits = _step(model, cache, h, p)

    m_flat = np.array(generated[: cfg.image_len], dtype=np.int64) - cfg.text_vocab
    a_ids = np.array(generated[cfg.image_len :], dtype=np.int64)
    return m_flat.reshape(cfg.grid, cfg.grid), a_ids


def _np_positional(model: SeqTransformer) -> np.ndarray:
    cfg = model.config
    idx = model._pos_index
    text = model.text_pos.table.data[idx["text"]]
    axial = model.row_pos.table.data[idx["row"]] + model.col_pos.table.data[idx["col"]]
    pos = np.concatenate([text[: cfg.text_len], axial, text[cfg.text_len :]], axis=0)
    return pos + model.seg_pos.table.data[idx["seg"]]
