"""Image-to-text stage: dual encoders trained with a symmetric contrastive loss.

The image side cuts the Braille image into patches, projects them, adds
position embeddings and runs self-attention blocks before global average
pooling. The text side embeds tokens with positions, runs attention blocks and
mean-pools over non-padding tokens. Both heads are L2-normalised, so the
matching score is a scaled dot product.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from braillespeech.braille_codec.render import estimate_levels, pad_to
from braillespeech.braille_codec.tokenizer import CONTEXT_LENGTH, Vocabulary, tokenize_batch
from braillespeech.errors import DivergedLoss, EmptyDataset, NonSquare, ShapeMismatch, UnknownToken
from braillespeech.tensor_core import tensor as T
from braillespeech.tensor_core.layers import LayerNorm, Linear, ParamStore, TransformerBlock, attention_bias
from braillespeech.tensor_core.optim import OptimState, optimizer_step, scheduled_lr, uniform_init

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderParams:
    image_width: int = 128
    image_height: int = 80
    patch: int = 8
    image_dim: int = 64
    image_heads: int = 4
    image_blocks: int = 2
    vocab_size: int = 0
    text_dim: int = 64
    text_heads: int = 4
    text_blocks: int = 2
    context_length: int = CONTEXT_LENGTH
    out_dim: int = 64
    init_temperature: float = 0.07
    # image position table init scale; comparable to a patch projection so
    # position survives the per-token normalisation before pooling
    image_pos_std: float = 0.3
    text_pos_std: float = 0.02

    def validate(self):
        if self.image_dim % self.image_heads or self.text_dim % self.text_heads:
            raise ShapeMismatch("embed dims must be divisible by head counts")
        if self.image_width % self.patch or self.image_height % self.patch:
            raise ShapeMismatch("image canvas must be a multiple of the patch size")

    @property
    def n_patches(self):
        return (self.image_width // self.patch) * (self.image_height // self.patch)


def image_to_array(image, params):
    """Ink coverage in [0, 1] on the model canvas, independent of gray levels."""
    if (image.width, image.height) != (params.image_width, params.image_height):
        image = pad_to(image, params.image_width, params.image_height)
    bg, fg = estimate_levels(image)
    pix = image.pixels.astype(np.float32)
    if fg == bg:
        return np.zeros_like(pix)
    return np.clip((pix - bg) / float(fg - bg), 0.0, 1.0)


def patchify(arrays, patch):
    b, h, w = arrays.shape
    if h % patch or w % patch:
        raise ShapeMismatch(f"image {h}x{w} not divisible by patch {patch}")
    x = arrays.reshape(b, h // patch, patch, w // patch, patch)
    return np.ascontiguousarray(x.transpose(0, 1, 3, 2, 4)).reshape(b, -1, patch * patch)


class DualEncoder:
    def __init__(self, params, seed=0):
        if params.vocab_size <= 0:
            params = EncoderParams(**{**asdict(params), "vocab_size": len(Vocabulary())})
        params.validate()
        self.params = params
        rng = np.random.default_rng(seed)
        s = self.store = ParamStore()
        p = params
        self.patch_proj = Linear(s, "i2t.image.patch", p.patch * p.patch, p.image_dim, rng)
        self.image_pos = s.add("i2t.image.pos", T.Tensor(rng.normal(0, p.image_pos_std, (p.n_patches, p.image_dim)), requires_grad=True))
        self.image_blocks = [TransformerBlock(s, f"i2t.image.block{i}", p.image_dim, p.image_heads, rng)
                             for i in range(p.image_blocks)]
        self.image_ln = LayerNorm(s, "i2t.image.ln", p.image_dim)
        self.image_head = Linear(s, "i2t.image.head", p.image_dim, p.out_dim, rng)

        self.token_emb = s.add("i2t.text.token", uniform_init(rng, (p.vocab_size, p.text_dim), p.text_dim))
        self.text_pos = s.add("i2t.text.pos", T.Tensor(rng.normal(0, p.text_pos_std, (p.context_length, p.text_dim)), requires_grad=True))
        self.text_blocks = [TransformerBlock(s, f"i2t.text.block{i}", p.text_dim, p.text_heads, rng)
                            for i in range(p.text_blocks)]
        self.text_ln = LayerNorm(s, "i2t.text.ln", p.text_dim)
        self.text_head = Linear(s, "i2t.text.head", p.text_dim, p.out_dim, rng)
        self.log_scale = s.add("i2t.log_scale", T.Tensor(np.full((1,), np.log(1.0 / p.init_temperature)), requires_grad=True))

    def parameters(self):
        return list(self.store.values())

    @property
    def temperature(self):
        return float(np.exp(-self.log_scale.data[0]))

    def encode_image(self, arrays):
        """``arrays``: ``[B, H, W]`` ink maps -> ``[B, out_dim]`` unit embeddings."""
        arrays = np.asarray(arrays)
        if arrays.ndim == 2:
            arrays = arrays[None]
        p = self.params
        if arrays.shape[1:] != (p.image_height, p.image_width):
            raise ShapeMismatch(f"image arrays {arrays.shape[1:]} vs canvas {(p.image_height, p.image_width)}")
        b = arrays.shape[0]
        patches = T.Tensor(patchify(arrays, p.patch), dtype=self.image_pos.data.dtype)
        x = self.patch_proj(patches)
        x = T.add(x, T.reshape(T.concat([T.reshape(self.image_pos, (1, p.n_patches, p.image_dim))] * b, axis=0),
                               (b, p.n_patches, p.image_dim)))
        for blk in self.image_blocks:
            x = blk(x)
        x = T.mean_pool(self.image_ln(x))
        return T.l2_normalize(self.image_head(x))

    def encode_text(self, tokens):
        """``tokens``: ``[B, context_length]`` ids -> ``[B, out_dim]`` unit embeddings."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        p = self.params
        if tokens.shape[1] != p.context_length:
            raise ShapeMismatch(f"token length {tokens.shape[1]} != context length {p.context_length}")
        if tokens.min() < 0 or tokens.max() >= p.vocab_size:
            raise UnknownToken(f"token id outside vocabulary of {p.vocab_size}")
        b = tokens.shape[0]
        mask = tokens != 0
        x = T.embedding_lookup(self.token_emb, tokens)
        pos = T.reshape(T.concat([T.reshape(self.text_pos, (1, p.context_length, p.text_dim))] * b, axis=0),
                        (b, p.context_length, p.text_dim))
        x = T.add(x, pos)
        bias = attention_bias(mask, p.text_heads)
        for blk in self.text_blocks:
            x = blk(x, bias)
        x = T.mean_pool(self.text_ln(x), mask)
        return T.l2_normalize(self.text_head(x))

    def logits(self, img_emb, txt_emb):
        return similarity(img_emb, txt_emb, self.log_scale)


def similarity(img_embs, txt_embs, temperature=1.0):
    """``p[i, j] = a_i . b_j / temperature``.

    ``temperature`` may be a float or the model's learnable log inverse
    temperature tensor (then the scale is ``exp(log_scale)``).
    """
    a = img_embs if isinstance(img_embs, T.Tensor) else T.Tensor(img_embs)
    b = txt_embs if isinstance(txt_embs, T.Tensor) else T.Tensor(txt_embs, dtype=a.data.dtype)
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
        raise ShapeMismatch(f"similarity needs equal [B, D] inputs, got {a.shape} and {b.shape}")
    p = T.matmul(a, T.transpose(b, (1, 0)))
    if isinstance(temperature, T.Tensor):
        return T.scale(p, T.exp(temperature))
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return T.scale(p, 1.0 / temperature)


@dataclass
class ContrastiveLoss:
    loss_i: T.Tensor
    loss_t: T.Tensor
    loss_it: T.Tensor


def contrastive_loss(p):
    """Row-wise and column-wise cross-entropy against the diagonal, and their mean."""
    p = p if isinstance(p, T.Tensor) else T.Tensor(p)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise NonSquare(f"similarity matrix must be square, got {p.shape}")
    labels = np.arange(p.shape[0])
    loss_i = T.cross_entropy(p, labels)
    loss_t = T.cross_entropy(T.transpose(p, (1, 0)), labels)
    loss_it = T.scale(T.add(loss_i, loss_t), 0.5)
    return ContrastiveLoss(loss_i, loss_t, loss_it)


@dataclass(frozen=True)
class I2TConfig:
    epochs: int = 25
    batch_size: int = 64
    lr: float = 2e-3
    seed: int = 0
    clip_norm: float = 1.0
    warmup_steps: int = 50
    schedule: str = "cosine"
    beta2: float = 0.999
    # when > 1, batches from epoch 2 on are built from groups of this many
    # mutually similar texts (by current text embeddings); off by default
    hard_group: int = 0


@dataclass
class EpochStats:
    epoch: int
    loss_i: float
    loss_t: float
    loss_it: float
    acc: float


def unique_batches(units, batch_size, rng):
    """Shuffled batches in which no text occurs twice, so diagonal labels are unambiguous."""
    return fill_batches(list(rng.permutation(len(units))), units, batch_size)


def fill_batches(order, units, batch_size):
    """Cut ``order`` into batches, deferring an item whose text is already in the batch."""
    order = list(order)
    batches = []
    while order:
        batch, seen, rest = [], set(), []
        for i in order:
            if len(batch) < batch_size and units[i] not in seen:
                batch.append(i)
                seen.add(units[i])
            else:
                rest.append(i)
        batches.append(batch)
        order = rest
    return batches


def hard_negative_order(units, text_embeddings, group, rng):
    """Item order in which each run of ``group`` items holds a seed text and its
    most similar other texts. ``text_embeddings`` maps each distinct text to a
    unit vector."""
    distinct = list(text_embeddings)
    pos = {u: i for i, u in enumerate(distinct)}
    emb = np.stack([text_embeddings[u] for u in distinct])
    sim = emb @ emb.T
    pending = {}
    for i in rng.permutation(len(units)):
        pending.setdefault(pos[units[i]], []).append(int(i))
    order = []
    for i in rng.permutation(len(units)):
        seed = pos[units[i]]
        if int(i) not in pending.get(seed, ()):
            continue
        live = np.array([t for t in pending if pending[t] and t != seed], dtype=np.int64)
        near = live[np.argsort(-sim[seed, live], kind="stable")[:group - 1]] if live.size else []
        for t in [seed, *near]:
            order.append(pending[t].pop())
            if not pending[t]:
                del pending[t]
    return order


def prepare_pairs(manifest, records, params):
    arrays = np.stack([image_to_array(manifest.load_image(r), params) for r in records])
    units = [r.text for r in records]
    return arrays, units


def i2t_step(model, arrays, tokens):
    a = model.encode_image(arrays)
    b = model.encode_text(tokens)
    p = model.logits(a, b)
    return p, contrastive_loss(p)


def train_i2t(model, arrays, units, config=I2TConfig(), vocab=None, curve_path=None, on_epoch=None):
    """Adam over seeded shuffled batches; returns per-epoch statistics."""
    from braillespeech.evalkit.metrics import acc as batch_acc

    if len(units) == 0:
        raise EmptyDataset("no image-text pairs to train on")
    vocab = vocab or Vocabulary()
    tokens = tokenize_batch(units, vocab, model.params.context_length)
    rng = np.random.default_rng(config.seed)
    opt = OptimState(model.parameters(), lr=config.lr, beta2=config.beta2)
    history = []
    # batch counts do not depend on the grouping, so the schedule length is known up front
    total = config.epochs * sum(len(b) >= 2 for b in unique_batches(units, config.batch_size, np.random.default_rng(0)))
    distinct = list(dict.fromkeys(units))
    step = 0
    for epoch in range(1, config.epochs + 1):
        if config.hard_group > 1 and epoch > 1:
            emb = dict(zip(distinct, embed_texts(model, distinct, vocab)))
            batches = fill_batches(hard_negative_order(units, emb, config.hard_group, rng), units, config.batch_size)
        else:
            batches = unique_batches(units, config.batch_size, rng)
        sums = np.zeros(4)
        n = 0
        for batch in batches:
            if len(batch) < 2:
                continue
            opt.lr = scheduled_lr(config.lr, step, total, config.warmup_steps, config.schedule)
            step += 1
            opt.zero_grad()
            p, loss = i2t_step(model, arrays[batch], tokens[batch])
            value = float(loss.loss_it.data)
            if not np.isfinite(value):
                raise DivergedLoss(f"I2T loss became {value} at epoch {epoch}")
            T.backward(loss.loss_it, opt.params)
            optimizer_step(opt, clip_norm=config.clip_norm)
            # keep the logit scale in a sane range as CLIP does
            np.clip(model.log_scale.data, 0.0, np.log(100.0), out=model.log_scale.data)
            w = len(batch)
            sums += w * np.array([float(loss.loss_i.data), float(loss.loss_t.data), value, batch_acc(p.data)])
            n += w
        stats = EpochStats(epoch, *(sums / max(n, 1)))
        history.append(stats)
        log.info("i2t epoch %d loss_it=%.4f acc=%.3f", epoch, stats.loss_it, stats.acc)
        if on_epoch is not None:
            on_epoch(stats)
    if curve_path is not None:
        write_curve(curve_path, history)
    return history


def write_curve(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss_i", "loss_t", "loss_it", "acc"])
        for h in history:
            w.writerow([h.epoch] + [f"{v:.6g}" for v in (h.loss_i, h.loss_t, h.loss_it, h.acc)])


def embed_images(model, arrays, batch_size=64):
    out = [model.encode_image(arrays[i:i + batch_size]).data for i in range(0, len(arrays), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.params.out_dim), np.float32)


def embed_texts(model, units, vocab=None, batch_size=128):
    tokens = tokenize_batch(units, vocab or Vocabulary(), model.params.context_length)
    out = [model.encode_text(tokens[i:i + batch_size]).data for i in range(0, len(tokens), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.params.out_dim), np.float32)
