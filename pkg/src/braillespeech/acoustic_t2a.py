"""Text-to-audio stage: a small non-autoregressive acoustic model.

Phoneme encoder -> variance adaptor (duration, CWT pitch and energy
predictors plus a length regulator) -> frame decoder -> mel, refined by a
residual convolutional post-net. Pitch and energy condition the decoder
through 32-bin quantised embeddings.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from braillespeech.braille_codec.cells import TextUnit
from braillespeech.errors import (
    AllZeroDurations,
    DivergedLoss,
    EmptyDataset,
    MaskMismatch,
    ShapeMismatch,
    UnknownPhoneme,
)
from braillespeech.speech_dsp.core import DEFAULT as DSP_DEFAULT
from braillespeech.speech_dsp.oracle import phoneme_inventory, synth_oracle, text_phonemes
from braillespeech.speech_dsp.pitch import N_SCALES, cwt_pitch, inverse_cwt_normalized, scales
from braillespeech.tensor_core import tensor as T
from braillespeech.tensor_core.layers import (
    Conv1d,
    LayerNorm,
    Linear,
    ParamStore,
    TransformerBlock,
    attention_bias,
    sinusoid_table,
)
from braillespeech.tensor_core.optim import OptimState, optimizer_step, scheduled_lr, uniform_init

log = logging.getLogger(__name__)

PAD = "<pad>"
ENERGY_FLOOR = 1e-5
LOSS_NAMES = ("mel", "mel_post", "duration", "pitch", "energy")


class PhonemeVocab:
    def __init__(self, symbols=None):
        self.symbols = [PAD] + list(symbols or phoneme_inventory())
        self.ids = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols)

    def encode(self, phonemes):
        try:
            return np.array([self.ids[p] for p in phonemes], dtype=np.int64)
        except KeyError as exc:
            raise UnknownPhoneme(f"phoneme {exc.args[0]!r} not in vocabulary") from None


@dataclass(frozen=True)
class T2AParams:
    vocab_size: int = 0
    hidden: int = 64
    heads: int = 2
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    vp_filter: int = 64
    vp_kernel: int = 3
    postnet_layers: int = 3
    postnet_channels: int = 64
    postnet_kernel: int = 5
    n_bins: int = 32
    mel_channels: int = 80
    n_scales: int = N_SCALES
    max_len: int = 1024

    def validate(self):
        if self.hidden % self.heads:
            raise ShapeMismatch("hidden size must be divisible by the head count")
        if self.vp_kernel % 2 == 0 or self.postnet_kernel % 2 == 0:
            raise ShapeMismatch("convolution kernels must be odd")
        if self.postnet_layers < 1:
            raise ShapeMismatch("post-net needs at least one layer")


class VariancePredictor:
    """conv1d -> ReLU -> layer norm -> conv1d -> ReLU -> layer norm -> linear."""

    def __init__(self, store, name, hidden, filt, kernel, out_dim, rng):
        self.conv1 = Conv1d(store, f"{name}.conv1", hidden, filt, kernel, rng)
        self.ln1 = LayerNorm(store, f"{name}.ln1", filt)
        self.conv2 = Conv1d(store, f"{name}.conv2", filt, filt, kernel, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", filt)
        self.out = Linear(store, f"{name}.linear", filt, out_dim, rng)
        self.out_dim = out_dim

    def __call__(self, x):
        if x.ndim != 3 or x.shape[1] == 0:
            raise ShapeMismatch(f"variance predictor expects a nonempty [B, T, C] input, got {x.shape}")
        h = self.ln1(T.relu(self.conv1(x)))
        h = self.ln2(T.relu(self.conv2(h)))
        return self.out(h)


def variance_predictor(predictor, hidden):
    """Scalar (or ``out_dim``-vector) per position; ``[B, T]`` when the output is scalar."""
    y = predictor(hidden)
    if predictor.out_dim == 1:
        return T.reshape(y, y.shape[:2])
    return y


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def durations_from_log(d_log, src_mask):
    """Predicted log-durations -> integer frames; valid phonemes get at least one frame."""
    d = round_half_up(np.exp(np.asarray(d_log, dtype=np.float64)))
    return np.where(np.asarray(src_mask, dtype=bool), np.maximum(d, 1), 0)


def regulate_indices(durations):
    """Gather indices ``[B, F]`` and frame mask ``[B, F]`` for the length regulator."""
    durations = np.atleast_2d(np.asarray(durations, dtype=np.int64))
    if (durations < 0).any():
        raise ValueError("durations must be nonnegative")
    totals = durations.sum(axis=1)
    if (totals == 0).any():
        raise AllZeroDurations("an utterance has zero total duration")
    f = int(totals.max())
    idx = np.zeros((durations.shape[0], f), dtype=np.int64)
    mask = np.zeros((durations.shape[0], f), dtype=bool)
    for b, row in enumerate(durations):
        rep = np.repeat(np.arange(row.size), row)
        idx[b, :rep.size] = rep
        mask[b, :rep.size] = True
    return idx, mask


def length_regulate(hidden, durations):
    """Repeat each phoneme state ``durations[i]`` times -> ``(frames [B, F, C], frame mask)``."""
    idx, mask = regulate_indices(durations)
    out = T.gather(hidden, idx, axis=1)
    return T.mul(out, _mask_like(mask, out.shape, out.data.dtype)), mask


def _mask_like(mask, shape, dtype):
    m = np.asarray(mask, dtype=dtype)
    return T.Tensor(np.ascontiguousarray(np.broadcast_to(m[..., None], shape)), dtype=dtype)


def bucketize(values, lo, hi, n_bins):
    edges = np.linspace(lo, hi, n_bins + 1)[1:-1]
    return np.digitize(np.asarray(values, dtype=np.float64), edges).astype(np.int64)


@dataclass
class Stats:
    """Training-range statistics used for the quantised conditioning embeddings."""

    pitch_lo: float = -3.0
    pitch_hi: float = 3.0
    energy_lo: float = -6.0
    energy_hi: float = 3.0

    def as_array(self):
        return np.array([self.pitch_lo, self.pitch_hi, self.energy_lo, self.energy_hi], dtype=np.float32)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in np.asarray(a).reshape(-1)[:4]))


class AcousticModel:
    def __init__(self, params=T2AParams(), seed=0, stats=None, vocab=None):
        self.vocab = vocab or PhonemeVocab()
        if params.vocab_size <= 0:
            params = T2AParams(**{**params.__dict__, "vocab_size": len(self.vocab)})
        params.validate()
        self.params = p = params
        rng = np.random.default_rng(seed)
        s = self.store = ParamStore()
        self.phoneme_emb = s.add("t2a.phoneme", uniform_init(rng, (p.vocab_size, p.hidden), p.hidden))
        self.encoder = [TransformerBlock(s, f"t2a.encoder.block{i}", p.hidden, p.heads, rng) for i in range(p.encoder_blocks)]
        self.duration = VariancePredictor(s, "t2a.duration", p.hidden, p.vp_filter, p.vp_kernel, 1, rng)
        self.pitch = VariancePredictor(s, "t2a.pitch", p.hidden, p.vp_filter, p.vp_kernel, p.n_scales, rng)
        self.energy = VariancePredictor(s, "t2a.energy", p.hidden, p.vp_filter, p.vp_kernel, 1, rng)
        self.pitch_emb = s.add("t2a.pitch_emb", uniform_init(rng, (p.n_bins, p.hidden), p.hidden))
        self.energy_emb = s.add("t2a.energy_emb", uniform_init(rng, (p.n_bins, p.hidden), p.hidden))
        self.decoder = [TransformerBlock(s, f"t2a.decoder.block{i}", p.hidden, p.heads, rng) for i in range(p.decoder_blocks)]
        self.mel_out = Linear(s, "t2a.mel_linear", p.hidden, p.mel_channels, rng)
        chans = [p.mel_channels] + [p.postnet_channels] * (p.postnet_layers - 1) + [p.mel_channels]
        self.postnet = [Conv1d(s, f"t2a.postnet.conv{i}", chans[i], chans[i + 1], p.postnet_kernel, rng)
                        for i in range(p.postnet_layers)]
        self.stats_tensor = s.add("t2a.stats", T.Tensor((stats or Stats()).as_array()))
        self.pos_table = sinusoid_table(p.max_len, p.hidden).astype(np.float32)

    @property
    def stats(self):
        return Stats.from_array(self.stats_tensor.data)

    def set_stats(self, stats):
        self.stats_tensor.data[...] = stats.as_array()

    def parameters(self):
        return [t for t in self.store.values() if t.requires_grad]

    def _positions(self, b, t, dtype):
        if t > self.params.max_len:
            raise ShapeMismatch(f"sequence of {t} exceeds max_len {self.params.max_len}")
        return T.Tensor(np.broadcast_to(self.pos_table[:t], (b, t, self.params.hidden)).copy(), dtype=dtype)


@dataclass
class VariancePack:
    d_pre: T.Tensor  # [B, N] log durations
    p_pre: T.Tensor  # [B, F, scales]
    e_pre: T.Tensor  # [B, F]
    d_target: np.ndarray | None
    p_target: np.ndarray | None
    e_target: np.ndarray | None
    src_mask: np.ndarray
    mel_mask: np.ndarray
    durations: np.ndarray = field(default=None)


@dataclass
class MelOut:
    mel: T.Tensor
    mel_post: T.Tensor
    mel_target: np.ndarray | None
    mel_mask: np.ndarray


@dataclass
class Batch:
    ids: np.ndarray  # [B, N]
    src_mask: np.ndarray
    durations: np.ndarray | None = None  # [B, N] frames
    mel: np.ndarray | None = None  # [B, F, C]
    pitch: np.ndarray | None = None  # [B, F, scales] CWT coefficients
    pitch_z: np.ndarray | None = None  # [B, F] normalised contour rebuilt from the coefficients
    energy: np.ndarray | None = None  # [B, F] log energy
    mel_mask: np.ndarray | None = None

    @property
    def size(self):
        return self.ids.shape[0]


@dataclass
class OracleItem:
    text: str
    ids: np.ndarray
    durations: np.ndarray
    mel: np.ndarray
    pitch: np.ndarray
    pitch_z: np.ndarray
    energy: np.ndarray


def log_energy(energy):
    return np.log(np.maximum(np.asarray(energy, dtype=np.float64), ENERGY_FLOOR))


def make_item(utt, vocab, text=""):
    spec = cwt_pitch(utt.f0)
    coeffs = spec.coeffs.T
    return OracleItem(
        text=text,
        ids=vocab.encode(utt.phonemes),
        durations=np.asarray(utt.durations, dtype=np.int64),
        mel=np.asarray(utt.mel, dtype=np.float32),
        pitch=coeffs.astype(np.float32),
        pitch_z=inverse_cwt_normalized(spec.coeffs, spec.scales).astype(np.float32),
        energy=log_energy(utt.energy).astype(np.float32),
    )


def oracle_dataset(texts, seed=0, vocab=None, cfg=DSP_DEFAULT):
    """One oracle utterance per text (a list of ``TextUnit``), noise seeded per item."""
    vocab = vocab or PhonemeVocab()
    items = []
    for i, units in enumerate(texts):
        if isinstance(units, TextUnit):
            units = [units]
        utt = synth_oracle(units, seed=seed * 100003 + i, cfg=cfg)
        items.append(make_item(utt, vocab, " ".join(str(u) for u in units)))
    return items


def fit_stats(items):
    if not items:
        raise EmptyDataset("no utterances")
    z = np.concatenate([it.pitch_z for it in items])
    e = np.concatenate([it.energy for it in items])
    return Stats(float(z.min()), float(z.max()), float(e.min()), float(e.max()))


def collate(items):
    b = len(items)
    n = max(len(it.ids) for it in items)
    f = max(int(it.durations.sum()) for it in items)
    c, s = items[0].mel.shape[1], items[0].pitch.shape[1]
    batch = Batch(
        ids=np.zeros((b, n), np.int64),
        src_mask=np.zeros((b, n), bool),
        durations=np.zeros((b, n), np.int64),
        mel=np.zeros((b, f, c), np.float32),
        pitch=np.zeros((b, f, s), np.float32),
        pitch_z=np.zeros((b, f), np.float32),
        energy=np.zeros((b, f), np.float32),
        mel_mask=np.zeros((b, f), bool),
    )
    for i, it in enumerate(items):
        k, t = len(it.ids), int(it.durations.sum())
        if it.mel.shape[0] != t:
            raise MaskMismatch(f"item {it.text!r}: {it.mel.shape[0]} mel frames but durations sum to {t}")
        batch.ids[i, :k] = it.ids
        batch.src_mask[i, :k] = True
        batch.durations[i, :k] = it.durations
        batch.mel[i, :t] = it.mel
        batch.pitch[i, :t] = it.pitch
        batch.pitch_z[i, :t] = it.pitch_z
        batch.energy[i, :t] = it.energy
        batch.mel_mask[i, :t] = True
    return batch


def _contours_from_coeffs(coeffs, mel_mask, n_scales):
    sc = scales(n_scales)
    z = np.zeros(mel_mask.shape, dtype=np.float64)
    for b in range(mel_mask.shape[0]):
        t = int(mel_mask[b].sum())
        if t:
            z[b, :t] = inverse_cwt_normalized(np.asarray(coeffs[b, :t]).T, sc)
    return z


def t2a_forward(model, batch, teacher=True, duration_scale=1.0):
    """Returns ``(MelOut, VariancePack)``.

    Teacher mode regulates with the target durations and conditions on the
    target pitch and energy; inference mode uses the model's own predictions.
    """
    p = model.params
    ids = np.asarray(batch.ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= p.vocab_size:
        raise UnknownPhoneme("phoneme id outside the vocabulary")
    src_mask = np.asarray(batch.src_mask, dtype=bool)
    b, n = ids.shape
    dtype = model.phoneme_emb.data.dtype

    x = T.add(T.embedding_lookup(model.phoneme_emb, ids), model._positions(b, n, dtype))
    x = T.mul(x, _mask_like(src_mask, x.shape, dtype))
    bias = attention_bias(src_mask, p.heads)
    for blk in model.encoder:
        x = blk(x, bias)
    d_pre = variance_predictor(model.duration, x)

    if teacher:
        if batch.durations is None:
            raise MaskMismatch("teacher mode needs target durations")
        durations = np.where(src_mask, batch.durations, 0)
    else:
        durations = durations_from_log(d_pre.data + np.log(duration_scale), src_mask)
    frames, mel_mask = length_regulate(x, durations)
    f = frames.shape[1]

    p_pre = variance_predictor(model.pitch, frames)
    e_pre = variance_predictor(model.energy, frames)
    st = model.stats
    if teacher:
        if batch.mel_mask is not None and not np.array_equal(batch.mel_mask, mel_mask):
            raise MaskMismatch("target frame mask disagrees with the target durations")
        z, e_val = batch.pitch_z, batch.energy
    else:
        z = _contours_from_coeffs(p_pre.data, mel_mask, p.n_scales)
        e_val = e_pre.data
    pitch_ids = bucketize(z, st.pitch_lo, st.pitch_hi, p.n_bins)
    energy_ids = bucketize(e_val, st.energy_lo, st.energy_hi, p.n_bins)
    h = T.add(frames, T.embedding_lookup(model.pitch_emb, pitch_ids))
    h = T.add(h, T.embedding_lookup(model.energy_emb, energy_ids))
    h = T.add(h, model._positions(b, f, dtype))
    h = T.mul(h, _mask_like(mel_mask, h.shape, dtype))
    bias = attention_bias(mel_mask, p.heads)
    for blk in model.decoder:
        h = blk(h, bias)
    mel = model.mel_out(h)
    r = mel
    for i, conv in enumerate(model.postnet):
        r = conv(r)
        if i < len(model.postnet) - 1:
            r = T.relu(r)
    mel_post = T.add(mel, r)

    pack = VariancePack(
        d_pre=d_pre,
        p_pre=p_pre,
        e_pre=e_pre,
        d_target=None if batch.durations is None else np.log(np.maximum(batch.durations, 1)).astype(np.float32),
        p_target=batch.pitch,
        e_target=batch.energy,
        src_mask=src_mask,
        mel_mask=mel_mask,
        durations=durations,
    )
    return MelOut(mel, mel_post, batch.mel, mel_mask), pack


@dataclass
class T2ALosses:
    mel: T.Tensor
    mel_post: T.Tensor
    duration: T.Tensor
    pitch: T.Tensor
    energy: T.Tensor
    total: T.Tensor

    def values(self):
        return {k: float(getattr(self, k).data) for k in LOSS_NAMES + ("total",)}


def _masked(x, target, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise MaskMismatch(f"mask {mask.shape} vs values {x.shape}")
    tgt = np.asarray(target, dtype=x.data.dtype)
    if tgt.shape != x.shape:
        raise MaskMismatch(f"target {tgt.shape} vs prediction {x.shape}")
    return T.masked_select(x, mask), T.Tensor(tgt[mask], dtype=x.data.dtype)


def t2a_losses(out, pack, duration_loss="mae"):
    """Masked mel/post-mel MSE, log-duration MAE (or MSE), pitch and energy MAE, and their sum."""
    if out.mel_target is None or pack.d_target is None:
        raise MaskMismatch("losses need targets")
    mel_mask = np.asarray(out.mel_mask, dtype=bool)
    if not np.array_equal(mel_mask, pack.mel_mask):
        raise MaskMismatch("mel and variance masks disagree")
    m3 = np.broadcast_to(mel_mask[..., None], out.mel.shape)
    loss_mel = T.mse(*_masked(out.mel, out.mel_target, m3))
    loss_post = T.mse(*_masked(out.mel_post, out.mel_target, m3))
    dur_fn = {"mae": T.mae, "mse": T.mse}[duration_loss]
    loss_dur = dur_fn(*_masked(pack.d_pre, pack.d_target, pack.src_mask))
    p3 = np.broadcast_to(mel_mask[..., None], pack.p_pre.shape)
    loss_pitch = T.mae(*_masked(pack.p_pre, pack.p_target, p3))
    loss_energy = T.mae(*_masked(pack.e_pre, pack.e_target, mel_mask))
    total = T.add(T.add(T.add(T.add(loss_mel, loss_post), loss_dur), loss_pitch), loss_energy)
    return T2ALosses(loss_mel, loss_post, loss_dur, loss_pitch, loss_energy, total)


@dataclass(frozen=True)
class T2AConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 2e-3
    seed: int = 0
    clip_norm: float = 1.0
    warmup_steps: int = 30
    schedule: str = "cosine"
    duration_loss: str = "mae"


@dataclass
class T2AEpoch:
    epoch: int
    mel: float
    mel_post: float
    duration: float
    pitch: float
    energy: float
    total: float
    conserved_batches: int = 0
    batches: int = 0


def seeded_batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def frames_conserved(pack, batch):
    """Teacher-forced frame counts equal the oracle mel frame counts for every item."""
    got = pack.mel_mask.sum(axis=1)
    want = np.asarray(batch.mel_mask).sum(axis=1)
    return bool(np.array_equal(got, want) and np.array_equal(got, np.asarray(batch.durations).sum(axis=1)))


def train_t2a(model, items, config=T2AConfig(), curve_path=None, on_epoch=None, fit=True):
    if not items:
        raise EmptyDataset("no oracle utterances to train on")
    if fit:
        model.set_stats(fit_stats(items))
    rng = np.random.default_rng(config.seed)
    opt = OptimState(model.parameters(), lr=config.lr)
    plan = [seeded_batches(len(items), config.batch_size, rng) for _ in range(config.epochs)]
    total_steps = sum(len(p) for p in plan)
    step = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(6)
        n = conserved = 0
        for idx in plan[epoch - 1]:
            batch = collate([items[i] for i in idx])
            opt.lr = scheduled_lr(config.lr, step, total_steps, config.warmup_steps, config.schedule)
            step += 1
            opt.zero_grad()
            out, pack = t2a_forward(model, batch, teacher=True)
            losses = t2a_losses(out, pack, config.duration_loss)
            vals = losses.values()
            if not np.isfinite(vals["total"]):
                raise DivergedLoss(f"T2A loss became {vals['total']} at epoch {epoch}")
            conserved += frames_conserved(pack, batch)
            T.backward(losses.total, opt.params)
            optimizer_step(opt, clip_norm=config.clip_norm)
            w = batch.size
            sums += w * np.array([vals[k] for k in LOSS_NAMES + ("total",)])
            n += w
        stats = T2AEpoch(epoch, *(sums / n), conserved_batches=conserved, batches=len(plan[epoch - 1]))
        history.append(stats)
        log.info("t2a epoch %d mel=%.4f total=%.4f", epoch, stats.mel, stats.total)
        if on_epoch is not None:
            on_epoch(stats)
    if curve_path is not None:
        write_curve(curve_path, history)
    return history


def write_curve(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch",) + LOSS_NAMES + ("total",))
        for h in history:
            w.writerow([h.epoch] + [f"{getattr(h, k):.6g}" for k in LOSS_NAMES + ("total",)])


def synthesize_mel(model, phonemes, duration_scale=1.0):
    """Inference for one phoneme sequence -> ``(mel_post [F, C], durations)``."""
    ids = model.vocab.encode(phonemes)
    if ids.size == 0:
        raise UnknownPhoneme("empty phoneme sequence")
    batch = Batch(ids=ids[None], src_mask=np.ones((1, ids.size), bool))
    out, pack = t2a_forward(model, batch, teacher=False, duration_scale=duration_scale)
    return out.mel_post.data[0].astype(np.float32), pack.durations[0]


def synthesize_units(model, units):
    return synthesize_mel(model, text_phonemes(units))
