"""Stage pretraining, joint fine-tuning, inference, evaluation and the λ sweep.

A run directory holds ``model.bipc`` (all tensors of the stages it trained,
plus the retrieval index when it has an I2T stage), ``index.tsv`` with the
index candidates, ``config.toml`` with the resolved configuration and the
loss curves.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from braillespeech.acoustic_t2a import (
    AcousticModel,
    collate,
    fit_stats,
    oracle_dataset,
    synthesize_mel,
    t2a_forward,
    t2a_losses,
    train_t2a,
)
from braillespeech.braille_codec.cells import load_table
from braillespeech.braille_codec.dataset import Manifest
from braillespeech.braille_codec.render import read_pgm
from braillespeech.braille_codec.tokenizer import Vocabulary, tokenize_batch
from braillespeech.contrastive_i2t import (
    DualEncoder,
    EncoderParams,
    embed_images,
    i2t_step,
    image_to_array,
    prepare_pairs,
    train_i2t,
    unique_batches,
)
from braillespeech.errors import CheckpointMismatch, DivergedLoss, EmptyDataset
from braillespeech.evalkit import count_errors, decode_mel, syllable_frames, syllable_name, table_bank
from braillespeech.evalkit.metrics import acc, bleu4, wer
from braillespeech.evalkit.report import emit_report, fmt, plot_sweep
from braillespeech.knn_index import (
    TextIndex,
    build_index,
    encoder_tag,
    from_embeddings,
    query,
    rank_all,
    recall_metrics,
)
from braillespeech.pipeline_cli.checkpoint import load_checkpoint, restore, save_checkpoint, state_of
from braillespeech.pipeline_cli.config import JointConfig, RunConfig, load_config, write_config
from braillespeech.speech_dsp.core import griffin_lim, mcd
from braillespeech.speech_dsp.oracle import synth_oracle, text_phonemes, unit_syllables
from braillespeech.speech_dsp.wavio import wav_write
from braillespeech.tensor_core import tensor as T
from braillespeech.tensor_core.optim import OptimState, optimizer_step

log = logging.getLogger(__name__)

MODEL_FILE = "model.bipc"
INDEX_FILE = "index.tsv"
CONFIG_FILE = "config.toml"
INDEX_TENSOR = "index.embeddings"
GL_ITERATIONS = 60


def resolve_manifest(data):
    """``data`` is a dataset directory (its ``manifest.jsonl``) or a manifest file."""
    path = Path(data)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise EmptyDataset(f"no manifest at {path}")
    return Manifest.read(path)


def split_records(manifest, split):
    recs = manifest.split(split)
    if not recs:
        raise EmptyDataset(f"manifest has no {split!r} records")
    return recs


def new_models(seed=0):
    return DualEncoder(EncoderParams(), seed=seed), AcousticModel(seed=seed)


def candidate_units():
    return load_table().all_units()


@dataclass
class Run:
    i2t: DualEncoder | None
    t2a: AcousticModel | None
    index: TextIndex | None
    config: RunConfig


def save_run(out_dir, config, i2t=None, t2a=None):
    """Write the checkpoint (rebuilding the index from the current text encoder) and config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {}
    index = None
    if i2t is not None:
        tensors.update(state_of(i2t.store, "i2t."))
        index = build_index(candidate_units(), i2t)
        tensors[INDEX_TENSOR] = index.embeddings
        (out / INDEX_FILE).write_text(index.to_tsv(), encoding="utf-8")
    if t2a is not None:
        tensors.update(state_of(t2a.store, "t2a."))
    save_checkpoint(out / MODEL_FILE, tensors)
    write_config(out / CONFIG_FILE, config)
    return index


def load_run(path, need=("i2t", "t2a")):
    """``path``: run directory or ``.bipc`` file. Raises ``CheckpointMismatch`` when a needed stage is absent."""
    path = Path(path)
    ckpt = path / MODEL_FILE if path.is_dir() else path
    tensors = load_checkpoint(ckpt)
    root = ckpt.parent
    config = load_config(root / CONFIG_FILE) if (root / CONFIG_FILE).exists() else RunConfig()
    prefixes = {n.split(".", 1)[0] for n in tensors}
    for stage in need:
        if stage not in prefixes:
            raise CheckpointMismatch(f"{ckpt} has no {stage} stage (found: {', '.join(sorted(prefixes))})")
    i2t = t2a = index = None
    if "i2t" in prefixes:
        i2t = DualEncoder(EncoderParams())
        restore(i2t.store, tensors, "i2t.")
        units = TextIndex.units_from_tsv((root / INDEX_FILE).read_text(encoding="utf-8"))
        index = from_embeddings(units, tensors[INDEX_TENSOR], encoder_tag(i2t))
    if "t2a" in prefixes:
        t2a = AcousticModel()
        restore(t2a.store, tensors, "t2a.")
    return Run(i2t, t2a, index, config)


def t2a_corpus(units, seed):
    return oracle_dataset([[u] for u in units], seed=seed)


def pretrain(stage, data, config, out_dir):
    """Train one stage from scratch on the manifest's train split."""
    manifest = resolve_manifest(data)
    recs = split_records(manifest, "train")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if stage == "i2t":
        model = DualEncoder(EncoderParams(), seed=config.i2t.seed)
        arrays, units = prepare_pairs(manifest, recs, model.params)
        history = train_i2t(model, arrays, units, config.i2t, curve_path=out / "i2t_curve.csv")
        save_run(out, config, i2t=model)
    elif stage == "t2a":
        model = AcousticModel(seed=config.t2a.seed)
        items = t2a_corpus([r.text for r in recs], config.t2a.seed)
        history = train_t2a(model, items, config.t2a, curve_path=out / "t2a_curve.csv")
        save_run(out, config, t2a=model)
    else:
        raise ValueError(f"unknown stage {stage!r}")
    return history


@dataclass
class JointEpoch:
    epoch: int
    loss_it: float
    loss_ta: float
    loss_total: float


def joint_train(i2t, t2a, arrays, units, items, joint, curve_path=None, batch_log=None, on_epoch=None):
    """Joint optimisation of λ1·Loss_it + λ2·Loss_ta.

    Every step takes one image-text batch of distinct texts and the oracle
    utterances of the first ``audio_batch_size`` of those texts. ``items``
    maps each text unit to its oracle item.
    """
    vocab = Vocabulary()
    tokens = tokenize_batch(units, vocab, i2t.params.context_length)
    params = ([] if joint.freeze_i2t else i2t.parameters()) + t2a.parameters()
    opt = OptimState(params, lr=joint.lr)
    rng = np.random.default_rng(joint.seed)
    l1, l2 = joint.lambda1, joint.lambda2
    history, rows = [], []
    for epoch in range(1, joint.epochs + 1):
        sums = np.zeros(3)
        n = 0
        for bi, batch in enumerate(unique_batches(units, joint.batch_size, rng)):
            if len(batch) < 2:
                continue
            opt.zero_grad()
            _, loss = i2t_step(i2t, arrays[batch], tokens[batch])
            audio = collate([items[units[i]] for i in batch[:joint.audio_batch_size]])
            out, pack = t2a_forward(t2a, audio, teacher=True)
            ta = t2a_losses(out, pack).total
            total = T.add(T.scale(loss.loss_it, l1), T.scale(ta, l2))
            vals = (float(loss.loss_it.data), float(ta.data), float(total.data))
            if not np.all(np.isfinite(vals)):
                raise DivergedLoss(f"joint loss became {vals[2]} at epoch {epoch}")
            T.backward(total, opt.params)
            optimizer_step(opt, clip_norm=joint.clip_norm)
            np.clip(i2t.log_scale.data, 0.0, np.log(100.0), out=i2t.log_scale.data)
            rows.append((epoch, bi) + vals)
            sums += np.array(vals) * len(batch)
            n += len(batch)
        stats = JointEpoch(epoch, *(sums / max(n, 1)))
        history.append(stats)
        log.info("joint epoch %d total=%.4f", epoch, stats.loss_total)
        if on_epoch is not None:
            on_epoch(stats)
    if curve_path is not None:
        _write_rows(curve_path, ("epoch", "loss_it", "loss_ta", "loss_total"),
                    [(h.epoch, fmt(h.loss_it), fmt(h.loss_ta), fmt(h.loss_total)) for h in history])
    if batch_log is not None:
        # full precision so the weighted sum can be recomputed from the log
        _write_rows(batch_log, ("epoch", "batch", "loss_it", "loss_ta", "loss_total"),
                    [(e, b, repr(a), repr(c), repr(t)) for e, b, a, c, t in rows])
    return history


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def joint_corpus(manifest, recs, i2t, seed):
    arrays, units = prepare_pairs(manifest, recs, i2t.params)
    distinct = list(dict.fromkeys(units))
    items = dict(zip(distinct, t2a_corpus(distinct, seed)))
    return arrays, units, items


def finetune_joint(data, joint, out_dir, i2t_ckpt=None, t2a_ckpt=None, config=None, force=False):
    """Joint fine-tuning from stage checkpoints, or joint training from scratch
    when no checkpoints are given. Writes the combined run directory."""
    joint.validate(force)
    config = config or RunConfig()
    config = RunConfig(config.i2t, config.t2a, joint)
    if i2t_ckpt is not None:
        i2t = load_run(i2t_ckpt, need=("i2t",)).i2t
    else:
        i2t = DualEncoder(EncoderParams(), seed=joint.seed)
    manifest = resolve_manifest(data)
    recs = split_records(manifest, "train")
    arrays, units, items = joint_corpus(manifest, recs, i2t, joint.seed)
    if t2a_ckpt is not None:
        t2a = load_run(t2a_ckpt, need=("t2a",)).t2a
    else:
        t2a = AcousticModel(seed=joint.seed)
        t2a.set_stats(fit_stats(list(items.values())))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    history = joint_train(i2t, t2a, arrays, units, items, joint, out / "finetune_curve.csv", out / "finetune_batches.csv")
    save_run(out, config, i2t=i2t, t2a=t2a)
    return history


@dataclass
class InferenceTrace:
    image: str
    topk: list
    chosen: dict
    phonemes: list
    durations: list
    mel_frames: int
    wav: str
    seed: int

    def to_json(self):
        return json.dumps(asdict(self), ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def synthesize(run, unit, seed=0):
    """Text unit -> ``(phonemes, durations, mel, waveform)``."""
    phonemes = text_phonemes([unit])
    mel, durations = synthesize_mel(run.t2a, phonemes)
    wave = griffin_lim(mel, iterations=GL_ITERATIONS, seed=seed)
    return phonemes, durations, mel, wave


def retrieve(run, arrays, k=1):
    emb = embed_images(run.i2t, arrays)
    return [query(e[None], run.index, k) for e in emb]


def infer(ckpt, image_path, k, out_wav, seed=0, run=None):
    """Image -> rank-1 text -> phonemes -> mel -> Griffin-Lim waveform.

    Writes the WAV and a JSON trace next to it (same stem)."""
    run = run or load_run(ckpt)
    image = read_pgm(image_path)
    hits = retrieve(run, image_to_array(image, run.i2t.params)[None], k)[0]
    unit = hits[0][0]
    phonemes, durations, mel, wave = synthesize(run, unit, seed)
    out_wav = Path(out_wav)
    out_wav.parent.mkdir(parents=True, exist_ok=True)
    wav_write(out_wav, wave)
    trace = InferenceTrace(
        image=str(image_path),
        topk=[{"text": str(u), "record": u.to_record(), "p": round(p, 6)} for u, p in hits],
        chosen=unit.to_record(),
        phonemes=list(phonemes),
        durations=[int(d) for d in durations],
        mel_frames=int(mel.shape[0]),
        wav=str(out_wav),
        seed=seed,
    )
    out_wav.with_suffix(".json").write_text(trace.to_json(), encoding="utf-8")
    return trace


def reference_syllables(unit):
    return [syllable_name(*s) for s in unit_syllables(unit)]


def speech_scores(run, units, truth, bank, seed=0):
    """Decoded syllables for retrieved ``units`` scored against ``truth`` units.

    Returns ``(per-utterance error counts, mcd values, decoded syllable lists)``.
    MCD compares the synthesized mel with the oracle mel of the true text.
    """
    counts, mcds, decoded = [], [], []
    for unit, gt in zip(units, truth):
        phonemes = text_phonemes([unit])
        mel, durations = synthesize_mel(run.t2a, phonemes)
        out = decode_mel(mel, bank, syllable_frames(phonemes, durations))
        counts.append(count_errors(reference_syllables(gt), out))
        mcds.append(mcd(synth_oracle([gt], seed=seed).mel, mel))
        decoded.append([d.syllable for d in out])
    return counts, mcds, decoded


def evaluate(ckpt, data, report_dir=None, split="test", run=None, bank=None, with_similarity=True):
    """Retrieval, speech and text metrics on a manifest split; optionally emits the report."""
    run = run or load_run(ckpt)
    manifest = resolve_manifest(data)
    recs = split_records(manifest, split)
    arrays, truth = prepare_pairs(manifest, recs, run.i2t.params)
    emb = embed_images(run.i2t, arrays)
    ranks = rank_all(emb, run.index)
    rankings = [[run.index.units[j] for j in row[:5]] for row in ranks]
    chosen = [r[0] for r in rankings]
    metrics = recall_metrics(rankings, truth)
    metrics["acc"] = acc(predicted=chosen, truth=truth)
    bank = bank or table_bank()
    counts, mcds, decoded = speech_scores(run, chosen, truth, bank)
    metrics["wer"] = wer(counts)
    metrics["mean_mcd"] = float(np.mean(mcds))
    metrics["bleu4"] = 100.0 * bleu4([reference_syllables(u) for u in truth], decoded)
    sims = {}
    if with_similarity:
        sims = category_similarity(run, arrays, truth)
    if report_dir is not None:
        run_dir = Path(ckpt) if Path(ckpt).is_dir() else Path(ckpt).parent
        emit_report(run_dir, report_dir, metrics, sims, dataset=Path(data).name or "data", run=run_dir.name)
    return metrics


def category_similarity(run, arrays, truth, size=10):
    """Cosine image-text matrix over up to ``size`` distinct texts per category."""
    from braillespeech.contrastive_i2t import embed_texts

    out = {}
    for kind in sorted({u.kind for u in truth}, key=lambda k: k.value):
        picked, seen = [], set()
        for i, u in enumerate(truth):
            if u.kind is kind and u not in seen:
                picked.append(i)
                seen.add(u)
            if len(picked) == size:
                break
        img = embed_images(run.i2t, arrays[picked])
        txt = embed_texts(run.i2t, [truth[i] for i in picked])
        out[kind.value.lower()] = img.astype(np.float64) @ txt.T.astype(np.float64)
    return out


SWEEP_FIELDS = ("lambda1", "lambda2", "wer", "mean_mcd", "final_loss_total")


def sweep(grid, data, out_csv, config=None, i2t_ckpt=None, t2a_ckpt=None, work_dir=None):
    """One joint fine-tune and evaluation per λ1 in ``grid`` (ascending λ1, so λ2 descends)."""
    config = config or RunConfig()
    grid = sorted(float(g) for g in grid)
    for g in grid:
        if not 0.0 < g < 1.0:
            raise ValueError(f"grid value {g} outside (0, 1)")
    out_csv = Path(out_csv)
    work = Path(work_dir) if work_dir else out_csv.with_name(out_csv.stem + "_runs")
    work.mkdir(parents=True, exist_ok=True)
    if i2t_ckpt is None:
        pretrain("i2t", data, config, work / "i2t")
        i2t_ckpt = work / "i2t"
    if t2a_ckpt is None:
        pretrain("t2a", data, config, work / "t2a")
        t2a_ckpt = work / "t2a"
    bank = table_bank()
    rows = []
    for g in grid:
        joint = JointConfig.with_lambda1(g, **{k: v for k, v in asdict(config.joint).items()
                                              if k not in ("lambda1", "lambda2")})
        run_dir = work / f"lambda_{g:.2f}"
        hist = finetune_joint(data, joint, run_dir, i2t_ckpt, t2a_ckpt, config)
        m = evaluate(run_dir, data, bank=bank, with_similarity=False)
        rows.append((g, 1.0 - g, m["wer"], m["mean_mcd"], hist[-1].loss_total))
    _write_rows(out_csv, SWEEP_FIELDS, [tuple(fmt(v) for v in r) for r in rows])
    lam = [r[0] for r in rows]
    plot_sweep(out_csv.with_suffix(".svg"), lam, {"WER": [r[2] for r in rows],
                                                  "Mean MCD / 100": [r[3] / 100.0 for r in rows]})
    best = min(rows, key=lambda r: (r[2], r[0]))
    summary = {"argmin_lambda1_by_wer": best[0], "rows": len(rows)}
    out_csv.with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rows


def epochs_to_threshold(losses, tau):
    """First 1-based epoch whose loss is at or below ``tau``; ``None`` if never."""
    for i, value in enumerate(losses, start=1):
        if value <= tau:
            return i
    return None


@dataclass
class StrategyResult:
    seed: int
    threshold: float
    staged_epochs: int | None
    scratch_epochs: int | None
    staged_curve: list
    scratch_curve: list

    @property
    def staged_wins(self):
        if self.staged_epochs is None:
            return False
        return self.scratch_epochs is None or self.staged_epochs <= self.scratch_epochs


def compare_strategies(data, config, work_dir, seed=0, margin=1.05):
    """Stage pretraining + joint fine-tuning against joint training from scratch.

    Both runs use the same corpus, seed and joint schedule. The threshold is
    ``margin`` times the worse of the two final Loss_total values, so both
    runs reach it; only joint epochs are counted.
    """
    work = Path(work_dir)
    config = RunConfig(replace(config.i2t, seed=seed), replace(config.t2a, seed=seed),
                       replace(config.joint, seed=seed))
    pretrain("i2t", data, config, work / "i2t")
    pretrain("t2a", data, config, work / "t2a")
    staged = finetune_joint(data, config.joint, work / "staged", work / "i2t", work / "t2a", config)
    scratch = finetune_joint(data, config.joint, work / "scratch", config=config)
    a = [h.loss_total for h in staged]
    b = [h.loss_total for h in scratch]
    tau = margin * max(a[-1], b[-1])
    return StrategyResult(seed, tau, epochs_to_threshold(a, tau), epochs_to_threshold(b, tau), a, b)
