"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

The summary lines are printed at the end of the pytest run (see conftest).
Run alone with ``pytest tests/test_acceptance.py -v``; the full suite takes
roughly half an hour on one CPU core, most of it in the seeded reference runs.
"""

import csv
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from braillespeech.acoustic_t2a import (
    AcousticModel,
    MelOut,
    T2AConfig,
    T2AParams,
    VariancePack,
    fit_stats,
    oracle_dataset,
    synthesize_mel,
    t2a_forward,
    t2a_losses,
    train_t2a,
    collate,
)
from braillespeech.braille_codec import (
    Kind,
    RenderStyle,
    TextUnit,
    augment_manifest,
    cells_to_text,
    clean_overcrop,
    flip180,
    generate_dataset,
    load_table,
    pinyin_to_cells,
    render_image,
)
from braillespeech.braille_codec.dataset import Manifest, overcrop_cells, sample_unit
from braillespeech.braille_codec.tokenizer import Vocabulary, tokenize_batch
from braillespeech.contrastive_i2t import (
    DualEncoder,
    EncoderParams,
    I2TConfig,
    contrastive_loss,
    embed_images,
    embed_texts,
    i2t_step,
    image_to_array,
    train_i2t,
)
from braillespeech.evalkit import acc, count_errors, decode_mel, mos, syllable_frames, table_bank, wer
from braillespeech.knn_index import recall_metrics
from braillespeech.pipeline_cli.cli import EXIT_OK, main
from braillespeech.pipeline_cli.config import JointConfig, RunConfig, parse_config
from braillespeech.pipeline_cli.pipeline import (
    compare_strategies,
    infer,
    joint_train,
    load_run,
    pretrain,
    reference_syllables,
    save_run,
)
from braillespeech.speech_dsp import text_phonemes, wav_read
from braillespeech.speech_dsp.core import griffin_lim, mcd, mel_spectrogram
from braillespeech.tensor_core import Tensor, grad_check
from braillespeech.tensor_core import tensor as T
from braillespeech.tensor_core.tensor import OPS

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "reference_run.json").read_text())

SMALL = EncoderParams(image_dim=16, image_heads=2, image_blocks=1, text_dim=16, text_heads=2, text_blocks=1, out_dim=16)
TINY = T2AParams(hidden=8, heads=2, encoder_blocks=1, decoder_blocks=1, vp_filter=8, postnet_layers=2,
                 postnet_channels=8)

# small schedules for the strategy, sweep and determinism runs
STRATEGY_TOML = """
[i2t]
epochs = 15

[t2a]
epochs = 20

[joint]
epochs = 12
"""

SWEEP_TOML = """
[joint]
epochs = 2
"""

QUICK_TOML = """
[i2t]
epochs = 1
batch_size = 8

[t2a]
epochs = 1
batch_size = 4

[joint]
epochs = 1
batch_size = 8
audio_batch_size = 2
"""


class Criterion:
    """Collects named checks, logs one line, then fails if any check failed."""

    def __init__(self, log, number):
        self.log, self.number = log, number
        self.notes, self.failed = [], []

    def expect(self, ok, note):
        ok = bool(ok)
        self.notes.append(note if ok else f"{note} [failed]")
        if not ok:
            self.failed.append(note)
        return ok

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    def __exit__(self, kind, exc, tb):
        notes = list(self.notes)
        if exc is not None:
            notes.append(f"error: {kind.__name__}: {exc}")
        passed = exc is None and not self.failed
        self.log[self.number] = (passed, "; ".join(notes) + f" ({self.elapsed:.1f}s)")
        if exc is None and self.failed:
            raise AssertionError("failed checks: " + ", ".join(self.failed))
        return False


def _close(a, b, tol=1e-6):
    return abs(float(a) - float(b)) <= tol * max(1.0, abs(float(b)))


def _tiny_joint_log(tmp_path):
    table = load_table()
    units = table.all_units()[::45][:8]
    i2t = DualEncoder(SMALL, seed=0)
    arrays = np.stack([image_to_array(render_image(pinyin_to_cells(u)), SMALL) for u in units])
    items = dict(zip(units, oracle_dataset([[u] for u in units], seed=0)))
    t2a = AcousticModel(TINY, seed=0)
    t2a.set_stats(fit_stats(list(items.values())))
    joint = JointConfig(lambda1=0.3, lambda2=0.7, epochs=2, batch_size=4, audio_batch_size=2)
    log = tmp_path / "batches.csv"
    joint_train(i2t, t2a, arrays, units, items, joint, batch_log=log)
    return joint, list(csv.DictReader(open(log)))


def test_criterion_01_formula_oracles(acceptance_log, tmp_path):
    joint, rows = _tiny_joint_log(tmp_path)
    with Criterion(acceptance_log, 1) as c:
        # contrastive loss: uniform logits, a hand 3x3 case and the mean identity
        zero = contrastive_loss(np.zeros((4, 4)))
        c.expect(_close(zero.loss_i.data, math.log(4)) and _close(zero.loss_t.data, math.log(4)), "contrastive zeros=ln4")
        p = np.array([[0.3, -1.2, 0.5], [2.0, 0.1, -0.4], [0.0, 0.7, 1.1]])
        ce = lambda m: np.mean([math.log(np.exp(m[i]).sum()) - m[i, i] for i in range(3)])
        loss = contrastive_loss(p)
        c.expect(_close(loss.loss_i.data, ce(p)) and _close(loss.loss_t.data, ce(p.T)), "contrastive hand CE")
        c.expect(loss.loss_it.data == (loss.loss_i.data + loss.loss_t.data) * np.float32(0.5), "contrastive mean exact")

        # acoustic loss on a hand fixture: 0.5 + 1.0 + 0.75 + 1.0 + 1.0
        mask = np.array([[True, True, False]])
        target = np.array([[[1, 1], [3, 3], [9, 9]]], np.float32)
        out = MelOut(Tensor(np.array([[[1, 2], [3, 4], [0, 0]]], np.float32)),
                     Tensor(np.array([[[1, 3], [3, 3], [0, 0]]], np.float32)), target, mask)
        pack = VariancePack(Tensor(np.array([[0.5, 1.0]], np.float32)), Tensor(np.array([[[1], [1], [5]]], np.float32)),
                            Tensor(np.array([[1, 1, 7]], np.float32)), np.zeros((1, 2), np.float32),
                            np.array([[[0], [2], [0]]], np.float32), np.array([[1, 3, 0]], np.float32),
                            np.ones((1, 2), bool), mask)
        v = t2a_losses(out, pack).values()
        hand = {"mel": 0.5, "mel_post": 1.0, "duration": 0.75, "pitch": 1.0, "energy": 1.0, "total": 4.25}
        c.expect(v == hand, "acoustic hand fixture")

        # weighted joint loss on every logged batch of a short joint run
        l1, l2 = np.float32(joint.lambda1), np.float32(joint.lambda2)
        worst = max(abs(float(r["loss_total"]) - float(l1 * np.float32(r["loss_it"]) + l2 * np.float32(r["loss_ta"])))
                    / max(1.0, abs(float(r["loss_total"]))) for r in rows)
        c.expect(rows and worst <= 2 * np.finfo(np.float32).eps, f"joint loss {len(rows)} batches, worst rel {worst:.1e}")

        # ACC, Recall@k and MeanR, MOS, WER
        c.expect(acc(np.eye(4)) == 1.0 and acc(np.fliplr(np.eye(4))) == 0.0
                 and acc(predicted=[1, 2, 3, 4, 5], truth=[1, 2, 3, 0, 0]) == 0.6, "ACC")
        a, b, cc, d, e = (TextUnit.number(str(i)) for i in range(5))
        m = recall_metrics([[a, b], [b, a], [cc, d], [e, d]], [a, b, cc, d], ks=(1, 5))
        c.expect(m == {"recall@1": 0.75, "recall@5": 1.0, "mean_r": 0.875}, "Recall@k/MeanR")
        c.expect(mos([0, 0, 0, 0, 9]) == 5.0 and mos([0, 0, 10, 0, 0]) == 3.0
                 and _close(mos([2, 3, 20, 15, 10]), 3.56), "MOS")
        c.expect(wer([(0, 4)]) == 0.0 and wer([(2, 10)]) == 0.2 and wer([(1, 4), (3, 6)]) == 0.375, "WER")
        c.expect(c.elapsed < 1.0, "under 1 s")


def _op_cases(rng):
    def p(*shape, scale=1.0):
        return Tensor(rng.normal(size=shape) * scale, requires_grad=True)

    a, b, w = p(3, 4), p(3, 4), p(4, 3)
    away = Tensor(np.sign(rng.normal(size=(3, 4))) * rng.uniform(0.2, 1.0, size=(3, 4)), requires_grad=True)
    table = p(6, 4)
    ids = np.array([[0, 3, 3], [5, 1, 0]])
    mask = rng.random((3, 4)) > 0.4
    mask[0, 0] = True
    seq, kernel = p(2, 5, 4), p(3, 4, 3, scale=0.3)
    pool_mask = np.ones((2, 5), bool)
    pool_mask[1, -2:] = False
    gain, bias = p(4), p(4)
    shifted = Tensor(a.data + np.sign(rng.normal(size=(3, 4))) * 0.5)
    return {
        "add": (lambda: T.sum_(T.mul(T.add(a, b), b)), [a, b]),
        "sub": (lambda: T.sum_(T.mul(T.sub(a, b), a)), [a, b]),
        "mul": (lambda: T.sum_(T.mul(a, b)), [a, b]),
        "scale": (lambda: T.sum_(T.mul(T.scale(a, 1.7), a)), [a]),
        "exp": (lambda: T.sum_(T.exp(T.scale(a, 0.5))), [a]),
        "relu": (lambda: T.sum_(T.mul(T.relu(away), b)), [away]),
        "matmul": (lambda: T.sum_(T.exp(T.scale(T.matmul(a, w), 0.3))), [a, w]),
        "transpose": (lambda: T.sum_(T.mul(T.transpose(a, (1, 0)), T.transpose(b, (1, 0)))), [a, b]),
        "reshape": (lambda: T.sum_(T.exp(T.scale(T.reshape(a, (12,)), 0.2))), [a]),
        "concat": (lambda: T.sum_(T.exp(T.scale(T.concat([a, b], axis=1), 0.2))), [a, b]),
        "slice": (lambda: T.sum_(T.exp(T.slice_(a, (slice(0, 2),)))), [a]),
        "gather": (lambda: T.sum_(T.exp(T.scale(T.gather(a, np.array([2, 0, 2]), axis=0), 0.3))), [a]),
        "embedding_lookup": (lambda: T.sum_(T.exp(T.scale(T.embedding_lookup(table, ids), 0.3))), [table]),
        "masked_select": (lambda: T.sum_(T.exp(T.scale(T.masked_select(a, mask), 0.3))), [a]),
        "sum": (lambda: T.sum_(T.mul(a, a)), [a]),
        "mean": (lambda: T.mean(T.mul(a, a)), [a]),
        "mean_pool": (lambda: T.sum_(T.exp(T.mean_pool(seq, pool_mask))), [seq]),
        "softmax": (lambda: T.sum_(T.mul(T.softmax(a), b)), [a, b]),
        "layer_norm": (lambda: T.sum_(T.mul(T.layer_norm(a, gain, bias), b)), [a, gain, bias]),
        "l2_normalize": (lambda: T.sum_(T.mul(T.l2_normalize(a), b)), [a, b]),
        "conv1d": (lambda: T.sum_(T.exp(T.scale(T.conv1d(seq, kernel), 0.3))), [seq, kernel]),
        "mse": (lambda: T.mse(a, b), [a, b]),
        "mae": (lambda: T.mae(a, shifted), [a]),
        "cross_entropy": (lambda: T.cross_entropy(a, np.array([0, 3, 1])), [a]),
    }


def test_criterion_02_gradient_suite(acceptance_log):
    with Criterion(acceptance_log, 2) as c:
        cases = _op_cases(np.random.default_rng(7))
        c.expect(set(cases) == set(OPS), f"{len(cases)} ops covered")
        worst_op = max((grad_check(fn, params, max_coords=60).max_relative_error, name)
                       for name, (fn, params) in cases.items())
        c.expect(worst_op[0] < 1e-3, f"worst op {worst_op[1]} {worst_op[0]:.1e}")

        table = load_table()
        units = table.all_units()[::90][:4]
        model = DualEncoder(SMALL, seed=0)
        arrays = np.stack([image_to_array(render_image(pinyin_to_cells(u)), SMALL) for u in units])
        tokens = tokenize_batch(units, Vocabulary(table), SMALL.context_length)
        res = grad_check(lambda: i2t_step(model, arrays, tokens)[1].loss_it, model.parameters(), max_coords=120)
        c.expect(res.max_relative_error < 1e-3, f"I2T loss {res.max_relative_error:.1e}")

        toy = oracle_dataset([TextUnit.spell("h", "ao", 3)], seed=1)
        t2a = AcousticModel(TINY, seed=4)
        batch = collate(toy)
        res = grad_check(lambda: t2a_losses(*t2a_forward(t2a, batch)).total, t2a.parameters(), max_coords=150)
        c.expect(res.max_relative_error < 1e-3, f"T2A loss {res.max_relative_error:.1e}")
        c.expect(c.elapsed < 60, "under 60 s")


def test_criterion_03_codec(acceptance_log, tmp_path):
    with Criterion(acceptance_log, 3) as c:
        table = load_table()
        units = table.all_units()
        bad = [u for u in units if cells_to_text(pinyin_to_cells(u, table), u.kind, table) != u]
        c.expect(not bad, f"round trip over {len(units)} units")
        rng = np.random.default_rng(3)
        flips = 0
        for u in units[::7]:
            img = render_image(pinyin_to_cells(u, table), RenderStyle(jitter=0.4, seed=int(rng.integers(1 << 30))))
            twice = flip180(flip180(img))
            flips += np.array_equal(twice.pixels, img.pixels) and np.allclose(twice.dot_centers, img.dot_centers)
        c.expect(flips == len(units[::7]), f"flip180 involution on {flips} images")
        m = generate_dataset(tmp_path, {Kind.NUMBER: 1800, Kind.SPELL: 2500, Kind.PUNCT: 1300}, seed=0)
        doubled = augment_manifest(m, ["flip180"])
        c.expect(m.counts == {"Number": 1800, "Spell": 2500, "Punct": 1300}
                 and doubled.counts == {"Number": 3600, "Spell": 5000, "Punct": 2600},
                 f"doubling {m.counts} -> {doubled.counts}")


def test_criterion_04_cleaning(acceptance_log):
    with Criterion(acceptance_log, 4) as c:
        table = load_table()
        rng = np.random.default_rng(4)
        tp = fp = fn = 0
        for i in range(200):
            unit = sample_unit([Kind.NUMBER, Kind.SPELL, Kind.PUNCT][i % 3], rng, table)
            cells = pinyin_to_cells(unit, table)
            style = RenderStyle(jitter=0.4, seed=int(rng.integers(1 << 30)))
            fp += not clean_overcrop(render_image(cells, style), len(cells)).keep
            dropped = not clean_overcrop(render_image(overcrop_cells(cells, rng, table), style), len(cells)).keep
            tp += dropped
            fn += not dropped
        precision = tp / max(tp + fp, 1)
        recall = tp / max(tp + fn, 1)
        c.expect(precision == 1.0 and recall == 1.0, f"precision {precision:.3f} recall {recall:.3f} on 200+200")
        c.expect(c.elapsed < 30, "under 30 s")


def _pairs(n, seed, table, params):
    rng = np.random.default_rng(seed)
    units, arrays = [], []
    for _ in range(n):
        kind = [Kind.NUMBER, Kind.SPELL, Kind.PUNCT][rng.choice(3, p=[0.3, 0.55, 0.15])]
        unit = sample_unit(kind, rng, table)
        img = render_image(pinyin_to_cells(unit, table), RenderStyle(jitter=0.4, seed=int(rng.integers(1 << 30))))
        units.append(unit)
        arrays.append(image_to_array(img, params))
    return np.stack(arrays), units


def test_criterion_05_i2t_desk_run(acceptance_log):
    with Criterion(acceptance_log, 5) as c:
        table = load_table()
        params = EncoderParams()
        train_x, train_u = _pairs(600, 1, table, params)
        held_x, held_u = _pairs(120, 2, table, params)
        model = DualEncoder(params, seed=0)
        history = train_i2t(model, train_x, train_u, I2TConfig(epochs=25))
        ratio = history[-1].loss_it / history[0].loss_it
        c.expect(ratio < 0.2, f"loss {history[0].loss_it:.3f}->{history[-1].loss_it:.3f} (x{ratio:.3f})")
        # the held-out pairs are the gallery: each image ranks the distinct held-out texts
        gallery = sorted(set(held_u), key=str)
        sims = embed_images(model, held_x) @ embed_texts(model, gallery).T
        order = np.argsort(-sims, axis=1, kind="stable")
        rankings = [[gallery[j] for j in row[:5]] for row in order]
        m = recall_metrics(rankings, held_u, ks=(1, 5))
        c.expect(m["recall@1"] >= 0.90, f"R1 {m['recall@1']:.3f}")
        c.expect(m["mean_r"] >= 0.949, f"MeanR {m['mean_r']:.3f}")
        c.expect(c.elapsed < 600, "under 10 min")


def test_criterion_06_t2a_desk_run(acceptance_log):
    ref = FIXTURE["t2a_desk"]
    with Criterion(acceptance_log, 6) as c:
        units = load_table().all_units()
        pick = [units[i] for i in np.random.default_rng(0).permutation(len(units))[:ref["items"]]]
        items = oracle_dataset([[u] for u in pick], seed=0)
        model = AcousticModel(seed=0)
        history = train_t2a(model, items, T2AConfig(epochs=ref["epochs"]))
        conserved = sum(h.conserved_batches for h in history)
        total = sum(h.batches for h in history)
        c.expect(conserved == total, f"frames conserved on {conserved}/{total} batches")
        ratio = history[0].mel / history[-1].mel
        c.expect(ratio >= 5.0, f"Loss_mel {history[0].mel:.3f}->{history[-1].mel:.3f} (/{ratio:.2f})")
        values = []
        for unit in pick[:ref["gl_mcd_utterances"]]:
            mel, _ = synthesize_mel(model, text_phonemes([unit]))
            values.append(mcd(mel, mel_spectrogram(griffin_lim(mel, iterations=60, seed=0))))
        value = float(np.mean(values))
        c.expect(value < ref["gl_mcd_bound"], f"GL(60) MCD {value:.3f} < {ref['gl_mcd_bound']}")
        c.expect(c.elapsed < 600, "under 10 min")


@pytest.fixture(scope="module")
def end_to_end_run(tmp_path_factory):
    """Seeded reference run: 1750 rendered images, both stages pretrained with defaults."""
    root = tmp_path_factory.mktemp("e2e")
    generate_dataset(root / "data", {Kind.NUMBER: 450, Kind.SPELL: 1150, Kind.PUNCT: 150}, seed=11)
    config = RunConfig()
    pretrain("i2t", root / "data", config, root / "i2t")
    pretrain("t2a", root / "data", config, root / "t2a")
    i2t = load_run(root / "i2t", need=("i2t",)).i2t
    t2a = load_run(root / "t2a", need=("t2a",)).t2a
    save_run(root / "run", config, i2t=i2t, t2a=t2a)
    return root


def test_criterion_07_end_to_end(acceptance_log, end_to_end_run):
    root = end_to_end_run
    with Criterion(acceptance_log, 7) as c:
        manifest = Manifest.read(root / "data" / "manifest.jsonl")
        held = [r for r in manifest.split("test") if r.text.kind is Kind.SPELL][:50]
        run = load_run(root / "run")
        bank = table_bank()
        counts, hits, same = [], 0, 0
        for rec in held:
            wav = root / "out" / f"{rec.id}.wav"
            trace = infer(root / "run", manifest.image_path(rec), 5, wav, run=run)
            first = wav.read_bytes()
            infer(root / "run", manifest.image_path(rec), 5, wav, run=run)
            same += wav.read_bytes() == first
            hits += trace.chosen == rec.text.to_record()
            wave, _ = wav_read(wav)
            bounds = syllable_frames(trace.phonemes, trace.durations)
            decoded = decode_mel(mel_spectrogram(wave)[:sum(bounds)], bank, bounds)
            counts.append(count_errors(reference_syllables(rec.text), decoded))
        value = wer(counts)
        c.expect(len(held) == 50, f"{len(held)} held-out syllable images, R1 {hits / len(held):.2f}")
        c.expect(value <= 0.10, f"template WER {value:.3f}")
        c.expect(same == len(held), f"identical WAV bytes {same}/{len(held)}")
        c.expect(c.elapsed < 120, "under 2 min")


@pytest.fixture(scope="module")
def strategy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("strategy")
    generate_dataset(root / "data", {Kind.NUMBER: 60, Kind.SPELL: 110, Kind.PUNCT: 30}, seed=5)
    return root


def test_criterion_08_strategy(acceptance_log, strategy_corpus):
    root = strategy_corpus
    with Criterion(acceptance_log, 8) as c:
        config = parse_config(STRATEGY_TOML)
        results = [compare_strategies(root / "data", config, root / f"seed{s}", seed=s) for s in range(3)]
        wins = sum(r.staged_wins for r in results)
        for r in results:
            c.notes.append(f"seed {r.seed}: staged {r.staged_epochs} vs scratch {r.scratch_epochs} epochs"
                           f" to {r.threshold:.2f}")
        c.expect(wins >= 2, f"staged no slower on {wins}/3 seeds")


def test_criterion_09_sweep(acceptance_log, strategy_corpus):
    root = strategy_corpus
    seed0 = root / "seed0"
    if not (seed0 / "i2t" / "model.bipc").exists():
        pretrain("i2t", root / "data", parse_config(STRATEGY_TOML), seed0 / "i2t")
        pretrain("t2a", root / "data", parse_config(STRATEGY_TOML), seed0 / "t2a")
    (root / "sweep.toml").write_text(SWEEP_TOML)
    out = root / "sweep" / "sweep.csv"
    with Criterion(acceptance_log, 9) as c:
        code = main(["sweep", "--grid", "0.1..0.9", "--step", "0.2", "--data", str(root / "data"),
                     "--config", str(root / "sweep.toml"), "--i2t", str(seed0 / "i2t"), "--t2a", str(seed0 / "t2a"),
                     "--out", str(out)])
        c.expect(code == EXIT_OK, f"exit {code}")
        rows = list(csv.DictReader(open(out)))
        l1 = [float(r["lambda1"]) for r in rows]
        l2 = [float(r["lambda2"]) for r in rows]
        c.expect(l1 == [0.1, 0.3, 0.5, 0.7, 0.9], f"{len(rows)} rows")
        c.expect(all(abs(a + b - 1.0) < 1e-9 for a, b in zip(l1, l2)), "lambda1+lambda2=1")
        c.expect(all(x > y for x, y in zip(l2, l2[1:])), "lambda2 monotonic")
        half = [r for r in rows if float(r["lambda1"]) == 0.5]
        c.expect(len(half) == 1, f"lambda 0.5 row (WER {half[0]['wer'] if half else 'missing'})")
        c.expect(out.with_suffix(".svg").exists(), "SVG written")


def _run_all_commands(root):
    """Every CLI command with relative paths, so outputs can be compared byte for byte."""
    root.mkdir(parents=True)
    (root / "quick.toml").write_text(QUICK_TOML)
    cwd = os.getcwd()
    os.chdir(root)
    try:
        commands = [
            ["gen-data", "--out", "d", "--numbers", "6", "--spells", "10", "--puncts", "4", "--overcrop", "0.2"],
            ["clean", "--manifest", "d/manifest.jsonl"],
            ["augment", "--manifest", "d/manifest.clean.jsonl", "--methods", "flip180,bg:180"],
            ["pretrain-i2t", "--data", "d/manifest.clean.aug.jsonl", "--config", "quick.toml", "--out", "i2t"],
            ["pretrain-t2a", "--data", "d/manifest.clean.aug.jsonl", "--config", "quick.toml", "--out", "t2a"],
            ["finetune", "--data", "d/manifest.clean.aug.jsonl", "--config", "quick.toml", "--i2t", "i2t",
             "--t2a", "t2a", "--out", "ft"],
            ["infer", "--ckpt", "ft", "--image", "d/images/s00000.pgm", "--out", "out/s00000.wav"],
            ["sweep", "--grid", "0.3,0.7", "--data", "d/manifest.clean.aug.jsonl", "--config", "quick.toml",
             "--i2t", "i2t", "--t2a", "t2a", "--out", "sweep/sweep.csv"],
            ["eval", "--ckpt", "ft", "--data", "d/manifest.clean.aug.jsonl", "--report", "report"],
        ]
        codes = [main(cmd) for cmd in commands]
    finally:
        os.chdir(cwd)
    files = {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return [cmd[0] for cmd in commands], codes, files


def test_criterion_10_determinism(acceptance_log, tmp_path, capsys):
    with Criterion(acceptance_log, 10) as c:
        names, codes_a, first = _run_all_commands(tmp_path / "a")
        _, codes_b, second = _run_all_commands(tmp_path / "b")
        capsys.readouterr()
        c.expect(codes_a == codes_b == [EXIT_OK] * len(names), f"{len(names)} commands exit 0")
        differ = sorted(k for k in set(first) | set(second) if first.get(k) != second.get(k))
        kinds = {Path(k).suffix for k in first}
        c.expect(not differ, f"{len(first)} files byte-identical ({', '.join(sorted(kinds))})"
                 + (f"; differ: {differ[:5]}" if differ else ""))
