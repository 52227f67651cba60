"""``braillespeech`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from braillespeech.errors import BrailleSpeechError, ConfigError, DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def parse_grid(text, step=None):
    """``"0.3,0.5,0.7"`` or a range ``"0.1..0.9"`` with ``step``."""
    if ".." in text:
        lo, hi = (float(x) for x in text.split(".."))
        if step is None or step <= 0:
            raise ConfigError("a grid range needs a positive --step")
        n = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(n + 1)]
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_gen_data(a):
    from braillespeech.braille_codec.cells import Kind
    from braillespeech.braille_codec.dataset import generate_dataset

    m = generate_dataset(a.out, {Kind.NUMBER: a.numbers, Kind.SPELL: a.spells, Kind.PUNCT: a.puncts}, a.seed,
                         overcrop_rate=a.overcrop)
    print(f"wrote {len(m)} records to {Path(a.out) / 'manifest.jsonl'}")


def cmd_clean(a):
    from braillespeech.braille_codec.dataset import Manifest, clean_manifest

    manifest = Manifest.read(a.manifest)
    kept, dropped, review = clean_manifest(manifest, a.expected_cells)
    base = Path(a.manifest)
    out = base.with_name(base.stem + ".clean.jsonl")
    kept.write(out)
    with open(base.with_name(base.stem + ".review.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(r.id + "\n" for r in review)
    print(f"kept {len(kept)}, dropped {len(dropped)}, flagged {len(review)} -> {out}")


def cmd_augment(a):
    from braillespeech.braille_codec.dataset import Manifest, augment_manifest

    manifest = Manifest.read(a.manifest)
    combined = augment_manifest(manifest, a.methods.split(","))
    base = Path(a.manifest)
    out = base.with_name(base.stem + ".aug.jsonl")
    combined.write(out)
    print(f"{len(manifest)} -> {len(combined)} records -> {out}")


def _config(a):
    from braillespeech.pipeline_cli.config import load_config

    return load_config(a.config)


def cmd_pretrain(stage):
    def run(a):
        from braillespeech.pipeline_cli.pipeline import pretrain

        history = pretrain(stage, a.data, _config(a), a.out)
        print(f"{stage} pretraining done: {len(history)} epochs -> {a.out}")

    return run


def cmd_finetune(a):
    from braillespeech.pipeline_cli.config import override
    from braillespeech.pipeline_cli.pipeline import finetune_joint

    cfg = _config(a)
    lam2 = a.lambda2 if a.lambda2 is not None else 1.0 - a.lambda1
    cfg = override(cfg, "joint", lambda1=a.lambda1, lambda2=lam2, epochs=a.epochs, seed=a.seed,
                   freeze_i2t=True if a.freeze_i2t else None)
    history = finetune_joint(a.data, cfg.joint, a.out, a.i2t, a.t2a, cfg, force=a.force)
    print(f"joint fine-tuning done: final loss_total {history[-1].loss_total:.6g} -> {a.out}")


def cmd_infer(a):
    from braillespeech.pipeline_cli.pipeline import infer

    trace = infer(a.ckpt, a.image, a.k, a.out, seed=a.seed)
    print(f"{trace.topk[0]['text']} (p={trace.topk[0]['p']}) -> {a.out}")


def cmd_sweep(a):
    from braillespeech.pipeline_cli.pipeline import sweep

    rows = sweep(parse_grid(a.grid, a.step), a.data, a.out, _config(a), a.i2t, a.t2a)
    print(f"{len(rows)} grid points -> {a.out}")


def cmd_eval(a):
    from braillespeech.pipeline_cli.pipeline import evaluate

    metrics = evaluate(a.ckpt, a.data, a.report)
    for k, v in metrics.items():
        print(f"{k}\t{v:.6g}")


def build_parser():
    p = argparse.ArgumentParser(prog="braillespeech", description="Braille image to speech pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="render a synthetic image-text dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--numbers", type=int, default=180)
    s.add_argument("--spells", type=int, default=250)
    s.add_argument("--puncts", type=int, default=130)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--overcrop", type=float, default=0.0, help="fraction of overcropped images")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("clean", help="drop overcropped images from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--expected-cells", default="AUTO")
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("augment", help="add one augmented copy of every image")
    s.add_argument("--manifest", required=True)
    s.add_argument("--methods", default="flip180")
    s.set_defaults(func=cmd_augment)

    for stage in ("i2t", "t2a"):
        s = sub.add_parser(f"pretrain-{stage}", help=f"pretrain the {stage} stage")
        s.add_argument("--data", required=True)
        s.add_argument("--config")
        s.add_argument("--out", required=True)
        s.set_defaults(func=cmd_pretrain(stage))

    s = sub.add_parser("finetune", help="joint fine-tuning of both stages")
    s.add_argument("--i2t")
    s.add_argument("--t2a")
    s.add_argument("--data", required=True)
    s.add_argument("--lambda1", type=float, default=0.5)
    s.add_argument("--lambda2", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true", help="allow lambda endpoints 0 and 1")
    s.add_argument("--freeze-i2t", action="store_true")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("infer", help="image -> text -> waveform")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("sweep", help="fine-tune and evaluate over a lambda1 grid")
    s.add_argument("--grid", required=True, help="comma list, or LO..HI with --step")
    s.add_argument("--step", type=float)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--i2t")
    s.add_argument("--t2a")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("eval", help="metrics and report for a run")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrailleSpeechError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
