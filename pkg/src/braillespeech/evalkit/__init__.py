from braillespeech.evalkit.decode import (
    Decoded,
    TemplateBank,
    build_bank,
    count_errors,
    decode_mel,
    syllable_frames,
    syllable_name,
    table_bank,
)
from braillespeech.evalkit.metrics import acc, bleu4, mos, read_ratings, tally_ratings, wer
from braillespeech.evalkit.report import emit_report, range_average

__all__ = [
    "Decoded", "TemplateBank", "acc", "bleu4", "build_bank", "count_errors", "decode_mel",
    "emit_report", "mos", "range_average", "read_ratings", "syllable_frames", "syllable_name",
    "table_bank", "tally_ratings", "wer",
]
