"""Chinese Braille cells, rendering and the synthetic image-text corpus."""

from braillespeech.braille_codec.cells import (
    BrailleCell,
    BrailleTable,
    Kind,
    TextUnit,
    cells_to_text,
    load_table,
    pinyin_to_cells,
    spelling,
    split_pinyin,
)
from braillespeech.braille_codec.cleaning import CleanVerdict, DistanceProfile, clean_overcrop, distance_profile
from braillespeech.braille_codec.dataset import (
    Manifest,
    Record,
    augment,
    augment_manifest,
    background_color,
    clean_manifest,
    flip180,
    generate_dataset,
)
from braillespeech.braille_codec.render import (
    BrailleImage,
    RenderStyle,
    detect_cells,
    detect_dots,
    read_pgm,
    render_image,
    write_pgm,
)
from braillespeech.braille_codec.tokenizer import CONTEXT_LENGTH, Vocabulary, tokenize_batch, tokenize_text
