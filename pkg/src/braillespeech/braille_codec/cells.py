"""Braille cells, typed text units and the bundled Chinese Braille table."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from braillespeech.errors import AmbiguousDecoding, UnknownCell, UnknownPunct, UnknownSyllablePart

TABLE_NAME = "zh_braille_v1.tsv"
APICAL_INITIALS = ("zh", "ch", "sh", "r", "z", "c", "s")
_INITIAL_ORDER = ("zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r", "z", "c", "s")
_Y_W = {
    "yi": "i", "ya": "ia", "yao": "iao", "ye": "ie", "you": "iu", "yan": "ian", "yin": "in",
    "yang": "iang", "ying": "ing", "yong": "iong", "yu": "ü", "yue": "üe", "yuan": "üan", "yun": "ün",
    "wu": "u", "wa": "ua", "wo": "uo", "wai": "uai", "wei": "ui", "wan": "uan", "wen": "un", "wang": "uang",
}
_Y_W_INV = {v: k for k, v in _Y_W.items()}


@dataclass(frozen=True, order=True)
class BrailleCell:
    """Six-dot cell; bit i of ``dots`` is dot i+1 (1-3 left column, 4-6 right)."""

    dots: int

    def __post_init__(self):
        if not 0 <= self.dots <= 63:
            raise ValueError(f"cell mask {self.dots} outside [0, 63]")

    @classmethod
    def from_dots(cls, numbers):
        mask = 0
        for ch in str(numbers):
            d = int(ch)
            if not 1 <= d <= 6:
                raise ValueError(f"dot number {d} outside 1..6")
            mask |= 1 << (d - 1)
        return cls(mask)

    @property
    def raised(self):
        return [i + 1 for i in range(6) if self.dots >> i & 1]

    def __str__(self):
        return "".join(map(str, self.raised)) or "0"


class Kind(str, enum.Enum):
    SPELL = "Spell"
    NUMBER = "Number"
    PUNCT = "Punct"


@dataclass(frozen=True)
class TextUnit:
    kind: Kind
    initial: str = ""
    final: str = ""
    tone: int = 0
    digits: str = ""
    punct: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.SPELL:
            if self.tone not in (1, 2, 3, 4) or not self.final or self.digits or self.punct:
                raise ValueError(f"invalid Spell unit {self!r}")
        elif self.kind is Kind.NUMBER:
            if not self.digits or not self.digits.isdigit() or self.initial or self.final or self.tone or self.punct:
                raise ValueError(f"invalid Number unit {self!r}")
        elif len(self.punct) != 1 or self.initial or self.final or self.tone or self.digits:
            raise ValueError(f"invalid Punct unit {self!r}")

    @classmethod
    def spell(cls, initial, final, tone):
        return cls(Kind.SPELL, initial=initial, final=final, tone=int(tone))

    @classmethod
    def number(cls, digits):
        return cls(Kind.NUMBER, digits=str(digits))

    @classmethod
    def punctuation(cls, symbol):
        return cls(Kind.PUNCT, punct=symbol)

    @property
    def syllable(self):
        return spelling(self.initial, self.final)

    def __str__(self):
        if self.kind is Kind.SPELL:
            return f"{self.syllable}{self.tone}"
        return self.digits if self.kind is Kind.NUMBER else self.punct

    def to_record(self):
        return {
            "kind": self.kind.value,
            "initial": self.initial,
            "final": self.final,
            "tone": self.tone,
            "digits": self.digits,
            "punct": self.punct,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(
            Kind(rec["kind"]),
            initial=rec.get("initial", ""),
            final=rec.get("final", ""),
            tone=int(rec.get("tone", 0)),
            digits=rec.get("digits", ""),
            punct=rec.get("punct", ""),
        )


def split_pinyin(spelled):
    """Split a toneless pinyin spelling into (initial, canonical final).

    ``"yuan" -> ("", "üan")``, ``"ju" -> ("j", "ü")``, ``"hao" -> ("h", "ao")``.
    """
    if spelled in _Y_W:
        return "", _Y_W[spelled]
    for ini in _INITIAL_ORDER:
        if spelled.startswith(ini) and len(spelled) > len(ini):
            fin = spelled[len(ini):]
            if ini in ("j", "q", "x") and fin.startswith("u"):
                fin = "ü" + fin[1:]
            return ini, fin
    return "", spelled


def spelling(initial, final):
    if not initial:
        return _Y_W_INV.get(final, final)
    if initial in ("j", "q", "x") and final.startswith("ü"):
        return initial + "u" + final[1:]
    return initial + final


def _parse_cells(text):
    return tuple(BrailleCell.from_dots(part) for part in text.split("-"))


@dataclass
class BrailleTable:
    version: str
    numsign: BrailleCell
    initials: dict = field(default_factory=dict)
    finals: dict = field(default_factory=dict)
    tones: dict = field(default_factory=dict)
    digits: dict = field(default_factory=dict)
    puncts: dict = field(default_factory=dict)
    syllables: dict = field(default_factory=dict)  # (initial, final) -> cells without tone

    @classmethod
    def parse(cls, text, version="unknown"):
        entries = {"initial": {}, "final": {}, "tone": {}, "digit": {}, "punct": {}}
        syllables = {}
        numsign = None
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.startswith("# Chinese Braille") and "version" in line:
                version = line.rsplit("version", 1)[1].strip()
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"table line {lineno}: expected 3 tab-separated fields")
            kind, symbol, dots = parts
            cells = _parse_cells(dots)
            if kind == "numsign":
                numsign = cells[0]
            elif kind == "syllable":
                syllables[split_pinyin(symbol)] = cells
            elif kind in entries:
                entries[kind][symbol if kind != "tone" else int(symbol)] = cells if kind == "punct" else cells[0]
            else:
                raise ValueError(f"table line {lineno}: unknown entry kind {kind!r}")
        if numsign is None:
            raise ValueError("table has no number sign")
        table = cls(version, numsign, entries["initial"], entries["final"], entries["tone"],
                    entries["digit"], entries["punct"], syllables)
        for (ini, fin), cells in syllables.items():
            if table.syllable_cells(ini, fin) != cells:
                raise ValueError(f"syllable {spelling(ini, fin)} cells disagree with its initial/final")
        return table

    def syllable_cells(self, initial, final):
        if initial and initial not in self.initials:
            raise UnknownSyllablePart(f"initial {initial!r} not in table")
        if final not in self.finals:
            raise UnknownSyllablePart(f"final {final!r} not in table")
        if initial in APICAL_INITIALS and final == "i":
            return (self.initials[initial],)
        head = (self.initials[initial],) if initial else ()
        return head + (self.finals[final],)

    def spell_units(self):
        return [TextUnit.spell(i, f, t) for (i, f) in self.syllables for t in sorted(self.tones)]

    def punct_units(self):
        return [TextUnit.punctuation(p) for p in self.puncts]

    def number_units(self, max_digits=2):
        units = []
        for n in range(1, max_digits + 1):
            units += [TextUnit.number(str(v).zfill(n)) for v in range(10 ** n)]
        return units

    def all_units(self, max_digits=2):
        return self.spell_units() + self.number_units(max_digits) + self.punct_units()


@lru_cache(maxsize=None)
def load_table(path=None):
    if path is None:
        text = resources.files("braillespeech.braille_codec").joinpath("data", TABLE_NAME).read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return BrailleTable.parse(text)


def pinyin_to_cells(unit, table=None):
    """Encode a text unit as its Braille cell sequence."""
    table = table or load_table()
    if unit.kind is Kind.SPELL:
        if unit.tone not in table.tones:
            raise UnknownSyllablePart(f"tone {unit.tone} not in table")
        return list(table.syllable_cells(unit.initial, unit.final)) + [table.tones[unit.tone]]
    if unit.kind is Kind.NUMBER:
        try:
            return [table.numsign] + [table.digits[d] for d in unit.digits]
        except KeyError as exc:
            raise UnknownCell(f"digit {exc.args[0]!r} not in table") from None
    if unit.punct not in table.puncts:
        raise UnknownPunct(f"punctuation {unit.punct!r} not in table")
    return list(table.puncts[unit.punct])


def cells_to_text(cells, mode, table=None):
    """Decode a cell sequence under a category, inverse of ``pinyin_to_cells``."""
    table = table or load_table()
    mode = Kind(mode)
    cells = tuple(BrailleCell(c) if isinstance(c, int) else c for c in cells)
    if not cells:
        raise UnknownCell("empty cell sequence")
    if mode is Kind.SPELL:
        if len(cells) < 2:
            raise UnknownCell("a syllable needs at least a body cell and a tone cell")
        tones = [t for t, c in table.tones.items() if c == cells[-1]]
        if not tones:
            raise UnknownCell(f"cell {cells[-1]} is not a tone mark")
        body = cells[:-1]
        hits = [key for key, sc in table.syllables.items() if sc == body]
        if not hits:
            raise UnknownCell(f"no syllable spelled {'-'.join(map(str, body))}")
        if len(hits) > 1 or len(tones) > 1:
            names = ", ".join(spelling(*h) for h in hits)
            raise AmbiguousDecoding(f"cells {'-'.join(map(str, body))} match {names}")
        return TextUnit.spell(hits[0][0], hits[0][1], tones[0])
    if mode is Kind.NUMBER:
        if cells[0] != table.numsign or len(cells) < 2:
            raise UnknownCell("number must start with the number sign and contain digits")
        inverse = {c: d for d, c in table.digits.items()}
        out = []
        for c in cells[1:]:
            if c not in inverse:
                raise UnknownCell(f"cell {c} is not a digit")
            out.append(inverse[c])
        return TextUnit.number("".join(out))
    hits = [p for p, pc in table.puncts.items() if pc == cells]
    if not hits:
        raise UnknownCell(f"no punctuation spelled {'-'.join(map(str, cells))}")
    if len(hits) > 1:
        raise AmbiguousDecoding(f"cells match punctuation {hits}")
    return TextUnit.punctuation(hits[0])
