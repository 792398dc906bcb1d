"""Mandarin text normalization and tokenization.

Raw text (hanzi, digits, URLs, Latin abbreviations, or already-normalized
pinyin) is rewritten into a flat sequence of speakable tokens: pinyin
syllables with tone digits 1-5, single uppercase Latin letters, or
whitelisted literal word units such as "com". Digits are read digit by
digit; runs of >= 3 identical letters are read as a count plus the letter.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class TextNormError(ValueError):
    """Raised for input that cannot be normalized."""


class OOVError(KeyError):
    """Raised when a token is missing from the vocabulary under strict policy."""


DIGIT_PINYIN = {
    "0": "ling2",
    "1": "yi1",
    "2": "er4",
    "3": "san1",
    "4": "si4",
    "5": "wu3",
    "6": "liu4",
    "7": "qi1",
    "8": "ba1",
    "9": "jiu3",
}

# Literal word units passed through as-is instead of being spelled out.
WORD_UNITS = frozenset({"com", "cn", "net", "org", "edu", "gov"})

DOT_TOKEN = "dian3"

# initial + final (+ optional coda) + tone digit; v stands in for u-umlaut
_PINYIN_RE = re.compile(r"^(?:zh|ch|sh|[bpmfdtnlgkhjqxrzcsyw])?[aeiouvü]{1,3}(?:ng|n|r)?[1-5]$")

_HANZI_RE = re.compile(r"[㐀-䶿一-鿿]")

# One raw chunk is split into these segment kinds, in order of preference:
# dotted URL-like groups, alphanumeric runs (possible pinyin), digit runs,
# single hanzi, anything else one character at a time.
_SEGMENT_RE = re.compile(
    r"(?P<url>[A-Za-z0-9]+(?:\.[A-Za-z0-9]+)+)"
    r"|(?P<alnum>[A-Za-z]+[0-9]*)"
    r"|(?P<digits>[0-9]+)"
    r"|(?P<hanzi>[㐀-䶿一-鿿])"
    r"|(?P<other>.)",
    re.DOTALL,
)

# Punctuation is dropped, not spoken (except "." inside URLs).
_PUNCTUATION = set(
    ".,!?;:'\"()[]{}<>-_/\\|@#$%^&*+=~`"
    "。，？！；：“”‘’"
    "《》〈〉【】『』—…"
    "、（）·．‘’～"
)


def is_pinyin_token(token: str) -> bool:
    return bool(_PINYIN_RE.match(token))


def _is_valid_token(token: str) -> bool:
    if is_pinyin_token(token):
        return True
    if len(token) == 1 and token.isascii() and token.isupper():
        return True
    return token in WORD_UNITS


@dataclass(frozen=True)
class NormalizedText:
    """Sequence of speakable tokens produced by normalize_text."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise TextNormError("normalized text must contain at least one token")
        for tok in self.tokens:
            if not _is_valid_token(tok):
                raise TextNormError(f"invalid normalized token: {tok!r}")

    def __str__(self) -> str:
        return " ".join(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __len__(self):
        return len(self.tokens)


def load_lexicon(path: str | Path | None = None) -> dict[str, str]:
    """Load a hanzi -> toned-pinyin lexicon ("hanzi<TAB>pinyin" per line)."""
    if path is None:
        text = resources.files("voiceclone").joinpath("data/lexicon.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    lexicon: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            hanzi, pinyin = line.split("\t")
        except ValueError as exc:
            raise TextNormError(f"lexicon line {lineno}: expected 'hanzi<TAB>pinyin'") from exc
        if not is_pinyin_token(pinyin):
            raise TextNormError(f"lexicon line {lineno}: bad pinyin {pinyin!r}")
        # First entry wins: the lexicon lists the most frequent reading first.
        lexicon.setdefault(hanzi, pinyin)
    return lexicon


_DEFAULT_LEXICON: dict[str, str] | None = None


def default_lexicon() -> dict[str, str]:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = load_lexicon()
    return _DEFAULT_LEXICON


def _spell_digits(digits: str) -> list[str]:
    return [DIGIT_PINYIN[d] for d in digits]


def _spell_alpha(word: str) -> list[str]:
    """Spell a Latin chunk: word units stay literal, repeated letters become
    a count plus the letter, anything else is read letter by letter."""
    lower = word.lower()
    if lower in WORD_UNITS:
        return [lower]
    if len(word) >= 3 and len(set(lower)) == 1:
        return _spell_digits(str(len(word))) + [lower[0].upper()]
    return [c.upper() for c in word]


def _normalize_alnum(chunk: str) -> list[str]:
    lower = chunk.lower()
    if is_pinyin_token(lower):
        return [lower]
    out: list[str] = []
    for run in re.findall(r"[A-Za-z]+|[0-9]+", chunk):
        out.extend(_spell_digits(run) if run.isdigit() else _spell_alpha(run))
    return out


def _normalize_url(chunk: str) -> list[str]:
    out: list[str] = []
    for i, part in enumerate(chunk.split(".")):
        if i > 0:
            out.append(DOT_TOKEN)
        out.extend(_normalize_alnum(part) if not part.isdigit() else _spell_digits(part))
    return out


def normalize_text(raw: str, lexicon: Mapping[str, str] | None = None) -> NormalizedText:
    """Rewrite raw Mandarin/mixed text into speakable tokens.

    Unmapped hanzi raise TextNormError listing the offending characters.
    """
    if raw is None or not raw.strip():
        raise TextNormError("empty input")
    lexicon = default_lexicon() if lexicon is None else lexicon

    tokens: list[str] = []
    unmapped: list[str] = []
    for chunk in raw.split():
        for match in _SEGMENT_RE.finditer(chunk):
            kind = match.lastgroup
            text = match.group()
            if kind == "url":
                tokens.extend(_normalize_url(text))
            elif kind == "alnum":
                tokens.extend(_normalize_alnum(text))
            elif kind == "digits":
                tokens.extend(_spell_digits(text))
            elif kind == "hanzi":
                pinyin = lexicon.get(text)
                if pinyin is None:
                    unmapped.append(text)
                else:
                    tokens.append(pinyin)
            elif text in _PUNCTUATION or text.isspace():
                continue
            else:
                raise TextNormError(f"unsupported character {text!r} in input")
    if unmapped:
        raise TextNormError(
            "no lexicon entry for hanzi: " + " ".join(sorted(set(unmapped)))
        )
    if not tokens:
        raise TextNormError("input reduced to nothing after normalization")
    return NormalizedText(tuple(tokens))


PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<bos>", "<eos>", "<unk>"
_RESERVED = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


@dataclass(frozen=True)
class Vocab:
    """Immutable token <-> id bijection with reserved ids 0..3."""

    token_to_id: Mapping[str, int]

    PAD = 0
    BOS = 1
    EOS = 2
    UNK = 3

    def __post_init__(self):
        mapping = dict(self.token_to_id)
        object.__setattr__(self, "token_to_id", mapping)
        for i, tok in enumerate(_RESERVED):
            if mapping.get(tok) != i:
                raise ValueError(f"reserved token {tok} must have id {i}")
        ids = list(mapping.values())
        if len(set(ids)) != len(ids):
            raise ValueError("vocab ids must be unique (bijection)")
        object.__setattr__(
            self, "_id_to_token", {i: t for t, i in mapping.items()}
        )

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_for(self, token: str, strict: bool = True) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            if strict:
                raise OOVError(f"token not in vocabulary: {token!r}") from None
            return self.UNK

    def token_for(self, idx: int) -> str:
        try:
            return self._id_to_token[idx]
        except KeyError:
            raise OOVError(f"id not in vocabulary: {idx}") from None


@dataclass(frozen=True)
class TokenSequence:
    """Vocabulary ids for one utterance, wrapped in BOS/EOS."""

    ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if len(self.ids) < 1:
            raise ValueError("token sequence must be non-empty")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        return sum(1 for i in self.ids if i != Vocab.PAD)


def build_vocab(corpus: Iterable[NormalizedText]) -> Vocab:
    """Deterministic vocab: reserved ids, then corpus tokens sorted lexicographically."""
    seen: set[str] = set()
    count = 0
    for text in corpus:
        count += 1
        seen.update(text.tokens)
    if count == 0:
        raise ValueError("corpus must be non-empty")
    mapping = {tok: i for i, tok in enumerate(_RESERVED)}
    for offset, tok in enumerate(sorted(seen)):
        mapping[tok] = len(_RESERVED) + offset
    return Vocab(mapping)


def tokenize(text: NormalizedText, vocab: Vocab, strict: bool = True) -> TokenSequence:
    ids = [Vocab.BOS]
    ids.extend(vocab.id_for(tok, strict=strict) for tok in text.tokens)
    ids.append(Vocab.EOS)
    return TokenSequence(tuple(ids))


def detokenize(seq: TokenSequence, vocab: Vocab) -> NormalizedText:
    reserved = {Vocab.PAD, Vocab.BOS, Vocab.EOS}
    tokens = [vocab.token_for(i) for i in seq.ids if i not in reserved]
    return NormalizedText(tuple(tokens))
