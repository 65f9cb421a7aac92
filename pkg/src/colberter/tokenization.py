"""Whole-word splitting, WordPiece subwords, and stem-keyed unique words.

A text is first split into whole words (runs of non-space, non-punctuation
characters; every punctuation character stands alone). Each whole word is
then lowercased and broken into subword pieces by greedy longest-prefix
lookup against a fixed vocabulary, and collapsed to a stem key so that all
inflections of a word share one entry.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

from .stemming import porter_stem

UNKNOWN_TOKEN = "[UNK]"


def _is_punctuation(ch: str) -> bool:
    # Unicode categories P* (punctuation) and S* (symbols).
    return unicodedata.category(ch)[0] in ("P", "S")


@dataclass(frozen=True)
class Vocabulary:
    """Subword inventory; token ids are dense line numbers."""

    tokens: tuple[str, ...]
    token_to_id: dict[str, int] = field(repr=False)
    unk_id: int

    @classmethod
    def from_tokens(cls, tokens) -> "Vocabulary":
        tokens = tuple(tokens)
        mapping = {tok: i for i, tok in enumerate(tokens)}
        if len(mapping) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        if UNKNOWN_TOKEN not in mapping:
            raise ValueError(f"vocabulary is missing {UNKNOWN_TOKEN}")
        return cls(tokens=tokens, token_to_id=mapping, unk_id=mapping[UNKNOWN_TOKEN])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_tokens(fh.read().splitlines())

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class TokenizedText:
    """Alignment of whole words, subword ids, and unique stem keys.

    unique_stems maps each stem to the subword positions of every
    occurrence of any word sharing that stem, in first-occurrence order.
    word_stems[i] is the stem key of whole word i.
    """

    whole_words: list[tuple[str, tuple[int, int]]]
    subword_ids: list[int]
    subword_to_word: list[int]
    unique_stems: list[tuple[str, list[int]]]
    word_stems: list[str]


def split_whole_words(text: str) -> list[tuple[str, tuple[int, int]]]:
    """Split on whitespace; every punctuation character is its own word."""
    words: list[tuple[str, tuple[int, int]]] = []
    start = -1
    for i, ch in enumerate(text):
        if ch.isspace():
            if start >= 0:
                words.append((text[start:i], (start, i)))
                start = -1
        elif _is_punctuation(ch):
            if start >= 0:
                words.append((text[start:i], (start, i)))
                start = -1
            words.append((ch, (i, i + 1)))
        elif start < 0:
            start = i
    if start >= 0:
        words.append((text[start:], (start, len(text))))
    return words


def wordpiece_tokenize(word: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-prefix match; unmatchable words collapse to [UNK]."""
    if not word:
        raise ValueError("cannot tokenize an empty word")
    word = word.lower()
    ids: list[int] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece_id = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            piece_id = vocab.token_to_id.get(piece)
            if piece_id is not None:
                break
            end -= 1
        if piece_id is None:
            return [vocab.unk_id]
        ids.append(piece_id)
        start = end
    return ids


def tokenize(text: str, vocab: Vocabulary, stemming: bool = True) -> TokenizedText:
    whole_words = split_whole_words(text)
    subword_ids: list[int] = []
    subword_to_word: list[int] = []
    word_stems: list[str] = []
    positions_by_stem: dict[str, list[int]] = {}
    stem_order: list[str] = []
    for w_idx, (surface, _) in enumerate(whole_words):
        lower = surface.lower()
        key = porter_stem(lower) if stemming else lower
        pieces = wordpiece_tokenize(lower, vocab)
        first = len(subword_ids)
        subword_ids.extend(pieces)
        subword_to_word.extend([w_idx] * len(pieces))
        word_stems.append(key)
        if key not in positions_by_stem:
            positions_by_stem[key] = []
            stem_order.append(key)
        positions_by_stem[key].extend(range(first, first + len(pieces)))
    return TokenizedText(
        whole_words=whole_words,
        subword_ids=subword_ids,
        subword_to_word=subword_to_word,
        unique_stems=[(s, positions_by_stem[s]) for s in stem_order],
        word_stems=word_stems,
    )


@dataclass(frozen=True)
class TokenStats:
    """Per-document averages over a corpus; counts include punctuation words."""

    doc_count: int
    all_subwords: float
    unique_subwords: float
    all_words: float
    unique_words: float
    unique_stemmed_words: float
    retained_pct: float
    stemming: bool

    def as_dict(self) -> dict:
        return {
            "doc_count": self.doc_count,
            "all_subwords": self.all_subwords,
            "unique_subwords": self.unique_subwords,
            "all_words": self.all_words,
            "unique_words": self.unique_words,
            "unique_stemmed_words": self.unique_stemmed_words,
            "retained_pct": self.retained_pct,
            "stemming": self.stemming,
            "punctuation_counted": True,
        }


def corpus_stats(texts, vocab: Vocabulary, stemming: bool = True) -> TokenStats:
    """Arithmetic means of the five per-document counts.

    Per-document counts are integers and are accumulated as Python ints,
    so the result is exactly permutation-invariant.
    """
    totals = [0, 0, 0, 0, 0]
    n = 0
    for text in texts:
        t = tokenize(text, vocab, stemming=stemming)
        counts = (
            len(t.subword_ids),
            len(set(t.subword_ids)),
            len(t.whole_words),
            len({surface.lower() for surface, _ in t.whole_words}),
            len(t.unique_stems),
        )
        for i, c in enumerate(counts):
            totals[i] += c
        n += 1
    if n == 0:
        raise ValueError("empty corpus")
    means = [tot / n for tot in totals]
    retained = means[4] / means[0] if means[0] else 0.0
    return TokenStats(
        doc_count=n,
        all_subwords=means[0],
        unique_subwords=means[1],
        all_words=means[2],
        unique_words=means[3],
        unique_stemmed_words=means[4],
        retained_pct=retained,
        stemming=stemming,
    )
