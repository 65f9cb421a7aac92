"""Whole-word representation reduction.

Turns encoder output into the compact per-text form that gets indexed:
projected CLS and token vectors, one mean vector per unique stem, a learned
ReLU gate that prunes stopword-like entries on the passage side, an
optional projection of each word vector down to a single weight, and a
32-bit hash identity per stem.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoding import EncoderOutput
from .tokenization import TokenizedText

log = logging.getLogger(__name__)

_MAGIC = b"CBHD"
_VERSION = 1

QUERY = "query"
PASSAGE = "passage"


@dataclass
class ReductionHeads:
    """Trainable parameters of every reduction stage.

    Arrays are float64 in memory; the file format stores 32-bit floats.
    """

    cls_proj: np.ndarray        # (encoder_dim, cls_dim)
    token_proj: np.ndarray      # (encoder_dim, token_dim)
    gate_weight: np.ndarray     # (token_dim,)
    gate_bias: float
    mix_logit: float            # sigmoid(mix_logit) weights the CLS score
    uni_proj: np.ndarray | None = None   # (token_dim, 1) when present

    def __post_init__(self):
        self.cls_proj = np.asarray(self.cls_proj, dtype=np.float64)
        self.token_proj = np.asarray(self.token_proj, dtype=np.float64)
        self.gate_weight = np.asarray(self.gate_weight, dtype=np.float64)
        self.gate_bias = float(self.gate_bias)
        self.mix_logit = float(self.mix_logit)
        if self.uni_proj is not None:
            self.uni_proj = np.asarray(self.uni_proj, dtype=np.float64)
            if self.uni_proj.shape != (self.token_dim, 1):
                raise ValueError(
                    f"uni projection must be ({self.token_dim}, 1), "
                    f"got {self.uni_proj.shape}"
                )
        if self.cls_proj.shape[0] != self.token_proj.shape[0]:
            raise ValueError("cls and token projections disagree on encoder width")
        if self.gate_weight.shape != (self.token_dim,):
            raise ValueError("gate weight width must equal the token dimension")
        for name, value in self.named_params():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"non-finite parameter: {name}")

    @property
    def encoder_dim(self) -> int:
        return self.cls_proj.shape[0]

    @property
    def cls_dim(self) -> int:
        return self.cls_proj.shape[1]

    @property
    def token_dim(self) -> int:
        return self.token_proj.shape[1]

    @property
    def uni_dim(self) -> int | None:
        return None if self.uni_proj is None else self.uni_proj.shape[1]

    @property
    def word_dim(self) -> int:
        """Dimension of stored word vectors (after the optional uni stage)."""
        return self.token_dim if self.uni_proj is None else self.uni_proj.shape[1]

    def named_params(self) -> list[tuple[str, np.ndarray | float]]:
        out = [
            ("cls_proj", self.cls_proj),
            ("token_proj", self.token_proj),
            ("gate_weight", self.gate_weight),
            ("gate_bias", self.gate_bias),
            ("mix_logit", self.mix_logit),
        ]
        if self.uni_proj is not None:
            out.append(("uni_proj", self.uni_proj))
        return out

    def copy(self) -> "ReductionHeads":
        return ReductionHeads(
            cls_proj=self.cls_proj.copy(),
            token_proj=self.token_proj.copy(),
            gate_weight=self.gate_weight.copy(),
            gate_bias=self.gate_bias,
            mix_logit=self.mix_logit,
            uni_proj=None if self.uni_proj is None else self.uni_proj.copy(),
        )

    @classmethod
    def initialize(cls, encoder_dim: int, cls_dim: int, token_dim: int,
                   seed: int = 0, uni: bool = False) -> "ReductionHeads":
        """Seeded init: projections uniform(+-1/sqrt(fan_in)), gate open."""
        rng = np.random.default_rng(seed)

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            cls_proj=uniform(encoder_dim, (encoder_dim, cls_dim)),
            token_proj=uniform(encoder_dim, (encoder_dim, token_dim)),
            gate_weight=np.zeros(token_dim),
            gate_bias=0.5,
            mix_logit=0.0,
            uni_proj=uniform(token_dim, (token_dim, 1)) if uni else None,
        )

    def save(self, path) -> None:
        d_u = 0 if self.uni_proj is None else self.uni_proj.shape[1]
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIII", _VERSION, self.encoder_dim,
                                 self.cls_dim, self.token_dim, d_u))
            parts = [self.cls_proj.ravel(), self.token_proj.ravel(),
                     self.gate_weight.ravel(),
                     np.array([self.gate_bias, self.mix_logit])]
            if self.uni_proj is not None:
                parts.append(self.uni_proj.ravel())
            fh.write(np.concatenate(parts).astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "ReductionHeads":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError("bad format: wrong magic")
            header = fh.read(20)
            if len(header) != 20:
                raise ValueError("truncated file (header)")
            version, d_enc, d_cls, d_t, d_u = struct.unpack("<IIIII", header)
            if version != _VERSION:
                raise ValueError(f"bad format: unsupported version {version}")
            expected = d_enc * d_cls + d_enc * d_t + d_t + 2 + d_t * d_u
            raw = fh.read(expected * 4)
            if len(raw) != expected * 4 or fh.read(1):
                raise ValueError("truncated file (parameter block)")
            flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        pos = 0

        def take(count):
            nonlocal pos
            chunk = flat[pos:pos + count]
            pos += count
            return chunk

        cls_proj = take(d_enc * d_cls).reshape(d_enc, d_cls)
        token_proj = take(d_enc * d_t).reshape(d_enc, d_t)
        gate_weight = take(d_t)
        gate_bias, mix_logit = take(2)
        uni_proj = take(d_t * d_u).reshape(d_t, d_u) if d_u else None
        return cls(cls_proj=cls_proj, token_proj=token_proj,
                   gate_weight=gate_weight, gate_bias=gate_bias,
                   mix_logit=mix_logit, uni_proj=uni_proj)


@dataclass
class WordEntry:
    """One stored unique word: hash identity, display stem, vector, gate."""

    hash: int
    stem: str
    vector: np.ndarray
    gate: float


@dataclass
class EncodedText:
    cls: np.ndarray
    words: list[WordEntry]
    removed_stems: list[str]
    kind: str


def project_2way(e: EncoderOutput, heads: ReductionHeads):
    """Dimension-reduce the CLS vector and every token vector (no biases)."""
    if e.cls_raw.shape[0] != heads.encoder_dim:
        raise ValueError(
            f"cls_raw has dimension {e.cls_raw.shape[0]}, "
            f"projection expects {heads.encoder_dim}"
        )
    if e.token_raw.shape[1:] and e.token_raw.shape[1] != heads.encoder_dim:
        raise ValueError(
            f"token_raw has dimension {e.token_raw.shape[1]}, "
            f"projection expects {heads.encoder_dim}"
        )
    cls = e.cls_raw @ heads.cls_proj
    tokens = e.token_raw @ heads.token_proj
    return cls, tokens


def aggregate_whole_words(tokens: np.ndarray, t: TokenizedText) -> list[tuple[str, np.ndarray]]:
    """One vector per unique stem: mean over all its subword positions."""
    if tokens.shape[0] != len(t.subword_ids):
        raise ValueError(
            f"{tokens.shape[0]} token vectors for {len(t.subword_ids)} subwords"
        )
    return [(stem, tokens[positions].mean(axis=0))
            for stem, positions in t.unique_stems]


def stopword_gate(words, heads: ReductionHeads) -> list[tuple[str, np.ndarray, float]]:
    """ReLU gate per word; vectors are left untouched at this stage."""
    out = []
    for stem, vec in words:
        gate = float(vec @ heads.gate_weight + heads.gate_bias)
        out.append((stem, vec, max(0.0, gate)))
    return out


def apply_gate(gated, threshold: float = 0.0):
    """Drop entries at or below the threshold; scale survivors by their gate."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    kept, removed = [], []
    for stem, vec, gate in gated:
        if gate <= threshold:
            removed.append(stem)
        else:
            kept.append((stem, vec * gate, gate))
    return kept, removed


def uni_project(words, heads: ReductionHeads):
    """Project word vectors down to single weights (uni mode only)."""
    if heads.uni_proj is None:
        raise ValueError("uni projection requested but heads have no uni layer")
    return [(stem, vec @ heads.uni_proj, gate) for stem, vec, gate in words]


def word_hash(stem: str) -> int:
    """Big-endian first 4 bytes of sha256 of the UTF-8 stem."""
    if not stem:
        raise ValueError("cannot hash an empty stem")
    digest = hashlib.sha256(stem.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def encode_text(t: TokenizedText, e: EncoderOutput, heads: ReductionHeads,
                kind: str, threshold: float = 0.0) -> EncodedText:
    """Full reduction pipeline for one text.

    Passages go through gating (drop + scale); queries keep every word at
    gate 1.0. Output vectors are cast to float32 once so encoded text round
    trips bit-identically through the index files.
    """
    if kind not in (QUERY, PASSAGE):
        raise ValueError(f"kind must be {QUERY!r} or {PASSAGE!r}")
    cls, tokens = project_2way(e, heads)
    means = aggregate_whole_words(tokens, t)
    if kind == PASSAGE:
        kept, removed = apply_gate(stopword_gate(means, heads), threshold)
    else:
        kept = [(stem, vec, 1.0) for stem, vec in means]
        removed = []
    if heads.uni_proj is not None:
        kept = uni_project(kept, heads)

    words: list[WordEntry] = []
    by_hash: dict[int, WordEntry] = {}
    for stem, vec, gate in kept:
        h = word_hash(stem)
        gate32 = float(np.float32(gate))
        existing = by_hash.get(h)
        if existing is not None:
            log.warning("hash collision within one text: %r and %r share %08x",
                        existing.stem, stem, h)
            existing.gate = max(existing.gate, gate32)
            continue
        entry = WordEntry(hash=h, stem=stem,
                          vector=np.asarray(vec, dtype=np.float32).reshape(-1),
                          gate=gate32)
        by_hash[h] = entry
        words.append(entry)
    return EncodedText(cls=np.asarray(cls, dtype=np.float32),
                       words=words, removed_stems=removed, kind=kind)
