"""Per-subword contextual vectors: a deterministic reference encoder and a
binary embedding-file interchange format.

The reference encoder stands in for a frozen neural encoder so the whole
pipeline stays testable: each subword id gets a reproducible unit vector
from a counter-based generator, then neighbouring vectors are blended with
weights decaying by distance from the centre position (so token order
matters, giving cheap context sensitivity), and the sequence-level vector
is the renormalized mean of the result.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tokenization import TokenizedText

DEFAULT_D_ENC = 64
DEFAULT_WINDOW = 2

# Out-of-band generator key for the sequence vector of an empty text.
_EMPTY_TEXT_KEY = 2**64 - 1

_MAGIC = b"CBEM"
_VERSION = 1


@dataclass
class EncoderOutput:
    """One sequence vector plus one vector per subword position."""

    cls_raw: np.ndarray
    token_raw: np.ndarray

    @property
    def d_enc(self) -> int:
        return self.cls_raw.shape[0]


class ReferenceEncoder:
    """Deterministic stand-in encoder; identical inputs give identical bits."""

    def __init__(self, seed: int = 0, d_enc: int = DEFAULT_D_ENC,
                 window: int = DEFAULT_WINDOW):
        if d_enc < 1:
            raise ValueError("d_enc must be >= 1")
        if window < 0:
            raise ValueError("window must be >= 0")
        self.seed = int(seed) & (2**64 - 1)
        self.d_enc = d_enc
        self.window = window
        self._base_cache: dict[int, np.ndarray] = {}

    def _base_vector(self, key: int) -> np.ndarray:
        vec = self._base_cache.get(key)
        if vec is None:
            # Explicit dtype: a plain list with values above 2**63-1 would be
            # routed through float64 and lose low bits.
            key_pair = np.array([self.seed, key], dtype=np.uint64)
            gen = np.random.Generator(np.random.Philox(key=key_pair))
            vec = gen.standard_normal(self.d_enc)
            vec /= np.linalg.norm(vec)
            vec.setflags(write=False)
            self._base_cache[key] = vec
        return vec

    def encode(self, t: TokenizedText) -> EncoderOutput:
        n = len(t.subword_ids)
        if n == 0:
            cls = self._base_vector(_EMPTY_TEXT_KEY).copy()
            return EncoderOutput(cls_raw=cls, token_raw=np.zeros((0, self.d_enc)))
        base = np.stack([self._base_vector(sid) for sid in t.subword_ids])
        tokens = np.empty_like(base)
        for i in range(n):
            lo = max(0, i - self.window)
            hi = min(n, i + self.window + 1)
            if hi - lo == 1:
                # A single-vector window is already unit length.
                tokens[i] = base[i]
            else:
                # Neighbour weight 1/(1+distance): the centre dominates, so
                # reversing token order changes each position's vector.
                weights = 1.0 / (1.0 + np.abs(np.arange(lo, hi) - i))
                mean = np.average(base[lo:hi], axis=0, weights=weights)
                norm = np.linalg.norm(mean)
                tokens[i] = mean / norm if norm > 0 else mean
        cls = tokens.mean(axis=0)
        norm = np.linalg.norm(cls)
        if norm > 0:
            cls = cls / norm
        return EncoderOutput(cls_raw=cls, token_raw=tokens)

    def encode_document(self, doc_id: str, t: TokenizedText) -> EncoderOutput:
        return self.encode(t)

    def params(self) -> dict:
        return {
            "type": "reference",
            "seed": self.seed,
            "d_enc": self.d_enc,
            "window": self.window,
        }


def reference_encode(t: TokenizedText, seed: int = 0, d_enc: int = DEFAULT_D_ENC,
                     window: int = DEFAULT_WINDOW) -> EncoderOutput:
    return ReferenceEncoder(seed=seed, d_enc=d_enc, window=window).encode(t)


def write_embedding_file(path, items, d_enc: int) -> None:
    """Write (doc id, EncoderOutput) pairs; vectors stored as 32-bit floats."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        items = list(items)
        fh.write(struct.pack("<II", _VERSION, d_enc))
        fh.write(struct.pack("<Q", len(items)))
        for doc_id, out in items:
            if out.cls_raw.shape[0] != d_enc:
                raise ValueError(f"doc {doc_id!r}: vector width {out.cls_raw.shape[0]} != {d_enc}")
            id_bytes = doc_id.encode("utf-8")
            fh.write(struct.pack("<Q", len(id_bytes)))
            fh.write(id_bytes)
            n = out.token_raw.shape[0]
            fh.write(struct.pack("<I", n))
            block = np.concatenate([out.cls_raw.reshape(1, -1), out.token_raw])
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def _read_exact(fh, count: int, context: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"truncated file ({context})")
    return data


def read_embedding_file(path) -> dict[str, EncoderOutput]:
    """Read the file back; stored floats round-trip exactly."""
    with open(path, "rb") as fh:
        header = fh.read(4)
        if header != _MAGIC:
            raise ValueError("bad format: wrong magic")
        version, d_enc = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != _VERSION:
            raise ValueError(f"bad format: unsupported version {version}")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "header"))
        docs: dict[str, EncoderOutput] = {}
        for i in range(count):
            ctx = f"document {i}"
            (id_len,) = struct.unpack("<Q", _read_exact(fh, 8, ctx))
            doc_id = _read_exact(fh, id_len, ctx).decode("utf-8")
            (n,) = struct.unpack("<I", _read_exact(fh, 4, ctx))
            raw = _read_exact(fh, (n + 1) * d_enc * 4, ctx)
            block = np.frombuffer(raw, dtype="<f4").reshape(n + 1, d_enc)
            if doc_id in docs:
                raise ValueError(f"bad format: duplicate doc id {doc_id!r}")
            docs[doc_id] = EncoderOutput(cls_raw=block[0].copy(),
                                         token_raw=block[1:].copy())
        trailing = fh.read(1)
        if trailing:
            raise ValueError("bad format: trailing bytes after last document")
        return docs


class EmbeddingStore:
    """Externally computed encoder outputs, keyed by document id."""

    def __init__(self, docs: dict[str, EncoderOutput], d_enc: int):
        self.docs = docs
        self.d_enc = d_enc

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        docs = read_embedding_file(path)
        if not docs:
            raise ValueError("bad format: embedding file holds no documents")
        d_enc = next(iter(docs.values())).d_enc
        return cls(docs, d_enc)

    def encode_document(self, doc_id: str, t: TokenizedText) -> EncoderOutput:
        out = self.docs.get(doc_id)
        if out is None:
            raise KeyError(f"no embedding stored for doc {doc_id!r}")
        if out.token_raw.shape[0] != len(t.subword_ids):
            raise ValueError(
                f"doc {doc_id!r}: {out.token_raw.shape[0]} stored vectors for "
                f"{len(t.subword_ids)} subwords"
            )
        return out

    def params(self) -> dict:
        return {"type": "embedding-file", "d_enc": self.d_enc}
