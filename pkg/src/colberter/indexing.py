"""Retrieval structures and their on-disk format.

An index directory holds five artifacts: a human-readable manifest, the
dense CLS matrix (cls.bin), the per-document word-vector store (words.bin),
the inverted index over word hashes (inv.bin, exact-match builds only), and
an ids.tsv sidecar with external ids and original text. Binary files are
little-endian and end with a crc32 of all preceding bytes. The heads and
vocabulary used at build time are copied in so a directory is
self-contained for querying.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .encoding import ReferenceEncoder
from .reduction import PASSAGE, EncodedText, ReductionHeads, WordEntry, encode_text
from .tokenization import Vocabulary, tokenize

_VERSION = 1
_CLS_MAGIC = b"CBCL"
_WORDS_MAGIC = b"CBWD"
_INV_MAGIC = b"CBIV"

MANIFEST_NAME = "manifest.json"
CLS_NAME = "cls.bin"
WORDS_NAME = "words.bin"
INV_NAME = "inv.bin"
IDS_NAME = "ids.tsv"
HEADS_NAME = "heads.bin"
VOCAB_NAME = "vocab.txt"

# Circled-numeral aliases for the five workflows, recorded in the manifest.
WORKFLOW_ALIASES = {
    "1": "HYBRID",
    "2": "SPARSE_THEN_CLS",
    "3": "DENSE_THEN_TOKEN",
    "4": "DENSE_ONLY",
    "5": "SPARSE_ONLY",
}


@dataclass
class IndexManifest:
    d_cls: int
    d_t: int
    d_u: int | None
    em_enabled: bool
    stemming: bool
    threshold: float
    doc_count: int
    total_word_entries: int
    store_removed_words: bool
    encoder: dict
    config_hash: str
    version: int = _VERSION

    @property
    def word_dim(self) -> int:
        return self.d_t if self.d_u is None else self.d_u

    def as_dict(self) -> dict:
        payload = asdict(self)
        payload["workflow_aliases"] = WORKFLOW_ALIASES
        return payload

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "IndexManifest":
        payload = json.loads(text)
        payload.pop("workflow_aliases", None)
        return cls(**payload)


def _config_hash(encoder_params: dict, heads: ReductionHeads, em_enabled: bool,
                 stemming: bool, threshold: float, store_removed_words: bool,
                 vocab: Vocabulary) -> str:
    vocab_digest = hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest()
    config = {
        "encoder": encoder_params,
        "d_cls": heads.cls_dim,
        "d_t": heads.token_dim,
        "d_u": heads.uni_dim,
        "em_enabled": em_enabled,
        "stemming": stemming,
        "threshold": threshold,
        "store_removed_words": store_removed_words,
        "vocab_sha256": vocab_digest,
    }
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _escape(s: str) -> str:
    return (s.replace("\\", "\\\\").replace("\t", "\\t")
            .replace("\n", "\\n").replace("\r", "\\r"))


def _unescape(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _finish_with_crc(buf: io.BytesIO, path: Path) -> None:
    payload = buf.getvalue()
    path.write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def _read_checked(path: Path, magic: bytes) -> io.BytesIO:
    raw = path.read_bytes()
    if len(raw) < len(magic) + 4:
        raise ValueError(f"truncated file ({path.name})")
    payload, stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(payload) != stored:
        raise ValueError(f"checksum mismatch in {path.name}")
    if payload[:4] != magic:
        raise ValueError(f"bad format: wrong magic in {path.name}")
    buf = io.BytesIO(payload)
    buf.seek(4)
    return buf


def _take(buf: io.BytesIO, count: int, name: str) -> bytes:
    data = buf.read(count)
    if len(data) != count:
        raise ValueError(f"truncated file ({name})")
    return data


class IndexSet:
    """All retrieval structures for one corpus, immutable after build/load."""

    def __init__(self, manifest: IndexManifest, doc_ids: list[str],
                 texts: list[str], cls_matrix: np.ndarray,
                 word_store: list[tuple[list[WordEntry], list[str]]],
                 inverted: dict[int, list[tuple[int, np.ndarray]]] | None,
                 heads: ReductionHeads, vocab: Vocabulary,
                 source_dir: Path | None = None):
        self.manifest = manifest
        self.doc_ids = doc_ids
        self.texts = texts
        self.cls_matrix = cls_matrix
        self.word_store = word_store
        self.inverted = inverted
        self.heads = heads
        self.vocab = vocab
        self.source_dir = source_dir
        self._ordinal = {doc_id: i for i, doc_id in enumerate(doc_ids)}

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @property
    def em_enabled(self) -> bool:
        return self.manifest.em_enabled

    def ordinal_of(self, doc_id: str) -> int:
        try:
            return self._ordinal[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc id {doc_id!r}") from None

    def fetch(self, doc_id: str):
        """Stored (cls vector, word entries, removed stems) for one doc."""
        i = self.ordinal_of(doc_id)
        words, removed = self.word_store[i]
        return self.cls_matrix[i], words, removed

    def get_text(self, doc_id: str) -> str:
        return self.texts[self.ordinal_of(doc_id)]

    def encoded_passage(self, ordinal: int) -> EncodedText:
        words, removed = self.word_store[ordinal]
        return EncodedText(cls=self.cls_matrix[ordinal], words=words,
                           removed_stems=removed, kind=PASSAGE)

    def query_encoder(self) -> ReferenceEncoder:
        params = self.manifest.encoder
        if params.get("type") != "reference":
            raise ValueError(
                "index was built from externally computed embeddings; "
                "query encoding needs an explicit encoder"
            )
        return ReferenceEncoder(seed=params["seed"], d_enc=params["d_enc"],
                                window=params["window"])

    def validate_heads(self, heads: ReductionHeads) -> None:
        if (heads.cls_dim, heads.token_dim, heads.uni_dim) != (
                self.manifest.d_cls, self.manifest.d_t, self.manifest.d_u):
            raise ValueError(
                f"heads dims (cls={heads.cls_dim}, token={heads.token_dim}, "
                f"uni={heads.uni_dim}) do not match index manifest "
                f"(cls={self.manifest.d_cls}, token={self.manifest.d_t}, "
                f"uni={self.manifest.d_u})"
            )

    # -- retrieval primitives ------------------------------------------------

    def dense_topk(self, q_cls: np.ndarray, k: int):
        """Exact top-k by CLS dot product; ties go to the lower ordinal."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.doc_count == 0:
            return []
        scores = self.cls_matrix.astype(np.float64) @ np.asarray(
            q_cls, dtype=np.float64)
        order = np.argsort(-scores, kind="stable")[:k]
        return [(self.doc_ids[i], float(scores[i])) for i in order]

    def sparse_topk(self, q: EncodedText, k: int):
        """Posting-list traversal; per-doc sums over matching query words."""
        if not self.em_enabled:
            raise ValueError("sparse retrieval requires exact-match build")
        if k < 1:
            raise ValueError("k must be >= 1")
        acc: dict[int, float] = {}
        for w in q.words:
            postings = self.inverted.get(w.hash)
            if not postings:
                continue
            qv = w.vector.astype(np.float64)
            for ordinal, vec in postings:
                acc[ordinal] = acc.get(ordinal, 0.0) + float(vec @ qv)
        ranked = sorted(acc.items(), key=lambda item: (-item[1], item[0]))[:k]
        return [(self.doc_ids[i], score) for i, score in ranked]

    # -- persistence ---------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / MANIFEST_NAME).write_text(self.manifest.to_json(),
                                               encoding="utf-8")

        buf = io.BytesIO()
        buf.write(_CLS_MAGIC)
        buf.write(struct.pack("<IIQ", _VERSION, self.manifest.d_cls,
                              self.doc_count))
        buf.write(np.ascontiguousarray(self.cls_matrix, dtype="<f4").tobytes())
        _finish_with_crc(buf, directory / CLS_NAME)

        dim = self.manifest.word_dim
        buf = io.BytesIO()
        buf.write(_WORDS_MAGIC)
        buf.write(struct.pack("<IIQ", _VERSION, dim, self.doc_count))
        for words, removed in self.word_store:
            buf.write(struct.pack("<II", len(words), len(removed)))
            for w in words:
                stem_bytes = w.stem.encode("utf-8")
                buf.write(struct.pack("<IH", w.hash, len(stem_bytes)))
                buf.write(stem_bytes)
                buf.write(np.ascontiguousarray(w.vector, dtype="<f4").tobytes())
                buf.write(struct.pack("<f", w.gate))
            for stem in removed:
                stem_bytes = stem.encode("utf-8")
                buf.write(struct.pack("<H", len(stem_bytes)))
                buf.write(stem_bytes)
        _finish_with_crc(buf, directory / WORDS_NAME)

        if self.inverted is not None:
            buf = io.BytesIO()
            buf.write(_INV_MAGIC)
            buf.write(struct.pack("<IIQ", _VERSION, dim, len(self.inverted)))
            for h in sorted(self.inverted):
                postings = self.inverted[h]
                buf.write(struct.pack("<IQ", h, len(postings)))
                for ordinal, vec in postings:
                    buf.write(struct.pack("<I", ordinal))
                    buf.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
            _finish_with_crc(buf, directory / INV_NAME)

        lines = []
        for i, doc_id in enumerate(self.doc_ids):
            lines.append(f"{i}\t{_escape(doc_id)}\t{_escape(self.texts[i])}")
        (directory / IDS_NAME).write_text("\n".join(lines) + "\n",
                                          encoding="utf-8")

        self.heads.save(directory / HEADS_NAME)
        (directory / VOCAB_NAME).write_text(
            "\n".join(self.vocab.tokens) + "\n", encoding="utf-8")
        self.source_dir = directory

    @classmethod
    def load(cls, directory) -> "IndexSet":
        directory = Path(directory)
        manifest = IndexManifest.from_json(
            (directory / MANIFEST_NAME).read_text(encoding="utf-8"))
        if manifest.version != _VERSION:
            raise ValueError(f"bad format: unsupported index version "
                             f"{manifest.version}")

        buf = _read_checked(directory / CLS_NAME, _CLS_MAGIC)
        version, d_cls, count = struct.unpack("<IIQ", _take(buf, 16, CLS_NAME))
        if version != _VERSION or d_cls != manifest.d_cls:
            raise ValueError(f"bad format: {CLS_NAME} header disagrees with manifest")
        if count != manifest.doc_count:
            raise ValueError(f"bad format: {CLS_NAME} doc count mismatch")
        raw = _take(buf, count * d_cls * 4, CLS_NAME)
        cls_matrix = np.frombuffer(raw, dtype="<f4").reshape(count, d_cls).copy()
        if buf.read(1):
            raise ValueError(f"bad format: trailing bytes in {CLS_NAME}")

        buf = _read_checked(directory / WORDS_NAME, _WORDS_MAGIC)
        version, dim, count = struct.unpack("<IIQ", _take(buf, 16, WORDS_NAME))
        if version != _VERSION or dim != manifest.word_dim:
            raise ValueError(f"bad format: {WORDS_NAME} header disagrees with manifest")
        if count != manifest.doc_count:
            raise ValueError(f"bad format: {WORDS_NAME} doc count mismatch")
        word_store = []
        for _ in range(count):
            n_words, n_removed = struct.unpack("<II", _take(buf, 8, WORDS_NAME))
            words = []
            for _ in range(n_words):
                h, stem_len = struct.unpack("<IH", _take(buf, 6, WORDS_NAME))
                stem = _take(buf, stem_len, WORDS_NAME).decode("utf-8")
                vec = np.frombuffer(_take(buf, dim * 4, WORDS_NAME),
                                    dtype="<f4").copy()
                (gate,) = struct.unpack("<f", _take(buf, 4, WORDS_NAME))
                words.append(WordEntry(hash=h, stem=stem, vector=vec, gate=gate))
            removed = []
            for _ in range(n_removed):
                (stem_len,) = struct.unpack("<H", _take(buf, 2, WORDS_NAME))
                removed.append(_take(buf, stem_len, WORDS_NAME).decode("utf-8"))
            word_store.append((words, removed))
        if buf.read(1):
            raise ValueError(f"bad format: trailing bytes in {WORDS_NAME}")

        inverted = None
        if manifest.em_enabled:
            buf = _read_checked(directory / INV_NAME, _INV_MAGIC)
            version, dim, n_hashes = struct.unpack("<IIQ", _take(buf, 16, INV_NAME))
            if version != _VERSION or dim != manifest.word_dim:
                raise ValueError(f"bad format: {INV_NAME} header disagrees with manifest")
            inverted = {}
            for _ in range(n_hashes):
                h, n_postings = struct.unpack("<IQ", _take(buf, 12, INV_NAME))
                postings = []
                for _ in range(n_postings):
                    (ordinal,) = struct.unpack("<I", _take(buf, 4, INV_NAME))
                    vec = np.frombuffer(_take(buf, dim * 4, INV_NAME),
                                        dtype="<f4").copy()
                    postings.append((ordinal, vec))
                inverted[h] = postings
            if buf.read(1):
                raise ValueError(f"bad format: trailing bytes in {INV_NAME}")

        doc_ids, texts = [], []
        with open(directory / IDS_NAME, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh.read().splitlines()):
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"bad format: {IDS_NAME} line {line_no + 1}")
                ordinal, doc_id, text = parts
                if int(ordinal) != line_no:
                    raise ValueError(f"bad format: {IDS_NAME} ordinal gap at "
                                     f"line {line_no + 1}")
                doc_ids.append(_unescape(doc_id))
                texts.append(_unescape(text))
        if len(doc_ids) != manifest.doc_count:
            raise ValueError(f"bad format: {IDS_NAME} doc count mismatch")

        heads = ReductionHeads.load(directory / HEADS_NAME)
        vocab = Vocabulary.load(directory / VOCAB_NAME)
        return cls(manifest=manifest, doc_ids=doc_ids, texts=texts,
                   cls_matrix=cls_matrix, word_store=word_store,
                   inverted=inverted, heads=heads, vocab=vocab,
                   source_dir=directory)

    def storage_stats(self) -> dict:
        """Byte and vector accounting for the stats surfaces."""
        entry_count = self.manifest.total_word_entries
        dim = self.manifest.word_dim
        stats = {
            "doc_count": self.doc_count,
            "total_word_entries": entry_count,
            "word_vectors_per_doc": entry_count / self.doc_count if self.doc_count else 0.0,
            "word_vector_bytes": entry_count * dim * 4,
            "cls_bytes": self.doc_count * self.manifest.d_cls * 4,
        }
        if self.source_dir is not None:
            files = {}
            for name in (MANIFEST_NAME, CLS_NAME, WORDS_NAME, INV_NAME,
                         IDS_NAME, HEADS_NAME, VOCAB_NAME):
                path = Path(self.source_dir) / name
                if path.exists():
                    files[name] = path.stat().st_size
            stats["file_bytes"] = files
        return stats


def build_indices(corpus, vocab: Vocabulary, encoder, heads: ReductionHeads,
                  em_enabled: bool = False, threshold: float = 0.0,
                  stemming: bool = True,
                  store_removed_words: bool = True) -> IndexSet:
    """Encode every document and assemble all retrieval structures.

    corpus is an iterable of (doc id, text) pairs; order defines ordinals.
    """
    if heads.uni_proj is not None and not em_enabled:
        raise ValueError("uni mode requires an exact-match build")
    doc_ids: list[str] = []
    texts: list[str] = []
    cls_rows: list[np.ndarray] = []
    word_store: list[tuple[list[WordEntry], list[str]]] = []
    seen: set[str] = set()
    total_entries = 0
    for doc_id, text in corpus:
        if doc_id in seen:
            raise ValueError(f"duplicate doc id {doc_id!r}")
        seen.add(doc_id)
        t = tokenize(text, vocab, stemming=stemming)
        e = encoder.encode_document(doc_id, t)
        enc = encode_text(t, e, heads, PASSAGE, threshold=threshold)
        doc_ids.append(doc_id)
        texts.append(text)
        cls_rows.append(enc.cls)
        removed = enc.removed_stems if store_removed_words else []
        word_store.append((enc.words, removed))
        total_entries += len(enc.words)
    if not doc_ids:
        raise ValueError("empty corpus")

    inverted = None
    if em_enabled:
        inverted = {}
        for ordinal, (words, _) in enumerate(word_store):
            for w in words:
                inverted.setdefault(w.hash, []).append((ordinal, w.vector))

    manifest = IndexManifest(
        d_cls=heads.cls_dim,
        d_t=heads.token_dim,
        d_u=heads.uni_dim,
        em_enabled=em_enabled,
        stemming=stemming,
        threshold=threshold,
        doc_count=len(doc_ids),
        total_word_entries=total_entries,
        store_removed_words=store_removed_words,
        encoder=encoder.params(),
        config_hash=_config_hash(encoder.params(), heads, em_enabled, stemming,
                                 threshold, store_removed_words, vocab),
    )
    return IndexSet(manifest=manifest, doc_ids=doc_ids, texts=texts,
                    cls_matrix=np.stack(cls_rows), word_store=word_store,
                    inverted=inverted, heads=heads, vocab=vocab)
