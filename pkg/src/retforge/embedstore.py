"""Binary storage, indexing, and slicing of multi-layer token embedding tensors.

A corpus lives in two files:

* a tensor file holding one vector per token per layer, shape
  ``[n_tokens, n_layers, dim]``: magic bytes ``EMB1``, three unsigned
  64-bit little-endian integers (n_tokens, n_layers, dim), then the
  payload as IEEE-754 32-bit little-endian reals in row-major
  ``[token][layer][dim]`` order;
* a UTF-8 index sidecar with one tab-separated record per document:
  ``doc_id, offset, length, kind (q|p), pair_id`` where pair_id names the
  paragraph answering a question and is empty for paragraphs.

Both structures are immutable after load and safe for concurrent reads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataIntegrityError,
    FormatError,
    SizeMismatchError,
    UnknownDocumentError,
)

MAGIC = b"EMB1"
_HEADER = struct.Struct("<QQQ")

KIND_QUESTION = "q"
KIND_PARAGRAPH = "p"


@dataclass
class TokenEmbeddingStore:
    """The token-level tensor: ``data[token, layer, component]`` in float32."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValueError(f"store tensor must be 3-axis, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        self.data.flags.writeable = False

    @property
    def n_tokens(self) -> int:
        return self.data.shape[0]

    @property
    def n_layers(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DocEntry:
    """One document's span of token rows plus its retrieval role."""

    doc_id: str
    offset: int
    length: int
    kind: str  # KIND_QUESTION or KIND_PARAGRAPH
    pair_id: str | None = None  # paragraph answering this question; questions only

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass
class DocIndex:
    """Ordered document records; offsets address rows of the companion store."""

    entries: list[DocEntry]
    _by_id: dict[str, DocEntry] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {e.doc_id: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def get(self, doc_id: str) -> DocEntry:
        try:
            return self._by_id[doc_id]
        except KeyError:
            raise UnknownDocumentError(f"document {doc_id!r} not in index") from None

    def questions(self) -> list[DocEntry]:
        return [e for e in self.entries if e.kind == KIND_QUESTION]

    def paragraphs(self) -> list[DocEntry]:
        return [e for e in self.entries if e.kind == KIND_PARAGRAPH]

    @property
    def n_tokens(self) -> int:
        return sum(e.length for e in self.entries)


@dataclass(frozen=True)
class CorpusCounts:
    n_questions: int
    n_paragraphs: int

    @property
    def n_total(self) -> int:
        return self.n_questions + self.n_paragraphs


def counts(index: DocIndex) -> CorpusCounts:
    qs = sum(1 for e in index.entries if e.kind == KIND_QUESTION)
    return CorpusCounts(n_questions=qs, n_paragraphs=len(index) - qs)


@dataclass(frozen=True)
class Violation:
    """One broken invariant, naming the offending entry and rule."""

    rule: str
    doc_id: str | None
    detail: str

    def __str__(self) -> str:
        where = self.doc_id if self.doc_id is not None else "<store>"
        return f"[{self.rule}] {where}: {self.detail}"


def save_store(store: TokenEmbeddingStore, path: str) -> None:
    """Write the tensor file; byte-for-byte reproducible for equal stores."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(store.n_tokens, store.n_layers, store.dim))
        f.write(np.ascontiguousarray(store.data, dtype="<f4").tobytes())


def load_store(path: str) -> TokenEmbeddingStore:
    """Read a tensor file, checking magic, payload size, and finiteness.

    Raises FormatError on a bad magic, SizeMismatchError when the payload
    byte count disagrees with the header, and DataIntegrityError when any
    stored value is NaN or infinite.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, expected {MAGIC!r}")
    if len(raw) < len(MAGIC) + _HEADER.size:
        raise SizeMismatchError(f"{path}: truncated header")
    n_tokens, n_layers, dim = _HEADER.unpack_from(raw, len(MAGIC))
    expected = n_tokens * n_layers * dim * 4
    payload = raw[len(MAGIC) + _HEADER.size :]
    if len(payload) != expected:
        raise SizeMismatchError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n_tokens, n_layers, dim)
    if not np.isfinite(data).all():
        bad = int(np.argwhere(~np.isfinite(data.reshape(-1)))[0][0])
        raise DataIntegrityError(f"{path}: non-finite value at flat position {bad}")
    return TokenEmbeddingStore(data=data)


def save_index(index: DocIndex, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in index.entries:
            pair = e.pair_id if e.pair_id is not None else ""
            f.write(f"{e.doc_id}\t{e.offset}\t{e.length}\t{e.kind}\t{pair}\n")


def load_index(path: str) -> DocIndex:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
            doc_id, offset_s, length_s, kind, pair = parts
            try:
                offset, length = int(offset_s), int(length_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer offset/length") from None
            if kind not in (KIND_QUESTION, KIND_PARAGRAPH):
                raise FormatError(f"{path}:{lineno}: kind must be 'q' or 'p', got {kind!r}")
            entries.append(
                DocEntry(doc_id, offset, length, kind, pair_id=pair if pair else None)
            )
    return DocIndex(entries=entries)


def slice_document(store: TokenEmbeddingStore, index: DocIndex, doc_id: str) -> np.ndarray:
    """Return the ``[length, n_layers, dim]`` rows of one document.

    The result is a read-only view into the store; repeated calls return
    identical values.
    """
    e = index.get(doc_id)
    return store.data[e.offset : e.end]


def validate(store: TokenEmbeddingStore, index: DocIndex) -> list[Violation]:
    """Check every store/index invariant; an empty list means all hold.

    Violations are data, not errors: callers decide whether to abort.
    """
    out: list[Violation] = []

    if not np.isfinite(store.data).all():
        n_bad = int((~np.isfinite(store.data)).sum())
        out.append(Violation("finite-values", None, f"{n_bad} non-finite entries in tensor"))

    seen: set[str] = set()
    for e in index.entries:
        if e.doc_id in seen:
            out.append(Violation("doc-id-unique", e.doc_id, "duplicate document id"))
        seen.add(e.doc_id)
        if e.length < 1:
            out.append(Violation("length-positive", e.doc_id, f"length {e.length} < 1"))

    ordered = sorted(index.entries, key=lambda e: (e.offset, e.doc_id))
    cursor = 0
    for e in ordered:
        if e.offset < cursor:
            out.append(
                Violation(
                    "tiling-overlap",
                    e.doc_id,
                    f"offset {e.offset} overlaps previous entry ending at {cursor}",
                )
            )
        elif e.offset > cursor:
            out.append(
                Violation("tiling-gap", e.doc_id, f"gap before offset {e.offset} (expected {cursor})")
            )
        cursor = max(cursor, e.end)
    if cursor != store.n_tokens:
        out.append(
            Violation(
                "tiling-extent",
                None,
                f"entries cover [0, {cursor}) but store holds {store.n_tokens} tokens",
            )
        )

    by_id = {e.doc_id: e for e in index.entries}
    for e in index.entries:
        if e.kind == KIND_QUESTION:
            target = by_id.get(e.pair_id) if e.pair_id else None
            if target is None or target.kind != KIND_PARAGRAPH:
                out.append(
                    Violation(
                        "pair-unresolved",
                        e.doc_id,
                        f"pair_id {e.pair_id!r} does not name a paragraph",
                    )
                )
        elif e.pair_id is not None:
            out.append(Violation("pair-on-paragraph", e.doc_id, "paragraphs take no pair_id"))

    return out
