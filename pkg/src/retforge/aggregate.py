"""Document embedding construction from the token store.

Per document: combine layers with convex weights, optionally scale each
token vector by its IDF weight, mean-pool over the token axis, then
L2-normalize. The layer-weight grid search ranks candidate weightings by
retrieval recall@1.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import embedstore
from .embedstore import DocEntry, DocIndex, TokenEmbeddingStore
from .errors import DataError, FormatError, NormalizationError

log = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-6
_ZERO_NORM_GUARD = 1e-12

DEFAULT_EVAL_KS = (1, 2, 5, 10, 20, 50)


@dataclass(frozen=True)
class LayerWeights:
    """Convex combination coefficients over the embedding layers."""

    w: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.w) < 1:
            raise ValueError("need at least one layer weight")
        if any(c < 0 for c in self.w):
            raise ValueError(f"layer weights must be non-negative, got {self.w}")
        if abs(sum(self.w) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"layer weights must sum to 1, got {self.w} (sum {sum(self.w)})")

    @property
    def n_layers(self) -> int:
        return len(self.w)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=np.float64)


@dataclass
class IdfTable:
    """Inverse document frequencies: weight(t) = ln(n_documents / df(t))."""

    weights: dict[str, float]
    n_documents: int

    def weight(self, token_id: str) -> float:
        """Weight for a token; unseen tokens get the max-rarity value ln(N)."""
        w = self.weights.get(token_id)
        if w is None:
            return math.log(self.n_documents)
        return w


@dataclass
class EmbeddingMatrix:
    """One embedding row per document, in index order."""

    vectors: np.ndarray  # [n_docs, dim] float32
    index: DocIndex
    normalized: bool

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ValueError(f"matrix must be 2-axis, got {self.vectors.shape}")
        if len(self.index) != self.vectors.shape[0]:
            raise ValueError(
                f"index has {len(self.index)} entries for {self.vectors.shape[0]} rows"
            )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class QPView:
    """Question/paragraph partition of a matrix with resolved pair columns."""

    questions: np.ndarray  # [n_q, dim]
    paragraphs: np.ndarray  # [n_p, dim]
    truth: np.ndarray  # [n_q] paragraph column answering each question
    question_ids: tuple[str, ...]
    paragraph_ids: tuple[str, ...]


def compute_idf(doc_token_lists: list[list[str]]) -> IdfTable:
    """Document-frequency based IDF over a tokenized corpus.

    df counts documents containing a token, not occurrences; a token
    repeated inside one document still has df = 1.
    """
    if not doc_token_lists:
        raise ValueError("IDF needs at least one document")
    n = len(doc_token_lists)
    df: dict[str, int] = {}
    for tokens in doc_token_lists:
        for t in set(tokens):
            df[t] = df.get(t, 0) + 1
    return IdfTable(weights={t: math.log(n / c) for t, c in df.items()}, n_documents=n)


def _normalize(v: np.ndarray, doc_id: str | None = None) -> np.ndarray:
    norm = math.sqrt(float(np.dot(v, v)))
    if norm < _ZERO_NORM_GUARD:
        who = f" for document {doc_id!r}" if doc_id else ""
        raise NormalizationError(f"cannot L2-normalize all-zero pooled vector{who}")
    return (v / norm).astype(np.float32)


def pool_document(
    doc_tensor: np.ndarray,
    w: LayerWeights,
    token_idf: np.ndarray | None = None,
) -> np.ndarray:
    """Pool one document's ``[length, n_layers, dim]`` tensor to a unit vector.

    Each token vector is the weighted sum over layers, scaled by its IDF
    weight when given; the mean over the token axis is then L2-normalized.
    """
    if doc_tensor.ndim != 3:
        raise ValueError(f"document tensor must be [length, n_layers, dim], got {doc_tensor.shape}")
    length, n_layers, _ = doc_tensor.shape
    if length < 1:
        raise ValueError("document must hold at least one token")
    if n_layers != w.n_layers:
        raise ValueError(f"store has {n_layers} layers but weights cover {w.n_layers}")
    per_token = np.tensordot(doc_tensor.astype(np.float64), w.as_array(), axes=([1], [0]))
    if token_idf is not None:
        token_idf = np.asarray(token_idf, dtype=np.float64)
        if token_idf.shape != (length,):
            raise ValueError(f"need one IDF weight per token, got {token_idf.shape} for {length}")
        per_token = per_token * token_idf[:, None]
    return _normalize(per_token.mean(axis=0))


def build_matrix(
    store: TokenEmbeddingStore,
    index: DocIndex,
    w: LayerWeights,
    idf: IdfTable | None = None,
    tokens: dict[str, list[str]] | None = None,
    threads: int = 1,
) -> EmbeddingMatrix:
    """Pool every indexed document into one normalized row, in index order.

    IDF injection needs the per-document token ids (``tokens``) to look up
    weights; tokens absent from the table get the max-rarity weight ln(N),
    logged once per build.
    """
    if idf is not None and tokens is None:
        raise ValueError("IDF injection requires the per-document token id lists")

    misses = 0

    def idf_vector(entry: DocEntry) -> np.ndarray | None:
        nonlocal misses
        if idf is None:
            return None
        ids = tokens.get(entry.doc_id)
        if ids is None or len(ids) != entry.length:
            raise DataError(
                f"token ids for {entry.doc_id!r} missing or wrong length "
                f"(index says {entry.length} tokens)"
            )
        misses += sum(1 for t in ids if t not in idf.weights)
        return np.asarray([idf.weight(t) for t in ids], dtype=np.float64)

    def pool_one(entry: DocEntry) -> np.ndarray:
        doc = embedstore.slice_document(store, index, entry.doc_id)
        try:
            return pool_document(doc, w, idf_vector(entry))
        except NormalizationError as e:
            raise NormalizationError(f"{e} (document {entry.doc_id!r})") from None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(pool_one, index.entries))
    else:
        rows = [pool_one(e) for e in index.entries]

    if misses:
        log.warning(
            "%d token occurrences had no IDF entry; assigned max-rarity weight ln(%d)",
            misses,
            idf.n_documents,
        )
    vectors = np.vstack(rows) if rows else np.zeros((0, store.dim), dtype=np.float32)
    return EmbeddingMatrix(vectors=vectors, index=index, normalized=True)


def question_paragraph_split(matrix: EmbeddingMatrix) -> QPView:
    """Partition matrix rows into question and paragraph blocks with truth columns."""
    q_rows, p_rows, q_ids, p_ids, pair_ids = [], [], [], [], []
    p_col: dict[str, int] = {}
    for row, e in enumerate(matrix.index.entries):
        if e.kind == embedstore.KIND_PARAGRAPH:
            p_col[e.doc_id] = len(p_rows)
            p_rows.append(row)
            p_ids.append(e.doc_id)
        else:
            q_rows.append(row)
            q_ids.append(e.doc_id)
            pair_ids.append(e.pair_id)
    truth = np.empty(len(q_rows), dtype=np.int64)
    for i, (qid, pid) in enumerate(zip(q_ids, pair_ids)):
        if pid is None or pid not in p_col:
            raise DataError(f"question {qid!r} has unresolved pair_id {pid!r}")
        truth[i] = p_col[pid]
    return QPView(
        questions=matrix.vectors[q_rows],
        paragraphs=matrix.vectors[p_rows],
        truth=truth,
        question_ids=tuple(q_ids),
        paragraph_ids=tuple(p_ids),
    )


@dataclass(frozen=True)
class GridResult:
    weights: LayerWeights
    recall_at_1: float
    avg_recall: float


def grid_search(
    store: TokenEmbeddingStore,
    index: DocIndex,
    configs: list[LayerWeights],
    eval_fn=None,
    idf: IdfTable | None = None,
    tokens: dict[str, list[str]] | None = None,
    ks: tuple[int, ...] = DEFAULT_EVAL_KS,
    threads: int = 1,
) -> list[GridResult]:
    """Evaluate each layer weighting and rank by recall@1, descending.

    ``eval_fn(questions, paragraphs, truth, ks)`` must return
    ``{k: (count, fraction)}``; the default is the exhaustive evaluator
    from the metrics module. Ties keep config order.
    """
    if not configs:
        raise ValueError("grid search needs at least one weight config")
    if eval_fn is None:
        from . import metrics

        def eval_fn(q, p, truth, ks):
            return metrics.recall_at_k(metrics.pairwise_distances(q, p), truth, list(ks))

    results = []
    for cfg in configs:
        try:
            view = question_paragraph_split(
                build_matrix(store, index, cfg, idf=idf, tokens=tokens, threads=threads)
            )
            recalls = eval_fn(view.questions, view.paragraphs, view.truth, ks)
        except Exception as e:
            e.args = (f"config {cfg.w}: {e}",) + e.args[1:]
            raise
        fractions = [recalls[k][1] for k in ks]
        results.append(
            GridResult(weights=cfg, recall_at_1=recalls[ks[0]][1], avg_recall=float(np.mean(fractions)))
        )
    return sorted(results, key=lambda r: -r.recall_at_1)


def simplex_sweep(n_layers: int, step: int) -> list[LayerWeights]:
    """All weightings with components i/step summing to 1, plus uniform."""
    if step < 1:
        raise ValueError("step denominator must be >= 1")

    configs: list[LayerWeights] = []

    def rec(prefix: list[int], remaining: int, slots: int) -> None:
        if slots == 1:
            configs.append(LayerWeights(tuple((c / step) for c in prefix + [remaining])))
            return
        for c in range(remaining + 1):
            rec(prefix + [c], remaining - c, slots - 1)

    rec([], step, n_layers)
    uniform = LayerWeights(tuple(1.0 / n_layers for _ in range(n_layers)))
    out, seen = [], set()
    for cfg in configs + [uniform]:
        key = tuple(round(c, 9) for c in cfg.w)
        if key not in seen:
            seen.add(key)
            out.append(cfg)
    return out


# ---------------------------------------------------------------------------
# File interfaces: embedding matrices reuse the EMB1 container with one layer;
# IDF tables and token lists are UTF-8 tab-separated sidecars.
# ---------------------------------------------------------------------------


def save_matrix(matrix: EmbeddingMatrix, emb_path: str, index_path: str) -> None:
    store = TokenEmbeddingStore(data=matrix.vectors.reshape(len(matrix.index), 1, matrix.dim))
    embedstore.save_store(store, emb_path)
    rows = [
        DocEntry(e.doc_id, row, 1, e.kind, e.pair_id)
        for row, e in enumerate(matrix.index.entries)
    ]
    embedstore.save_index(DocIndex(entries=rows), index_path)


def load_matrix(emb_path: str, index_path: str) -> EmbeddingMatrix:
    store = embedstore.load_store(emb_path)
    if store.n_layers != 1:
        raise FormatError(f"{emb_path}: embedding matrix files carry exactly one layer")
    index = embedstore.load_index(index_path)
    if len(index) != store.n_tokens:
        raise FormatError(
            f"{index_path}: {len(index)} entries for {store.n_tokens} matrix rows"
        )
    vectors = np.ascontiguousarray(store.data[:, 0, :])
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    return EmbeddingMatrix(
        vectors=vectors,
        index=index,
        normalized=bool(np.all(np.abs(norms - 1.0) <= 1e-5)),
    )


def save_idf(idf: IdfTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#n_documents\t{idf.n_documents}\n")
        for token in sorted(idf.weights):
            f.write(f"{token}\t{idf.weights[token]!r}\n")


def load_idf(path: str) -> IdfTable:
    weights: dict[str, float] = {}
    n_documents = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'token<TAB>weight'")
            if parts[0] == "#n_documents":
                n_documents = int(parts[1])
                continue
            weights[parts[0]] = float(parts[1])
    if n_documents is None:
        raise FormatError(f"{path}: missing '#n_documents' metadata line")
    return IdfTable(weights=weights, n_documents=n_documents)


def save_tokens(tokens: dict[str, list[str]], index: DocIndex, path: str) -> None:
    """Write per-document token ids, one line per document in index order."""
    with open(path, "w", encoding="utf-8") as f:
        for e in index.entries:
            f.write(f"{e.doc_id}\t{' '.join(tokens[e.doc_id])}\n")


def load_tokens(path: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            doc_id, _, rest = line.partition("\t")
            if not doc_id:
                raise FormatError(f"{path}:{lineno}: expected 'doc_id<TAB>token ids'")
            out[doc_id] = rest.split(" ") if rest else []
    return out
