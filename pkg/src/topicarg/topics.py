"""Explainable target-relevant topic extraction.

Pipeline: zero out the target's own words in the topic-word matrix, take each
topic's top key terms, score every topic against the target via per-term
cosine maxima (keeping the best p-fraction, normalized by target length), and
return the argmax topic's terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary


@dataclass
class TargetMask:
    """K x V {0,1} matrix; a column is all-zero iff the word is a target word."""

    mask: np.ndarray

    def masked_ids(self) -> np.ndarray:
        return np.flatnonzero(self.mask[0] == 0)


@dataclass
class KeyTermLists:
    """Per topic, the chosen word ids with weights in non-increasing order."""

    word_ids: np.ndarray  # (K, n) int
    weights: np.ndarray  # (K, n) float


@dataclass
class EmbeddingTable:
    """One vector per vocabulary word, aligned with the vocabulary's ids."""

    vectors: np.ndarray  # (V, d)
    vocab: Vocabulary

    def __post_init__(self):
        if self.vectors.shape[0] != self.vocab.size:
            raise ValueError(
                f"embedding rows {self.vectors.shape[0]} != vocabulary size {self.vocab.size}"
            )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def normalized(self) -> np.ndarray:
        """Length-normalized copy used for cosine scoring; zero rows stay zero."""
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return np.divide(self.vectors, np.where(norms > 0, norms, 1.0))

    @classmethod
    def from_text_file(cls, path, vocab: Vocabulary) -> "EmbeddingTable":
        """Load a "word v1 ... vd" text file; missing words get zero vectors."""
        rows: dict[int, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                word = parts[0]
                if word not in vocab.index_of:
                    continue
                vec = np.array([float(x) for x in parts[1:]])
                if dim is None:
                    dim = vec.shape[0]
                elif vec.shape[0] != dim:
                    raise ValueError(f"inconsistent embedding width for {word!r}")
                rows[vocab.index_of[word]] = vec
        if dim is None:
            raise ValueError(f"no vocabulary word found in embedding file {path}")
        vectors = np.zeros((vocab.size, dim))
        for idx, vec in rows.items():
            vectors[idx] = vec
        return cls(vectors, vocab)


@dataclass
class ExtractedTopics:
    """The argmax topic's key terms for one target."""

    topic_index: int
    term_ids: tuple[int, ...]
    terms: tuple[str, ...]
    weights: tuple[float, ...]
    score: float
    per_topic_scores: tuple[float, ...] = ()


def empty_topics() -> ExtractedTopics:
    """Placeholder used when explainable topics are disabled."""
    return ExtractedTopics(-1, (), (), (), 0.0)


def build_target_mask(target_tokens, vocab: Vocabulary, num_topics: int) -> TargetMask:
    """All-ones mask with the target's in-vocabulary columns zeroed."""
    row = np.ones(vocab.size)
    for idx in vocab.ids(target_tokens):
        row[idx] = 0.0
    return TargetMask(np.tile(row, (num_topics, 1)))


def filter_topics(topic_word: np.ndarray, mask: TargetMask, n: int) -> KeyTermLists:
    """Top-n key terms per topic among unmasked words.

    Ranked by masked weight descending, ties by smaller word id. Masked
    (target-word) columns are excluded outright so they can never be chosen,
    even when other weights are negative.
    """
    topic_word = np.asarray(topic_word, dtype=np.float64)
    k, v = topic_word.shape
    if mask.mask.shape != (k, v):
        raise ValueError(f"mask shape {mask.mask.shape} != topic_word shape {(k, v)}")
    keep = np.flatnonzero(mask.mask[0] == 1)
    if not 1 <= n <= keep.size:
        raise ValueError(f"n={n} out of range [1, {keep.size}] after masking")
    masked = topic_word * mask.mask
    ids = np.empty((k, n), dtype=np.int64)
    weights = np.empty((k, n))
    for row in range(k):
        # sort by (-weight, id); keep is already id-ascending
        order = keep[np.argsort(-masked[row, keep], kind="stable")][:n]
        ids[row] = order
        weights[row] = masked[row, order]
    return KeyTermLists(ids, weights)


def score_topic(target_vecs: np.ndarray, topic_vecs: np.ndarray, p: float) -> float:
    """Sum of the top ceil(p * N_t) per-term cosine maxima, divided by N_tau.

    Each topic word contributes its best cosine against any target word; the
    strongest p-fraction of those contributions is kept.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    target_vecs = np.atleast_2d(np.asarray(target_vecs, dtype=np.float64))
    topic_vecs = np.atleast_2d(np.asarray(topic_vecs, dtype=np.float64))
    if target_vecs.shape[0] == 0 or topic_vecs.shape[0] == 0:
        raise ValueError("score_topic needs at least one target and one topic vector")
    cosines = topic_vecs @ target_vecs.T  # (N_t, N_tau), rows pre-normalized
    best_per_term = cosines.max(axis=1)
    keep = math.ceil(p * topic_vecs.shape[0])
    top = np.sort(best_per_term)[::-1][:keep]
    return float(top.sum() / target_vecs.shape[0])


def extract_topics(
    lists: KeyTermLists,
    embeddings: EmbeddingTable,
    target_tokens,
    p: float = 0.5,
) -> ExtractedTopics:
    """Score all K key-term lists against the target; return the argmax list."""
    normalized = embeddings.normalized()
    target_ids = [
        i for i in embeddings.vocab.ids(target_tokens) if np.any(normalized[i])
    ]
    if not target_ids:
        raise ValueError(
            "target has no token that is both in the vocabulary and embedded"
        )
    target_vecs = normalized[target_ids]
    scores = [
        score_topic(target_vecs, normalized[lists.word_ids[k]], p)
        for k in range(lists.word_ids.shape[0])
    ]
    best = int(np.argmax(scores))  # ties resolve to the smaller topic index
    term_ids = tuple(int(i) for i in lists.word_ids[best])
    return ExtractedTopics(
        topic_index=best,
        term_ids=term_ids,
        terms=tuple(embeddings.vocab.id_to_word[i] for i in term_ids),
        weights=tuple(float(w) for w in lists.weights[best]),
        score=float(scores[best]),
        per_topic_scores=tuple(float(s) for s in scores),
    )


def write_topic_report(path, rows: list[tuple[str, ExtractedTopics]]) -> None:
    """Topic report TSV: target, topic index, score, and term:weight pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("target\ttopic\tscore\tterms\n")
        for target, extracted in rows:
            terms = " ".join(
                f"{t}:{w:.6f}" for t, w in zip(extracted.terms, extracted.weights)
            )
            fh.write(f"{target}\t{extracted.topic_index}\t{extracted.score:.6f}\t{terms}\n")
