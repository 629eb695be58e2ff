"""UKP ArgMin corpus ingestion, tokenization, vocabulary, BoW, and splits.

The corpus is a UTF-8 TSV with a header naming at least the columns
`topic`, `sentence`, `annotation`, `set`; extra columns are ignored.
Annotations map support/oppose/none as
Argument_for -> support, Argument_against -> oppose, NoArgument -> none.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .nn import SeededRng
from .stopwords import DEFAULT_STOPWORDS

logger = logging.getLogger(__name__)

LABELS = ("support", "oppose", "none")
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABELS)}
ANNOTATION_TO_LABEL = {
    "Argument_for": "support",
    "Argument_against": "oppose",
    "NoArgument": "none",
}
SPLIT_TAGS = ("train", "val", "test")

_REQUIRED_COLUMNS = ("topic", "sentence", "annotation", "set")
_PUNCT_RE = re.compile(r"[^\w\s]", flags=re.UNICODE)


class CorpusFormatError(ValueError):
    """Raised for missing columns or malformed rows (includes line numbers)."""


@dataclass(frozen=True)
class RawRecord:
    target: str
    sentence: str
    annotation: str
    split_tag: str


@dataclass(frozen=True)
class ArgumentExample:
    """One sentence paired with its target and gold label."""

    target: str
    tokens: tuple[str, ...]
    label: str
    text: str = ""

    def label_index(self) -> int:
        return LABEL_TO_INDEX[self.label]


@dataclass
class Vocabulary:
    """Dense token ids ranked by frequency (ties lexicographic)."""

    index_of: dict[str, int]
    id_to_word: list[str]
    document_frequency: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, token: str) -> bool:
        return token in self.index_of

    def ids(self, tokens) -> list[int]:
        """Ids of in-vocabulary tokens, OOV silently dropped."""
        return [self.index_of[t] for t in tokens if t in self.index_of]

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, word in enumerate(self.id_to_word):
                fh.write(f"{word}\t{i}\t{self.document_frequency.get(word, 0)}\n")

    @classmethod
    def from_tsv(cls, path) -> "Vocabulary":
        index_of: dict[str, int] = {}
        id_to_word: list[str] = []
        df: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                word, idx, count = line.rstrip("\n").split("\t")
                index_of[word] = int(idx)
                id_to_word.append(word)
                df[word] = int(count)
        return cls(index_of, id_to_word, df)


@dataclass
class DatasetSplit:
    train: list[ArgumentExample]
    val: list[ArgumentExample]
    test: list[ArgumentExample]
    held_out_target: str | None = None


def load_tsv(path) -> list[RawRecord]:
    """Parse the corpus TSV into RawRecords.

    Rows whose annotation is not one of the three known strings are skipped
    and counted (reported via logging). Structural problems (missing file,
    missing column, short row) raise CorpusFormatError with the line number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    records: list[RawRecord] = []
    rejected = 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusFormatError(f"{path}: empty file, no header row") from None
        column = {name.strip(): i for i, name in enumerate(header)}
        missing = [c for c in _REQUIRED_COLUMNS if c not in column]
        if missing:
            raise CorpusFormatError(f"{path}: missing required column(s) {missing}")
        width = max(column[c] for c in _REQUIRED_COLUMNS) + 1
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < width:
                raise CorpusFormatError(
                    f"{path}:{lineno}: malformed row, expected >= {width} fields, got {len(row)}"
                )
            sentence = row[column["sentence"]].strip()
            annotation = row[column["annotation"]].strip()
            if annotation not in ANNOTATION_TO_LABEL:
                rejected += 1
                continue
            if not sentence:
                rejected += 1
                continue
            split_tag = row[column["set"]].strip()
            records.append(
                RawRecord(
                    target=row[column["topic"]].strip(),
                    sentence=sentence,
                    annotation=annotation,
                    split_tag=split_tag,
                )
            )
    if rejected:
        logger.warning("load_tsv: rejected %d row(s) with unknown annotation or empty sentence", rejected)
    return records


def tokenize(text: str, mode: str = "encoder", stopwords=None) -> list[str]:
    """Lowercase, delete punctuation characters, split on whitespace.

    Mode "ntm" additionally drops stopwords and tokens shorter than 2
    characters; mode "encoder" keeps everything.
    """
    if mode not in ("ntm", "encoder"):
        raise ValueError(f"unknown tokenize mode {mode!r}")
    tokens = _PUNCT_RE.sub("", text.lower()).split()
    if mode == "ntm":
        stop = DEFAULT_STOPWORDS if stopwords is None else stopwords
        tokens = [t for t in tokens if len(t) >= 2 and t not in stop]
    return tokens


def label_of(record: RawRecord) -> str:
    return ANNOTATION_TO_LABEL[record.annotation]


def example_from_record(record: RawRecord) -> ArgumentExample:
    return ArgumentExample(
        target=record.target,
        tokens=tuple(tokenize(record.sentence, mode="encoder")),
        label=label_of(record),
        text=record.sentence,
    )


def examples_from_records(records) -> list[ArgumentExample]:
    return [example_from_record(r) for r in records]


def build_vocabulary(records, max_size: int, stopwords=None) -> Vocabulary:
    """Frequency-ranked NTM vocabulary over all record sentences.

    Ties broken lexicographically; deterministic for fixed input.
    """
    if max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    if not records:
        raise ValueError("cannot build a vocabulary from zero records")
    stop = DEFAULT_STOPWORDS if stopwords is None else stopwords
    freq: Counter[str] = Counter()
    df: Counter[str] = Counter()
    for record in records:
        tokens = tokenize(record.sentence, mode="ntm", stopwords=stop)
        freq.update(tokens)
        df.update(set(tokens))
    ranked = sorted(freq, key=lambda w: (-freq[w], w))[:max_size]
    return Vocabulary(
        index_of={w: i for i, w in enumerate(ranked)},
        id_to_word=ranked,
        document_frequency={w: df[w] for w in ranked},
    )


def vectorize(tokens, vocab: Vocabulary) -> np.ndarray:
    """Bag-of-words counts over the vocabulary; OOV tokens are ignored."""
    counts = np.zeros(vocab.size, dtype=np.int64)
    for t in tokens:
        idx = vocab.index_of.get(t)
        if idx is not None:
            counts[idx] += 1
    return counts


def vectorize_all(token_seqs, vocab: Vocabulary) -> sparse.csr_matrix:
    """Stack BoW vectors for many token sequences as a CSR matrix."""
    data: list[int] = []
    indices: list[int] = []
    indptr = [0]
    for tokens in token_seqs:
        row = Counter(vocab.index_of[t] for t in tokens if t in vocab.index_of)
        for idx in sorted(row):
            indices.append(idx)
            data.append(row[idx])
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data, dtype=np.int64), np.array(indices), np.array(indptr)),
        shape=(len(indptr) - 1, vocab.size),
    )


def make_in_target_folds(examples, k: int, seed: int) -> list[DatasetSplit]:
    """Seeded k-fold splits: fold i tests, fold i+1 validates, rest train."""
    n = len(examples)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} examples, got {n}")
    order = SeededRng(seed).permutation(n)
    folds = np.array_split(order, k)
    splits = []
    for i in range(k):
        test_idx = folds[i]
        val_idx = folds[(i + 1) % k]
        rest = set(test_idx) | set(val_idx)
        train_idx = [j for j in order if j not in rest]
        splits.append(
            DatasetSplit(
                train=[examples[j] for j in train_idx],
                val=[examples[j] for j in val_idx],
                test=[examples[j] for j in test_idx],
            )
        )
    return splits


def make_cross_target_split(records, held_out: str) -> DatasetSplit:
    """Leave-one-target-out split driven by the corpus's own split tags."""
    targets = {r.target for r in records}
    if held_out not in targets:
        raise ValueError(f"unknown target {held_out!r}; corpus has {sorted(targets)}")
    bad = [r for r in records if r.split_tag not in SPLIT_TAGS]
    if bad:
        raise CorpusFormatError(
            f"records carry unknown split tag(s): {sorted({r.split_tag for r in bad})}"
        )
    train = [example_from_record(r) for r in records
             if r.target != held_out and r.split_tag == "train"]
    val = [example_from_record(r) for r in records
           if r.target != held_out and r.split_tag == "val"]
    test = [example_from_record(r) for r in records
            if r.target == held_out and r.split_tag == "test"]
    return DatasetSplit(train=train, val=val, test=test, held_out_target=held_out)


def write_split_jsonl(split: DatasetSplit, path) -> None:
    """Audit export: one line per example (target, label, role, tokens)."""
    with open(path, "w", encoding="utf-8") as fh:
        for role in ("train", "val", "test"):
            for ex in getattr(split, role):
                fh.write(
                    json.dumps(
                        {
                            "target": ex.target,
                            "label": ex.label,
                            "role": role,
                            "tokens": list(ex.tokens),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def label_counts(records) -> dict[str, int]:
    counts = Counter(label_of(r) for r in records)
    return {label: counts.get(label, 0) for label in LABELS}


def target_counts(records) -> dict[str, int]:
    return dict(Counter(r.target for r in records))
