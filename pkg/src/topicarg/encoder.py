"""Sentence-target-topics encoder and the 3-way argument classifier.

The input is [cls] sentence [sep] target [sep] topic-terms, each token tagged
with its segment. The built-in reference encoder embeds tokens, adds a segment
embedding, mean-pools each segment, concatenates the three pooled vectors, and
maps them through a 2-layer MLP to the semantic vector h. Any deterministic
differentiable map with the same signature can stand in for it.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import LABELS, Vocabulary, tokenize
from .nn import MlpSpec, SeededRng, init_mlp, mlp_forward, softmax
from .topics import EmbeddingTable, ExtractedTopics

CLS, SEP, UNK = "<cls>", "<sep>", "<unk>"
MARKERS = (CLS, SEP, UNK)
SEGMENTS = ("sentence", "target", "topics")
SEGMENT_INDEX = {name: i for i, name in enumerate(SEGMENTS)}


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    emb_dim: int = 100
    hidden_dim: int = 128
    output_dim: int = 128  # d_h
    num_classes: int = len(LABELS)

    def body_spec(self) -> MlpSpec:
        return MlpSpec(
            (len(SEGMENTS) * self.emb_dim, self.hidden_dim, self.output_dim), "relu"
        )

    def classifier_spec(self) -> MlpSpec:
        return MlpSpec((self.output_dim, self.num_classes))


@dataclass(frozen=True)
class EncoderInput:
    """Token ids with per-token segment tags; layout fixed, sentence first."""

    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.token_ids) != len(self.segment_ids):
            raise ValueError("token_ids and segment_ids must have equal length")

    @property
    def n_segments(self) -> int:
        return len(set(self.segment_ids))


@dataclass
class ClassPrediction:
    probabilities: np.ndarray  # (3,) over (support, oppose, none)
    predicted: str


class EncoderParams:
    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    @property
    def word_embeddings(self) -> np.ndarray:
        return self.params["word_emb"]


def build_encoder_vocab(
    records, max_size: int, ntm_vocab: Vocabulary | None = None
) -> Vocabulary:
    """Encoder-mode vocabulary: markers first, stopwords kept.

    The NTM vocabulary, when given, is force-included so the embedding table
    derived from the encoder covers every word the topic model can emit.
    """
    if max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    freq: Counter[str] = Counter()
    df: Counter[str] = Counter()
    for record in records:
        tokens = tokenize(record.sentence, mode="encoder")
        freq.update(tokens)
        df.update(set(tokens))
        target_tokens = tokenize(record.target, mode="encoder")
        freq.update(target_tokens)
        df.update(set(target_tokens))
    ranked = sorted(freq, key=lambda w: (-freq[w], w))[:max_size]
    words = list(MARKERS) + ranked
    if ntm_vocab is not None:
        present = set(words)
        words += [w for w in ntm_vocab.id_to_word if w not in present]
    return Vocabulary(
        index_of={w: i for i, w in enumerate(words)},
        id_to_word=words,
        document_frequency={w: df.get(w, 0) for w in words},
    )


def build_input(
    sentence_tokens,
    target_tokens,
    topics: ExtractedTopics | None,
    vocab: Vocabulary,
    max_len: int = 128,
) -> EncoderInput:
    """[cls] sentence [sep] target [sep] topics, truncating the sentence only.

    Markers carry the tag of the segment they open or close; with no topic
    terms the trailing separator is dropped, leaving exactly two segments.
    OOV tokens map to the unknown marker.
    """
    topic_terms = list(topics.terms) if topics is not None else []
    target_tokens = list(target_tokens)
    fixed = 2 + len(target_tokens) + (1 + len(topic_terms) if topic_terms else 0)
    if max_len < fixed:
        raise ValueError(
            f"max_len={max_len} cannot fit the non-sentence segments ({fixed} tokens)"
        )
    sentence_tokens = list(sentence_tokens)[: max_len - fixed]

    def wid(token: str) -> int:
        return vocab.index_of.get(token, vocab.index_of[UNK])

    tokens = [CLS] + sentence_tokens + [SEP] + target_tokens
    segments = [SEGMENT_INDEX["sentence"]] * (len(sentence_tokens) + 2)
    segments += [SEGMENT_INDEX["target"]] * len(target_tokens)
    if topic_terms:
        tokens += [SEP] + topic_terms
        segments += [SEGMENT_INDEX["target"]]
        segments += [SEGMENT_INDEX["topics"]] * len(topic_terms)
    return EncoderInput(
        token_ids=tuple(wid(t) for t in tokens), segment_ids=tuple(segments)
    )


def init_encoder(cfg: EncoderConfig, rng: SeededRng) -> EncoderParams:
    bound = np.sqrt(6.0 / (cfg.vocab_size + cfg.emb_dim))
    params: dict[str, np.ndarray] = {
        "word_emb": rng.child(0).uniform(-bound, bound, (cfg.vocab_size, cfg.emb_dim)),
        "seg_emb": rng.child(1).uniform(-0.1, 0.1, (len(SEGMENTS), cfg.emb_dim)),
    }
    params.update(init_mlp(cfg.body_spec(), rng.child(2), prefix="body."))
    params.update(init_mlp(cfg.classifier_spec(), rng.child(3), prefix="cls."))
    return EncoderParams(cfg, params)


def encode_graph(params: dict, cfg: EncoderConfig, enc_input: EncoderInput) -> ad.Tensor:
    """Differentiable encode: returns h as a (1, d_h) Tensor."""
    ids = np.asarray(enc_input.token_ids, dtype=np.int64)
    if ids.size and ids.max() >= cfg.vocab_size:
        raise IndexError(f"token id {ids.max()} outside embedding range")
    segs = np.asarray(enc_input.segment_ids, dtype=np.int64)
    pools = []
    for seg in range(len(SEGMENTS)):
        members = np.flatnonzero(segs == seg)
        if members.size == 0:
            pools.append(ad.constant(np.zeros((1, cfg.emb_dim))))
            continue
        rows = ad.take_rows(params["word_emb"], ids[members]) + ad.take_rows(
            params["seg_emb"], np.full(members.size, seg)
        )
        pools.append(ad.tensor_mean(rows, axis=0, keepdims=True))
    pooled = ad.concat(pools, axis=1)
    return mlp_forward(cfg.body_spec(), params, pooled, prefix="body.")


def encode(params: EncoderParams, enc_input: EncoderInput) -> np.ndarray:
    """The semantic vector h for one input (deterministic)."""
    return encode_graph(params.params, params.cfg, enc_input).data[0]


def encode_batch_graph(params: dict, cfg: EncoderConfig, inputs) -> ad.Tensor:
    """Batched encode: one embedding gather plus a pooling matmul.

    Matches stacked encode_graph outputs up to float rounding (mean pooling
    expressed as a matrix product); returns (B, d_h).
    """
    if not inputs:
        raise ValueError("encode_batch_graph needs at least one input")
    ids = np.concatenate([np.asarray(x.token_ids, dtype=np.int64) for x in inputs])
    if ids.size and ids.max() >= cfg.vocab_size:
        raise IndexError(f"token id {ids.max()} outside embedding range")
    segs = np.concatenate([np.asarray(x.segment_ids, dtype=np.int64) for x in inputs])
    n_seg = len(SEGMENTS)
    pool = np.zeros((len(inputs) * n_seg, ids.size))
    offset = 0
    for i, x in enumerate(inputs):
        local = np.asarray(x.segment_ids)
        for s in range(n_seg):
            members = np.flatnonzero(local == s) + offset
            if members.size:
                pool[i * n_seg + s, members] = 1.0 / members.size
        offset += len(x.token_ids)
    rows = ad.take_rows(params["word_emb"], ids) + ad.take_rows(params["seg_emb"], segs)
    pooled = ad.matmul(ad.constant(pool), rows)  # (B*3, emb_dim)
    stacked = ad.reshape(pooled, (len(inputs), n_seg * cfg.emb_dim))
    return mlp_forward(cfg.body_spec(), params, stacked, prefix="body.")


def encode_batch(params: EncoderParams, inputs) -> np.ndarray:
    return encode_batch_graph(params.params, params.cfg, inputs).data


def classify_graph(params: dict, cfg: EncoderConfig, h: ad.Tensor) -> ad.Tensor:
    return ad.softmax(mlp_forward(cfg.classifier_spec(), params, h, prefix="cls."), axis=-1)


def classify(params: EncoderParams, h: np.ndarray) -> ClassPrediction:
    """Softmax over three logits; ties broken by label order (support first)."""
    probs = classify_graph(params.params, params.cfg, ad.constant(np.atleast_2d(h))).data[0]
    return ClassPrediction(probabilities=probs, predicted=LABELS[int(np.argmax(probs))])


def predict(params: EncoderParams, inputs) -> list[str]:
    return [classify(params, encode(params, x)).predicted for x in inputs]


def embedding_table(params: EncoderParams, enc_vocab: Vocabulary, vocab: Vocabulary) -> EmbeddingTable:
    """The encoder's word vectors re-indexed onto the NTM vocabulary."""
    missing = [w for w in vocab.id_to_word if w not in enc_vocab.index_of]
    if missing:
        raise ValueError(
            f"encoder vocabulary is missing {len(missing)} NTM word(s), e.g. {missing[:3]}"
        )
    rows = np.array([enc_vocab.index_of[w] for w in vocab.id_to_word])
    return EmbeddingTable(params.word_embeddings[rows].copy(), vocab)


def write_predictions(path, examples, predictions, probabilities) -> None:
    """Prediction TSV: target, sentence, gold, predicted, p(support|oppose|none)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("target\tsentence\tgold\tpredicted\tp_support\tp_oppose\tp_none\n")
        for ex, pred, probs in zip(examples, predictions, probabilities):
            fh.write(
                f"{ex.target}\t{ex.text}\t{ex.label}\t{pred}"
                f"\t{probs[0]:.6f}\t{probs[1]:.6f}\t{probs[2]:.6f}\n"
            )
