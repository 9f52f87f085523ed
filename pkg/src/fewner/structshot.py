"""Nearest-neighbor few-shot tagger with abstract-transition Viterbi decoding.

A test token's tag comes from its most similar support token; similarity is
squared Euclidean distance on L2-normalized embeddings (same ordering as
cosine distance). Per-tag minimum distances become emission distributions via
softmax, and a Viterbi pass over add-one-smoothed start/transition/end
frequencies yields the final sequence. A no-CRF mode (plain nearest neighbor)
is kept for ablation.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import TAG_INDEX, TAGS, Tag, TaggedSentence

EMISSION_EPSILON = 1e-6
_DIST_SUM_TOL = 1e-9

# Binary embedding-exchange layout (little-endian):
#   magic b"EMB1" | uint32 count | uint32 dim
#   per row: uint16 id_len | id UTF-8 bytes | uint32 token_index
#            | uint8 tag_index (SN=0, SV=1, O=2) | float32 * dim
_EMB_MAGIC = b"EMB1"


@dataclass(frozen=True)
class SupportEntry:
    tag: Tag
    sentence_id: str
    token_index: int


class SupportSet:
    """Labeled token-embedding store; embeddings L2-normalized at insertion."""

    def __init__(self, embeddings: np.ndarray, entries: Sequence[SupportEntry]):
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] != len(entries):
            raise ValueError(
                f"embeddings shape {embeddings.shape} does not match {len(entries)} entries"
            )
        covered = {e.tag for e in entries}
        for tag in TAGS:
            if tag not in covered:
                raise ValueError(f"support set has no entry for tag {tag.value}")
        self.embeddings = _l2_normalize(embeddings)
        self.entries = list(entries)
        self.dimension = embeddings.shape[1]
        self._tag_rows = {
            tag: np.array([i for i, e in enumerate(entries) if e.tag is tag]) for tag in TAGS
        }

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class EmissionTable:
    """Per-token probability rows over (SN, SV, O); strictly positive, sum 1."""

    probs: np.ndarray  # shape (T, 3)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2 or probs.shape[1] != len(TAGS):
            raise ValueError(f"emission table must be (T, {len(TAGS)}), got {probs.shape}")
        if probs.shape[0] > 0:
            if not np.all(probs > 0):
                raise ValueError("emission probabilities must be strictly positive")
            if np.max(np.abs(probs.sum(axis=1) - 1.0)) > _DIST_SUM_TOL:
                raise ValueError("emission rows must sum to 1")

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class TransitionModel:
    """Start, tag-to-tag, and end probabilities; strictly positive, each sums to 1."""

    start: np.ndarray  # (3,)
    transition: np.ndarray  # (3, 3), rows = from-tag
    end: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        start = np.asarray(self.start, dtype=np.float64)
        transition = np.asarray(self.transition, dtype=np.float64)
        end = np.asarray(self.end, dtype=np.float64)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "end", end)
        k = len(TAGS)
        if start.shape != (k,) or end.shape != (k,) or transition.shape != (k, k):
            raise ValueError("transition model has wrong shapes")
        for dist in (start, end, *transition):
            if not np.all(dist > 0):
                raise ValueError("transition model contains zero probabilities; smooth first")
            if abs(dist.sum() - 1.0) > _DIST_SUM_TOL:
                raise ValueError("each transition-model distribution must sum to 1")


def _l2_normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot L2-normalize a zero embedding vector")
    return matrix / norms


def build_support_set(
    sentences: Sequence[TaggedSentence], embeddings: Sequence[np.ndarray]
) -> SupportSet:
    """One entry per token from parallel (sentence, per-token embedding) inputs."""
    if len(sentences) != len(embeddings):
        raise ValueError(
            f"{len(sentences)} sentences but {len(embeddings)} embedding sequences"
        )
    rows = []
    entries = []
    for si, (sent, emb) in enumerate(zip(sentences, embeddings)):
        emb = np.asarray(emb, dtype=np.float64)
        if emb.shape[0] != len(sent):
            raise ValueError(
                f"sentence {si}: {len(sent)} tokens but {emb.shape[0]} embedding rows"
            )
        sid = sent.source_id or f"s{si}"
        for ti, tag in enumerate(sent.tags):
            rows.append(emb[ti])
            entries.append(SupportEntry(tag=tag, sentence_id=sid, token_index=ti))
    if not rows:
        raise ValueError("cannot build a support set from no tokens")
    return SupportSet(np.stack(rows), entries)


def nn_tag(query: np.ndarray, support: SupportSet) -> tuple[Tag, float]:
    """Tag of the nearest support entry; ties go to the lowest entry index."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (support.dimension,):
        raise ValueError(
            f"query dimension {query.shape} does not match support dimension {support.dimension}"
        )
    q = _l2_normalize(query[None, :])[0]
    dists = np.sum((support.embeddings - q) ** 2, axis=1)
    best = int(np.argmin(dists))  # argmin returns the first (lowest-index) minimum
    return support.entries[best].tag, float(dists[best])


def compute_emissions(test_embeddings: np.ndarray, support: SupportSet) -> EmissionTable:
    """Softmax over negative per-tag minimum distances, epsilon-smoothed."""
    test_embeddings = np.asarray(test_embeddings, dtype=np.float64)
    if test_embeddings.ndim != 2 or test_embeddings.shape[1] != support.dimension:
        raise ValueError(
            f"test embeddings shape {test_embeddings.shape} does not match "
            f"support dimension {support.dimension}"
        )
    queries = _l2_normalize(test_embeddings)
    scores = np.empty((queries.shape[0], len(TAGS)))
    for tag in TAGS:
        rows = support._tag_rows[tag]
        # squared distances to all support entries of this tag
        d = (
            np.sum(queries**2, axis=1, keepdims=True)
            - 2 * queries @ support.embeddings[rows].T
            + np.sum(support.embeddings[rows] ** 2, axis=1)[None, :]
        )
        scores[:, TAG_INDEX[tag]] = -np.min(d, axis=1)
    shifted = scores - scores.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs += EMISSION_EPSILON
    probs /= probs.sum(axis=1, keepdims=True)
    return EmissionTable(probs)


def estimate_transitions(tag_sequences: Sequence[Sequence[Tag]]) -> TransitionModel:
    """Add-one-smoothed maximum-likelihood start/transition/end frequencies."""
    if not tag_sequences:
        raise ValueError("cannot estimate transitions from an empty corpus")
    k = len(TAGS)
    start = np.zeros(k)
    trans = np.zeros((k, k))
    end = np.zeros(k)
    for seq in tag_sequences:
        if not seq:
            raise ValueError("cannot estimate transitions from an empty tag sequence")
        idx = [TAG_INDEX[t] for t in seq]
        start[idx[0]] += 1
        end[idx[-1]] += 1
        for a, b in zip(idx, idx[1:]):
            trans[a, b] += 1
    start = (start + 1) / (start.sum() + k)
    end = (end + 1) / (end.sum() + k)
    trans = (trans + 1) / (trans.sum(axis=1, keepdims=True) + k)
    return TransitionModel(start=start, transition=trans, end=end)


def uniform_transitions() -> TransitionModel:
    k = len(TAGS)
    return TransitionModel(
        start=np.full(k, 1 / k), transition=np.full((k, k), 1 / k), end=np.full(k, 1 / k)
    )


def viterbi_decode(
    emissions: EmissionTable, transitions: TransitionModel
) -> tuple[list[Tag], float]:
    """Best tag sequence and its log score.

    Score = log start(y1) + sum log transition + sum log emission + log end(yT).
    Ties resolve to the lexicographically smallest tag-index sequence, which a
    backward pass plus greedy forward selection yields exactly.
    """
    if len(emissions) == 0:
        return [], 0.0
    log_e = np.log(emissions.probs)
    log_s = np.log(transitions.start)
    log_t = np.log(transitions.transition)
    log_end = np.log(transitions.end)
    n, k = log_e.shape

    # beta[t, s]: best score of the suffix starting at t given state s at t
    beta = np.empty((n, k))
    beta[n - 1] = log_e[n - 1] + log_end
    for t in range(n - 2, -1, -1):
        beta[t] = log_e[t] + np.max(log_t + beta[t + 1][None, :], axis=1)

    first = log_s + beta[0]
    path = [int(np.argmax(first))]
    for t in range(1, n):
        path.append(int(np.argmax(log_t[path[-1]] + beta[t])))
    return [TAGS[i] for i in path], float(first[path[0]])


def nn_only_tag(test_embeddings: np.ndarray, support: SupportSet) -> list[Tag]:
    """Plain nearest-neighbor tagging without Viterbi (the --no-crf mode)."""
    test_embeddings = np.asarray(test_embeddings, dtype=np.float64)
    return [nn_tag(test_embeddings[i], support)[0] for i in range(test_embeddings.shape[0])]


def structshot_tag(
    model,
    support_sentences: Sequence[TaggedSentence],
    test_sentences: Sequence[TaggedSentence],
    transition_corpus: Sequence[Sequence[Tag]] | None = None,
    use_crf: bool = True,
) -> list[list[Tag]]:
    """Full pipeline: embed support and test, retrieve, decode.

    ``model`` is a trained TaggerModel used purely as a feature extractor.
    ``transition_corpus`` defaults to the support sentences' own tag
    sequences when not given (the model's fine-tuning subset is the usual
    explicit choice).
    """
    from .tagger import extract_token_embeddings

    if not test_sentences:
        return []
    support_emb = extract_token_embeddings(model, support_sentences)
    support = build_support_set(support_sentences, support_emb)
    test_emb = extract_token_embeddings(model, test_sentences)
    if not use_crf:
        return [nn_only_tag(emb, support) for emb in test_emb]
    if transition_corpus is None:
        transition_corpus = [s.tags for s in support_sentences]
    transitions = estimate_transitions(transition_corpus)
    out = []
    for emb in test_emb:
        emissions = compute_emissions(emb, support)
        tags, _ = viterbi_decode(emissions, transitions)
        out.append(tags)
    return out


# ---------------------------------------------------------------------------
# Embedding exchange files


@dataclass(frozen=True)
class EmbeddingRecord:
    sentence_id: str
    token_index: int
    tag: Tag
    vector: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=np.float32))


def write_embeddings_text(path: str | Path, records: Sequence[EmbeddingRecord]) -> None:
    """Text rendering: header 'count<TAB>dim', then one tab-separated row per
    token: sentence id, token index, tag, vector values."""
    dim = _records_dim(records)
    lines = [f"{len(records)}\t{dim}"]
    for rec in records:
        if "\t" in rec.sentence_id or "\n" in rec.sentence_id:
            raise ValueError(f"sentence id {rec.sentence_id!r} contains a tab or newline")
        values = "\t".join(repr(float(v)) for v in rec.vector)
        lines.append(f"{rec.sentence_id}\t{rec.token_index}\t{rec.tag.value}\t{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_embeddings_text(path: str | Path) -> list[EmbeddingRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty embedding file")
    count, dim = (int(x) for x in lines[0].split("\t"))
    records = []
    for line in lines[1 : count + 1]:
        fields = line.split("\t")
        sid, idx, tag = fields[0], int(fields[1]), Tag.from_string(fields[2])
        vector = np.array([float(v) for v in fields[3:]], dtype=np.float32)
        if vector.shape[0] != dim:
            raise ValueError(f"{path}: row has {vector.shape[0]} values, expected {dim}")
        records.append(EmbeddingRecord(sid, idx, tag, vector))
    if len(records) != count:
        raise ValueError(f"{path}: header promises {count} rows, found {len(records)}")
    return records


def write_embeddings_binary(path: str | Path, records: Sequence[EmbeddingRecord]) -> None:
    """Binary rendering; see the byte layout documented at the top of this module."""
    dim = _records_dim(records)
    with open(path, "wb") as f:
        f.write(_EMB_MAGIC)
        f.write(struct.pack("<II", len(records), dim))
        for rec in records:
            sid = rec.sentence_id.encode("utf-8")
            if len(sid) > 0xFFFF:
                raise ValueError("sentence id too long for the binary layout")
            f.write(struct.pack("<H", len(sid)))
            f.write(sid)
            f.write(struct.pack("<IB", rec.token_index, TAG_INDEX[rec.tag]))
            f.write(rec.vector.astype("<f4").tobytes())


def read_embeddings_binary(path: str | Path) -> list[EmbeddingRecord]:
    data = Path(path).read_bytes()
    if data[:4] != _EMB_MAGIC:
        raise ValueError(f"{path}: not an embedding exchange file (bad magic)")
    count, dim = struct.unpack_from("<II", data, 4)
    offset = 12
    records = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        sid = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        token_index, tag_idx = struct.unpack_from("<IB", data, offset)
        offset += 5
        vector = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        records.append(EmbeddingRecord(sid, token_index, TAGS[tag_idx], vector))
    return records


def embedding_records(
    sentences: Sequence[TaggedSentence], embeddings: Sequence[np.ndarray]
) -> list[EmbeddingRecord]:
    """One record per token, tagged with the sentence's gold labels."""
    records = []
    for si, (sent, emb) in enumerate(zip(sentences, embeddings)):
        emb = np.asarray(emb)
        if emb.shape[0] != len(sent):
            raise ValueError(f"sentence {si}: {len(sent)} tokens, {emb.shape[0]} vectors")
        sid = sent.source_id or f"s{si}"
        for ti, tag in enumerate(sent.tags):
            records.append(EmbeddingRecord(sid, ti, tag, emb[ti]))
    return records


def support_set_from_records(records: Sequence[EmbeddingRecord]) -> SupportSet:
    entries = [SupportEntry(r.tag, r.sentence_id, r.token_index) for r in records]
    return SupportSet(np.stack([r.vector.astype(np.float64) for r in records]), entries)


def _records_dim(records: Sequence[EmbeddingRecord]) -> int:
    if not records:
        raise ValueError("no embedding records to write")
    dims = {r.vector.shape[0] for r in records}
    if len(dims) != 1:
        raise ValueError(f"mixed embedding dimensions: {sorted(dims)}")
    return dims.pop()
