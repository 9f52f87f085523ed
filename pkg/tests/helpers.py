"""Shared test fixtures: tiny offline encoders, synthetic corpora, oracles."""

from __future__ import annotations

import itertools
import random
from pathlib import Path

import numpy as np

from fewner.corpus import TAGS, Tag, TaggedSentence

O_WORDS = [
    "the", "a", "allows", "remote", "attackers", "to", "execute", "arbitrary",
    "code", "via", "crafted", "requests", "in", "component", "before", "and",
    "issue", "was", "found", "which", "could", "cause", "denial", "of",
    "service", "through", "unspecified", "vectors", "field", "parameter",
]
SN_WORDS = ["WidgetServer", "AcmePanel", "DataGate", "NetLink", "FooDaemon", "BarProxy"]
SV_WORDS = ["1.0", "2.3", "3.14", "0.9", "7.2", "10.1"]

_SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
_DIGIT_PIECES = [str(d) for d in range(10)] + ["."]


def tiny_encoder_vocab(extra_words: list[str] | None = None) -> list[str]:
    """Wordpiece vocab covering the synthetic corpora, with some multi-piece words.

    NetLink is deliberately absent as a whole word so it splits into
    Net + ##Link, exercising continuation-piece handling.
    """
    words = set(O_WORDS) | set(SN_WORDS) | set(SV_WORDS) - {"NetLink"}
    words.discard("NetLink")
    vocab = list(_SPECIALS) + sorted(words) + _DIGIT_PIECES + ["Net", "##Link", "w"]
    vocab += [f"##{d}" for d in range(10)]
    if extra_words:
        vocab += [w for w in extra_words if w not in vocab]
    return vocab


def build_tiny_encoder(
    dest: Path,
    extra_words: list[str] | None = None,
    hidden: int = 48,
    layers: int = 2,
    heads: int = 4,
    max_positions: int = 128,
    seed: int = 42,
) -> str:
    """Randomly initialized BERT-style encoder + tokenizer saved under dest."""
    import torch
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.normalizers import BertNormalizer
    from tokenizers.pre_tokenizers import BertPreTokenizer
    from tokenizers.processors import TemplateProcessing
    from transformers import AutoModelForTokenClassification, BertConfig, BertTokenizerFast

    vocab = tiny_encoder_vocab(extra_words)
    vd = {w: i for i, w in enumerate(vocab)}
    tk = Tokenizer(WordPiece(vd, unk_token="[UNK]", max_input_chars_per_word=100))
    tk.normalizer = BertNormalizer(lowercase=False)
    tk.pre_tokenizer = BertPreTokenizer()
    tk.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vd["[CLS]"]), ("[SEP]", vd["[SEP]"])],
    )
    tokenizer = BertTokenizerFast(
        tokenizer_object=tk,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
        do_lower_case=False,
        model_max_length=max_positions,
    )
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden,
        num_hidden_layers=layers,
        num_attention_heads=heads,
        intermediate_size=hidden * 2,
        max_position_embeddings=max_positions,
        num_labels=len(TAGS),
    )
    torch.manual_seed(seed)
    model = AutoModelForTokenClassification.from_config(config)
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(dest)
    tokenizer.save_pretrained(dest)
    return str(dest)


def make_separable_corpus(n: int = 50, seed: int = 7) -> list[TaggedSentence]:
    """n sentences, each with exactly one SN and one SV token.

    Entity words never occur as O and vice versa, so a tagger only needs to
    memorize token identity: trivially separable.
    """
    rng = random.Random(seed)
    sentences = []
    for i in range(n):
        o = [rng.choice(O_WORDS) for _ in range(4)]
        sn = rng.choice(SN_WORDS)
        sv = rng.choice(SV_WORDS)
        tokens = [o[0], o[1], sn, sv, o[2], o[3]]
        tags = [Tag.O, Tag.O, Tag.SN, Tag.SV, Tag.O, Tag.O]
        sentences.append(TaggedSentence(tuple(tokens), tuple(tags), source_id=f"syn-{i}"))
    return sentences


def make_unique_token_corpus(
    n_sentences: int, rng: random.Random, min_len: int = 3, max_len: int = 8
) -> list[TaggedSentence]:
    """Random tags over globally unique token strings (w<counter>)."""
    counter = itertools.count(rng.randrange(10_000))
    sentences = []
    for i in range(n_sentences):
        length = rng.randint(min_len, max_len)
        tokens = tuple(f"w{next(counter)}" for _ in range(length))
        tags = tuple(rng.choice(TAGS) for _ in range(length))
        sentences.append(TaggedSentence(tokens, tags, source_id=f"u{i}"))
    return sentences


def random_tag_sequences(
    rng: random.Random, n: int, min_len: int = 1, max_len: int = 12
) -> list[list[Tag]]:
    return [
        [rng.choice(TAGS) for _ in range(rng.randint(min_len, max_len))] for _ in range(n)
    ]


# ---------------------------------------------------------------------------
# Independent oracles


def confusion_matrix_prf(gold, pred):
    """Brute-force per-tag P/R/F1 from an explicit confusion matrix."""
    matrix = {}
    for g_seq, p_seq in zip(gold, pred):
        for g, p in zip(g_seq, p_seq):
            matrix[(g, p)] = matrix.get((g, p), 0) + 1
    out = {}
    for tag in (Tag.SN, Tag.SV):
        tp = matrix.get((tag, tag), 0)
        fp = sum(v for (g, p), v in matrix.items() if p is tag and g is not tag)
        fn = sum(v for (g, p), v in matrix.items() if g is tag and p is not tag)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[tag] = (precision, recall, f1, tp + fn)
    return out


def brute_force_viterbi(emission_probs, transitions):
    """Exhaustive enumeration of every tag sequence; lexicographic tie-break."""
    n, k = emission_probs.shape
    log_e = np.log(emission_probs)
    log_s = np.log(transitions.start)
    log_t = np.log(transitions.transition)
    log_end = np.log(transitions.end)
    best_seq, best_score = None, None
    for seq in itertools.product(range(k), repeat=n):
        score = log_s[seq[0]] + log_e[0, seq[0]]
        for t in range(1, n):
            score += log_t[seq[t - 1], seq[t]] + log_e[t, seq[t]]
        score += log_end[seq[-1]]
        if best_score is None or score > best_score:
            best_seq, best_score = seq, score
    return [TAGS[i] for i in best_seq], float(best_score)


def linear_scan_nn(query, embeddings, tags):
    """Nearest support row by squared distance on normalized vectors."""
    q = query / np.linalg.norm(query)
    best_i, best_d = 0, None
    for i in range(embeddings.shape[0]):
        e = embeddings[i] / np.linalg.norm(embeddings[i])
        d = float(np.sum((q - e) ** 2))
        if best_d is None or d < best_d:
            best_i, best_d = i, d
    return tags[best_i], best_d
