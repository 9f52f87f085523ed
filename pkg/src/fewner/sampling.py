"""Deterministic construction of few-sample training and validation sets.

Every draw is a pure function of (input order, spec, seed). The generator is
pinned to CPython's ``random.Random`` (MT19937) with ``sample()``, recorded in
each provenance manifest so subsets are reproducible across machines running
the same interpreter family. The data-preparation seed defaults to 42.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import TRANSFER_CATEGORIES, TaggedSentence, serialize_conll

DEFAULT_SEED = 42
GENERATOR_ID = "cpython-random-mt19937/sample"

# Validation sets match the training-subset size up to this cap on the full
# training set; larger subsets get floor(0.10 * N) validation sentences.
VALIDATION_CAP_FRACTION = 0.10


@dataclass(frozen=True)
class SamplingSpec:
    """Recipe for one deterministic subset: mode, size value, seed."""

    mode: str  # "proportion" | "count"
    value: float | int
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if self.mode not in ("proportion", "count"):
            raise ValueError(f"mode must be 'proportion' or 'count', got {self.mode!r}")
        if self.mode == "proportion":
            if not (0 < self.value <= 1):
                raise ValueError(f"proportion must be in (0, 1], got {self.value}")
        else:
            if int(self.value) != self.value or self.value < 1:
                raise ValueError(f"count must be a positive integer, got {self.value}")


@dataclass
class FewSampleSplit:
    train: list[TaggedSentence]
    valid: list[TaggedSentence]
    provenance: dict = field(default_factory=dict)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _draw(n: int, k: int, seed: int) -> list[int]:
    """k distinct indices from range(n), ascending (source order preserved)."""
    return sorted(random.Random(seed).sample(range(n), k))


def sample_proportion(
    sentences: Sequence[TaggedSentence], p: float, seed: int = DEFAULT_SEED
) -> list[TaggedSentence]:
    """Uniform subset of size round-half-up(p * N), without replacement.

    Round-half-up is the rule consistent with the reference sizes
    1% of 5758 -> 58 and 10% of 5758 -> 576.
    """
    if not sentences:
        raise ValueError("cannot sample from an empty sentence list")
    if not (0 < p <= 1):
        raise ValueError(f"proportion must be in (0, 1], got {p}")
    size = _round_half_up(p * len(sentences))
    if size == 0:
        raise ValueError(f"proportion {p} of {len(sentences)} sentences rounds to 0")
    return [sentences[i] for i in _draw(len(sentences), size, seed)]


def sample_count(
    sentences: Sequence[TaggedSentence],
    k: int,
    seed: int = DEFAULT_SEED,
    label: str | None = None,
) -> list[TaggedSentence]:
    """Uniform subset of exactly k sentences, source order preserved."""
    where = f" for {label}" if label else ""
    if not sentences:
        raise ValueError(f"cannot sample from an empty sentence list{where}")
    if k < 1:
        raise ValueError(f"sample count must be >= 1, got {k}{where}")
    if k > len(sentences):
        raise ValueError(
            f"sample count {k} exceeds population size {len(sentences)}{where}"
        )
    return [sentences[i] for i in _draw(len(sentences), k, seed)]


def build_aggregate(
    subsets: Mapping[str, Sequence[TaggedSentence]]
) -> list[TaggedSentence]:
    """Concatenate per-category subsets in fixed (lexicographic) name order.

    memc is the fine-tuning source, not a transfer target, and is rejected.
    """
    for name in subsets:
        if name == "memc":
            raise ValueError("memc is the fine-tuning source and cannot join the aggregate")
        if name not in TRANSFER_CATEGORIES:
            raise ValueError(f"unknown transfer category {name!r}")
    out: list[TaggedSentence] = []
    for name in sorted(subsets):
        out.extend(subsets[name])
    return out


def carve_validation(
    train: Sequence[TaggedSentence], fraction: float = 0.10, seed: int = DEFAULT_SEED
) -> tuple[list[TaggedSentence], list[TaggedSentence]]:
    """Split off a held-out validation set from an official train split.

    Used for the 12 categories that lack an official valid split. Returns
    (train_remainder, valid); valid has round-half-up(fraction * N) sentences.
    """
    if not (0 < fraction < 1):
        raise ValueError(f"carve fraction must be in (0, 1), got {fraction}")
    if len(train) < 10:
        raise ValueError(f"need at least 10 sentences to carve validation, got {len(train)}")
    n_valid = _round_half_up(fraction * len(train))
    valid_idx = set(_draw(len(train), n_valid, seed))
    valid = [train[i] for i in range(len(train)) if i in valid_idx]
    remainder = [train[i] for i in range(len(train)) if i not in valid_idx]
    return remainder, valid


def build_fewsample_validation(
    full_train: Sequence[TaggedSentence],
    train_subset: Sequence[TaggedSentence],
    seed: int = DEFAULT_SEED,
) -> list[TaggedSentence]:
    """Validation set sized min(|subset|, floor(0.10 * |full|)), disjoint from subset.

    The 10% cap uses floor (576-sentence subsets of memc get 575 validation
    sentences, not 576). Disjointness is by sentence identity: one occurrence
    is removed from the candidate pool per subset occurrence, so duplicated
    sentences in the source stay available.
    """
    remaining = Counter(train_subset)
    candidates: list[TaggedSentence] = []
    for sent in full_train:
        if remaining.get(sent, 0) > 0:
            remaining[sent] -= 1
        else:
            candidates.append(sent)
    leftovers = sum(remaining.values())
    if leftovers:
        raise ValueError(f"train subset has {leftovers} sentences not found in the full train set")
    size = min(len(train_subset), math.floor(VALIDATION_CAP_FRACTION * len(full_train)))
    if size == 0:
        raise ValueError("validation size computed as 0; full train set too small")
    if size > len(candidates):
        raise ValueError(
            f"need {size} validation sentences but only {len(candidates)} remain outside the subset"
        )
    return [candidates[i] for i in _draw(len(candidates), size, seed)]


def make_fewsample_split(
    full_train: Sequence[TaggedSentence],
    spec: SamplingSpec,
    source: tuple[str, str] | None = None,
) -> FewSampleSplit:
    """Sample a training subset per spec plus its matched validation set.

    The validation draw uses seed + 1 so the two selections are independent
    but still fully determined by the spec.
    """
    label = "/".join(source) if source else None
    if spec.mode == "proportion":
        train = sample_proportion(full_train, float(spec.value), spec.seed)
    else:
        train = sample_count(full_train, int(spec.value), spec.seed, label=label)
    valid = build_fewsample_validation(full_train, train, seed=spec.seed + 1)
    return FewSampleSplit(
        train=train,
        valid=valid,
        provenance=sampling_provenance(spec, full_train, train, valid, source),
    )


def corpus_sha256(sentences: Sequence[TaggedSentence]) -> str:
    return hashlib.sha256(serialize_conll(sentences).encode("utf-8")).hexdigest()


def sampling_provenance(
    spec: SamplingSpec,
    full_train: Sequence[TaggedSentence],
    train: Sequence[TaggedSentence],
    valid: Sequence[TaggedSentence] | None,
    source: tuple[str, str] | None = None,
) -> dict:
    prov = {
        "mode": spec.mode,
        "value": spec.value,
        "seed": spec.seed,
        "generator": GENERATOR_ID,
        "source": {"category": source[0], "split": source[1]} if source else None,
        "source_size": len(full_train),
        "source_sha256": corpus_sha256(full_train),
        "train_size": len(train),
        "validation_rule": "min(|train|, floor(0.10 * |full_train|)), floor on the cap",
    }
    if valid is not None:
        prov["valid_size"] = len(valid)
        prov["valid_seed"] = spec.seed + 1
    return prov


def write_manifest(path: str | Path, provenance: dict) -> None:
    Path(path).write_text(json.dumps(provenance, indent=2) + "\n", encoding="utf-8")
