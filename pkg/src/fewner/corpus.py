"""Data model, ingestion, serialization, and statistics for the 13-category
vulnerability-report NER corpus.

Sentences are token/tag aligned over the flat tag set {SN, SV, O} (software
name, software version, non-entity). Files are two-column CoNLL-style:
``token<TAB>tag``, one token per line, blank line between sentences.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class Tag(Enum):
    SN = "SN"
    SV = "SV"
    O = "O"

    @classmethod
    def from_string(cls, value: str) -> "Tag":
        try:
            return cls(value)
        except ValueError:
            raise TagError(f"unknown tag {value!r}; expected one of SN, SV, O") from None


# Fixed tag order; index positions are the contract for classifier heads,
# transition matrices, and the Viterbi tie-break.
TAGS: tuple[Tag, ...] = (Tag.SN, Tag.SV, Tag.O)
TAG_INDEX: dict[Tag, int] = {t: i for i, t in enumerate(TAGS)}

ENTITY_TAGS: tuple[Tag, ...] = (Tag.SN, Tag.SV)

CATEGORIES: tuple[str, ...] = (
    "memc",
    "bypass",
    "csrf",
    "dirtra",
    "dos",
    "execution",
    "fileinc",
    "gainpre",
    "httprs",
    "infor",
    "overflow",
    "sqli",
    "xss",
)

# memc is the fine-tuning source; the other 12 are transfer targets.
TRANSFER_CATEGORIES: tuple[str, ...] = tuple(c for c in CATEGORIES if c != "memc")

SPLITS: tuple[str, ...] = ("train", "valid", "test")

# Reserved comment prefix carrying the sentence's source id through
# serialization so round trips preserve it. A genuine token line never
# matches: tokens cannot contain whitespace.
_SOURCE_PREFIX = "# source:"


class ParseError(ValueError):
    """Malformed corpus text (wrong column count, bad structure)."""


class TagError(ParseError):
    """Tag string outside {SN, SV, O}."""


def validate_category(name: str) -> str:
    if name not in CATEGORIES:
        raise ValueError(f"unknown category {name!r}; expected one of {', '.join(CATEGORIES)}")
    return name


@dataclass(frozen=True)
class TaggedSentence:
    """A token sequence with a parallel tag sequence; the atomic sample."""

    tokens: tuple[str, ...]
    tags: tuple[Tag, ...]
    source_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) == 0:
            raise ValueError("sentence must contain at least one token")
        if len(self.tokens) != len(self.tags):
            raise ValueError(
                f"token/tag length mismatch: {len(self.tokens)} tokens, {len(self.tags)} tags"
            )
        for tok in self.tokens:
            if not tok or tok.split() != [tok]:
                raise ValueError(f"token {tok!r} is empty or contains whitespace")
        for tag in self.tags:
            if not isinstance(tag, Tag):
                raise TagError(f"tag {tag!r} is not a Tag")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def has_entity(self) -> bool:
        return any(t is not Tag.O for t in self.tags)


@dataclass
class Corpus:
    """Map from (category, split) to the sentences of that file, in file order."""

    entries: dict[tuple[str, str], list[TaggedSentence]] = field(default_factory=dict)

    def get(self, category: str, split: str) -> list[TaggedSentence]:
        key = (category, split)
        if key not in self.entries:
            raise KeyError(f"corpus has no entry for category={category!r} split={split!r}")
        return self.entries[key]

    def has(self, category: str, split: str) -> bool:
        return (category, split) in self.entries

    def categories(self) -> list[str]:
        present = {cat for cat, _ in self.entries}
        return [c for c in CATEGORIES if c in present]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CorpusStats:
    n_sentences: int
    sentence_entity_prop: float
    token_prop_sn: float
    token_prop_sv: float
    nononly_prop: float


def parse_conll(text: str, delimiter: str | None = "\t") -> list[TaggedSentence]:
    """Parse two-column CoNLL-style text into sentences.

    ``delimiter`` is the column separator; ``None`` splits on any run of
    whitespace (for releases that use multiple spaces instead of tabs).
    Blank lines separate sentences; empty blocks are skipped. Raises
    ParseError (with 1-based line number) on malformed lines and TagError
    on tags outside {SN, SV, O}.
    """
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    tags: list[Tag] = []
    source_id: str | None = None

    def flush() -> None:
        nonlocal tokens, tags, source_id
        if tokens:
            sentences.append(TaggedSentence(tuple(tokens), tuple(tags), source_id))
        tokens, tags, source_id = [], [], None

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            flush()
            continue
        if line.startswith(_SOURCE_PREFIX):
            source_id = line[len(_SOURCE_PREFIX):].strip() or None
            continue
        fields = line.split(delimiter) if delimiter is not None else line.split()
        if len(fields) != 2 or not fields[0] or not fields[1] or fields[0].split() != [fields[0]]:
            raise ParseError(f"line {lineno}: expected two columns 'token tag', got {line!r}")
        try:
            tag = Tag.from_string(fields[1].strip())
        except TagError as exc:
            raise TagError(f"line {lineno}: {exc}") from None
        tokens.append(fields[0])
        tags.append(tag)
    flush()
    return sentences


def serialize_conll(sentences: Iterable[TaggedSentence]) -> str:
    """Render sentences in the tab-separated format read by parse_conll.

    Inverse of parse_conll: ``parse_conll(serialize_conll(s)) == s``.
    """
    blocks = []
    for sent in sentences:
        lines = []
        if sent.source_id is not None:
            lines.append(f"{_SOURCE_PREFIX} {sent.source_id}")
        lines.extend(f"{tok}\t{tag.value}" for tok, tag in zip(sent.tokens, sent.tags))
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def load_viem_dataset(root: str | Path, delimiter: str | None = "\t") -> Corpus:
    """Load a dataset root laid out as ``<root>/<category>/<split>.txt``.

    Only (category, split) files present on disk become entries; memc is the
    only category guaranteed an official valid split. Parse errors are
    re-raised with the offending file path.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    corpus = Corpus()
    for category in CATEGORIES:
        cat_dir = root / category
        if not cat_dir.is_dir():
            continue
        for split in SPLITS:
            path = cat_dir / f"{split}.txt"
            if not path.is_file():
                continue
            try:
                sentences = parse_conll(path.read_text(encoding="utf-8"), delimiter=delimiter)
            except ParseError as exc:
                raise ParseError(f"{path}: {exc}") from None
            corpus.entries[(category, split)] = sentences
    if not corpus.entries:
        raise FileNotFoundError(f"no <category>/<split>.txt files found under {root}")
    return corpus


def compute_statistics(sentences: Sequence[TaggedSentence]) -> CorpusStats:
    """Sentence- and token-level entity proportions for one split."""
    if not sentences:
        raise ValueError("cannot compute statistics of an empty sentence list")
    n = len(sentences)
    with_entity = sum(1 for s in sentences if s.has_entity)
    total_tokens = sum(len(s) for s in sentences)
    sn_tokens = sum(1 for s in sentences for t in s.tags if t is Tag.SN)
    sv_tokens = sum(1 for s in sentences for t in s.tags if t is Tag.SV)
    return CorpusStats(
        n_sentences=n,
        sentence_entity_prop=with_entity / n,
        token_prop_sn=sn_tokens / total_tokens,
        token_prop_sv=sv_tokens / total_tokens,
        nononly_prop=(n - with_entity) / n,
    )


def spans_of_tags(tags: Sequence[Tag]) -> list[tuple[int, int, Tag]]:
    """Maximal runs of identical non-O tags as half-open [start, end) spans.

    The tag set has no B/I boundary markers, so adjacent same-tag tokens
    always merge into one span.
    """
    spans: list[tuple[int, int, Tag]] = []
    start = None
    current: Tag | None = None
    for i, tag in enumerate(tags):
        if tag is not current:
            if current is not None and current is not Tag.O:
                spans.append((start, i, current))
            start, current = i, tag
    if current is not None and current is not Tag.O:
        spans.append((start, len(tags), current))
    return spans


def extract_spans(sentence: TaggedSentence) -> list[tuple[int, int, Tag]]:
    return spans_of_tags(sentence.tags)


# ---------------------------------------------------------------------------
# Statistics tables


STATS_COLUMNS = (
    "category",
    "split",
    "n",
    "sentence_entity_prop",
    "token_prop_sn",
    "token_prop_sv",
)


def stats_rows(corpus: Corpus) -> list[dict]:
    """One row per present (category, split), in category then split order."""
    rows = []
    for category in CATEGORIES:
        for split in SPLITS:
            if not corpus.has(category, split):
                continue
            st = compute_statistics(corpus.get(category, split))
            rows.append(
                {
                    "category": category,
                    "split": split,
                    "n": st.n_sentences,
                    "sentence_entity_prop": st.sentence_entity_prop,
                    "token_prop_sn": st.token_prop_sn,
                    "token_prop_sv": st.token_prop_sv,
                }
            )
    return rows


def nononly_proportion(corpus: Corpus, include_memc: bool = True) -> float:
    """Fraction of all-O sentences pooled over the categories' training data.

    Pooling rule: memc contributes train+valid (its valid split is official
    and was part of the original system's training pool), the other 12
    categories contribute train only (their valid files are a later carve
    from the official train). This is the unique split-union rule that
    reproduces both published aggregate figures from the per-split
    statistics.
    """
    pooled: list[TaggedSentence] = []
    for (category, split), sentences in corpus.entries.items():
        if split == "test":
            continue
        if category == "memc":
            if not include_memc:
                continue
        elif split != "train":
            continue
        pooled.extend(sentences)
    if not pooled:
        raise ValueError("corpus has no train/valid sentences to aggregate")
    return compute_statistics(pooled).nononly_prop


def render_stats_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STATS_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row["category"],
                row["split"],
                row["n"],
                f"{row['sentence_entity_prop']:.4f}",
                f"{row['token_prop_sn']:.4f}",
                f"{row['token_prop_sv']:.4f}",
            ]
        )
    return buf.getvalue()


def render_stats_text(rows: list[dict]) -> str:
    header = f"{'category':<10} {'split':<6} {'n':>6} {'sent-entity':>12} {'tok-SN':>8} {'tok-SV':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['category']:<10} {row['split']:<6} {row['n']:>6} "
            f"{row['sentence_entity_prop']:>12.4f} {row['token_prop_sn']:>8.4f} "
            f"{row['token_prop_sv']:>8.4f}"
        )
    return "\n".join(lines) + "\n"
