"""Fine-tuning and prediction for a pretrained contextual encoder with a
per-token classification head.

Any encoder resolvable by the transformers Auto classes works (hub id or
local directory); the three studied variants are bert-large-cased,
roberta-large, and electra-base-discriminator. Labels sit on each token's
first subword piece; continuation and special pieces carry an IGNORE marker
excluded from loss and evaluation. Checkpoint selection maximizes the
support-weighted F1 over SN and SV on the validation set.
"""

from __future__ import annotations

import math
import random
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .corpus import TAG_INDEX, TAGS, Tag, TaggedSentence
from .evaluation import EvalReport, token_prf

IGNORE_INDEX = -100

# lr x epochs grid used for hyperparameter search; batch size is fixed at 2.
DEFAULT_GRID: tuple[tuple[float, int], ...] = (
    (1e-6, 3),
    (1e-6, 5),
    (5e-6, 3),
    (5e-6, 5),
    (1e-5, 3),
    (1e-5, 5),
)


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss)."""


class AlignmentError(ValueError):
    """Raised when subword alignment cannot cover every original token."""


@dataclass(frozen=True)
class EncoderHandle:
    """Identifier of a pretrained contextual encoder (hub name or local path)."""

    name_or_path: str

    def load(self, seed: int | None = None):
        """Resolve to (tokenizer, token-classification model).

        Seeding before load makes the randomly initialized classification
        head reproducible. Raises if the name cannot be resolved to weights
        and a subword tokenizer.
        """
        from transformers import AutoModelForTokenClassification, AutoTokenizer

        if seed is not None:
            torch.manual_seed(seed)
        try:
            tokenizer = AutoTokenizer.from_pretrained(self.name_or_path)
            model = AutoModelForTokenClassification.from_pretrained(
                self.name_or_path, num_labels=len(TAGS)
            )
        except Exception as exc:
            raise ValueError(
                f"encoder {self.name_or_path!r} could not be resolved: {exc}"
            ) from exc
        if not tokenizer.is_fast:
            raise ValueError(
                f"encoder {self.name_or_path!r} has no fast tokenizer; "
                "subword alignment requires one"
            )
        return tokenizer, model


@dataclass(frozen=True)
class TokenizationAlignment:
    """Per original token, the half-open range of its subword pieces."""

    piece_spans: tuple[tuple[int, int], ...]
    special_positions: tuple[int, ...]
    n_pieces: int

    def __post_init__(self) -> None:
        prev_end = None
        for start, end in self.piece_spans:
            if end <= start:
                raise AlignmentError(f"empty piece span ({start}, {end})")
            if prev_end is not None and start < prev_end:
                raise AlignmentError("piece spans overlap or are out of order")
            prev_end = end


@dataclass
class TrainingConfig:
    """Hyperparameters for one training run.

    Batch size 2 and seed 42 are the experiment-protocol defaults; half
    precision is opt-in and excluded from deterministic comparisons.
    """

    learning_rate: float = 1e-5
    epochs: int = 3
    batch_size: int = 2
    seed: int = 42
    # data-order shuffling seed; None ties it to `seed`, so a restart reseeds
    # both initialization and data order. Pin it to keep data order fixed
    # while varying initialization only.
    data_order_seed: int | None = None
    precision: str = "full"  # "full" | "half"
    checkpoints_per_run: int = 5
    weight_decay: float = 0.0
    max_grad_norm: float = 1.0
    device: str | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must not be negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.precision not in ("full", "half"):
            raise ValueError("precision must be 'full' or 'half'")
        if self.checkpoints_per_run < 1:
            raise ValueError("checkpoints_per_run must be >= 1")

    def resolved_device(self) -> str:
        if self.device:
            return self.device
        return "cuda" if torch.cuda.is_available() else "cpu"

    def manifest(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "data_order_seed": self.data_order_seed,
            "precision": self.precision,
            "checkpoints_per_run": self.checkpoints_per_run,
            "optimizer": "adamw",
            "lr_schedule": "linear-decay, no warmup",
            "weight_decay": self.weight_decay,
            "max_grad_norm": self.max_grad_norm,
        }


class TaggerModel:
    """Encoder + classification head bound to its tokenizer and device."""

    def __init__(self, tokenizer, model, device: str = "cpu"):
        self.tokenizer = tokenizer
        self.model = model.to(device)
        self.device = device
        max_pos = getattr(model.config, "max_position_embeddings", 512)
        self.max_length = min(max_pos, 512)

    def eval(self) -> "TaggerModel":
        self.model.eval()
        return self

    @property
    def hidden_size(self) -> int:
        return self.model.config.hidden_size


@dataclass
class Checkpoint:
    """Model snapshot with the validation report that selected it."""

    encoder_name: str
    step: int
    report: EvalReport
    weighted_f1: float
    state_dict: dict | None = None
    path: str | None = None
    # mean training loss since the previous checkpoint; None at step 0
    train_loss: float | None = None

    def load_state(self) -> dict:
        if self.state_dict is not None:
            return self.state_dict
        if self.path is None:
            raise ValueError("checkpoint holds neither an in-memory state nor a path")
        payload = torch.load(self.path, map_location="cpu", weights_only=True)
        # saved files always carry the full payload, not a bare state dict
        return payload["state_dict"] if "state_dict" in payload else payload

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "encoder_name": self.encoder_name,
                "step": self.step,
                "weighted_f1": self.weighted_f1,
                "train_loss": self.train_loss,
                "report": _report_payload(self.report),
                "state_dict": self.load_state(),
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        from .evaluation import report_from_dict

        return cls(
            encoder_name=payload["encoder_name"],
            step=payload["step"],
            report=report_from_dict(payload["report"]),
            weighted_f1=payload["weighted_f1"],
            state_dict=payload["state_dict"],
            path=str(path),
            train_loss=payload.get("train_loss"),
        )


def _report_payload(report: EvalReport) -> dict:
    from .evaluation import report_to_dict

    return report_to_dict(report)


def weighted_f1(report: EvalReport) -> float:
    """Support-weighted F1 over SN and SV used for checkpoint selection."""
    n_sn, n_sv = report.sn.support, report.sv.support
    if n_sn + n_sv == 0:
        raise ValueError("weighted F1 is undefined when no SN or SV tokens exist")
    return (n_sn * report.sn.f1 + n_sv * report.sv.f1) / (n_sn + n_sv)


# ---------------------------------------------------------------------------
# Tokenization and label alignment


def tokenize_with_alignment(tokenizer, tokens: Sequence[str]) -> tuple[list[int], TokenizationAlignment]:
    """Encode pre-tokenized input without truncation; map tokens to piece ranges."""
    enc = tokenizer(list(tokens), is_split_into_words=True, add_special_tokens=True)
    word_ids = enc.word_ids()
    ids = enc["input_ids"]
    spans: dict[int, list[int]] = {}
    specials = []
    for pos, wid in enumerate(word_ids):
        if wid is None:
            specials.append(pos)
        else:
            spans.setdefault(wid, [pos, pos + 1])[1] = pos + 1
    piece_spans = []
    for ti in range(len(tokens)):
        if ti not in spans:
            raise AlignmentError(
                f"token {tokens[ti]!r} (index {ti}) mapped to no subword pieces"
            )
        piece_spans.append(tuple(spans[ti]))
    alignment = TokenizationAlignment(
        piece_spans=tuple(piece_spans),
        special_positions=tuple(specials),
        n_pieces=len(ids),
    )
    return ids, alignment


def align_labels(sentence: TaggedSentence, alignment: TokenizationAlignment) -> list[int]:
    """Per-piece label ids: first piece carries the token's tag, the rest IGNORE."""
    if len(alignment.piece_spans) != len(sentence):
        raise ValueError(
            f"alignment covers {len(alignment.piece_spans)} tokens, "
            f"sentence has {len(sentence)}"
        )
    labels = [IGNORE_INDEX] * alignment.n_pieces
    for (start, _end), tag in zip(alignment.piece_spans, sentence.tags):
        labels[start] = TAG_INDEX[tag]
    return labels


# ---------------------------------------------------------------------------
# Windowing for sentences longer than the encoder budget


def _token_windows(piece_counts: Sequence[int], budget: int) -> list[tuple[int, int]]:
    """Split token indices into overlapping windows whose pieces fit the budget.

    Windows advance by about half the budget (in pieces), always at whole-token
    boundaries, so every token is covered and interior tokens appear in more
    than one window.
    """
    n = len(piece_counts)
    windows = []
    start = 0
    while True:
        end = start
        total = 0
        while end < n and total + piece_counts[end] <= budget:
            total += piece_counts[end]
            end += 1
        if end == start:
            end = start + 1  # single token larger than the budget; let truncation cut it
        windows.append((start, end))
        if end >= n:
            return windows
        skipped = 0
        nxt = start
        while nxt < end and skipped < budget // 2:
            skipped += piece_counts[nxt]
            nxt += 1
        start = max(nxt, start + 1)


def _window_for_token(windows: Sequence[tuple[int, int]], token: int) -> int:
    """Window index whose center is closest to the token; earlier wins ties."""
    best, best_dist = None, None
    for wi, (start, end) in enumerate(windows):
        if not (start <= token < end):
            continue
        dist = abs((start + end - 1) / 2 - token)
        if best_dist is None or dist < best_dist:
            best, best_dist = wi, dist
    if best is None:
        raise AlignmentError(f"token {token} not covered by any window")
    return best


# ---------------------------------------------------------------------------
# Batched encoding and the forward pass


def _encode_batch(tokenizer, token_lists: Sequence[Sequence[str]], max_length: int):
    enc = tokenizer(
        [list(t) for t in token_lists],
        is_split_into_words=True,
        padding=True,
        truncation=True,
        max_length=max_length,
        return_tensors="pt",
    )
    first_piece = []
    for bi in range(len(token_lists)):
        word_ids = enc.word_ids(bi)
        seen: set[int] = set()
        positions = {}
        for pos, wid in enumerate(word_ids):
            if wid is not None and wid not in seen:
                positions[wid] = pos
                seen.add(wid)
        first_piece.append(positions)
    return enc, first_piece


def _batch_labels(enc, first_piece, tag_lists) -> torch.Tensor:
    labels = torch.full(enc["input_ids"].shape, IGNORE_INDEX, dtype=torch.long)
    for bi, tags in enumerate(tag_lists):
        for wid, pos in first_piece[bi].items():
            labels[bi, pos] = TAG_INDEX[tags[wid]]
    return labels


def _plan_sentences(
    tagger: TaggerModel, sentences: Sequence[TaggedSentence]
) -> list[list[tuple[int, int, int]]]:
    """Per sentence: (window_start, window_end, chosen_window_flag) plan.

    Short sentences get the single window (0, len). Long ones get overlapping
    windows; each token is later read from the window where it sits most
    centrally.
    """
    budget = tagger.max_length - 2
    plans = []
    for sent in sentences:
        _, alignment = tokenize_with_alignment(tagger.tokenizer, sent.tokens)
        piece_counts = [end - start for start, end in alignment.piece_spans]
        if alignment.n_pieces <= tagger.max_length:
            plans.append([(0, len(sent), 0)])
            continue
        windows = _token_windows(piece_counts, budget)
        plans.append([(s, e, wi) for wi, (s, e) in enumerate(windows)])
    return plans


def _forward_per_token(
    tagger: TaggerModel,
    sentences: Sequence[TaggedSentence],
    batch_size: int,
    want: str,
) -> list[np.ndarray]:
    """Per-token logits or final-layer embeddings, windowing long sentences."""
    plans = _plan_sentences(tagger, sentences)
    pieces: list[tuple[int, int, int, list[str]]] = []  # (sentence, win_idx, tok_start, tokens)
    for si, (sent, plan) in enumerate(zip(sentences, plans)):
        for tok_start, tok_end, wi in plan:
            pieces.append((si, wi, tok_start, list(sent.tokens[tok_start:tok_end])))

    window_outputs: dict[tuple[int, int], dict[int, np.ndarray]] = {}
    tagger.model.eval()
    with torch.no_grad():
        for i in range(0, len(pieces), batch_size):
            chunk = pieces[i : i + batch_size]
            enc, first_piece = _encode_batch(
                tagger.tokenizer, [c[3] for c in chunk], tagger.max_length
            )
            enc = {k: v.to(tagger.device) for k, v in enc.items()}
            if want == "embeddings":
                out = tagger.model(**enc, output_hidden_states=True)
                values = out.hidden_states[-1]
            else:
                values = tagger.model(**enc).logits
            values = values.float().cpu().numpy()
            for bi, (si, wi, tok_start, tokens) in enumerate(chunk):
                per_token = {}
                for wid, pos in first_piece[bi].items():
                    per_token[tok_start + wid] = values[bi, pos]
                window_outputs[(si, wi)] = per_token

    results = []
    for si, (sent, plan) in enumerate(zip(sentences, plans)):
        if len(plan) == 1:
            per_token = window_outputs[(si, 0)]
        else:
            windows = [(s, e) for s, e, _ in plan]
            per_token = {}
            for ti in range(len(sent)):
                wi = _window_for_token(windows, ti)
                per_token[ti] = window_outputs[(si, wi)][ti]
        missing = [t for t in range(len(sent)) if t not in per_token]
        if missing:
            raise AlignmentError(
                f"sentence {si}: tokens {missing} lost to truncation; encoder budget too small"
            )
        results.append(np.stack([per_token[t] for t in range(len(sent))]))
    return results


def predict(
    tagger: TaggerModel, sentences: Sequence[TaggedSentence], batch_size: int = 16
) -> list[list[Tag]]:
    """Argmax tag at each token's first subword piece."""
    if not sentences:
        return []
    logits = _forward_per_token(tagger, sentences, batch_size, want="logits")
    return [[TAGS[int(i)] for i in np.argmax(sent_logits, axis=1)] for sent_logits in logits]


def extract_token_embeddings(
    tagger: TaggerModel, sentences: Sequence[TaggedSentence], batch_size: int = 16
) -> list[np.ndarray]:
    """Final-encoder-layer vector at each token's first subword piece."""
    if not sentences:
        return []
    return _forward_per_token(tagger, sentences, batch_size, want="embeddings")


# ---------------------------------------------------------------------------
# Training


def _checkpoint_steps(total_steps: int, n_checkpoints: int) -> list[int]:
    """Evenly spaced step numbers, always exactly n_checkpoints of them."""
    if total_steps <= 0:
        return [0] * n_checkpoints
    return [max(1, round(total_steps * i / n_checkpoints)) for i in range(1, n_checkpoints + 1)]


def _split_overlong(
    sentences: Sequence[TaggedSentence], tokenizer, max_length: int
) -> list[TaggedSentence]:
    """Split training sentences that exceed the piece budget at token boundaries."""
    out = []
    for sent in sentences:
        _, alignment = tokenize_with_alignment(tokenizer, sent.tokens)
        if alignment.n_pieces <= max_length:
            out.append(sent)
            continue
        piece_counts = [end - start for start, end in alignment.piece_spans]
        start = 0
        while start < len(sent):
            end = start
            total = 0
            while end < len(sent) and total + piece_counts[end] <= max_length - 2:
                total += piece_counts[end]
                end += 1
            if end == start:
                end = start + 1
            out.append(
                TaggedSentence(sent.tokens[start:end], sent.tags[start:end], sent.source_id)
            )
            start = end
    return out


def _evaluate(tagger: TaggerModel, valid: Sequence[TaggedSentence]) -> tuple[EvalReport, float]:
    gold = [s.tags for s in valid]
    pred = predict(tagger, valid)
    report = token_prf(gold, pred)
    return report, weighted_f1(report)


def _run_training(
    tagger: TaggerModel,
    encoder_name: str,
    train: Sequence[TaggedSentence],
    valid: Sequence[TaggedSentence],
    config: TrainingConfig,
    save_dir: str | Path | None,
) -> tuple[Checkpoint, list[Checkpoint]]:
    device = tagger.device
    model = tagger.model
    train = _split_overlong(train, tagger.tokenizer, tagger.max_length)

    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    boundaries = _checkpoint_steps(total_steps, config.checkpoints_per_run)

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: max(0.0, 1.0 - step / total_steps) if total_steps else 1.0
    )
    order_seed = config.data_order_seed if config.data_order_seed is not None else config.seed
    data_rng = random.Random(order_seed)
    use_half = config.precision == "half"
    autocast_dtype = torch.float16 if device.startswith("cuda") else torch.bfloat16
    scaler = torch.amp.GradScaler(enabled=use_half and device.startswith("cuda"))

    checkpoints: list[Checkpoint] = []
    loss_window: list[float] = []

    def snapshot(step: int) -> None:
        report, wf1 = _evaluate(tagger, valid)
        state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
        ckpt = Checkpoint(
            encoder_name=encoder_name,
            step=step,
            report=report,
            weighted_f1=wf1,
            state_dict=state,
            train_loss=sum(loss_window) / len(loss_window) if loss_window else None,
        )
        loss_window.clear()
        if save_dir is not None:
            path = Path(save_dir) / f"step-{step:06d}-{len(checkpoints)}.pt"
            ckpt.save(path)
            ckpt.state_dict = None
            ckpt.path = str(path)
        checkpoints.append(ckpt)
        model.train()

    if total_steps == 0:
        snapshot(0)
    else:
        step = 0
        boundary_iter = iter(boundaries)
        pending = next(boundary_iter)
        model.train()
        done = False
        while not done:
            order = list(range(len(train)))
            data_rng.shuffle(order)
            for i in range(0, len(order), config.batch_size):
                batch = [train[j] for j in order[i : i + config.batch_size]]
                enc, first_piece = _encode_batch(
                    tagger.tokenizer, [s.tokens for s in batch], tagger.max_length
                )
                labels = _batch_labels(enc, first_piece, [s.tags for s in batch]).to(device)
                enc = {k: v.to(device) for k, v in enc.items()}
                optimizer.zero_grad()
                with torch.autocast(
                    device_type=device.split(":")[0], dtype=autocast_dtype, enabled=use_half
                ):
                    out = tagger.model(**enc, labels=labels)
                loss = out.loss
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at step {step + 1}")
                loss_window.append(float(loss.detach()))
                if scaler.is_enabled():
                    scaler.scale(loss).backward()
                    scaler.unscale_(optimizer)
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
                    scaler.step(optimizer)
                    scaler.update()
                else:
                    loss.backward()
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
                    optimizer.step()
                scheduler.step()
                step += 1
                while pending is not None and step == pending:
                    snapshot(step)
                    pending = next(boundary_iter, None)
                if step >= total_steps:
                    done = True
                    break
        # duplicate boundaries (total_steps < checkpoints_per_run) resolve here
        while pending is not None:
            snapshot(step)
            pending = next(boundary_iter, None)

    best = max(checkpoints, key=lambda c: (c.weighted_f1, -c.step))
    return best, checkpoints


def fine_tune(
    encoder: EncoderHandle,
    train: Sequence[TaggedSentence],
    valid: Sequence[TaggedSentence],
    config: TrainingConfig,
    save_dir: str | Path | None = None,
) -> tuple[Checkpoint, list[Checkpoint]]:
    """Token-classification fine-tuning with weighted-F1 checkpoint selection.

    Saves exactly config.checkpoints_per_run evenly spaced checkpoints
    regardless of the epoch count; returns (best, all) where best maximizes
    validation weighted F1 with ties to the earliest step.
    """
    if not train:
        raise ValueError("training set is empty")
    if not valid:
        raise ValueError("validation set is empty")
    if config.epochs < 1:
        raise ValueError("fine-tuning requires at least one epoch")
    _seed_everything(config.seed)
    tokenizer, model = encoder.load(seed=config.seed)
    tagger = TaggerModel(tokenizer, model, device=config.resolved_device())
    return _run_training(tagger, encoder.name_or_path, train, valid, config, save_dir)


def transfer(
    checkpoint: Checkpoint,
    train: Sequence[TaggedSentence],
    valid: Sequence[TaggedSentence],
    config: TrainingConfig,
    save_dir: str | Path | None = None,
) -> tuple[Checkpoint, list[Checkpoint]]:
    """Continue training from a fine-tuned checkpoint (encoder and head carried over).

    Same contract as fine_tune; epochs=0 is permitted and yields the source
    checkpoint re-evaluated on the new validation set.
    """
    if not train:
        raise ValueError("transfer training set is empty")
    if not valid:
        raise ValueError("transfer validation set is empty")
    _seed_everything(config.seed)
    tagger = restore_model(checkpoint, device=config.resolved_device())
    return _run_training(tagger, checkpoint.encoder_name, train, valid, config, save_dir)


def restore_model(checkpoint: Checkpoint, device: str | None = None) -> TaggerModel:
    """Materialize a TaggerModel from a checkpoint snapshot."""
    encoder = EncoderHandle(checkpoint.encoder_name)
    tokenizer, model = encoder.load()
    model.load_state_dict(checkpoint.load_state())
    resolved = device or ("cuda" if torch.cuda.is_available() else "cpu")
    return TaggerModel(tokenizer, model, device=resolved).eval()


def grid_search(
    encoder: EncoderHandle,
    train: Sequence[TaggedSentence],
    valid: Sequence[TaggedSentence],
    space: Sequence[tuple[float, int]] | None = None,
    base: TrainingConfig | None = None,
    train_fn=None,
    on_cell=None,
) -> tuple[TrainingConfig, Checkpoint]:
    """Exhaustive search of the (learning rate, epochs) grid.

    Winner maximizes validation weighted F1; ties break to the lower learning
    rate, then fewer epochs. A failing cell is reported through on_cell and
    skipped rather than aborting the search. ``train_fn`` is injectable for
    orchestration tests.
    """
    space = tuple(space if space is not None else DEFAULT_GRID)
    if not space:
        raise ValueError("grid space is empty")
    base = base if base is not None else TrainingConfig()
    train_fn = train_fn if train_fn is not None else fine_tune

    best_cfg: TrainingConfig | None = None
    best_ckpt: Checkpoint | None = None
    for lr, epochs in sorted(space):
        cfg = replace(base, learning_rate=lr, epochs=epochs)
        try:
            best, _ = train_fn(encoder, train, valid, cfg)
        except TrainingError as exc:
            if on_cell is not None:
                on_cell({"learning_rate": lr, "epochs": epochs, "error": str(exc)})
            continue
        if on_cell is not None:
            on_cell(
                {"learning_rate": lr, "epochs": epochs, "weighted_f1": best.weighted_f1}
            )
        if best_ckpt is None or best.weighted_f1 > best_ckpt.weighted_f1:
            best_cfg, best_ckpt = cfg, best
    if best_ckpt is None:
        raise TrainingError("every grid cell failed")
    return best_cfg, best_ckpt


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
