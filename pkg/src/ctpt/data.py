"""Conversation datasets: JSONL ingestion, encoding, and strict k-shot sampling.

A few-shot example keeps its whole conversation as context but retains the
gold label of exactly one target utterance. Test splits are never
subsampled.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ANCHOR, SEP
from .errors import ArgumentError, IngestionError, SamplingError
from .frozen_model import Vocabulary
from .numerics import RngStream


class SamplingWarning(UserWarning):
    """Raised as a warning when a category has fewer than k utterances."""


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    emotion: str

    def tokens(self) -> list[str]:
        return self.text.split()


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise ArgumentError(f"conversation {self.id} has no utterances")


@dataclass(frozen=True)
class FewShotExample:
    """Full conversation context with a single retained label."""

    conversation: Conversation
    target_index: int
    label: str

    def key(self) -> tuple[str, int]:
        return (self.conversation.id, self.target_index)


@dataclass
class TaskDataset:
    task_id: str
    labels: tuple[str, ...]
    train: list[Conversation] = field(default_factory=list)
    dev: list[Conversation] = field(default_factory=list)
    test: list[Conversation] = field(default_factory=list)
    neutral_label: str | None = None

    def split(self, name: str) -> list[Conversation]:
        return getattr(self, name)


def _parse_conversation(obj: dict, labels: set[str], lineno: int, path) -> Conversation:
    try:
        conv_id = str(obj["id"])
        raw = obj["utterances"]
    except (KeyError, TypeError) as exc:
        raise IngestionError(f"{path}:{lineno}: missing field {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise IngestionError(f"{path}:{lineno}: utterances must be a non-empty list")
    utts = []
    for u in raw:
        try:
            utt = Utterance(str(u["speaker"]), str(u["text"]), str(u["emotion"]))
        except (KeyError, TypeError) as exc:
            raise IngestionError(f"{path}:{lineno}: bad utterance record: {exc}") from exc
        if utt.emotion not in labels:
            raise IngestionError(
                f"{path}:{lineno}: unknown emotion label {utt.emotion!r} "
                f"(expected one of {sorted(labels)})"
            )
        utts.append(utt)
    return Conversation(conv_id, tuple(utts))


def load_jsonl(path, labels: tuple[str, ...]) -> list[Conversation]:
    """One conversation per line; labels validated against the task config."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"dataset file not found: {path}")
    label_set = set(labels)
    conversations: list[Conversation] = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            conversations.append(_parse_conversation(obj, label_set, lineno, path))
    if not conversations:
        raise IngestionError(f"{path}: no conversations found")
    return conversations


def save_jsonl(path, conversations: list[Conversation]) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for conv in conversations:
            obj = {
                "id": conv.id,
                "utterances": [
                    {"speaker": u.speaker, "text": u.text, "emotion": u.emotion}
                    for u in conv.utterances
                ],
            }
            f.write(json.dumps(obj) + "\n")


def load_task_dataset(task_id, labels, paths: dict, neutral_label=None) -> TaskDataset:
    """Load train/dev/test splits; absent entries yield empty splits."""
    ds = TaskDataset(task_id=task_id, labels=tuple(labels), neutral_label=neutral_label)
    for split in ("train", "dev", "test"):
        if paths.get(split):
            setattr(ds, split, load_jsonl(paths[split], ds.labels))
    return ds


def stats(ds: TaskDataset) -> dict:
    """Conversation and utterance counts per split."""
    out = {}
    for split in ("train", "dev", "test"):
        convs = ds.split(split)
        out[split] = {
            "conversations": len(convs),
            "utterances": sum(len(c.utterances) for c in convs),
        }
    return out


def split_checksum(conversations: list[Conversation]) -> str:
    payload = json.dumps(
        [
            (c.id, [(u.speaker, u.text, u.emotion) for u in c.utterances])
            for c in conversations
        ],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _category_pool(conversations: list[Conversation], label: str) -> list[FewShotExample]:
    pool = []
    for conv in conversations:
        for j, utt in enumerate(conv.utterances):
            if utt.emotion == label:
                pool.append(FewShotExample(conv, j, label))
    return pool


def _draw(pool: list[FewShotExample], k: int, label: str, rng: RngStream,
          taken: set[tuple[str, int]]) -> list[FewShotExample]:
    available = [ex for ex in pool if ex.key() not in taken]
    if len(available) <= k:
        if len(available) < k:
            warnings.warn(
                f"category {label!r} has only {len(available)} available utterances; "
                f"taking all (requested k={k})",
                SamplingWarning,
                stacklevel=3,
            )
        picked = list(available)
    else:
        order = rng.permutation(len(available))
        picked = [available[int(i)] for i in order[:k]]
    taken.update(ex.key() for ex in picked)
    return picked


def sample_few_shot(ds: TaskDataset, k: int, rng: RngStream
                    ) -> tuple[list[FewShotExample], list[FewShotExample]]:
    """Exactly k utterance-level examples per emotion category, plus a dev
    set sampled the same way, disjoint from train at the (conversation,
    utterance) level.

    Dev examples come from the dataset's dev split when present, otherwise
    from the leftover training pool. The test split is never touched.
    """
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    train_out: list[FewShotExample] = []
    dev_out: list[FewShotExample] = []
    taken: set[tuple[str, int]] = set()
    dev_from_train = not ds.dev
    for label in ds.labels:
        pool = _category_pool(ds.train, label)
        if not pool:
            raise SamplingError(
                f"task {ds.task_id}: category {label!r} absent from training data"
            )
        train_out.extend(_draw(pool, k, label, rng, taken))
    for label in ds.labels:
        if dev_from_train:
            dev_pool = _category_pool(ds.train, label)
        else:
            dev_pool = _category_pool(ds.dev, label)
        dev_out.extend(_draw(dev_pool, k, label, rng, taken))
    return train_out, dev_out


def encode_context(conv: Conversation, target_index: int, vocab: Vocabulary) -> np.ndarray:
    """Token ids for utterances up to the target, ending at the answer anchor.

    Serialization: per utterance, speaker tag, its tokens, then [SEP];
    after the target utterance comes the anchor word. The caller appends
    the [MASK] via the pattern builder.
    """
    if not 0 <= target_index < len(conv.utterances):
        raise ArgumentError(f"target index {target_index} out of range for {conv.id}")
    words: list[str] = []
    for utt in conv.utterances[: target_index + 1]:
        words.append(utt.speaker)
        words.extend(utt.tokens())
        words.append(SEP)
    words.append(ANCHOR)
    return vocab.encode(words)
