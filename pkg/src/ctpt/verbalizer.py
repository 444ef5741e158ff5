"""Label decoding: task verbalizers and the cross-task union verbalizer.

A task verbalizer maps each emotion label to one vocabulary token and
decodes mask logits by a softmax restricted to those tokens. The union
verbalizer merges declared synonym labels across tasks so probability mass
on any member token counts toward the shared emotion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .frozen_model import Vocabulary
from .numerics import log_softmax


@dataclass(frozen=True)
class TaskVerbalizer:
    """Ordered (label -> token id) mapping for one task."""

    task_id: str
    labels: tuple[str, ...]
    token_ids: tuple[int, ...]
    neutral_label: str | None = None

    def __post_init__(self):
        if not self.labels:
            raise ConfigError(f"task {self.task_id}: verbalizer has no labels")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError(f"task {self.task_id}: duplicate labels")
        if len(set(self.token_ids)) != len(self.token_ids):
            raise ConfigError(f"task {self.task_id}: duplicate verbalizer tokens")
        if len(self.labels) != len(self.token_ids):
            raise ConfigError(f"task {self.task_id}: labels and tokens differ in length")
        if self.neutral_label is not None and self.neutral_label not in self.labels:
            raise ConfigError(
                f"task {self.task_id}: neutral label {self.neutral_label!r} not in labels"
            )

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"task {self.task_id}: unknown label {label!r}") from None


def make_verbalizer(task_id: str, mapping: dict[str, str], vocab: Vocabulary,
                    neutral_label: str | None = None) -> TaskVerbalizer:
    """Build a verbalizer, validating every token against the vocabulary."""
    missing = [tok for tok in mapping.values() if tok not in vocab.index]
    if missing:
        raise ConfigError(f"task {task_id}: verbalizer tokens not in vocabulary: {missing}")
    labels = tuple(mapping)
    token_ids = tuple(vocab.index[mapping[label]] for label in labels)
    return TaskVerbalizer(task_id, labels, token_ids, neutral_label)


def decode_label(logits: np.ndarray, verb: TaskVerbalizer) -> tuple[str, np.ndarray]:
    """Restrict logits to verbalizer tokens, softmax, return argmax label.

    Ties break toward the lowest label index.
    """
    ids = np.array(verb.token_ids)
    probs = np.exp(log_softmax(np.asarray(logits)[ids]))
    return verb.labels[int(np.argmax(probs))], probs


def label_log_probs(logits: np.ndarray, verb: TaskVerbalizer) -> np.ndarray:
    ids = np.array(verb.token_ids)
    return log_softmax(np.asarray(logits)[ids])


@dataclass
class UnionVerbalizer:
    """Synonym-merged label space spanning several tasks.

    ``mapping`` sends every registered (task, label) to a union id;
    ``members`` lists the distinct member token ids per union id.
    """

    union_ids: list[int]
    mapping: dict[tuple[str, str], int]
    members: dict[int, list[int]] = field(default_factory=dict)
    verbalizers: dict[str, TaskVerbalizer] = field(default_factory=dict)

    def union_id(self, task_id: str, label: str) -> int:
        key = (task_id, label)
        if key not in self.mapping:
            raise ConfigError(f"no union id registered for task {task_id!r} label {label!r}")
        return self.mapping[key]

    def all_token_ids(self) -> np.ndarray:
        """Distinct member tokens across all union ids, in stable order."""
        seen: dict[int, None] = {}
        for uid in self.union_ids:
            for tok in self.members[uid]:
                seen.setdefault(tok, None)
        return np.array(list(seen), dtype=np.int64)


def build_union(verbalizers: list[TaskVerbalizer],
                synonym_groups: list[list[tuple[str, str]]]) -> UnionVerbalizer:
    """Create union ids from declared synonym groups; everything else is a
    singleton. A (task, label) pair may appear in at most one group."""
    registered = {(v.task_id, label): v for v in verbalizers for label in v.labels}
    by_task = {v.task_id: v for v in verbalizers}
    if len(by_task) != len(verbalizers):
        raise ConfigError("duplicate task ids among verbalizers")

    assigned: dict[tuple[str, str], int] = {}
    members: dict[int, list[int]] = {}
    next_id = 0
    for group in synonym_groups:
        uid = next_id
        next_id += 1
        members[uid] = []
        for task_id, label in group:
            key = (task_id, label)
            if key not in registered:
                raise ConfigError(f"synonym group references unregistered pair {key}")
            if key in assigned:
                raise ConfigError(f"label {key} appears in more than one synonym group")
            assigned[key] = uid
            verb = by_task[task_id]
            tok = verb.token_ids[verb.label_index(label)]
            if tok not in members[uid]:
                members[uid].append(tok)
    for verb in verbalizers:
        for label, tok in zip(verb.labels, verb.token_ids):
            key = (verb.task_id, label)
            if key in assigned:
                continue
            uid = next_id
            next_id += 1
            assigned[key] = uid
            members[uid] = [tok]
    return UnionVerbalizer(
        union_ids=list(range(next_id)),
        mapping=assigned,
        members=members,
        verbalizers=dict(by_task),
    )


def union_label_log_probs(logits: np.ndarray, union: UnionVerbalizer,
                          target_task: str) -> np.ndarray:
    """Log-probabilities over the target task's labels under the union.

    Token log-probs are a softmax over every member token of every union
    id; a union emotion aggregates its member tokens; the result is
    projected onto the target task's labels and renormalized. Union ids
    with no target-task label simply drop out of the projection.
    """
    if target_task not in union.verbalizers:
        raise ConfigError(f"task {target_task!r} not registered in union verbalizer")
    verb = union.verbalizers[target_task]
    tokens = union.all_token_ids()
    token_logp = log_softmax(np.asarray(logits)[tokens])
    position = {int(t): i for i, t in enumerate(tokens)}

    label_logps = np.empty(len(verb.labels))
    for i, label in enumerate(verb.labels):
        uid = union.union_id(target_task, label)
        member_logps = np.array([token_logp[position[t]] for t in union.members[uid]])
        m = member_logps.max()
        label_logps[i] = m + np.log(np.exp(member_logps - m).sum())
    m = label_logps.max()
    return label_logps - (m + np.log(np.exp(label_logps - m).sum()))


def decode_union(logits: np.ndarray, union: UnionVerbalizer,
                 target_task: str) -> tuple[str, np.ndarray]:
    """Argmax target-task label under the union; ties to lowest index."""
    verb = union.verbalizers[target_task]
    logps = union_label_log_probs(logits, union, target_task)
    probs = np.exp(logps)
    return verb.labels[int(np.argmax(probs))], probs
