"""Synthetic conversation-task family generator.

Builds families of emotion tasks over the shared lexicon with overlapping
concept inventories and controllable cross-task similarity: tasks sharing
concepts are "related" (their labels are declared synonyms), tasks with
disjoint concepts are "unrelated", and regenerating a task spec under the
same seed yields a clone with an identical distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import Lexicon
from .data import Conversation, TaskDataset, Utterance
from .errors import ArgumentError
from .numerics import RngStream

SPEAKERS = ("a:", "b:")


@dataclass
class SyntheticTaskSpec:
    """Recipe for one synthetic task's data and verbalizer."""

    task_id: str
    concepts: tuple[str, ...]
    dialect: int  # which surface word of each concept names the label
    train_conversations: int = 60
    dev_conversations: int = 30
    test_conversations: int = 80
    utterances: tuple[int, int] = (2, 3)
    utterance_len: tuple[int, int] = (3, 6)
    cue_count: tuple[int, int] = (1, 2)
    # probability an utterance's cues come from a different concept
    noise: float = 0.15
    seed: int = 0

    def label_word(self, lex: Lexicon, concept: str) -> str:
        words = lex.words[concept]
        if self.dialect >= len(words):
            raise ArgumentError(
                f"task {self.task_id}: concept {concept} has no dialect {self.dialect}"
            )
        return words[self.dialect]

    def labels(self, lex: Lexicon) -> list[str]:
        return [self.label_word(lex, c) for c in self.concepts]

    def verbalizer_mapping(self, lex: Lexicon) -> dict[str, str]:
        # Label names double as verbalizer tokens: each task speaks its own
        # dialect of the shared emotion inventory.
        return {self.label_word(lex, c): self.label_word(lex, c) for c in self.concepts}


def _one_utterance(lex: Lexicon, spec: SyntheticTaskSpec, concept: str,
                   speaker: str, rng: RngStream) -> Utterance:
    cue_concept = concept
    if rng.uniform() < spec.noise:
        cue_concept = str(rng.choice(list(spec.concepts)))
    length = int(rng.integers(spec.utterance_len[0], spec.utterance_len[1] + 1))
    n_cues = min(int(rng.integers(spec.cue_count[0], spec.cue_count[1] + 1)), length)
    toks = [str(rng.choice(lex.fillers)) for _ in range(length - n_cues)]
    toks += [str(rng.choice(lex.cues[cue_concept])) for _ in range(n_cues)]
    order = rng.permutation(len(toks))
    text = " ".join(toks[i] for i in order)
    return Utterance(speaker=speaker, text=text, emotion=spec.label_word(lex, concept))


def _conversations(lex: Lexicon, spec: SyntheticTaskSpec, count: int, split: str,
                   rng: RngStream) -> list[Conversation]:
    out = []
    for idx in range(count):
        n_utt = int(rng.integers(spec.utterances[0], spec.utterances[1] + 1))
        utts = []
        for u in range(n_utt):
            concept = str(rng.choice(list(spec.concepts)))
            utts.append(_one_utterance(lex, spec, concept, SPEAKERS[u % 2], rng))
        out.append(Conversation(f"{spec.task_id}-{split}-{idx:04d}", tuple(utts)))
    return out


def generate_task(lex: Lexicon, spec: SyntheticTaskSpec) -> TaskDataset:
    """Materialize a task's splits deterministically from its seed."""
    rng = RngStream(spec.seed)
    return TaskDataset(
        task_id=spec.task_id,
        labels=tuple(spec.labels(lex)),
        train=_conversations(lex, spec, spec.train_conversations, "train", rng.child("train")),
        dev=_conversations(lex, spec, spec.dev_conversations, "dev", rng.child("dev")),
        test=_conversations(lex, spec, spec.test_conversations, "test", rng.child("test")),
    )


@dataclass
class TaskFamily:
    """A set of task specs plus the synonym groups their overlap implies."""

    specs: list[SyntheticTaskSpec] = field(default_factory=list)

    def synonym_groups(self, lex: Lexicon) -> list[list[tuple[str, str]]]:
        by_concept: dict[str, list[tuple[str, str]]] = {}
        for spec in self.specs:
            for concept in spec.concepts:
                by_concept.setdefault(concept, []).append(
                    (spec.task_id, spec.label_word(lex, concept))
                )
        return [group for group in by_concept.values() if len(group) > 1]


def default_family(seed: int, related: int = 3, sizes: dict | None = None,
                   noise: float = 0.15) -> TaskFamily:
    """Related tasks share {happy, sad, angry} under rotating dialects;
    the optional extras use disjoint concepts."""
    names = ["sunny", "tidal", "ember", "briar", "coral"]
    if not 2 <= related <= len(names):
        raise ArgumentError(f"related task count must be in [2, {len(names)}]")
    sizes = sizes or {}
    family = TaskFamily()
    for i in range(related):
        family.specs.append(
            SyntheticTaskSpec(
                task_id=names[i],
                concepts=("happy", "sad", "angry"),
                dialect=i % 3,
                noise=noise,
                seed=RngStream(seed).child(f"task:{names[i]}").seed,
                **sizes,
            )
        )
    return family


def unrelated_spec(seed: int, task_id: str = "umbra", sizes: dict | None = None,
                   noise: float = 0.15) -> SyntheticTaskSpec:
    sizes = sizes or {}
    return SyntheticTaskSpec(
        task_id=task_id,
        concepts=("fear", "surprise", "disgust"),
        dialect=0,
        noise=noise,
        seed=RngStream(seed).child(f"task:{task_id}").seed,
        **sizes,
    )


def clone_spec(spec: SyntheticTaskSpec, new_id: str) -> SyntheticTaskSpec:
    """Same distribution and seed under a different task id."""
    out = SyntheticTaskSpec(**{**spec.__dict__, "task_id": new_id})
    return out
