import numpy as np
import pytest

from ctpt.errors import ConfigError
from ctpt.frozen_model import Vocabulary
from ctpt.numerics import RngStream
from ctpt.verbalizer import (
    TaskVerbalizer,
    build_union,
    decode_label,
    decode_union,
    make_verbalizer,
)

TOKENS = ["[PAD]", "[UNK]", "[MASK]", "[SEP]", "happy", "sad", "angry", "joy",
          "sorrow", "mad", "neutral", "others"]


@pytest.fixture
def vocab():
    return Vocabulary(TOKENS)


@pytest.fixture
def dd_verb(vocab):
    return make_verbalizer("dailydialog", {"happiness": "happy", "sadness": "sad",
                                           "anger": "angry"}, vocab)


@pytest.fixture
def meld_verb(vocab):
    return make_verbalizer("meld", {"joy": "joy", "sadness": "sorrow", "anger": "mad"}, vocab)


class TestDecodeLabel:
    def test_argmax_label(self, vocab, dd_verb):
        logits = np.zeros(len(vocab))
        logits[vocab.index["sad"]] = 4.0
        label, _ = decode_label(logits, dd_verb)
        assert label == "sadness"

    def test_distribution_sums_to_one(self, vocab, dd_verb):
        logits = RngStream(0).normal(size=len(vocab), std=3.0)
        _, probs = decode_label(logits, dd_verb)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(probs >= 0)

    def test_uniform_logits_tie_breaks_to_lowest_index(self, vocab):
        verb = make_verbalizer(
            "t", {"a": "happy", "b": "sad", "c": "angry", "d": "joy"}, vocab
        )
        label, probs = decode_label(np.zeros(len(vocab)), verb)
        assert label == "a"
        assert np.allclose(probs, 0.25, atol=1e-12)

    def test_shift_invariance(self, vocab, dd_verb):
        logits = RngStream(1).normal(size=len(vocab))
        l1, p1 = decode_label(logits, dd_verb)
        l2, p2 = decode_label(logits + 123.4, dd_verb)
        assert l1 == l2
        assert np.allclose(p1, p2, atol=1e-12)

    def test_empty_verbalizer_rejected(self):
        with pytest.raises(ConfigError):
            TaskVerbalizer("t", (), ())

    def test_unknown_token_rejected(self, vocab):
        with pytest.raises(ConfigError, match="not in vocabulary"):
            make_verbalizer("t", {"x": "missing-word"}, vocab)


class TestBuildUnion:
    def test_declared_synonyms_share_union_id(self, dd_verb, meld_verb):
        union = build_union(
            [dd_verb, meld_verb],
            [[("dailydialog", "happiness"), ("meld", "joy")]],
        )
        assert union.union_id("dailydialog", "happiness") == union.union_id("meld", "joy")

    def test_no_synonyms_is_bijective(self, dd_verb):
        union = build_union([dd_verb], [])
        ids = {union.union_id("dailydialog", lbl) for lbl in dd_verb.labels}
        assert len(ids) == len(dd_verb.labels)

    def test_mapping_is_total(self, dd_verb, meld_verb):
        union = build_union([dd_verb, meld_verb], [])
        for verb in (dd_verb, meld_verb):
            for label in verb.labels:
                union.union_id(verb.task_id, label)

    def test_label_in_two_groups_rejected(self, dd_verb, meld_verb):
        groups = [
            [("dailydialog", "happiness"), ("meld", "joy")],
            [("dailydialog", "happiness"), ("meld", "anger")],
        ]
        with pytest.raises(ConfigError, match="more than one"):
            build_union([dd_verb, meld_verb], groups)

    def test_unregistered_pair_rejected(self, dd_verb):
        with pytest.raises(ConfigError, match="unregistered"):
            build_union([dd_verb], [[("dailydialog", "bogus")]])


class TestDecodeUnion:
    def make_union(self, dd_verb, meld_verb):
        return build_union(
            [dd_verb, meld_verb],
            [
                [("dailydialog", "happiness"), ("meld", "joy")],
                [("dailydialog", "sadness"), ("meld", "sadness")],
                [("dailydialog", "anger"), ("meld", "anger")],
            ],
        )

    def test_mass_on_other_tasks_token_transfers(self, vocab, dd_verb, meld_verb):
        union = self.make_union(dd_verb, meld_verb)
        logits = np.zeros(len(vocab))
        logits[vocab.index["joy"]] = 6.0  # MELD's happy word
        label, _ = decode_union(logits, union, "dailydialog")
        assert label == "happiness"

    def test_single_task_union_equals_decode_label(self, vocab, dd_verb):
        union = build_union([dd_verb], [])
        rng = RngStream(2)
        for _ in range(20):
            logits = rng.normal(size=len(vocab), std=2.0)
            l1, p1 = decode_label(logits, dd_verb)
            l2, p2 = decode_union(logits, union, "dailydialog")
            assert l1 == l2
            assert np.max(np.abs(p1 - p2)) < 1e-12

    def test_two_synonym_tokens_double_mass(self, vocab, dd_verb, meld_verb):
        # Toy vocabulary slice: six relevant tokens all at equal logits, so
        # each token has probability p = 1/6 before renormalization. The
        # merged happy emotion holds {happy, joy} = 2p; sadness and anger
        # hold 2p as well across tasks but only one token each per task.
        union = self.make_union(dd_verb, meld_verb)
        logits = np.zeros(len(vocab))
        _, probs = decode_union(logits, union, "dailydialog")
        # hand computation: 6 union tokens, uniform -> each union emotion
        # sums its member tokens: happy 2/6, sadness 2/6, anger 2/6 -> after
        # projection onto dailydialog labels, uniform thirds.
        assert np.allclose(probs, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)

        logits[vocab.index["happy"]] = np.log(2.0)
        logits[vocab.index["joy"]] = np.log(2.0)
        _, probs = decode_union(logits, union, "dailydialog")
        # member tokens now carry 2p each -> happy union mass 4p vs 2p, 2p.
        assert probs[0] == pytest.approx(0.5, abs=1e-12)

    def test_union_emotion_without_target_label_is_excluded(self, vocab, dd_verb, meld_verb):
        surprise_verb = make_verbalizer("extra", {"other": "others"}, vocab)
        union = build_union([dd_verb, surprise_verb], [])
        logits = np.zeros(len(vocab))
        logits[vocab.index["others"]] = 10.0
        _, probs = decode_union(logits, union, "dailydialog")
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert len(probs) == len(dd_verb.labels)
