import json

import numpy as np
import pytest

from ctpt.corpus import build_lexicon
from ctpt.data import (
    Conversation,
    SamplingWarning,
    TaskDataset,
    Utterance,
    encode_context,
    load_jsonl,
    sample_few_shot,
    save_jsonl,
    split_checksum,
    stats,
)
from ctpt.errors import ArgumentError, IngestionError, SamplingError
from ctpt.frozen_model import Vocabulary
from ctpt.numerics import RngStream
from ctpt.synth import SyntheticTaskSpec, clone_spec, default_family, generate_task

EC_LABELS = ("happy", "sad", "angry", "others")


def write_ec_like(path, n=6):
    lines = []
    for i in range(n):
        lines.append(
            json.dumps(
                {
                    "id": f"c{i}",
                    "utterances": [
                        {"speaker": "a:", "text": "hello there", "emotion": EC_LABELS[i % 4]},
                        {"speaker": "b:", "text": "well ok", "emotion": EC_LABELS[(i + 1) % 4]},
                    ],
                }
            )
        )
    path.write_text("\n".join(lines) + "\n")


class TestLoadJsonl:
    def test_ec_like_file_loads(self, tmp_path):
        path = tmp_path / "ec.jsonl"
        write_ec_like(path)
        convs = load_jsonl(path, EC_LABELS)
        assert len(convs) == 6
        seen = {u.emotion for c in convs for u in c.utterances}
        assert seen == set(EC_LABELS)

    def test_empty_file_is_error(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(IngestionError, match="no conversations"):
            load_jsonl(path, EC_LABELS)

    def test_unknown_label_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = json.dumps(
            {"id": "c0", "utterances": [{"speaker": "a:", "text": "x", "emotion": "happy"}]}
        )
        bad = json.dumps(
            {"id": "c1", "utterances": [{"speaker": "a:", "text": "x", "emotion": "bliss"}]}
        )
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(IngestionError, match=":2.*bliss"):
            load_jsonl(path, EC_LABELS)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(IngestionError, match=":1.*malformed"):
            load_jsonl(path, EC_LABELS)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "rt.jsonl"
        write_ec_like(path)
        convs = load_jsonl(path, EC_LABELS)
        out = tmp_path / "out.jsonl"
        save_jsonl(out, convs)
        assert load_jsonl(out, EC_LABELS) == convs


def seven_label_dataset(per_label=40):
    labels = tuple(f"e{i}" for i in range(7))
    convs = []
    rng = RngStream(3)
    idx = 0
    while idx < per_label * len(labels) // 3:
        utts = tuple(
            Utterance("a:" if j % 2 == 0 else "b:", "tok tok", labels[int(rng.integers(0, 7))])
            for j in range(3)
        )
        convs.append(Conversation(f"c{idx}", utts))
        idx += 1
    return TaskDataset(task_id="seven", labels=labels, train=convs)


class TestSampleFewShot:
    def test_seven_labels_k16_yields_112(self):
        ds = seven_label_dataset(per_label=200)
        train, dev = sample_few_shot(ds, 16, RngStream(0))
        assert len(train) == 7 * 16
        per = {}
        for ex in train:
            per[ex.label] = per.get(ex.label, 0) + 1
        assert set(per.values()) == {16}

    def test_under_supported_category_takes_all_with_warning(self):
        labels = ("x", "y")
        convs = [
            Conversation(
                "c0",
                (
                    Utterance("a:", "t", "x"),
                    Utterance("b:", "t", "x"),
                    Utterance("a:", "t", "y"),
                ),
            ),
            Conversation("c1", (Utterance("a:", "t", "y"), Utterance("b:", "t", "y"))),
        ]
        ds = TaskDataset(task_id="tiny", labels=labels, train=convs)
        with pytest.warns(SamplingWarning, match="'x'"):
            train, _ = sample_few_shot(ds, 5, RngStream(0))
        assert sum(ex.label == "x" for ex in train) == 2

    def test_absent_category_is_error(self):
        ds = TaskDataset(
            task_id="t",
            labels=("present", "missing"),
            train=[Conversation("c0", (Utterance("a:", "t", "present"),))],
        )
        with pytest.raises(SamplingError, match="missing"):
            sample_few_shot(ds, 1, RngStream(0))

    def test_same_seed_identical(self):
        ds = seven_label_dataset(per_label=100)
        a_train, a_dev = sample_few_shot(ds, 8, RngStream(9))
        b_train, b_dev = sample_few_shot(ds, 8, RngStream(9))
        assert [ex.key() for ex in a_train] == [ex.key() for ex in b_train]
        assert [ex.key() for ex in a_dev] == [ex.key() for ex in b_dev]

    def test_train_dev_disjoint_and_gold_retained(self):
        ds = seven_label_dataset(per_label=100)
        train, dev = sample_few_shot(ds, 8, RngStream(4))
        train_keys = {ex.key() for ex in train}
        dev_keys = {ex.key() for ex in dev}
        assert not train_keys & dev_keys
        for ex in train + dev:
            assert ex.conversation.utterances[ex.target_index].emotion == ex.label

    def test_dev_split_used_when_present(self):
        lex = build_lexicon(512)
        spec = SyntheticTaskSpec(task_id="t", concepts=("happy", "sad"), dialect=0, seed=5)
        ds = generate_task(lex, spec)
        _, dev = sample_few_shot(ds, 4, RngStream(0))
        assert all(ex.conversation.id.startswith("t-dev") for ex in dev)

    def test_test_split_untouched(self):
        lex = build_lexicon(512)
        spec = SyntheticTaskSpec(task_id="t", concepts=("happy", "sad"), dialect=0, seed=5)
        ds = generate_task(lex, spec)
        before = split_checksum(ds.test)
        sample_few_shot(ds, 4, RngStream(0))
        assert split_checksum(ds.test) == before

    def test_k_zero_rejected(self):
        ds = seven_label_dataset()
        with pytest.raises(ArgumentError):
            sample_few_shot(ds, 0, RngStream(0))


class TestStats:
    def test_counts(self):
        convs = [
            Conversation(f"c{i}", tuple(Utterance("a:", "t", "x") for _ in range(5)))
            for i in range(10)
        ]
        ds = TaskDataset(task_id="t", labels=("x",), train=convs)
        s = stats(ds)
        assert s["train"] == {"conversations": 10, "utterances": 50}
        assert s["test"] == {"conversations": 0, "utterances": 0}

    def test_invariant_under_reload(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_ec_like(path, n=9)
        convs = load_jsonl(path, EC_LABELS)
        ds = TaskDataset(task_id="t", labels=EC_LABELS, train=convs)
        first = stats(ds)
        ds2 = TaskDataset(task_id="t", labels=EC_LABELS, train=load_jsonl(path, EC_LABELS))
        assert stats(ds2) == first


class TestEncodeContext:
    def test_serialization_layout(self):
        lex = build_lexicon(512)
        vocab = Vocabulary(lex.tokens())
        conv = Conversation(
            "c",
            (
                Utterance("a:", "grin laugh", "happy"),
                Utterance("b:", "tears", "sad"),
            ),
        )
        ids = encode_context(conv, 1, vocab)
        words = vocab.decode(ids)
        assert words == ["a:", "grin", "laugh", "[SEP]", "b:", "tears", "[SEP]", "feels"]

    def test_only_context_up_to_target(self):
        lex = build_lexicon(512)
        vocab = Vocabulary(lex.tokens())
        conv = Conversation(
            "c",
            (Utterance("a:", "grin", "happy"), Utterance("b:", "tears", "sad")),
        )
        ids = encode_context(conv, 0, vocab)
        assert vocab.decode(ids) == ["a:", "grin", "[SEP]", "feels"]


class TestSyntheticFamily:
    def test_determinism_and_coverage(self):
        lex = build_lexicon(512)
        family = default_family(seed=7, related=3)
        ds0 = generate_task(lex, family.specs[0])
        ds0_again = generate_task(lex, family.specs[0])
        assert split_checksum(ds0.train) == split_checksum(ds0_again.train)
        for spec in family.specs:
            ds = generate_task(lex, spec)
            seen = {u.emotion for c in ds.train for u in c.utterances}
            assert seen == set(spec.labels(lex))

    def test_dialects_differ_but_synonyms_align(self):
        lex = build_lexicon(512)
        family = default_family(seed=7, related=3)
        labels = [set(spec.labels(lex)) for spec in family.specs]
        assert labels[0] != labels[1] != labels[2]
        groups = family.synonym_groups(lex)
        assert len(groups) == 3  # one per shared concept
        for group in groups:
            assert len(group) == 3

    def test_clone_has_identical_content_distinct_ids(self):
        lex = build_lexicon(512)
        spec = default_family(seed=7).specs[0]
        clone = clone_spec(spec, "mirror")
        a = generate_task(lex, spec)
        b = generate_task(lex, clone)
        texts_a = [[u.text for u in c.utterances] for c in a.train]
        texts_b = [[u.text for u in c.utterances] for c in b.train]
        assert texts_a == texts_b
        assert a.train[0].id != b.train[0].id
