import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suprahmm.classifier import (
    BankConfig,
    ConditionBank,
    classify,
    classify_many,
    condition_document,
    condition_from_document,
    decide,
    fuse_scores,
    fuse_vectors,
    load_bank,
    save_bank,
    stream_scores,
    train_bank,
)
from suprahmm.corpus import SynthSpec, synth_generate
from suprahmm.errors import ConfigError, DocumentError, EmptyInputError, InvalidWeightError

SMALL = SynthSpec(n_conditions=3, speakers=4, texts=6, reps=1, train_speakers=2, train_texts=3,
                  t_range=(20, 30), dim=4, separation=2.0, prosodic_separation=2.0)
FAST = BankConfig(mixtures=2, max_iters=3)


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(SMALL, seed=11)


@pytest.fixture(scope="module")
def bank(corpus):
    train, _ = corpus.split()
    return train_bank(train, FAST, corpus.manifest.conditions)


class TestFusion:
    def test_endpoints(self):
        assert fuse_scores(-10.0, -3.0, 0.0) == -10.0
        assert fuse_scores(-10.0, -3.0, 1.0) == -3.0
        assert fuse_scores(-10.0, -3.0, 0.5) == -6.5

    def test_endpoints_ignore_other_stream(self):
        assert fuse_scores(-1.0, float("-inf"), 0.0) == -1.0
        assert fuse_scores(float("nan"), -2.0, 1.0) == -2.0

    @pytest.mark.parametrize("alpha", [-0.1, 1.01, 2.0])
    def test_invalid_weight(self, alpha):
        with pytest.raises(InvalidWeightError):
            fuse_scores(0.0, 0.0, alpha)
        with pytest.raises(InvalidWeightError):
            BankConfig(alpha=alpha)

    @given(st.floats(-1e4, 0), st.floats(-1e4, 0), st.floats(0, 1))
    @settings(max_examples=100, deadline=None)
    def test_between_streams(self, a, p, alpha):
        f = fuse_scores(a, p, alpha)
        assert min(a, p) - 1e-9 <= f <= max(a, p) + 1e-9

    def test_vector_needs_prosodic(self):
        with pytest.raises(ConfigError):
            fuse_vectors(np.zeros(3), None, 0.5)
        np.testing.assert_array_equal(fuse_vectors(np.arange(3.0), None, 0.0), np.arange(3.0))


class TestDecide:
    def test_argmax(self):
        assert decide(["a", "b", "c"], np.array([-5.0, -1.0, -3.0])) == "b"

    def test_tie_goes_to_first(self):
        assert decide(["a", "b", "c"], np.array([-3.0, -1.0, -1.0])) == "b"
        assert decide(["x", "y"], np.array([0.0, 0.0])) == "x"


class TestConfig:
    def test_system_names(self):
        assert BankConfig().system_name == "CSPHMM2"
        assert BankConfig(order=1, shape="linear", use_supra=False).system_name == "LTRHMM1"
        assert BankConfig(use_supra=False).system_name == "CHMM2"
        assert BankConfig(order=1, shape="linear").system_name == "LTRSPHMM1"

    def test_indivisible_states(self):
        with pytest.raises(ConfigError):
            BankConfig(n_states=5, supra_states=2)

    def test_duplicate_labels(self, bank):
        with pytest.raises(ConfigError):
            ConditionBank((bank.conditions[0], bank.conditions[0]))


class TestClassify:
    def test_empty_bank(self, corpus):
        utt = next(iter(corpus.utterances.values()))
        with pytest.raises(EmptyInputError):
            classify(ConditionBank(()), utt.prosody, utt.features)

    def test_alpha_without_supra(self, corpus):
        train, _ = corpus.split()
        acoustic_only = train_bank(train, BankConfig(mixtures=2, max_iters=2, use_supra=False))
        assert acoustic_only.alpha == 0.0
        utt = train[0]
        classify(acoustic_only, None, utt.features)
        with pytest.raises(ConfigError):
            classify(acoustic_only.with_alpha(0.5), utt.prosody, utt.features)

    def test_fused_scores_match_streams(self, bank, corpus):
        _, test = corpus.split()
        utt = test[0]
        a, p = stream_scores(bank, utt.prosody, utt.features)
        label, fused = classify(bank, utt.prosody, utt.features)
        np.testing.assert_allclose(fused, 0.5 * a + 0.5 * p)
        assert label == bank.labels[int(np.argmax(fused))]

    def test_endpoints_reduce_to_streams(self, bank, corpus):
        _, test = corpus.split()
        utt = test[1]
        a, p = stream_scores(bank, utt.prosody, utt.features)
        np.testing.assert_array_equal(classify(bank.with_alpha(0.0), None, utt.features)[1], a)
        np.testing.assert_array_equal(classify(bank.with_alpha(1.0), utt.prosody, utt.features)[1], p)

    def test_separated_corpus_mostly_right(self, bank, corpus):
        _, test = corpus.split()
        pred = classify_many(bank, test)
        assert np.mean([p == u.condition for p, u in zip(pred, test)]) >= 0.8

    def test_workers_keep_order(self, bank, corpus):
        _, test = corpus.split()
        assert classify_many(bank, test, workers=3) == classify_many(bank, test, workers=1)


class TestTraining:
    def test_deterministic(self, corpus, bank, tmp_path):
        train, _ = corpus.split()
        again = train_bank(train, FAST, corpus.manifest.conditions)
        save_bank(bank, tmp_path / "a")
        save_bank(again, tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_missing_condition(self, corpus):
        train, _ = corpus.split()
        with pytest.raises(EmptyInputError):
            train_bank(train, FAST, list(corpus.manifest.conditions) + ["absent"])


class TestPersistence:
    def test_round_trip(self, bank, corpus, tmp_path):
        save_bank(bank, tmp_path)
        back = load_bank(tmp_path)
        assert back.labels == bank.labels and back.alpha == bank.alpha and back.config == bank.config
        _, test = corpus.split()
        for utt in test[:6]:
            np.testing.assert_array_equal(classify(back, utt.prosody, utt.features)[1],
                                          classify(bank, utt.prosody, utt.features)[1])

    def test_condition_document(self, bank):
        doc = json.loads(json.dumps(condition_document(bank.conditions[0])))
        cond = condition_from_document(doc)
        assert cond.label == bank.conditions[0].label
        doc["kind"] = "bank"
        with pytest.raises(DocumentError):
            condition_from_document(doc)

    def test_hash_mismatch(self, bank, tmp_path):
        path = save_bank(bank, tmp_path)
        doc = json.loads(path.read_text())
        doc["feature_config_hash"] = "0" * 64
        path.write_text(json.dumps(doc))
        with pytest.raises(DocumentError, match="hash"):
            load_bank(tmp_path)

    def test_label_mismatch(self, bank, tmp_path):
        path = save_bank(bank, tmp_path)
        doc = json.loads(path.read_text())
        doc["labels"] = list(reversed(doc["labels"]))
        path.write_text(json.dumps(doc))
        with pytest.raises(DocumentError, match="labels"):
            load_bank(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DocumentError):
            load_bank(tmp_path / "nowhere")
