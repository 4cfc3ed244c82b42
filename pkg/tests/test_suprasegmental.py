import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_log_likelihood, emission_table
from suprahmm import hmm2
from suprahmm.errors import ConfigError, EmptyInputError
from suprahmm.features import AudioClip, FrameSpec, mfcc_extract
from suprahmm.hmm2 import GmmEmission, Hmm2Model, Topology, random_model, sample_sequence
from suprahmm.suprasegmental import (
    StateMapping,
    SupraConfig,
    SuprasegmentalModel,
    fit_prosodic,
    frames_to_samples,
    from_document,
    observations,
    run_length_segments,
    score_suprasegmental,
    segment_by_alignment,
    to_document,
    train_suprasegmental,
)


def acoustic_model(seed=0, order=2, shape="circular"):
    return random_model(Topology(order, shape, 6), 3, 1, seed=seed, mean_scale=3.0, concentration=3.0)


def utterance(model, t=40, seed=0):
    obs, _ = sample_sequence(model, t, seed=seed)
    contour = np.column_stack([
        np.random.default_rng(seed).normal(-3, 1, t),
        np.random.default_rng(seed + 1).normal(150, 20, t),
        np.random.default_rng(seed + 2).uniform(0.05, 0.15, t),
    ])
    return obs, contour


class TestStateMapping:
    def test_default_blocks(self):
        mapping = StateMapping.blocks(6, 2)
        assert mapping.assignment == (0, 0, 0, 1, 1, 1)

    def test_indivisible(self):
        with pytest.raises(ConfigError):
            StateMapping.blocks(6, 4)

    def test_uncovered_state(self):
        with pytest.raises(ConfigError):
            StateMapping((0, 0, 0), 2)


class TestRunLength:
    def test_mapped_example(self):
        mapping = StateMapping.blocks(6, 2)
        labels, ranges = run_length_segments(mapping.map_path([0, 0, 1, 3, 4]))
        assert labels == (0, 1)
        assert ranges == ((0, 3), (3, 5))

    def test_single_run(self):
        labels, ranges = run_length_segments([0] * 7)
        assert labels == (0,) and ranges == ((0, 7),)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            run_length_segments([])

    @given(st.lists(st.integers(0, 2), min_size=1, max_size=60))
    @settings(max_examples=100, deadline=None)
    def test_matches_groupby(self, seq):
        labels, ranges = run_length_segments(seq)
        groups = [(k, len(list(g))) for k, g in itertools.groupby(seq)]
        assert labels == tuple(k for k, _ in groups)
        assert [b - a for a, b in ranges] == [n for _, n in groups]
        # partition of the utterance
        assert ranges[0][0] == 0 and ranges[-1][1] == len(seq)
        assert all(a[1] == b[0] for a, b in zip(ranges[:-1], ranges[1:]))

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=40))
    @settings(max_examples=50, deadline=None)
    def test_remerge_is_idempotent(self, seq):
        labels, ranges = run_length_segments(seq)
        expanded = np.repeat(labels, [b - a for a, b in ranges])
        assert run_length_segments(expanded) == (labels, ranges)


class TestSegmentation:
    def test_matches_viterbi_rle(self):
        model = acoustic_model(1)
        obs, _ = utterance(model, 60, seed=3)
        mapping = StateMapping.blocks(6, 2)
        segs = segment_by_alignment(model, mapping, obs)
        path, _ = hmm2.viterbi_align(model, obs)
        mapped = [mapping.assignment[q] for q in path]
        assert len(segs) == sum(1 for _ in itertools.groupby(mapped))
        assert sum(b - a for a, b in segs.frame_ranges) == obs.frame_count

    def test_sample_ranges(self):
        assert frames_to_samples(((0, 3), (3, 5)), 112, 1000) == ((0, 336), (336, 1000))

    def test_with_clip(self):
        rng = np.random.default_rng(0)
        clip = AudioClip(np.round(2000 * rng.standard_normal(4000)))
        feats = mfcc_extract(clip)
        model = random_model(Topology(2, "circular", 6), 32, 1, seed=2)
        segs = segment_by_alignment(model, StateMapping.blocks(6, 2), feats, FrameSpec(), clip)
        assert segs.sample_ranges[0][0] == 0 and segs.sample_ranges[-1][1] == len(clip)

    def test_mapping_size_mismatch(self):
        with pytest.raises(ConfigError):
            segment_by_alignment(acoustic_model(), StateMapping.blocks(4, 2), np.zeros((5, 3)))


def supra_model(seed=0, order=2, shape="circular", n_supra=2):
    hmm = random_model(Topology(order, shape, n_supra), 6, 1, seed=seed, mean_scale=2.0)
    return SuprasegmentalModel(StateMapping.blocks(6, n_supra), hmm)


class TestScoring:
    def test_enumeration_oracle(self):
        acoustic = acoustic_model(2)
        obs, contour = utterance(acoustic, 30, seed=5)
        model = supra_model(3)
        seq = observations(model, acoustic, contour, obs)
        expected = brute_force_log_likelihood(model.hmm, seq.segments)
        assert score_suprasegmental(model, acoustic, contour, obs) == pytest.approx(expected, rel=1e-8)

    def test_single_segment_closed_form(self):
        acoustic = Hmm2Model(Topology(2, "circular", 6), np.eye(6)[0], *_sticky(6))
        obs = np.zeros((10, 3))
        contour = np.random.default_rng(0).standard_normal((10, 3))
        model = supra_model(4)
        seq = observations(model, acoustic, contour, obs)
        assert seq.segment_count == 1
        logb = emission_table(model.hmm, seq.segments)[0]
        expected = math.log(np.sum(model.hmm.initial * np.exp(logb)))
        assert score_suprasegmental(model, acoustic, contour, obs) == pytest.approx(expected, rel=1e-10)

    def test_single_supra_state(self):
        acoustic = acoustic_model(5)
        obs, contour = utterance(acoustic, 30, seed=6)
        model = supra_model(6, n_supra=1)
        seq = observations(model, acoustic, contour, obs)
        expected = emission_table(model.hmm, seq.segments)[:, 0].sum()
        assert score_suprasegmental(model, acoustic, contour, obs) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("order,shape", [(1, "linear"), (2, "linear"), (1, "circular"), (2, "circular")])
    def test_variants_finite(self, order, shape):
        acoustic = acoustic_model(7, order, shape)
        obs, contour = utterance(acoustic, 50, seed=7)
        model = supra_model(8, order, shape)
        assert np.isfinite(score_suprasegmental(model, acoustic, contour, obs))

    def test_b_matrix(self):
        model = supra_model(0)
        assert model.B.shape == (2, 2)
        np.testing.assert_allclose(model.B.sum(axis=1), 1.0)


def _sticky(n):
    """Transitions that never leave the current state, plus emissions."""
    topo = Topology(2, "circular", n)
    tensor = np.zeros((n, n, n))
    for i, j in itertools.product(range(n), repeat=2):
        tensor[i, j, j] = 1.0
    emission = GmmEmission(np.ones((n, 1)), np.zeros((n, 1, 3)), np.ones((n, 1, 3)))
    return tensor, emission, np.eye(n)


class TestTraining:
    def test_recovers_b(self):
        rng = np.random.default_rng(0)
        b_true = np.array([[0.7, 0.3], [0.4, 0.6]])
        means = np.array([[[-3.0, 0.5, 130, 100, 0.2, 0.08]], [[-1.0, 1.5, 190, 300, 0.1, 0.12]]])
        sds = np.array([0.3, 0.1, 5, 10, 0.03, 0.02])
        truth = Hmm2Model(Topology(1, "circular", 2), np.array([0.5, 0.5]), b_true,
                          GmmEmission(np.ones((2, 1)), means, np.broadcast_to(sds**2, (2, 1, 6))))
        seqs = [sample_sequence(truth, int(rng.integers(5, 15)), rng)[0] for _ in range(300)]
        hmm = fit_prosodic(seqs, SupraConfig(order=1, mixtures=1, max_iters=40, tol=1e-7))
        perm = [0, 1] if hmm.emission.means[0, 0, 2] < hmm.emission.means[1, 0, 2] else [1, 0]
        recovered = hmm.transitions[np.ix_(perm, perm)]
        assert np.abs(recovered - b_true).max() <= 0.1

    def test_train_per_condition(self):
        acoustic = acoustic_model(9)
        corpus = {"a": [utterance(acoustic, 30, seed=s) for s in range(6)]}
        models = train_suprasegmental({"a": acoustic}, corpus, SupraConfig(mixtures=1, max_iters=3))
        model = models["a"]
        assert model.hmm.n_states == 2 and model.hmm.order == 2
        assert model.hmm.topology.shape == "circular"
        assert np.all(np.diff(model.hmm.info.log_likelihoods) >= -1e-6)

    def test_single_segment_utterances(self):
        acoustic = Hmm2Model(Topology(2, "circular", 6), np.eye(6)[0], *_sticky(6))
        rng = np.random.default_rng(1)
        corpus = {"a": [(np.zeros((8, 3)), rng.standard_normal((8, 3))) for _ in range(5)]}
        model = train_suprasegmental({"a": acoustic}, corpus, SupraConfig(mixtures=1, max_iters=2))["a"]
        assert np.isfinite(model.hmm.info.final_log_likelihood)

    def test_missing_condition(self):
        with pytest.raises(EmptyInputError):
            train_suprasegmental({"a": acoustic_model()}, {}, SupraConfig())

    def test_audio_source(self):
        rng = np.random.default_rng(3)
        clips = [AudioClip(np.round(1500 * rng.standard_normal(3000))) for _ in range(4)]
        acoustic = random_model(Topology(2, "circular", 6), 32, 1, seed=1)
        corpus = {"a": [(mfcc_extract(c), c) for c in clips]}
        model = train_suprasegmental({"a": acoustic}, corpus, SupraConfig(mixtures=1, max_iters=2))["a"]
        score = score_suprasegmental(model, acoustic, clips[0], corpus["a"][0][0])
        assert np.isfinite(score)


class TestSerialization:
    def test_round_trip(self):
        acoustic = acoustic_model(2)
        obs, contour = utterance(acoustic, 30, seed=5)
        model = supra_model(3)
        back = from_document(json.loads(json.dumps(to_document(model))))
        assert back.mapping == model.mapping
        assert score_suprasegmental(back, acoustic, contour, obs) == pytest.approx(
            score_suprasegmental(model, acoustic, contour, obs), abs=1e-12)
