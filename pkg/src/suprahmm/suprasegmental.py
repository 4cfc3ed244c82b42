"""Suprasegmental layer trained on top of an acoustic model.

Acoustic states are grouped into suprasegmental states (by default six
states in two contiguous blocks of three).  An utterance is aligned with
its acoustic model, the Viterbi path is mapped through the grouping and
runs of equal labels become segments.  Each segment contributes one
prosodic vector, and a small HMM over those vectors gives log P(Psi | O).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import hmm2
from .errors import ConfigError, DocumentError, EmptyInputError
from .features import (
    AudioClip,
    FeatureSequence,
    FrameSpec,
    ProsodicSequence,
    prosodic_extract,
    prosodic_from_contour,
)
from .hmm2 import Hmm2Model, Topology

# An audio clip, or a stored (T, 3) frame contour aligned with the features.
ProsodySource = Union[AudioClip, np.ndarray]


@dataclass(frozen=True)
class StateMapping:
    assignment: Tuple[int, ...]
    n_supra: int

    def __post_init__(self):
        if self.n_supra < 1 or not self.assignment:
            raise ConfigError("mapping needs at least one acoustic and one suprasegmental state")
        if set(self.assignment) != set(range(self.n_supra)):
            raise ConfigError("every suprasegmental state must cover at least one acoustic state")

    @classmethod
    def blocks(cls, n_states: int, n_supra: int) -> "StateMapping":
        """Contiguous equal blocks: with 6 and 2, states 0-2 -> 0 and 3-5 -> 1."""
        if n_supra < 1 or n_states % n_supra:
            raise ConfigError(f"{n_states} acoustic states do not split into {n_supra} equal blocks")
        size = n_states // n_supra
        return cls(tuple(q // size for q in range(n_states)), n_supra)

    @property
    def n_states(self) -> int:
        return len(self.assignment)

    def map_path(self, path: Sequence[int]) -> np.ndarray:
        return np.asarray(self.assignment, dtype=np.intp)[np.asarray(path, dtype=np.intp)]


@dataclass(frozen=True)
class SegmentSequence:
    labels: Tuple[int, ...]
    frame_ranges: Tuple[Tuple[int, int], ...]
    sample_ranges: Optional[Tuple[Tuple[int, int], ...]] = None

    def __len__(self):
        return len(self.labels)


def run_length_segments(labels: Sequence[int]) -> Tuple[Tuple[int, ...], Tuple[Tuple[int, int], ...]]:
    """Merge runs of equal labels into half-open frame ranges."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyInputError("empty label sequence")
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [labels.size]])
    return tuple(int(labels[s]) for s in starts), tuple(zip(starts.tolist(), ends.tolist()))


def frames_to_samples(frame_ranges, hop: int, n_samples: int) -> Tuple[Tuple[int, int], ...]:
    """Segment k starts at the first sample of its first frame and ends
    where the next segment starts; the last one runs to the clip end."""
    starts = [a * hop for a, _ in frame_ranges]
    ends = starts[1:] + [n_samples]
    return tuple(zip(starts, ends))


def segment_by_alignment(acoustic: Hmm2Model, mapping: StateMapping, obs,
                         spec: FrameSpec = FrameSpec(), clip: Optional[AudioClip] = None) -> SegmentSequence:
    if mapping.n_states != acoustic.n_states:
        raise ConfigError("mapping does not cover the acoustic model's states")
    path, _ = hmm2.viterbi_align(acoustic, obs)
    labels, frame_ranges = run_length_segments(mapping.map_path(path))
    samples = None
    if clip is not None:
        samples = frames_to_samples(frame_ranges, spec.hop_length(clip.sample_rate), len(clip))
    return SegmentSequence(labels, frame_ranges, samples)


def prosody_for(segments: SegmentSequence, source: ProsodySource,
                spec: FrameSpec = FrameSpec()) -> ProsodicSequence:
    if isinstance(source, AudioClip):
        ranges = segments.sample_ranges
        if ranges is None:
            ranges = frames_to_samples(segments.frame_ranges, spec.hop_length(source.sample_rate), len(source))
        return prosodic_extract(source, ranges, spec)
    return prosodic_from_contour(source, segments.frame_ranges)


@dataclass(frozen=True)
class SupraConfig:
    n_supra: int = 2
    order: int = 2
    shape: str = "circular"
    mixtures: int = 2
    max_iters: int = 20
    tol: float = 1e-4
    seed: int = 0

    def topology(self) -> Topology:
        return Topology(self.order, self.shape, self.n_supra)


@dataclass(frozen=True)
class SuprasegmentalModel:
    mapping: StateMapping
    hmm: Hmm2Model
    frame_spec: FrameSpec = field(default_factory=FrameSpec)

    def __post_init__(self):
        if self.hmm.n_states != self.mapping.n_supra:
            raise ConfigError("suprasegmental HMM size does not match the mapping")

    @property
    def B(self) -> np.ndarray:
        """First-order transition matrix between suprasegmental states (the
        bootstrap step of second-order models)."""
        return self.hmm.transitions if self.hmm.order == 1 else self.hmm.bootstrap


def observations(model: SuprasegmentalModel, acoustic: Hmm2Model, source: ProsodySource,
                 obs) -> ProsodicSequence:
    """Prosodic sequence of an utterance as segmented by ``acoustic``."""
    clip = source if isinstance(source, AudioClip) else None
    segs = segment_by_alignment(acoustic, model.mapping, obs, model.frame_spec, clip)
    return prosody_for(segs, source, model.frame_spec)


def score_suprasegmental(model: SuprasegmentalModel, acoustic: Hmm2Model, source: ProsodySource,
                         obs) -> float:
    return hmm2.log_likelihood(model.hmm, observations(model, acoustic, source, obs).segments)


def fit_prosodic(sequences: Sequence, config: SupraConfig = SupraConfig(),
                 labels: Optional[Sequence[Sequence[int]]] = None) -> Hmm2Model:
    """EM-train a suprasegmental HMM on prosodic sequences.

    ``labels`` (the mapped alignment labels of each segment) seed the
    state emissions when given; otherwise emissions start from k-means.
    """
    xs = [s.segments if isinstance(s, ProsodicSequence)
          else s.frames if isinstance(s, FeatureSequence) else np.atleast_2d(s) for s in sequences]
    if not xs:
        raise EmptyInputError("no prosodic sequences to train on")
    topo = config.topology()
    if labels is not None:
        start = hmm2.init_from_alignment(topo, xs, labels, config.mixtures, config.seed)
    else:
        start = hmm2.init_from_data(topo, xs, config.mixtures, config.seed)
    return hmm2.train(start, xs, config.max_iters, config.tol)


def train_suprasegmental(acoustic_bank: Mapping[str, Hmm2Model],
                         corpus: Mapping[str, Sequence[Tuple[FeatureSequence, ProsodySource]]],
                         config: SupraConfig = SupraConfig(),
                         spec: FrameSpec = FrameSpec(),
                         seeds: Optional[Mapping[str, int]] = None) -> Dict[str, SuprasegmentalModel]:
    """One suprasegmental model per condition, each trained on utterances
    segmented by that condition's own acoustic model."""
    out: Dict[str, SuprasegmentalModel] = {}
    for label, acoustic in acoustic_bank.items():
        utts = corpus.get(label, ())
        if not utts:
            raise EmptyInputError(f"no training utterances for condition {label!r}")
        mapping = StateMapping.blocks(acoustic.n_states, config.n_supra)
        seqs, labels = [], []
        for obs, source in utts:
            clip = source if isinstance(source, AudioClip) else None
            segs = segment_by_alignment(acoustic, mapping, obs, spec, clip)
            seqs.append(prosody_for(segs, source, spec))
            labels.append(segs.labels)
        cfg = config if seeds is None else replace(config, seed=seeds[label])
        out[label] = SuprasegmentalModel(mapping, fit_prosodic(seqs, cfg, labels), spec)
    return out


def to_document(model: SuprasegmentalModel) -> dict:
    spec = model.frame_spec
    return {
        "schema": hmm2.MODEL_SCHEMA,
        "kind": "suprasegmental",
        "mapping": list(model.mapping.assignment),
        "n_supra": model.mapping.n_supra,
        "frame_spec": {"frame_ms": spec.frame_ms, "overlap_ms": spec.overlap_ms, "preemphasis": spec.preemphasis},
        "hmm": hmm2.to_document(model.hmm),
    }


def from_document(doc: dict) -> SuprasegmentalModel:
    if doc.get("kind") != "suprasegmental" or doc.get("schema", hmm2.MODEL_SCHEMA) != hmm2.MODEL_SCHEMA:
        raise DocumentError("document does not describe a suprasegmental model")
    return SuprasegmentalModel(StateMapping(tuple(doc["mapping"]), doc["n_supra"]),
                               hmm2.from_document(doc["hmm"]), FrameSpec(**doc["frame_spec"]))
