"""Corpus manifests, speaker/text-independent splits and synthetic corpora.

Manifest layout (UTF-8, tab separated)::

    suprahmm-corpus v1
    #conditions<TAB>neutral<TAB>angry<TAB>...
    #sample_rate<TAB>16000
    #train_speakers<TAB>...        (optional split plan, four lines)
    id<TAB>speaker<TAB>text<TAB>condition<TAB>rep<TAB>path<TAB>kind
    u0001<TAB>s1<TAB>t01<TAB>neutral<TAB>0<TAB>feats/u0001.feat<TAB>features

``kind`` is ``audio`` (a 16 kHz mono WAVE file) or ``features`` (a
SUPRAHMM-FEAT file, with the frame prosodic contour in a sibling file with
the ``.pros`` suffix).  Paths are relative to the manifest's directory.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import hmm2
from .errors import ConfigError, ManifestError, SplitError, SuprahmmError
from .features import (
    SAMPLE_RATE,
    AudioClip,
    FeatureSequence,
    FrameSpec,
    read_features,
    read_wav,
    mfcc_extract,
    write_features,
)
from .hmm2 import GmmEmission, Hmm2Model, Topology
from .seeds import derive_seed

MANIFEST_MAGIC = "suprahmm-corpus v1"
COLUMNS = ("id", "speaker", "text", "condition", "rep", "path", "kind")
KINDS = ("audio", "features")
DEFAULT_CONDITIONS = ("neutral", "angry", "slow", "loud", "soft", "fast")
CONTOUR_SUFFIX = ".pros"


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    speaker: str
    text: str
    condition: str
    rep: int
    path: str
    kind: str = "features"

    def __post_init__(self):
        for name in ("id", "speaker", "text", "condition", "path"):
            if not getattr(self, name):
                raise ManifestError(f"record field {name!r} is empty")
        if self.kind not in KINDS:
            raise ManifestError(f"record {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class SplitPlan:
    train_speakers: FrozenSet[str]
    test_speakers: FrozenSet[str]
    train_texts: FrozenSet[str]
    test_texts: FrozenSet[str]

    def __post_init__(self):
        for name in ("train_speakers", "test_speakers", "train_texts", "test_texts"):
            value = frozenset(getattr(self, name))
            if not value:
                raise SplitError(f"{name} is empty")
            object.__setattr__(self, name, value)
        if self.train_speakers & self.test_speakers:
            raise SplitError("train and test speakers overlap")
        if self.train_texts & self.test_texts:
            raise SplitError("train and test texts overlap")


@dataclass
class CorpusManifest:
    conditions: Tuple[str, ...]
    records: List[UtteranceRecord]
    sample_rate: int = SAMPLE_RATE
    plan: Optional[SplitPlan] = None
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        if len(set(self.conditions)) != len(self.conditions) or not self.conditions:
            raise ManifestError("condition labels must be non-empty and unique")
        dup = [k for k, c in Counter(r.id for r in self.records).items() if c > 1]
        if dup:
            raise ManifestError(f"duplicate utterance ids: {', '.join(sorted(dup)[:5])}")
        unknown = {r.condition for r in self.records} - set(self.conditions)
        if unknown:
            raise ManifestError(f"records use undeclared conditions: {sorted(unknown)}")
        missing = set(self.conditions) - {r.condition for r in self.records}
        if missing:
            raise ManifestError(f"declared conditions without records: {sorted(missing)}")

    def resolve(self, record: UtteranceRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.base_dir / p


def read_manifest(path: Union[str, Path]) -> CorpusManifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_MAGIC:
        raise ManifestError(f"{path}: missing '{MANIFEST_MAGIC}' header")
    meta: Dict[str, List[str]] = {}
    records: List[UtteranceRecord] = []
    header_seen = False
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if cells[0].startswith("#"):
            meta[cells[0][1:]] = [c for c in cells[1:] if c]
            continue
        if not header_seen:
            if tuple(cells) != COLUMNS:
                raise ManifestError(f"{path}:{lineno}: expected column header {'/'.join(COLUMNS)}")
            header_seen = True
            continue
        if len(cells) != len(COLUMNS):
            raise ManifestError(f"{path}:{lineno}: expected {len(COLUMNS)} columns, got {len(cells)}")
        try:
            rep = int(cells[4])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: repetition index {cells[4]!r} is not an integer") from None
        records.append(UtteranceRecord(cells[0], cells[1], cells[2], cells[3], rep, cells[5], cells[6]))
    if "conditions" not in meta:
        raise ManifestError(f"{path}: no #conditions line")
    plan = None
    keys = ("train_speakers", "test_speakers", "train_texts", "test_texts")
    if any(k in meta for k in keys):
        plan = SplitPlan(*(frozenset(meta.get(k, ())) for k in keys))
    rate = int(meta.get("sample_rate", [SAMPLE_RATE])[0])
    return CorpusManifest(tuple(meta["conditions"]), records, rate, plan, path.parent)


def format_manifest(manifest: CorpusManifest) -> str:
    out = [MANIFEST_MAGIC, "\t".join(["#conditions", *manifest.conditions]),
           f"#sample_rate\t{manifest.sample_rate}"]
    if manifest.plan is not None:
        for key in ("train_speakers", "test_speakers", "train_texts", "test_texts"):
            out.append("\t".join([f"#{key}", *sorted(getattr(manifest.plan, key))]))
    out.append("\t".join(COLUMNS))
    for r in manifest.records:
        out.append("\t".join([r.id, r.speaker, r.text, r.condition, str(r.rep), r.path, r.kind]))
    return "\n".join(out) + "\n"


def write_manifest(manifest: CorpusManifest, path: Union[str, Path]) -> None:
    Path(path).write_text(format_manifest(manifest), encoding="utf-8")


def split(manifest: CorpusManifest, plan: Optional[SplitPlan] = None
          ) -> Tuple[List[UtteranceRecord], List[UtteranceRecord]]:
    """Records of train speakers saying train texts, and of test speakers
    saying test texts.  Cross combinations belong to neither side."""
    plan = plan or manifest.plan
    if plan is None:
        raise SplitError("no split plan given and the manifest declares none")
    speakers = {r.speaker for r in manifest.records}
    texts = {r.text for r in manifest.records}
    unknown = (plan.train_speakers | plan.test_speakers) - speakers
    unknown |= (plan.train_texts | plan.test_texts) - texts
    if unknown:
        raise SplitError(f"plan names speakers/texts absent from the manifest: {sorted(unknown)[:5]}")
    train = [r for r in manifest.records if r.speaker in plan.train_speakers and r.text in plan.train_texts]
    test = [r for r in manifest.records if r.speaker in plan.test_speakers and r.text in plan.test_texts]
    if not train or not test:
        raise SplitError("split leaves one side empty")
    return train, test


# -- loading -------------------------------------------------------------

@dataclass(frozen=True)
class Utterance:
    """Loaded utterance: acoustic features plus a prosody source, which is
    the audio clip itself or a stored frame contour."""

    id: str
    condition: str
    features: FeatureSequence
    prosody: Union[AudioClip, np.ndarray]
    speaker: str = ""
    text: str = ""


def load_utterance(manifest: CorpusManifest, record: UtteranceRecord,
                   spec: FrameSpec = FrameSpec()) -> Utterance:
    path = manifest.resolve(record)
    if record.kind == "audio":
        clip = read_wav(path, manifest.sample_rate)
        feats = mfcc_extract(clip, spec, source_id=record.id)
        return Utterance(record.id, record.condition, feats, clip, record.speaker, record.text)
    feats = FeatureSequence(read_features(path), record.id)
    contour_path = path.with_suffix(CONTOUR_SUFFIX)
    if not contour_path.exists():
        raise ManifestError(f"{record.id}: prosodic contour {contour_path.name} not found")
    contour = read_features(contour_path)
    if contour.shape[0] != feats.frame_count:
        raise ManifestError(f"{record.id}: contour has {contour.shape[0]} frames, features {feats.frame_count}")
    return Utterance(record.id, record.condition, feats, contour, record.speaker, record.text)


def load_utterances(manifest: CorpusManifest, records: Iterable[UtteranceRecord],
                    spec: FrameSpec = FrameSpec()) -> Tuple[List[Utterance], Dict[str, str]]:
    """Load every record; failures are collected per utterance id instead
    of aborting the batch."""
    loaded, failures = [], {}
    for rec in records:
        try:
            loaded.append(load_utterance(manifest, rec, spec))
        except (SuprahmmError, OSError) as exc:
            failures[rec.id] = f"{type(exc).__name__}: {exc}"
    return loaded, failures


# -- synthetic corpora ---------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Shape and difficulty of a synthetic corpus.

    ``separation`` moves each condition's state means that many unit
    standard deviations away from a shared base; ``prosodic_separation``
    does the same for the frame prosodic contour (defaults to
    ``separation``).  ``dynamics`` in [0, 1] blends a condition-specific
    second-order transition tensor into the shared one.
    """

    n_conditions: int = 6
    separation: float = 3.0
    prosodic_separation: Optional[float] = None
    dynamics: float = 0.0
    speakers: int = 8
    texts: int = 20
    reps: int = 2
    train_speakers: int = 5
    train_texts: int = 10
    t_range: Tuple[int, int] = (40, 80)
    n_states: int = 6
    n_supra: int = 2
    dim: int = 32
    mixtures: int = 2
    speaker_spread: float = 0.3

    def __post_init__(self):
        if self.n_conditions < 2:
            raise ConfigError("need at least two conditions")
        if self.separation < 0 or (self.prosodic_separation or 0) < 0:
            raise ConfigError("separation must be non-negative")
        if not 0 <= self.dynamics <= 1:
            raise ConfigError("dynamics must lie in [0, 1]")
        if not (0 < self.train_speakers < self.speakers and 0 < self.train_texts < self.texts):
            raise ConfigError("train speaker/text counts must leave test material")
        if not 1 <= self.t_range[0] <= self.t_range[1]:
            raise ConfigError("invalid length range")
        if self.reps < 1 or self.n_states % self.n_supra:
            raise ConfigError("need reps >= 1 and n_states divisible by n_supra")

    def labels(self) -> Tuple[str, ...]:
        if self.n_conditions == len(DEFAULT_CONDITIONS):
            return DEFAULT_CONDITIONS
        return tuple(f"c{i}" for i in range(self.n_conditions))


# base level and unit spread of the (log-energy, pitch Hz, zcr) contour
_CONTOUR_BASE = np.array([[-3.0, 140.0, 0.08], [-4.0, 180.0, 0.12]])
_CONTOUR_SD = np.array([1.0, 15.0, 0.02])


@dataclass(frozen=True)
class ConditionGenerator:
    label: str
    acoustic: Hmm2Model
    contour_means: np.ndarray  # (n_supra, 3)
    block: Tuple[int, ...]


@dataclass
class SynthCorpus:
    manifest: CorpusManifest
    generators: Dict[str, ConditionGenerator]
    utterances: Dict[str, Utterance]

    def select(self, records: Iterable[UtteranceRecord]) -> List[Utterance]:
        return [self.utterances[r.id] for r in records]

    def split(self) -> Tuple[List[Utterance], List[Utterance]]:
        train, test = split(self.manifest)
        return self.select(train), self.select(test)


def _shared_tensor(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Circular second-order dynamics with momentum: the chain tends to
    keep moving in the direction of its last step."""
    topo = Topology(2, "circular", n)
    tensor, boot = hmm2.uniform_transitions(topo)
    if n < 3:
        return tensor, boot
    for i in range(n):
        for j in range(n):
            fwd, back = (j + 1) % n, (j - 1) % n
            if i == back:        # moved forward
                probs = {fwd: 0.55, j: 0.35, back: 0.10}
            elif i == fwd:       # moved backward
                probs = {fwd: 0.15, j: 0.35, back: 0.50}
            else:                # stayed (or unreachable pair)
                probs = {fwd: 0.30, j: 0.55, back: 0.15}
            tensor[i, j] = 0.0
            for k, p in probs.items():
                tensor[i, j, k] += p
    boot = np.zeros((n, n))
    for j in range(n):
        for k, p in {(j + 1) % n: 0.3, j: 0.55, (j - 1) % n: 0.15}.items():
            boot[j, k] += p
    return tensor, boot


def _generators(spec: SynthSpec, seed: int) -> Dict[str, ConditionGenerator]:
    n, d, m = spec.n_states, spec.dim, spec.mixtures
    base_rng = np.random.default_rng(derive_seed(seed, "synth", "base"))
    base_means = 2.0 * base_rng.standard_normal((n, d))
    comp_offsets = 0.5 * base_rng.standard_normal((n, m, d))
    weights = np.full((n, m), 1.0 / m)
    variances = np.ones((n, m, d))
    tensor, boot = _shared_tensor(n)
    adj = Topology(2, "circular", n).adjacency()
    block = tuple(q // (n // spec.n_supra) for q in range(n))
    contour_base = _CONTOUR_BASE[np.arange(spec.n_supra) % 2]
    pros_sep = spec.separation if spec.prosodic_separation is None else spec.prosodic_separation

    out = {}
    for label in spec.labels():
        rng = np.random.default_rng(derive_seed(seed, "synth", "condition", label))
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        means = base_means + spec.separation * direction
        own = np.zeros_like(tensor)
        for i in range(n):
            for j in range(n):
                allowed = np.flatnonzero(adj[j])
                own[i, j, allowed] = rng.dirichlet(np.full(allowed.size, 1.0))
        cond_tensor = (1.0 - spec.dynamics) * tensor + spec.dynamics * own
        acoustic = Hmm2Model(
            Topology(2, "circular", n), np.full(n, 1.0 / n), cond_tensor,
            GmmEmission(weights, means[:, None, :] + comp_offsets, variances), boot,
        )
        pdir = rng.standard_normal((spec.n_supra, 3))
        pdir /= np.linalg.norm(pdir, axis=1, keepdims=True)
        contour_means = contour_base + pros_sep * pdir * _CONTOUR_SD
        out[label] = ConditionGenerator(label, acoustic, contour_means, block)
    return out


def _f32(a: np.ndarray) -> np.ndarray:
    """Round to float32 so in-memory corpora match their on-disk form."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def synth_generate(spec: SynthSpec = SynthSpec(), seed: int = 0) -> SynthCorpus:
    """Sample a labelled corpus laid out like a speaker-by-text-by-repetition
    recording session, with a speaker- and text-disjoint split plan."""
    gens = _generators(spec, seed)
    labels = spec.labels()
    speakers = [f"s{i + 1:02d}" for i in range(spec.speakers)]
    texts = [f"t{i + 1:02d}" for i in range(spec.texts)]
    srng = np.random.default_rng(derive_seed(seed, "synth", "speakers"))
    spk_offset = {s: spec.speaker_spread * srng.standard_normal(spec.dim) for s in speakers}
    spk_pitch = {s: 10.0 * srng.standard_normal() for s in speakers}
    lo, hi = spec.t_range
    text_len = {t: int(np.random.default_rng(derive_seed(seed, "synth", "text", t)).integers(lo, hi + 1))
                for t in texts}

    records, utts = [], {}
    for label in labels:
        gen = gens[label]
        for s in speakers:
            for t in texts:
                for rep in range(spec.reps):
                    uid = f"{label}-{s}-{t}-r{rep}"
                    rng = np.random.default_rng(derive_seed(seed, "synth", "utt", uid))
                    length = max(1, text_len[t] + int(rng.integers(-2, 3)))
                    obs, path = hmm2.sample_sequence(gen.acoustic, length, rng)
                    x = _f32(obs.frames + spk_offset[s])
                    blocks = np.asarray(gen.block)[path]
                    contour = gen.contour_means[blocks] + _CONTOUR_SD * rng.standard_normal((length, 3))
                    contour[:, 1] += spk_pitch[s]
                    records.append(UtteranceRecord(uid, s, t, label, rep, f"{uid}.feat", "features"))
                    utts[uid] = Utterance(uid, label, FeatureSequence(x, uid), _f32(contour), s, t)
    plan = SplitPlan(frozenset(speakers[:spec.train_speakers]), frozenset(speakers[spec.train_speakers:]),
                     frozenset(texts[:spec.train_texts]), frozenset(texts[spec.train_texts:]))
    manifest = CorpusManifest(labels, records, SAMPLE_RATE, plan)
    return SynthCorpus(manifest, gens, utts)


def write_corpus(corpus: SynthCorpus, out_dir: Union[str, Path]) -> Path:
    """Write feature and contour files plus ``manifest.tsv``; returns the
    manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in corpus.manifest.records:
        utt = corpus.utterances[rec.id]
        target = out / rec.path
        write_features(target, utt.features.frames)
        write_features(target.with_suffix(CONTOUR_SUFFIX), utt.prosody)
    corpus.manifest.base_dir = out
    path = out / "manifest.tsv"
    write_manifest(corpus.manifest, path)
    return path
