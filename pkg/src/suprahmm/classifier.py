"""Per-condition model banks, acoustic/prosodic score fusion and the
argmax identification rule.

Conditions are scored by likelihood, which under uniform condition priors
ranks them exactly as posteriors would.
"""
from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import hmm2, suprasegmental
from .corpus import Utterance
from .errors import ConfigError, DocumentError, EmptyInputError, InvalidWeightError
from .features import FrameSpec, MfccConfig
from .hmm2 import MODEL_SCHEMA, Hmm2Model, Topology
from .seeds import derive_seed
from .suprasegmental import ProsodySource, SupraConfig, SuprasegmentalModel

BANK_SCHEMA = "suprahmm-bank v1"
BANK_MANIFEST = "bank.json"


def fuse_scores(log_acoustic: float, log_prosodic: float, alpha: float) -> float:
    """(1 - alpha) * acoustic + alpha * prosodic; the endpoints return one
    stream untouched."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidWeightError(f"fusion weight must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return float(log_acoustic)
    if alpha == 1.0:
        return float(log_prosodic)
    return (1.0 - alpha) * log_acoustic + alpha * log_prosodic


@dataclass(frozen=True)
class ConditionModel:
    label: str
    acoustic: Hmm2Model
    suprasegmental: Optional[SuprasegmentalModel] = None

    def __post_init__(self):
        if not self.label:
            raise ConfigError("condition label must be non-empty")


@dataclass(frozen=True)
class BankConfig:
    order: int = 2
    shape: str = "circular"
    n_states: int = 6
    mixtures: int = 10
    use_supra: bool = True
    supra_states: int = 2
    supra_order: Optional[int] = None
    supra_shape: Optional[str] = None
    supra_mixtures: int = 2
    alpha: float = 0.5
    max_iters: int = 15
    tol: float = 1e-4
    seed: int = 0
    normalize: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidWeightError(f"fusion weight must lie in [0, 1], got {self.alpha}")
        if self.use_supra and (self.supra_states < 1 or self.n_states % self.supra_states):
            raise ConfigError("acoustic state count must be divisible by the suprasegmental state count")
        Topology(self.order, self.shape, self.n_states)

    def topology(self) -> Topology:
        return Topology(self.order, self.shape, self.n_states)

    def supra_config(self) -> SupraConfig:
        return SupraConfig(self.supra_states, self.supra_order or self.order, self.supra_shape or self.shape,
                           self.supra_mixtures, self.max_iters, self.tol, self.seed)

    @property
    def system_name(self) -> str:
        shape = "C" if self.shape == "circular" else "LTR"
        core = f"{shape}{'SP' if self.use_supra else ''}HMM{self.order}"
        return core


@dataclass(frozen=True)
class ConditionBank:
    conditions: Tuple[ConditionModel, ...]
    alpha: float = 0.5
    normalize: bool = False
    spec: FrameSpec = field(default_factory=FrameSpec)
    config: Optional[BankConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        labels = self.labels
        if len(set(labels)) != len(labels):
            raise ConfigError("condition labels must be unique")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidWeightError(f"fusion weight must lie in [0, 1], got {self.alpha}")

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(c.label for c in self.conditions)

    @property
    def has_suprasegmental(self) -> bool:
        return all(c.suprasegmental is not None for c in self.conditions)

    def with_alpha(self, alpha: float) -> "ConditionBank":
        return ConditionBank(self.conditions, alpha, self.normalize, self.spec, self.config)


def stream_scores(bank: ConditionBank, source: Optional[ProsodySource], obs,
                  need_prosodic: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Acoustic and suprasegmental log-scores of one utterance against
    every condition.  Prosodic scores are ``None`` when not requested."""
    if not bank.conditions:
        raise EmptyInputError("condition bank is empty")
    acoustic = np.empty(len(bank.conditions))
    prosodic = np.empty(len(bank.conditions)) if need_prosodic else None
    for c, cond in enumerate(bank.conditions):
        ll = hmm2.log_likelihood(cond.acoustic, obs)
        n_frames = obs.frame_count if hasattr(obs, "frame_count") else np.atleast_2d(obs).shape[0]
        acoustic[c] = ll / n_frames if bank.normalize else ll
        if need_prosodic:
            if cond.suprasegmental is None:
                raise ConfigError(f"condition {cond.label!r} has no suprasegmental model")
            if source is None:
                raise ConfigError("prosodic scoring needs an audio clip or frame contour")
            seq = suprasegmental.observations(cond.suprasegmental, cond.acoustic, source, obs)
            lp = hmm2.log_likelihood(cond.suprasegmental.hmm, seq.segments)
            prosodic[c] = lp / seq.segment_count if bank.normalize else lp
    return acoustic, prosodic


def fuse_vectors(acoustic: np.ndarray, prosodic: Optional[np.ndarray], alpha: float) -> np.ndarray:
    if alpha == 0.0:
        return np.array(acoustic, dtype=np.float64)
    if prosodic is None:
        raise ConfigError("fusion weight > 0 needs suprasegmental scores")
    return np.array([fuse_scores(a, p, alpha) for a, p in zip(acoustic, prosodic)])


def decide(labels: Sequence[str], fused: np.ndarray) -> str:
    """Argmax with ties resolved to the earliest condition."""
    return labels[int(np.argmax(fused))]


def classify(bank: ConditionBank, source: Optional[ProsodySource], obs) -> Tuple[str, np.ndarray]:
    """Identified condition label and the fused score of every condition."""
    if not bank.conditions:
        raise EmptyInputError("condition bank is empty")
    if bank.alpha > 0 and not bank.has_suprasegmental:
        raise ConfigError("fusion weight > 0 requires a suprasegmental model for every condition")
    acoustic, prosodic = stream_scores(bank, source, obs, need_prosodic=bank.alpha > 0)
    fused = fuse_vectors(acoustic, prosodic, bank.alpha)
    return decide(bank.labels, fused), fused


def classify_many(bank: ConditionBank, utterances: Sequence[Utterance], workers: int = 1) -> List[str]:
    """Classify a batch; results keep input order whatever the worker count."""
    def one(u: Utterance) -> str:
        return classify(bank, u.prosody, u.features)[0]

    if workers <= 1:
        return [one(u) for u in utterances]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, utterances))


def group_by_condition(utterances: Sequence[Utterance],
                       conditions: Optional[Sequence[str]] = None) -> Dict[str, List[Utterance]]:
    if conditions is None:
        conditions = list(dict.fromkeys(u.condition for u in utterances))
    groups: Dict[str, List[Utterance]] = {c: [] for c in conditions}
    for u in utterances:
        if u.condition not in groups:
            raise ConfigError(f"utterance {u.id} has undeclared condition {u.condition!r}")
        groups[u.condition].append(u)
    return groups


def train_bank(utterances: Sequence[Utterance], config: BankConfig = BankConfig(),
               conditions: Optional[Sequence[str]] = None, spec: FrameSpec = FrameSpec()) -> ConditionBank:
    """Train one acoustic model per condition, then (optionally) its
    suprasegmental model on top of it."""
    groups = group_by_condition(utterances, conditions)
    missing = [c for c, us in groups.items() if not us]
    if missing:
        raise EmptyInputError(f"no training utterances for conditions: {', '.join(missing)}")
    topo = config.topology()
    models: List[ConditionModel] = []
    for label, utts in groups.items():
        feats = [u.features for u in utts]
        start = hmm2.init_from_data(topo, feats, config.mixtures, derive_seed(config.seed, "acoustic", label))
        acoustic = hmm2.train(start, feats, config.max_iters, config.tol)
        supra = None
        if config.use_supra:
            supra = suprasegmental.train_suprasegmental(
                {label: acoustic}, {label: [(u.features, u.prosody) for u in utts]},
                config.supra_config(), spec, {label: derive_seed(config.seed, "supra", label)},
            )[label]
        models.append(ConditionModel(label, acoustic, supra))
    alpha = config.alpha if config.use_supra else 0.0
    return ConditionBank(tuple(models), alpha, config.normalize, spec, config)


# -- persistence ---------------------------------------------------------

def _dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def condition_document(cond: ConditionModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "kind": "condition",
        "label": cond.label,
        "acoustic": hmm2.to_document(cond.acoustic),
        "suprasegmental": None if cond.suprasegmental is None else suprasegmental.to_document(cond.suprasegmental),
    }


def condition_from_document(doc: dict) -> ConditionModel:
    if doc.get("schema") != MODEL_SCHEMA or doc.get("kind") != "condition":
        raise DocumentError(f"expected a '{MODEL_SCHEMA}' condition document")
    supra = doc.get("suprasegmental")
    return ConditionModel(doc["label"], hmm2.from_document(doc["acoustic"]),
                          None if supra is None else suprasegmental.from_document(supra))


def feature_config_hash(spec: FrameSpec = FrameSpec(), mfcc: MfccConfig = MfccConfig()) -> str:
    blob = json.dumps({"frame": asdict(spec), "mfcc": mfcc.as_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def model_file_name(index: int, label: str) -> str:
    return f"{index:02d}_{re.sub(r'[^A-Za-z0-9_.-]+', '_', label)}.json"


def save_bank(bank: ConditionBank, directory: Union[str, Path]) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, cond in enumerate(bank.conditions):
        name = model_file_name(i, cond.label)
        (out / name).write_text(_dumps(condition_document(cond)), encoding="utf-8")
        files.append(name)
    manifest = {
        "schema": BANK_SCHEMA,
        "labels": list(bank.labels),
        "alpha": bank.alpha,
        "normalize": bank.normalize,
        "frame_spec": asdict(bank.spec),
        "feature_config_hash": feature_config_hash(bank.spec),
        "config": None if bank.config is None else asdict(bank.config),
        "files": files,
    }
    path = out / BANK_MANIFEST
    path.write_text(_dumps(manifest), encoding="utf-8")
    return path


def load_bank(directory: Union[str, Path]) -> ConditionBank:
    root = Path(directory)
    try:
        manifest = json.loads((root / BANK_MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"cannot read bank manifest in {root}: {exc}") from exc
    if manifest.get("schema") != BANK_SCHEMA:
        raise DocumentError(f"{root}: not a '{BANK_SCHEMA}' directory")
    spec = FrameSpec(**manifest["frame_spec"])
    if manifest.get("feature_config_hash") != feature_config_hash(spec):
        raise DocumentError(f"{root}: feature configuration hash mismatch")
    conds = [condition_from_document(json.loads((root / f).read_text(encoding="utf-8")))
             for f in manifest["files"]]
    if [c.label for c in conds] != manifest["labels"]:
        raise DocumentError(f"{root}: condition files do not match the declared labels")
    cfg = manifest.get("config")
    config = None
    if cfg is not None:
        config = BankConfig(**cfg)
    return ConditionBank(tuple(conds), manifest["alpha"], manifest.get("normalize", False), spec, config)
