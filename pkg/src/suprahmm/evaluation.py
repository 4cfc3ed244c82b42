"""Confusion matrices, performance tables, relative improvements, the
pooled-SD Student's t test, and fusion-weight sweeps.

Confusion matrices follow a column = true condition, row = identified
condition convention; every column is a percentage distribution.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .classifier import ConditionBank, classify_many, decide, fuse_vectors, stream_scores
from .corpus import Utterance
from .errors import ConfigError, EmptyInputError, InvalidWeightError, UndefinedStatisticError

REPORT_SCHEMA = "suprahmm-report v1"
COLUMN_TOL = 0.01
DEFAULT_CRITICAL = 1.645
DEFAULT_ALPHAS: Tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))


def round_half_up(value: float, places: int = 1) -> float:
    """Decimal rounding with ties away from zero (76.25 -> 76.3), applied
    to the shortest decimal form of ``value``."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


# -- confusion matrices ----------------------------------------------------

def validate_column(column: Sequence[float], tol: float = COLUMN_TOL) -> bool:
    """True when a column of percentages is non-negative and sums to 100."""
    col = np.asarray(column, dtype=np.float64)
    return bool(col.size and np.all(col >= 0) and abs(col.sum() - 100.0) <= tol)


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: Tuple[str, ...]
    percent: np.ndarray  # [identified, true]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        p = np.array(self.percent, dtype=np.float64)
        n = len(self.labels)
        if p.shape != (n, n):
            raise ConfigError(f"confusion matrix must be {n}x{n}, got {p.shape}")
        for c in range(n):
            if not validate_column(p[:, c]):
                raise ConfigError(f"column {self.labels[c]!r} is not a percentage distribution")
        p.setflags(write=False)
        object.__setattr__(self, "percent", p)

    def column(self, label: str) -> np.ndarray:
        return self.percent[:, self.labels.index(label)]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.percent).copy()


def confusion_matrix(truth: Sequence[str], predicted: Sequence[str],
                     labels: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    """Column-normalised confusion percentages.

    Every label needs at least one test item, since an empty column has no
    percentage distribution.
    """
    if len(truth) != len(predicted):
        raise ConfigError("truth and predictions differ in length")
    if not truth:
        raise EmptyInputError("no labelled predictions")
    if labels is None:
        labels = list(dict.fromkeys(truth))
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)))
    for t, p in zip(truth, predicted):
        if t not in index or p not in index:
            raise ConfigError(f"unknown label in pair ({t!r}, {p!r})")
        counts[index[p], index[t]] += 1
    totals = counts.sum(axis=0)
    if np.any(totals == 0):
        empty = [labels[i] for i in np.flatnonzero(totals == 0)]
        raise EmptyInputError(f"no test items for: {', '.join(empty)}")
    return ConfusionMatrix(tuple(labels), 100.0 * counts / totals)


# -- performance tables ----------------------------------------------------

@dataclass(frozen=True)
class PerformanceTable:
    labels: Tuple[str, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.labels) != len(self.values) or not self.values:
            raise ConfigError("performance table needs one value per label")
        if any(not 0.0 <= v <= 100.0 for v in self.values):
            raise ConfigError("performance values must lie in [0, 100]")

    @property
    def average(self) -> float:
        return math.fsum(self.values) / len(self.values)

    def __getitem__(self, label: str) -> float:
        return self.values[self.labels.index(label)]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.labels, self.values))


def performance_table(source: Union[ConfusionMatrix, Mapping[str, float]]) -> PerformanceTable:
    """Per-condition identification rates (the confusion diagonal, or a
    ready-made mapping of rates) and their average."""
    if isinstance(source, ConfusionMatrix):
        return PerformanceTable(source.labels, tuple(source.diagonal))
    return PerformanceTable(tuple(source.keys()), tuple(source.values()))


def relative_improvement(new: float, old: float) -> float:
    """100 * (new - old) / old."""
    if old <= 0:
        raise UndefinedStatisticError("relative improvement needs a positive baseline")
    return 100.0 * (new - old) / old


@dataclass(frozen=True)
class Improvement:
    condition: str
    baseline: str
    value: float


def improvement_extremes(system: PerformanceTable, baselines: Mapping[str, PerformanceTable]
                         ) -> Tuple[Improvement, Improvement]:
    """Largest and smallest per-condition relative improvement of ``system``
    over any of the baselines."""
    if not baselines:
        raise EmptyInputError("no baselines to compare against")
    found = [Improvement(lab, name, relative_improvement(system[lab], base[lab]))
             for name, base in baselines.items() for lab in system.labels]
    return max(found, key=lambda i: i.value), min(found, key=lambda i: i.value)


def environment_gap(first: PerformanceTable, second: PerformanceTable, places: int = 1) -> float:
    """Relative drop (percent) from the first table's average to the
    second's, both rounded as reported."""
    a, b = round_half_up(first.average, places), round_half_up(second.average, places)
    return relative_improvement(a, b)


# -- significance ----------------------------------------------------------

def pooled_sd(sd_x: float, sd_y: float) -> float:
    if sd_x < 0 or sd_y < 0:
        raise ConfigError("standard deviations must be non-negative")
    return math.sqrt((sd_x * sd_x + sd_y * sd_y) / 2.0)


def students_t(mean_x: float, mean_y: float, sd_pooled: float) -> float:
    if sd_pooled < 0:
        raise ConfigError("pooled standard deviation must be non-negative")
    diff = mean_x - mean_y
    if sd_pooled == 0:
        if diff == 0:
            return 0.0
        raise UndefinedStatisticError("t is undefined for zero spread and unequal means")
    return diff / sd_pooled


def confidence_interval(mean_x: float, mean_y: float, sd_pooled: float,
                        critical: float = DEFAULT_CRITICAL) -> Tuple[float, float]:
    if sd_pooled < 0:
        raise ConfigError("pooled standard deviation must be non-negative")
    diff = mean_x - mean_y
    half = critical * sd_pooled
    return diff - half, diff + half


@dataclass(frozen=True)
class TTestResult:
    mean_x: float
    mean_y: float
    sd_pooled: float
    t: float
    interval: Tuple[float, float]
    critical: float = DEFAULT_CRITICAL

    @property
    def significant(self) -> bool:
        return self.t > self.critical


def spread(values: Sequence[float], standard_error: bool = True) -> float:
    """Sample standard deviation of per-condition rates, divided by sqrt(n)
    when ``standard_error`` is set."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    sd = float(np.std(v, ddof=1))
    return sd / math.sqrt(v.size) if standard_error else sd


def compare(x: PerformanceTable, y: PerformanceTable, standard_error: bool = True,
            critical: float = DEFAULT_CRITICAL) -> TTestResult:
    """t test of x's average against y's using their per-condition rates."""
    sp = pooled_sd(spread(x.values, standard_error), spread(y.values, standard_error))
    mx, my = x.average, y.average
    if sp == 0 and mx != my:
        t = math.copysign(math.inf, mx - my)
    else:
        t = students_t(mx, my, sp)
    return TTestResult(mx, my, sp, t, confidence_interval(mx, my, sp, critical), critical)


# -- running a bank over a test set ----------------------------------------

@dataclass(frozen=True)
class Evaluation:
    truth: Tuple[str, ...]
    predicted: Tuple[str, ...]
    confusion: ConfusionMatrix

    @property
    def table(self) -> PerformanceTable:
        return performance_table(self.confusion)

    @property
    def accuracy(self) -> float:
        return 100.0 * float(np.mean([t == p for t, p in zip(self.truth, self.predicted)]))


def evaluate_predictions(truth: Sequence[str], predicted: Sequence[str],
                         labels: Optional[Sequence[str]] = None) -> Evaluation:
    return Evaluation(tuple(truth), tuple(predicted), confusion_matrix(truth, predicted, labels))


def evaluate_bank(bank: ConditionBank, utterances: Sequence[Utterance], workers: int = 1) -> Evaluation:
    predicted = classify_many(bank, utterances, workers)
    return evaluate_predictions([u.condition for u in utterances], predicted, bank.labels)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    evaluation: Evaluation

    @property
    def average(self) -> float:
        return self.evaluation.table.average


def alpha_sweep(bank: ConditionBank, utterances: Sequence[Utterance],
                alphas: Sequence[float] = DEFAULT_ALPHAS) -> List[SweepRow]:
    """Score every utterance once per stream, then re-fuse for each weight.

    Models are never retrained; only the fusion step changes with alpha.
    """
    alphas = [float(a) for a in alphas]
    if any(not 0.0 <= a <= 1.0 for a in alphas):
        raise InvalidWeightError("sweep weights must lie in [0, 1]")
    if not utterances:
        raise EmptyInputError("no test utterances")
    need_prosodic = any(a > 0 for a in alphas)
    if need_prosodic and not bank.has_suprasegmental:
        raise ConfigError("sweeping above 0 requires suprasegmental models")
    scores = [stream_scores(bank, u.prosody, u.features, need_prosodic) for u in utterances]
    truth = [u.condition for u in utterances]
    rows = []
    for a in alphas:
        predicted = [decide(bank.labels, fuse_vectors(ac, pr, a)) for ac, pr in scores]
        rows.append(SweepRow(a, evaluate_predictions(truth, predicted, bank.labels)))
    return rows


# -- reports ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{round_half_up(x):.1f}"


def _csv(rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def confusion_csv(matrix: ConfusionMatrix) -> str:
    rows: List[List[object]] = [["identified \\ true", *matrix.labels]]
    for i, lab in enumerate(matrix.labels):
        rows.append([lab, *(_fmt(v) for v in matrix.percent[i])])
    return _csv(rows)


def performance_csv(tables: Mapping[str, PerformanceTable]) -> str:
    if not tables:
        raise EmptyInputError("no performance tables")
    labels = next(iter(tables.values())).labels
    rows: List[List[object]] = [["system", *labels, "average"]]
    for name, tab in tables.items():
        rows.append([name, *(_fmt(tab[lab]) for lab in labels), _fmt(tab.average)])
    return _csv(rows)


def ttest_csv(results: Mapping[str, TTestResult]) -> str:
    rows: List[List[object]] = [["comparison", "mean_x", "mean_y", "sd_pooled", "t", "ci_low", "ci_high"]]
    for name, r in results.items():
        rows.append([name, _fmt(r.mean_x), _fmt(r.mean_y), f"{r.sd_pooled:.3f}", f"{r.t:.3f}",
                     f"{r.interval[0]:.3f}", f"{r.interval[1]:.3f}"])
    return _csv(rows)


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    return _csv([["alpha", "average"]] + [[f"{r.alpha:.1f}", _fmt(r.average)] for r in rows])


def text_report(sections: Mapping[str, str], standard_error: bool = True) -> str:
    """Combined plain-text report with a versioned header."""
    lines = [
        REPORT_SCHEMA,
        "# confusion matrices: columns = true condition, rows = identified condition, percent",
        "# performance: per-condition identification percent, average = mean over conditions",
        f"# t tests: pooled spread uses {'standard errors' if standard_error else 'sample standard deviations'}"
        f", critical value {DEFAULT_CRITICAL}",
        "# values rounded half-up to 0.1",
        "",
    ]
    for title, body in sections.items():
        lines += [f"[{title}]", body.rstrip("\n"), ""]
    return "\n".join(lines)


def write_text(path: Union[str, Path], text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")
    return p
