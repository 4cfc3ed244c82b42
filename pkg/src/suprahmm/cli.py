"""Batch command line: ``suprahmm {synth,extract,train,evaluate}``.

Every subcommand is deterministic for fixed inputs and ``--seed``.  The
exit status is 0 when every record was processed, 1 when some records
failed (they are listed on stderr), and 2 for usage or configuration
errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import vq
from .classifier import (
    BankConfig,
    ConditionBank,
    group_by_condition,
    model_file_name,
    load_bank,
    save_bank,
    train_bank,
)
from .corpus import (
    CONTOUR_SUFFIX,
    CorpusManifest,
    SynthSpec,
    UtteranceRecord,
    load_utterances,
    read_manifest,
    split,
    synth_generate,
    write_corpus,
    write_manifest,
)
from .errors import SuprahmmError
from .evaluation import (
    DEFAULT_ALPHAS,
    Evaluation,
    PerformanceTable,
    TTestResult,
    alpha_sweep,
    compare,
    confusion_csv,
    evaluate_bank,
    evaluate_predictions,
    performance_csv,
    sweep_csv,
    text_report,
    ttest_csv,
    write_text,
)
from .features import FrameSpec, mfcc_extract, prosodic_contour, read_wav, write_features
from .seeds import derive_seed

log = logging.getLogger("suprahmm")

EXIT_OK, EXIT_RECORDS, EXIT_USAGE = 0, 1, 2


def _report_failures(failures: Dict[str, str]) -> int:
    for uid, msg in sorted(failures.items()):
        print(f"error: {uid}: {msg}", file=sys.stderr)
    return EXIT_RECORDS if failures else EXIT_OK


# -- synth ---------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        n_conditions=args.conditions, separation=args.separation,
        prosodic_separation=args.prosodic_separation, dynamics=args.dynamics,
        n_states=args.states, n_supra=args.supra_states, speakers=args.speakers, texts=args.texts,
        reps=args.reps, train_speakers=args.train_speakers, train_texts=args.train_texts,
    )
    corpus = synth_generate(spec, args.seed)
    path = write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.manifest.records)} utterances to {path}")
    return EXIT_OK


# -- extract -------------------------------------------------------------

def cmd_extract(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = FrameSpec()
    records: List[UtteranceRecord] = []
    failures: Dict[str, str] = {}
    for rec in manifest.records:
        src = manifest.resolve(rec)
        target = out / f"{rec.id}.feat"
        try:
            if rec.kind == "audio":
                clip = read_wav(src, manifest.sample_rate)
                write_features(target, mfcc_extract(clip, spec, source_id=rec.id).frames)
                write_features(target.with_suffix(CONTOUR_SUFFIX), prosodic_contour(clip, spec))
            else:
                if src.resolve() != target.resolve():
                    shutil.copyfile(src, target)
                    shutil.copyfile(src.with_suffix(CONTOUR_SUFFIX), target.with_suffix(CONTOUR_SUFFIX))
        except (SuprahmmError, OSError) as exc:
            failures[rec.id] = f"{type(exc).__name__}: {exc}"
            continue
        records.append(UtteranceRecord(rec.id, rec.speaker, rec.text, rec.condition, rec.rep,
                                       target.name, "features"))
    if records:
        kept = [c for c in manifest.conditions if any(r.condition == c for r in records)]
        updated = CorpusManifest(tuple(kept), records, manifest.sample_rate, manifest.plan, out)
        write_manifest(updated, out / "manifest.tsv")
        print(f"extracted {len(records)} of {len(manifest.records)} records into {out}")
    return _report_failures(failures)


# -- train ---------------------------------------------------------------

def _bank_config(args: argparse.Namespace) -> BankConfig:
    return BankConfig(
        order=args.order, shape=args.shape, n_states=args.states, mixtures=args.mixtures,
        use_supra=not args.no_supra, supra_states=args.supra_states, supra_mixtures=args.supra_mixtures,
        alpha=args.alpha, max_iters=args.iters, tol=args.tol, seed=args.seed, normalize=args.normalize,
    )


def _load_split(manifest: CorpusManifest, side: int):
    records = split(manifest)[side]
    return load_utterances(manifest, records)


def cmd_train(args: argparse.Namespace) -> int:
    config = _bank_config(args)
    manifest = read_manifest(args.corpus)
    utterances, failures = _load_split(manifest, 0)
    bank = train_bank(utterances, config, manifest.conditions)
    path = save_bank(bank, args.bank)
    print(f"trained {len(bank.conditions)} {config.system_name} condition models into {path.parent}")
    return _report_failures(failures)


# -- evaluate ------------------------------------------------------------

def _train_vq(train_utts, labels, k: int, seed: int) -> List[vq.Codebook]:
    groups = group_by_condition(train_utts, labels)
    return [vq.train_codebook(np.vstack([u.features.frames for u in groups[lab]]), k,
                              derive_seed(seed, "vq", lab), label=lab) for lab in labels]


def _save_codebooks(codebooks: Sequence[vq.Codebook], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, cb in enumerate(codebooks):
        (directory / model_file_name(i, cb.label)).write_text(
            json.dumps(vq.to_document(cb), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _system_name(bank: ConditionBank, fallback: str) -> str:
    return bank.config.system_name if bank.config is not None else fallback


def cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.corpus)
    bank = load_bank(args.bank)
    if args.alpha is not None:
        bank = bank.with_alpha(args.alpha)
    test, failures = _load_split(manifest, 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    name = _system_name(bank, "system")
    main = evaluate_bank(bank, test)
    tables: Dict[str, PerformanceTable] = {name: main.table}
    tests: Dict[str, TTestResult] = {}
    sections = {"confusion": confusion_csv(main.confusion)}

    others: Dict[str, Evaluation] = {}
    if args.compare_bank:
        other = load_bank(args.compare_bank)
        other_name = _system_name(other, "comparison")
        if other_name == name:
            other_name += " (comparison)"
        others[other_name] = evaluate_bank(other, test)
    if args.baseline == "vq":
        train, train_failures = _load_split(manifest, 0)
        failures.update(train_failures)
        codebooks = _train_vq(train, bank.labels, args.codebook_size, args.seed)
        _save_codebooks(codebooks, out / "vq")
        predicted = [vq.vq_classify(codebooks, u.features) for u in test]
        others["VQ"] = evaluate_predictions([u.condition for u in test], predicted, bank.labels)
    for other_name, ev in others.items():
        tables[other_name] = ev.table
        tests[f"{name} vs {other_name}"] = compare(main.table, ev.table, standard_error=not args.raw_sd)

    write_text(out / "confusion.csv", sections["confusion"])
    write_text(out / "performance.csv", performance_csv(tables))
    sections["performance"] = performance_csv(tables)
    if tests:
        sections["t-tests"] = ttest_csv(tests)
        write_text(out / "ttest.csv", sections["t-tests"])
    if args.alpha_sweep:
        sections["alpha sweep"] = sweep_csv(alpha_sweep(bank, test, DEFAULT_ALPHAS))
        write_text(out / "alpha_sweep.csv", sections["alpha sweep"])
    write_text(out / "report.txt", text_report(sections, standard_error=not args.raw_sd))
    print(f"{name}: average identification {main.table.average:.1f}% on {len(test)} test utterances")
    return _report_failures(failures)


# -- argument parsing ----------------------------------------------------

def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return value


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--order", type=int, choices=(1, 2), default=2)
    p.add_argument("--shape", choices=("linear", "circular"), default="circular")
    p.add_argument("--states", type=int, default=6, metavar="N")
    p.add_argument("--supra-states", type=int, default=2, metavar="S")
    p.add_argument("--mixtures", type=int, default=10, metavar="M")
    p.add_argument("--supra-mixtures", type=int, default=2)
    p.add_argument("--alpha", type=_unit_interval, default=0.5, metavar="A")
    p.add_argument("--no-supra", action="store_true", help="acoustic models only (alpha forced to 0)")
    p.add_argument("--normalize", action="store_true",
                   help="divide each stream's log-likelihood by its observation count before fusing")
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--tol", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="suprahmm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic feature corpus with a split plan")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--conditions", type=int, default=6)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--prosodic-separation", type=float, default=None)
    p.add_argument("--dynamics", type=float, default=0.0)
    p.add_argument("--states", type=int, default=6)
    p.add_argument("--supra-states", type=int, default=2)
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--texts", type=int, default=20)
    p.add_argument("--reps", type=int, default=2)
    p.add_argument("--train-speakers", type=int, default=5)
    p.add_argument("--train-texts", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="compute feature and contour files for audio records")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train one model per condition on the training split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--seed", type=int, default=0)
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score the test split and write reports")
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=_unit_interval, default=None, metavar="A",
                   help="override the bank's fusion weight")
    p.add_argument("--alpha-sweep", action="store_true")
    p.add_argument("--baseline", choices=("vq",), default=None)
    p.add_argument("--codebook-size", type=int, default=16)
    p.add_argument("--compare-bank", default=None)
    p.add_argument("--raw-sd", action="store_true",
                   help="pool sample standard deviations instead of standard errors")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SuprahmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
