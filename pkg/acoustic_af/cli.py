"""
Command-line entry point: one subcommand per pipeline stage.

    python -m acoustic_af synth corpus.yaml --out corpus/
    python -m acoustic_af extract corpus/0000_s1_AF.wav --out record.json
    python -m acoustic_af assess record.json
    python -m acoustic_af purify record.json --out segment.json
    python -m acoustic_af train corpus/manifest.jsonl --out model.aafd
    python -m acoustic_af detect corpus/0000_s1_AF.wav --model model.aafd
    python -m acoustic_af eval corpus/manifest.jsonl --kfold 6 --out results.json

Exit codes: 0 success, 2 quality gate failed / abstained, 1 any other error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

from acoustic_af.config import PipelineConfig, load_config
from acoustic_af.dataset import build_dataset
from acoustic_af.detector import build_model, load_model, predict, save_model, train
from acoustic_af.errors import AcousticAFError, ConfigurationError, QualityGateError, ScenarioParseError
from acoustic_af.evaluation import (
    format_table,
    kfold,
    leave_one_subject_out,
    validation_split,
    write_predictions_csv,
)
from acoustic_af.extraction import extract_all
from acoustic_af.io import (
    RECORD_FORMAT,
    SEGMENT_FORMAT,
    dumps,
    provenance,
    read_json,
    read_manifest,
    read_recording,
    record_from_dict,
    record_to_dict,
    segment_from_dict,
    segment_to_dict,
    write_json,
)
from acoustic_af.probe_sim import load_corpus_spec, synthesize_corpus
from acoustic_af.purification import purify
from acoustic_af.quality import assess
from acoustic_af.records import MultiChannelRecord, Rhythm

logger = logging.getLogger("acoustic_af")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_QUALITY = 2
LOG_LEVEL_ENV = "ACOUSTIC_AF_LOG_LEVEL"


def configure_logging(verbosity: int) -> None:
    level = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    if verbosity == 1:
        level = "INFO"
    elif verbosity > 1:
        level = "DEBUG"
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(getattr(logging, level, logging.WARNING))


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides = {"seed": args.seed, "training": {"seed": args.seed}}
    return load_config(args.config, overrides)


def emit(payload: Dict[str, Any], out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(dumps(payload))
    else:
        write_json(out, payload)


def _load_input(path: Path, config: PipelineConfig) -> Tuple[Any, Optional[Rhythm]]:
    """A .wav recording (extracted on the fly), a record JSON or a segment JSON"""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        audio, sidecar = read_recording(path)
        record = extract_all(audio, config.probe, config.extraction)
        label = Rhythm(sidecar["label"]) if sidecar and sidecar.get("label") else None
        record.label = label
        return record, label
    payload = read_json(path)
    kind = payload.get("format") if isinstance(payload, dict) else None
    if kind == RECORD_FORMAT:
        record = record_from_dict(payload)
        return record, record.label
    if kind == SEGMENT_FORMAT:
        segment = segment_from_dict(payload)
        return segment, segment.label
    raise ConfigurationError("input is a .wav recording, a record or a segment file", str(path))


def _require_record(item: Any, path: Path) -> MultiChannelRecord:
    if not isinstance(item, MultiChannelRecord):
        raise ConfigurationError("a recording or multi-channel record", f"{path} holds a purified segment")
    return item


def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    spec = load_corpus_spec(args.scenario)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    if "probe" in config.model_fields_set:
        if "probe" in spec.model_fields_set and spec.probe != config.probe:
            raise ConfigurationError("one probe definition", f"{args.scenario} and --config both set probe")
        spec = spec.model_copy(update={"probe": config.probe})
    resolved = config.model_copy(update={"probe": spec.probe})
    paths = synthesize_corpus(spec, args.out, provenance(resolved, [args.scenario], stage="synth"))
    print(f"wrote {len(paths)} recordings to {args.out}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace, config: PipelineConfig) -> int:
    audio, sidecar = read_recording(args.input)
    record = extract_all(audio, config.probe, config.extraction)
    if sidecar and sidecar.get("label"):
        record.label = Rhythm(sidecar["label"])
    record.provenance = provenance(config, [args.input], stage="extract")
    emit(record_to_dict(record), args.out)
    return EXIT_OK


def cmd_assess(args: argparse.Namespace, config: PipelineConfig) -> int:
    record = _require_record(_load_input(args.input, config)[0], args.input)
    report = assess(record, config.quality)
    emit({**report.to_dict(), "provenance": provenance(config, [args.input], stage="assess")}, args.out)
    if args.out is not None:
        print(f"C={report.stability_score} eta_c={report.cardiac_ratio} pass={report.passed}")
        if not report.passed:
            print(report.guidance)
    return EXIT_OK if report.passed else EXIT_QUALITY


def cmd_purify(args: argparse.Namespace, config: PipelineConfig) -> int:
    record = _require_record(_load_input(args.input, config)[0], args.input)
    segment = purify(
        record, force=args.force, config=config.purification, quality=config.quality,
        static_elimination=not args.no_static_elimination, artifact_removal=not args.no_artifact_removal,
    )
    segment.provenance = {**segment.provenance, **provenance(config, [args.input], stage="purify")}
    emit(segment_to_dict(segment), args.out)
    return EXIT_OK


def _switches(args: argparse.Namespace) -> Dict[str, bool]:
    return {
        "static_elimination": not args.no_static_elimination,
        "artifact_removal": not args.no_artifact_removal,
    }


def cmd_train(args: argparse.Namespace, config: PipelineConfig) -> int:
    dataset = build_dataset(read_manifest(args.manifest), config, **_switches(args)).data
    fit, validation = validation_split(dataset.labels, config.training.validation_fraction, config.training.seed)
    # --model continues training from an existing model (fine-tuning)
    model = load_model(args.model) if args.model else build_model(config.detector, seed=config.seed)
    model, history = train(model, dataset.subset(fit), dataset.subset(validation), config.training)
    model.metadata["provenance"] = provenance(config, [args.manifest], stage="train")
    save_model(model, args.out)
    best = model.metadata["best_epoch"]
    print(f"trained {len(history)} epochs, best epoch {best} (val F1 {history[best - 1]['val_f1']:.4f})")
    return EXIT_OK


def cmd_detect(args: argparse.Namespace, config: PipelineConfig) -> int:
    model = load_model(args.model)
    item, _ = _load_input(args.input, config)
    prediction = predict(model, item, force=args.force, pipeline=config)
    payload = {**prediction.to_dict(), "provenance": provenance(config, [args.input, args.model], stage="detect")}
    emit(payload, args.out)
    return EXIT_QUALITY if prediction.abstained else EXIT_OK


def cmd_eval(args: argparse.Namespace, config: PipelineConfig) -> int:
    entries = read_manifest(args.manifest)
    built = build_dataset(entries, config, **_switches(args))
    common = dict(seed=config.seed, train_config=config.training, detector_config=config.detector)
    if args.loso:
        result = leave_one_subject_out(built.data, expected_subjects=built.subjects, **common)
    else:
        mode = "subject" if args.subject_folds else "record"
        result = kfold(built.data, k=args.kfold, mode=mode, **common)
    payload = {
        **result.to_dict(),
        "rejected": built.rejected,
        "provenance": provenance(config, [args.manifest], stage="eval", ablation=_switches(args)),
    }
    emit(payload, args.out)
    if args.csv:
        write_predictions_csv(args.csv, result.predictions)
    # stdout carries the JSON when no --out is given
    (sys.stdout if args.out is not None else sys.stderr).write(format_table(result))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="pipeline YAML config")
    parser.add_argument("--seed", type=int, help="root seed (overrides the config file)")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def _add_ablation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--no-static-elimination", action="store_true", help="skip arc-center correction")
    parser.add_argument("--no-artifact-removal", action="store_true", help="skip the wavelet band filter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m acoustic_af", description="Acoustic AF screening pipeline")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="synthesize a labeled corpus from a scenario file")
    synth.add_argument("scenario", type=Path)
    synth.add_argument("--out", type=Path, required=True)
    synth.set_defaults(handler=cmd_synth)

    extract = commands.add_parser("extract", help="recording -> multi-channel record")
    extract.add_argument("input", type=Path)
    extract.add_argument("--out", type=Path)
    extract.set_defaults(handler=cmd_extract)

    assess_cmd = commands.add_parser("assess", help="quality report of a record")
    assess_cmd.add_argument("input", type=Path)
    assess_cmd.add_argument("--out", type=Path)
    assess_cmd.set_defaults(handler=cmd_assess)

    purify_cmd = commands.add_parser("purify", help="record -> purified pulse segment")
    purify_cmd.add_argument("input", type=Path)
    purify_cmd.add_argument("--out", type=Path)
    purify_cmd.add_argument("--force", action="store_true", help="bypass the quality gate")
    _add_ablation(purify_cmd)
    purify_cmd.set_defaults(handler=cmd_purify)

    train_cmd = commands.add_parser("train", help="train the detector on a manifest")
    train_cmd.add_argument("manifest", type=Path)
    train_cmd.add_argument("--out", type=Path, required=True)
    train_cmd.add_argument("--model", type=Path, help="start from this model instead of a fresh one")
    _add_ablation(train_cmd)
    train_cmd.set_defaults(handler=cmd_train)

    detect = commands.add_parser("detect", help="AF / non-AF verdict")
    detect.add_argument("input", type=Path)
    detect.add_argument("--model", type=Path, required=True)
    detect.add_argument("--out", type=Path)
    detect.add_argument("--force", action="store_true", help="bypass the quality gate")
    detect.set_defaults(handler=cmd_detect)

    evaluate = commands.add_parser("eval", help="cross-validate on a manifest")
    evaluate.add_argument("manifest", type=Path)
    evaluate.add_argument("--kfold", type=int, default=6)
    evaluate.add_argument("--subject-folds", action="store_true", help="keep subjects within one fold")
    evaluate.add_argument("--loso", action="store_true", help="leave one subject out")
    evaluate.add_argument("--out", type=Path)
    evaluate.add_argument("--csv", type=Path, help="per-record predictions")
    _add_ablation(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    for sub in commands.choices.values():
        _add_common(sub)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        config = resolve_config(args)
        return args.handler(args, config)
    except QualityGateError as e:
        sys.stderr.write(f"quality gate: {e}\n")
        return EXIT_QUALITY
    except ScenarioParseError as e:
        sys.stderr.write(f"parse error: {e}\n")
        return EXIT_ERROR
    except (AcousticAFError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_ERROR
