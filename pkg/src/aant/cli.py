"""Command-line entry point wiring all modules together.

Exit codes: 0 success, 1 validation error (bad flags, config, or inputs),
2 runtime failure. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alerts import (
    EnvironmentLog,
    MockLanguageModelClient,
    PredictionSummary,
    ReportQuarantinedError,
    SceneSummary,
    ScoreBands,
    archive_accident,
    append_alert_log,
    generate_alert,
)
from .config import ConfigError, RunConfig, load_config
from .data import (
    generate_synthetic_dataset,
    generate_synthetic_raw_video,
    load_feature_file,
    load_manifest,
    load_manifest_with_paths,
    save_feature_file,
    split_dataset,
    write_manifest,
)
from .encoders import MockFrameEncoder
from .metrics import evaluate
from .model import AnticipationModel, full_forward
from .perturb import Perturbation, robustness_sweep
from .reports import (
    ReportSchemaError,
    builtin_corpus,
    corpus_class_texts,
    corpus_stats,
    parse_report,
    validate_report,
)
from .selfcheck import run_selfcheck
from .text import MockTextEncoder, PrecomputedTextEncoder, l2_normalize
from .train import TrainConfig, load_checkpoint, save_checkpoint, train, write_history_csv


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _status(message: str) -> None:
    print(message, file=sys.stderr)


def _load_records(data_path: str):
    path = Path(data_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    return path, load_manifest_with_paths(path)


def _class_texts(reports_dir: str | None):
    if reports_dir is None:
        reports = builtin_corpus()
    else:
        reports = [parse_report(p.read_text()) for p in sorted(Path(reports_dir).glob("*.json"))]
        if not reports:
            raise ValueError(f"no report JSON files found in {reports_dir}")
    pos, neg = corpus_class_texts(reports)
    if not pos or not neg:
        raise ValueError("report corpus must contain both accident and non-accident reports")
    return pos, neg


def _text_embeddings(config: RunConfig, pos_texts, neg_texts):
    if config.model.text_encoder == "mock":
        encoder = MockTextEncoder(dimension=config.model.text_dim, seed=config.model.text_encoder_seed)
    elif config.model.text_encoder == "external":
        if config.model.embeddings_file is None:
            raise ConfigError("model.embeddings_file is required when text_encoder is 'external'")
        encoder = PrecomputedTextEncoder.from_feature_file(
            config.model.embeddings_file, pos_texts + neg_texts
        )
    else:
        raise ConfigError(f"unknown text_encoder {config.model.text_encoder!r}")
    pos = np.stack([l2_normalize(encoder.encode(t)) for t in pos_texts])
    neg = np.stack([l2_normalize(encoder.encode(t)) for t in neg_texts])
    return pos, neg


def cmd_gen_data(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.data.seed = args.seed
    d = config.data
    records = generate_synthetic_dataset(
        n_pos=d.n_pos,
        n_neg=d.n_neg,
        n_frames=d.n_frames,
        dim=d.dim,
        fps=d.fps,
        toa=d.toa,
        separability=d.separability,
        seed=d.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for record in records:
        name = f"{record.id}.aant"
        save_feature_file(record, out / name)
        names.append(name)
    write_manifest(names, out / "manifest.json")
    _status(f"wrote {len(records)} feature files and manifest.json to {out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    manifest_path, entries = _load_records(args.data)
    records = [record for _, record in entries]
    paths_by_id = {record.id: str(path.resolve()) for path, record in entries}
    split = split_dataset(records, config.data.test_fraction, config.data.seed)

    pos_texts, neg_texts = _class_texts(args.reports)
    pos_emb, neg_emb = _text_embeddings(config, pos_texts, neg_texts)

    model = AnticipationModel(
        feature_dim=records[0].dim,
        text_dim=config.model.text_dim,
        heads=config.model.heads,
        temperature=config.model.temperature,
        seed=config.model.seed,
    )
    model.set_class_texts(pos_emb, neg_emb)

    t = config.train
    result = train(
        model,
        split.train,
        TrainConfig(
            epochs=args.epochs if args.epochs is not None else t.epochs,
            batch_size=t.batch_size,
            lr=t.lr,
            threshold_lr=t.threshold_lr,
            weight_decay=t.weight_decay,
            scheduler_factor=t.scheduler_factor,
            scheduler_patience=t.scheduler_patience,
            mil_top_k=t.mil_top_k,
            seed=t.seed,
            single_thread=t.single_thread,
        ),
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint")
    write_history_csv(result.history, out / "history.csv")
    write_manifest([paths_by_id[r.id] for r in split.train], out / "train_manifest.json")
    write_manifest([paths_by_id[r.id] for r in split.test], out / "test_manifest.json")
    final = result.history[-1]
    _status(
        f"trained {final.epoch} epochs on {len(split.train)} videos "
        f"(loss {final.total:.4f}, tau {final.tau:.4f}); artifacts in {out}"
    )
    return 0


def _write_pr_csv(metrics_obj, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f1"])
        for point in metrics_obj.curve.points:
            writer.writerow([repr(point.threshold), repr(point.precision), repr(point.recall), repr(point.f1())])


def cmd_eval(args) -> int:
    config = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    records = load_manifest(_resolve_manifest(args.data))
    result = evaluate(model, records, tau_override=config.eval.tau_override)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = result.to_dict()
    (out / "metrics.json").write_text(json.dumps(payload, indent=1) + "\n")
    _write_pr_csv(result, out / "pr_curve.csv")
    print(json.dumps(payload, indent=1))
    _status(f"wrote metrics.json and pr_curve.csv to {out}")
    return 0


def _resolve_manifest(data_path: str) -> Path:
    path = Path(data_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    return path


def cmd_sweep_threshold(args) -> int:
    config = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    records = load_manifest(_resolve_manifest(args.data))
    learned = evaluate(model, records)
    fixed = evaluate(model, records, tau_override=0.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_pr_csv(learned, out / "threshold_sweep.csv")
    best_point = max(learned.curve.points, key=lambda p: p.f1())
    summary = {
        "learned_tau": float(model.threshold.detach()),
        "f1_at_learned_rule": learned.operating_point["f1"],
        "f1_at_fixed_rule": fixed.operating_point["f1"],
        "best_f1_threshold": learned.best_f1_threshold,
        "best_f1": best_point.f1(),
    }
    (out / "threshold_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary, indent=1))
    _status(f"wrote threshold_sweep.csv and threshold_summary.json to {out}")
    return 0


def cmd_perturb(args) -> int:
    config = load_config(args.config)
    if config.model.frame_encoder != "mock":
        raise ConfigError("perturb needs raw pixels; set model.frame_encoder to 'mock'")
    model = load_checkpoint(args.checkpoint)
    r = config.robustness
    kinds = [args.kind] if args.kind != "all" else list(r.kinds)
    perturbations = []
    for kind in kinds:
        if kind == "drop_frames":
            params = {"block": r.block, "period": r.period, "offset": r.offset, "mode": r.mode}
        elif kind == "gaussian_noise":
            params = {"std": r.noise_std}
        else:
            params = {}
        perturbations.append(Perturbation(kind=kind, params=params, seed=args.seed))

    d = config.data
    raw = generate_synthetic_raw_video(
        n_frames=d.n_frames,
        height=32,
        width=32,
        fps=d.fps,
        toa=d.toa,
        label=1,
        seed=args.seed,
    )
    encoder = MockFrameEncoder(dimension=model.feature_dim, seed=config.model.frame_encoder_seed)
    traces = robustness_sweep(model, raw, encoder, perturbations, toa=d.toa, label=1)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["perturbation", "frame", "probability"])
        for name, trace in traces.items():
            for frame, prob in enumerate(trace):
                writer.writerow([name, frame, repr(float(prob))])
    _status(f"wrote {len(traces)} traces to {out}")
    return 0


def cmd_alert(args) -> int:
    config = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    records = load_manifest(_resolve_manifest(args.data))
    a = config.alerts
    scene = SceneSummary(
        agent_counts=dict(a.agents),
        min_distance_class=a.distance_class,
    )
    bands = ScoreBands(
        advisory=a.advisory_band,
        warning=a.warning_band,
        critical=a.critical_band,
        escalation_min_score=a.escalation_min_score,
    )
    client = MockLanguageModelClient(seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    for record in records:
        output = full_forward(model, record)
        window = record.window_end()
        prediction = PredictionSummary(
            video_score=output.video_score,
            peak_frame=int(np.argmax(output.probs[:window])),
            similarity_margin=float(np.mean(output.scores[:, 1] - output.scores[:, 0])),
        )
        alert = generate_alert(
            client,
            frame_ref=f"{record.id}#f{prediction.peak_frame}",
            prediction=prediction,
            scene=scene,
            bands=bands,
            friendly_reminders=a.friendly_reminders,
        )
        append_alert_log(out, alert)
    _status(f"appended {len(records)} alert entries to {out}")
    return 0


def cmd_archive(args) -> int:
    config = load_config(args.config)
    model = load_checkpoint(args.checkpoint)
    record = load_feature_file(args.features)
    env_log = EnvironmentLog.from_dict(json.loads(Path(args.env_log).read_text()))
    output = full_forward(model, record)
    window = record.window_end()
    prediction = PredictionSummary(
        video_score=output.video_score,
        peak_frame=int(np.argmax(output.probs[:window])),
        similarity_margin=float(np.mean(output.scores[:, 1] - output.scores[:, 0])),
    )
    client = MockLanguageModelClient(seed=args.seed)
    report = archive_accident(
        env_log, prediction, client, archive_dir=args.out, report_id=f"incident_{record.id}"
    )
    _status(f"archived report {report.id} to {args.out}")
    return 0


def cmd_report_stats(args) -> int:
    reports = [parse_report(p.read_text()) for p in sorted(Path(args.reports).glob("*.json"))]
    stats = corpus_stats(reports)
    payload = json.dumps(stats, indent=1)
    if args.out:
        Path(args.out).write_text(payload + "\n")
        _status(f"wrote corpus stats for {len(reports)} reports to {args.out}")
    print(payload)
    return 0


def cmd_report_validate(args) -> int:
    paths = sorted(Path(args.reports).glob("*.json"))
    if not paths:
        raise ValueError(f"no report JSON files found in {args.reports}")
    n_errors = 0
    for path in paths:
        report = parse_report(path.read_text())
        for finding in validate_report(report):
            print(f"{report.id}: {finding.rule_id} {finding.severity}: {finding.message}")
            if finding.severity == "error":
                n_errors += 1
    _status(f"validated {len(paths)} reports, {n_errors} error findings")
    return 1 if n_errors else 0


def cmd_selfcheck(args) -> int:
    results = run_selfcheck()
    failed = 0
    for name, passed, detail in results:
        suffix = f" ({detail})" if detail and not passed else ""
        print(f"{'PASS' if passed else 'FAIL'}: {name}{suffix}")
        if not passed:
            failed += 1
    _status(f"{len(results) - failed}/{len(results)} selfchecks passed")
    return 0 if failed == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aant", description="Traffic accident anticipation toolkit")
    parser.add_argument("--version", action="version", version=f"aant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic feature dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="manifest JSON or dataset directory")
    p.add_argument("--reports", default=None, help="directory of report JSON files (default: built-in corpus)")
    p.add_argument("--epochs", type=int, default=None, help="override configured epoch count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, emit metrics JSON and PR CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-threshold", help="P/R/F1 vs threshold sweep with learned-rule comparison")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_threshold)

    p = sub.add_parser("perturb", help="robustness traces on a synthetic raw clip")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", default="all", choices=["all", "drop_frames", "half_resolution", "gaussian_noise", "occlude_right"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("alert", help="generate alerts for a dataset through the mock client")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="alert log (JSON lines)")
    p.set_defaults(func=cmd_alert)

    p = sub.add_parser("archive", help="archive a crossed prediction as a structured report")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True, help="feature file of the video")
    p.add_argument("--env-log", required=True, help="environment log JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="archive directory")
    p.set_defaults(func=cmd_archive)

    p = sub.add_parser("report-stats", help="factor/value counts over a report directory")
    p.add_argument("--reports", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report_stats)

    p = sub.add_parser("report-validate", help="run consistency rules over a report directory")
    p.add_argument("--reports", required=True)
    p.set_defaults(func=cmd_report_validate)

    p = sub.add_parser("selfcheck", help="run the built-in oracle battery")
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ReportQuarantinedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ReportSchemaError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
