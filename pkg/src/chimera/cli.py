"""Operator entry point: gen | parse | train | eval | diagnose."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import CorpusSpec, generate_corpus
from .evaluation import (
    bias_study,
    build_cases,
    detection_metrics,
    predict_probs,
    quadrant_study,
    ranking_metrics,
)
from .model import load_checkpoint
from .parsing import (
    UNKNOWN_TEMPLATE,
    LogTemplate,
    ParseTree,
    RawLogRecord,
    load_records,
    parse_records,
    read_sequences_jsonl,
    read_template_catalog,
    window_sequences,
    write_sequences_jsonl,
    write_template_catalog,
)
from .report import render_text_report, write_report
from .training import TrainConfig, split_dataset, train

EXIT_OK = 0
EXIT_CONFIG = 64    # config validation failure
EXIT_NOINPUT = 66   # missing input file


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _require_files(*paths) -> list[Path]:
    out = []
    for p in paths:
        if p is None:
            out.append(None)
            continue
        p = Path(p)
        if not p.is_file():
            print(f"error: input file not found: {p}", file=sys.stderr)
            raise SystemExit(EXIT_NOINPUT)
        out.append(p)
    return out


def write_run_manifest(out_dir: Path, command: str, seed: int | None,
                       config: dict | None, inputs: dict[str, Path],
                       artifacts: list[str]) -> Path:
    """Snapshot everything needed to reproduce the run, before the work starts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "input_hashes": {name: _sha256(p) for name, p in inputs.items() if p is not None},
        "input_paths": {name: str(p) for name, p in inputs.items() if p is not None},
        "artifacts": artifacts,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


# ---------------------------------------------------------------------------
# config plumbing

def _coerce(raw: str, typ) -> object:
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return typ(raw)


def build_train_config(config_file: str | None, overrides: list[str]) -> TrainConfig:
    """Flat key=value config file, then command-line overrides; flags win."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    types = {"int": int, "float": float, "bool": bool}
    values: dict[str, object] = {}

    def assign(key: str, raw: str, origin: str) -> None:
        if key not in fields:
            raise ValueError(f"unknown config field '{key}' ({origin})")
        typ = types.get(fields[key], float)
        try:
            values[key] = _coerce(raw, typ)
        except (TypeError, ValueError):
            raise ValueError(f"config field '{key}': cannot parse {raw!r} ({origin})")

    if config_file is not None:
        for i, line in enumerate(Path(config_file).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config field line {i}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            assign(key, raw, f"{config_file}:{i}")
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"config field override '{item}': expected key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        assign(key, raw, "--set")

    config = TrainConfig(**values)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    spec = CorpusSpec(num_templates=args.templates, num_lines=args.lines,
                      seed=args.seed, injection_rate=args.rate,
                      window=args.window, hard_mode=args.hard)
    try:
        spec.validate()
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    write_run_manifest(out, "gen", args.seed, dataclasses.asdict(spec), {},
                       ["corpus.log", "labels.txt", "manifest.json"])
    art = generate_corpus(spec, out)
    print(f"wrote {art.log_path} ({spec.num_lines} lines, "
          f"{len(art.manifest.labeled_lines)} labeled, "
          f"{art.manifest.num_anomalous_windows} anomalous windows)")
    return EXIT_OK


def cmd_parse(args) -> int:
    log_path, label_path = _require_files(args.log, args.labels)
    records = load_records(log_path, label_path, marker_mode=args.marker_mode,
                           timestamp_tokens=args.timestamp_tokens)
    tree = ParseTree(depth=args.depth, similarity_threshold=args.similarity,
                     max_children=args.max_children)
    ids = parse_records(tree, records)
    sequences = window_sequences(records, ids, n=args.window, stride=args.stride)

    out = Path(args.out)
    write_run_manifest(out, "parse", None, {"window": args.window, "stride": args.stride,
                                            "depth": args.depth,
                                            "similarity": args.similarity},
                       {"log": log_path, "labels": label_path},
                       ["sequences.jsonl", "templates.jsonl"])
    write_sequences_jsonl(sequences, out / "sequences.jsonl")
    write_template_catalog(tree.templates, out / "templates.jsonl")
    anomalous = sum(s.seq_label for s in sequences)
    print(f"parsed {len(records)} lines into {len(tree.templates)} templates; "
          f"{len(sequences)} windows ({anomalous} anomalous) -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    seq_path, tpl_path, cfg_path, vec_path = _require_files(
        args.sequences, args.templates, args.config, args.pretrained_vectors)
    try:
        config = build_train_config(cfg_path, args.set or [])
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    sequences = read_sequences_jsonl(seq_path)
    extra = {}
    if tpl_path is not None:
        extra["templates"] = [
            {"template_id": t.template_id, "template_string": t.template_string,
             "match_count": t.match_count}
            for t in read_template_catalog(tpl_path)
        ]
    out = Path(args.out)
    write_run_manifest(out, "train", config.seed, dataclasses.asdict(config),
                       {"sequences": seq_path, "templates": tpl_path,
                        "pretrained_vectors": vec_path},
                       ["best.ckpt", "training_log.jsonl"])
    result = train(sequences, config, out_dir=out, checkpoint_extra=extra,
                   pretrained_vectors=vec_path)
    print(f"trained {len(result.history)} epochs "
          f"(best epoch {result.best_epoch}, val F1 {result.best_val_f1:.4f}, "
          f"threshold {result.threshold:.4f}) -> {result.checkpoint_path}")
    return EXIT_OK


def _evaluate_params(params, threshold, config, sequences):
    _, test_split, _ = split_dataset(sequences, config.split_ratios(), config.seed)
    probs, _ = predict_probs(params, test_split)
    labels = np.array([s.seq_label for s in test_split], dtype=bool)
    precision, recall, f1 = detection_metrics(probs >= threshold, labels)
    cases = build_cases(params, test_split, threshold)
    ranking = ranking_metrics([c for c in cases if c.label])
    return {
        "detection": {"precision": precision, "recall": recall, "f1": f1,
                      "threshold": threshold, "num_windows": len(test_split)},
        "ranking": ranking.values,
        "num_ranking_cases": ranking.num_cases,
        "num_excluded_cases": ranking.num_excluded,
    }, cases


def cmd_eval(args) -> int:
    ckpt_path, seq_path = _require_files(args.checkpoint, args.sequences)
    params, extra = load_checkpoint(ckpt_path)
    config = TrainConfig(**extra["config"])
    threshold = float(extra.get("threshold", 0.5))
    sequences = read_sequences_jsonl(seq_path)

    report, cases = _evaluate_params(params, threshold, config, sequences)
    if args.bias_study:
        bias = bias_study(cases)
        report["bias"] = {
            "theoretical": bias.theoretical, "actual": bias.actual, "bias": bias.bias,
            "num_theoretical": bias.num_theoretical, "num_actual": bias.num_actual,
            "degenerate_actual": bias.degenerate_actual,
        }
    if args.quadrant_study:
        counts = quadrant_study(cases, k=args.k)
        report["quadrants"] = {"DLF": counts.dlf, "DF": counts.df, "LF": counts.lf,
                               "MF": counts.mf, "k": args.k,
                               "total": counts.total}

    # training curves for the evaluated run, when its log sits next to the checkpoint
    history = None
    train_log = ckpt_path.parent / "training_log.jsonl"
    if train_log.is_file():
        history = [json.loads(line) for line in train_log.read_text().splitlines()
                   if line.strip()]

    if args.ablation:
        names = ["ilrl", "cda"] if args.ablation == "both" else [args.ablation]
        flags = {"disable_ilrl": "ilrl" in names, "disable_cda": "cda" in names}
        ablated_config = dataclasses.replace(config, **flags)
        abl_dir = Path(args.out) / f"ablation_{args.ablation}" if args.out else None
        abl_result = train(sequences, ablated_config, out_dir=abl_dir)
        abl_report, _ = _evaluate_params(abl_result.params, abl_result.threshold,
                                         ablated_config, sequences)
        report["ablations"] = {args.ablation: abl_report}

    text = render_text_report(report)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        write_run_manifest(out, "eval", config.seed, dataclasses.asdict(config),
                           {"checkpoint": ckpt_path, "sequences": seq_path},
                           ["report.json", "report.txt"])
        paths = write_report(out, report, history=history)
        print(f"report written to {paths['json'].parent}")
    return EXIT_OK


def _rebuild_tree(extra: dict, templates_path: Path | None) -> ParseTree:
    if templates_path is not None:
        catalog = read_template_catalog(templates_path)
    elif extra.get("templates"):
        catalog = [LogTemplate(template_id=t["template_id"],
                               tokens=t["template_string"].split(),
                               match_count=t.get("match_count", 1))
                   for t in extra["templates"]]
    else:
        print("error: checkpoint has no template catalog; pass --templates",
              file=sys.stderr)
        raise SystemExit(EXIT_NOINPUT)
    tree = ParseTree()
    for tpl in sorted(catalog, key=lambda t: t.template_id):
        tid = tree.parse_line(tpl.template_string)
        if tid != tpl.template_id:
            raise ValueError(f"template catalog is not dense: {tpl.template_id} -> {tid}")
        tree.templates[tid].match_count = tpl.match_count
    tree.freeze()
    return tree


def cmd_diagnose(args) -> int:
    ckpt_path, log_path, tpl_path = _require_files(args.checkpoint, args.log,
                                                   args.templates)
    params, extra = load_checkpoint(ckpt_path)
    config = TrainConfig(**extra["config"])
    threshold = float(extra.get("threshold", 0.5))
    tree = _rebuild_tree(extra, tpl_path)

    records = load_records(log_path, timestamp_tokens=args.timestamp_tokens)
    ids = [tree.parse_line(r.content) for r in records]
    n = config.window

    remainder = len(records) % n
    if remainder and args.pad_short:
        pad_no = records[-1].line_no
        for i in range(n - remainder):
            records.append(RawLogRecord(line_no=pad_no + i + 1, timestamp="",
                                        content="<pad>", anomaly_label=False))
            ids.append(UNKNOWN_TEMPLATE)
        print(f"note: padded trailing window with {n - remainder} unknown events")
    elif remainder:
        print(f"note: dropped trailing {remainder} lines shorter than the window "
              f"(use --pad-short to pad instead)")
    if len(records) < n:
        print(f"error: log has fewer than one window of {n} lines", file=sys.stderr)
        return EXIT_NOINPUT

    windows = window_sequences(records, ids, n=n)
    probs, scores = predict_probs(params, windows)
    lines_out = []
    for i, win in enumerate(windows):
        verdict = "ANOMALOUS" if probs[i] >= threshold else "normal"
        first, last = win.positions[0], win.positions[-1]
        entry = {"window": i, "lines": [first, last], "probability": float(probs[i]),
                 "verdict": verdict, "top_lines": []}
        print(f"window {i:4d} lines {first}-{last}: {verdict} (p={probs[i]:.4f})")
        if probs[i] >= threshold:
            order = np.argsort(-scores[i], kind="stable")[:args.top_k]
            for rank, j in enumerate(order, start=1):
                line_no = win.positions[j]
                content = records[line_no - records[0].line_no].content \
                    if 0 <= line_no - records[0].line_no < len(records) else "?"
                entry["top_lines"].append({"rank": rank, "line": int(line_no),
                                           "score": float(scores[i][j]),
                                           "content": content})
                print(f"    #{rank} line {line_no} (score {scores[i][j]:.4f}): {content}")
        lines_out.append(entry)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "diagnosis.jsonl", "w") as fh:
            for entry in lines_out:
                fh.write(json.dumps(entry) + "\n")
        print(f"diagnosis written to {out / 'diagnosis.jsonl'}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chimera",
                                     description="End-to-end log-based fault diagnosis")
    parser.add_argument("--version", action="version", version=f"chimera {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--lines", type=int, default=40000)
    p.add_argument("--templates", type=int, default=50)
    p.add_argument("--rate", type=float, default=0.05,
                   help="target fraction of lines that are root-cause lines")
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--hard", action="store_true",
                   help="leak trigger templates into the benign stream")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("parse", help="parse a log file into windows of event ids")
    p.add_argument("--log", required=True)
    p.add_argument("--labels", default=None,
                   help="file of anomalous line numbers, one per line")
    p.add_argument("--marker-mode", action="store_true",
                   help="lines start with +/- anomaly markers instead")
    p.add_argument("--timestamp-tokens", type=int, default=1)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--similarity", type=float, default=0.5)
    p.add_argument("--max-children", type=int, default=100)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("train", help="train the joint diagnosis model")
    p.add_argument("--sequences", required=True, help="sequences.jsonl from parse")
    p.add_argument("--templates", default=None,
                   help="templates.jsonl to embed into checkpoints for diagnose")
    p.add_argument("--pretrained-vectors", default=None,
                   help="JSONL {template_id, vector} to use as a frozen embedding table")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override; wins over the file")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequences", required=True)
    p.add_argument("--bias-study", action="store_true")
    p.add_argument("--quadrant-study", action="store_true")
    p.add_argument("--k", type=int, default=5,
                   help="top-k cutoff for quadrant localization")
    p.add_argument("--ablation", choices=["ilrl", "cda", "both"], default=None,
                   help="additionally train+evaluate an ablated variant")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="diagnose a raw log file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--templates", default=None,
                   help="template catalog if not embedded in the checkpoint")
    p.add_argument("--timestamp-tokens", type=int, default=1)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--pad-short", action="store_true",
                   help="pad a trailing short window with unknown events")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
