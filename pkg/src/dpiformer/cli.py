"""``dpiformer`` command line: extract, build, train, eval, infer.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 runtime or
numeric error. Machine-readable JSON goes to stdout (or ``--out``/``--report``);
human-readable progress and errors go to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import dataset as D
from . import evaluator as E
from . import ingest
from . import trainer as T
from ._io import atomic_write_text
from .checkpoint import load_model
from .errors import ClassCountMismatch, DataFormatError, DPIError, NumericError
from .model import ModelConfig
from .tokenizer import TokenizedDataset, hex_to_bytes

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
SPLITS = ("train", "test", "validation")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_extract(args) -> int:
    all_records = []
    summary = ingest.ExtractionSummary()
    for path in args.pcap:
        try:
            records, s = ingest.extract_payload_records(path)
        except DataFormatError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
        all_records.extend(records)
        summary.merge(s)
    ingest.write_records_csv(all_records, args.out)
    out = summary.to_dict()
    out["source_files"] = [str(p) for p in args.pcap]
    if args.summary:
        _emit(out, args.summary)
    _emit(out)
    return EXIT_OK


def cmd_build(args) -> int:
    if args.mode == "multiclass" and not args.classes:
        raise UsageError("--classes is required with --mode multiclass")
    if args.slack < 0:
        raise UsageError("--slack must be non-negative")
    records = ingest.read_records_csv(args.records)
    windows = D.read_ground_truth(args.ground_truth)
    conflicts = D.dedup_label_conflicts(records, D.label_records(records, windows, args.slack))
    unique = D.dedup_payloads(records)
    labeled = D.label_records(unique, windows, args.slack)
    sources = [str(args.records), str(args.ground_truth)]
    if args.mode == "binary":
        data = D.balance_binary(labeled, args.seed)
        manifest = D.binary_manifest(data, args.seed, sources, True, args.slack)
    else:
        classes = [c.strip() for c in args.classes.split(",") if c.strip()]
        data, manifest = D.build_multiclass(labeled, classes, args.seed, sources, True, args.slack)
    train, test, val = D.split(data, args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".build-", dir=out_dir))
    try:
        for name, part in zip(SPLITS, (train, test, val)):
            D.write_dataset(part, D.manifest_for_split(part, manifest), staging / f"{name}.csv")
        atomic_write_text(staging / "manifest.json", json.dumps(manifest.to_dict(), indent=2) + "\n")
        report = {
            "records_in": len(records),
            "after_dedup": len(unique),
            "malicious_after_dedup": sum(1 for r in labeled if r.label),
            "dedup_label_conflicts": conflicts,
            "split_sizes": {n: len(p) for n, p in zip(SPLITS, (train, test, val))},
            "class_names": manifest.class_names,
            "counts_per_class": manifest.counts_per_class,
        }
        atomic_write_text(staging / "build_report.json", json.dumps(report, indent=2) + "\n")
        for f in sorted(staging.iterdir()):
            os.replace(f, out_dir / f.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    if conflicts:
        _err(f"warning: {conflicts} payload(s) occur under more than one label; first occurrence kept")
    _emit(report)
    return EXIT_OK


def _load_config(cls, path):
    try:
        return cls.from_json(path)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: invalid config ({exc})") from exc


def _load_split(data_dir: Path, split: str, max_len: int, manifest: D.DatasetManifest):
    records = D.read_dataset_records(data_dir / f"{split}.csv")
    return TokenizedDataset.from_records(records, max_len, manifest.n_classes)


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    mc = _load_config(ModelConfig, args.model_config)
    tc = _load_config(T.TrainConfig, args.train_config)
    manifest = D.read_manifest(data_dir / "manifest.json")
    if manifest.n_classes != mc.num_labels:
        raise ClassCountMismatch(
            f"dataset manifest has {manifest.n_classes} classes, model config num_labels={mc.num_labels}")
    train_set = _load_split(data_dir, "train", mc.max_positions, manifest)
    val_set = _load_split(data_dir, "validation", mc.max_positions, manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    # checkpoints land in a staging dir and move into place only after the last epoch
    staging = Path(tempfile.mkdtemp(prefix=".train-", dir=out_dir))
    try:
        result, _ = T.train(mc, tc, train_set, val_set, staging, log=_err,
                            class_names=manifest.class_names)
        for f in sorted(staging.iterdir()):
            os.replace(f, out_dir / f.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    final = {k: str(out_dir / Path(v).name) for k, v in result.checkpoints.items()}
    _emit({
        "final_checkpoint": final["final"],
        "best_checkpoint": final["best"],
        "best_epoch": result.best_epoch + 1,
        "history": final["history"],
        "total_steps": result.total_steps,
    })
    return EXIT_OK


def _resolve_checkpoint(path) -> Path:
    path = Path(path)
    return path / "best.ckpt" if path.is_dir() else path


def cmd_eval(args) -> int:
    ckpt = _resolve_checkpoint(args.checkpoint)
    params, mc, man = load_model(ckpt)
    data_dir = Path(args.data)
    manifest = D.read_manifest(data_dir / "manifest.json")
    if manifest.n_classes != mc.num_labels:
        raise ClassCountMismatch(
            f"dataset has {manifest.n_classes} classes, checkpoint num_labels={mc.num_labels}")
    split_path = data_dir / f"{args.split}.csv"
    ds = _load_split(data_dir, args.split, mc.max_positions, manifest)
    metrics, cm, report = E.evaluate(
        params, mc, ds, args.batch_size, class_names=manifest.class_names,
        checkpoint_digest=_sha256(ckpt), dataset_digest=_sha256(split_path))
    report["split"] = args.split
    _err(f"{args.split} split, {cm.total} samples, {report['averaging']} averaging")
    _err(E.format_table(metrics))
    _emit(report, args.report)
    return EXIT_OK


def cmd_infer(args) -> int:
    if (args.hex is None) == (args.payload_file is None):
        raise UsageError("give exactly one of --hex or --payload-file")
    if args.hex is not None:
        payload = hex_to_bytes(args.hex.strip())
    else:
        try:
            payload = Path(args.payload_file).read_bytes()
        except OSError as exc:
            raise DataFormatError(f"cannot read {args.payload_file}: {exc.strerror or exc}") from exc
    params, mc, man = load_model(_resolve_checkpoint(args.checkpoint))
    label, probs = E.infer(params, mc, payload)
    names = man.get("class_names") or [str(i) for i in range(mc.num_labels)]
    _emit({"label": label, "class_name": names[label], "probabilities": [float(p) for p in probs]})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpiformer", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", help="extract TCP/UDP payload records from pcap files")
    s.add_argument("--pcap", nargs="+", required=True)
    s.add_argument("--out", required=True, help="records CSV")
    s.add_argument("--summary", help="write the extraction summary JSON here as well")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("build", help="label, balance and split a dataset")
    s.add_argument("--records", required=True)
    s.add_argument("--ground-truth", required=True)
    s.add_argument("--mode", choices=("binary", "multiclass"), required=True)
    s.add_argument("--classes", help="comma-separated attack names (multiclass)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--slack", type=float, default=1.0, help="time slack in seconds")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("train", help="train the encoder")
    s.add_argument("--data", required=True)
    s.add_argument("--model-config", required=True)
    s.add_argument("--train-config", required=True)
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    s.add_argument("--checkpoint", required=True, help="checkpoint file or training output directory")
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=SPLITS, default="test")
    s.add_argument("--report")
    s.add_argument("--batch-size", type=int, default=64)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="classify one payload")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--hex")
    s.add_argument("--payload-file")
    s.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _err(f"usage error: {exc}")
        return EXIT_USAGE
    except NumericError as exc:
        _err(f"error: {exc}")
        return EXIT_RUNTIME
    except (DataFormatError, DPIError) as exc:
        _err(f"error: {exc}")
        return EXIT_DATA
    except (ValueError, KeyError) as exc:
        _err(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
