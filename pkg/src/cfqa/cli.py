"""Command-line pipeline driver.

Subcommands: compress, score, label, evaluate, simulate, report. Every
command is deterministic given its inputs and seeds, writes CSV/JSON
artifacts only, and removes partial outputs when it fails. Exit codes:
0 success, 2 bad configuration or missing inputs, 3 evaluate join failure,
1 unexpected error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import codec, distortion, evaluation, link, metrics, store
from ._util import worker_map
from .errors import CfqaError, ConfigError

METRIC_ORDER = [metrics.Metric.MSE, metrics.Metric.COSINE, metrics.Metric.CKA]
RUN_FILE = "run.json"


class JoinError(CfqaError):
    """Score and label CSVs do not pair up on (feature_id, point)."""


class OutputSet:
    """Tracks written artifacts so a failed command leaves no partial output."""

    def __init__(self) -> None:
        self.files: list[Path] = []
        self.dirs: list[Path] = []

    def mkdir(self, path: Path) -> Path:
        if not path.exists():
            # Record every directory level this call actually creates.
            missing = []
            p = path
            while not p.exists():
                missing.append(p)
                p = p.parent
            path.mkdir(parents=True)
            self.dirs.extend(missing)
        return path

    def write_bytes(self, path: Path, data: bytes) -> Path:
        self.mkdir(path.parent)
        path.write_bytes(data)
        self.files.append(path)
        return path

    def write_text(self, path: Path, text: str) -> Path:
        return self.write_bytes(path, text.encode("utf-8"))

    def write_csv(self, path: Path, header: list[str], rows: list[list]) -> Path:
        self.mkdir(path.parent)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.files.append(path)
        return path

    def discard(self) -> None:
        for f in reversed(self.files):
            f.unlink(missing_ok=True)
        for d in reversed(self.dirs):
            try:
                d.rmdir()
            except OSError:
                pass


def _fmt(v: float | None) -> str:
    return metrics.format_score_value(v)


# ---------------------------------------------------------------------------
# Shared input loading


def _load_run_config(args: argparse.Namespace) -> dict:
    """Merge --config JSON under explicit flags (flags win)."""
    if not getattr(args, "config", None):
        return {}
    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ConfigError("--config must hold a JSON object")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) in (None, False):
            setattr(args, attr, value)
    return cfg


def _resolve_features(args: argparse.Namespace) -> tuple[list[store.FeatureTensor], str]:
    """One input source: an existing manifest or a synthetic (task, count, seed) spec."""
    has_manifest = bool(getattr(args, "manifest", None))
    has_synth = getattr(args, "count", None) is not None
    if has_manifest == has_synth:
        raise ConfigError("exactly one of --manifest or --task/--count/--seed is required")
    if has_manifest:
        manifest_path = Path(args.manifest)
        if not manifest_path.is_file():
            raise FileNotFoundError(f"manifest not found: {manifest_path}")
        problems = store.validate_manifest(manifest_path)
        if problems:
            raise ConfigError("manifest validation failed: " + "; ".join(problems))
        entries = store.read_manifest(manifest_path)
        features = [
            store.load_tensor(
                manifest_path.parent / e.file_path, feature_id=e.feature_id, task=e.task
            )
            for e in entries
        ]
        return features, str(manifest_path)
    task = store.Task(args.task)
    seed = int(args.seed or 0)
    features = [store.synth_feature(task, seed + i) for i in range(int(args.count))]
    return features, ""


def _parse_ladder(args: argparse.Namespace) -> tuple[codec.CodecKind, list[codec.CodecConfig]]:
    kind = codec.CodecKind(args.codec or "block")
    latent_seed = int(getattr(args, "latent_seed", 0) or 0)
    if getattr(args, "ladder", None):
        values = [int(x) for x in str(args.ladder).split(",") if x.strip()]
        if kind is codec.CodecKind.BLOCK_TRANSFORM:
            points = [codec.CodecConfig(kind=kind, qp=v) for v in values]
        elif kind is codec.CodecKind.LATENT_SURROGATE:
            points = [
                codec.CodecConfig(kind=kind, lambda_index=v, seed=latent_seed) for v in values
            ]
        else:
            raise ConfigError("--ladder does not apply to the uniform codec")
    else:
        points = codec.default_ladder(kind, seed=latent_seed)
    return kind, points


# ---------------------------------------------------------------------------
# compress


def cmd_compress(args: argparse.Namespace, out: OutputSet) -> None:
    out_dir = out.mkdir(Path(args.out))
    features, manifest_path = _resolve_features(args)
    features.sort(key=lambda t: t.id)
    kind, points = _parse_ladder(args)
    if len(points) < 3:
        raise ConfigError(f"ladder needs at least 3 points, got {len(points)}")

    if not manifest_path:
        feature_dir = out.mkdir(out_dir / "features")
        entries = []
        for t in features:
            out.write_bytes(feature_dir / f"{t.id}.cft", store.tensor_bytes(t))
            entries.append(
                store.make_manifest_entry(
                    t,
                    f"features/{t.id}.cft",
                    source_sample=f"seed:{t.id}",
                    split_point="synthetic",
                )
            )
        manifest_file = out_dir / "manifest.json"
        out.write_text(
            manifest_file, json.dumps([e.to_dict() for e in entries], indent=2) + "\n"
        )
        manifest_ref = "manifest.json"
    else:
        manifest_ref = str(Path(manifest_path).resolve())

    ladders = worker_map(lambda t: codec.rate_ladder(t, kind, points), features)

    records_dir = out.mkdir(out_dir / "records")
    for t, records in zip(features, ladders):
        rec_dir = out.mkdir(records_dir / t.id)
        for record in records:
            label = record.config.point_label
            out.write_bytes(
                rec_dir / f"{label}.cft", store.tensor_bytes(record.reconstruction)
            )
            sidecar = {
                "feature_id": record.feature_id,
                **record.config.to_dict(),
                "bitstream_bits": record.bitstream_bits,
                "bpfp": record.bpfp,
                "reconstruction": f"{label}.cft",
            }
            out.write_text(rec_dir / f"{label}.json", json.dumps(sidecar, indent=2) + "\n")

    rows: list[list] = [["original", repr(32.0), repr(0.0)]]
    for j, config in enumerate(points):
        bpfps = [ladders[i][j].bpfp for i in range(len(features))]
        mses = [
            metrics.mse(features[i], ladders[i][j].reconstruction).value
            for i in range(len(features))
        ]
        rows.append(
            [config.point_label, repr(float(np.mean(bpfps))), repr(float(np.mean(mses)))]
        )
    out.write_csv(out_dir / "rate_table.csv", ["point", "bpfp", "mse"], rows)

    run_meta = {
        "manifest": manifest_ref,
        "codec": kind.value,
        "points": [p.point_label for p in points],
    }
    out.write_text(out_dir / RUN_FILE, json.dumps(run_meta, indent=2) + "\n")


def _read_run(run_dir: Path) -> tuple[dict, list[store.ManifestEntry], Path]:
    run_file = run_dir / RUN_FILE
    if not run_file.is_file():
        raise FileNotFoundError(f"not a run directory (missing {RUN_FILE}): {run_dir}")
    meta = json.loads(run_file.read_text(encoding="utf-8"))
    manifest_path = Path(meta["manifest"])
    if not manifest_path.is_absolute():
        manifest_path = run_dir / manifest_path
    entries = store.read_manifest(manifest_path)
    return meta, entries, manifest_path


def _iter_records(
    run_dir: Path, entries: list[store.ManifestEntry]
) -> list[tuple[store.ManifestEntry, list[codec.CompressedRecord]]]:
    result = []
    for entry in sorted(entries, key=lambda e: e.feature_id):
        rec_dir = run_dir / "records" / entry.feature_id
        sidecars = sorted(rec_dir.glob("*.json"))
        records = [codec.load_record(p, task=entry.task) for p in sidecars]
        result.append((entry, records))
    return result


# ---------------------------------------------------------------------------
# score


def cmd_score(args: argparse.Namespace, out: OutputSet) -> None:
    run_dir = Path(args.run)
    _, entries, manifest_path = _read_run(run_dir)
    wanted = (
        [metrics.Metric(m) for m in str(args.metrics).split(",")]
        if getattr(args, "metrics", None)
        else METRIC_ORDER
    )

    def score_one(item: tuple[store.ManifestEntry, list[codec.CompressedRecord]]) -> list[list]:
        entry, records = item
        original = store.load_tensor(
            manifest_path.parent / entry.file_path, feature_id=entry.feature_id, task=entry.task
        )
        rows = []
        for record in records:
            all_scores = {s.metric: s for s in metrics.score_all(original, record.reconstruction)}
            for m in wanted:
                rows.append(
                    [
                        entry.feature_id,
                        record.config.kind.value,
                        record.config.point_label,
                        m.value,
                        _fmt(all_scores[m].value),
                    ]
                )
        return rows

    per_feature = worker_map(score_one, _iter_records(run_dir, entries))
    rows = [row for chunk in per_feature for row in chunk]
    out_path = Path(args.out) if getattr(args, "out", None) else run_dir / "scores.csv"
    out.write_csv(out_path, ["feature_id", "codec", "point", "metric", "value"], rows)


# ---------------------------------------------------------------------------
# label


def _predicted_label(item: dict, base: Path, mode: str) -> distortion.DistortionLabel:
    task = store.Task(item["task"])
    if task is store.Task.CLS:
        logits = distortion.read_cls_logits(base / item["comp"])
        return distortion.cls_rank(logits)
    if task is store.Task.SEG:
        num_classes = int(item.get("num_classes", distortion.VOC_NUM_CLASSES))
        orig = distortion.read_seg_mask(base / item["orig"], num_classes)
        comp = distortion.read_seg_mask(base / item["comp"], num_classes)
        ann = (
            distortion.read_seg_mask(base / item["annotation"], num_classes)
            if item.get("annotation")
            else None
        )
        return distortion.delta_miou(orig, comp, ann, mode=mode)
    if task is store.Task.DPT:
        orig = distortion.read_depth(base / item["orig"], _opt(item, "orig_mask", base))
        comp = distortion.read_depth(base / item["comp"], _opt(item, "comp_mask", base))
        ann = (
            distortion.read_depth(base / item["annotation"], _opt(item, "annotation_mask", base))
            if item.get("annotation")
            else None
        )
        return distortion.delta_rmse(orig, comp, ann, mode=mode)
    raise ConfigError(f"no truth label defined for task {task.value}")


def _opt(item: dict, key: str, base: Path) -> Path | None:
    return base / item[key] if item.get(key) else None


def cmd_label(args: argparse.Namespace, out: OutputSet) -> None:
    run_dir = Path(args.run)
    rows: list[list] = []
    if (args.truth or "strength") == "strength":
        _, entries, _ = _read_run(run_dir)
        for entry, records in _iter_records(run_dir, entries):
            for record in records:
                rows.append(
                    [
                        entry.feature_id,
                        record.config.point_label,
                        entry.task.value,
                        "strength",
                        repr(record.config.distortion_strength),
                    ]
                )
    else:
        if not getattr(args, "predictions", None):
            raise ConfigError("--truth predictions needs --predictions FILE")
        pred_path = Path(args.predictions)
        if not pred_path.is_file():
            raise FileNotFoundError(f"predictions manifest not found: {pred_path}")
        items = json.loads(pred_path.read_text(encoding="utf-8"))
        mode = args.mode or distortion.MODE_CONSISTENCY
        for item in sorted(items, key=lambda d: (d["feature_id"], d["point"])):
            label = _predicted_label(item, pred_path.parent, mode)
            rows.append(
                [
                    item["feature_id"],
                    item["point"],
                    label.task.value,
                    label.mode,
                    repr(label.value),
                ]
            )
    out_path = Path(args.out) if getattr(args, "out", None) else run_dir / "labels.csv"
    out.write_csv(out_path, ["feature_id", "point", "task", "mode", "value"], rows)


# ---------------------------------------------------------------------------
# evaluate


def _read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise FileNotFoundError(f"missing CSV: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_evaluate(args: argparse.Namespace, out: OutputSet) -> None:
    run_dir = Path(args.run)
    scores_path = Path(args.scores) if getattr(args, "scores", None) else run_dir / "scores.csv"
    labels_path = Path(args.labels) if getattr(args, "labels", None) else run_dir / "labels.csv"
    score_rows = _read_csv(scores_path)
    label_rows = _read_csv(labels_path)

    labels: dict[tuple[str, str], dict] = {}
    for row in label_rows:
        labels[(row["feature_id"], row["point"])] = row
    score_keys = {(r["feature_id"], r["point"]) for r in score_rows}
    orphan_scores = sorted(score_keys - set(labels))
    orphan_labels = sorted(set(labels) - score_keys)
    if orphan_scores or orphan_labels:
        lines = [f"score row without label: {k}" for k in orphan_scores]
        lines += [f"label row without score: {k}" for k in orphan_labels]
        raise JoinError("\n".join(lines))

    # (codec, metric, feature_id) -> sorted ladder of (point, score, label, task, mode)
    series_points: dict[tuple[str, str, str], list] = {}
    for row in score_rows:
        key = (row["codec"], row["metric"], row["feature_id"])
        lab = labels[(row["feature_id"], row["point"])]
        series_points.setdefault(key, []).append(
            (row["point"], row["value"], lab["value"], lab["task"], lab["mode"])
        )

    correlations: list[evaluation.SeriesCorrelation] = []
    for key in sorted(series_points):
        codec_name, metric_name, feature_id = key
        points = sorted(series_points[key])
        defined = [p for p in points if p[1] != "undefined"]
        task = points[0][3]
        if len(defined) < evaluation.MIN_SERIES_LENGTH:
            correlations.append(
                evaluation.SeriesCorrelation(
                    feature_id=feature_id,
                    metric=metric_name,
                    plcc=None,
                    srocc=None,
                    codec=codec_name,
                    task=task,
                )
            )
            continue
        series = evaluation.Series(
            feature_id=feature_id,
            scores=[float(p[1]) for p in defined],
            labels=[float(p[2]) for p in defined],
            metric=metric_name,
            codec=codec_name,
            task=task,
        )
        correlations.append(evaluation.evaluate_series(series))

    per_feature_rows = [
        [c.feature_id, c.codec, c.task, c.metric, _fmt(c.plcc), _fmt(c.srocc)]
        for c in correlations
    ]
    out_dir = Path(args.out) if getattr(args, "out", None) else run_dir
    out.write_csv(
        out_dir / "per_feature.csv",
        ["feature_id", "codec", "task", "metric", "plcc", "srocc"],
        per_feature_rows,
    )

    reports = evaluation.aggregate(correlations)
    agg_rows = [
        [r.codec, r.task, r.metric, _fmt(r.mean_plcc), _fmt(r.mean_srocc), r.undefined_count]
        for r in reports
    ]
    out.write_csv(
        out_dir / "aggregate.csv",
        ["codec", "task", "metric", "plcc", "srocc", "undefined_count"],
        agg_rows,
    )

    hist_rows: list[list] = []
    grouped: dict[tuple[str, str, str], list[float | None]] = {}
    for c in correlations:
        grouped.setdefault((c.metric, c.task, c.codec), []).append(c.plcc)
    for key in sorted(grouped):
        for center, count in evaluation.plcc_histogram(grouped[key]):
            hist_rows.append([key[0], key[1], key[2], repr(center), count])
    out.write_csv(
        out_dir / "plcc_histogram.csv",
        ["metric", "task", "codec", "bin", "count"],
        hist_rows,
    )


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace, out: OutputSet) -> None:
    features, _ = _resolve_features(args)
    if getattr(args, "policy", None):
        policy = link.load_policy(args.policy)
    else:
        if args.metric is None or args.threshold is None or args.codec is None:
            raise ConfigError("simulate needs --policy or --metric/--threshold/--codec")
        kind = codec.CodecKind(args.codec)
        if getattr(args, "ladder", None):
            _, points = _parse_ladder(args)
        else:
            points = codec.default_ladder(
                kind, seed=int(getattr(args, "latent_seed", 0) or 0), lowest_rate_first=True
            )
        policy = link.GatePolicy(
            metric=metrics.Metric(args.metric),
            threshold=float(args.threshold),
            ladder=points,
            max_reencodes=int(args.max_reencodes)
            if getattr(args, "max_reencodes", None) is not None
            else 1_000_000,
        )

    features.sort(key=lambda t: t.id)
    summary = link.simulate_corpus(features, policy)

    trace_rows = []
    for trace in summary.traces:
        for i, attempt in enumerate(trace.attempts):
            trace_rows.append(
                [
                    trace.feature_id,
                    i,
                    attempt.config.point_label,
                    _fmt(attempt.quality),
                    attempt.decision.value,
                    attempt.bits,
                ]
            )
    out_dir = out.mkdir(Path(args.out))
    out.write_csv(
        out_dir / "traces.csv",
        ["feature_id", "attempt", "point", "quality", "decision", "bits"],
        trace_rows,
    )
    out.write_csv(
        out_dir / "link_summary.csv",
        [
            "features",
            "total_transmitted_bits",
            "mean_final_quality",
            "first_attempt_pass_rate",
            "bits_saved_vs_max",
        ],
        [
            [
                summary.feature_count,
                summary.total_transmitted_bits,
                _fmt(summary.mean_final_quality),
                repr(summary.first_attempt_pass_rate),
                summary.bits_saved_vs_max,
            ]
        ],
    )


# ---------------------------------------------------------------------------
# report


def cmd_report(args: argparse.Namespace, out: OutputSet) -> None:
    run_dir = Path(args.run)
    agg = _read_csv(run_dir / "aggregate.csv")
    hist = _read_csv(run_dir / "plcc_histogram.csv")

    lines = ["Correlation summary (mean over features)", ""]
    header = f"{'codec':<10} {'task':<10} {'metric':<8} {'plcc':>12} {'srocc':>12} {'undef':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in agg:
        plcc_s = _short(row["plcc"])
        srocc_s = _short(row["srocc"])
        lines.append(
            f"{row['codec']:<10} {row['task']:<10} {row['metric']:<8} "
            f"{plcc_s:>12} {srocc_s:>12} {row['undefined_count']:>6}"
        )
    lines.append("")
    lines.append("PLCC distribution (counts per 0.1 bin, defined values only)")
    groups: dict[tuple[str, str, str], list[tuple[float, int]]] = {}
    for row in hist:
        key = (row["metric"], row["task"], row["codec"])
        groups.setdefault(key, []).append((float(row["bin"]), int(row["count"])))
    for key in sorted(groups):
        nonzero = [(b, c) for b, c in sorted(groups[key]) if c]
        body = ", ".join(f"{b:+.1f}:{c}" for b, c in nonzero) or "(no defined values)"
        lines.append(f"  {key[0]}/{key[1]}/{key[2]}: {body}")
    lines.append("")

    out_path = Path(args.out) if getattr(args, "out", None) else run_dir / "report.txt"
    out.write_text(out_path, "\n".join(lines) + "\n")
    sys.stdout.write("\n".join(lines) + "\n")


def _short(cell: str) -> str:
    return cell if cell == "undefined" else f"{float(cell):.4f}"


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfqa",
        description="Compressed feature quality assessment pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_input_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", help="manifest JSON of existing features")
        p.add_argument("--task", choices=[t.value for t in store.Task], help="synthetic task")
        p.add_argument("--count", type=int, help="synthetic feature count")
        p.add_argument("--seed", type=int, help="synthetic base seed (default 0)")

    def add_config_flag(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file with defaults for the flags")

    p = sub.add_parser("compress", help="encode features across a rate ladder")
    add_input_flags(p)
    p.add_argument(
        "--codec", choices=[k.value for k in codec.CodecKind], help="codec kind (default block)"
    )
    p.add_argument("--ladder", help="comma-separated qp or lambda-index values")
    p.add_argument("--latent-seed", type=int, dest="latent_seed")
    p.add_argument("--out", required=True, help="output run directory")
    add_config_flag(p)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("score", help="quality scores for every ladder point")
    p.add_argument("--run", required=True, help="run directory from compress")
    p.add_argument("--metrics", help="subset, e.g. mse,cosine")
    p.add_argument("--out", help="scores CSV path (default RUN/scores.csv)")
    add_config_flag(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("label", help="true distortion labels per ladder point")
    p.add_argument("--run", required=True)
    p.add_argument(
        "--truth", choices=["strength", "predictions"], help="label source (default strength)"
    )
    p.add_argument("--predictions", help="predictions manifest JSON")
    p.add_argument(
        "--mode",
        choices=[distortion.MODE_CONSISTENCY, distortion.MODE_ANNOTATION],
        help="difference mode for predictions truth",
    )
    p.add_argument("--out", help="labels CSV path (default RUN/labels.csv)")
    add_config_flag(p)
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("evaluate", help="per-feature correlations and aggregates")
    p.add_argument("--run", required=True)
    p.add_argument("--scores", help="scores CSV (default RUN/scores.csv)")
    p.add_argument("--labels", help="labels CSV (default RUN/labels.csv)")
    p.add_argument("--out", help="output directory (default RUN)")
    add_config_flag(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("simulate", help="quality-gated transmission sessions")
    add_input_flags(p)
    p.add_argument("--policy", help="policy JSON file")
    p.add_argument("--metric", choices=[m.value for m in metrics.Metric])
    p.add_argument("--threshold", type=float)
    p.add_argument("--codec", choices=[k.value for k in codec.CodecKind])
    p.add_argument("--ladder", help="comma-separated ladder values, lowest bitrate first")
    p.add_argument("--latent-seed", type=int, dest="latent_seed")
    p.add_argument("--max-reencodes", type=int, dest="max_reencodes")
    p.add_argument("--out", required=True)
    add_config_flag(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("report", help="text summary of evaluate outputs")
    p.add_argument("--run", required=True)
    p.add_argument("--out", help="report path (default RUN/report.txt)")
    add_config_flag(p)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = OutputSet()
    try:
        _load_run_config(args)
        args.fn(args, out)
        return 0
    except JoinError as exc:
        out.discard()
        sys.stderr.write(f"cfqa {args.command}: join failure\n{exc}\n")
        return 3
    except (CfqaError, FileNotFoundError, ValueError) as exc:
        out.discard()
        sys.stderr.write(f"cfqa {args.command}: {exc}\n")
        return 2
    except Exception as exc:  # pragma: no cover - unexpected
        out.discard()
        sys.stderr.write(f"cfqa {args.command}: unexpected error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
