"""Convert saved framework tensors and prediction dumps to toolkit files.

Supported dump containers: .npy, .npz (single array or --key), and torch
.pt/.pth (a tensor, or a dict holding one under --key). The exporter never
runs a model; it only converts what was already dumped. A leading batch axis
of size 1 is squeezed; beyond that the dump must match the task shape
exactly. float32 input values pass through bit-exactly; wider floats are
narrowed to float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import cft_payload, fnv1a_64, write_cft, write_logits_csv, write_pgm

CHANNELS = 1536

# Expected dump shapes per task tag; None entries are free.
TASK_SHAPES: dict[str, tuple[int | None, ...]] = {
    "Cls": (257, CHANNELS),
    "Seg": (2, 1370, CHANNELS),
    "Dpt": (2, 4, None, CHANNELS),
}


class ExportError(Exception):
    pass


@dataclass
class ExportJob:
    input_path: Path
    task: str
    split_point: str
    out_dir: Path
    feature_id: str = ""
    source_sample: str = ""
    key: str | None = None

    def __post_init__(self) -> None:
        self.input_path = Path(self.input_path)
        self.out_dir = Path(self.out_dir)
        if not self.feature_id:
            self.feature_id = self.input_path.stem
        if not self.source_sample:
            self.source_sample = self.input_path.name


def load_dump(path: str | Path, key: str | None = None) -> np.ndarray:
    """Decode a saved-tensor container file into a float array."""
    path = Path(path)
    if not path.is_file():
        raise ExportError(f"input not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".npy":
        arr = np.load(path)
    elif suffix == ".npz":
        with np.load(path) as bundle:
            names = list(bundle.files)
            if key is not None:
                if key not in names:
                    raise ExportError(f"{path}: no array named {key!r} (has {names})")
                arr = bundle[key]
            elif len(names) == 1:
                arr = bundle[names[0]]
            else:
                raise ExportError(f"{path}: multiple arrays {names}; pass a key")
    elif suffix in (".pt", ".pth"):
        try:
            import torch
        except ImportError as exc:  # pragma: no cover - torch present in CI
            raise ExportError("reading .pt dumps requires torch") from exc
        obj = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(obj, dict):
            if key is None:
                tensors = {k: v for k, v in obj.items() if torch.is_tensor(v)}
                if len(tensors) != 1:
                    raise ExportError(
                        f"{path}: dict holds {sorted(tensors)}; pass a key"
                    )
                obj = next(iter(tensors.values()))
            elif key in obj:
                obj = obj[key]
            else:
                raise ExportError(f"{path}: no entry named {key!r}")
        if not torch.is_tensor(obj):
            raise ExportError(f"{path}: not a tensor dump")
        arr = obj.detach().cpu().numpy()
    else:
        raise ExportError(f"unsupported dump container {suffix!r}")
    if not np.issubdtype(np.asarray(arr).dtype, np.number):
        raise ExportError(f"{path}: dump is not numeric")
    return np.asarray(arr)


def _conform_shape(arr: np.ndarray, task: str) -> np.ndarray:
    template = TASK_SHAPES.get(task)
    if template is None:
        raise ExportError(f"unknown task tag {task!r} (expected one of {sorted(TASK_SHAPES)})")
    if arr.ndim == len(template) + 1 and arr.shape[0] == 1:
        arr = arr[0]  # squeeze a singleton batch axis
    want = "x".join("T" if t is None else str(t) for t in template)
    if arr.ndim != len(template) or any(
        t is not None and t != s for t, s in zip(template, arr.shape)
    ):
        raise ExportError(
            f"task {task} expects shape {want}, dump has {list(arr.shape)}"
        )
    return arr


def export_feature(job: ExportJob) -> dict:
    """Write <id>.cft plus a manifest entry; returns the entry dict.

    Re-exporting the same input produces identical bytes: the manifest is
    rewritten with entries upserted by feature_id and kept sorted.
    """
    arr = _conform_shape(load_dump(job.input_path, job.key), job.task)
    values = np.ascontiguousarray(arr, dtype=np.float32)

    job.out_dir.mkdir(parents=True, exist_ok=True)
    cft_name = f"{job.feature_id}.cft"
    write_cft(values, job.out_dir / cft_name)
    entry = {
        "feature_id": job.feature_id,
        "task": job.task,
        "source_sample": job.source_sample,
        "split_point": job.split_point,
        "file_path": cft_name,
        "checksum": fnv1a_64(cft_payload(values)),
    }
    _upsert_manifest(job.out_dir / "manifest.json", entry)
    return entry


def _upsert_manifest(path: Path, entry: dict) -> None:
    entries = []
    if path.is_file():
        entries = json.loads(path.read_text(encoding="utf-8"))
    entries = [e for e in entries if e["feature_id"] != entry["feature_id"]]
    entries.append(entry)
    entries.sort(key=lambda e: e["feature_id"])
    path.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")


def export_predictions(
    kind: str,
    input_path: str | Path,
    out_path: str | Path,
    gt: int | None = None,
    valid_mask_path: str | Path | None = None,
    mask_out_path: str | Path | None = None,
    key: str | None = None,
) -> None:
    """Write one prediction file: logits CSV, mask PGM, or depth CFT."""
    arr = load_dump(input_path, key)
    if kind == "logits":
        if gt is None:
            raise ExportError("logits export needs the ground-truth index")
        write_logits_csv(gt, arr.astype(np.float64).ravel(), out_path)
    elif kind == "mask":
        if arr.ndim != 2:
            raise ExportError(f"mask dump must be 2D, got rank {arr.ndim}")
        labels = arr.astype(np.int64)
        if (labels != arr).any():
            raise ExportError("mask dump holds non-integer values")
        write_pgm(labels, out_path)
    elif kind == "depth":
        if arr.ndim != 2:
            raise ExportError(f"depth dump must be 2D, got rank {arr.ndim}")
        values = arr.astype(np.float32)
        if valid_mask_path is not None:
            mask = load_dump(valid_mask_path) != 0
            if mask.shape != values.shape:
                raise ExportError("validity mask shape differs from depth shape")
            values = np.where(mask, values, np.float32(0.0))
            if mask_out_path is None:
                raise ExportError("depth with a validity mask needs --mask-out")
            write_pgm(mask.astype(np.uint8) * 255, mask_out_path)
        if not np.isfinite(values).all():
            raise ExportError("depth dump has non-finite values at valid pixels")
        write_cft(values, out_path)
    else:
        raise ExportError(f"unknown prediction kind {kind!r}")
