"""Feature tensors, bit-exact CFT file I/O, manifests, and synthetic features.

CFT layout: bytes 0-3 magic "CFT1", byte 4 dtype code (0x01 = float32-LE),
byte 5 rank, bytes 6-15 reserved zero, then rank little-endian uint64 dims,
then the row-major float32-LE payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from ._util import fnv1a_64
from .errors import CorruptError, FormatError, ShapeError

MAGIC = b"CFT1"
DTYPE_F32_LE = 0x01
HEADER_SIZE = 16
CHANNELS = 1536
SYNTH_CLUSTERS = 8
SYNTH_CLUSTER_STD = 0.1
DPT_DEFAULT_TOKENS = 161


class Task(str, Enum):
    CLS = "Cls"
    SEG = "Seg"
    DPT = "Dpt"
    SYNTHETIC = "Synthetic"


# Fixed shapes per task; None entries are free (Dpt token count varies by source).
_TASK_SHAPES: dict[Task, tuple[int | None, ...] | None] = {
    Task.CLS: (257, CHANNELS),
    Task.SEG: (2, 1370, CHANNELS),
    Task.DPT: (2, 4, None, CHANNELS),
    Task.SYNTHETIC: None,
}


def _check_task_shape(task: Task, shape: tuple[int, ...]) -> None:
    template = _TASK_SHAPES[task]
    if template is None:
        return
    ok = len(shape) == len(template) and all(
        t is None or t == s for t, s in zip(template, shape)
    )
    if not ok:
        want = "x".join("T" if t is None else str(t) for t in template)
        raise ShapeError(f"task {task.value} expects shape {want}, got {list(shape)}")


@dataclass(eq=False)
class FeatureTensor:
    """An original or reconstructed feature: float32 payload plus task tag."""

    id: str
    task: Task
    values: np.ndarray
    token_axis: int = -1  # resolved to the penultimate axis in __post_init__

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim < 1 or any(s <= 0 for s in v.shape):
            raise ShapeError(f"invalid tensor shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("tensor payload contains NaN or Inf")
        _check_task_shape(self.task, v.shape)
        if self.token_axis == -1:
            self.token_axis = max(v.ndim - 2, 0)
        v.flags.writeable = False
        self.values = v

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def element_count(self) -> int:
        return int(self.values.size)

    def payload_bytes(self) -> bytes:
        """Row-major float32-LE payload, the checksummed portion of a CFT file."""
        return self.values.astype("<f4", copy=False).tobytes(order="C")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureTensor):
            return NotImplemented
        return (
            self.id == other.id
            and self.task == other.task
            and self.shape == other.shape
            and self.payload_bytes() == other.payload_bytes()
        )


def tensor_bytes(t: FeatureTensor) -> bytes:
    """The exact CFT byte sequence for t."""
    header = MAGIC + bytes([DTYPE_F32_LE, len(t.shape)]) + b"\x00" * 10
    dims = b"".join(struct.pack("<Q", d) for d in t.shape)
    return header + dims + t.payload_bytes()


def save_tensor(t: FeatureTensor, path: str | Path) -> None:
    """Write t as a CFT file; byte-identical output for identical input."""
    Path(path).write_bytes(tensor_bytes(t))


def load_tensor(
    path: str | Path,
    feature_id: str | None = None,
    task: Task = Task.SYNTHETIC,
) -> FeatureTensor:
    """Read a CFT file. The format stores no id/task; callers supply them."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a CFT file")
    if raw[4] != DTYPE_F32_LE:
        raise FormatError(f"{path}: unsupported dtype code {raw[4]:#04x}")
    rank = raw[5]
    if len(raw) < HEADER_SIZE + 8 * rank:
        raise CorruptError(f"{path}: truncated dimension table")
    shape = struct.unpack_from(f"<{rank}Q", raw, HEADER_SIZE)
    count = int(np.prod(shape, dtype=np.uint64)) if rank else 0
    expected = HEADER_SIZE + 8 * rank + 4 * count
    if len(raw) != expected:
        raise CorruptError(
            f"{path}: payload is {len(raw) - HEADER_SIZE - 8 * rank} bytes, "
            f"expected {4 * count}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE + 8 * rank)
    values = values.reshape(shape).astype(np.float32)
    return FeatureTensor(
        id=feature_id if feature_id is not None else path.stem,
        task=task,
        values=values,
    )


def flatten_2d(t: FeatureTensor) -> np.ndarray:
    """Collapse leading axes row-major; rows are tokens, columns channels."""
    if len(t.shape) < 2:
        raise ShapeError(f"cannot flatten rank-{len(t.shape)} tensor to 2D")
    return t.values.reshape(-1, t.shape[-1])


def restore_shape(
    m: np.ndarray,
    shape: tuple[int, ...] | list[int],
    feature_id: str = "",
    task: Task = Task.SYNTHETIC,
) -> FeatureTensor:
    """Inverse of flatten_2d: reshape a 2D matrix back to the original shape."""
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != m.size:
        raise ShapeError(f"cannot reshape {m.size} elements to {list(shape)}")
    return FeatureTensor(id=feature_id, task=task, values=np.asarray(m).reshape(shape))


_TASK_CODES = {Task.CLS: 0, Task.SEG: 1, Task.DPT: 2, Task.SYNTHETIC: 3}

# Deliberately small so desk-scale pipelines stay fast; channel width matches
# the real features.
SYNTHETIC_SHAPE = (64, CHANNELS)


def synth_feature(
    task: Task,
    seed: int,
    dpt_tokens: int = DPT_DEFAULT_TOKENS,
) -> FeatureTensor:
    """Deterministic synthetic feature: token rows from 8 Gaussian clusters.

    Cluster means are unit-scale, within-cluster noise has std 0.1, giving the
    clustered token structure the metrics are exercised on.
    """
    if task is Task.DPT:
        shape: tuple[int, ...] = (2, 4, dpt_tokens, CHANNELS)
    elif task is Task.SYNTHETIC:
        shape = SYNTHETIC_SHAPE
    else:
        shape = _TASK_SHAPES[task]  # type: ignore[assignment]
    rng = np.random.default_rng([_TASK_CODES[task], seed & 0xFFFFFFFFFFFFFFFF])
    n_tokens = int(np.prod(shape[:-1]))
    dim = shape[-1]
    means = rng.standard_normal((SYNTH_CLUSTERS, dim))
    assign = rng.integers(0, SYNTH_CLUSTERS, size=n_tokens)
    rows = means[assign] + SYNTH_CLUSTER_STD * rng.standard_normal((n_tokens, dim))
    return FeatureTensor(
        id=f"{task.value.lower()}-{seed:08d}",
        task=task,
        values=rows.astype(np.float32).reshape(shape),
    )


@dataclass
class ManifestEntry:
    """Provenance row for one stored feature file."""

    feature_id: str
    task: Task
    source_sample: str
    split_point: str
    file_path: str
    checksum: int

    def to_dict(self) -> dict:
        return {
            "feature_id": self.feature_id,
            "task": self.task.value,
            "source_sample": self.source_sample,
            "split_point": self.split_point,
            "file_path": self.file_path,
            "checksum": self.checksum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            feature_id=d["feature_id"],
            task=Task(d["task"]),
            source_sample=d["source_sample"],
            split_point=d["split_point"],
            file_path=d["file_path"],
            checksum=int(d["checksum"]),
        )


def make_manifest_entry(
    t: FeatureTensor,
    file_path: str,
    source_sample: str = "",
    split_point: str = "",
) -> ManifestEntry:
    return ManifestEntry(
        feature_id=t.id,
        task=t.task,
        source_sample=source_sample,
        split_point=split_point,
        file_path=file_path,
        checksum=fnv1a_64(t.payload_bytes()),
    )


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    text = json.dumps([e.to_dict() for e in entries], indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ManifestEntry.from_dict(d) for d in raw]


def validate_manifest(path: str | Path) -> list[str]:
    """Check every entry's file, shape, and checksum; returns problem strings."""
    path = Path(path)
    problems: list[str] = []
    for entry in read_manifest(path):
        file_path = path.parent / entry.file_path
        if not file_path.is_file():
            problems.append(f"{entry.feature_id}: missing file {entry.file_path}")
            continue
        try:
            t = load_tensor(file_path, feature_id=entry.feature_id, task=entry.task)
        except (FormatError, CorruptError, ShapeError, ValueError) as exc:
            problems.append(f"{entry.feature_id}: {exc}")
            continue
        actual = fnv1a_64(t.payload_bytes())
        if actual != entry.checksum:
            problems.append(
                f"{entry.feature_id}: checksum {actual:#018x} != "
                f"recorded {entry.checksum:#018x}"
            )
    return problems
