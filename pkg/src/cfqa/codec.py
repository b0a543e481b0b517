"""Codec simulators: 10-bit uniform quantization, a block-DCT QP-ladder codec,
and a latent-transform surrogate for learned coding.

Bitrate is an entropy estimate, not an actual coded stream: bitstream_bits is
ceil(H * symbol_count) + a 64-bit header, with H the empirical zeroth-order
entropy of the quantized symbols. Deterministic per (input, config).
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from ._util import bitstream_size, round_half_away
from .errors import ConfigError, RangeError, ShapeError
from .store import FeatureTensor, Task, flatten_2d, load_tensor, restore_shape, save_tensor

QUANT_LEVELS = 1024
BLOCK = 8
VALID_QPS = tuple(range(2, 21, 2))
VALID_LAMBDA_INDICES = tuple(range(10))
LATENT_BASE_STEP_FRACTION = 0.01


class CodecKind(str, Enum):
    UNIFORM_ONLY = "uniform"
    BLOCK_TRANSFORM = "block"
    LATENT_SURROGATE = "latent"


@dataclass(frozen=True)
class QuantGrid:
    v_min: float
    v_max: float
    levels: int = QUANT_LEVELS

    def __post_init__(self) -> None:
        if self.v_min > self.v_max:
            raise RangeError(f"v_min {self.v_min} > v_max {self.v_max}")
        if self.levels != QUANT_LEVELS:
            raise ConfigError(f"levels must be {QUANT_LEVELS}, got {self.levels}")


@dataclass(frozen=True)
class CodecConfig:
    kind: CodecKind
    qp: int | None = None
    lambda_index: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind is CodecKind.BLOCK_TRANSFORM:
            if self.qp not in VALID_QPS:
                raise ConfigError(f"qp must be an even value in 2..20, got {self.qp}")
        elif self.kind is CodecKind.LATENT_SURROGATE:
            if self.lambda_index not in VALID_LAMBDA_INDICES:
                raise ConfigError(f"lambda_index must be in 0..9, got {self.lambda_index}")

    @property
    def point_label(self) -> str:
        """Stable ladder-point name used in file names and CSV join keys."""
        if self.kind is CodecKind.BLOCK_TRANSFORM:
            return f"qp{self.qp:02d}"
        if self.kind is CodecKind.LATENT_SURROGATE:
            return f"lam{self.lambda_index}"
        return "uni"

    @property
    def distortion_strength(self) -> float:
        """The injected step-size knob, usable as a synthetic truth label."""
        if self.kind is CodecKind.BLOCK_TRANSFORM:
            return qstep(self.qp)  # type: ignore[arg-type]
        if self.kind is CodecKind.LATENT_SURROGATE:
            return 2.0 ** (self.lambda_index / 2.0)  # type: ignore[operator]
        return 1.0

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.qp is not None:
            d["qp"] = self.qp
        if self.lambda_index is not None:
            d["lambda_index"] = self.lambda_index
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(
            kind=CodecKind(d["kind"]),
            qp=d.get("qp"),
            lambda_index=d.get("lambda_index"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class CompressedRecord:
    """One rate-ladder point: config, rate estimate, and the reconstruction."""

    feature_id: str
    config: CodecConfig
    bitstream_bits: int
    bpfp: float
    reconstruction: FeatureTensor


def qstep(qp: int) -> float:
    """HEVC-convention quantizer step: doubles every 6 QP."""
    return 2.0 ** ((qp - 4) / 6.0)


def uniform_quantize(m: np.ndarray) -> tuple[np.ndarray, QuantGrid]:
    """Map m onto integer codes 0..1023 over its own min/max range.

    A constant matrix collapses to grid (c, c) with all-zero codes.
    """
    m = np.asarray(m, dtype=np.float64)
    if not np.isfinite(m).all():
        raise ValueError("matrix contains NaN or Inf")
    v_min = float(m.min())
    v_max = float(m.max())
    if v_min == v_max:
        return np.zeros(m.shape, dtype=np.int32), QuantGrid(v_min, v_max)
    scaled = (m - v_min) / (v_max - v_min) * (QUANT_LEVELS - 1)
    codes = round_half_away(scaled).astype(np.int32)
    return codes, QuantGrid(v_min, v_max)


def dequantize(q: np.ndarray, grid: QuantGrid) -> np.ndarray:
    """Map codes back to the value domain; a degenerate grid returns v_min."""
    q = np.asarray(q, dtype=np.float64)
    if q.size and (q.min() < 0 or q.max() > QUANT_LEVELS - 1):
        raise RangeError("codes outside [0, 1023]")
    if grid.v_min == grid.v_max:
        return np.full(q.shape, grid.v_min, dtype=np.float64)
    return grid.v_min + q / (QUANT_LEVELS - 1) * (grid.v_max - grid.v_min)


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    nh, nw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(nh * BLOCK, nw * BLOCK)


def _encode_uniform(m: np.ndarray) -> tuple[np.ndarray, int]:
    codes, grid = uniform_quantize(m)
    return dequantize(codes, grid), bitstream_size(codes)


def _encode_block(m: np.ndarray, qp: int) -> tuple[np.ndarray, int]:
    """Quantize to 10 bits, 8x8 DCT the plane, quantize coefficients, invert."""
    codes, grid = uniform_quantize(m)
    h, w = codes.shape
    pad_h = (-h) % BLOCK
    pad_w = (-w) % BLOCK
    plane = np.pad(codes.astype(np.float64), ((0, pad_h), (0, pad_w)), mode="edge")
    coeffs = dctn(_to_blocks(plane), axes=(-2, -1), norm="ortho")
    step = qstep(qp)
    qcoeffs = round_half_away(coeffs / step).astype(np.int64)
    bits = bitstream_size(qcoeffs)
    recon = idctn(qcoeffs * step, axes=(-2, -1), norm="ortho")
    plane_hat = _from_blocks(recon)[:h, :w]
    plane_hat = np.clip(plane_hat, 0, QUANT_LEVELS - 1)
    return dequantize(plane_hat, grid), bits


@functools.lru_cache(maxsize=8)
def _orthonormal_transform(dim: int, seed: int) -> np.ndarray:
    """Seeded random orthonormal dim x dim matrix (QR with sign-fixed diagonal)."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, dim])
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _encode_latent(m: np.ndarray, lambda_index: int, seed: int) -> tuple[np.ndarray, int]:
    """Rotate rows into a random orthonormal latent basis and quantize there.

    Step size is scale-relative: 0.01 * std(m), doubled every two ladder
    indices; a constant input is reproduced exactly.
    """
    m = np.asarray(m, dtype=np.float64)
    transform = _orthonormal_transform(m.shape[1], seed)
    step = LATENT_BASE_STEP_FRACTION * float(m.std()) * 2.0 ** (lambda_index / 2.0)
    if step == 0.0:
        return m.copy(), bitstream_size(np.zeros(m.shape, dtype=np.int64))
    latents = m @ transform
    qlatents = round_half_away(latents / step).astype(np.int64)
    bits = bitstream_size(qlatents)
    return (qlatents * step) @ transform.T, bits


def encode_matrix(m: np.ndarray, config: CodecConfig) -> tuple[np.ndarray, int]:
    """Dispatch on config.kind; returns (reconstructed matrix, bitstream bits)."""
    if config.kind is CodecKind.BLOCK_TRANSFORM:
        return _encode_block(m, config.qp)  # type: ignore[arg-type]
    if config.kind is CodecKind.LATENT_SURROGATE:
        return _encode_latent(m, config.lambda_index, config.seed)  # type: ignore[arg-type]
    return _encode_uniform(m)


def _matrix_record(m: np.ndarray, config: CodecConfig, feature_id: str = "") -> CompressedRecord:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"encoder expects a 2D matrix, got rank {m.ndim}")
    m_hat, bits = encode_matrix(m, config)
    return CompressedRecord(
        feature_id=feature_id,
        config=config,
        bitstream_bits=bits,
        bpfp=bits / m.size,
        reconstruction=FeatureTensor(
            id=feature_id, task=Task.SYNTHETIC, values=m_hat.astype(np.float32)
        ),
    )


def block_transform_encode(m: np.ndarray, qp: int) -> CompressedRecord:
    return _matrix_record(m, CodecConfig(kind=CodecKind.BLOCK_TRANSFORM, qp=qp))


def latent_surrogate_encode(m: np.ndarray, lambda_index: int, seed: int = 0) -> CompressedRecord:
    return _matrix_record(
        m, CodecConfig(kind=CodecKind.LATENT_SURROGATE, lambda_index=lambda_index, seed=seed)
    )


def default_ladder(
    kind: CodecKind, seed: int = 0, lowest_rate_first: bool = False
) -> list[CodecConfig]:
    """The 10-point ladder per codec kind (uniform has a single point)."""
    if kind is CodecKind.BLOCK_TRANSFORM:
        configs = [CodecConfig(kind=kind, qp=qp) for qp in VALID_QPS]
        return configs[::-1] if lowest_rate_first else configs
    if kind is CodecKind.LATENT_SURROGATE:
        configs = [
            CodecConfig(kind=kind, lambda_index=i, seed=seed) for i in VALID_LAMBDA_INDICES
        ]
        return configs[::-1] if lowest_rate_first else configs
    return [CodecConfig(kind=kind)]


def rate_ladder(
    t: FeatureTensor, kind: CodecKind, points: list[CodecConfig]
) -> list[CompressedRecord]:
    """Encode t at every config; reconstructions are restored to t's shape."""
    if not points:
        raise ConfigError("rate ladder needs at least one config")
    for p in points:
        if p.kind is not kind:
            raise ConfigError(f"mixed codec kinds in ladder: {p.kind} vs {kind}")
    m = flatten_2d(t)
    records = []
    for config in points:
        m_hat, bits = encode_matrix(m, config)
        recon = restore_shape(
            m_hat.astype(np.float32), t.shape, feature_id=t.id, task=t.task
        )
        records.append(
            CompressedRecord(
                feature_id=t.id,
                config=config,
                bitstream_bits=bits,
                bpfp=bits / t.element_count,
                reconstruction=recon,
            )
        )
    return records


def save_record(record: CompressedRecord, directory: str | Path) -> Path:
    """Write the JSON sidecar plus the reconstruction CFT next to it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    label = record.config.point_label
    cft_name = f"{label}.cft"
    save_tensor(record.reconstruction, directory / cft_name)
    sidecar = {
        "feature_id": record.feature_id,
        **record.config.to_dict(),
        "bitstream_bits": record.bitstream_bits,
        "bpfp": record.bpfp,
        "reconstruction": cft_name,
    }
    path = directory / f"{label}.json"
    path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return path


def load_record(sidecar_path: str | Path, task: Task = Task.SYNTHETIC) -> CompressedRecord:
    sidecar_path = Path(sidecar_path)
    d = json.loads(sidecar_path.read_text(encoding="utf-8"))
    config = CodecConfig.from_dict(d)
    recon = load_tensor(
        sidecar_path.parent / d["reconstruction"],
        feature_id=d["feature_id"],
        task=task,
    )
    return CompressedRecord(
        feature_id=d["feature_id"],
        config=config,
        bitstream_bits=int(d["bitstream_bits"]),
        bpfp=float(d["bpfp"]),
        reconstruction=recon,
    )
