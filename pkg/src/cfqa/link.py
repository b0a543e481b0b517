"""Quality-gated transmission: encode at the edge, gate on estimated quality,
re-encode at a higher bitrate when the estimate fails the threshold.

The link itself is ideal (no loss or latency model); only transmitted bits
are accounted. Quality is always scored against the original feature, which
the edge still holds. On ladder exhaustion the highest-rate attempt is
transmitted anyway: delivering a degraded feature beats dropping it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ._util import worker_map
from .codec import CodecConfig, encode_matrix
from .errors import ConfigError, DegenerateError
from .metrics import Metric, Orientation, QualityScore, cosine, linear_cka, mse
from .store import FeatureTensor, flatten_2d, restore_shape

_METRIC_FNS = {Metric.MSE: mse, Metric.COSINE: cosine, Metric.CKA: linear_cka}


class Decision(str, Enum):
    TRANSMIT = "transmit"
    REENCODE = "reencode"


@dataclass
class GatePolicy:
    """Gating metric + threshold and the re-encode ladder, lowest bitrate first."""

    metric: Metric
    threshold: float
    ladder: list[CodecConfig]
    max_reencodes: int = 1_000_000

    def __post_init__(self) -> None:
        if not self.ladder:
            raise ConfigError("policy ladder must be non-empty")
        if self.max_reencodes < 0:
            raise ConfigError("max_reencodes must be non-negative")

    def to_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "threshold": self.threshold,
            "ladder": [c.to_dict() for c in self.ladder],
            "max_reencodes": self.max_reencodes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GatePolicy":
        return cls(
            metric=Metric(d["metric"]),
            threshold=float(d["threshold"]),
            ladder=[CodecConfig.from_dict(c) for c in d["ladder"]],
            max_reencodes=int(d.get("max_reencodes", 1_000_000)),
        )


def save_policy(policy: GatePolicy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(policy.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_policy(path: str | Path) -> GatePolicy:
    return GatePolicy.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Attempt:
    config: CodecConfig
    quality: float | None
    decision: Decision
    bits: int


@dataclass
class LinkTrace:
    feature_id: str
    attempts: list[Attempt]
    transmitted_bits: int
    final_quality: float | None
    reencode_count: int


@dataclass
class CorpusSummary:
    feature_count: int
    total_transmitted_bits: int
    mean_final_quality: float | None
    first_attempt_pass_rate: float
    bits_saved_vs_max: int
    traces: list[LinkTrace] = field(repr=False, default_factory=list)


def gate(q: QualityScore, threshold: float) -> Decision:
    """Transmit iff the score passes the threshold under its orientation.

    Boundary values pass (>= for higher-is-better, <= for MSE); an undefined
    score fails and triggers a re-encode.
    """
    if q.value is None:
        return Decision.REENCODE
    if q.orientation is Orientation.HIGHER_IS_BETTER:
        return Decision.TRANSMIT if q.value >= threshold else Decision.REENCODE
    return Decision.TRANSMIT if q.value <= threshold else Decision.REENCODE


def _score(metric: Metric, original: FeatureTensor, recon: FeatureTensor) -> QualityScore:
    try:
        return _METRIC_FNS[metric](original, recon)
    except DegenerateError:
        return QualityScore(metric, None)


def simulate_session(t: FeatureTensor, policy: GatePolicy) -> LinkTrace:
    """Walk the ladder until the gate passes or attempts run out."""
    m = flatten_2d(t)
    attempts: list[Attempt] = []
    last_index = min(len(policy.ladder), policy.max_reencodes + 1) - 1
    for i, config in enumerate(policy.ladder[: last_index + 1]):
        m_hat, bits = encode_matrix(m, config)
        recon = restore_shape(
            m_hat.astype(np.float32), t.shape, feature_id=t.id, task=t.task
        )
        q = _score(policy.metric, t, recon)
        decision = gate(q, policy.threshold)
        if i == last_index:
            decision = Decision.TRANSMIT  # exhaustion: deliver the best attempt
        attempts.append(Attempt(config=config, quality=q.value, decision=decision, bits=bits))
        if decision is Decision.TRANSMIT:
            break
    final = attempts[-1]
    return LinkTrace(
        feature_id=t.id,
        attempts=attempts,
        transmitted_bits=final.bits,
        final_quality=final.quality,
        reencode_count=len(attempts) - 1,
    )


def _highest_point_bits(t: FeatureTensor, policy: GatePolicy, trace: LinkTrace) -> int:
    final = trace.attempts[-1]
    if final.config == policy.ladder[-1]:
        return final.bits
    _, bits = encode_matrix(flatten_2d(t), policy.ladder[-1])
    return bits


def simulate_corpus(features: list[FeatureTensor], policy: GatePolicy) -> CorpusSummary:
    """Independent per-feature sessions plus corpus totals.

    bits_saved_vs_max compares against always transmitting the highest-rate
    ladder point; it is non-negative whenever quality is monotone in rate.
    """
    if not features:
        raise ConfigError("corpus must be non-empty")

    def run(t: FeatureTensor) -> tuple[LinkTrace, int]:
        trace = simulate_session(t, policy)
        return trace, _highest_point_bits(t, policy, trace)

    results = worker_map(run, features)
    traces = [tr for tr, _ in results]
    defined = [tr.final_quality for tr in traces if tr.final_quality is not None]
    total_bits = sum(tr.transmitted_bits for tr in traces)
    max_bits = sum(hb for _, hb in results)
    return CorpusSummary(
        feature_count=len(traces),
        total_transmitted_bits=total_bits,
        mean_final_quality=float(np.mean(defined)) if defined else None,
        first_attempt_pass_rate=sum(tr.reencode_count == 0 for tr in traces) / len(traces),
        bits_saved_vs_max=max_bits - total_bits,
        traces=traces,
    )
