"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with -s to see them live) and enforcing its runtime
budget. Desk scale throughout: synthetic features, property-based checks,
and structural reproduction of the reporting pipeline.
"""

import csv
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from cfqa import (
    ClsLogits,
    DepthMap,
    FeatureTensor,
    GatePolicy,
    Metric,
    SegMask,
    Task,
    cls_rank,
    cosine,
    default_ladder,
    delta_miou,
    delta_rmse,
    dequantize,
    linear_cka,
    miou,
    mse,
    rmse,
    simulate_corpus,
    simulate_session,
    synth_feature,
    uniform_quantize,
)
from cfqa.cli import main as cli_main
from cfqa.codec import CodecKind, VALID_QPS, block_transform_encode, encode_matrix
from cfqa.evaluation import plcc, srocc
from cfqa.link import Decision, gate
from cfqa.metrics import QualityScore
from cfqa.store import flatten_2d

from test_distortion import miou_oracle, rank_oracle
from test_evaluation import pearson_oracle, rank_oracle as avg_rank_oracle
from test_metrics import hsic_double_sum_oracle


@contextmanager
def criterion(name, limit_s):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    elapsed = time.perf_counter() - t0
    in_budget = elapsed < limit_s
    verdict = "PASS" if in_budget else "FAIL (over time budget)"
    print(f"[ACCEPTANCE] {name}: {verdict} ({elapsed:.1f}s, budget {limit_s:.0f}s)")
    assert in_budget, f"{name}: {elapsed:.1f}s exceeds {limit_s}s"


def make(values):
    return FeatureTensor(id="t", task=Task.SYNTHETIC, values=np.asarray(values, np.float32))


def test_metric_correctness():
    with criterion("metric correctness", 10.0):
        rng = np.random.default_rng(1)

        # CKA self-similarity on a realistic synthetic feature.
        t = synth_feature(Task.SYNTHETIC, 3)
        assert abs(linear_cka(t, t).value - 1.0) <= 1e-9

        # Invariance under orthogonal right-multiplication and positive
        # isotropic scaling, 100 random matrices with n, d <= 64.
        for _ in range(100):
            n = int(rng.integers(3, 65))
            d = int(rng.integers(2, 65))
            x = rng.standard_normal((n, d))
            q, r = np.linalg.qr(rng.standard_normal((d, d)))
            q *= np.sign(np.diag(r))
            alpha = float(rng.uniform(0.5, 4.0))
            value = linear_cka(make(x), make(alpha * (x @ q))).value
            assert abs(value - 1.0) <= 1e-6

        # Agreement with the explicit HSIC double-sum oracle.
        for _ in range(25):
            x = rng.standard_normal((8, 5))
            y = rng.standard_normal((8, 5))
            f, g = make(x), make(y)
            expected = hsic_double_sum_oracle(
                f.values.astype(np.float64), g.values.astype(np.float64)
            )
            assert abs(linear_cka(f, g).value - expected) <= 1e-8

        # Analytic cosine / MSE cases hold exactly.
        f = make(rng.standard_normal((9, 7)))
        assert cosine(f, f).value == 1.0
        assert cosine(f, make(-f.values)).value == -1.0
        assert cosine(make([1.0, 0.0]), make([1.0, 1.0])).value == 1.0 / math.sqrt(2.0)
        assert mse(f, f).value == 0.0
        assert mse(make(np.zeros((3, 4))), make(np.ones((3, 4)))).value == 1.0


def test_correlation_correctness():
    with criterion("correlation correctness", 5.0):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            x = rng.standard_normal(10).tolist()
            y = rng.standard_normal(10).tolist()
            assert abs(plcc(x, y) - pearson_oracle(x, y)) <= 1e-12
            expected_s = pearson_oracle(avg_rank_oracle(x), avg_rank_oracle(y))
            assert abs(srocc(x, y) - expected_s) <= 1e-12

        # Tie handling against the average-rank oracle.
        for _ in range(200):
            x = rng.integers(0, 4, size=10).tolist()
            y = rng.integers(0, 4, size=10).tolist()
            expected = pearson_oracle(avg_rank_oracle(x), avg_rank_oracle(y))
            got = srocc(x, y)
            if expected is None:
                assert got is None
            else:
                assert abs(got - expected) <= 1e-12
        assert srocc([1, 2, 2, 3], [4, 5, 5, 6]) == pytest.approx(1.0, abs=1e-12)

        # Zero-variance series are undefined, not 0 or NaN.
        assert plcc([3, 3, 3, 3], [1, 2, 3, 4]) is None
        assert srocc([1, 2, 3, 4], [7, 7, 7, 7]) is None


def test_quantization_bound():
    with criterion("quantization bound", 10.0):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            m = rng.standard_normal((16, 16)) * 10.0 ** rng.integers(-4, 5)
            codes, grid = uniform_quantize(m)
            assert codes.min() >= 0 and codes.max() <= 1023
            err = np.abs(dequantize(codes, grid) - m).max()
            span = grid.v_max - grid.v_min
            assert err <= span / 2046 + 1e-7 * span


def test_codec_ladder_sanity():
    with criterion("codec ladder sanity", 60.0):
        n = 100
        mses = np.zeros((n, len(VALID_QPS)))
        bits = np.zeros((n, len(VALID_QPS)))
        bpfp_max = 0.0
        for i in range(n):
            t = synth_feature(Task.SYNTHETIC, 9000 + i)
            m = flatten_2d(t)
            m64 = m.astype(np.float64)
            for j, qp in enumerate(VALID_QPS):
                rec = block_transform_encode(m, qp)
                mses[i, j] = np.mean(
                    (rec.reconstruction.values.astype(np.float64) - m64) ** 2
                )
                bits[i, j] = rec.bitstream_bits
                bpfp_max = max(bpfp_max, rec.bpfp)
        assert (np.diff(mses.mean(axis=0)) >= 0).all(), "mean MSE not non-decreasing in QP"
        assert (np.diff(bits.mean(axis=0)) <= 0).all(), "mean bits not non-increasing in QP"
        assert bpfp_max < 32.0


def test_end_to_end_protocol(tmp_path):
    with criterion("end-to-end protocol reproduction", 120.0):
        out = tmp_path / "run"
        assert (
            cli_main(
                [
                    "compress",
                    "--task",
                    "Synthetic",
                    "--count",
                    "100",
                    "--seed",
                    "42",
                    "--codec",
                    "block",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        assert cli_main(["score", "--run", str(out)]) == 0
        assert cli_main(["label", "--run", str(out)]) == 0
        assert cli_main(["evaluate", "--run", str(out)]) == 0

        with open(out / "per_feature.csv", newline="") as fh:
            per_feature = list(csv.DictReader(fh))
        mse_sroccs = [
            abs(float(r["srocc"]))
            for r in per_feature
            if r["metric"] == "mse" and r["srocc"] != "undefined"
        ]
        assert len(mse_sroccs) >= 90
        assert float(np.median(mse_sroccs)) >= 0.9

        with open(out / "aggregate.csv", newline="") as fh:
            agg = list(csv.DictReader(fh))
        keys = [(r["codec"], r["task"], r["metric"]) for r in agg]
        assert keys == [
            ("block", "Synthetic", "cka"),
            ("block", "Synthetic", "cosine"),
            ("block", "Synthetic", "mse"),
        ]

        with open(out / "plcc_histogram.csv", newline="") as fh:
            hist = list(csv.DictReader(fh))
        for metric in ("mse", "cosine", "cka"):
            hist_total = sum(int(r["count"]) for r in hist if r["metric"] == metric)
            defined = sum(
                1
                for r in per_feature
                if r["metric"] == metric and r["plcc"] != "undefined"
            )
            assert hist_total == defined


def test_distortion_truth_oracles():
    with criterion("distortion-truth oracles", 5.0):
        rng = np.random.default_rng(5)

        # Rank tie cases against the stable-sort oracle.
        assert cls_rank(ClsLogits(values=np.array([3.0, 3.0, 1.0]), gt_label=1)).value == 2.0
        for _ in range(200):
            n = int(rng.integers(2, 10))
            values = rng.integers(0, 3, size=n).astype(float)
            gt = int(rng.integers(0, n))
            assert cls_rank(ClsLogits(values=values, gt_label=gt)).value == rank_oracle(
                values.tolist(), gt
            )

        # The 2x2 mIoU fixture.
        a = SegMask(labels=np.array([[0, 0], [1, 1]]), num_classes=2)
        b = SegMask(labels=np.array([[0, 1], [1, 1]]), num_classes=2)
        assert miou(a, b) == pytest.approx(7 / 12, abs=1e-15)
        for _ in range(20):
            am = rng.integers(0, 3, size=(4, 5))
            bm = rng.integers(0, 3, size=(4, 5))
            assert miou(
                SegMask(labels=am, num_classes=3), SegMask(labels=bm, num_classes=3)
            ) == pytest.approx(miou_oracle(am, bm, 3), abs=1e-12)

        # RMSE brute force.
        for _ in range(50):
            av = rng.random((4, 4))
            bv = rng.random((4, 4))
            expected = math.sqrt(
                math.fsum((x - y) ** 2 for x, y in zip(av.ravel(), bv.ravel())) / av.size
            )
            assert rmse(DepthMap(values=av), DepthMap(values=bv)) == pytest.approx(
                expected, rel=1e-12
            )

        # Identical predictions give exactly zero in every mode.
        seg = SegMask(labels=rng.integers(0, 3, size=(6, 6)), num_classes=3)
        ann = SegMask(labels=rng.integers(0, 3, size=(6, 6)), num_classes=3)
        assert delta_miou(seg, seg).value == 0.0
        assert delta_miou(seg, seg, annotation=ann, mode="annotation").value == 0.0
        dep = DepthMap(values=rng.random((5, 5)))
        dann = DepthMap(values=rng.random((5, 5)))
        assert delta_rmse(dep, dep).value == 0.0
        assert delta_rmse(dep, dep, annotation=dann, mode="annotation").value == 0.0


def test_link_simulator():
    with criterion("link simulator", 30.0):
        ladder = default_ladder(CodecKind.BLOCK_TRANSFORM, lowest_rate_first=True)
        corpus = [synth_feature(Task.SYNTHETIC, 700 + i) for i in range(8)]

        # Boundary threshold: exact value transmits.
        assert gate(QualityScore(Metric.COSINE, 0.9), 0.9) is Decision.TRANSMIT
        assert gate(QualityScore(Metric.MSE, 0.25), 0.25) is Decision.TRANSMIT

        # Exhaustion transmits the final ladder point.
        trace = simulate_session(
            corpus[0], GatePolicy(metric=Metric.MSE, threshold=0.0, ladder=ladder)
        )
        assert trace.reencode_count == len(ladder) - 1
        assert trace.attempts[-1].decision is Decision.TRANSMIT
        assert trace.attempts[-1].config == ladder[-1]

        # Always-pass threshold: total equals the sum of lowest-point bits.
        policy = GatePolicy(metric=Metric.MSE, threshold=1e9, ladder=ladder)
        summary = simulate_corpus(corpus, policy)
        lowest = sum(encode_matrix(flatten_2d(t), ladder[0])[1] for t in corpus)
        assert summary.total_transmitted_bits == lowest
        assert summary.first_attempt_pass_rate == 1.0

        # Corpus totals are the sum of independent sessions.
        policy = GatePolicy(metric=Metric.MSE, threshold=3e-5, ladder=ladder)
        summary = simulate_corpus(corpus, policy)
        traces = [simulate_session(t, policy) for t in corpus]
        assert summary.total_transmitted_bits == sum(t.transmitted_bits for t in traces)
        assert summary.bits_saved_vs_max >= 0


def test_pipeline_determinism(tmp_path):
    with criterion("pipeline determinism", 120.0):
        trees = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert (
                cli_main(
                    [
                        "compress",
                        "--task",
                        "Synthetic",
                        "--count",
                        "6",
                        "--seed",
                        "5",
                        "--codec",
                        "block",
                        "--out",
                        str(out),
                    ]
                )
                == 0
            )
            assert cli_main(["score", "--run", str(out)]) == 0
            assert cli_main(["label", "--run", str(out)]) == 0
            assert cli_main(["evaluate", "--run", str(out)]) == 0
            assert (
                cli_main(
                    [
                        "simulate",
                        "--task",
                        "Synthetic",
                        "--count",
                        "6",
                        "--seed",
                        "5",
                        "--metric",
                        "mse",
                        "--threshold",
                        "3e-5",
                        "--codec",
                        "block",
                        "--out",
                        str(out / "link"),
                    ]
                )
                == 0
            )
            tree = {
                str(p.relative_to(out)): p.read_bytes()
                for p in sorted(out.rglob("*"))
                if p.is_file()
            }
            trees.append(tree)
        assert trees[0].keys() == trees[1].keys()
        for key in trees[0]:
            assert trees[0][key] == trees[1][key], f"{key} differs between runs"
