import math

import numpy as np
import pytest

from cfqa import (
    CodecConfig,
    CodecKind,
    ConfigError,
    RangeError,
    Task,
    block_transform_encode,
    default_ladder,
    dequantize,
    latent_surrogate_encode,
    qstep,
    rate_ladder,
    synth_feature,
    uniform_quantize,
)
from cfqa._util import entropy_bits
from cfqa.codec import (
    QuantGrid,
    VALID_QPS,
    _orthonormal_transform,
    encode_matrix,
    load_record,
    save_record,
)

from conftest import random_tensor


class TestUniformQuantize:
    def test_endpoints(self):
        m = np.array([[-2.0, 0.0], [1.0, 2.0]])
        codes, grid = uniform_quantize(m)
        assert codes[0, 0] == 0
        assert codes[1, 1] == 1023
        assert grid.v_min == -2.0 and grid.v_max == 2.0

    def test_constant_matrix_collapses(self):
        m = np.full((3, 5), 7.25)
        codes, grid = uniform_quantize(m)
        assert not codes.any()
        assert grid.v_min == grid.v_max == 7.25
        assert (dequantize(codes, grid) == 7.25).all()

    def test_round_half_away_from_zero(self):
        # 0.5 quantization steps land exactly on half-integers: span 1023 over
        # codes 0..1023 makes value k/1023*span map to code k.
        m = np.array([[0.0, 0.5 / 1023.0, 1.5 / 1023.0, 1.0]])
        codes, _ = uniform_quantize(m)
        assert codes.tolist() == [[0, 1, 2, 1023]]

    def test_dequantize_endpoints(self):
        grid = QuantGrid(-1.5, 2.5)
        assert dequantize(np.array([0]), grid)[0] == -1.5
        assert dequantize(np.array([1023]), grid)[0] == 2.5

    def test_dequantize_range_check(self):
        with pytest.raises(RangeError):
            dequantize(np.array([1024]), QuantGrid(0.0, 1.0))
        with pytest.raises(RangeError):
            dequantize(np.array([-1]), QuantGrid(0.0, 1.0))

    def test_round_trip_bound_many_seeds(self):
        # Brute-force bound check: half a step plus float slack, 1000 seeds.
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            m = rng.standard_normal((16, 16)) * 10.0 ** rng.integers(-3, 4)
            codes, grid = uniform_quantize(m)
            err = np.abs(dequantize(codes, grid) - m).max()
            span = grid.v_max - grid.v_min
            assert err <= span / 2046 + 1e-7 * span


class TestQstep:
    def test_reference_points(self):
        assert qstep(4) == 1.0
        assert qstep(10) == 2.0
        assert qstep(16) == 4.0
        assert math.isclose(qstep(2), 2.0 ** (-1 / 3))


class TestBlockTransform:
    def test_invalid_qp(self):
        m = np.zeros((8, 8))
        for qp in (0, 3, 21, 22, -2):
            with pytest.raises(ConfigError):
                block_transform_encode(m, qp)

    def test_constant_matrix_exact_dc_only(self):
        m = np.full((13, 21), 4.5)  # also exercises padding
        for qp in (2, 12, 20):
            rec = block_transform_encode(m, qp)
            assert (rec.reconstruction.values == 4.5).all()
            assert rec.bitstream_bits == 64  # header only: zero entropy

    def test_distortion_qp2_below_qp20(self, rng):
        for _ in range(100):
            m = rng.standard_normal((24, 32))
            lo = block_transform_encode(m, 2).reconstruction.values.astype(np.float64)
            hi = block_transform_encode(m, 20).reconstruction.values.astype(np.float64)
            assert np.mean((lo - m) ** 2) <= np.mean((hi - m) ** 2)

    def test_bits_qp20_below_qp2(self, rng):
        for _ in range(20):
            m = rng.standard_normal((24, 32))
            assert (
                block_transform_encode(m, 20).bitstream_bits
                <= block_transform_encode(m, 2).bitstream_bits
            )

    def test_deterministic(self, rng):
        m = rng.standard_normal((16, 24))
        a = block_transform_encode(m, 8)
        b = block_transform_encode(m, 8)
        assert a.bitstream_bits == b.bitstream_bits
        assert a.reconstruction == b.reconstruction

    def test_reconstruction_finite_and_shaped(self, rng):
        m = rng.standard_normal((10, 18)) * 100
        rec = block_transform_encode(m, 6)
        assert rec.reconstruction.shape == (10, 18)
        assert np.isfinite(rec.reconstruction.values).all()
        assert rec.bpfp == rec.bitstream_bits / m.size

    def test_dct_matches_cosine_basis_oracle(self, rng):
        # scipy's DCT vs a direct type-II orthonormal cosine basis product.
        from scipy.fft import dctn

        basis = np.array(
            [
                [
                    math.sqrt((1 if k == 0 else 2) / 8) * math.cos((2 * n + 1) * k * math.pi / 16)
                    for n in range(8)
                ]
                for k in range(8)
            ]
        )
        block = rng.standard_normal((8, 8))
        direct = basis @ block @ basis.T
        assert np.abs(dctn(block, norm="ortho") - direct).max() <= 1e-10


class TestLatentSurrogate:
    def test_invalid_lambda_index(self):
        m = np.zeros((4, 8))
        for li in (-1, 10, 99):
            with pytest.raises(ConfigError):
                latent_surrogate_encode(m, li)

    def test_transform_orthonormal(self):
        for dim, seed in [(16, 0), (64, 1), (256, 17)]:
            q = _orthonormal_transform(dim, seed)
            assert np.abs(q @ q.T - np.eye(dim)).max() <= 1e-5

    def test_mse_ladder_monotone_extremes(self, rng):
        for _ in range(20):
            m = rng.standard_normal((12, 16))
            lo = latent_surrogate_encode(m, 0, seed=3).reconstruction.values.astype(np.float64)
            hi = latent_surrogate_encode(m, 9, seed=3).reconstruction.values.astype(np.float64)
            assert np.mean((lo - m) ** 2) <= np.mean((hi - m) ** 2)

    def test_deterministic(self, rng):
        m = rng.standard_normal((6, 12))
        a = latent_surrogate_encode(m, 4, seed=9)
        b = latent_surrogate_encode(m, 4, seed=9)
        assert a.bitstream_bits == b.bitstream_bits
        assert a.reconstruction == b.reconstruction

    def test_seed_changes_transform(self, rng):
        m = rng.standard_normal((6, 12))
        a = latent_surrogate_encode(m, 9, seed=1)
        b = latent_surrogate_encode(m, 9, seed=2)
        assert a.reconstruction != b.reconstruction

    def test_constant_input_lossless(self):
        m = np.full((5, 8), 3.0)
        rec = latent_surrogate_encode(m, 9, seed=0)
        assert (rec.reconstruction.values == 3.0).all()


class TestUniformEncode:
    def test_matches_quantize_dequantize(self, rng):
        m = rng.standard_normal((9, 11))
        m_hat, bits = encode_matrix(m, CodecConfig(kind=CodecKind.UNIFORM_ONLY))
        codes, grid = uniform_quantize(m)
        assert (m_hat == dequantize(codes, grid)).all()
        assert bits == 64 + math.ceil(entropy_bits(codes) * codes.size)


class TestRateLadder:
    def test_block_ladder_has_ten_points(self):
        t = random_tensor(np.random.default_rng(0), shape=(16, 24))
        records = rate_ladder(t, CodecKind.BLOCK_TRANSFORM, default_ladder(CodecKind.BLOCK_TRANSFORM))
        assert len(records) == 10
        assert [r.config.qp for r in records] == list(VALID_QPS)
        for r in records:
            assert r.feature_id == t.id
            assert r.reconstruction.shape == t.shape
            assert np.isfinite(r.reconstruction.values).all()

    def test_empty_points_rejected(self):
        t = random_tensor(np.random.default_rng(0))
        with pytest.raises(ConfigError):
            rate_ladder(t, CodecKind.BLOCK_TRANSFORM, [])

    def test_mixed_kinds_rejected(self):
        t = random_tensor(np.random.default_rng(0))
        points = [
            CodecConfig(kind=CodecKind.BLOCK_TRANSFORM, qp=2),
            CodecConfig(kind=CodecKind.LATENT_SURROGATE, lambda_index=0),
        ]
        with pytest.raises(ConfigError):
            rate_ladder(t, CodecKind.BLOCK_TRANSFORM, points)

    def test_bpfp_below_uncompressed_reference(self, rng):
        # 32 bits/value is the uncompressed float32 rate.
        for seed in range(10):
            t = random_tensor(np.random.default_rng(seed), shape=(16, 32), feature_id=f"f{seed}")
            records = rate_ladder(
                t, CodecKind.BLOCK_TRANSFORM, default_ladder(CodecKind.BLOCK_TRANSFORM)
            )
            assert all(r.bpfp < 32.0 for r in records)

    def test_multiaxis_shape_restored(self):
        t = synth_feature(Task.DPT, 0, dpt_tokens=3)
        records = rate_ladder(
            t, CodecKind.LATENT_SURROGATE, default_ladder(CodecKind.LATENT_SURROGATE)
        )
        assert len(records) == 10
        assert records[0].reconstruction.shape == (2, 4, 3, 1536)
        assert records[0].reconstruction.task is Task.DPT


class TestRecordSidecar:
    def test_round_trip(self, tmp_path, rng):
        m = rng.standard_normal((8, 16))
        rec = block_transform_encode(m, 6)
        rec.feature_id = "f1"
        rec.reconstruction.id = "f1"
        path = save_record(rec, tmp_path)
        assert path.name == "qp06.json"
        back = load_record(path)
        assert back.feature_id == "f1"
        assert back.config == rec.config
        assert back.bitstream_bits == rec.bitstream_bits
        assert back.bpfp == rec.bpfp
        assert (back.reconstruction.values == rec.reconstruction.values).all()

    def test_point_labels(self):
        assert CodecConfig(kind=CodecKind.BLOCK_TRANSFORM, qp=2).point_label == "qp02"
        assert CodecConfig(kind=CodecKind.LATENT_SURROGATE, lambda_index=7).point_label == "lam7"
        assert CodecConfig(kind=CodecKind.UNIFORM_ONLY).point_label == "uni"


class TestStatisticalMonotonicity:
    def test_mean_mse_and_bits_over_ladder(self):
        # Statistical form over 30 small random features (the acceptance
        # suite runs the full 100-feature sweep on synthetic features).
        n = 30
        mses = np.zeros((n, len(VALID_QPS)))
        bits = np.zeros((n, len(VALID_QPS)))
        for i in range(n):
            rng = np.random.default_rng(1000 + i)
            m = rng.standard_normal((16, 24))
            for j, qp in enumerate(VALID_QPS):
                rec = block_transform_encode(m, qp)
                mses[i, j] = np.mean(
                    (rec.reconstruction.values.astype(np.float64) - m) ** 2
                )
                bits[i, j] = rec.bitstream_bits
        mean_mse = mses.mean(axis=0)
        mean_bits = bits.mean(axis=0)
        assert (np.diff(mean_mse) >= 0).all()
        assert (np.diff(mean_bits) <= 0).all()
