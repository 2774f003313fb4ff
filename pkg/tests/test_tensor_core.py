"""Dense kernels against loop references, plus the weight manifest format."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lidarmos import tensor_core as tc
from lidarmos.errors import FormatError, IoError, ShapeError

import reference as ref


class TestConv2d:
    def test_pointwise_identity(self, rng):
        x = rng.normal(size=(3, 5, 6))
        np.testing.assert_array_equal(tc.conv2d(x, np.eye(3)[:, :, None, None]), x)

    def test_delta_kernel(self, rng):
        x = rng.normal(size=(2, 5, 6))
        k = np.zeros((2, 2, 3, 3))
        k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1.0
        np.testing.assert_array_equal(tc.conv2d(x, k), x)

    @pytest.mark.parametrize("ks", [1, 3])
    def test_loop_oracle(self, rng, ks):
        x = rng.normal(size=(4, 8, 8))
        k = rng.normal(size=(5, 4, ks, ks))
        b = rng.normal(size=5)
        np.testing.assert_allclose(tc.conv2d(x, k, b), ref.conv2d(x, k, b), rtol=1e-6, atol=1e-12)

    def test_shifted_tap_is_cross_correlation(self):
        x = np.zeros((1, 3, 3))
        x[0, 1, 2] = 1.0
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 2] = 1.0  # reads the right-hand neighbour
        out = tc.conv2d(x, k)
        assert out[0, 1, 1] == 1.0 and out.sum() == 1.0

    def test_superposition(self, rng):
        a, b = rng.normal(size=(2, 3, 6, 7))
        k = rng.normal(size=(2, 3, 3, 3))
        np.testing.assert_allclose(tc.conv2d(2 * a - 3 * b, k), 2 * tc.conv2d(a, k) - 3 * tc.conv2d(b, k),
                                   atol=1e-6)

    def test_deterministic(self, rng):
        x, k = rng.normal(size=(3, 9, 9)), rng.normal(size=(2, 3, 3, 3))
        assert tc.conv2d(x, k).tobytes() == tc.conv2d(x.copy(), k.copy()).tobytes()

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            tc.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))
        with pytest.raises(ShapeError):
            tc.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 2, 5, 5)))
        with pytest.raises(ShapeError):
            tc.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 2, 1, 1)), np.zeros(2))


class TestActivations:
    def test_sigmoid_zero(self):
        assert tc.activation(0.0, "sigmoid") == 0.5

    def test_single_channel_softmax(self, rng):
        np.testing.assert_array_equal(tc.activation(rng.normal(size=(1, 4, 4)), "channel_softmax"), 1.0)

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5)),
                      elements=st.floats(-50, 50)))
    def test_softmax_normalised(self, x):
        s = tc.channel_softmax(x)
        assert np.all(s > 0)
        assert np.abs(s.sum(axis=0) - 1.0).max() <= 1e-9

    def test_sigmoid_extremes_finite(self):
        out = tc.sigmoid(np.array([-1000.0, 1000.0]))
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_unknown(self):
        with pytest.raises(ValueError):
            tc.activation(1.0, "relu")


class TestPool:
    def test_constant(self):
        x = np.full((2, 4, 6), 3.5)
        np.testing.assert_array_equal(tc.pool(x, "max2x2"), 3.5)
        np.testing.assert_array_equal(tc.pool(x, "global_avg"), 3.5)

    def test_block(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        assert tc.max_pool2x2(x)[0, 0, 0] == 4.0

    def test_loop_oracle(self, rng):
        x = rng.normal(size=(3, 8, 10))
        np.testing.assert_array_equal(tc.max_pool2x2(x), ref.max_pool2x2(x))

    def test_global_avg_shape(self, rng):
        x = rng.normal(size=(3, 4, 5))
        out = tc.global_avg_pool(x)
        assert out.shape == (3, 1, 1)
        np.testing.assert_allclose(out[:, 0, 0], [x[c].sum() / 20 for c in range(3)], rtol=1e-12)

    def test_odd_dims(self):
        with pytest.raises(ShapeError):
            tc.max_pool2x2(np.zeros((1, 3, 4)))


class TestBilinear:
    def test_integer_sites(self, rng):
        src = rng.normal(size=(2, 5, 7))
        ys, xs = np.mgrid[0:5, 0:7]
        nx, ny = tc.normalize_coords(xs, ys, 7, 5)
        np.testing.assert_allclose(tc.bilinear_sample(src, np.stack([nx, ny])), src, atol=1e-12)

    def test_outside_is_zero(self, rng):
        src = rng.normal(size=(2, 5, 7))
        coords = np.full((2, 3, 3), 3.0)
        np.testing.assert_array_equal(tc.bilinear_sample(src, coords), 0.0)

    def test_loop_oracle(self, rng):
        src = rng.normal(size=(3, 6, 9))
        coords = rng.uniform(-1.3, 1.3, (2, 7, 5))
        np.testing.assert_allclose(tc.bilinear_sample(src, coords), ref.bilinear_sample(src, coords), atol=1e-6)

    def test_non_finite(self):
        with pytest.raises(ShapeError):
            tc.bilinear_sample(np.zeros((1, 2, 2)), np.full((2, 1, 1), np.nan))

    def test_resize_identity(self, rng):
        x = rng.normal(size=(2, 4, 5))
        np.testing.assert_allclose(tc.resize_bilinear(x, 4, 5), x, atol=1e-15)

    def test_resize_constant(self):
        np.testing.assert_allclose(tc.resize_bilinear(np.full((1, 3, 4), 2.0), 7, 9), 2.0)


class TestWeights:
    def test_empty_manifest(self, tmp_path):
        (tmp_path / "w.json").write_text(json.dumps({"blob": "w.bin", "dtype": "<f4", "tensors": []}))
        assert tc.load_weights(tmp_path / "w.json") == {}

    def test_round_trip_bit_exact(self, tmp_path, rng):
        tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b.c": rng.normal(size=(2, 2, 3, 3)),
                   "scalar": np.array(1.5)}
        tc.save_weights(tmp_path / "w.json", tensors)
        back = tc.load_weights(tmp_path / "w.json")
        for k, v in tensors.items():
            assert back[k].shape == np.shape(v)
            assert back[k].tobytes() == np.asarray(v, dtype="<f4").tobytes()
            assert not back[k].flags.writeable

    def test_wrong_byte_length(self, tmp_path, rng):
        tc.save_weights(tmp_path / "w.json", {"a": rng.normal(size=(3, 4))})
        m = json.loads((tmp_path / "w.json").read_text())
        m["tensors"][0]["nbytes"] = 40
        (tmp_path / "w.json").write_text(json.dumps(m))
        with pytest.raises(FormatError):
            tc.load_weights(tmp_path / "w.json")

    def test_offset_past_blob(self, tmp_path, rng):
        tc.save_weights(tmp_path / "w.json", {"a": rng.normal(size=(3,))})
        m = json.loads((tmp_path / "w.json").read_text())
        m["tensors"][0]["offset"] = 8
        (tmp_path / "w.json").write_text(json.dumps(m))
        with pytest.raises(FormatError):
            tc.load_weights(tmp_path / "w.json")

    def test_missing(self, tmp_path):
        with pytest.raises(IoError):
            tc.load_weights(tmp_path / "none.json")
