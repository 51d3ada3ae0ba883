import numpy as np
import pytest

from mdaqa import exceptions, numkernel


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(numkernel.matmul(np.eye(2), m), m)

    def test_column(self):
        result = numkernel.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
        assert np.array_equal(result, np.array([[17.0], [39.0]]))

    def test_zero_annihilates(self):
        result = numkernel.matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4))
        assert result.shape == (2, 4)
        assert not result.any()

    def test_shape_mismatch(self):
        with pytest.raises(exceptions.ShapeError) as e:
            numkernel.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

        assert str(e.value) == "cannot multiply 2x3 by 2x3"

    def test_not_a_matrix(self):
        with pytest.raises(exceptions.ShapeError):
            numkernel.matmul(np.zeros(3), np.zeros((3, 1)))

    @pytest.mark.parametrize("seed", range(5))
    def test_associative(self, seed):
        gen = np.random.default_rng(seed)
        a, b, c = gen.normal(size=(3, 4)), gen.normal(size=(4, 5)), gen.normal(size=(5, 2))

        left = numkernel.matmul(numkernel.matmul(a, b), c)
        right = numkernel.matmul(a, numkernel.matmul(b, c))

        assert np.allclose(left, right, rtol=0, atol=1e-9)


class TestSigmoid:
    @pytest.mark.parametrize(
        ("value", "expected"),
        [
            (0.0, 0.5),
            (5.0, 0.9933071490757153),
            (-5.0, 0.0066928509242848554),
        ],
    )
    def test_values(self, value, expected):
        assert numkernel.sigmoid_vec([value])[0] == pytest.approx(expected, abs=1e-12)

    def test_symmetry(self):
        v = np.linspace(-40, 40, 161)
        assert np.allclose(numkernel.sigmoid_vec(v) + numkernel.sigmoid_vec(-v), 1.0, rtol=0, atol=1e-12)

    def test_saturates_without_overflow(self):
        with np.errstate(over="raise"):
            out = numkernel.sigmoid_vec([-1000.0, 1000.0])

        assert out[0] == 0.0
        assert out[1] == 1.0
        assert np.isfinite(out).all()


class TestSoftmaxPositions:
    def test_uniform(self):
        assert np.allclose(numkernel.softmax_positions([0.0, 0.0, 0.0], range(3)), [1 / 3] * 3)

    def test_two_positions(self):
        out = numkernel.softmax_positions([1.0, 0.0], range(2))
        assert out[0] == pytest.approx(np.e / (np.e + 1), abs=1e-12)
        assert out[1] == pytest.approx(1 / (np.e + 1), abs=1e-12)

    def test_masked(self):
        out = numkernel.softmax_positions([9.0, 9.0, 9.0], range(1, 3))
        assert out.tolist() == [0.0, 0.5, 0.5]

    @pytest.mark.parametrize("seed", range(5))
    def test_sums_to_one_and_shift_invariant(self, seed):
        logits = np.random.default_rng(seed).normal(scale=20, size=10)
        valid = range(2, 9)

        out = numkernel.softmax_positions(logits, valid)
        shifted = logits.copy()
        shifted[2:9] += 123.0

        assert abs(out.sum() - 1.0) < 1e-12
        assert np.allclose(out, numkernel.softmax_positions(shifted, valid), rtol=0, atol=1e-9)

    def test_empty_range(self):
        with pytest.raises(exceptions.DomainError):
            numkernel.softmax_positions([1.0, 2.0], range(1, 1))

    def test_range_out_of_bounds(self):
        with pytest.raises(exceptions.DomainError):
            numkernel.softmax_positions([1.0, 2.0], range(0, 3))


class TestSampleUniform:
    def test_deterministic(self):
        a = numkernel.sample_uniform(numkernel.SeededRng(7), -0.5, 0.5, 3)
        b = numkernel.sample_uniform(numkernel.SeededRng(7), -0.5, 0.5, 3)

        assert np.array_equal(a, b)

    def test_range(self):
        out = numkernel.sample_uniform(numkernel.SeededRng(7), -0.5, 0.5, 1000)
        assert (out >= -0.5).all()
        assert (out < 0.5).all()

    def test_mean(self):
        out = numkernel.sample_uniform(numkernel.SeededRng(7), -0.5, 0.5, 10000)
        assert abs(out.mean()) < 0.02

    @pytest.mark.parametrize(("lo", "hi"), [(1.0, 1.0), (2.0, 1.0)])
    def test_empty_interval(self, lo, hi):
        with pytest.raises(exceptions.DomainError):
            numkernel.sample_uniform(numkernel.SeededRng(7), lo, hi, 3)


class TestSeededRng:
    def test_streams_are_independent(self):
        rng = numkernel.SeededRng(3)
        a = rng.stream("data").generator.random(4)
        b = rng.stream("init").generator.random(4)

        assert not np.array_equal(a, b)

    def test_stream_is_reproducible(self):
        a = numkernel.SeededRng(3).stream("data").generator.random(4)
        b = numkernel.SeededRng(3).stream("data").generator.random(4)

        assert np.array_equal(a, b)

    def test_derive_seed(self):
        rng = numkernel.SeededRng(3)
        seed = rng.derive_seed("repeat-0")

        assert seed == numkernel.SeededRng(3).derive_seed("repeat-0")
        assert seed != rng.derive_seed("repeat-1")
        assert 0 <= seed < 2**63

    def test_negative_seed(self):
        with pytest.raises(exceptions.DomainError):
            numkernel.SeededRng(-1)

    def test_repr(self):
        assert repr(numkernel.SeededRng(3).stream("data")) == "SeededRng(seed=3, stream=data)"
