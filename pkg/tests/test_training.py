import dataclasses

import numpy as np
import pytest

from mdaqa import exceptions, training
from mdaqa import mask as mask_module
from mdaqa.context import Context
from mdaqa.mask import MaskSnapshot, ParamGrads
from mdaqa.model import QAModel
from mdaqa.qa_task import SpanLabel
from mdaqa.testing import numerical_gradient
from mdaqa.training import OptimizerConfig


class TestQaLoss:
    def test_confident_correct(self):
        logits = np.zeros((5, 2))
        logits[1, 0] = 100.0
        logits[3, 1] = 100.0

        loss, _ = training.qa_loss(logits, SpanLabel(1, 3), np.zeros(4), lam=0.75)

        assert loss.ce < 1e-10

    def test_uniform(self):
        loss, _ = training.qa_loss(np.zeros((10, 2)), SpanLabel(2, 4), np.zeros(4), lam=0.75)
        assert loss.ce == pytest.approx(np.log(10), abs=1e-12)

    @pytest.mark.parametrize(("mask", "expected"), [(np.ones(4), 0.75), (np.zeros(4), 0.0), (np.full(4, 0.5), 0.375)])
    def test_sparsity(self, mask, expected):
        loss, _ = training.qa_loss(np.zeros((3, 2)), SpanLabel(0, 0), mask, lam=0.75)

        assert loss.sparsity == pytest.approx(expected, abs=1e-15)
        assert loss.total == loss.ce + loss.sparsity

    def test_gold_outside_context(self):
        with pytest.raises(exceptions.LabelError):
            training.qa_loss(np.zeros((6, 2)), SpanLabel(1, 3), np.zeros(2), lam=0.0, context=range(2, 5))

    def test_gold_reversed(self):
        with pytest.raises(exceptions.LabelError):
            training.qa_loss(np.zeros((6, 2)), SpanLabel(3, 2), np.zeros(2), lam=0.0)

    def test_context_restricts_softmax(self):
        logits = np.random.default_rng(0).normal(size=(6, 2))

        _, grad = training.qa_loss(logits, SpanLabel(2, 3), np.zeros(2), lam=0.0, context=range(2, 5))

        assert not grad[[0, 1, 5]].any()

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        logits = np.random.default_rng(seed).normal(size=(7, 2))
        gold = SpanLabel(1, 4)

        _, grad = training.qa_loss(logits, gold, np.zeros(3), lam=0.5)
        numeric = numerical_gradient(lambda: training.qa_loss(logits, gold, np.zeros(3), lam=0.5)[0].total, logits)

        assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-7)


class TestOptimizerConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"lr_mask": 0.0}, {"lr_encoder": -1.0}, {"lam": -0.1}, {"batch_size": 0}, {"epochs": -1}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(exceptions.InvalidConfigurationError):
            OptimizerConfig(**kwargs)

    def test_learning_rate_groups(self):
        cfg = OptimizerConfig(lr_mask=0.3, lr_encoder=0.02)

        assert cfg.learning_rate("mask.W_f") == 0.3
        assert cfg.learning_rate("encoder.E") == 0.02


class TestApplyUpdates:
    def test_zero_grads(self, tiny_shape):
        model = QAModel.initialise(tiny_shape, seed=0)
        before = {key: value.copy() for key, value in model.parameters().items()}
        zeros = ParamGrads({key: np.zeros_like(value) for key, value in before.items()})

        training.apply_updates(model, zeros, OptimizerConfig())

        for key, value in model.parameters().items():
            assert np.array_equal(value, before[key])

    def test_scalar_step(self, tiny_shape):
        model = QAModel.initialise(tiny_shape, seed=0)
        model.mask.b_h[:] = 1.0

        training.apply_updates(model, ParamGrads({"mask.b_h": np.array([0.5, 0.5])}), OptimizerConfig(lr_mask=0.1))

        assert model.mask.b_h.tolist() == pytest.approx([0.95, 0.95])

    def test_encoder_learning_rate(self, tiny_shape):
        model = QAModel.initialise(tiny_shape, seed=0)
        before = model.encoder.b_e.copy()

        grads = ParamGrads({"encoder.b_e": np.ones_like(before)})
        training.apply_updates(model, grads, OptimizerConfig(lr_mask=0.5, lr_encoder=0.01))

        assert np.allclose(model.encoder.b_e, before - 0.01, rtol=0, atol=1e-15)

    def test_gated_step_is_exact(self, tiny_shape):
        model = QAModel.initialise(tiny_shape, seed=0)
        b = tiny_shape.bottleneck
        snap = MaskSnapshot(np.array([1.0, 0.0, 0.25, 0.999, 0.5]))
        gen = np.random.default_rng(1)
        raw = ParamGrads(
            {"mask.W_f": gen.normal(size=(b, tiny_shape.feature_dim)), "mask.W_h": gen.normal(size=(2, b))},
        )
        w_f, w_h = model.mask.W_f.copy(), model.mask.W_h.copy()
        cfg = OptimizerConfig(lr_mask=0.1)

        training.apply_updates(model, raw, cfg, gate=snap)

        keep = 1.0 - snap.values
        assert np.allclose(model.mask.W_f - w_f, -0.1 * keep[:, None] * raw["mask.W_f"], rtol=0, atol=1e-12)
        assert np.allclose(model.mask.W_h - w_h, -0.1 * keep[None, :] * raw["mask.W_h"], rtol=0, atol=1e-12)
        assert np.array_equal(model.mask.W_f[0], w_f[0])
        assert np.array_equal(model.mask.W_h[:, 0], w_h[:, 0])

    def test_shape_mismatch(self, tiny_shape):
        model = QAModel.initialise(tiny_shape, seed=0)

        with pytest.raises(exceptions.ShapeError):
            training.apply_updates(model, ParamGrads({"mask.b_h": np.zeros(3)}), OptimizerConfig())

    def test_invalidates_forward_cache(self, tiny_shape, tiny_sample):
        model = QAModel.initialise(tiny_shape, seed=0)
        fwd = model.forward(tiny_sample)

        training.apply_updates(model, ParamGrads(), OptimizerConfig())

        with pytest.raises(exceptions.UsageError):
            model.backward(fwd, np.zeros_like(fwd.logits))


class TestBatchGradients:
    def test_no_sparsity_when_lam_zero(self, small_model, small_corpus):
        batch = [(s, s.answer) for s in small_corpus[:4]]

        grads, loss = training.batch_gradients(small_model, batch, lam=0.0)

        data_only = ParamGrads()
        for sample, label in batch:
            fwd = small_model.forward(sample)
            _, grad_logits = training.qa_loss(fwd.logits, label, mask_module.mask_values(small_model.mask), 0.0)
            data_only.add_(small_model.backward(fwd, grad_logits))

        assert loss.sparsity == 0.0
        assert np.allclose(grads["mask.N"], data_only["mask.N"] / 4, rtol=0, atol=1e-15)

    def test_sparsity_gradient_added(self, small_model, small_corpus):
        batch = [(s, s.answer) for s in small_corpus[:4]]

        with_lam, _ = training.batch_gradients(small_model, batch, lam=0.75)
        without, _ = training.batch_gradients(small_model, batch, lam=0.0)

        expected = mask_module.sparsity_grad(small_model.mask, 0.75)
        assert np.allclose(with_lam["mask.N"] - without["mask.N"], expected, rtol=0, atol=1e-12)


class TestTrainSource:
    def cfg(self, **kwargs):
        defaults = {"lr_mask": 0.5, "lr_encoder": 0.1, "lam": 0.75, "batch_size": 8, "epochs": 3, "seed": 2}
        return OptimizerConfig(**{**defaults, **kwargs})

    def test_no_epochs_is_noop(self, small_shape, small_corpus):
        model = QAModel.initialise(small_shape, seed=3)
        initial = {key: value.copy() for key, value in model.parameters().items()}
        initial_mask = mask_module.mask_values(model.mask)

        model, snapshot, log = training.train_source(model, small_corpus, self.cfg(epochs=0))

        for key, value in model.parameters().items():
            assert np.array_equal(value, initial[key])
        assert np.array_equal(snapshot.values, initial_mask)
        assert log.epochs == []

    def test_deterministic(self, small_shape, small_corpus):
        a, snap_a, log_a = training.train_source(QAModel.initialise(small_shape, 3), small_corpus, self.cfg())
        b, snap_b, log_b = training.train_source(QAModel.initialise(small_shape, 3), small_corpus, self.cfg())

        for key, value in a.parameters().items():
            assert np.array_equal(value, b.parameters()[key])
        assert snap_a == snap_b
        assert log_a == log_b

    def test_log(self, small_model, small_corpus, cwd):
        _, _, log = training.train_source(small_model, small_corpus, self.cfg())

        assert [e.epoch for e in log.epochs] == [1, 2, 3]
        for e in log.epochs:
            assert e.loss.total == pytest.approx(e.loss.ce + e.loss.sparsity, abs=1e-12)
            assert 0 <= e.active_fraction <= 1

        p = log.to_csv(cwd / "log.csv")
        lines = p.read_text().splitlines()
        assert lines[0] == "epoch,ce,sparsity,total,active_fraction"
        assert len(lines) == 4

    def test_loss_improves(self, small_model, small_corpus):
        _, _, log = training.train_source(small_model, small_corpus, self.cfg(epochs=20))
        assert log.epochs[-1].loss.total < log.epochs[0].loss.total

    def test_sparsity_pressure(self, small_shape, small_corpus):
        sparse, _, _ = training.train_source(
            QAModel.initialise(small_shape, 3), small_corpus, self.cfg(lam=10.0, epochs=5)
        )
        dense, _, _ = training.train_source(
            QAModel.initialise(small_shape, 3), small_corpus, self.cfg(lam=0.0, epochs=5)
        )

        assert mask_module.mask_values(sparse.mask).mean() < mask_module.mask_values(dense.mask).mean()
        assert mask_module.active_fraction(sparse.mask) <= mask_module.active_fraction(dense.mask)

    def test_without_mask(self, small_shape, small_corpus):
        model = QAModel.initialise(dataclasses.replace(small_shape, use_mask=False), 3)

        model, snapshot, log = training.train_source(model, small_corpus, self.cfg())

        assert snapshot is None
        assert all(e.loss.sparsity == 0.0 for e in log.epochs)
        assert mask_module.mask_values(model.mask).tolist() == [1.0] * small_shape.bottleneck

    def test_unlabelled(self, small_model, small_corpus):
        data = [*small_corpus[:3], small_corpus[3].unlabelled()]

        with pytest.raises(exceptions.DataError) as e:
            training.train_source(small_model, data, self.cfg())

        assert str(e.value) == f"sample {small_corpus[3].id!r} has no answer label"

    def test_empty(self, small_model):
        with pytest.raises(exceptions.DataError):
            training.train_source(small_model, [], self.cfg())

    def test_reports_progress(self, small_model, small_corpus, capsys):
        training.train_source(small_model, small_corpus, self.cfg(epochs=2), context=Context(2))

        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("epoch 1: ce=")

    def test_quiet_by_default(self, small_model, small_corpus, capsys):
        training.train_source(small_model, small_corpus, self.cfg(epochs=1))
        assert capsys.readouterr().out == ""
