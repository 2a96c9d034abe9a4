import math

import numpy as np
import pytest
import torch

import oracles
from conftest import random_instance
from terrainseg.errors import AllPixelsIgnoredError, ShapeMismatchError
from terrainseg.losses import (
    FrequencyScope,
    LossConfig,
    LossKind,
    RunningRecall,
    batch_class_stats,
    combined_loss,
    compute_loss,
    cross_entropy,
    inverse_frequency_ce,
    recall_ce,
)
from terrainseg.taxonomy import IGNORE_VALUE

LOSS_FNS = {
    LossKind.CE: lambda lg, tg: cross_entropy(lg, tg),
    LossKind.INV_FREQ: lambda lg, tg: inverse_frequency_ce(lg, tg),
    LossKind.RECALL: lambda lg, tg: recall_ce(lg, tg),
    LossKind.INV_FREQ_PLUS_RECALL: lambda lg, tg: combined_loss(lg, tg),
}

ORACLE_FNS = {
    LossKind.CE: oracles.ce_loss,
    LossKind.INV_FREQ: oracles.inv_freq_loss,
    LossKind.RECALL: oracles.recall_loss,
    LossKind.INV_FREQ_PLUS_RECALL: oracles.combined_weighted_loss,
}


def _tensors(logits, target):
    return torch.from_numpy(np.asarray(logits)), torch.from_numpy(np.asarray(target))


class TestCrossEntropy:
    def test_perfect_prediction_tends_to_zero(self):
        target = torch.zeros((1, 2, 2), dtype=torch.long)
        logits = torch.zeros((1, 3, 2, 2), dtype=torch.float64)
        logits[:, 0] = 50.0
        assert cross_entropy(logits, target).item() < 1e-9

    def test_uniform_logits_four_classes(self):
        logits = torch.zeros((1, 4, 3, 3), dtype=torch.float64)
        target = torch.randint(0, 4, (1, 3, 3))
        assert cross_entropy(logits, target).item() == pytest.approx(math.log(4), rel=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        logits, target = random_instance(rng, batch=1, size=3, num_classes=3, ignore_fraction=0)
        lg, tg = _tensors(logits, target)
        expected = oracles.ce_loss(logits.tolist(), target.tolist())
        assert cross_entropy(lg, tg).item() == pytest.approx(expected, rel=1e-6)

    def test_all_ignored_raises(self):
        logits = torch.zeros((1, 3, 2, 2), dtype=torch.float64)
        target = torch.full((1, 2, 2), IGNORE_VALUE, dtype=torch.long)
        with pytest.raises(AllPixelsIgnoredError):
            cross_entropy(logits, target)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            cross_entropy(torch.zeros((1, 3, 2, 2)), torch.zeros((1, 3, 3), dtype=torch.long))


class TestInverseFrequency:
    def test_balanced_batch_equals_ce(self):
        rng = np.random.default_rng(1)
        logits = torch.from_numpy(rng.normal(size=(1, 2, 4, 4)))
        target = torch.tensor([[0, 1] * 2, [1, 0] * 2] * 2).unsqueeze(0)
        ce = cross_entropy(logits, target).item()
        inv = inverse_frequency_ce(logits, target).item()
        assert inv == pytest.approx(ce, rel=1e-6)

    def test_single_class_batch_equals_ce(self):
        rng = np.random.default_rng(2)
        logits = torch.from_numpy(rng.normal(size=(1, 3, 4, 4)))
        target = torch.full((1, 4, 4), 2, dtype=torch.long)
        assert inverse_frequency_ce(logits, target).item() == pytest.approx(
            cross_entropy(logits, target).item(), rel=1e-6)

    def test_90_10_weight_ratio(self):
        # minority carries 9x the raw per-pixel weight before normalization
        counts = [90, 10]
        weights = oracles.inv_freq_weights(counts)
        assert weights[1] / weights[0] == pytest.approx(9.0, rel=1e-6)

        rng = np.random.default_rng(3)
        logits = torch.from_numpy(rng.normal(size=(1, 2, 10, 10)))
        target = torch.zeros((1, 10, 10), dtype=torch.long)
        target.view(-1)[:10] = 1
        expected = oracles.inv_freq_loss(logits.numpy().tolist(), target.numpy().tolist())
        assert inverse_frequency_ce(logits, target).item() == pytest.approx(expected, rel=1e-6)

    def test_corpus_frequency_scope(self):
        rng = np.random.default_rng(4)
        logits = torch.from_numpy(rng.normal(size=(1, 2, 4, 4)))
        target = torch.randint(0, 2, (1, 4, 4))
        config = LossConfig(kind=LossKind.INV_FREQ,
                            frequency_scope=FrequencyScope.CORPUS,
                            corpus_frequencies=(0.5, 0.5))
        # equal corpus frequencies -> uniform weights -> plain CE
        assert inverse_frequency_ce(logits, target, config).item() == pytest.approx(
            cross_entropy(logits, target).item(), rel=1e-6)


class TestRecallCE:
    def _all_wrong(self):
        # logits always favor class 0, targets always class 1
        logits = torch.zeros((1, 2, 3, 3), dtype=torch.float64)
        logits[:, 0] = 3.0
        target = torch.ones((1, 3, 3), dtype=torch.long)
        return logits, target

    def test_all_wrong_equals_ce_exactly(self):
        logits, target = self._all_wrong()
        assert recall_ce(logits, target).item() == cross_entropy(logits, target).item()

    def test_all_correct_is_zero(self):
        logits = torch.zeros((1, 2, 3, 3), dtype=torch.float64)
        logits[:, 1] = 3.0
        target = torch.ones((1, 3, 3), dtype=torch.long)
        assert recall_ce(logits, target).item() == 0.0

    def test_mixed_recall_weights_against_oracle(self):
        # class 0: recall 0.5, class 1: recall 1.0 on a hand-built 4x4 batch
        logits = torch.zeros((1, 2, 4, 4), dtype=torch.float64)
        target = torch.zeros((1, 4, 4), dtype=torch.long)
        target[0, 2:] = 1
        logits[0, 1, :1] = 2.0   # first row of class-0 pixels predicted wrong
        logits[0, 0, 1:2] = 2.0  # second row right
        logits[0, 1, 2:] = 2.0   # class-1 pixels right
        stats = batch_class_stats(logits, target, 2)
        assert stats.recall.tolist() == [0.5, 1.0]
        expected = oracles.recall_loss(logits.numpy().tolist(), target.numpy().tolist(),
                                       recalls=[0.5, 1.0])
        assert recall_ce(logits, target).item() == pytest.approx(expected, rel=1e-6)

    def test_no_gradient_through_recall_weights(self):
        rng = np.random.default_rng(5)
        logits = torch.from_numpy(rng.normal(size=(1, 3, 4, 4))).requires_grad_(True)
        target = torch.from_numpy(rng.integers(0, 3, size=(1, 4, 4)))
        loss = recall_ce(logits, target)
        loss.backward()
        assert logits.grad is not None and torch.isfinite(logits.grad).all()


class TestCombined:
    def test_balanced_batch_equals_recall_ce(self):
        rng = np.random.default_rng(6)
        logits = torch.from_numpy(rng.normal(size=(1, 2, 4, 4)))
        target = torch.tensor([[0, 1] * 2, [1, 0] * 2] * 2).unsqueeze(0)
        assert combined_loss(logits, target).item() == pytest.approx(
            recall_ce(logits, target).item(), rel=1e-6)

    def test_all_wrong_equals_inverse_frequency(self):
        logits = torch.zeros((1, 2, 4, 4), dtype=torch.float64)
        logits[:, 0] = 3.0
        target = torch.ones((1, 4, 4), dtype=torch.long)
        target[0, 0, 0] = 0  # two classes present, every prediction wrong...
        logits[0, 1, 0, 0] = 6.0  # ...including the lone class-0 pixel
        assert combined_loss(logits, target).item() == pytest.approx(
            inverse_frequency_ce(logits, target).item(), rel=1e-6)

    def test_generic_batch_against_composed_oracle(self):
        rng = np.random.default_rng(7)
        logits, target = random_instance(rng, batch=2, size=4, num_classes=3,
                                         ignore_fraction=0.1)
        lg, tg = _tensors(logits, target)
        expected = oracles.combined_weighted_loss(logits.tolist(), target.tolist())
        assert combined_loss(lg, tg).item() == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize("kind", list(LossKind))
class TestSharedProperties:
    def test_oracle_equivalence_random_instances(self, kind):
        rng = np.random.default_rng(hash(kind) % 2**32)
        for c in (3, 4, 6):
            for _ in range(5):
                logits, target = random_instance(rng, batch=2, size=8, num_classes=c,
                                                 ignore_fraction=0.1)
                lg, tg = _tensors(logits, target)
                got = LOSS_FNS[kind](lg, tg).item()
                expected = ORACLE_FNS[kind](logits.tolist(), target.tolist())
                assert got == pytest.approx(expected, rel=1e-6)

    def test_gradient_matches_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        logits, target = random_instance(rng, batch=1, size=4, num_classes=3,
                                         ignore_fraction=0.1)
        lg = torch.from_numpy(logits).requires_grad_(True)
        tg = torch.from_numpy(target)
        stats = batch_class_stats(lg, tg, 3)

        def f(t):
            if kind is LossKind.CE:
                return cross_entropy(t, tg)
            if kind is LossKind.INV_FREQ:
                return inverse_frequency_ce(t, tg)
            if kind is LossKind.RECALL:
                return recall_ce(t, tg, stats=stats)
            return combined_loss(t, tg, stats=stats)

        loss = f(lg)
        (analytic,) = torch.autograd.grad(loss, lg)
        h = 1e-3
        flat = lg.detach().clone().view(-1)
        fd = torch.zeros_like(flat)
        for i in range(flat.numel()):
            for sign, store in ((1, 1), (-1, -1)):
                bumped = flat.clone()
                bumped[i] += sign * h
                fd[i] += store * f(bumped.view_as(lg)).item()
        fd = (fd / (2 * h)).view_as(analytic)
        scale = analytic.abs().clamp(min=1e-6)
        assert ((analytic - fd).abs() / scale).max().item() < 1e-4

    def test_ignored_pixels_affect_nothing(self, kind):
        rng = np.random.default_rng(13)
        logits, target = random_instance(rng, batch=1, size=4, num_classes=3,
                                         ignore_fraction=0.3)
        assert (target == IGNORE_VALUE).any()
        lg = torch.from_numpy(logits).requires_grad_(True)
        tg = torch.from_numpy(target)
        loss = LOSS_FNS[kind](lg, tg)
        (grad,) = torch.autograd.grad(loss, lg)

        perturbed = logits.copy()
        ignore_mask = target == IGNORE_VALUE
        perturbed[0][:, ignore_mask[0]] += 100.0
        lg2 = torch.from_numpy(perturbed).requires_grad_(True)
        loss2 = LOSS_FNS[kind](lg2, tg)
        (grad2,) = torch.autograd.grad(loss2, lg2)

        assert loss.item() == loss2.item()
        assert torch.equal(grad, grad2)
        assert (grad[0][:, ignore_mask[0]] == 0).all()

    def test_permutation_invariance(self, kind):
        rng = np.random.default_rng(17)
        logits, target = random_instance(rng, batch=1, size=4, num_classes=3,
                                         ignore_fraction=0.1)
        lg, tg = _tensors(logits, target)
        base = LOSS_FNS[kind](lg, tg).item()
        perm = rng.permutation(16)
        lg_p = lg.view(1, 3, -1)[:, :, perm].view(1, 3, 4, 4)
        tg_p = tg.view(1, -1)[:, perm].view(1, 4, 4)
        assert LOSS_FNS[kind](lg_p, tg_p).item() == pytest.approx(base, rel=1e-9)

    def test_nonnegative(self, kind):
        rng = np.random.default_rng(19)
        logits, target = random_instance(rng, batch=1, size=5, num_classes=4,
                                         ignore_fraction=0.1)
        lg, tg = _tensors(logits, target)
        assert LOSS_FNS[kind](lg, tg).item() >= 0


def test_compute_loss_dispatch():
    rng = np.random.default_rng(23)
    logits, target = random_instance(rng, batch=1, size=4, num_classes=3, ignore_fraction=0)
    lg, tg = _tensors(logits, target)
    for kind in LossKind:
        direct = LOSS_FNS[kind](lg, tg).item()
        dispatched = compute_loss(lg, tg, LossConfig(kind=kind)).item()
        assert dispatched == pytest.approx(direct, rel=1e-12)


def test_running_recall_blends_across_updates():
    tracker = RunningRecall(num_classes=2, momentum=0.5)
    logits = torch.zeros((1, 2, 2, 2), dtype=torch.float64)
    logits[:, 1] = 2.0
    target = torch.ones((1, 2, 2), dtype=torch.long)
    stats = batch_class_stats(logits, target, 2)
    blended = tracker.update(stats)
    assert blended.recall[1].item() == pytest.approx(1.0)
    # second batch all wrong for class 1 -> running recall halves
    logits2 = torch.zeros((1, 2, 2, 2), dtype=torch.float64)
    logits2[:, 0] = 2.0
    stats2 = batch_class_stats(logits2, target, 2)
    blended2 = tracker.update(stats2)
    assert blended2.recall[1].item() == pytest.approx(0.5, abs=1e-5)
