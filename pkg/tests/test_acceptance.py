"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Fast criteria are pure oracle/property checks; the two training criteria run
the real pipeline end to end on synthetic data with the TOY backbone.
"""
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

import oracles
from conftest import make_pool, random_instance
from terrainseg.composition import (
    CompositionSpec,
    LabelFractionSpec,
    compose_mixed,
    round_half_up,
    sample_label_fraction,
)
from terrainseg.expconfig import validate_config
from terrainseg.ingest import PreprocessSpec
from terrainseg.losses import (
    LossKind,
    batch_class_stats,
    combined_loss,
    cross_entropy,
    inverse_frequency_ce,
    recall_ce,
)
from terrainseg.metrics import ConfusionMatrix, accumulate, derive_metrics, merge
from terrainseg.models import BackboneSpec, build_model
from terrainseg.synthetic import generate_dataset
from terrainseg.taxonomy import Domain, IGNORE_VALUE, Split, make_taxonomy
from terrainseg.train import (
    Checkpoint,
    TrainConfig,
    evaluate,
    finetune,
    pixel_accuracy,
    seed_everything,
)

LOSS_FNS = {
    LossKind.CE: cross_entropy,
    LossKind.INV_FREQ: inverse_frequency_ce,
    LossKind.RECALL: recall_ce,
    LossKind.INV_FREQ_PLUS_RECALL: combined_loss,
}

ORACLE_FNS = {
    LossKind.CE: oracles.ce_loss,
    LossKind.INV_FREQ: oracles.inv_freq_loss,
    LossKind.RECALL: oracles.recall_loss,
    LossKind.INV_FREQ_PLUS_RECALL: oracles.combined_weighted_loss,
}


def _verdict(capsys, num, name, failures):
    ok = not failures
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {num}: {name}")
    assert ok, f"criterion {num} ({name}): {failures[:5]}"


def test_criterion_01_loss_oracle_equivalence(capsys):
    rng = np.random.default_rng(100)
    failures = []
    started = time.monotonic()
    for i in range(100):
        c = (3, 4, 6)[i % 3]
        logits, target = random_instance(rng, batch=2, size=8, num_classes=c,
                                         ignore_fraction=0.1)
        lg = torch.from_numpy(logits)
        tg = torch.from_numpy(target)
        for kind, fn in LOSS_FNS.items():
            value = fn(lg, tg).item()
            expected = ORACLE_FNS[kind](logits.tolist(), target.tolist())
            rel = abs(value - expected) / max(abs(expected), 1e-12)
            if rel >= 1e-6:
                failures.append((i, kind.value, rel))
    elapsed = time.monotonic() - started
    if elapsed >= 10:
        failures.append(("runtime", elapsed))
    _verdict(capsys, 1, "loss oracle equivalence (100 instances, <10 s)", failures)


def test_criterion_02_gradient_checks(capsys):
    rng = np.random.default_rng(200)
    failures = []
    started = time.monotonic()
    h = 1e-3
    for trial in range(2):
        logits, target = random_instance(rng, batch=1, size=4, num_classes=3,
                                         ignore_fraction=0.1)
        tg = torch.from_numpy(target)
        for kind, fn in LOSS_FNS.items():
            lg = torch.from_numpy(logits.copy()).requires_grad_(True)
            stats = batch_class_stats(lg, tg, 3)

            def f(t):
                if kind in (LossKind.RECALL, LossKind.INV_FREQ_PLUS_RECALL):
                    return fn(t, tg, stats=stats)
                return fn(t, tg)

            (analytic,) = torch.autograd.grad(f(lg), lg)
            flat = lg.detach().flatten()
            fd = torch.zeros_like(flat)
            for i in range(flat.numel()):
                for sign in (1.0, -1.0):
                    bumped = flat.clone()
                    bumped[i] += sign * h
                    fd[i] += sign * f(bumped.view_as(lg)).item()
            fd = (fd / (2 * h)).view_as(analytic)
            scale = analytic.abs().clamp_min(1e-8)
            worst = ((analytic - fd).abs() / scale).max().item()
            if worst >= 1e-4:
                failures.append((trial, kind.value, worst))
    elapsed = time.monotonic() - started
    if elapsed >= 30:
        failures.append(("runtime", elapsed))
    _verdict(capsys, 2, "finite-difference gradient checks (<30 s)", failures)


def test_criterion_03_degenerate_reductions(capsys):
    rng = np.random.default_rng(300)
    failures = []

    # all-wrong batch: every prediction misses, recall weights are all one
    target = torch.from_numpy(rng.integers(0, 3, size=(1, 4, 4)))
    wrong = torch.full((1, 3, 4, 4), -10.0, dtype=torch.double)
    for b in range(1):
        for i in range(4):
            for j in range(4):
                wrong[b, (target[b, i, j] + 1) % 3, i, j] = 10.0
    if recall_ce(wrong, target).item() != cross_entropy(wrong, target).item():
        failures.append("all-wrong RecallCE != CE")
    if combined_loss(wrong, target).item() != inverse_frequency_ce(wrong, target).item():
        failures.append("all-wrong combined != InvFreqCE")

    # all-correct batch: recall one everywhere, so the recall term vanishes
    right = torch.full((1, 3, 4, 4), -10.0, dtype=torch.double)
    for b in range(1):
        for i in range(4):
            for j in range(4):
                right[b, target[b, i, j], i, j] = 10.0
    if recall_ce(right, target).item() != 0.0:
        failures.append("all-correct RecallCE != 0")
    if combined_loss(right, target).item() != 0.0:
        failures.append("all-correct combined != 0")

    # balanced batch: uniform frequencies collapse InvFreqCE onto CE
    balanced = torch.from_numpy(np.tile([0, 1, 2, 3], 4).reshape(1, 4, 4))
    logits = torch.from_numpy(rng.normal(size=(1, 4, 4, 4)))
    ce = cross_entropy(logits, balanced).item()
    inv = inverse_frequency_ce(logits, balanced).item()
    if abs(inv - ce) / abs(ce) >= 1e-6:
        failures.append(f"balanced InvFreqCE != CE ({inv} vs {ce})")

    _verdict(capsys, 3, "degenerate loss reductions", failures)


def test_criterion_04_ignore_pixel_contract(capsys):
    rng = np.random.default_rng(400)
    failures = []
    logits, target = random_instance(rng, batch=2, size=6, num_classes=4,
                                     ignore_fraction=0.3)
    ignored = target == IGNORE_VALUE
    perturbed = logits.copy()
    perturbed[np.broadcast_to(ignored[:, None], logits.shape)] += rng.normal(
        0, 5, size=int(ignored.sum()) * 4)
    tg = torch.from_numpy(target)
    for kind, fn in LOSS_FNS.items():
        a = torch.from_numpy(logits.copy()).requires_grad_(True)
        b = torch.from_numpy(perturbed.copy()).requires_grad_(True)
        la, lb = fn(a, tg), fn(b, tg)
        if la.item() != lb.item():
            failures.append((kind.value, "loss changed"))
        (ga,) = torch.autograd.grad(la, a)
        (gb,) = torch.autograd.grad(lb, b)
        if not torch.equal(ga, gb):
            failures.append((kind.value, "gradient changed"))
        if not (ga.permute(0, 2, 3, 1)[torch.from_numpy(ignored)] == 0).all():
            failures.append((kind.value, "nonzero gradient at ignored pixel"))

    pred = rng.integers(0, 4, size=target.shape)
    cm = accumulate(ConfusionMatrix.zeros(4), pred, target)
    if cm.total != int((~ignored).sum()):
        failures.append(("confusion", "ignored pixels counted"))
    _verdict(capsys, 4, "ignore-pixel contract (losses, gradients, confusion)", failures)


def test_criterion_05_metrics_oracle(capsys):
    rng = np.random.default_rng(500)
    failures = []
    for i in range(1000):
        c = int(rng.integers(2, 7))
        counts = rng.integers(0, 40, size=(c, c)).astype(np.int64)
        if counts.sum() == 0:
            continue
        cm = ConfusionMatrix(counts)
        report = derive_metrics(cm)
        expected = oracles.metrics_from_confusion(counts.tolist())
        for key in ("accuracy", "f1_macro", "miou"):
            if abs(getattr(report, key) - expected[key]) > 1e-12:
                failures.append((i, key))
        f1, iou = report.per_class_f1, report.per_class_iou
        valid = ~np.isnan(f1)
        if not np.allclose(iou[valid], f1[valid] / (2 - f1[valid]), atol=1e-12):
            failures.append((i, "iou-f1 identity"))

    pred = rng.integers(0, 4, size=(20, 20))
    target = rng.integers(0, 4, size=(20, 20))
    single = accumulate(ConfusionMatrix.zeros(4), pred, target)
    halves = merge(accumulate(ConfusionMatrix.zeros(4), pred[:10], target[:10]),
                   accumulate(ConfusionMatrix.zeros(4), pred[10:], target[10:]))
    if not (single.counts == halves.counts).all():
        failures.append("merge != single pass")
    _verdict(capsys, 5, "metrics oracle (1,000 matrices, 1e-12)", failures)


def test_criterion_06_composition_exactness(capsys):
    msl = make_pool(16064, Domain.MSL)
    m2020 = make_pool(1321, Domain.M2020)
    failures = []
    for cap in (1321, 16064):
        for p in (0.0, 0.25, 0.5, 0.75, 1.0):
            spec = CompositionSpec(cap=cap, m2020_proportion=p, seed=0,
                                   source_msl=msl, source_m2020=m2020)
            counts = compose_mixed(spec).domain_counts()
            want = round_half_up(Fraction(str(p)) * 1321)
            if counts[Domain.M2020] != want or counts[Domain.MSL] != cap - want:
                failures.append((cap, p, dict(counts)))

    spec = CompositionSpec(cap=1321, m2020_proportion=0.5, seed=7,
                           source_msl=msl, source_m2020=m2020)
    if compose_mixed(spec).content_hash != compose_mixed(spec).content_hash:
        failures.append("same seed produced different hashes")
    other = CompositionSpec(cap=1321, m2020_proportion=0.5, seed=8,
                            source_msl=msl, source_m2020=m2020)
    if {s.image_ref for s in compose_mixed(spec).entries} == \
            {s.image_ref for s in compose_mixed(other).entries}:
        failures.append("different seeds produced identical membership")
    _verdict(capsys, 6, "composition count exactness and seeding", failures)


def test_criterion_07_label_fraction_totals(capsys):
    msl = make_pool(16064, Domain.MSL)
    m2020 = make_pool(1321, Domain.M2020)
    failures = []
    one = sample_label_fraction(LabelFractionSpec(
        fraction=0.01, seed=0, source_msl=msl, source_m2020=m2020))
    if len(one) != 173:
        failures.append(("f=0.01", len(one)))
    ten = sample_label_fraction(LabelFractionSpec(
        fraction=0.1, seed=0, source_msl=msl, source_m2020=m2020))
    if len(ten) != 1739:
        failures.append(("f=0.1", len(ten)))

    previous = set()
    for f in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0):
        manifest = sample_label_fraction(LabelFractionSpec(
            fraction=f, seed=3, source_msl=msl, source_m2020=m2020))
        current = {s.image_ref for s in manifest.entries}
        if not previous <= current:
            failures.append(("nesting broken at", f))
        previous = current
    _verdict(capsys, 7, "canonical label-fraction totals and nesting", failures)


def test_criterion_08_smoke_training(capsys, tmp_path):
    failures = []
    started = time.monotonic()
    taxonomy = make_taxonomy()
    train = generate_dataset(tmp_path, num_images=32, size=64, seed=0)
    config = TrainConfig(epochs=30, batch_size=8, learning_rate=1e-3, seed=0,
                         preprocess=PreprocessSpec(target_size=(64, 64)))
    seed_everything(0)
    model = build_model(BackboneSpec(), taxonomy)
    result = finetune(model, train, config)
    accuracy = pixel_accuracy(model, train, taxonomy, preprocess=config.preprocess)
    if accuracy < 0.95:
        failures.append(("final train accuracy", accuracy))
    losses = [h["train_loss"] for h in result.history]
    moving = [float(np.mean(losses[i - 4:i + 1])) for i in range(4, len(losses))]
    if any(b > a for a, b in zip(moving, moving[1:])):
        failures.append("5-epoch moving-average loss increased")
    elapsed = time.monotonic() - started
    if elapsed >= 300:
        failures.append(("runtime", elapsed))
    _verdict(capsys, 8,
             f"smoke training (accuracy {accuracy:.3f}, {elapsed:.0f} s)", failures)


def test_criterion_09_imbalance_direction(capsys, tmp_path):
    from terrainseg.losses import LossConfig

    failures = []
    taxonomy = make_taxonomy()
    train = generate_dataset(tmp_path / "train", num_images=24, size=64, seed=5,
                             minority_area=0.01)
    test = generate_dataset(tmp_path / "test", num_images=8, size=64, seed=6,
                            minority_area=0.01, split=Split.TEST,
                            dataset_id="minority_test")
    preprocess = PreprocessSpec(target_size=(64, 64))
    minority = taxonomy.classes.index("big_rock")

    recalls = {}
    for kind in (LossKind.CE, LossKind.INV_FREQ_PLUS_RECALL):
        seed_everything(3)
        model = build_model(BackboneSpec(), taxonomy)
        config = TrainConfig(epochs=25, batch_size=8, learning_rate=1e-3, seed=3,
                             preprocess=preprocess, loss=LossConfig(kind=kind))
        finetune(model, train, config)
        report = evaluate(model, test, taxonomy, preprocess=preprocess)
        recalls[kind] = float(report.per_class_recall[minority])

    if not recalls[LossKind.INV_FREQ_PLUS_RECALL] > recalls[LossKind.CE]:
        failures.append(recalls)
    _verdict(
        capsys, 9,
        "imbalance direction (minority recall CE "
        f"{recalls[LossKind.CE]:.3f} -> combined "
        f"{recalls[LossKind.INV_FREQ_PLUS_RECALL]:.3f})",
        failures,
    )


def test_criterion_10_pipeline_determinism(capsys, tmp_path):
    failures = []
    taxonomy = make_taxonomy()
    train = generate_dataset(tmp_path / "train", num_images=12, size=32, seed=8)
    test = generate_dataset(tmp_path / "test", num_images=4, size=32, seed=9,
                            split=Split.TEST, dataset_id="det_test")
    preprocess = PreprocessSpec(target_size=(32, 32))
    config = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, seed=4,
                         preprocess=preprocess,
                         checkpoint_dir=str(tmp_path / "ckpt"))

    final = []
    for _ in range(2):
        seed_everything(4)
        model = build_model(BackboneSpec(), taxonomy)
        result = finetune(model, train, config)
        final.append(result.history[-1]["train_loss"])
    if final[0] != final[1]:
        failures.append(("train loss not bitwise stable", final))

    checkpoint = Checkpoint.load(tmp_path / "ckpt" / "last.pt")
    a = evaluate(checkpoint, test, taxonomy, preprocess=preprocess,
                 backbone=BackboneSpec())
    b = evaluate(checkpoint, test, taxonomy, preprocess=preprocess,
                 backbone=BackboneSpec())
    if not (a.confusion.counts == b.confusion.counts).all() or a.accuracy != b.accuracy:
        failures.append("checkpoint evaluation not bitwise stable")
    _verdict(capsys, 10, "pipeline determinism (training and evaluation)", failures)


def test_criterion_11_replication_configs_validate(capsys, monkeypatch):
    monkeypatch.setenv("TERRAINSEG_DATA_ROOT", "/data/ai4mars")
    configs_dir = Path(__file__).parent.parent / "configs"
    expected_cells = {
        "baseline_mixed.yaml": 2,
        "baseline_msl_only.yaml": 2,
        "baseline_m2020_only.yaml": 2,
        "proportion_sweep_cap1321.yaml": 30,
        "proportion_sweep_cap16064.yaml": 30,
        "label_fraction_sweep.yaml": 14,
        "loss_ablation.yaml": 4,
        "model_size_sweep.yaml": 28,
    }
    failures = []
    for name, cells in expected_cells.items():
        path = configs_dir / name
        if not path.exists():
            failures.append((name, "missing"))
            continue
        try:
            grid = validate_config(path)
        except Exception as exc:  # noqa: BLE001 - report any validation failure
            failures.append((name, str(exc)))
            continue
        if len(grid.cells()) != cells:
            failures.append((name, f"{len(grid.cells())} cells, wanted {cells}"))
    _verdict(capsys, 11, "replication sweep configs validate", failures)
