"""Test training, metrics, forgetting, corruptions and robustness reports."""

import json

import numpy as np
import pytest

from catsd.const import Method, Split
from catsd.distill import LossWeights
from catsd.exceptions import MethodConfigError, MissingInputError, PerturbationError, TaxonomyError
from catsd.harness import (
    SEVERITY_TABLES,
    ClassGroupMetrics,
    ExperimentConfig,
    MetricsReport,
    PerturbationSpec,
    RobustnessReport,
    ablation_components,
    ablation_pseudo_exemplars,
    ablation_scales,
    ablation_temperatures,
    continual_train,
    dump_predictions,
    evaluate,
    evaluate_arrays,
    fitting_scale_settings,
    forgetting_summary,
    perturb,
    reference_experiment_async,
    robustness_report,
    robustness_report_async,
    run_stage0,
    severity_trend,
    train_stage0,
)
from catsd.harness.metrics import confusion_matrix, iou_from_confusion
from catsd.harness.perturb import FAMILIES, SEVERITIES, corruptions, family_of
from catsd.harness.robustness import RobustnessCell
from catsd.harness.train import TrainingData, label_indices
from catsd.model.manifest import DatasetManifest
from catsd.model.segnet import init_weights, predict, weights_to_bytes
from catsd.model.taxonomy import ClassTaxonomy
from catsd.synth.io import load_dataset

from .const import NOISE_SIGMAS, SEED

# Corruptions whose deviation from the clean image grows with severity for a fixed noise draw
MONOTONE_CORRUPTIONS = (
    "gaussian_noise",
    "impulse_noise",
    "speckle_noise",
    "contrast",
    "brightness",
    "fog",
    "gamma",
    "saturate",
)


def _metrics(taxonomy, **groups):
    miou = {"regular": None, "old": None, "new": None, "all": None, **groups}
    return ClassGroupMetrics(taxonomy=taxonomy, per_class_iou={}, group_miou=miou)


def _brute_force_iou(preds, gts, ids):
    tp = {c: 0 for c in ids}
    fp = {c: 0 for c in ids}
    fn = {c: 0 for c in ids}
    for pred, gt in zip(preds, gts):
        for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
            if p == g:
                tp[g] += 1
            else:
                fp[p] += 1
                fn[g] += 1
    return {c: (tp[c] / (tp[c] + fp[c] + fn[c]) if tp[c] + fn[c] else None) for c in ids}


def test_iou_two_of_six(taxonomy):
    gt = np.array([[3, 3, 3, 3], [0, 0, 0, 0]])
    pred = np.array([[3, 3, 0, 0], [3, 3, 0, 0]])
    metrics = evaluate_arrays([pred], [gt], taxonomy)
    assert metrics.per_class_iou[3] == pytest.approx(2 / 6, abs=1e-12)
    assert metrics.per_class_iou[0] == pytest.approx(2 / 6, abs=1e-12)
    assert metrics.per_class_iou[1] is None
    assert metrics.group_miou["regular"] == pytest.approx(2 / 6)
    assert metrics.group_miou["old"] is None
    assert metrics.pixel_accuracy == pytest.approx(0.5)


def test_identity_and_empty_predictions(taxonomy):
    gt = np.array([[0, 3], [6, 8]])
    perfect = evaluate_arrays([gt], [gt], taxonomy)
    assert {c: v for c, v in perfect.per_class_iou.items() if v is not None} == {0: 1.0, 3: 1.0, 6: 1.0, 8: 1.0}
    assert perfect.group_miou == {"regular": 1.0, "old": 1.0, "new": 1.0, "all": 1.0}
    blank = evaluate_arrays([np.zeros_like(gt)], [gt], taxonomy)
    assert blank.per_class_iou[3] == 0.0


def test_evaluate_matches_brute_force(taxonomy):
    rng = np.random.default_rng(SEED)
    ids = sorted(taxonomy.all_classes)
    preds = [rng.choice(ids, size=(5, 6)) for _ in range(50)]
    gts = [rng.choice(ids[:6], size=(5, 6)) for _ in range(50)]
    metrics = evaluate_arrays(preds, gts, taxonomy)
    oracle = _brute_force_iou(preds, gts, ids)
    for c in ids:
        if oracle[c] is None:
            assert metrics.per_class_iou[c] is None
        else:
            assert metrics.per_class_iou[c] == pytest.approx(oracle[c], abs=1e-12)
            assert 0.0 <= metrics.per_class_iou[c] <= 1.0
    present = [oracle[c] for c in taxonomy.regular if oracle[c] is not None]
    assert metrics.group_miou["regular"] == pytest.approx(np.mean(present), abs=1e-12)
    assert metrics.group_miou["new"] is None


def test_confusion_matrix_orientation():
    cm = confusion_matrix(np.array([1, 1, 0]), np.array([0, 1, 1]), 2)
    np.testing.assert_array_equal(cm, [[0, 1], [1, 1]])
    assert iou_from_confusion(np.zeros((2, 2), dtype=np.int64)) == [None, None]


def test_per_source_breakdown(taxonomy):
    gt = np.array([[1, 1], [0, 0]])
    metrics = evaluate_arrays([gt, np.zeros_like(gt)], [gt, gt], taxonomy, sources=["t0", "t1"])
    assert set(metrics.per_dataset) == {"t0", "t1"}
    assert metrics.per_dataset["t0"]["regular"] == 1.0
    assert metrics.per_dataset["t1"]["regular"] == 0.0
    assert metrics.group_miou["regular"] == pytest.approx(0.5)


def test_ids_outside_taxonomy_rejected(taxonomy):
    with pytest.raises(TaxonomyError):
        evaluate_arrays([np.array([[10]])], [np.array([[0]])], taxonomy)
    with pytest.raises(TaxonomyError):
        evaluate_arrays([np.array([[0]])], [np.array([[-1]])], taxonomy)


def test_evaluate_on_small_suite(small_suite, teacher_weights, taxonomy):
    _, manifests = small_suite
    metrics = evaluate(teacher_weights, manifests[Split.TEST], taxonomy)
    assert set(metrics.group_miou) == {"regular", "old", "new", "all"}
    assert set(metrics.per_dataset) == {"t0", "t1"}
    assert all(v is None or 0.0 <= v <= 1.0 for v in metrics.per_class_iou.values())
    narrow = ClassTaxonomy.build((1, 2, 3), (4,), (5,))
    with pytest.raises(TaxonomyError):
        evaluate(teacher_weights, manifests[Split.TEST], narrow)


def test_forgetting_summary(taxonomy):
    before = _metrics(taxonomy, regular=0.5, old=0.30, all=0.4)
    after = _metrics(taxonomy, regular=0.45, old=0.05, new=0.2, all=0.3)
    report = forgetting_summary(before, after, "ft")
    assert report.deltas["old"] == pytest.approx(-0.25)
    assert report.deltas["regular"] == pytest.approx(-0.05)
    assert report.deltas["new"] is None
    assert report.plasticity == 0.2
    assert report.rigidity == 0.05
    other = _metrics(ClassTaxonomy.build((1, 2, 3), (4,), (5,)), old=0.1)
    with pytest.raises(TaxonomyError):
        forgetting_summary(before, other)


def test_severity_tables():
    assert SEVERITY_TABLES["gaussian_noise"] == NOISE_SIGMAS
    assert set(SEVERITY_TABLES) == {c for members in FAMILIES.values() for c in members}
    for name, table in SEVERITY_TABLES.items():
        assert len(table) == len(SEVERITIES), name
        assert all(a < b for a, b in zip(table, table[1:])), name


def test_gaussian_noise_uses_table_sigma():
    image = np.full((3, 64, 64), 0.5)
    for severity, sigma in zip(SEVERITIES, NOISE_SIGMAS):
        out = perturb(image, PerturbationSpec.build("gaussian_noise", severity), np.random.default_rng(severity))
        assert np.std(out - image) == pytest.approx(sigma, rel=0.05)


@pytest.mark.parametrize("corruption", corruptions())
def test_every_corruption_keeps_shape_and_range(rng, corruption):
    image = rng.random((3, 20, 24))
    for severity in SEVERITIES:
        out = perturb(image, PerturbationSpec.build(corruption, severity), np.random.default_rng(severity))
        assert out.shape == image.shape
        assert 0.0 <= out.min() and out.max() <= 1.0


@pytest.mark.parametrize(
    "corruption", ["contrast", "defocus_blur", "gaussian_blur", "motion_blur", "pixelate", "saturate"]
)
def test_constant_gray_is_a_fixed_point(corruption):
    image = np.full((3, 16, 16), 0.5)
    out = perturb(image, PerturbationSpec.build(corruption, 5), np.random.default_rng(0))
    np.testing.assert_allclose(out, image, atol=1e-9)


@pytest.mark.parametrize("corruption", MONOTONE_CORRUPTIONS)
def test_distortion_grows_with_severity(corruption):
    for seed in range(20):
        image = np.random.default_rng([SEED, seed]).random((3, 16, 16))
        distortion = [
            np.abs(perturb(image, PerturbationSpec.build(corruption, s), np.random.default_rng(seed)) - image).mean()
            for s in SEVERITIES
        ]
        assert all(b >= a - 1e-12 for a, b in zip(distortion, distortion[1:])), (seed, distortion)


def test_unknown_corruptions_rejected():
    with pytest.raises(PerturbationError):
        PerturbationSpec.build("snow", 1)
    with pytest.raises(PerturbationError):
        PerturbationSpec.build("fog", 6)
    with pytest.raises(PerturbationError):
        corruptions(("noise", "rain"))
    with pytest.raises(PerturbationError):
        family_of("frost")
    assert PerturbationSpec.build("fog", 2).family == "weather"
    with pytest.raises(PerturbationError):
        perturb(np.zeros((1, 8, 8)), PerturbationSpec.build("fog", 2), np.random.default_rng(0))


async def test_robustness_grid(small_suite, teacher_weights, taxonomy):
    _, manifests = small_suite
    test = manifests[Split.TEST]
    report = await robustness_report_async(
        teacher_weights, test, taxonomy, families=("noise", "blur"), severities=(1, 3), seed=1, threads=2
    )
    assert report.corruptions() == list(FAMILIES["noise"] + FAMILIES["blur"])
    assert len(report.cells) == 7 * 2
    assert [c.severity for c in report.grid("motion_blur")] == [1, 3]
    assert report.clean.dict() == evaluate(teacher_weights, test, taxonomy).dict()


def test_robustness_independent_of_threads(small_suite, teacher_weights, taxonomy):
    _, manifests = small_suite
    args = (teacher_weights, manifests[Split.TEST], taxonomy, ("noise",), (2,), 5)
    assert robustness_report(*args, threads=1).dict() == robustness_report(*args, threads=3).dict()


def test_severity_trend(taxonomy):
    def report(values):
        cells = [
            RobustnessCell(
                family="noise", corruption="gaussian_noise", severity=s, metrics=_metrics(taxonomy, old=v)
            )
            for s, v in zip(SEVERITIES, values)
        ]
        return RobustnessReport(clean=_metrics(taxonomy), cells=cells)

    assert severity_trend(report([0.5, 0.4, 0.3, 0.2, 0.1]), "gaussian_noise") == pytest.approx(-1.0)
    assert severity_trend(report([0.3] * 5), "gaussian_noise") == 0.0
    assert severity_trend(report([0.3]), "gaussian_noise") == 0.0
    assert severity_trend(report([None] * 5), "gaussian_noise") == 0.0


def test_zero_epochs_returns_initial_weights(experiment, taxonomy):
    weights = train_stage0(experiment.with_overrides(epochs_t0=0))
    assert weights.equals(init_weights(SEED, 8, taxonomy.old_model_classes))


def test_stage0_is_deterministic(experiment):
    steps = []
    first = train_stage0(experiment, on_step=steps.append)
    assert steps and all(s.stage == "t0" and np.isfinite(s.loss) for s in steps)
    assert [s.step for s in steps] == list(range(len(steps)))
    assert first.equals(train_stage0(experiment))


def _block_scenes(rng, n=4, size=32, cell=8):
    colours = {0: (0.55, 0.12, 0.10), 2: (0.15, 0.75, 0.25), 6: (0.20, 0.25, 0.85)}
    ids = np.array(sorted(colours))
    grid = size // cell
    masks = np.kron(rng.choice(ids, size=(n, grid, grid)), np.ones((1, cell, cell), dtype=np.int64))
    images = np.stack([np.array(colours[c]) for c in masks.ravel()]).reshape(n, size, size, 3)
    images = np.clip(images + rng.normal(0.0, 0.03, size=images.shape), 0.0, 1.0)
    return TrainingData(images.transpose(0, 3, 1, 2), masks)


@pytest.mark.slow
def test_stage0_memorizes_a_few_images(rng):
    data = _block_scenes(rng)
    config = ExperimentConfig(seed=SEED, epochs_t0=200, batch_size=4, lr_t0=0.05)
    steps = []
    weights = train_stage0(config, data, on_step=steps.append)
    assert len(steps) == 200
    accuracy = np.mean([np.mean(predict(weights, image) == mask) for image, mask in zip(data.images, data.masks)])
    assert accuracy > 0.9
    assert steps[-1].loss < steps[0].loss


def test_stage0_needs_training_data(experiment):
    with pytest.raises(MissingInputError):
        train_stage0(experiment.with_overrides(t0_train=None))


def test_stage1_rejects_old_classes_in_new_data(experiment, teacher_weights):
    with pytest.raises(TaxonomyError):
        continual_train(teacher_weights, experiment.with_overrides(t1_train=experiment.t0_train, method=Method.FT))


def test_zero_weight_catsd_equals_fine_tuning(small_suite, teacher_weights, experiment):
    _, manifests = small_suite
    data = TrainingData(*load_dataset(manifests[Split.T1_TRAIN]))
    ft_steps, cat_steps = [], []
    ft = continual_train(teacher_weights, experiment.with_overrides(method=Method.FT), data, on_step=ft_steps.append)
    off = LossWeights(cat_weight=0.0, sd_weight=0.0)
    cat = continual_train(
        teacher_weights, experiment.with_overrides(method=Method.CATSD, weights=off), data, on_step=cat_steps.append
    )
    assert [s.loss for s in ft_steps] == [s.loss for s in cat_steps]
    assert set(cat_steps[0].parts) == {"ce", "cat", "sd"}
    assert ft.equals(cat)

    # loading from the manifests would add pseudo-exemplars to the CATSD run only
    assert experiment.with_overrides(method=Method.CATSD).uses_pseudo_exemplars
    ft_loaded = continual_train(teacher_weights, experiment.with_overrides(method=Method.FT, exemplar=None))
    cat_loaded = continual_train(
        teacher_weights, experiment.with_overrides(method=Method.CATSD, weights=off, exemplar=None)
    )
    assert ft_loaded.equals(cat_loaded)


@pytest.mark.parametrize("method", list(Method))
def test_continual_train_leaves_teacher_untouched(small_suite, teacher_weights, experiment, taxonomy, method):
    _, manifests = small_suite
    data = TrainingData(*load_dataset(manifests[Split.T1_TRAIN]))
    before = weights_to_bytes(teacher_weights)
    student = continual_train(teacher_weights, experiment.with_overrides(method=method), data)
    assert weights_to_bytes(teacher_weights) == before
    assert student.class_list == taxonomy.continual_classes


def test_method_hyperparameters_checked(experiment, teacher_weights):
    with pytest.raises(MethodConfigError):
        continual_train(teacher_weights, experiment.with_overrides(method=Method.TKD, temperature=None))
    with pytest.raises(MethodConfigError):
        continual_train(teacher_weights, experiment.with_overrides(method=Method.CATSD, scales=()))
    with pytest.raises(MethodConfigError):
        continual_train(teacher_weights, experiment.with_overrides(method=Method.CATSD, epsilons=None))
    with pytest.raises(ValueError):
        ExperimentConfig(method="mib")


def test_pseudo_exemplars_only_for_configured_methods(experiment):
    assert experiment.with_overrides(method=Method.CATSD).uses_pseudo_exemplars
    assert not experiment.with_overrides(method=Method.FT).uses_pseudo_exemplars
    assert not experiment.with_overrides(method=Method.CATSD, exemplar=None).uses_pseudo_exemplars


def test_label_indices(taxonomy):
    masks = np.array([[0, 6], [7, 1]])
    np.testing.assert_array_equal(label_indices(masks, taxonomy.old_model_classes), [[0, 6], [7, 1]])
    np.testing.assert_array_equal(label_indices(np.array([[8, 9]]), taxonomy.continual_classes), [[8, 9]])
    with pytest.raises(TaxonomyError):
        label_indices(np.array([[8]]), taxonomy.old_model_classes)


def test_best_val_selection(experiment, taxonomy):
    with pytest.raises(MissingInputError):
        run_stage0(experiment.with_overrides(selection="best_val", val=None))
    weights = run_stage0(experiment.with_overrides(selection="best_val", epochs_t0=2))
    assert weights.class_list == taxonomy.old_model_classes


def test_ablation_rows(small_suite, teacher_weights, experiment):
    _, manifests = small_suite
    test = manifests[Split.TEST]
    rows = ablation_temperatures(teacher_weights, experiment, test, pairs=((1.0, 1.0), (3.0, 4.0)))
    assert [r.label for r in rows] == ["T_o=1 T_r=1", "T_o=3 T_r=4"]
    assert rows[1].settings["t_regular"] == 4.0
    rows = ablation_pseudo_exemplars(teacher_weights, experiment, test)
    assert [r.label for r in rows] == ["new data only", "with pseudo-exemplars"]


def test_component_ablation_rows(small_suite, teacher_weights, experiment):
    _, manifests = small_suite
    rows = ablation_components(teacher_weights, experiment, manifests[Split.TEST])
    assert [r.label for r in rows] == ["FT", "SD=off CAT=off", "SD=off CAT=on", "SD=on CAT=off", "SD=on CAT=on"]
    assert rows[0].settings == {"method": Method.FT}
    assert all(r.settings["method"] == Method.CATSD for r in rows[1:])
    for row in rows[1:]:
        sd_on = row.label.startswith("SD=on")
        cat_on = row.label.endswith("CAT=on")
        assert ("scales" not in row.settings) == sd_on
        assert ("t_old" not in row.settings) == cat_on
        if not sd_on:
            assert row.settings["scales"] == (1,)
            assert row.settings["shifted"] is False
        if not cat_on:
            assert row.settings["t_old"] == row.settings["t_regular"] == 1.0
    assert all(set(r.group_miou) == {"regular", "old", "new", "all"} for r in rows)


def test_component_switches_reach_the_losses(experiment):
    sd_off = experiment.with_overrides(method=Method.CATSD, scales=(1,), shifted=False)
    assert sd_off.shifts() == ()
    sd_off.check_method()
    cat_off = experiment.with_overrides(method=Method.CATSD, t_old=1.0, t_regular=1.0)
    assert set(cat_off.tvec().values) == {1.0}


def test_scale_ablation_rows(small_suite, teacher_weights, experiment):
    _, manifests = small_suite
    settings = (((1,), ()), ((1, 2), (2, 4)))
    rows = ablation_scales(teacher_weights, experiment, manifests[Split.TEST], settings)
    assert [r.label for r in rows] == ["s=1 shifted s=off", "s=1,2 shifted s=2,4"]
    assert rows[0].settings["shifted"] is False
    assert rows[0].settings["shift_scales"] is None
    assert rows[1].settings["shifted"] is True
    assert rows[1].settings["shift_scales"] == (2, 4)
    assert rows[1].settings["scales"] == (1, 2)
    assert all(r.group_miou["all"] is not None for r in rows)


def test_shift_scales_config(experiment):
    config = experiment.with_overrides(method=Method.CATSD, shift_scales=(2, 4))
    assert [s.epsilons for s in config.shifts()] == [(0.0, 0.5, 1.0), (0.0, 0.25, 0.75, 1.0)]
    assert experiment.with_overrides(shifted=False, epsilons=None).shifts() == ()
    with pytest.raises(ValueError):
        experiment.with_overrides(shift_scales=(1,))


def test_fitting_scale_settings():
    # 32x32 images leave 4x4 encoder outputs, too small for an 8x8 grid
    small = fitting_scale_settings(32)
    assert ((1,), ()) in small
    assert ((1, 2), (2, 4)) in small
    assert all(8 not in scales for scales, _ in small)
    assert len(small) == 6
    assert len(fitting_scale_settings(64)) == 10


def test_metrics_report_and_dump(small_suite, teacher_weights, taxonomy, tmp_path):
    _, manifests = small_suite
    test = manifests[Split.TEST]
    metrics = evaluate(teacher_weights, test, taxonomy)
    robustness = robustness_report(teacher_weights, test, taxonomy, ("weather",), (1,), threads=1)
    path = MetricsReport.from_metrics(metrics, "ft", SEED, robustness=robustness).write(tmp_path / "m.json")
    document = json.loads(path.read_text(encoding="utf-8"))
    assert document["method"] == "ft"
    assert document["seed"] == SEED
    assert set(document["group_miou"]) == {"regular", "old", "new", "all"}
    assert [(e["corruption"], e["severity"]) for e in document["robustness"]] == [("brightness", 1), ("fog", 1)]

    panels = dump_predictions(teacher_weights, test, tmp_path / "dump", limit=2)
    assert [p.name for p in panels] == ["00000.png", "00001.png"]


@pytest.mark.slow
async def test_reference_experiment(tmp_path):
    result = await reference_experiment_async(tmp_path, seed=0, threads=2)
    teacher_old = result.teacher_metrics.group_miou["old"]
    ft_old = result.metrics[Method.FT].group_miou["old"] or 0.0
    catsd = result.metrics[Method.CATSD]
    assert teacher_old and ft_old <= 0.5 * teacher_old
    assert (catsd.group_miou["old"] or 0.0) >= ft_old
    assert (catsd.group_miou["new"] or 0.0) > 0.0

    report = await robustness_report_async(
        result.students[Method.CATSD],
        DatasetManifest.read(tmp_path / "test.json"),
        result.teacher_metrics.taxonomy,
        families=("noise",),
        threads=2,
    )
    assert severity_trend(report, "gaussian_noise") <= 0.0
