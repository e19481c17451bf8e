"""Test the distillation losses, embeddings and per-method objective."""

import numpy as np
import pytest

from catsd.const import Method
from catsd.distill import (
    LossWeights,
    ShiftSpec,
    TemperatureVector,
    cat_loss,
    cat_vector,
    embedding_length,
    feature_l2_loss,
    kd_logits_loss,
    local_pod_loss,
    msshift_embedding,
    multiscale_embedding,
    pod_embedding,
    pod_loss,
    sd_loss,
    shifted_embedding,
    temperature_kd_loss,
    total_loss,
)
from catsd.distill.cases import registered_cases, run_all, run_case
from catsd.exceptions import DomainError, MethodConfigError, ShapeError, TaxonomyError
from catsd.model.taxonomy import ClassTaxonomy
from catsd.tensor import Tensor


def _softmax(x, t=1.0):
    z = x / t
    e = np.exp(z - z.max(axis=0))
    return e / e.sum(axis=0)


def _region_oracle(x, rows, cols):
    parts = []
    for r0, r1 in zip(rows, rows[1:]):
        for c0, c1 in zip(cols, cols[1:]):
            region = x[:, r0:r1, c0:c1]
            parts.append(region.mean(axis=2).reshape(-1))
            parts.append(region.mean(axis=1).reshape(-1))
    return np.concatenate(parts)


def test_cat_vector(taxonomy):
    tvec = cat_vector(taxonomy)
    assert tvec.class_ids == taxonomy.old_model_classes
    assert tvec.as_dict() == {0: 4.0, 1: 4.0, 2: 4.0, 3: 4.0, 4: 4.0, 5: 4.0, 6: 3.0, 7: 3.0}
    assert cat_vector(taxonomy, 2.0, 2.0).values == (2.0,) * 8
    with pytest.raises(DomainError):
        cat_vector(taxonomy, 4.0, 3.0)
    with pytest.raises(DomainError):
        cat_vector(taxonomy, 0.0, 3.0)


def test_temperature_vector_validation():
    with pytest.raises(TaxonomyError):
        TemperatureVector((0, 1), (1.0,))
    with pytest.raises(DomainError):
        TemperatureVector((0, 1), (1.0, -2.0))
    tvec = TemperatureVector.constant((0, 1, 2), 2.0)
    with pytest.raises(TaxonomyError):
        tvec.check_covers(None, 4)
    with pytest.raises(TaxonomyError):
        tvec.check_covers((0, 1, 3), 3)


def test_kd_self_distillation_is_teacher_entropy(rng):
    logits = rng.normal(size=(4, 3, 3))
    p = _softmax(logits)
    entropy = -(p * np.log(p)).sum(axis=0).mean()
    assert kd_logits_loss(logits, logits).item() == pytest.approx(entropy, abs=1e-12)


def test_kd_ignores_new_class_channels(rng):
    teacher = rng.normal(size=(2, 3, 2, 2))
    student = rng.normal(size=(2, 5, 2, 2))
    other = student.copy()
    other[:, 3:] += 10.0
    assert kd_logits_loss(teacher, student).item() == kd_logits_loss(teacher, other).item()
    with pytest.raises(ShapeError):
        kd_logits_loss(teacher, rng.normal(size=(2, 2, 2, 2)))
    with pytest.raises(ShapeError):
        kd_logits_loss(teacher, rng.normal(size=(2, 5, 3, 2)))


@pytest.mark.parametrize("temperature", [1.0, 2.5, 4.0])
def test_cat_loss_with_constant_temperature_reduces_to_kd(rng, temperature):
    teacher = rng.normal(size=(3, 2, 2))
    student = rng.normal(size=(4, 2, 2))
    tvec = TemperatureVector.constant((0, 1, 2), temperature)
    expected = (
        kd_logits_loss(teacher, student)
        if temperature == 1.0
        else temperature_kd_loss(teacher, student, temperature)
    )
    assert cat_loss(teacher, student, tvec).item() == pytest.approx(expected.item(), abs=1e-12)


def test_cat_loss_matches_direct_formula(rng, taxonomy):
    teacher = rng.normal(size=(8, 2, 3))
    student = rng.normal(size=(10, 2, 3))
    tvec = cat_vector(taxonomy)
    t = tvec.as_array()[:, None, None]
    p = np.exp(teacher / t) / np.exp(teacher / t).sum(axis=0)
    q = np.exp(student[:8] / t) / np.exp(student[:8] / t).sum(axis=0)
    expected = -(p * np.log(q)).sum() / 6
    value = cat_loss(teacher, student, tvec, class_list=taxonomy.old_model_classes).item()
    assert value == pytest.approx(expected, abs=1e-12)
    with pytest.raises(TaxonomyError):
        cat_loss(teacher, student, tvec, class_list=(0, 1, 2, 3, 4, 5, 6, 8))


def test_temperature_kd_rejects_non_positive(rng):
    with pytest.raises(DomainError):
        temperature_kd_loss(rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2, 2)), 0.0)


def test_feature_l2_loss(rng):
    a, b = rng.normal(size=(4, 2, 2)), rng.normal(size=(4, 2, 2))
    assert feature_l2_loss(a, a).item() == 0.0
    assert feature_l2_loss(a, b).item() == pytest.approx(np.linalg.norm(a - b) / 16)
    with pytest.raises(ShapeError):
        feature_l2_loss(a, b[:2])


@pytest.mark.parametrize("c, h, w", [(1, 4, 4), (3, 8, 4), (2, 4, 12), (5, 8, 8)])
@pytest.mark.parametrize("s", [1, 2, 4])
def test_pod_embedding_length_and_values(rng, c, h, w, s):
    x = rng.normal(size=(c, h, w))
    emb = pod_embedding(x, s)
    assert len(emb) == s * c * (h + w)
    assert len(emb) == embedding_length(c, h, w, [s])
    rows, cols = list(range(0, h + 1, h // s)), list(range(0, w + 1, w // s))
    np.testing.assert_allclose(emb.vector.data, _region_oracle(x, rows, cols), atol=1e-12)


@pytest.mark.parametrize("c, h, w", [(1, 4, 4), (3, 8, 4), (2, 4, 12), (5, 8, 8)])
def test_shifted_embedding_length_and_values(rng, c, h, w):
    x = rng.normal(size=(c, h, w))
    emb = shifted_embedding(x)
    assert len(emb) == 3 * c * (h + w)
    assert len(emb) == embedding_length(c, h, w, [], ShiftSpec())
    rows = [0, h // 4, 3 * h // 4, h]
    cols = [0, w // 4, 3 * w // 4, w]
    np.testing.assert_allclose(emb.vector.data, _region_oracle(x, rows, cols), atol=1e-12)


def test_msshift_embedding_layout(rng):
    x = rng.normal(size=(2, 8, 8))
    full = msshift_embedding(x, (2, 4))
    assert len(full) == embedding_length(2, 8, 8, (2, 4), ShiftSpec())
    multi = multiscale_embedding(x, (2, 4)).vector.data
    np.testing.assert_array_equal(full.vector.data[: multi.size], multi)
    assert full.provenance.scales == (2, 4)
    only_shift = msshift_embedding(x, ())
    np.testing.assert_array_equal(only_shift.vector.data, shifted_embedding(x).vector.data)
    with pytest.raises(ShapeError):
        multiscale_embedding(x, ())


def test_embeddings_keep_batch_axes(rng):
    x = rng.normal(size=(3, 2, 4, 4))
    emb = pod_embedding(x, 2)
    assert emb.vector.shape == (3, 2 * 2 * 8)
    np.testing.assert_allclose(emb.vector.data[1], pod_embedding(x[1], 2).vector.data)


def test_shift_spec_validation():
    with pytest.raises(ShapeError):
        ShiftSpec((0.25, 1.0))
    with pytest.raises(ShapeError):
        ShiftSpec((0.0, 0.75, 0.25, 1.0))
    with pytest.raises(ShapeError):
        ShiftSpec().boundaries(6)
    assert ShiftSpec().boundaries(8) == [0, 2, 6, 8]
    with pytest.raises(ShapeError):
        pod_embedding(np.zeros((1, 6, 6)), 4)


def test_feature_losses_vanish_on_identical_features(rng):
    f = rng.normal(size=(2, 4, 8, 8))
    blocks = [rng.normal(size=(2, 3, 8, 8)), f]
    assert sd_loss(f, f).item() == 0.0
    assert local_pod_loss(blocks, blocks).item() == 0.0
    assert pod_loss(blocks, blocks).item() == 0.0
    assert sd_loss(f, f + 0.1).item() > 0.0
    with pytest.raises(ShapeError):
        local_pod_loss(blocks, blocks[:1])
    with pytest.raises(ShapeError):
        sd_loss(f, f[:, :2])


def test_pod_loss_is_single_scale_local_pod(rng):
    old = [rng.normal(size=(3, 4, 4))]
    new = [rng.normal(size=(3, 4, 4))]
    assert pod_loss(old, new).item() == local_pod_loss(old, new, scales=(1,)).item()


def test_pod_embedding_by_hand():
    emb = pod_embedding(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 1)
    np.testing.assert_allclose(emb.vector.data, [1.5, 3.5, 2.0, 3.0], atol=1e-15)
    assert embedding_length(8, 16, 16, (4,)) == 1024
    assert embedding_length(64, 8, 8, (2, 4)) == 6144
    assert embedding_length(64, 8, 8, (2, 4), ShiftSpec()) == 9216
    np.testing.assert_array_equal(pod_embedding(np.full((2, 8, 8), 0.75), 4).vector.data, 0.75)


def test_pod_loss_ignores_a_shared_per_channel_offset(rng):
    old = [rng.normal(size=(3, 4, 4)), rng.normal(size=(2, 8, 8))]
    new = [rng.normal(size=(3, 4, 4)), rng.normal(size=(2, 8, 8))]
    offsets = [rng.normal(scale=5.0, size=(f.shape[0], 1, 1)) for f in old]
    moved_old = [f + k for f, k in zip(old, offsets)]
    moved_new = [f + k for f, k in zip(new, offsets)]
    assert pod_loss(moved_old, moved_new).item() == pytest.approx(pod_loss(old, new).item(), abs=1e-12)


@pytest.mark.parametrize("s", [1, 2])
def test_horizontal_flip_permutes_pod_entries(rng, s):
    x = rng.normal(size=(2, 4, 8))
    flipped = x[..., ::-1].copy()
    a = np.sort(pod_embedding(x, s).vector.data)
    b = np.sort(pod_embedding(flipped, s).vector.data)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_sd_loss_of_a_uniform_offset(rng):
    f = rng.normal(size=(4, 8, 8))
    delta = -0.3
    length = embedding_length(4, 8, 8, (2, 4), ShiftSpec())
    assert sd_loss(f, f + delta).item() == pytest.approx(abs(delta) * np.sqrt(length), rel=1e-9)


def test_kd_opposed_peaks():
    teacher = np.array([100.0, 0.0]).reshape(2, 1, 1)
    student = np.array([0.0, 100.0]).reshape(2, 1, 1)
    assert kd_logits_loss(teacher, student).item() == pytest.approx(100.0, rel=1e-9)
    uniform = np.zeros((2, 3, 3))
    assert kd_logits_loss(uniform, uniform).item() == pytest.approx(np.log(2), abs=1e-12)


def test_cat_vector_without_old_classes():
    taxonomy = ClassTaxonomy.build((1, 2, 3), (), (4,))
    tvec = cat_vector(taxonomy, 3.0, 4.0)
    assert tvec.class_ids == (0, 1, 2, 3)
    assert tvec.values == (4.0,) * 4


def test_single_cell_shift_is_whole_map_pooling(rng):
    x = rng.normal(size=(3, 4, 6))
    whole = ShiftSpec((0.0, 1.0))
    np.testing.assert_array_equal(shifted_embedding(x, whole).vector.data, pod_embedding(x, 1).vector.data)
    np.testing.assert_array_equal(msshift_embedding(x, (), whole).vector.data, pod_embedding(x, 1).vector.data)


def test_shift_spec_for_scale():
    assert ShiftSpec.for_scale(4) == ShiftSpec()
    assert ShiftSpec.for_scale(2).epsilons == (0.0, 0.5, 1.0)
    assert ShiftSpec.for_scale(8).boundaries(8) == [0, 1, 7, 8]
    with pytest.raises(ShapeError):
        ShiftSpec.for_scale(1)


def test_msshift_with_several_or_no_shift_specs(rng):
    x = rng.normal(size=(2, 8, 8))
    specs = (ShiftSpec.for_scale(2), ShiftSpec.for_scale(4))
    emb = msshift_embedding(x, (1, 2), specs)
    assert len(emb) == embedding_length(2, 8, 8, (1, 2), specs)
    assert emb.provenance.shifts == ((0.0, 0.5, 1.0), (0.0, 0.25, 0.75, 1.0))
    expected = np.concatenate(
        [
            multiscale_embedding(x, (1, 2)).vector.data,
            shifted_embedding(x, specs[0]).vector.data,
            shifted_embedding(x, specs[1]).vector.data,
        ]
    )
    np.testing.assert_array_equal(emb.vector.data, expected)

    plain = msshift_embedding(x, (1, 2), None)
    np.testing.assert_array_equal(plain.vector.data, multiscale_embedding(x, (1, 2)).vector.data)
    assert plain.provenance.shifts == ()
    assert sd_loss(x, x + 1.0, (1,), None).item() == pytest.approx(np.sqrt(embedding_length(2, 8, 8, (1,))))
    with pytest.raises(ShapeError):
        msshift_embedding(x, (), None)


def test_loss_weights():
    weights = LossWeights.parse_obj({"lambda": 0.5})
    assert weights.lam == 0.5
    assert weights.alpha == 1.0
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)
    with pytest.raises(ValueError):
        LossWeights.parse_obj({"gamma": 1.0})


def test_total_loss_composition():
    ce, kd, f, cat, sd = (Tensor(v) for v in (1.0, 2.0, 3.0, 5.0, 7.0))
    w = LossWeights(alpha=0.5, beta=2.0, lam=3.0, cat_weight=0.25, sd_weight=4.0)
    assert total_loss(Method.FT, ce, {}, w).item() == 1.0
    assert total_loss(Method.LWF, ce, {"kd": kd}, w).item() == pytest.approx(2.0)
    assert total_loss(Method.ILT, ce, {"kd": kd, "feature_l2": f}, w).item() == pytest.approx(5.0)
    assert total_loss(Method.LOCALPOD, ce, {"local_pod": f}, w).item() == pytest.approx(10.0)
    assert total_loss(Method.POD, ce, {"pod": f}, w).item() == pytest.approx(10.0)
    assert total_loss(Method.CATSD, ce, {"cat": cat, "sd": sd}, w).item() == pytest.approx(30.25)
    off = LossWeights(cat_weight=0, sd_weight=0)
    assert total_loss("catsd", ce, {"cat": cat, "sd": sd}, off).item() == 1.0


def test_total_loss_errors():
    ce = Tensor(1.0)
    with pytest.raises(MethodConfigError):
        total_loss(Method.CATSD, ce, {"cat": Tensor(1.0)})
    with pytest.raises(MethodConfigError):
        total_loss("mib", ce, {})


def test_every_loss_has_a_gradient_case():
    assert set(registered_cases()) >= {
        "kd_logits_loss",
        "temperature_kd_loss",
        "cat_loss",
        "feature_l2_loss",
        "local_pod_loss",
        "sd_loss",
        "total_loss",
    }


def test_gradient_cases_pass_on_a_few_instances():
    results = run_all(instances=5, seed=3)
    assert all(r.passed for r in results), [(r.name, r.max_rel_error) for r in results]


@pytest.mark.slow
def test_gradient_cases_pass_on_full_sweep():
    results = run_all(instances=100, seed=0)
    assert all(r.passed for r in results)
    assert sum(r.seconds for r in results) < 60


def test_cases_are_seeded():
    assert run_case("cat_loss", instances=3, seed=1).max_rel_error == run_case(
        "cat_loss", instances=3, seed=1
    ).max_rel_error

