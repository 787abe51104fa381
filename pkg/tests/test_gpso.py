"""Spectral-overlap classification: prototypes, decisions, grouped CV."""

from __future__ import annotations

import numpy as np
import pytest

from gramgate.errors import EmptyClass, NoEvaluableGroups, RankMismatch
from gramgate.gram import EmbeddingBatch, l2_normalize_rows, projector_overlap, top_r_projector
from gramgate.gpso import (
    GpsoDiagnostics,
    PipelineConfig,
    batch_scatter,
    build_prototype,
    classify,
    grouped_cv_evaluate,
)
from gramgate.harness import PlantedConfig, make_planted_instance, planted_dataset

CFG = PipelineConfig(l2=True, center=False, r_max=3, bootstrap_b=4, n_splits=5, seed=0)


def axis_batch(axis, n, d, label=None, group="g"):
    rows = np.zeros((n, d))
    rows[:, axis] = 1.0
    return EmbeddingBatch(rows=rows, group_id=group, class_label=label)


# --- prototypes ------------------------------------------------------------------


def test_single_batch_single_replicate_prototype_is_own_projector():
    rng = np.random.default_rng(0)
    batch = EmbeddingBatch(rows=l2_normalize_rows(rng.normal(size=(10, 4))))
    cfg = PipelineConfig(l2=True, center=False, bootstrap_b=1)
    proto = build_prototype([batch], 2, cfg, np.random.default_rng(1))
    own = top_r_projector(batch_scatter(batch, cfg), 2)
    assert np.linalg.norm(proto.projector.matrix - own.matrix) < 1e-10
    assert proto.dispersion <= 1e-10


def test_identical_batches_have_zero_dispersion():
    rng = np.random.default_rng(2)
    rows = l2_normalize_rows(rng.normal(size=(12, 5)))
    batches = [EmbeddingBatch(rows=rows), EmbeddingBatch(rows=rows)]
    proto = build_prototype(batches, 2, CFG, np.random.default_rng(3))
    assert proto.dispersion <= 1e-10
    shared = top_r_projector(batch_scatter(batches[0], CFG), 2)
    assert np.linalg.norm(proto.projector.matrix - shared.matrix) < 1e-10


def test_prototype_recovers_planted_subspace_vs_pooled_oracle():
    rng = np.random.default_rng(4)
    frame, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    basis = frame[:, :2]
    batches = []
    for _ in range(10):
        coeffs = rng.normal(size=(30, 2)) * np.array([1.4, 1.0])
        rows = coeffs @ basis.T + 0.05 * rng.normal(size=(30, 8))
        batches.append(EmbeddingBatch(rows=l2_normalize_rows(rows)))
    planted = top_r_projector(basis @ basis.T, 2)
    proto = build_prototype(batches, 2, CFG, np.random.default_rng(5))
    assert projector_overlap(proto.projector, planted) >= 1.9
    # no-bootstrap pooled-scatter oracle lands on the same subspace
    pooled = np.mean([batch_scatter(b, CFG) for b in batches], axis=0)
    oracle = top_r_projector(pooled, 2)
    assert projector_overlap(oracle, planted) >= 1.9
    assert projector_overlap(proto.projector, oracle) >= 1.95


def test_empty_class_rejected():
    with pytest.raises(EmptyClass):
        build_prototype([], 1, CFG, np.random.default_rng(0))


# --- classify ---------------------------------------------------------------------


def test_exact_subspace_classification_with_unit_margin():
    cfg = PipelineConfig(l2=True, center=False, bootstrap_b=1)
    protos = [
        build_prototype([axis_batch(0, 6, 4)], 1, cfg, np.random.default_rng(0), class_id="good"),
        build_prototype([axis_batch(1, 6, 4)], 1, cfg, np.random.default_rng(0), class_id="bad"),
    ]
    predicted, diag = classify(axis_batch(0, 5, 4), protos, 1, cfg)
    assert predicted == "good"
    assert diag.margin == pytest.approx(1.0, abs=1e-10)


def test_identical_prototypes_tie_break_to_smallest_class_id():
    cfg = PipelineConfig(l2=True, center=False, bootstrap_b=1)
    protos = [
        build_prototype([axis_batch(0, 6, 4)], 1, cfg, np.random.default_rng(0), class_id="good"),
        build_prototype([axis_batch(0, 6, 4)], 1, cfg, np.random.default_rng(0), class_id="bad"),
    ]
    predicted, diag = classify(axis_batch(0, 5, 4), protos, 1, cfg)
    assert predicted == "bad"  # lexicographically smallest
    assert diag.margin == pytest.approx(0.0, abs=1e-12)


def test_classify_rejects_rank_mismatch():
    cfg = PipelineConfig(l2=True, center=False, bootstrap_b=1)
    protos = [
        build_prototype([axis_batch(0, 6, 4)], 1, cfg, np.random.default_rng(0), class_id="a"),
        build_prototype([axis_batch(1, 6, 4)], 1, cfg, np.random.default_rng(0), class_id="b"),
    ]
    with pytest.raises(RankMismatch):
        classify(axis_batch(0, 5, 4), protos, 2, cfg)


def test_planted_instances_satisfy_margin_theorem():
    rng = np.random.default_rng(17)
    for _ in range(25):
        inst = make_planted_instance(rng)
        assert inst.premise_holds
        predicted, diag = classify(inst.test_batch, inst.prototypes, inst.rank, inst.cfg)
        assert predicted == inst.true_label
        assert diag.margin >= inst.delta_p**2 / 4.0 - 1e-6


def test_diagnostics_invariant_enforced():
    with pytest.raises(ValueError):
        GpsoDiagnostics(
            delta_p=2.0, epsilon=0.01, gamma=0.5, margin=1.0, normalized_margin=0.5,
            rank=2, delta_proto=0.01, margin_condition_pass=False,
        )


def test_classification_invariant_to_row_permutation():
    rng = np.random.default_rng(23)
    inst = make_planted_instance(rng)
    base_pred, base_diag = classify(inst.test_batch, inst.prototypes, inst.rank, inst.cfg)
    perm = rng.permutation(inst.test_batch.n)
    permuted = EmbeddingBatch(rows=inst.test_batch.rows[perm])
    pred_perm, diag_perm = classify(permuted, inst.prototypes, inst.rank, inst.cfg)
    assert pred_perm == base_pred
    assert diag_perm.margin == pytest.approx(base_diag.margin, abs=1e-9)


def test_classification_invariant_to_common_rotation():
    from gramgate.gpso import Prototype
    from gramgate.gram import RankRProjector

    rng = np.random.default_rng(23)
    inst = make_planted_instance(rng)
    base_pred, base_diag = classify(inst.test_batch, inst.prototypes, inst.rank, inst.cfg)
    rot, _ = np.linalg.qr(rng.normal(size=(inst.test_batch.d, inst.test_batch.d)))
    rotated_test = EmbeddingBatch(rows=inst.test_batch.rows @ rot)
    rotated_protos = []
    for p in inst.prototypes:
        mat = rot.T @ p.projector.matrix @ rot
        rotated_protos.append(
            Prototype(
                class_id=p.class_id,
                projector=RankRProjector(matrix=0.5 * (mat + mat.T), rank=p.projector.rank,
                                         eigengap=p.projector.eigengap),
                dispersion=p.dispersion,
                surrogate_scatter=rot.T @ p.surrogate_scatter @ rot,
                replicate_count=p.replicate_count,
            )
        )
    pred_rot, diag_rot = classify(rotated_test, rotated_protos, inst.rank, inst.cfg)
    assert pred_rot == base_pred
    assert diag_rot.margin == pytest.approx(base_diag.margin, abs=1e-8)


def test_item_and_feature_space_decisions_agree_on_planted_instances():
    pc = PlantedConfig(items_per_batch=64, calibration_batches=4, prototype_batches=4,
                       bootstrap_b=2)
    rng = np.random.default_rng(31)
    for _ in range(15):
        seed = int(rng.integers(0, 2**32))
        feat = make_planted_instance(np.random.default_rng(seed), pc, space="feature",
                                     item_signature=True)
        item = make_planted_instance(np.random.default_rng(seed), pc, space="item",
                                     item_signature=True)
        pred_f, _ = classify(feat.test_batch, feat.prototypes, feat.rank, feat.cfg)
        pred_i, _ = classify(item.test_batch, item.prototypes, item.rank, item.cfg)
        assert pred_f == pred_i == feat.true_label


# --- grouped CV --------------------------------------------------------------------


def test_grouped_cv_separated_classes_are_perfect():
    data = planted_dataset(np.random.default_rng(3), groups=6, items_per_class=24)
    report = grouped_cv_evaluate(data, CFG)
    assert report.macro_accuracy == 1.0
    assert report.margin_pass_fraction == 1.0
    assert report.groups_evaluated == 6
    assert report.groups_skipped == 0
    assert set(report.class_accuracy) == {"good", "bad"}


def test_grouped_cv_coincident_classes_are_chance_level():
    data = planted_dataset(np.random.default_rng(4), groups=12, items_per_class=24,
                           coincident=True)
    report = grouped_cv_evaluate(data, PipelineConfig(l2=True, center=False, r_max=3,
                                                      bootstrap_b=4, n_splits=5, seed=12))
    assert abs(report.macro_accuracy - 0.5) <= 0.12


def test_grouped_cv_deterministic_given_seed():
    data = planted_dataset(np.random.default_rng(5), groups=4, items_per_class=16)
    a = grouped_cv_evaluate(data, CFG)
    b = grouped_cv_evaluate(data, CFG)
    assert a.fold_rows() == b.fold_rows()


def test_grouped_cv_skips_small_groups_and_counts_them():
    data = planted_dataset(np.random.default_rng(6), groups=3, items_per_class=16)
    # one group with a single bad item: below the two-per-class floor
    tiny_rows = l2_normalize_rows(np.random.default_rng(7).normal(size=(1, data[0].d)))
    data.append(EmbeddingBatch(rows=tiny_rows, group_id="tiny", class_label="bad"))
    data.append(
        EmbeddingBatch(
            rows=l2_normalize_rows(np.random.default_rng(8).normal(size=(3, data[0].d))),
            group_id="tiny",
            class_label="good",
        )
    )
    report = grouped_cv_evaluate(data, CFG)
    assert report.groups_evaluated == 3
    assert report.groups_skipped == 1


def test_grouped_cv_requires_an_evaluable_group():
    rows = l2_normalize_rows(np.random.default_rng(9).normal(size=(4, 5)))
    only_good = [EmbeddingBatch(rows=rows, group_id="g", class_label="good")]
    with pytest.raises(NoEvaluableGroups):
        grouped_cv_evaluate(only_good, CFG)


def test_fold_rows_match_report_schema():
    data = planted_dataset(np.random.default_rng(10), groups=2, items_per_class=12)
    report = grouped_cv_evaluate(data, CFG)
    expected = [
        "group_id", "split", "predicted", "true", "margin", "norm_margin",
        "rank", "delta_P", "epsilon", "gamma", "delta_proto", "margin_pass",
    ]
    assert list(report.fold_rows()[0].keys()) == expected
    # summary carries the table columns: macro and per-class accuracies
    # plus the mean prototype separation
    summary = report.summary_row()
    for key in ("macro_acc", "acc_good", "acc_bad", "mean_delta_p"):
        assert key in summary
