"""Gram geometry: construction, energies, projectors, duality."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gramgate.errors import (
    DimensionMismatch,
    IndexOutOfRange,
    NotSymmetric,
    RankTooLarge,
    TooFewEigenvalues,
    ZeroRow,
)
from gramgate.gram import (
    EmbeddingBatch,
    build_gram,
    eigengap_rank,
    interaction_energies,
    interaction_energy,
    l2_normalize_rows,
    normalized_energy,
    operator_norm,
    projector_overlap,
    top_r_projector,
    top_r_projector_dual,
)


def random_unit_batch(rng, n, d):
    return EmbeddingBatch(rows=l2_normalize_rows(rng.normal(size=(n, d))))


# --- build_gram ---------------------------------------------------------------


def test_orthonormal_rows_give_identity_gram():
    batch = EmbeddingBatch(rows=np.eye(2))
    out = build_gram(batch, center=False, l2=False)
    np.testing.assert_allclose(out.gram, np.eye(2), atol=1e-12)


def test_singleton_centered_gram_is_zero():
    batch = EmbeddingBatch(rows=np.array([[1.0, 0.0, 0.0]]))
    out = build_gram(batch, center=True, l2=True)
    assert out.centered_gram.shape == (1, 1)
    assert abs(out.centered_gram[0, 0]) < 1e-15


def test_centered_gram_matches_explicit_h_product_oracle():
    rng = np.random.default_rng(7)
    v = l2_normalize_rows(rng.normal(size=(3, 5)))
    out = build_gram(EmbeddingBatch(rows=v), center=True, l2=False)
    h = np.eye(3) - np.ones((3, 3)) / 3.0
    oracle = h @ (v @ v.T) @ h
    np.testing.assert_allclose(out.centered_gram, oracle, atol=1e-10)


def test_feature_scatter_honors_center_flag():
    rng = np.random.default_rng(8)
    v = l2_normalize_rows(rng.normal(size=(4, 3)))
    centered = build_gram(EmbeddingBatch(rows=v), center=True, l2=False)
    plain = build_gram(EmbeddingBatch(rows=v), center=False, l2=False)
    z = v - v.mean(axis=0)
    np.testing.assert_allclose(centered.feature_scatter, z.T @ z, atol=1e-12)
    np.testing.assert_allclose(plain.feature_scatter, v.T @ v, atol=1e-12)


def test_l2_rejects_zero_row():
    batch = EmbeddingBatch(rows=np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ZeroRow):
        build_gram(batch, center=False, l2=True)


def test_batch_rejects_ragged_and_bad_labels():
    with pytest.raises(DimensionMismatch):
        EmbeddingBatch(rows=np.zeros(3))
    with pytest.raises(ValueError):
        EmbeddingBatch(rows=np.eye(2), class_label="ugly")


def test_centering_idempotent():
    rng = np.random.default_rng(9)
    v = rng.normal(size=(6, 4))
    once = build_gram(EmbeddingBatch(rows=v), center=True, l2=True)
    z = l2_normalize_rows(v) - l2_normalize_rows(v).mean(axis=0)
    twice = build_gram(EmbeddingBatch(rows=z), center=True, l2=False)
    assert np.linalg.norm(once.centered_gram - twice.centered_gram) < 1e-10


# --- interaction energy --------------------------------------------------------


def test_identical_rows_hit_energy_upper_bound():
    v = np.tile(np.array([[0.0, 1.0, 0.0]]), (4, 1))
    gram = build_gram(EmbeddingBatch(rows=v), center=False, l2=True).gram
    assert interaction_energy(gram, 2) == pytest.approx(2.0, abs=1e-12)


def test_orthogonal_row_hits_energy_lower_bound():
    v = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    gram = build_gram(EmbeddingBatch(rows=v), center=False, l2=False).gram
    assert interaction_energy(gram, 0) == pytest.approx(1.0, abs=1e-12)


def test_energy_at_sixty_degrees_matches_cosine_sum_oracle():
    v = np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    gram = build_gram(EmbeddingBatch(rows=v), center=False, l2=True).gram
    # oracle: e^2 = sum_j cos^2(theta_ij) computed from raw dot products
    oracle = np.sqrt(sum(float(v[0] @ v[j]) ** 2 for j in range(2)))
    e = interaction_energy(gram, 0)
    assert e == pytest.approx(oracle, abs=1e-12)
    assert e == pytest.approx(1.1180, abs=1e-4)
    assert normalized_energy(gram, 0) == pytest.approx(0.7906, abs=1e-4)


def test_normalized_energy_extremes():
    same = np.tile(np.array([[1.0, 0.0]]), (5, 1))
    gram = build_gram(EmbeddingBatch(rows=same), center=False, l2=False).gram
    assert normalized_energy(gram, 0) == pytest.approx(1.0, abs=1e-12)
    v = np.eye(4)
    gram = build_gram(EmbeddingBatch(rows=v), center=False, l2=False).gram
    assert normalized_energy(gram, 1) == pytest.approx(0.5, abs=1e-12)


def test_energy_index_bounds():
    gram = np.eye(3)
    with pytest.raises(IndexOutOfRange):
        interaction_energy(gram, 3)


@given(st.integers(1, 32), st.integers(2, 64), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_energy_bounds_property(n, d, seed):
    rng = np.random.default_rng(seed)
    gram = build_gram(random_unit_batch(rng, n, d), center=False, l2=True).gram
    energies = interaction_energies(gram)
    assert np.all(energies >= 1.0 - 1e-9)
    assert np.all(energies <= np.sqrt(n) + 1e-9)


@given(st.integers(2, 12), st.integers(2, 8), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_energy_permutation_equivariance(n, d, seed):
    rng = np.random.default_rng(seed)
    batch = random_unit_batch(rng, n, d)
    perm = rng.permutation(n)
    gram = build_gram(batch, center=False, l2=False).gram
    permuted = build_gram(EmbeddingBatch(rows=batch.rows[perm]), center=False, l2=False).gram
    np.testing.assert_allclose(
        interaction_energies(permuted), interaction_energies(gram)[perm], atol=1e-10
    )


# --- projectors ----------------------------------------------------------------


def test_top_r_projector_diagonal():
    proj = top_r_projector(np.diag([3.0, 2.0, 1.0]), 1)
    np.testing.assert_allclose(proj.matrix, np.diag([1.0, 0.0, 0.0]), atol=1e-12)
    assert proj.eigengap == pytest.approx(1.0)


def test_top_r_projector_degenerate_identity():
    proj = top_r_projector(np.eye(3), 2)
    assert np.trace(proj.matrix) == pytest.approx(2.0, abs=1e-8)
    assert proj.eigengap == pytest.approx(0.0)


def test_top_r_projector_against_independent_eigensolver():
    from scipy.linalg import eigh as scipy_eigh

    rng = np.random.default_rng(12)
    s = rng.normal(size=(6, 6))
    s = s + s.T
    proj = top_r_projector(s, 2)
    assert np.linalg.norm(proj.matrix @ proj.matrix - proj.matrix) < 1e-8
    assert np.trace(proj.matrix) == pytest.approx(2.0, abs=1e-8)
    evals, evecs = scipy_eigh(s)
    u = evecs[:, np.argsort(evals)[::-1][:2]]
    np.testing.assert_allclose(proj.matrix, u @ u.T, atol=1e-8)


def test_top_r_projector_rejects_bad_inputs():
    with pytest.raises(NotSymmetric):
        top_r_projector(np.array([[0.0, 1.0], [0.0, 0.0]]), 1)
    with pytest.raises(RankTooLarge):
        top_r_projector(np.eye(2), 3)


def test_eigengap_rank_examples():
    assert eigengap_rank([5.0, 4.9, 1.0, 0.5], 3) == 2
    assert eigengap_rank([3.0, 2.0, 1.0], 2) == 1  # equal gaps: smallest rank


def test_eigengap_rank_matches_exhaustive_scan():
    rng = np.random.default_rng(21)
    # synthetic two-cluster scatter: two big eigenvalues then a tail
    evals = np.sort(np.concatenate([[9.0, 8.0], rng.uniform(0, 1, 6)]))[::-1]
    r_max = 5
    gaps = [evals[j - 1] - evals[j] for j in range(1, r_max + 1)]
    oracle = int(np.argmax(gaps)) + 1
    assert eigengap_rank(evals, r_max) == oracle
    assert oracle == 2


def test_eigengap_rank_rejects_short_or_unsorted():
    with pytest.raises(TooFewEigenvalues):
        eigengap_rank([1.0], 1)
    with pytest.raises(ValueError):
        eigengap_rank([1.0, 2.0], 1)


def test_projector_overlap_extremes():
    a = top_r_projector(np.diag([2.0, 1.0, 0.1]), 2)
    assert projector_overlap(a, a) == pytest.approx(2.0, abs=1e-10)
    p1 = top_r_projector(np.diag([1.0, 0.0, 0.0, 0.0]), 1)
    p2 = top_r_projector(np.diag([0.0, 0.0, 0.0, 1.0]), 1)
    assert projector_overlap(p1, p2) == pytest.approx(0.0, abs=1e-12)


def test_projector_overlap_matches_principal_angle_oracle():
    rng = np.random.default_rng(31)
    qa, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    qb, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    a = top_r_projector(qa @ qa.T, 2)
    b = top_r_projector(qb @ qb.T, 2)
    # oracle: sum of squared cosines of principal angles via SVD of qa^T qb
    cosines = np.linalg.svd(qa.T @ qb, compute_uv=False)
    assert projector_overlap(a, b) == pytest.approx(float(np.sum(cosines**2)), abs=1e-8)


def test_projector_identity_links_distance_and_overlap():
    rng = np.random.default_rng(32)
    for _ in range(20):
        s1, s2 = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        a = top_r_projector(s1 + s1.T, 2)
        b = top_r_projector(s2 + s2.T, 2)
        dist_sq = np.linalg.norm(a.matrix - b.matrix) ** 2
        assert dist_sq == pytest.approx(2 * 2 - 2 * projector_overlap(a, b), abs=1e-8)


def test_overlap_dimension_mismatch():
    a = top_r_projector(np.eye(3), 1)
    b = top_r_projector(np.eye(4), 1)
    with pytest.raises(DimensionMismatch):
        projector_overlap(a, b)


# --- operator norm -------------------------------------------------------------


def test_operator_norm_examples():
    assert operator_norm(np.diag([-4.0, 3.0])) == pytest.approx(4.0)
    assert operator_norm(np.zeros((3, 3))) == pytest.approx(0.0)


def test_operator_norm_matches_power_iteration_oracle():
    rng = np.random.default_rng(41)
    s = rng.normal(size=(5, 5))
    s = s + s.T
    # power iteration on S^2 (PSD) gives the squared spectral radius
    x = rng.normal(size=5)
    s2 = s @ s
    for _ in range(5000):
        x = s2 @ x
        x /= np.linalg.norm(x)
    oracle = np.sqrt(float(x @ s2 @ x))
    assert operator_norm(s) == pytest.approx(oracle, abs=1e-8)


# --- spectral duality ----------------------------------------------------------


@given(st.integers(3, 16), st.integers(2, 10), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_nonzero_spectrum_shared_between_spaces(n, d, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, d))
    z = v - v.mean(axis=0)
    item = np.sort(np.linalg.eigvalsh(z @ z.T))[::-1]
    feat = np.sort(np.linalg.eigvalsh(z.T @ z))[::-1]
    k = min(n, d)
    np.testing.assert_allclose(item[:k], feat[:k], atol=1e-8)


def test_projector_routes_agree_both_spaces():
    rng = np.random.default_rng(55)
    for _ in range(25):
        n, d = int(rng.integers(4, 20)), int(rng.integers(3, 9))
        z = rng.normal(size=(n, d))
        z -= z.mean(axis=0)
        r = 2
        for space in ("item", "feature"):
            direct = top_r_projector_dual(z, r, space, via=space)
            routed = top_r_projector_dual(z, r, space, via="feature" if space == "item" else "item")
            assert np.linalg.norm(direct.matrix - routed.matrix) < 1e-8
            assert direct.eigengap == pytest.approx(routed.eigengap, abs=1e-8)


def test_dual_routing_rejects_rank_beyond_shared_spectrum():
    z = np.zeros((4, 3))
    z[0, 0] = 1.0
    with pytest.raises(RankTooLarge):
        top_r_projector_dual(z, 2, "item", via="feature")


def test_feature_overlap_invariant_to_row_permutation():
    rng = np.random.default_rng(66)
    v = l2_normalize_rows(rng.normal(size=(8, 5)))
    ref = top_r_projector_dual(v, 2, "feature")
    for _ in range(5):
        perm = rng.permutation(8)
        proj = top_r_projector_dual(v[perm], 2, "feature")
        assert np.linalg.norm(proj.matrix - ref.matrix) < 1e-9
