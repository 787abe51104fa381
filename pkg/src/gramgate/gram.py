"""Gram-matrix geometry for batches of response embeddings.

Builds plain and centered Gram matrices G = V V^T and G~ = H G H
(H = I - (1/n) 1 1^T), the feature-space scatter V^T H V, per-item
interaction energies, and rank-r spectral projectors compared through
their Frobenius overlap.

Item space (n x n) and feature space (d x d) carry the same nonzero
spectrum, so every projector here can be computed through whichever
eigendecomposition is smaller; see :func:`top_r_projector_dual`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    NotSymmetric,
    RankTooLarge,
    TooFewEigenvalues,
    ZeroRow,
)

SYMMETRY_RTOL = 1e-8
UNIT_NORM_ATOL = 1e-9

CLASS_LABELS = ("good", "bad")


@dataclass(frozen=True)
class EmbeddingBatch:
    """One queue of response embeddings with group metadata.

    ``rows`` is an (n, d) float array, one embedding per response. If
    ``l2_normalized`` is set, every row must already have unit Euclidean
    norm within 1e-9.
    """

    rows: np.ndarray
    group_id: str = ""
    class_label: str | None = None
    l2_normalized: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise DimensionMismatch(f"rows must be a 2-D array, got shape {rows.shape}")
        if rows.shape[0] < 1 or rows.shape[1] < 1:
            raise DimensionMismatch(f"need n >= 1 and d >= 1, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("embedding rows contain non-finite entries")
        if self.class_label is not None and self.class_label not in CLASS_LABELS:
            raise ValueError(f"class_label must be one of {CLASS_LABELS}, got {self.class_label!r}")
        if self.l2_normalized:
            norms = np.linalg.norm(rows, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_ATOL):
                raise ValueError("l2_normalized batch contains rows with norm != 1")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class GramMatrices:
    """Gram matrices of one batch.

    ``gram`` is G = V V^T, ``centered_gram`` is G~ = H G H, and
    ``feature_scatter`` is V^T H V when ``centered`` else V^T V.
    """

    gram: np.ndarray
    centered_gram: np.ndarray
    feature_scatter: np.ndarray
    centered: bool

    def __post_init__(self):
        for name in ("gram", "centered_gram", "feature_scatter"):
            mat = getattr(self, name)
            if np.linalg.norm(mat - mat.T) > 1e-10 * max(1.0, np.linalg.norm(mat)):
                raise NotSymmetric(f"{name} is not symmetric")
        row_sums = np.abs(self.centered_gram.sum(axis=1))
        if np.any(row_sums > 1e-8 * max(1.0, np.abs(self.centered_gram).max())):
            raise ValueError("centered_gram row sums are not zero")

    @property
    def n(self) -> int:
        return self.gram.shape[0]


@dataclass(frozen=True)
class RankRProjector:
    """Symmetric idempotent matrix onto a top-r eigenspace.

    ``eigengap`` records lambda_r - lambda_{r+1} of the source matrix
    (0.0 when r equals the ambient dimension).
    """

    matrix: np.ndarray
    rank: int
    eigengap: float

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        m = mat.shape[0]
        if mat.ndim != 2 or mat.shape[1] != m:
            raise DimensionMismatch(f"projector must be square, got {mat.shape}")
        if np.linalg.norm(mat - mat.T) > 1e-10 * max(1.0, np.linalg.norm(mat)):
            raise NotSymmetric("projector is not symmetric")
        if np.linalg.norm(mat @ mat - mat) > 1e-8:
            raise ValueError("projector is not idempotent within 1e-8")
        if abs(np.trace(mat) - self.rank) > 1e-8:
            raise ValueError(f"trace {np.trace(mat)!r} does not match rank {self.rank}")
        if self.eigengap < 0:
            raise ValueError("eigengap must be nonnegative")
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def l2_normalize_rows(v: np.ndarray) -> np.ndarray:
    """Rescale every row to unit norm; all-zero rows are rejected."""
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroRow(f"cannot L2-normalize all-zero row {zero[0]}")
    return v / norms[:, None]


def _symmetrize(s: np.ndarray) -> np.ndarray:
    return 0.5 * (s + s.T)


def _require_symmetric(s: np.ndarray, what: str = "matrix") -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionMismatch(f"{what} must be square, got shape {s.shape}")
    denom = max(1.0, np.linalg.norm(s))
    if np.linalg.norm(s - s.T) > SYMMETRY_RTOL * denom:
        raise NotSymmetric(f"{what} is not symmetric within relative tolerance {SYMMETRY_RTOL}")
    return s


def build_gram(batch: EmbeddingBatch, center: bool = True, l2: bool = True) -> GramMatrices:
    """Gram matrices of a batch: G, G~ = HGH, and the feature scatter.

    With ``l2`` the rows are renormalized first. The centered Gram is
    always computed; ``center`` only selects which feature scatter is
    returned (V^T H V versus V^T V). For n = 1 the centering matrix H
    is zero, so the centered Gram degenerates to the zero matrix.
    """
    v = batch.rows
    if l2:
        v = l2_normalize_rows(v)
    gram = _symmetrize(v @ v.T)
    z = v - v.mean(axis=0, keepdims=True)
    centered_gram = _symmetrize(z @ z.T)
    w = z if center else v
    feature_scatter = _symmetrize(w.T @ w)
    return GramMatrices(
        gram=gram,
        centered_gram=centered_gram,
        feature_scatter=feature_scatter,
        centered=center,
    )


def interaction_energy(gram: np.ndarray, i: int) -> float:
    """Euclidean norm of Gram column i.

    With unit-norm rows this equals sqrt(sum_j cos^2 theta_ij) and lies
    in [1, sqrt(n)]: sqrt(n) when every row aligns with row i, 1 when
    row i is orthogonal to all others.
    """
    gram = np.asarray(gram, dtype=float)
    n = gram.shape[0]
    if not 0 <= i < n:
        raise IndexOutOfRange(f"index {i} outside batch of size {n}")
    return float(np.linalg.norm(gram[:, i]))


def interaction_energies(gram: np.ndarray) -> np.ndarray:
    """Column norms of the Gram matrix, one energy per item."""
    gram = np.asarray(gram, dtype=float)
    return np.linalg.norm(gram, axis=0)


def normalized_energy(gram: np.ndarray, i: int) -> float:
    """Interaction energy scaled by sqrt(n), a score in [0, 1]."""
    n = np.asarray(gram).shape[0]
    return interaction_energy(gram, i) / np.sqrt(n)


def normalized_energies(gram: np.ndarray) -> np.ndarray:
    """All per-item normalized energies of a batch."""
    gram = np.asarray(gram, dtype=float)
    return interaction_energies(gram) / np.sqrt(gram.shape[0])


def descending_eigh(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetrized matrix, eigenvalues descending."""
    evals, evecs = np.linalg.eigh(_symmetrize(np.asarray(s, dtype=float)))
    return evals[::-1], evecs[:, ::-1]


def top_r_projector(s: np.ndarray, r: int) -> RankRProjector:
    """Projector onto the span of the r leading eigenvectors of ``s``.

    Eigenvalues are sorted descending; ties at the cut keep the
    eigensolver's ordering and report an eigengap of 0. The matrix is
    symmetrized before decomposition.
    """
    s = _require_symmetric(s)
    m = s.shape[0]
    if not 1 <= r <= m:
        raise RankTooLarge(f"rank {r} not in [1, {m}]")
    evals, evecs = descending_eigh(s)
    u = evecs[:, :r]
    gap = float(evals[r - 1] - evals[r]) if r < m else 0.0
    return RankRProjector(matrix=_symmetrize(u @ u.T), rank=r, eigengap=max(gap, 0.0))


def eigengap_rank(eigenvalues: np.ndarray, r_max: int) -> int:
    """Rank at the largest eigenvalue gap, capped at ``r_max``.

    Scans j in [1, min(r_max, len - 1)] and returns the smallest j
    attaining the maximal gap lambda_j - lambda_{j+1}.
    """
    e = np.asarray(eigenvalues, dtype=float).ravel()
    if e.size < 2:
        raise TooFewEigenvalues(f"need at least 2 eigenvalues, got {e.size}")
    if r_max < 1:
        raise ValueError(f"r_max must be >= 1, got {r_max}")
    tol = 1e-10 * max(1.0, float(np.abs(e).max()))
    if np.any(np.diff(e) > tol):
        raise ValueError("eigenvalues must be sorted descending")
    hi = min(r_max, e.size - 1)
    gaps = e[:hi] - e[1 : hi + 1]
    return int(np.argmax(gaps)) + 1


def projector_overlap(a: RankRProjector, b: RankRProjector) -> float:
    """Frobenius inner product trace(A^T B) of two projectors.

    For equal-rank projectors this satisfies <P, P> = r and
    ||A - B||_F^2 = 2 r - 2 <A, B>.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"ambient dimensions differ: {a.dim} vs {b.dim}")
    return float(np.sum(a.matrix * b.matrix))


def frobenius_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product of two symmetric matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def operator_norm(s: np.ndarray) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    s = _require_symmetric(s)
    if s.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(_symmetrize(s)))))


def top_r_projector_dual(
    z: np.ndarray, r: int, space: str = "item", via: str = "auto"
) -> RankRProjector:
    """Rank-r projector of Z Z^T (``space="item"``) or Z^T Z (``"feature"``).

    Z Z^T and Z^T Z share their nonzero spectrum, so the target projector
    can be computed from either eigendecomposition: the left and right
    bases exchange through U_r = Z W_r / sigma_r and W_r = Z^T U_r / sigma_r.
    ``via`` picks the decomposition ("item", "feature", or "auto" for the
    smaller one); the result is identical up to floating point.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise DimensionMismatch(f"Z must be 2-D, got shape {z.shape}")
    n, d = z.shape
    if space not in ("item", "feature"):
        raise ValueError(f"space must be 'item' or 'feature', got {space!r}")
    if via not in ("auto", "item", "feature"):
        raise ValueError(f"via must be 'auto', 'item' or 'feature', got {via!r}")
    target_dim = n if space == "item" else d
    if not 1 <= r <= target_dim:
        raise RankTooLarge(f"rank {r} not in [1, {target_dim}]")

    if via == "auto":
        via = "item" if n <= d else "feature"
        if r > min(n, d):
            via = space  # routing needs r shared eigenpairs

    if via == space:
        source = z @ z.T if space == "item" else z.T @ z
        return top_r_projector(source, r)

    if r > min(n, d):
        raise RankTooLarge(f"rank {r} exceeds min(n, d) = {min(n, d)}; cannot route via {via}")
    source = z @ z.T if via == "item" else z.T @ z
    evals, evecs = descending_eigh(source)
    lead = evals[:r]
    if lead[-1] <= 1e-12 * max(1.0, float(evals[0])):
        raise RankTooLarge(f"matrix is rank deficient below r = {r}; cannot route via {via}")
    basis = evecs[:, :r]
    if space == "item":
        routed = z @ basis / np.sqrt(lead)
    else:
        routed = z.T @ basis / np.sqrt(lead)
    q, _ = np.linalg.qr(routed)
    m_src = source.shape[0]
    if r < target_dim:
        lam_next = float(evals[r]) if r < m_src else 0.0
        gap = max(float(evals[r - 1]) - lam_next, 0.0)
    else:
        gap = 0.0
    return RankRProjector(matrix=_symmetrize(q @ q.T), rank=r, eigengap=gap)
