"""Gaussian statistics, non-whitened PCA, Frechet distance, APA, and CLES.

The adherence score compares a candidate set C against two anchors built
from the reference set R: the matched pairs themselves (high adherence) and
a randomly re-paired copy R' (low adherence):

    score = 1/2 + (FAD(C, R') - FAD(C, R)) / (2 * FAD(R, R'))

clipped to [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import perturb
from .embed import EmbeddingSet
from .errors import (
    DegenerateAnchor,
    DimensionMismatch,
    EmptyInput,
    NumericalFailure,
    RankDeficientWarning,
    TooFewSamples,
)

PROJECTION_MODES = ("NP", "PCA100", "PCA10")


@dataclass(frozen=True)
class GaussianStats:
    """Mean vector and covariance matrix of an embedding set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class PcaProjection:
    """Orthonormal projection fitted on a reference set (never whitened)."""

    components: np.ndarray  # k x D, orthonormal rows
    center: np.ndarray  # D
    explained_variance: np.ndarray  # k, descending
    mode: str  # "NP" | "PCA<k>"

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class ApaResult:
    """The three pairwise distances and the resulting adherence score."""

    fad_cr: float
    fad_crp: float
    fad_rrp: float
    apa_raw: float
    apa: float
    clipped: bool

    def as_dict(self) -> dict:
        return {
            "fad_cr": self.fad_cr,
            "fad_crp": self.fad_crp,
            "fad_rrp": self.fad_rrp,
            "apa_raw": self.apa_raw,
            "apa": self.apa,
            "clipped": self.clipped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ApaResult":
        return cls(
            fad_cr=float(d["fad_cr"]),
            fad_crp=float(d["fad_crp"]),
            fad_rrp=float(d["fad_rrp"]),
            apa_raw=float(d["apa_raw"]),
            apa=float(d["apa"]),
            clipped=bool(d["clipped"]),
        )


def _as_matrix(data) -> np.ndarray:
    vectors = data.vectors if isinstance(data, EmbeddingSet) else data
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected an N x D matrix of embeddings")
    return m


def fit_gaussian(data: EmbeddingSet | np.ndarray) -> GaussianStats:
    """Column means and unbiased covariance (divisor N-1), symmetrized."""
    m = _as_matrix(data)
    n = m.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to fit a covariance, got {n}")
    mean = m.mean(axis=0)
    centered = m - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, cov=cov, n=n)


def fit_pca(reference: EmbeddingSet | np.ndarray, k: int | str | None) -> PcaProjection:
    """Top-k eigenvectors of the reference covariance; NP is the identity.

    Projected data is never variance-scaled. k may be an int, None/"NP",
    or a "PCA<k>" label. Zero-variance components are kept (with a
    RankDeficientWarning) when k exceeds the numerical rank.
    """
    if isinstance(k, str):
        if k.upper() == "NP":
            k = None
        elif k.upper().startswith("PCA"):
            k = int(k[3:])
        else:
            raise ValueError(f"unknown projection mode {k!r}")

    m = _as_matrix(reference)
    stats = fit_gaussian(m)
    dim = stats.dim

    eigvals, eigvecs = np.linalg.eigh(stats.cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]

    if k is None:
        return PcaProjection(
            components=np.eye(dim),
            center=np.zeros(dim),
            explained_variance=eigvals,
            mode="NP",
        )

    if k <= 0 or k > dim:
        raise DimensionMismatch(f"k={k} out of range for dimension {dim}")
    if m.shape[0] <= k:
        raise TooFewSamples(f"PCA with k={k} needs more than k samples, got {m.shape[0]}")

    rank = int(np.sum(eigvals > max(eigvals.max(), 0.0) * dim * np.finfo(np.float64).eps))
    if rank < k:
        warnings.warn(
            f"requested {k} components but numerical rank is {rank}; "
            "zero-variance components retained",
            RankDeficientWarning,
            stacklevel=2,
        )

    components = eigvecs[:, :k].T.copy()
    # deterministic sign: largest-magnitude coefficient of each component positive
    flips = np.sign(components[np.arange(k), np.argmax(np.abs(components), axis=1)])
    flips[flips == 0] = 1.0
    components *= flips[:, None]
    return PcaProjection(
        components=components,
        center=stats.mean,
        explained_variance=eigvals[:k],
        mode=f"PCA{k}",
    )


def project(p: PcaProjection, data: EmbeddingSet | np.ndarray):
    """Apply components @ (x - center) row-wise; identity projections copy through."""
    m = _as_matrix(data)
    if m.shape[1] != p.input_dim:
        raise DimensionMismatch(
            f"data dimension {m.shape[1]} != projection input dimension {p.input_dim}"
        )

    if p.mode == "NP":
        if isinstance(data, EmbeddingSet):
            return replace(data, vectors=data.vectors.copy())
        return m.copy()

    projected = (m - p.center) @ p.components.T
    if isinstance(data, EmbeddingSet):
        spec = replace(data.embedder, id=f"{data.embedder.id}+{p.mode.lower()}", dim=p.k)
        return replace(data, vectors=projected.astype(np.float32), embedder=spec)
    return projected


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussians.

    Evaluated in the symmetric form
    ||mu_a - mu_b||^2 + Tr(Sa) + Tr(Sb) - 2 Tr((Sa^1/2 Sb Sa^1/2)^1/2)
    with eigenvalues clamped at zero before square roots. Bitwise-equal
    inputs short-circuit to exactly 0.0, and arguments are put in a
    canonical order first so the result is bitwise symmetric.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension mismatch: {a.dim} vs {b.dim}")
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov):
        return 0.0
    if (a.mean.tobytes() + a.cov.tobytes()) > (b.mean.tobytes() + b.cov.tobytes()):
        a, b = b, a

    dmu = a.mean - b.mean
    mean_term = float(dmu @ dmu)

    def attempt(sa: np.ndarray, sb: np.ndarray) -> float:
        vals_a, vecs_a = np.linalg.eigh(sa)
        root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
        inner = root_a @ sb @ root_a
        inner = (inner + inner.T) / 2.0
        vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
        covs_term = float(np.trace(sa) + np.trace(sb) - 2.0 * np.sum(np.sqrt(vals)))
        return max(mean_term + covs_term, 0.0)

    try:
        return attempt(a.cov, b.cov)
    except np.linalg.LinAlgError:
        ridge = 1e-6 * float(np.mean(np.concatenate([np.diag(a.cov), np.diag(b.cov)])))
        eye = ridge * np.eye(a.dim)
        try:
            return attempt(a.cov + eye, b.cov + eye)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(
                f"eigendecomposition failed even with ridge {ridge:.3g}"
            ) from exc


def mismatch_pairs(reference_windows, seed):
    """Randomly re-pair reference windows across songs (delegates to perturb)."""
    return perturb.substitute_stems(reference_windows, seed)


def apa_score(
    c: GaussianStats,
    r: GaussianStats,
    r_prime: GaussianStats,
    epsilon_anchor: float = 1e-6,
) -> ApaResult:
    """Adherence of candidate stats against matched and mismatched anchors."""
    fad_rrp = frechet_distance(r, r_prime)
    if fad_rrp <= epsilon_anchor:
        raise DegenerateAnchor(
            f"FAD between reference and mismatched reference is {fad_rrp:.3g} "
            f"(<= {epsilon_anchor:.0e}); anchors are indistinguishable"
        )
    fad_cr = frechet_distance(c, r)
    fad_crp = frechet_distance(c, r_prime)
    raw = 0.5 + (fad_crp - fad_cr) / (2.0 * fad_rrp)
    clamped = min(1.0, max(0.0, raw))
    return ApaResult(
        fad_cr=fad_cr,
        fad_crp=fad_crp,
        fad_rrp=fad_rrp,
        apa_raw=raw,
        apa=clamped,
        clipped=clamped != raw,
    )


def cles(invariant_scores, noninvariant_scores) -> float:
    """Probability that a draw from the first list exceeds one from the second.

    Ties count one half. Fraction over all ordered pairs.
    """
    a = np.asarray(invariant_scores, dtype=np.float64)
    b = np.asarray(noninvariant_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyInput("both score lists must be non-empty")
    wins = np.sum(a[:, None] > b[None, :])
    ties = np.sum(a[:, None] == b[None, :])
    return float((wins + 0.5 * ties) / (a.size * b.size))
