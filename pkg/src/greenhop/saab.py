"""Saab transform: fixed DC anchor plus PCA-derived AC filters.

A patch ``x`` of length ``d`` is split into its DC part (projection on
``1/sqrt(d) * ones``) and the orthogonal complement, on which the
eigenvectors of the patch covariance give the AC filters. The number of
AC filters kept is driven by a cumulative-energy rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

REPORT_THRESHOLDS = (0.95, 0.96, 0.97, 0.98, 0.99)


@dataclass(frozen=True)
class SaabFilterBank:
    """One fitted Saab node.

    ``ac_filters`` is (K, d), row j is the j-th AC filter. ``spectrum`` is
    the full pre-truncation AC eigenvalue list; ``mean`` the training mean
    of DC-removed patches, used only for reconstruction; ``dc_variance``
    the training variance of the DC response.
    """

    dc_anchor: np.ndarray
    bias: float
    ac_filters: np.ndarray
    eigenvalues: np.ndarray
    total_ac_energy: float
    spectrum: np.ndarray
    mean: np.ndarray
    dc_variance: float = 0.0

    @property
    def dim(self) -> int:
        return self.dc_anchor.shape[0]

    @property
    def n_ac(self) -> int:
        return self.ac_filters.shape[0]

    def truncate(self, k: int) -> "SaabFilterBank":
        k = min(k, self.n_ac)
        return SaabFilterBank(self.dc_anchor, self.bias, self.ac_filters[:k],
                              self.eigenvalues[:k], self.total_ac_energy,
                              self.spectrum, self.mean, self.dc_variance)

    def as_float32(self) -> "SaabFilterBank":
        """Round every fitted array to float32 precision (kept as float64).

        The DC anchor is analytic and stays exact.
        """
        q = lambda a: np.ascontiguousarray(np.asarray(a, dtype=np.float32), dtype=np.float64)
        return SaabFilterBank(self.dc_anchor, float(np.float32(self.bias)),
                              q(self.ac_filters).reshape(self.ac_filters.shape),
                              q(self.eigenvalues), float(np.float32(self.total_ac_energy)),
                              q(self.spectrum), q(self.mean), float(np.float32(self.dc_variance)))


@dataclass(frozen=True)
class EnergyReport:
    eigenvalues: np.ndarray
    cumulative_ratio: np.ndarray
    k_at: dict = field(default_factory=dict)
    k_kept: int = 0


def dc_anchor(d: int) -> np.ndarray:
    return np.full(d, 1.0 / math.sqrt(d))


def select_k(eigenvalues, threshold: float) -> int:
    """Smallest K whose leading eigenvalues carry at least ``threshold`` of the energy."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise InvalidInput("select_k needs a non-empty 1-D spectrum")
    if not 0.0 < threshold <= 1.0:
        raise InvalidInput(f"threshold must lie in (0, 1], got {threshold}")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise InvalidInput("eigenvalues must be finite and nonnegative")
    if np.any(np.diff(lam) > 0):
        raise InvalidInput("eigenvalues must be sorted non-increasing")
    total = lam.sum()
    if total <= 0:
        return 0
    ratio = np.cumsum(lam) / total
    hit = np.flatnonzero(ratio >= threshold)
    # cumulative roundoff can leave the last ratio a hair under 1.0
    return int(hit[0]) + 1 if hit.size else lam.size


def energy_report(spectrum, k_kept: int, thresholds=REPORT_THRESHOLDS) -> EnergyReport:
    lam = np.asarray(spectrum, dtype=np.float64)
    total = lam.sum()
    if lam.size and total > 0:
        cum = np.cumsum(lam) / total
        cum[-1] = 1.0
    else:
        cum = np.ones_like(lam)
    k_at = {t: (select_k(lam, t) if lam.size else 0) for t in thresholds}
    return EnergyReport(lam, cum, k_at, int(k_kept))


def default_margin(k99: int) -> int:
    return int(math.ceil(0.1 * k99))


class SaabAccumulator:
    """Streaming moment accumulator for one Saab node.

    Partial results from independent batches can be merged in any order;
    merging in a fixed order keeps the fit bit-reproducible.
    """

    def __init__(self, d: int):
        if d < 2:
            raise InvalidInput(f"patch dimension must be >= 2, got {d}")
        self.d = d
        self.anchor = dc_anchor(d)
        self.n = 0
        self.s1 = np.zeros(d)
        self.s2 = np.zeros((d, d))
        self.power = 0.0
        self.dc1 = 0.0
        self.dc2 = 0.0
        self.min_dc = math.inf

    def update(self, patches: np.ndarray) -> "SaabAccumulator":
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise InvalidInput(f"expected patches of length {self.d}, got shape {x.shape}")
        if x.shape[0] == 0:
            return self
        if not np.all(np.isfinite(x)):
            raise InvalidInput("patches contain non-finite values")
        dc = x @ self.anchor
        ac = x - np.outer(dc, self.anchor)
        self.n += x.shape[0]
        self.s1 += ac.sum(axis=0)
        self.s2 += ac.T @ ac
        self.power += float(np.einsum("ij,ij->", x, x))
        self.dc1 += float(dc.sum())
        self.dc2 += float(dc @ dc)
        self.min_dc = min(self.min_dc, float(dc.min()))
        return self

    def merge(self, other: "SaabAccumulator") -> "SaabAccumulator":
        if other.d != self.d:
            raise InvalidInput("cannot merge accumulators of different dimension")
        self.n += other.n
        self.s1 += other.s1
        self.s2 += other.s2
        self.power += other.power
        self.dc1 += other.dc1
        self.dc2 += other.dc2
        self.min_dc = min(self.min_dc, other.min_dc)
        return self

    @property
    def dc_variance(self) -> float:
        if self.n == 0:
            return 0.0
        m = self.dc1 / self.n
        return max(0.0, self.dc2 / self.n - m * m)

    def finalize(self) -> SaabFilterBank:
        """Full-spectrum bank (all non-degenerate AC directions, untruncated)."""
        if self.n < 2:
            raise InvalidInput(f"need at least 2 patches, got {self.n}")
        d = self.d
        mean = self.s1 / self.n
        cov = self.s2 / self.n - np.outer(mean, mean)
        cov = 0.5 * (cov + cov.T)
        basis = _complement_basis(self.anchor)
        lam, w = np.linalg.eigh(basis.T @ cov @ basis)
        order = np.argsort(-lam, kind="stable")
        lam = np.clip(lam[order], 0.0, None)
        vecs = (basis @ w[:, order]).T
        vecs = _canonical_signs(vecs)
        # directions below the noise floor of the data scale count as zero energy
        floor = 1e-10 * max(self.power / (self.n * d), np.finfo(float).tiny)
        rank = int(np.count_nonzero(lam > floor))
        lam[rank:] = 0.0
        bias = max(0.0, -self.min_dc)
        return SaabFilterBank(self.anchor.copy(), bias, vecs[:rank], lam[:rank],
                              float(lam.sum()), lam.copy(), mean, self.dc_variance)


def _complement_basis(anchor: np.ndarray) -> np.ndarray:
    """Orthonormal basis (d, d-1) of the complement of ``anchor``."""
    d = anchor.shape[0]
    q, _ = np.linalg.qr(np.column_stack([anchor, np.eye(d)[:, : d - 1]]))
    return q[:, 1:]


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(vecs.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def fit_saab(patches, energy_threshold: float = 0.99, safety_margin: int | None = None):
    """Fit a Saab bank on (N, d) patches; return ``(bank, report)``.

    ``safety_margin=None`` keeps 10% (rounded up) of the 99%-energy count
    beyond the threshold count.
    """
    try:
        x = np.asarray(patches, dtype=np.float64)
    except ValueError:
        x = None
    if x is None or x.ndim != 2:
        raise InvalidInput("patches must form an (N, d) array of equal-length vectors")
    if x.shape[0] < 2:
        raise InvalidInput(f"need at least 2 patches, got {x.shape[0]}")
    if not 0.0 < energy_threshold <= 1.0:
        raise InvalidInput(f"energy_threshold must lie in (0, 1], got {energy_threshold}")
    if safety_margin is not None and safety_margin < 0:
        raise InvalidInput("safety_margin must be nonnegative")
    full = SaabAccumulator(x.shape[1]).update(x).finalize()
    k = keep_count(full.eigenvalues, energy_threshold, safety_margin)
    bank = full.truncate(k)
    return bank, energy_report(full.spectrum, bank.n_ac)


def keep_count(eigenvalues, threshold: float, margin: int | None) -> int:
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.size == 0 or lam.sum() <= 0:
        return 0
    k = select_k(lam, threshold)
    if margin is None:
        margin = default_margin(select_k(lam, 0.99))
    return min(k + margin, lam.size)


def transform(bank: SaabFilterBank, patches: np.ndarray) -> np.ndarray:
    """Responses (N, 1+K): column 0 is the biased DC response."""
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.dim:
        raise InvalidInput(f"expected patches of length {bank.dim}, got shape {x.shape}")
    out = np.empty((x.shape[0], 1 + bank.n_ac))
    out[:, 0] = x @ bank.dc_anchor + bank.bias
    if bank.n_ac:
        # fixed C layout keeps the BLAS summation order independent of how the bank was built
        out[:, 1:] = x @ np.ascontiguousarray(bank.ac_filters).T
    return out


def apply_saab(bank: SaabFilterBank, patch) -> np.ndarray:
    x = np.asarray(patch, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInput("apply_saab takes a single patch vector")
    return transform(bank, x[None, :])[0]


def reconstruct(bank: SaabFilterBank, responses: np.ndarray) -> np.ndarray:
    """Invert ``transform``; discarded AC directions are filled from the training mean."""
    y = np.atleast_2d(np.asarray(responses, dtype=np.float64))
    a = bank.ac_filters
    x = np.outer(y[:, 0] - bank.bias, bank.dc_anchor)
    if bank.n_ac:
        x += y[:, 1:] @ a
    fill = bank.mean - (a.T @ (a @ bank.mean) if bank.n_ac else 0.0)
    return x + fill


def residual_energy(bank: SaabFilterBank, patches: np.ndarray) -> tuple[float, float]:
    """(sum of squared reconstruction error, sum of squared centred AC energy)."""
    x = np.asarray(patches, dtype=np.float64)
    err = x - reconstruct(bank, transform(bank, x))
    dc = x @ bank.dc_anchor
    ac = x - np.outer(dc, bank.dc_anchor) - bank.mean
    return float(np.sum(err * err)), float(np.sum(ac * ac))


def relative_reconstruction_error(bank: SaabFilterBank, patches: np.ndarray) -> float:
    """Squared reconstruction error relative to the centred AC energy.

    Equals the discarded share of AC eigen-energy on the training patches.
    """
    err, energy = residual_energy(bank, patches)
    return err / energy if energy > 0 else 0.0
