"""Haar-random unitaries and ensemble statistics for circuit benchmarking.

Covers the comparisons used to judge how Haar-like a reconfigurable
device is: pooled squared-moduli and phase histograms of submatrix
ensembles, column-similarity distributions, histogram overlap, and the
similarity measure used to quantify reproducibility.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .evolution import UnitaryMatrix, unitarity_defect

DEFAULT_BINS = 25


@dataclass(frozen=True)
class Histogram:
    """Normalized histogram: strictly increasing edges, masses summing to 1."""

    bin_edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if len(edges) != len(masses) + 1:
            raise ConfigurationError("need len(edges) == len(masses) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ConfigurationError("bin edges must be strictly increasing")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-12:
            raise ConfigurationError("masses must be nonnegative and sum to 1")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_samples(cls, samples, bin_edges) -> "Histogram":
        counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bin_edges)
        total = counts.sum()
        if total == 0:
            raise ConfigurationError("no samples fall inside the bin range")
        return cls(edges, counts / total)


def haar_unitary(m: int, rng_seed) -> UnitaryMatrix:
    """Haar-distributed m x m unitary via QR of a complex Ginibre matrix.

    The R-diagonal phases are divided out so the distribution is exactly
    invariant under one-sided multiplication by fixed unitaries.
    """
    if m < 1:
        raise ConfigurationError("m must be at least 1")
    rng = np.random.default_rng(rng_seed)
    z = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    q = q * (d / np.abs(d))
    return UnitaryMatrix(m, q, unitarity_defect(q))


def haar_columns(m: int, n_columns: int, rng_seed) -> np.ndarray:
    """Squared-moduli vectors of independent Haar columns, shape (n, m).

    A Haar column is a uniformly random unit vector, i.e. a normalized
    complex Gaussian vector, so columns are sampled directly without QR.
    """
    rng = np.random.default_rng(rng_seed)
    v = rng.standard_normal((n_columns, m)) ** 2 + rng.standard_normal((n_columns, m)) ** 2
    return v / v.sum(axis=1, keepdims=True)


def similarity(p, q) -> float:
    """Squared Bhattacharyya coefficient (sum_i sqrt(p_i q_i))^2 in [0, 1].

    Symmetric, equals 1 exactly when the distributions coincide, 0 on
    disjoint supports.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ConfigurationError("distributions must have the same length")
    return float(np.sqrt(p * q).sum() ** 2)


def pairwise_similarities(columns) -> np.ndarray:
    """Similarities of all unordered pairs of probability vectors."""
    cols = np.asarray(columns, dtype=float)
    root = np.sqrt(cols)
    gram = root @ root.T
    iu, ju = np.triu_indices(len(cols), k=1)
    return gram[iu, ju] ** 2


def column_similarity_distribution(m: int, ensemble_size: int, rng_seed,
                                   n_bins: int = DEFAULT_BINS) -> Histogram:
    """Similarity histogram over pairs of independent Haar columns.

    ``ensemble_size`` columns are drawn and all unordered pairs compared,
    binned uniformly on [0, 1].
    """
    if ensemble_size < 2:
        raise ConfigurationError("need at least two columns to form a pair")
    cols = haar_columns(m, ensemble_size, rng_seed)
    sims = pairwise_similarities(cols)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(np.clip(sims, 0.0, 1.0), bins=edges)
    return Histogram(edges, counts / counts.sum())


def histogram_overlap(h1: Histogram, h2: Histogram) -> float:
    """Shared area sum_bins min(mass1, mass2); requires identical edges."""
    if len(h1.bin_edges) != len(h2.bin_edges) or \
            not np.allclose(h1.bin_edges, h2.bin_edges, rtol=0.0, atol=1e-12):
        raise ConfigurationError("histograms must share identical bin edges")
    return float(np.minimum(h1.masses, h2.masses).sum())


def gauge_fix_phases(sub: np.ndarray) -> np.ndarray:
    """Phases with the first row and first column rotated to zero.

    Returns the (rows, cols) phase array of sub after multiplying each row
    and column by the unit phases that null row 0 and column 0; only the
    remaining (rows-1) x (cols-1) block carries information.
    """
    sub = np.asarray(sub, dtype=complex)
    theta = np.angle(sub)
    fixed = theta - theta[0:1, :] - theta[:, 0:1] + theta[0, 0]
    return np.angle(np.exp(1j * fixed))


def device_submatrix_ensemble(layout, model, bank, inputs, n_matrices: int,
                              rng_seed, power_range=(0.0, 500.0),
                              n_steps: int = 512):
    """Input-row submatrices of the device under random heater settings.

    Heater powers are drawn uniformly over ``power_range`` per matrix, the
    circuit is propagated, and the rows addressed by ``inputs`` are taken;
    this is the reconfigurable-device ensemble the Haar histograms are
    compared against.
    """
    from .evolution import propagate

    rng = np.random.default_rng(rng_seed)
    subs = []
    for _ in range(n_matrices):
        powers = rng.uniform(power_range[0], power_range[1], bank.n_heaters)
        u = propagate(layout, model, bank.with_powers(powers), n_steps=n_steps)
        subs.append(u.entries[:, list(inputs)].T.copy())
    return subs


def ensemble_moduli_phase_histograms(submatrices, n_bins: int = DEFAULT_BINS):
    """Pooled squared-moduli and gauge-fixed phase histograms of an ensemble.

    Moduli pool every entry and are binned on [0, 1]; phases are pooled
    over the gauge-free block only (the reference row and column are zero
    by construction) and binned on (-pi, pi].
    """
    moduli, phases = [], []
    for sub in submatrices:
        sub = np.asarray(sub, dtype=complex)
        moduli.append((np.abs(sub) ** 2).ravel())
        phases.append(gauge_fix_phases(sub)[1:, 1:].ravel())
    moduli = np.concatenate(moduli)
    phases = np.concatenate(phases)
    edges_m = np.linspace(0.0, 1.0, n_bins + 1)
    counts_m, _ = np.histogram(np.clip(moduli, 0.0, 1.0), bins=edges_m)
    edges_p = np.linspace(-np.pi, np.pi, n_bins + 1)
    counts_p, _ = np.histogram(phases, bins=edges_p)
    return (Histogram(edges_m, counts_m / counts_m.sum()),
            Histogram(edges_p, counts_p / counts_p.sum()))
