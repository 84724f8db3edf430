"""Exact multi-photon statistics for a linear-optical circuit.

Probabilities follow the standard scattering construction: for input
occupations t and output occupations s the relevant submatrix of U takes
column j repeated t_j times and row i repeated s_i times, with U[i, j]
the amplitude from input mode j to output mode i. Indistinguishable
photons give |Per M|^2 / (prod_i s_i! prod_j t_j!); fully distinguishable
photons give Per(|M|^2) / prod_i s_i! (input factorials must not divide
the distinguishable law or the full distribution would no longer sum
to one for inputs with multiply occupied modes).

The four-photon source is a two-pair SPDC mixture over the branches
|1111>, |2002> and |0220> in the occupation order (n4, n1, n2, n3) with
branch weights (alpha, beta, gamma) = (R, R^2, 1).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigurationError

MAX_PERMANENT_SIZE = 20
_BATCH_PERMANENT_MAX = 6

SPDC_BRANCHES = ("1111", "2002", "0220")


@dataclass(frozen=True)
class FockPattern:
    """Occupation-number vector for m modes."""

    occupations: tuple

    def __post_init__(self):
        if any(o < 0 for o in self.occupations):
            raise ConfigurationError("occupations must be nonnegative")
        object.__setattr__(self, "occupations", tuple(int(o) for o in self.occupations))

    @classmethod
    def from_modes(cls, modes, m) -> "FockPattern":
        occ = [0] * m
        for mode in modes:
            occ[mode] += 1
        return cls(tuple(occ))

    @property
    def m(self) -> int:
        return len(self.occupations)

    @property
    def n(self) -> int:
        return sum(self.occupations)

    @property
    def collision_free(self) -> bool:
        return all(o <= 1 for o in self.occupations)

    def modes(self) -> tuple:
        """Sorted mode indices with multiplicity."""
        out = []
        for i, o in enumerate(self.occupations):
            out.extend([i] * o)
        return tuple(out)


@dataclass(frozen=True)
class SourceWeights:
    """Branch weights of the post-selected two-pair SPDC state."""

    r: float
    alpha: float
    beta: float
    gamma: float
    normalized: tuple

    @classmethod
    def from_ratio(cls, r: float) -> "SourceWeights":
        if r < 0:
            raise ConfigurationError("pair-rate ratio R must be nonnegative")
        alpha, beta, gamma = r, r * r, 1.0
        total = alpha + beta + gamma
        return cls(r, alpha, beta, gamma,
                   (alpha / total, beta / total, gamma / total))


@dataclass(frozen=True)
class SampleEvent:
    """One detected multi-photon outcome."""

    index: int
    branch: str
    input_modes: tuple
    output: tuple
    distinguishable: bool


def spdc_weights(r: float) -> SourceWeights:
    """Weights (alpha, beta, gamma) = (R, R^2, 1) of the SPDC branch mixture."""
    return SourceWeights.from_ratio(r)


def spdc_branch_pattern(branch: str, input_modes, m: int) -> FockPattern:
    """Input Fock pattern of an SPDC branch on the designated waveguides.

    ``input_modes`` maps the four source modes, in the occupation order
    (n4, n1, n2, n3), to waveguide indices.
    """
    if len(input_modes) != 4:
        raise ConfigurationError("SPDC source needs 4 designated input modes")
    if branch not in SPDC_BRANCHES:
        raise ConfigurationError(f"unknown SPDC branch {branch!r}")
    occ = [0] * m
    for mode, count in zip(input_modes, (int(ch) for ch in branch)):
        occ[mode] += count
    return FockPattern(tuple(occ))


def permanent(a) -> complex:
    """Exact permanent of a square complex matrix via Glynn's formula.

    Gray-code iteration over the 2^(n-1) sign vectors keeps the running
    column sums, so the cost is O(2^n n). Matrices up to 20 x 20 are
    supported.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("permanent is defined for square matrices")
    n = a.shape[0]
    if n < 1:
        raise ValueError("permanent needs at least a 1 x 1 matrix")
    if n > MAX_PERMANENT_SIZE:
        raise CapacityError(f"permanent limited to n <= {MAX_PERMANENT_SIZE}, got {n}")
    if n == 1:
        return complex(a[0, 0])
    # delta_0 is pinned to +1; bit b of the Gray code toggles delta_{b+1}
    sums = a.sum(axis=0)
    total = np.prod(sums)
    sign = 1
    gray = 0
    for k in range(1, 1 << (n - 1)):
        new_gray = k ^ (k >> 1)
        changed = new_gray ^ gray
        row = changed.bit_length()  # flipped delta index in 1..n-1
        if new_gray & changed:
            sums = sums - 2.0 * a[row]
        else:
            sums = sums + 2.0 * a[row]
        sign = -sign
        total += sign * np.prod(sums)
        gray = new_gray
    return complex(total / 2 ** (n - 1))


_PERM_INDEX_CACHE: dict = {}


def _permutation_indices(n: int) -> np.ndarray:
    if n not in _PERM_INDEX_CACHE:
        _PERM_INDEX_CACHE[n] = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    return _PERM_INDEX_CACHE[n]


def _permanent_batch(mats: np.ndarray) -> np.ndarray:
    """Permanents of a (..., n, n) stack via the permutation sum (small n).

    Vectorized hot path for the validation counters; agrees with
    :func:`permanent` and is cross-checked against it in the tests.
    """
    mats = np.asarray(mats)
    n = mats.shape[-1]
    if n > _BATCH_PERMANENT_MAX:
        raise CapacityError(f"batched permanent limited to n <= {_BATCH_PERMANENT_MAX}")
    perms = _permutation_indices(n)                      # (n!, n)
    rows = np.arange(n)
    terms = mats[..., rows[None, :], perms]              # (..., n!, n)
    return terms.prod(axis=-1).sum(axis=-1)


def scattering_submatrix(u, input_pattern: FockPattern, output_pattern: FockPattern) -> np.ndarray:
    """n x n submatrix with rows from output occupations, columns from inputs."""
    u = np.asarray(u)
    if input_pattern.n != output_pattern.n:
        raise ValueError("input and output photon numbers differ")
    rows = output_pattern.modes()
    cols = input_pattern.modes()
    return u[np.ix_(rows, cols)]


def _occupation_factorial(pattern: FockPattern) -> float:
    return math.prod(math.factorial(o) for o in pattern.occupations if o > 1)


def output_probability(u, input_pattern: FockPattern, output_pattern: FockPattern,
                       statistics: str = "indistinguishable") -> float:
    """Probability of one output pattern for the given photon statistics."""
    sub = scattering_submatrix(u, input_pattern, output_pattern)
    s_fact = _occupation_factorial(output_pattern)
    if statistics == "indistinguishable":
        t_fact = _occupation_factorial(input_pattern)
        return float(abs(permanent(sub)) ** 2 / (s_fact * t_fact))
    if statistics == "distinguishable":
        return float(permanent(np.abs(sub) ** 2).real / s_fact)
    raise ConfigurationError(f"unknown statistics {statistics!r}")


def _enumerate_mode_lists(n: int, outputs) -> np.ndarray:
    """(K, n) sorted mode index lists over ``outputs``, collision-free."""
    return np.array(list(itertools.combinations(outputs, n)), dtype=np.intp)


def _enumerate_multisets(n: int, outputs) -> np.ndarray:
    return np.array(list(itertools.combinations_with_replacement(outputs, n)), dtype=np.intp)


def enumerate_patterns(m: int, n: int, collision_free: bool = True, outputs=None):
    """All output patterns in lexicographic order of their mode lists.

    Collision-free gives the C(m, n) subsets, otherwise all
    C(m + n - 1, n) multisets. ``outputs`` restricts the modes that can be
    occupied (used when one detector is sacrificed as a trigger).
    """
    modes = tuple(range(m)) if outputs is None else tuple(sorted(outputs))
    if collision_free:
        lists = _enumerate_mode_lists(n, modes)
    else:
        lists = _enumerate_multisets(n, modes)
    return [FockPattern.from_modes(row, m) for row in lists]


@dataclass
class ProbabilityTable:
    """Output-pattern probabilities for one input state and statistics.

    Collision-free tables are stored unnormalized; ``total_mass`` is the
    probability of landing anywhere in the enumerated set.
    """

    m: int
    n: int
    input: FockPattern
    statistics: str
    collision_free: bool
    outputs: tuple
    mode_lists: np.ndarray
    probs: np.ndarray
    total_mass: float
    branch_label: str = "fock"

    def pattern(self, k: int) -> FockPattern:
        return FockPattern.from_modes(self.mode_lists[k], self.m)

    def normalized_probs(self) -> np.ndarray:
        return self.probs / self.probs.sum()


def distribution(u, input_pattern: FockPattern, statistics: str = "indistinguishable",
                 collision_free: bool = True, outputs=None,
                 branch_label: str = "fock") -> ProbabilityTable:
    """Exact probability table over enumerated output patterns.

    With collisions included the table sums to one; collision-free tables
    carry their raw probabilities plus the total enumerated mass.
    """
    u = np.asarray(u, dtype=complex)
    m = u.shape[0]
    n = input_pattern.n
    modes = tuple(range(m)) if outputs is None else tuple(sorted(outputs))
    if statistics not in ("indistinguishable", "distinguishable"):
        raise ConfigurationError(f"unknown statistics {statistics!r}")
    in_cols = input_pattern.modes()
    t_fact = _occupation_factorial(input_pattern)
    if collision_free:
        lists = _enumerate_mode_lists(n, modes)
        s_facts = np.ones(len(lists))
    else:
        lists = _enumerate_multisets(n, modes)
        s_facts = np.array([
            math.prod(math.factorial(c) for c in np.bincount(row).tolist())
            for row in lists])
    subs = u[lists[:, :, None], np.asarray(in_cols)[None, None, :]]  # (K, n, n)
    if n <= _BATCH_PERMANENT_MAX:
        if statistics == "indistinguishable":
            probs = np.abs(_permanent_batch(subs)) ** 2 / (s_facts * t_fact)
        else:
            probs = _permanent_batch(np.abs(subs) ** 2).real / s_facts
    else:
        probs = np.empty(len(lists))
        for k, sub in enumerate(subs):
            if statistics == "indistinguishable":
                probs[k] = abs(permanent(sub)) ** 2 / (s_facts[k] * t_fact)
            else:
                probs[k] = permanent(np.abs(sub) ** 2).real / s_facts[k]
    probs = np.maximum(probs, 0.0)
    return ProbabilityTable(m, n, input_pattern, statistics, collision_free,
                            modes, lists, probs, float(probs.sum()), branch_label)


def sample(table: ProbabilityTable, rng_seed, count: int,
           index_offset: int = 0):
    """Draw ``count`` i.i.d. outcomes from a table by exact inversion.

    Deterministic per seed. Collision-free tables are sampled conditionally
    on their enumerated support.
    """
    if count < 0:
        raise ConfigurationError("count must be nonnegative")
    rng = np.random.default_rng([int(rng_seed), 1])
    cdf = np.cumsum(table.normalized_probs())
    cdf[-1] = 1.0
    draws = np.searchsorted(cdf, rng.random(count), side="right")
    in_modes = table.input.modes()
    flag = table.statistics == "distinguishable"
    return [SampleEvent(index_offset + i, table.branch_label, in_modes,
                        tuple(int(x) for x in table.mode_lists[k]), flag)
            for i, k in enumerate(draws)]


def spdc_branch_tables(u, input_modes, statistics: str = "indistinguishable",
                       outputs=None):
    """Collision-free output tables of the three SPDC branches."""
    u = np.asarray(u, dtype=complex)
    m = u.shape[0]
    tables = {}
    for branch in SPDC_BRANCHES:
        pattern = spdc_branch_pattern(branch, input_modes, m)
        tables[branch] = distribution(u, pattern, statistics=statistics,
                                      collision_free=True, outputs=outputs,
                                      branch_label=branch)
    return tables


def spdc_sample(u, weights: SourceWeights, statistics: str, rng_seed, count: int,
                input_modes, outputs=None):
    """Sample the SPDC mixture: draw a branch, then that branch's output.

    The output stream consumes its own named substream of ``rng_seed``, so
    a degenerate weight vector reproduces plain :func:`sample` of the
    corresponding branch bit for bit.
    """
    tables = spdc_branch_tables(u, input_modes, statistics, outputs)
    rng_branch = np.random.default_rng([int(rng_seed), 0])
    rng_out = np.random.default_rng([int(rng_seed), 1])
    branch_cdf = np.cumsum(weights.normalized)
    branch_cdf[-1] = 1.0
    branch_ids = np.searchsorted(branch_cdf, rng_branch.random(count), side="right")
    cdfs, mode_lists, in_modes = {}, {}, {}
    for b, table in tables.items():
        cdf = np.cumsum(table.normalized_probs())
        cdf[-1] = 1.0
        cdfs[b] = cdf
        mode_lists[b] = table.mode_lists
        in_modes[b] = table.input.modes()
    flag = statistics == "distinguishable"
    events = []
    for i, bid in enumerate(branch_ids):
        branch = SPDC_BRANCHES[bid]
        k = int(np.searchsorted(cdfs[branch], rng_out.random(), side="right"))
        events.append(SampleEvent(i, branch, in_modes[branch],
                                  tuple(int(x) for x in mode_lists[branch][k]), flag))
    return events


def spdc_mixture_table(u, weights: SourceWeights, input_modes,
                       statistics: str = "indistinguishable", outputs=None) -> ProbabilityTable:
    """Branch-weighted mixture distribution over collision-free outputs."""
    tables = spdc_branch_tables(u, input_modes, statistics, outputs)
    w = dict(zip(SPDC_BRANCHES, weights.normalized))
    ref = tables["1111"]
    probs = sum(w[b] * tables[b].probs for b in SPDC_BRANCHES)
    return ProbabilityTable(ref.m, ref.n, ref.input, statistics, True,
                            ref.outputs, ref.mode_lists, probs,
                            float(probs.sum()), "mixture")
