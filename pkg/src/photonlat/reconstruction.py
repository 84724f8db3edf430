"""Two-photon HOM interferometry and submatrix reconstruction.

A two-photon dip scan between inputs (h, k) and outputs (i, j) plateaus
at a = rho_ih^2 rho_jk^2 + rho_jh^2 rho_ik^2 (the distinguishable
coincidence probability) and dips with visibility

    V = (a - |U_ih U_jk + U_jh U_ik|^2) / a
      = -(2 rho_ih rho_jk rho_jh rho_ik / a) cos(th_ih + th_jk - th_jh - th_ik)

so the plateaus pin the moduli and the visibilities the phase quadruples.
Reconstruction proceeds in three stages: a weighted least-squares fit of
the squared moduli to the plateaus, an analytic phase extraction by
arccos with sign chaining (which leaves one sign candidate per
reconstructed row: two-photon data cannot tell a row from its
conjugate), and a final chi-square polish over the phases.

Reconstructed submatrices use the gauge where the first input row and
first output column carry zero phase; only the phase quadruples above
are physical, and comparisons go through them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit, least_squares

from .errors import (ConfigurationError, FitError, InconsistentDataError,
                     UndefinedVisibilityError, UnderdeterminedError)

DEFAULT_SCAN_POINTS = 21
DEFAULT_SCAN_SPAN = 3.0      # scan half-width in units of the dip sigma
DEFAULT_DIP_SIGMA = 30.0     # delay-line sigma, um
ERROR_FLOOR = 1e-6           # relative floor on plateau-scale uncertainties


def submatrix_rows(u, inputs) -> np.ndarray:
    """Rows of the transfer submatrix: T[r, i] = U[i, inputs[r]]."""
    u = np.asarray(u, dtype=complex)
    return u[:, list(inputs)].T.copy()


def hom_plateau(u, h: int, k: int, i: int, j: int) -> float:
    """Distinguishable two-photon coincidence probability a_ij^hk."""
    u = np.asarray(u, dtype=complex)
    rho2 = np.abs(u) ** 2
    return float(rho2[i, h] * rho2[j, k] + rho2[j, h] * rho2[i, k])


def hom_visibility(u, h: int, k: int, i: int, j: int) -> float:
    """HOM dip visibility V_ij^hk; undefined when the plateau vanishes.

    Sign convention: V = (a - Q)/a with Q the indistinguishable
    coincidence probability, so full HOM suppression gives V = +1. The
    Gaussian scan parameter of :func:`dip_profile` carries the opposite
    sign (a dip bottoms out at a (1 + V_scan) = Q, so V_scan = -V);
    datasets store the scan convention.
    """
    u = np.asarray(u, dtype=complex)
    a = hom_plateau(u, h, k, i, j)
    if a == 0.0:
        raise UndefinedVisibilityError(
            f"plateau vanishes for inputs ({h},{k}) outputs ({i},{j})")
    amp = u[i, h] * u[j, k] + u[j, h] * u[i, k]
    return float((a - abs(amp) ** 2) / a)


def dip_profile(x, a, v, x0, sigma):
    """Expected coincidence profile a (1 + V exp(-(x-x0)^2 / 2 sigma^2))."""
    x = np.asarray(x, dtype=float)
    return a * (1.0 + v * np.exp(-((x - x0) ** 2) / (2.0 * sigma ** 2)))


def default_scan_positions(x0: float = 0.0, sigma: float = DEFAULT_DIP_SIGMA,
                           n_points: int = DEFAULT_SCAN_POINTS,
                           span: float = DEFAULT_SCAN_SPAN) -> np.ndarray:
    return x0 + np.linspace(-span * sigma, span * sigma, n_points)


def simulate_dip_scan(a, v, x0, sigma, positions, mean_counts, rng_seed=0):
    """Counts per delay position; Poisson around mean_counts * f(x).

    ``mean_counts = inf`` (or None) switches to noiseless mode and returns
    f(x) itself.
    """
    f = dip_profile(positions, a, v, x0, sigma)
    if mean_counts is None or math.isinf(mean_counts):
        return f
    rng = np.random.default_rng(rng_seed)
    return rng.poisson(mean_counts * f).astype(float)


@dataclass(frozen=True)
class DipFit:
    """Gaussian dip fit result in the units of the scanned counts."""

    a: float
    v: float
    x0: float
    sigma: float
    a_err: float
    v_err: float
    x0_err: float
    sigma_err: float
    cov: np.ndarray


def _dip_p0(x, y):
    mid = 0.5 * (x.min() + x.max())
    n_outer = max(2, len(x) // 4)
    outer = np.argsort(-np.abs(x - mid))[:n_outer]
    a0 = float(np.mean(y[outer]))
    if a0 <= 0:
        a0 = max(float(np.mean(y)), 1e-12)
    dev = y - a0
    ext = int(np.argmax(np.abs(dev)))
    v0 = float(dev[ext] / a0)
    x00 = float(x[ext])
    half = np.abs(dev) >= 0.5 * abs(dev[ext])
    if abs(dev[ext]) > 0 and half.sum() >= 2:
        s0 = max((x[half].max() - x[half].min()) / 2.355, (x.max() - x.min()) / 50.0)
    else:
        s0 = (x.max() - x.min()) / 6.0
    return a0, v0, x00, float(s0)


def fit_dip(positions, counts, sigma=None, max_nfev: int = 20000) -> DipFit:
    """Weighted least-squares fit of a dip scan to the Gaussian profile.

    Poisson weights sqrt(max(counts, 1)) are assumed unless ``sigma``
    overrides them; uncertainties come from the fit covariance. A scan too
    flat to pin the dip position and width falls back to fitting (a, V)
    with those two frozen at their initial estimates.
    """
    x = np.asarray(positions, dtype=float)
    y = np.asarray(counts, dtype=float)
    if len(x) < 8:
        raise ConfigurationError("need at least 8 scan positions")
    if sigma is None:
        sigma = np.sqrt(np.maximum(y, 1.0))
    p0 = _dip_p0(x, y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        try:
            popt, pcov = curve_fit(dip_profile, x, y, p0=p0, sigma=sigma,
                                   absolute_sigma=True, maxfev=max_nfev)
        except RuntimeError:
            x00, s0 = p0[2], p0[3]
            try:
                popt2, pcov2 = curve_fit(
                    lambda xx, a, v: dip_profile(xx, a, v, x00, s0),
                    x, y, p0=p0[:2], sigma=sigma, absolute_sigma=True,
                    maxfev=max_nfev)
            except RuntimeError as exc:
                raise FitError("dip fit did not converge",
                               diagnostics={"p0": p0, "n_points": len(x)}) from exc
            popt = np.array([popt2[0], popt2[1], x00, s0])
            pcov = np.full((4, 4), np.nan)
            pcov[:2, :2] = pcov2
    errs = np.sqrt(np.abs(np.diag(pcov)))
    a, v, x0, sig = popt
    return DipFit(float(a), float(v), float(x0), float(abs(sig)),
                  float(errs[0]), float(errs[1]), float(errs[2]), float(errs[3]),
                  pcov)


@dataclass
class HomDataset:
    """Fitted plateaus and visibilities for a set of input pairs.

    ``rows`` are the input labels being reconstructed; ``input_pairs``
    index into them by label. Per pair, arrays run over the C(n_outputs, 2)
    unordered output pairs in upper-triangle order; ``valid`` masks dips
    whose plateau vanished (visibility undefined there). ``errors`` is the
    uncertainty of the dip minimum a (1 + V), ``plateau_errors`` that of a.
    """

    n_outputs: int
    rows: tuple
    input_pairs: tuple
    plateaus: np.ndarray
    visibilities: np.ndarray
    errors: np.ndarray
    plateau_errors: np.ndarray
    valid: np.ndarray
    intensities: np.ndarray | None = None
    va_errors: np.ndarray | None = None   # uncertainty of the product a V

    def __post_init__(self):
        if self.va_errors is None:
            self.va_errors = self.errors
        self.out_i, self.out_j = np.triu_indices(self.n_outputs, k=1)
        self._flat = np.full((self.n_outputs, self.n_outputs), -1, dtype=int)
        self._flat[self.out_i, self.out_j] = np.arange(len(self.out_i))
        self._flat[self.out_j, self.out_i] = np.arange(len(self.out_i))
        labels = list(self.rows)
        self._pair_rows = tuple(
            (labels.index(h), labels.index(k)) for (h, k) in self.input_pairs)

    @property
    def n_pairs(self) -> int:
        return len(self.input_pairs)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def pair_row_indices(self, p: int):
        return self._pair_rows[p]

    def flat_index(self, i: int, j: int) -> int:
        k = int(self._flat[i, j])
        if k < 0:
            raise ConfigurationError("output pair must have i != j")
        return k

    def to_dict(self) -> dict:
        """JSON-serializable form (arrays as nested lists)."""
        doc = {
            "n_outputs": self.n_outputs,
            "rows": list(self.rows),
            "input_pairs": [list(p) for p in self.input_pairs],
            "plateaus": self.plateaus.tolist(),
            "visibilities": self.visibilities.tolist(),
            "errors": self.errors.tolist(),
            "plateau_errors": self.plateau_errors.tolist(),
            "va_errors": self.va_errors.tolist(),
            "valid": self.valid.astype(int).tolist(),
        }
        if self.intensities is not None:
            doc["intensities"] = self.intensities.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "HomDataset":
        intens = doc.get("intensities")
        return cls(int(doc["n_outputs"]), tuple(doc["rows"]),
                   tuple(tuple(p) for p in doc["input_pairs"]),
                   np.asarray(doc["plateaus"], dtype=float),
                   np.asarray(doc["visibilities"], dtype=float),
                   np.asarray(doc["errors"], dtype=float),
                   np.asarray(doc["plateau_errors"], dtype=float),
                   np.asarray(doc["valid"], dtype=bool),
                   None if intens is None else np.asarray(intens, dtype=float),
                   np.asarray(doc["va_errors"], dtype=float))


def _pair_connectivity(n_rows: int, pair_rows) -> bool:
    seen = {0}
    edges = list(pair_rows)
    grew = True
    while grew:
        grew = False
        for (a, b) in edges:
            if a in seen and b not in seen:
                seen.add(b); grew = True
            elif b in seen and a not in seen:
                seen.add(a); grew = True
    return len(seen) == n_rows


def default_input_pairs(inputs):
    """Chain every input to the first one: (0,1), (0,2), ... by label."""
    return tuple((inputs[0], inputs[r]) for r in range(1, len(inputs)))


def _true_dip_arrays(t_rows, hr, kr, iu, ju):
    """Plateaus and scan-convention visibilities (Q - a)/a; a dip is V < 0."""
    q = np.abs(t_rows) ** 2
    a = q[hr, iu] * q[kr, ju] + q[hr, ju] * q[kr, iu]
    amp = t_rows[hr, iu] * t_rows[kr, ju] + t_rows[hr, ju] * t_rows[kr, iu]
    valid = a > 0
    v = np.zeros_like(a)
    v[valid] = (np.abs(amp[valid]) ** 2 - a[valid]) / a[valid]
    return a, v, valid


def simulate_hom_dataset(u, inputs, input_pairs=None, rng_seed: int = 0,
                         mean_plateau_counts=None, visibility_scale: float = 1.0,
                         intensity_counts: float = 1e5,
                         dip_sigma: float = DEFAULT_DIP_SIGMA,
                         n_scan_points: int = DEFAULT_SCAN_POINTS,
                         keep_scans: bool = False):
    """Simulate and fit the full dip-scan campaign for ``inputs``.

    ``mean_plateau_counts = None`` runs noiselessly (exact profiles, exact
    intensities); otherwise the exposure is set so an average dip plateaus
    near that many counts per point and every scan is Poisson noisy.
    Returns the fitted :class:`HomDataset` (plus the raw scans when
    ``keep_scans`` is set).
    """
    u = np.asarray(u, dtype=complex)
    t_rows = submatrix_rows(u, inputs)
    n_rows, n_out = t_rows.shape
    if input_pairs is None:
        input_pairs = default_input_pairs(inputs)
    labels = list(inputs)
    pair_rows = [(labels.index(h), labels.index(k)) for (h, k) in input_pairs]
    iu, ju = np.triu_indices(n_out, k=1)
    n_dips = len(iu)
    noiseless = mean_plateau_counts is None

    a_true = np.empty((len(pair_rows), n_dips))
    v_true = np.empty_like(a_true)
    valid = np.empty(a_true.shape, dtype=bool)
    for p, (hr, kr) in enumerate(pair_rows):
        a_true[p], v_true[p], valid[p] = _true_dip_arrays(t_rows, hr, kr, iu, ju)
    v_true *= visibility_scale

    exposure = 1.0 if noiseless else \
        float(mean_plateau_counts) * valid.sum() / a_true[valid].sum()
    positions = default_scan_positions(0.0, dip_sigma, n_scan_points)
    rng = np.random.default_rng(rng_seed)

    plateaus = np.zeros_like(a_true)
    visibilities = np.zeros_like(a_true)
    errors = np.ones_like(a_true)
    plateau_errors = np.ones_like(a_true)
    va_errors = np.ones_like(a_true)
    scans = {} if keep_scans else None
    for p in range(len(pair_rows)):
        for d in range(n_dips):
            if not valid[p, d]:
                continue
            mc = None if noiseless else exposure * a_true[p, d]
            counts = simulate_dip_scan(
                a_true[p, d] if noiseless else 1.0, v_true[p, d], 0.0, dip_sigma,
                positions,
                None if noiseless else mc,
                rng_seed=rng.integers(2 ** 63))
            fit = fit_dip(positions, counts)
            scale = 1.0 if noiseless else exposure
            a_est = fit.a / scale
            v_est = fit.v
            if noiseless:
                a_err = err_min = err_va = 0.0
            elif not np.isfinite(fit.cov[:2, :2]).all():
                # singular fit (flat dip): no usable uncertainty
                a_err = err_min = err_va = math.inf
            else:
                a_err = fit.a_err / scale
                # uncertainties of a (1 + V) and of a V from the covariance
                var_min = (fit.cov[0, 0] * (1 + v_est) ** 2
                           + fit.a ** 2 * fit.cov[1, 1]
                           + 2 * fit.a * (1 + v_est) * fit.cov[0, 1]) / scale ** 2
                var_va = (fit.cov[0, 0] * v_est ** 2 + fit.a ** 2 * fit.cov[1, 1]
                          + 2 * fit.a * v_est * fit.cov[0, 1]) / scale ** 2
                err_min = math.sqrt(max(var_min, 0.0))
                err_va = math.sqrt(max(var_va, 0.0))
            plateaus[p, d] = a_est
            visibilities[p, d] = v_est
            plateau_errors[p, d] = a_err
            errors[p, d] = err_min
            va_errors[p, d] = err_va
            if keep_scans:
                scans[(input_pairs[p], (int(iu[d]), int(ju[d])))] = (positions, counts)

    # floor the uncertainties at a fraction of the typical plateau: the
    # absolute measurement noise does not shrink with the dip size
    if valid.any():
        floor = max(ERROR_FLOOR * plateaus[valid].mean(), 1e-15)
        plateau_errors[valid] = np.maximum(plateau_errors[valid], floor)
        errors[valid] = np.maximum(errors[valid], floor)
        va_errors[valid] = np.maximum(va_errors[valid], floor)

    q_true = np.abs(t_rows) ** 2
    if noiseless:
        intensities = q_true.copy()
    else:
        counts_int = rng.poisson(intensity_counts * q_true)
        intensities = counts_int / intensity_counts
    dataset = HomDataset(n_out, tuple(inputs), tuple(input_pairs), plateaus,
                         visibilities, errors, plateau_errors, valid, intensities,
                         va_errors)
    if keep_scans:
        return dataset, scans
    return dataset


def _check_determined(dataset: HomDataset):
    if dataset.n_pairs < dataset.n_rows - 1 or \
            not _pair_connectivity(dataset.n_rows, dataset._pair_rows):
        raise UnderdeterminedError(
            f"{dataset.n_pairs} input pair(s) cannot determine {dataset.n_rows} rows; "
            "need a connected set of at least n_rows - 1 pairs")


def reconstruct_moduli(dataset: HomDataset, normalization: bool = True,
                       norm_tolerance: float = 1e-4) -> np.ndarray:
    """Moduli minimizing the plateau chi-square, via squared moduli q >= 0.

    The model a = q_ih q_jk + q_jh q_ik is fitted to all valid plateaus,
    weighted by their uncertainties. Because each pair's plateaus are
    invariant under q_h -> s q_h, q_k -> q_k / s, the physical unit row
    norm (each row spans all outputs of a unitary) is imposed as an extra
    residual unless ``normalization`` is disabled. Intensity rows, when
    present, supply the starting point.
    """
    _check_determined(dataset)
    n_rows, n_out = dataset.n_rows, dataset.n_outputs
    iu, ju = dataset.out_i, dataset.out_j
    if dataset.intensities is not None:
        q0 = np.clip(np.asarray(dataset.intensities, dtype=float), 0.0, None)
    else:
        q0 = np.full((n_rows, n_out), 1.0 / n_out)

    pair_rows = [dataset.pair_row_indices(p) for p in range(dataset.n_pairs)]
    data = []
    for p, (hr, kr) in enumerate(pair_rows):
        sel = dataset.valid[p]
        data.append((hr, kr, iu[sel], ju[sel], dataset.plateaus[p, sel],
                     dataset.plateau_errors[p, sel]))

    def residuals(x):
        q = x.reshape(n_rows, n_out)
        res = []
        for hr, kr, ii, jj, a_meas, eps in data:
            model = q[hr, ii] * q[kr, jj] + q[hr, jj] * q[kr, ii]
            res.append((model - a_meas) / eps)
        if normalization:
            res.append((q.sum(axis=1) - 1.0) / norm_tolerance)
        return np.concatenate(res)

    def jacobian(x):
        q = x.reshape(n_rows, n_out)
        blocks = []
        for hr, kr, ii, jj, _a, eps in data:
            jac = np.zeros((len(ii), n_rows * n_out))
            rows = np.arange(len(ii))
            jac[rows, hr * n_out + ii] += q[kr, jj] / eps
            jac[rows, kr * n_out + jj] += q[hr, ii] / eps
            jac[rows, hr * n_out + jj] += q[kr, ii] / eps
            jac[rows, kr * n_out + ii] += q[hr, jj] / eps
            blocks.append(jac)
        if normalization:
            jac = np.zeros((n_rows, n_rows * n_out))
            for r in range(n_rows):
                jac[r, r * n_out:(r + 1) * n_out] = 1.0 / norm_tolerance
            blocks.append(jac)
        return np.vstack(blocks)

    result = least_squares(residuals, q0.ravel(), jac=jacobian,
                           bounds=(0.0, np.inf), method="trf", xtol=1e-14,
                           ftol=1e-14, gtol=1e-14)
    return np.sqrt(result.x.reshape(n_rows, n_out))


@dataclass
class ReconstructedSubmatrix:
    """Moduli and gauge-fixed phases of the reconstructed input rows."""

    rows: tuple
    moduli: np.ndarray
    phases: np.ndarray
    gauge: str = "first-row-and-first-column-zero"
    converged: bool = True
    chi2: float = float("nan")

    @property
    def n_rows(self) -> int:
        return self.moduli.shape[0]

    @property
    def n_cols(self) -> int:
        return self.moduli.shape[1]

    def matrix(self) -> np.ndarray:
        return self.moduli * np.exp(1j * self.phases)


def _chi2_residuals(theta, moduli, dataset: HomDataset):
    t = moduli * np.exp(1j * theta)
    res = []
    for p in range(dataset.n_pairs):
        hr, kr = dataset.pair_row_indices(p)
        sel = dataset.valid[p]
        ii, jj = dataset.out_i[sel], dataset.out_j[sel]
        amp = t[hr, ii] * t[kr, jj] + t[hr, jj] * t[kr, ii]
        target = dataset.plateaus[p, sel] * (1.0 + dataset.visibilities[p, sel])
        res.append((target - np.abs(amp) ** 2) / dataset.errors[p, sel])
    return np.concatenate(res)


def _chi2_cost(theta, moduli, dataset) -> float:
    r = _chi2_residuals(theta, moduli, dataset)
    return float(r @ r)


def _cos_quadruples(dataset: HomDataset, p: int, moduli):
    """Measured cos(quadruple) per dip of pair p, with a validity mask.

    Returns (cos values clamped to [-1, 1], conditioning sigma, usable mask);
    raises when a clamped value exceeds 1 beyond its uncertainty.
    """
    hr, kr = dataset.pair_row_indices(p)
    iu, ju = dataset.out_i, dataset.out_j
    denom = (moduli[hr, iu] * moduli[kr, ju] * moduli[hr, ju] * moduli[kr, iu])
    usable = dataset.valid[p] & (denom > 0)
    c = np.zeros(len(iu))
    sig = np.full(len(iu), np.inf)
    # scan convention: Q = a (1 + V) = a + 2 rho^4 cos(quadruple)
    va = dataset.visibilities[p] * dataset.plateaus[p]
    c[usable] = va[usable] / (2.0 * denom[usable])
    sig[usable] = dataset.va_errors[p, usable] / (2.0 * denom[usable])
    tol = np.maximum(1e-6, 5.0 * sig)
    # only well-conditioned dips can testify against the model; the rest
    # are clamped and deferred to the chi-square refinement
    bad = usable & (sig <= 0.05) & (np.abs(c) > 1.0 + tol)
    if np.any(bad):
        worst = int(np.argmax(np.where(bad, np.abs(c), 0.0)))
        raise InconsistentDataError(
            f"|cos| = {abs(c[worst]):.6f} beyond tolerance for pair index {p}, "
            f"outputs ({iu[worst]}, {ju[worst]})")
    c = np.clip(c, -1.0, 1.0)
    usable &= sig <= 0.5
    return c, sig, usable


def _solve_row_difference(dataset: HomDataset, p: int, moduli):
    """Signed psi_j = theta_child,j - theta_parent,j for pair p, up to a
    global sign; psi_0 = 0 by the column gauge."""
    n_out = dataset.n_outputs
    c, sig, usable = _cos_quadruples(dataset, p, moduli)
    flat = dataset.flat_index
    psi = np.zeros(n_out)
    known = np.zeros(n_out, dtype=bool)
    known[0] = True
    # magnitudes from the dips against the gauge column
    mag = np.full(n_out, np.nan)
    for j in range(1, n_out):
        d = flat(0, j)
        if usable[d]:
            mag[j] = math.acos(c[d])
    have_mag = ~np.isnan(mag)
    # pick the best-conditioned reference with a well-separated phase
    weights = np.where(have_mag, np.abs(np.sin(np.where(have_mag, mag, 0.0))), -1.0)
    if weights.max() <= 0:
        # all phases are ~0 or pi: signs are irrelevant
        psi[have_mag] = mag[have_mag]
        known |= have_mag
    else:
        jref = int(np.argmax(weights))
        psi[jref] = mag[jref]
        known[jref] = True
        anchors = [jref]
        for j in range(1, n_out):
            if j == jref or not have_mag[j]:
                continue
            s = 1.0
            for anc in anchors:
                d = flat(j, anc)
                if usable[d]:
                    plus = abs(math.cos(mag[j] - psi[anc]) - c[d])
                    minus = abs(math.cos(-mag[j] - psi[anc]) - c[d])
                    s = 1.0 if plus <= minus else -1.0
                    break
            psi[j] = s * mag[j]
            known[j] = True
            if len(anchors) < 4 and abs(math.sin(psi[j])) > 0.3:
                anchors.append(j)
    # columns whose gauge dip was unusable: chain through solved anchors
    for j in range(1, n_out):
        if known[j]:
            continue
        cands = []
        for anc in np.nonzero(known)[0]:
            if anc == j:
                continue
            d = flat(j, anc)
            if usable[d]:
                cands.append((sig[d], anc, math.acos(c[d])))
        if not cands:
            psi[j] = 0.0   # left to the chi-square refinement
            continue
        cands.sort()
        _, anc, delta = cands[0]
        options = (psi[anc] + delta, psi[anc] - delta)
        if len(cands) > 1:
            _, anc2, delta2 = cands[1]
            mis = [abs(math.cos(opt - psi[anc2]) - math.cos(delta2))
                   for opt in options]
            psi[j] = options[int(np.argmin(mis))]
        else:
            psi[j] = options[0]
        known[j] = True
    return np.angle(np.exp(1j * psi))


def reconstruct_phases(dataset: HomDataset, moduli) -> ReconstructedSubmatrix:
    """Analytic phase recovery with exhaustive per-row sign candidates.

    Rows are solved along a spanning tree of the measured input pairs;
    each tree edge yields a phase-difference vector known up to one global
    sign, and all sign assignments are scored by the chi-square of
    :func:`refine_chi2`, returning the best. For a tree of pairs the
    conjugate candidates tie exactly; the tie is broken deterministically
    and comparisons must be conjugation-invariant (see
    :func:`gauge_distance`).
    """
    _check_determined(dataset)
    moduli = np.asarray(moduli, dtype=float)
    n_rows, n_out = moduli.shape
    # spanning tree over rows via the measured pairs
    tree = []          # (parent_row, child_row, psi vector)
    solved = {0}
    remaining = list(range(dataset.n_pairs))
    while remaining:
        progress = False
        for p in list(remaining):
            hr, kr = dataset.pair_row_indices(p)
            if hr in solved and kr in solved:
                remaining.remove(p)   # non-tree pair, used only by the chi-square
                continue
            if hr in solved or kr in solved:
                parent, child = (hr, kr) if hr in solved else (kr, hr)
                psi = _solve_row_difference(dataset, p, moduli)
                tree.append((parent, child, psi))
                solved.add(child)
                remaining.remove(p)
                progress = True
        if not progress:
            break
    if len(solved) != n_rows:
        raise UnderdeterminedError("input pairs do not connect all rows")

    best = None
    for signs in range(1 << len(tree)):
        theta = np.zeros((n_rows, n_out))
        for e, (parent, child, psi) in enumerate(tree):
            s = -1.0 if (signs >> e) & 1 else 1.0
            theta[child] = theta[parent] + s * psi
        cost = _chi2_cost(theta, moduli, dataset)
        if best is None or cost < best[0] - 1e-12:
            best = (cost, theta)
    cost, theta = best
    theta = np.angle(np.exp(1j * theta))
    theta[0, :] = 0.0
    theta[:, 0] = 0.0
    return ReconstructedSubmatrix(dataset.rows, moduli, theta, chi2=cost)


def refine_chi2(candidate: ReconstructedSubmatrix, dataset: HomDataset) -> ReconstructedSubmatrix:
    """Polish the phases (moduli fixed) by minimizing the dip chi-square.

    The objective sums [a (1 + V) - |U_ih U_jk + U_jh U_ik|^2]^2 / eps^2
    over all valid dips; the reported chi-square never exceeds the
    candidate's. A stagnating optimizer returns its best iterate with
    ``converged=False``.
    """
    moduli = candidate.moduli
    n_rows, n_out = moduli.shape
    free = (slice(1, None), slice(1, None))

    def unpack(x):
        theta = np.zeros((n_rows, n_out))
        theta[free] = x.reshape(n_rows - 1, n_out - 1)
        return theta

    def fun(x):
        return _chi2_residuals(unpack(x), moduli, dataset)

    x0 = candidate.phases[free].ravel()
    cost0 = _chi2_cost(candidate.phases, moduli, dataset)
    result = least_squares(fun, x0, method="trf", xtol=1e-15, ftol=1e-15,
                           gtol=1e-15, max_nfev=2000)
    theta = np.angle(np.exp(1j * unpack(result.x)))
    cost = _chi2_cost(theta, moduli, dataset)
    if cost > cost0:
        return replace(candidate, converged=False, chi2=cost0)
    return ReconstructedSubmatrix(candidate.rows, moduli, theta,
                                  converged=result.status > 0, chi2=cost)


def _phase_quadruples(theta) -> np.ndarray:
    """Gauge-invariant quadruples th_pi + th_qj - th_pj - th_qi, all p<q, i<j."""
    n_rows, n_out = theta.shape
    iu, ju = np.triu_indices(n_out, k=1)
    quads = []
    for p in range(n_rows):
        for q in range(p + 1, n_rows):
            delta = theta[p] - theta[q]
            quads.append(delta[iu] - delta[ju])
    return np.concatenate(quads)


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def gauge_distance(reconstructed: ReconstructedSubmatrix, reference):
    """Gauge-invariant (moduli RMSE, phase-quadruple RMSE) versus a reference.

    Moduli compare entrywise. Phases compare only through the quadruples,
    which are invariant under per-row and per-column phases of the
    reference; the RMSE is additionally minimized over per-row complex
    conjugations of the reconstruction, which two-photon interference from
    a tree of input pairs cannot resolve.
    """
    ref = np.asarray(reference, dtype=complex)
    if ref.shape != reconstructed.moduli.shape:
        raise ConfigurationError("reference shape does not match reconstruction")
    moduli_rmse = float(np.sqrt(np.mean((reconstructed.moduli - np.abs(ref)) ** 2)))
    q_ref = _phase_quadruples(np.angle(ref))
    n_rows = reconstructed.n_rows
    best = np.inf
    for bits in range(1 << (n_rows - 1)):
        signs = np.ones(n_rows)
        for r in range(1, n_rows):
            if (bits >> (r - 1)) & 1:
                signs[r] = -1.0
        q = _phase_quadruples(signs[:, None] * reconstructed.phases)
        rmse = float(np.sqrt(np.mean(_wrap(q - q_ref) ** 2)))
        best = min(best, rmse)
    return moduli_rmse, best
