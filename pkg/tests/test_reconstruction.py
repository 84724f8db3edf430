import math

import numpy as np
import pytest

from photonlat.errors import (ConfigurationError, UndefinedVisibilityError,
                              UnderdeterminedError)
from photonlat.haarstats import haar_unitary
from photonlat.interference import FockPattern, output_probability
from photonlat.reconstruction import (HomDataset, ReconstructedSubmatrix,
                                      default_scan_positions, dip_profile,
                                      fit_dip, gauge_distance, hom_plateau,
                                      hom_visibility, reconstruct_moduli,
                                      reconstruct_phases, refine_chi2,
                                      simulate_dip_scan, simulate_hom_dataset,
                                      submatrix_rows)

BS = np.array([[1.0, 1.0j], [1.0j, 1.0]]) / math.sqrt(2.0)


def gauge_fixed_truth(u, inputs):
    t = submatrix_rows(u, inputs)
    theta = np.angle(t)
    fixed = theta - theta[0:1, :] - theta[:, 0:1] + theta[0, 0]
    return np.abs(t), np.angle(np.exp(1j * fixed))


class TestHomQuantities:
    def test_plateau_identity_cases(self):
        u = np.eye(6, dtype=complex)
        assert hom_plateau(u, 0, 1, 0, 1) == pytest.approx(1.0)
        assert hom_plateau(u, 0, 1, 2, 3) == pytest.approx(0.0)

    def test_plateau_equals_distinguishable_probability(self, device_unitary):
        u = device_unitary
        rng = np.random.default_rng(0)
        for _ in range(25):
            h, k = rng.choice(32, size=2, replace=False)
            i, j = rng.choice(32, size=2, replace=False)
            inp = FockPattern.from_modes((h, k), 32)
            out = FockPattern.from_modes((i, j), 32)
            d = output_probability(u, inp, out, "distinguishable")
            assert hom_plateau(u, h, k, min(i, j), max(i, j)) == pytest.approx(d, abs=1e-12)

    def test_visibility_full_dip_on_balanced_coupler(self):
        assert hom_visibility(BS, 0, 1, 0, 1) == pytest.approx(1.0)

    def test_visibility_expressions_agree(self, device_unitary):
        u = device_unitary
        rho = np.abs(u)
        theta = np.angle(u)
        iu, ju = np.triu_indices(32, k=1)
        h, k = 11, 19
        for i, j in zip(iu[::7], ju[::7]):
            a = hom_plateau(u, h, k, i, j)
            v1 = hom_visibility(u, h, k, i, j)
            quad = theta[i, h] + theta[j, k] - theta[j, h] - theta[i, k]
            v2 = -(2 * rho[i, h] * rho[j, k] * rho[j, h] * rho[i, k] / a) * math.cos(quad)
            assert v1 == pytest.approx(v2, abs=1e-12)

    def test_visibility_undefined_for_zero_plateau(self):
        u = np.eye(4, dtype=complex)
        with pytest.raises(UndefinedVisibilityError):
            hom_visibility(u, 0, 1, 2, 3)


class TestDipScan:
    def test_flat_scan_at_zero_visibility(self):
        x = default_scan_positions()
        counts = simulate_dip_scan(0.4, 0.0, 0.0, 30.0, x, mean_counts=5000,
                                   rng_seed=1)
        assert counts.std() < 5 * math.sqrt(2000)
        assert counts.mean() == pytest.approx(5000 * 0.4, rel=0.05)

    def test_far_tail_reaches_plateau(self):
        x = np.array([-300.0, 300.0])   # beyond 6 sigma
        f = simulate_dip_scan(0.5, -0.9, 0.0, 30.0, x, mean_counts=None)
        assert np.allclose(f, 0.5, atol=1e-7)

    def test_noiseless_mode_reproduces_profile_exactly(self):
        x = default_scan_positions()
        f = simulate_dip_scan(0.37, -0.62, 5.0, 25.0, x, mean_counts=math.inf)
        assert np.array_equal(f, dip_profile(x, 0.37, -0.62, 5.0, 25.0))

    def test_poisson_scan_deterministic_per_seed(self):
        x = default_scan_positions()
        a = simulate_dip_scan(0.4, -0.5, 0.0, 30.0, x, 1e4, rng_seed=3)
        b = simulate_dip_scan(0.4, -0.5, 0.0, 30.0, x, 1e4, rng_seed=3)
        assert np.array_equal(a, b)


class TestFitDip:
    def test_noiseless_round_trip(self):
        x = default_scan_positions()
        f = simulate_dip_scan(0.5, -0.8, 0.0, 30.0, x, mean_counts=None)
        fit = fit_dip(x, f)
        assert fit.a == pytest.approx(0.5, abs=1e-6)
        assert fit.v == pytest.approx(-0.8, abs=1e-6)

    def test_flat_noiseless_scan_gives_zero_visibility(self):
        x = default_scan_positions()
        fit = fit_dip(x, np.full_like(x, 0.25))
        assert fit.a == pytest.approx(0.25, abs=1e-9)
        assert fit.v == pytest.approx(0.0, abs=1e-6)

    def test_too_few_positions_rejected(self):
        with pytest.raises(ConfigurationError):
            fit_dip(np.arange(5.0), np.ones(5))

    def test_poisson_coverage(self):
        x = default_scan_positions()
        rng = np.random.default_rng(8)
        hits = 0
        trials = 1000
        for _ in range(trials):
            counts = simulate_dip_scan(1.0, -0.6, 0.0, 30.0, x, 1e4,
                                       rng_seed=rng.integers(2 ** 63))
            fit = fit_dip(x, counts)
            if abs(fit.v - (-0.6)) <= 3 * fit.v_err:
                hits += 1
        assert hits / trials >= 0.99


class TestModuli:
    def test_noiseless_round_trip(self, device_unitary):
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs)
        moduli = reconstruct_moduli(ds)
        truth = np.abs(submatrix_rows(device_unitary, inputs))
        assert np.abs(moduli - truth).max() < 1e-6

    def test_underdetermined_dataset_rejected(self, device_unitary):
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs,
                                  input_pairs=((11, 12),))
        with pytest.raises(UnderdeterminedError):
            reconstruct_moduli(ds)

    def test_identity_like_unitary(self):
        u = np.eye(8, dtype=complex)
        ds = simulate_hom_dataset(u, (0, 1, 2))
        assert ds.valid.sum() < ds.valid.size   # most dips undefined
        moduli = reconstruct_moduli(ds)
        truth = np.abs(submatrix_rows(u, (0, 1, 2)))
        # zero moduli are only pinned to sqrt(solver tolerance)
        assert np.abs(moduli - truth).max() < 1e-3
        assert np.array_equal(np.round(moduli), truth)

    def test_multiplicative_noise_study(self, device_unitary):
        inputs = (11, 12, 19)
        clean = simulate_hom_dataset(device_unitary, inputs)
        rng = np.random.default_rng(5)
        noisy_a = clean.plateaus * (1 + 0.01 * rng.standard_normal(clean.plateaus.shape))
        eps = 0.01 * np.maximum(clean.plateaus, clean.plateaus[clean.valid].mean())
        q_true = np.abs(submatrix_rows(device_unitary, inputs)) ** 2
        ds = HomDataset(32, clean.rows, clean.input_pairs, noisy_a,
                        clean.visibilities, clean.errors, eps, clean.valid,
                        intensities=q_true * (1 + 0.01 * rng.standard_normal(q_true.shape)))
        moduli = reconstruct_moduli(ds)
        truth = np.abs(submatrix_rows(device_unitary, inputs))
        rel = np.abs(moduli - truth) / truth
        assert np.median(rel) < 0.03


class TestPhases:
    def test_noiseless_round_trip_quadruples(self, device_unitary):
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs)
        moduli = reconstruct_moduli(ds)
        candidate = reconstruct_phases(ds, moduli)
        truth = submatrix_rows(device_unitary, inputs)
        _, phase_rmse = gauge_distance(candidate, truth)
        assert phase_rmse < 1e-6

    def test_real_valued_target_recovers_sign_pattern(self):
        # a real orthogonal circuit has phases 0 / pi only; the chi-square
        # is flat to first order exactly there, so the claim is the exact
        # sign pattern, not a phase tolerance
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
        u = q.astype(complex)
        inputs = (0, 1, 2)
        ds = simulate_hom_dataset(u, inputs)
        moduli = reconstruct_moduli(ds)
        candidate = reconstruct_phases(ds, moduli)
        assert np.abs(np.sin(candidate.phases)).max() < 1e-3
        moduli_t, phases_t = gauge_fixed_truth(u, inputs)
        signs_got = np.sign(np.cos(candidate.phases))
        signs_true = np.sign(np.cos(phases_t))
        relevant = moduli_t > 1e-3
        assert np.array_equal(signs_got[relevant], signs_true[relevant])

    def test_single_pair_for_three_rows_underdetermined(self, device_unitary):
        ds = simulate_hom_dataset(device_unitary, (11, 12, 19),
                                  input_pairs=((11, 12),))
        moduli = np.abs(submatrix_rows(device_unitary, (11, 12, 19)))
        with pytest.raises(UnderdeterminedError):
            reconstruct_phases(ds, moduli)


class TestRefine:
    def test_refine_from_truth_returns_unchanged(self, device_unitary):
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs)
        moduli, phases = gauge_fixed_truth(device_unitary, inputs)
        start = ReconstructedSubmatrix(inputs, moduli, phases)
        refined = refine_chi2(start, ds)
        delta = np.abs(np.exp(1j * refined.phases) - np.exp(1j * phases)).max()
        assert delta < 1e-8

    def test_refine_never_increases_chi2(self, device_unitary):
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs, rng_seed=4,
                                  mean_plateau_counts=1e4)
        moduli = reconstruct_moduli(ds)
        candidate = reconstruct_phases(ds, moduli)
        refined = refine_chi2(candidate, ds)
        assert refined.chi2 <= candidate.chi2 + 1e-12

    def test_conjugated_row_candidate_still_reaches_truth(self, device_unitary):
        # a per-row conjugation is invisible to the dip data; the refined
        # result must match the truth under the gauge-invariant comparison
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs)
        moduli = reconstruct_moduli(ds)
        candidate = reconstruct_phases(ds, moduli)
        flipped = ReconstructedSubmatrix(
            candidate.rows, candidate.moduli,
            candidate.phases * np.array([1.0, -1.0, 1.0])[:, None])
        refined = refine_chi2(flipped, ds)
        _, phase_rmse = gauge_distance(refined, submatrix_rows(device_unitary, inputs))
        assert phase_rmse < 1e-6


class TestGaugeDistance:
    def test_invariant_under_regauging(self, device_unitary):
        inputs = (11, 12, 19)
        moduli, phases = gauge_fixed_truth(device_unitary, inputs)
        rec = ReconstructedSubmatrix(inputs, moduli, phases)
        truth = submatrix_rows(device_unitary, inputs)
        rng = np.random.default_rng(9)
        row_phase = np.exp(1j * rng.uniform(-np.pi, np.pi, size=(3, 1)))
        col_phase = np.exp(1j * rng.uniform(-np.pi, np.pi, size=(1, 32)))
        mr, pr = gauge_distance(rec, truth * row_phase * col_phase)
        assert mr < 1e-12
        assert pr < 1e-9

    def test_single_perturbed_modulus(self, device_unitary):
        inputs = (11, 12, 19)
        moduli, phases = gauge_fixed_truth(device_unitary, inputs)
        bumped = moduli.copy()
        bumped[1, 5] += 1e-3
        rec = ReconstructedSubmatrix(inputs, bumped, phases)
        mr, _ = gauge_distance(rec, submatrix_rows(device_unitary, inputs))
        assert mr == pytest.approx(1e-3 / math.sqrt(3 * 32), rel=1e-6)

    def test_shape_mismatch_rejected(self, device_unitary):
        moduli, phases = gauge_fixed_truth(device_unitary, (11, 12, 19))
        rec = ReconstructedSubmatrix((11, 12, 19), moduli, phases)
        with pytest.raises(ConfigurationError):
            gauge_distance(rec, submatrix_rows(device_unitary, (11, 12)))


class TestFullPipeline:
    def test_four_row_noiseless(self, device_unitary):
        inputs = (11, 12, 19, 20)
        ds = simulate_hom_dataset(device_unitary, inputs)
        moduli = reconstruct_moduli(ds)
        refined = refine_chi2(reconstruct_phases(ds, moduli), ds)
        mr, pr = gauge_distance(refined, submatrix_rows(device_unitary, inputs))
        assert mr < 1e-6
        assert pr < 1e-6

    def test_three_row_noisy(self, device_unitary):
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs, rng_seed=21,
                                  mean_plateau_counts=1e4)
        moduli = reconstruct_moduli(ds)
        refined = refine_chi2(reconstruct_phases(ds, moduli), ds)
        truth = submatrix_rows(device_unitary, inputs)
        rel = np.abs(moduli - np.abs(truth)) / np.abs(truth)
        assert np.median(rel) < 0.03
        _, pr = gauge_distance(refined, truth)
        assert pr < 0.1

    def test_dataset_json_round_trip(self, device_unitary):
        inputs = (11, 12, 19)
        ds = simulate_hom_dataset(device_unitary, inputs, rng_seed=8,
                                  mean_plateau_counts=1e4)
        back = HomDataset.from_dict(ds.to_dict())
        assert back.rows == ds.rows
        assert back.input_pairs == ds.input_pairs
        assert np.allclose(back.plateaus, ds.plateaus)
        assert np.allclose(back.va_errors, ds.va_errors)
        assert np.array_equal(back.valid, ds.valid)
        m1 = reconstruct_moduli(ds)
        m2 = reconstruct_moduli(back)
        assert np.allclose(m1, m2)

    def test_visibility_scale_damps_dips(self, device_unitary):
        inputs = (11, 12)
        full = simulate_hom_dataset(device_unitary, inputs)
        damped = simulate_hom_dataset(device_unitary, inputs, visibility_scale=0.5)
        sel = full.valid[0]
        assert np.allclose(damped.visibilities[0][sel],
                           0.5 * full.visibilities[0][sel], atol=1e-6)
