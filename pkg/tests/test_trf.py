"""Cross-validated TRFs, null TRFs and the cluster permutation test."""

import json

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter1d

from aad.linear import TRF_LAGS, Trf
from aad.synth import SynthConfig, gen_participant, gen_trf
from aad.trf import (
    TrfSet,
    bonferroni,
    cluster_permutation_test,
    crossval_trf,
    difference_trf,
    export_cluster_json,
    export_trf_csv,
    null_trfs,
)

CH = ("unilateral", "bilateral")


def smooth_noise_trfs(rng, count, smooth=1.5, scale=1.0, bump=None):
    draws = scale * gaussian_filter1d(
        rng.standard_normal((count, 2, 160)), smooth, axis=-1
    )
    if bump is not None:
        draws = draws + bump[None, None, :]
    return [
        Trf(c, TRF_LAGS, CH, feature_kind="envelope", role="attended") for c in draws
    ]


def matched_null_trfs(rng, count, n_parts=18, smooth=1.5):
    draws = gaussian_filter1d(
        rng.standard_normal((count, n_parts, 2, 160)), smooth, axis=-1
    ).mean(axis=1)
    return [Trf(c, TRF_LAGS, CH, feature_kind="envelope", role="null") for c in draws]


@pytest.fixture(scope="module")
def small_participant():
    cfg = SynthConfig(participants=1, trials=4, duration=60.0, snr_db=-5.0, seed=21)
    return gen_participant(cfg, 0)


class TestCrossvalTrf:
    def test_mean_of_folds(self, small_participant):
        mean, folds = crossval_trf(small_participant, return_folds=True)
        assert len(folds) == 4
        assert np.allclose(
            mean.coefficients, np.mean([f.coefficients for f in folds], axis=0)
        )

    def test_identical_trials_average_equals_fold(self, small_participant):
        trials = [small_participant[0]] * 3
        mean, folds = crossval_trf(trials, return_folds=True)
        for f in folds:
            assert np.allclose(mean.coefficients, f.coefficients, atol=1e-10)

    def test_average_beats_worst_fold(self, small_participant):
        kernel = gen_trf()
        mean, folds = crossval_trf(small_participant, return_folds=True)

        def score(trf):
            return min(
                np.corrcoef(trf.coefficients[c], kernel.coefficients[c])[0, 1]
                for c in range(2)
            )

        assert score(mean) > min(score(f) for f in folds)

    def test_needs_two_trials(self, small_participant):
        with pytest.raises(ValueError):
            crossval_trf(small_participant[:1])


class TestDifferenceTrf:
    def test_zero_for_identical(self, small_participant):
        trf = crossval_trf(small_participant)
        diff = difference_trf(trf, trf)
        assert np.allclose(diff.coefficients, 0.0)
        assert diff.role == "difference"

    def test_additivity(self, small_participant):
        att = crossval_trf(small_participant, role="attended")
        ign = crossval_trf(small_participant, role="ignored")
        diff = difference_trf(att, ign)
        assert np.allclose(
            diff.coefficients + ign.coefficients, att.coefficients, atol=1e-12
        )

    def test_peak_at_planted_latency(self):
        cfg = SynthConfig(participants=1, trials=8, duration=100.0, snr_db=0.0, seed=31)
        trials = gen_participant(cfg, 0)
        att = crossval_trf(trials, role="attended")
        ign = crossval_trf(trials, role="ignored")
        diff = difference_trf(att, ign)
        planted_tap = int(np.argmax(gen_trf().coefficients[0]))
        for c in range(2):
            assert abs(int(np.argmax(diff.coefficients[c])) - planted_tap) <= 1

    def test_axis_mismatch(self, small_participant):
        att = crossval_trf(small_participant)
        other = Trf(
            np.zeros((2, 10)),
            type(att.lags)(0, 10, 64.0),
            CH,
            feature_kind="envelope",
            role="ignored",
        )
        with pytest.raises(ValueError):
            difference_trf(att, other)


class TestNullTrfs:
    def test_count_per_held_out_trial(self, small_participant):
        nulls = null_trfs(small_participant, n_shifts=10, seed=0)
        assert len(nulls) == 10 * len(small_participant)
        assert all(t.role == "null" for t in nulls)

    def test_min_shift_validation(self, small_participant):
        with pytest.raises(ValueError):
            null_trfs(small_participant, n_shifts=5, min_shift=1.0)

    def test_range_too_small(self, small_participant):
        # 60 s trials with 29 s minimum shift leave almost no offsets
        with pytest.raises(ValueError):
            null_trfs(small_participant, n_shifts=500, min_shift=29.0)

    def test_null_power_below_true_trf(self, small_participant):
        # planted structure should dwarf the misaligned fits
        true = crossval_trf(small_participant)
        nulls = null_trfs(small_participant, n_shifts=20, seed=1)
        threshold = np.percentile(
            np.concatenate([np.ravel(t.coefficients**2) for t in nulls]), 99
        )
        assert threshold > 0
        assert (true.coefficients**2).max() > 10 * threshold

    def test_matches_direct_rolled_fit(self, small_participant):
        # the shared-Gram circular fast path approximates a direct
        # zero-fill fit on the rolled feature up to O(taps/T) edge terms
        from aad.features import FeatureSignal
        from aad.linear import GramSolver, build_lag_matrix
        from aad.trf import _trial_stats

        trials = small_participant[:3]
        shift = 700
        nulls = null_trfs(trials, n_shifts=1, min_shift=10.0, seed=5)
        rng_check = np.random.default_rng(5)
        lo = int(round(10.0 * 64))
        drawn = int(rng_check.choice(np.arange(lo, trials[0].n_samples - lo), size=1)[0])

        G = np.zeros((160, 160))
        B = np.zeros((160, 2))
        sq = 0.0
        for t in (1, 2):  # fold holding out trial 0
            feat = np.roll(trials[t].feature("attended", "envelope").samples, drawn)
            X = build_lag_matrix(FeatureSignal(feat, 64.0, kind="envelope"), TRF_LAGS)
            G += X.T @ X
            B += X.T @ trials[t].eeg.data.T
            sq += (X**2).sum()
        W = GramSolver(G).solve(B, sq / 160)
        rho = np.corrcoef(W.T.ravel(), nulls[0].coefficients.ravel())[0, 1]
        assert rho > 0.95


class TestClusterPermutation:
    def test_all_zero_trfs_no_clusters(self):
        rng = np.random.default_rng(0)
        zeros = [
            Trf(np.zeros((2, 160)), TRF_LAGS, CH, feature_kind="envelope", role="attended")
            for _ in range(5)
        ]
        nulls = smooth_noise_trfs(rng, 20)
        result = cluster_permutation_test(zeros, nulls, n_perm=100, seed=0)
        assert result.clusters == ()
        assert result.p_value == 1.0

    def test_planted_component_detected(self):
        rng = np.random.default_rng(1)
        lat = TRF_LAGS.latencies()
        bump = 0.5 * np.exp(-0.5 * ((lat - 0.1) / 0.1) ** 2)
        parts = smooth_noise_trfs(rng, 18, bump=bump)
        nulls = matched_null_trfs(rng, 150)
        result = cluster_permutation_test(parts, nulls, n_perm=500, seed=2, threshold_pct=95.0)
        sig = result.significant(0.05)
        assert sig
        assert any(c.start_latency <= 0.1 <= c.end_latency for c in sig)

    def test_sign_flip_symmetry(self):
        rng = np.random.default_rng(3)
        parts = smooth_noise_trfs(rng, 10)
        nulls = matched_null_trfs(rng, 50, n_parts=10)
        flipped = [
            Trf(-t.coefficients, TRF_LAGS, CH, feature_kind="envelope", role="attended")
            for t in parts
        ]
        a = cluster_permutation_test(parts, nulls, n_perm=200, seed=4)
        b = cluster_permutation_test(flipped, nulls, n_perm=200, seed=4)
        assert a.max_cluster_size == b.max_cluster_size
        assert a.p_value == b.p_value

    def test_cluster_mass_non_increasing_in_threshold(self):
        rng = np.random.default_rng(5)
        parts = smooth_noise_trfs(rng, 12)
        nulls = matched_null_trfs(rng, 60, n_parts=12)
        masses = []
        for pct in (90.0, 95.0, 99.0):
            res = cluster_permutation_test(parts, nulls, n_perm=50, seed=6, threshold_pct=pct)
            masses.append(sum(c.mass for c in res.clusters))
        assert masses[0] >= masses[1] >= masses[2]

    def test_requires_inputs(self):
        rng = np.random.default_rng(7)
        parts = smooth_noise_trfs(rng, 3)
        with pytest.raises(ValueError):
            cluster_permutation_test(parts[:1], parts)
        with pytest.raises(ValueError):
            cluster_permutation_test(parts, [])

    def test_mini_calibration(self):
        # loose bound here; the full 200-rep calibration is an
        # acceptance criterion
        rejections = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            parts = smooth_noise_trfs(rng, 18)
            nulls = matched_null_trfs(rng, 100)
            res = cluster_permutation_test(parts, nulls, n_perm=400, seed=seed + 99, threshold_pct=95.0)
            rejections += res.p_value < 0.05
        assert rejections / 40 <= 0.15


class TestBonferroni:
    def test_threshold_value(self):
        assert 0.05 / 12 == pytest.approx(0.0041667, abs=1e-7)
        decisions = bonferroni([0.004, 0.005], 12)
        assert decisions.tolist() == [True, False]

    def test_single_comparison(self):
        assert bonferroni([0.049, 0.051], 1).tolist() == [True, False]

    def test_invalid_m(self):
        with pytest.raises(ValueError):
            bonferroni([0.05], 0)


class TestTrfSetAndExport:
    def test_grand_average_and_select(self, small_participant):
        att = crossval_trf(small_participant, role="attended")
        ign = crossval_trf(small_participant, role="ignored")
        ts = TrfSet([att, ign])
        sel = ts.select(role="attended")
        assert len(sel.trfs) == 1
        grand = ts.grand_average()
        assert np.allclose(
            grand.coefficients, (att.coefficients + ign.coefficients) / 2
        )

    def test_csv_export(self, tmp_path, small_participant):
        trf = crossval_trf(small_participant)
        path = export_trf_csv(tmp_path / "trf.csv", trf)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "latency_s,unilateral,bilateral"
        assert len(lines) == 161

    def test_cluster_json_export(self, tmp_path):
        rng = np.random.default_rng(8)
        lat = TRF_LAGS.latencies()
        bump = 0.6 * np.exp(-0.5 * ((lat - 0.1) / 0.1) ** 2)
        parts = smooth_noise_trfs(rng, 12, bump=bump)
        nulls = matched_null_trfs(rng, 60, n_parts=12)
        res = cluster_permutation_test(parts, nulls, n_perm=100, seed=9, threshold_pct=95.0)
        path = export_cluster_json(tmp_path / "clusters.json", res)
        payload = json.loads(path.read_text())
        assert payload["n_permutations"] == 100
        assert payload["clusters"]
        assert all("start_ms" in c for c in payload["clusters"])
