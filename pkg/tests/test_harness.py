"""Nested CV, tuning, segmentation, markers, t-tests and chance level."""

import numpy as np
import pytest

from aad.errors import DegenerateTestError, TuningError
from aad.harness import (
    chance_level,
    inner_spans,
    lambda_grid,
    make_nested_cv,
    markers_backward,
    null_markers,
    segment_indices,
    segment_trial,
    span_chunks,
    ttest,
    tune_backward,
)
from aad.linear import fit_backward, pearson, reconstruct
from aad.synth import SynthConfig, gen_participant


@pytest.fixture(scope="module")
def participant_highsnr():
    cfg = SynthConfig(participants=1, trials=6, duration=60.0, snr_db=5.0, seed=50)
    return gen_participant(cfg, 0)


class TestNestedCvPlan:
    def test_sixteen_outer_folds(self):
        plan = make_nested_cv(16)
        assert plan.outer == tuple(range(16))

    def test_determinism(self):
        assert make_nested_cv(16, 5, seed=7) == make_nested_cv(16, 5, seed=7)

    def test_inner_spans_partition_with_near_equal_sizes(self):
        spans = inner_spans(1003, 5)
        sizes = [b - a for a, b in spans]
        assert sum(sizes) == 1003
        assert spans[0][0] == 0 and spans[-1][1] == 1003
        assert max(sizes) - min(sizes) <= 1

    def test_span_chunks_maps_to_records(self):
        chunks = span_chunks((5, 12), [4, 6, 8])
        # rows 5..12 overlap record 1 (rows 4..10) and record 2 (10..18)
        assert chunks == [(1, 1, 6), (2, 0, 2)]

    def test_validation(self):
        with pytest.raises(ValueError):
            make_nested_cv(1)
        with pytest.raises(ValueError):
            make_nested_cv(16, 1)


class TestLambdaGrid:
    def test_endpoints_and_length(self):
        grid = lambda_grid()
        assert grid.shape == (19,)
        assert grid[0] == pytest.approx(1e-9)
        assert grid[-1] == pytest.approx(1e9)

    def test_middle_element_is_one(self):
        assert lambda_grid()[9] == pytest.approx(1.0)

    def test_log_uniform(self):
        ratios = np.diff(np.log10(lambda_grid()))
        assert np.allclose(ratios, 1.0)


class TestTuneBackward:
    def test_one_model_per_outer_fold(self, participant_highsnr):
        plan = make_nested_cv(len(participant_highsnr))
        models = tune_backward(plan, participant_highsnr)
        assert len(models) == len(participant_highsnr)
        assert all(m.weights.shape == (2, 64) for m in models)

    def test_high_snr_selects_small_lambda(self, participant_highsnr):
        plan = make_nested_cv(len(participant_highsnr))
        models = tune_backward(plan, participant_highsnr)
        assert np.median([m.lam for m in models]) <= 1.0

    def test_pure_noise_selects_large_lambda(self):
        # on pure noise every penalty scores ~0; this seeded fixture
        # documents the weak preference rather than a theorem
        rng = np.random.default_rng(1234)
        from aad.dataset import TrialBundle
        from aad.features import FeatureSignal
        from aad.signals import MultiSignal

        trials = []
        for i in range(4):
            n = 3000
            eeg = MultiSignal(["a", "b"], rng.standard_normal((2, n)), 64.0)
            feats = [
                FeatureSignal(rng.standard_normal(n), 64.0, kind=k)
                for k in ("envelope", "onset_envelope", "envelope", "onset_envelope")
            ]
            trials.append(
                TrialBundle(
                    eeg=eeg,
                    att_envelope=feats[0],
                    att_onsets=feats[1],
                    ign_envelope=feats[2],
                    ign_onsets=feats[3],
                    attended_label="male",
                    index=i,
                )
            )
        plan = make_nested_cv(4)
        models = tune_backward(plan, trials)
        assert np.median([m.lam for m in models]) >= 1e3

    def test_selection_invariant_to_monotone_score_rescale(self):
        # argmax over mean scores is what it is; scaling the grid's
        # validation correlations by a positive constant cannot change it
        scores = np.random.default_rng(0).standard_normal(19)
        assert np.argmax(scores) == np.argmax(2.5 * scores + 0.0)

    def test_plan_mismatch(self, participant_highsnr):
        with pytest.raises(ValueError):
            tune_backward(make_nested_cv(5), participant_highsnr)


class TestSegmentation:
    def test_spec_arithmetic_150s(self):
        assert len(segment_indices(150 * 64, 64.0, 5.0, 1.0)) == 146
        assert len(segment_indices(150 * 64, 64.0, 30.0, 1.0)) == 121

    def test_full_length_single_segment(self):
        segs = segment_indices(150 * 64, 64.0, 150.0, 1.0)
        assert len(segs) == 1
        assert segs[0].start == 0

    def test_too_long_gives_empty(self, participant_highsnr):
        assert segment_trial(participant_highsnr[0], 1000.0) == []

    def test_non_overlapping_mode(self):
        segs = segment_indices(150 * 64, 64.0, 5.0, 5.0)
        assert len(segs) == 30
        starts = [s.start for s in segs]
        assert np.all(np.diff(starts) == 320)

    def test_short_segments_have_at_least_two_samples(self):
        segs = segment_indices(64, 64.0, 0.01, 1.0)
        assert all(s.length >= 2 for s in segs)


class TestMarkers:
    def make_model(self, trials):
        train = trials[:-1]
        from aad.linear import _advance_matrix  # noqa: F401  (shape sanity)

        eeg_cat = np.concatenate([t.eeg.data for t in train], axis=1)
        feat_cat = np.concatenate(
            [t.feature("attended", "envelope").samples for t in train]
        )
        from aad.signals import MultiSignal
        from aad.features import FeatureSignal

        eeg = MultiSignal(train[0].eeg.channels, eeg_cat, 64.0)
        feat = FeatureSignal(feat_cat, 64.0, kind="envelope")
        return fit_backward(eeg, feat, lam=1e-2)

    def test_markers_have_stored_difference(self, participant_highsnr):
        model = self.make_model(participant_highsnr)
        trial = participant_highsnr[-1]
        segs = segment_trial(trial, 5.0)
        markers = markers_backward(model, trial, segs)
        assert len(markers) == len(segs)
        for m in markers:
            assert m.delta == pytest.approx(m.rho_attended - m.rho_ignored)
            assert -2.0 <= m.delta <= 2.0

    def test_positive_delta_on_synthetic_attention(self, participant_highsnr):
        model = self.make_model(participant_highsnr)
        trial = participant_highsnr[-1]
        markers = markers_backward(model, trial, segment_trial(trial, 30.0))
        deltas = [m.delta for m in markers]
        t, p = ttest("unpaired", "single", deltas, np.zeros(len(deltas)))
        assert np.mean(deltas) > 0
        assert p < 0.05

    def test_perfect_reconstruction_delta(self, participant_highsnr):
        trial = participant_highsnr[-1]
        att = trial.feature("attended", "envelope").samples
        ign = trial.feature("ignored", "envelope").samples
        segs = segment_trial(trial, 10.0)
        from aad.harness import markers_from_reconstruction

        markers = markers_from_reconstruction(att, trial, "envelope", segs)
        for m, seg in zip(markers, segs):
            rho_ai = pearson(att[seg.slice()], ign[seg.slice()])
            assert m.rho_attended == pytest.approx(1.0)
            assert m.delta == pytest.approx(1.0 - rho_ai)
            assert m.delta > 0

    def test_swapped_features_negate_delta(self, participant_highsnr):
        trial = participant_highsnr[-1]
        segs = segment_trial(trial, 10.0)
        recon = trial.feature("attended", "envelope").samples
        from aad.harness import markers_from_reconstruction

        fwd = markers_from_reconstruction(recon, trial, "envelope", segs)
        import dataclasses

        swapped = dataclasses.replace(
            trial,
            att_envelope=trial.ign_envelope,
            ign_envelope=trial.att_envelope,
        )
        rev = markers_from_reconstruction(recon, swapped, "envelope", segs)
        for a, b in zip(fwd, rev):
            assert a.delta == pytest.approx(-b.delta)


class TestNullMarkers:
    def test_partner_never_self_and_centered(self, participant_highsnr):
        model = TestMarkers().make_model(participant_highsnr)
        trial = participant_highsnr[-1]
        segs = segment_trial(trial, 5.0, 5.0)
        nulls = null_markers(model, trial, segs, seed=3)
        assert len(nulls) == len(segs)
        deltas = np.array([m.delta for m in nulls])
        se = deltas.std(ddof=1) / np.sqrt(len(deltas))
        assert abs(deltas.mean()) < 3 * se + 1e-9

    def test_seeded_determinism(self, participant_highsnr):
        model = TestMarkers().make_model(participant_highsnr)
        trial = participant_highsnr[-1]
        segs = segment_trial(trial, 5.0, 5.0)
        a = null_markers(model, trial, segs, seed=9)
        b = null_markers(model, trial, segs, seed=9)
        assert [m.delta for m in a] == [m.delta for m in b]

    def test_single_segment_rejected(self, participant_highsnr):
        model = TestMarkers().make_model(participant_highsnr)
        trial = participant_highsnr[-1]
        with pytest.raises(ValueError):
            null_markers(model, trial, segment_trial(trial, 60.0), seed=0)


class TestTtest:
    def test_identical_groups(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        t, p = ttest("unpaired", "single", x, x.copy())
        assert t == pytest.approx(0.0)
        assert p == pytest.approx(0.5)

    def test_textbook_fixture(self):
        a = np.array([2.1, 2.5, 1.9, 2.4])
        b = np.array([1.0, 1.2, 0.9, 1.1])
        t, p = ttest("unpaired", "single", a, b)
        # independent computation of the pooled-variance statistic
        na = nb = 4
        sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
        t_ref = (a.mean() - b.mean()) / np.sqrt(sp2 * (1 / na + 1 / nb))
        from scipy.stats import t as tdist

        p_ref = float(tdist.sf(t_ref, na + nb - 2))
        assert t == pytest.approx(t_ref, abs=1e-6)
        assert p == pytest.approx(p_ref, abs=1e-6)

    def test_paired_constant_offset_degenerate(self):
        a = np.array([1.0, 2.0, 3.0])
        with pytest.raises(DegenerateTestError):
            ttest("paired", "single", a + 0.5, a)

    def test_double_tail_doubles(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(20) + 0.5, rng.standard_normal(20)
        t1, p1 = ttest("unpaired", "single", a, b)
        t2, p2 = ttest("unpaired", "double", a, b)
        assert t1 == pytest.approx(t2)
        assert p2 == pytest.approx(2 * p1) or p2 == pytest.approx(2 * (1 - p1))

    def test_zero_variance_unpaired(self):
        with pytest.raises(DegenerateTestError):
            ttest("unpaired", "single", np.ones(5), np.ones(5) * 2)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            ttest("welch", "single", np.ones(5), np.ones(5))
        with pytest.raises(ValueError):
            ttest("unpaired", "triple", np.arange(5.0), np.arange(5.0))


class TestChanceLevel:
    def test_n_100(self):
        assert chance_level(100) == pytest.approx(0.58)

    def test_n_1(self):
        assert chance_level(1) == 1.0

    def test_approaches_half(self):
        assert chance_level(10_000) < 0.51

    def test_consistent_with_binomial_cdf(self):
        from scipy.stats import binom

        for n in (10, 100, 999, 5000):
            thr = chance_level(n)
            k = int(round(thr * n))
            assert binom.cdf(k, n, 0.5) >= 0.95
            assert binom.cdf(k - 1, n, 0.5) < 0.95

    def test_known_sawtooth_counterexample(self):
        # the exact binomial threshold is NOT monotone in n: the k-jump
        # from n=5 to n=6 pushes the ratio up (0.8 -> 0.8333)
        assert chance_level(5) == pytest.approx(0.8)
        assert chance_level(6) == pytest.approx(5 / 6)
        assert chance_level(6) > chance_level(5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            chance_level(0)
