import math

import numpy as np
import pytest

import cardiosep as cs
from cardiosep import dsp, separate, vae
from cardiosep.separate import (FrameAssignment, SeparatedSources, evaluate,
                                log_spectral_distance, reconstruct, si_sdr)

SR = 4000.0


@pytest.fixture(scope="module")
def corpus():
    h = cs.gen_heart(cs.HeartParams(), 20.0, SR, seed=0)
    l = cs.gen_lung(cs.LungParams(), 20.0, SR, seed=1)
    m = cs.mix([h, l], [0.7, 0.7])
    spec = cs.stft(m)
    frames = cs.log_mag(spec)
    stats = cs.fit_stats(frames)
    normed = cs.normalize(frames, stats)
    labels = cs.dominance_labels([h, l], 256, 64)
    return h, l, m, spec, normed, stats, labels


@pytest.fixture(scope="module")
def trained(corpus):
    _, _, _, _, normed, stats, _ = corpus
    model = vae.VAEModel(129, 8, (64, 32), rng=np.random.default_rng(0))
    vae.train(model, normed, epochs=40, batch_size=64, lr=1e-3, seed=0,
              snapshot_stride=40)
    return model


class TestAssignFrames:
    def test_single_cluster_all_zero(self, corpus, trained):
        _, _, _, _, normed, _, _ = corpus
        assignment = separate.assign_frames(trained, normed, 1, seed=0)
        assert np.all(assignment.ids == 0)

    def test_deterministic(self, corpus, trained):
        _, _, _, _, normed, _, _ = corpus
        a = separate.assign_frames(trained, normed, 2, seed=3)
        b = separate.assign_frames(trained, normed, 2, seed=3)
        np.testing.assert_array_equal(a.ids, b.ids)

    def test_dimension_mismatch_rejected(self, trained):
        with pytest.raises(ValueError):
            separate.assign_frames(trained, np.zeros((10, 64)), 2, seed=0)


class TestReconstruct:
    def test_hard_all_frames_to_source_zero(self, corpus, trained):
        _, _, _, spec, _, stats, _ = corpus
        assignment = FrameAssignment(np.zeros(spec.n_frames, int), 2, mode="hard")
        sep = reconstruct(spec, trained, assignment, stats, "hard")
        np.testing.assert_array_equal(sep.signals[0], dsp.istft(spec))
        np.testing.assert_array_equal(sep.signals[1], 0.0)

    @pytest.mark.parametrize("mode", ["hard", "wiener"])
    def test_sources_sum_to_mixture(self, corpus, trained, mode):
        _, _, _, spec, normed, stats, _ = corpus
        assignment = separate.assign_frames(trained, normed, 2, seed=0, mode=mode)
        sep = reconstruct(spec, trained, assignment, stats, mode)
        total = sep.signals[0] + sep.signals[1]
        ref = dsp.istft(spec)
        err = np.linalg.norm(total - ref) / np.linalg.norm(ref)
        assert err < 1e-6

    @pytest.mark.parametrize("mode", ["hard", "wiener"])
    def test_masks_partition_every_bin(self, corpus, trained, mode):
        _, _, _, spec, normed, stats, _ = corpus
        assignment = separate.assign_frames(trained, normed, 2, seed=0, mode=mode)
        masks = separate.compute_masks(spec, trained, assignment, stats, mode)
        np.testing.assert_allclose(masks.sum(axis=0), 1.0, atol=1e-12)

    def test_oracle_assignment_improves_si_sdr(self, corpus, trained):
        h, l, m, spec, _, stats, labels = corpus
        assignment = FrameAssignment(labels, 2, mode="hard")
        sep = reconstruct(spec, trained, assignment, stats, "hard")
        report = evaluate(sep, [h, l], mixture=m)
        mean_impr = np.mean([s.si_sdr_improvement_db for s in report.per_source])
        assert mean_impr > 0.0

    def test_length_mismatch_rejected(self, corpus, trained):
        _, _, _, spec, _, stats, _ = corpus
        assignment = FrameAssignment(np.zeros(5, int), 2, mode="hard")
        with pytest.raises(ValueError):
            reconstruct(spec, trained, assignment, stats, "hard")


class TestSiSdr:
    def test_identical_signals_positive_infinity(self):
        x = np.random.default_rng(0).standard_normal(1000)
        assert si_sdr(x, x) == math.inf

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        ref = rng.standard_normal(1000)
        est = ref + 0.1 * rng.standard_normal(1000)
        base = si_sdr(est, ref)
        for alpha in (0.5, 2.0, 100.0):
            assert si_sdr(alpha * est, ref) == pytest.approx(base, abs=1e-9)

    def test_direct_formula_oracle(self):
        rng = np.random.default_rng(2)
        ref = rng.standard_normal(500)
        noise = 0.3 * rng.standard_normal(500)
        est = ref + noise
        s = (np.dot(est, ref) / np.dot(ref, ref)) * ref
        e = est - s
        expected = 10.0 * np.log10(np.dot(s, s) / np.dot(e, e))
        assert si_sdr(est, ref) == pytest.approx(expected, abs=1e-9)

    def test_orthogonal_estimate_negative_infinity(self):
        ref = np.array([1.0, 0.0])
        est = np.array([0.0, 1.0])
        assert si_sdr(est, ref) == -math.inf

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            si_sdr(np.ones(10), np.zeros(10))


class TestLogSpectralDistance:
    def test_identical_signals_zero(self):
        x = np.random.default_rng(3).standard_normal(2000)
        assert log_spectral_distance(x, x) == 0.0

    def test_ten_times_ref_is_twenty_db(self):
        # every |bin| shifts by 20*log10(10), except bins clamped at the floor
        rng = np.random.default_rng(4)
        x = rng.standard_normal(2000)  # magnitudes well above the 1e-5 floor
        assert log_spectral_distance(10.0 * x, x) == pytest.approx(20.0, abs=1e-9)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        noise = rng.standard_normal(2000)
        t = np.arange(2000) / SR
        sine = np.sin(2 * np.pi * 300.0 * t)
        got = log_spectral_distance(noise, sine)
        mag_n = np.maximum(np.abs(cs.stft(noise, 256, 64).bins), 1e-5)
        mag_s = np.maximum(np.abs(cs.stft(sine, 256, 64).bins), 1e-5)
        expected = np.sqrt(np.mean((20.0 * (np.log10(mag_n) - np.log10(mag_s))) ** 2))
        assert got == pytest.approx(expected, abs=1e-9)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            log_spectral_distance(np.ones(100), np.ones(100))


class TestEvaluate:
    def test_perfect_estimates_any_order(self, corpus):
        h, l, _, _, _, _, _ = corpus
        sep = SeparatedSources([l.samples, h.samples], SR)
        report = evaluate(sep, [h, l])
        assert report.permutation == (1, 0)
        assert all(s.si_sdr_db == math.inf for s in report.per_source)

    def test_swapping_estimates_keeps_per_reference_scores(self, corpus, trained):
        h, l, m, spec, normed, stats, _ = corpus
        assignment = separate.assign_frames(trained, normed, 2, seed=0)
        sep = reconstruct(spec, trained, assignment, stats, "wiener")
        fwd = evaluate(sep, [h, l], mixture=m)
        swapped = SeparatedSources(sep.signals[::-1], SR)
        rev = evaluate(swapped, [h, l], mixture=m)
        by_ref_fwd = {fwd.permutation[i]: fwd.per_source[i].si_sdr_db
                      for i in range(2)}
        by_ref_rev = {rev.permutation[i]: rev.per_source[i].si_sdr_db
                      for i in range(2)}
        for ref in (0, 1):
            assert by_ref_fwd[ref] == pytest.approx(by_ref_rev[ref], abs=1e-9)

    def test_two_sources_two_permutations(self, corpus):
        h, l, _, _, _, _, _ = corpus
        sep = SeparatedSources([h.samples, l.samples], SR)
        report = evaluate(sep, [h, l])
        assert report.permutation in ((0, 1), (1, 0))
        assert len(report.permutation) == 2

    def test_count_mismatch_rejected(self, corpus):
        h, l, _, _, _, _, _ = corpus
        sep = SeparatedSources([h.samples], SR)
        with pytest.raises(ValueError):
            evaluate(sep, [h, l])

    def test_oracle_beats_random_statistically(self, corpus, trained):
        # oracle dominance labels should not score worse than random labels
        h, l, m, spec, _, stats, labels = corpus
        oracle = FrameAssignment(labels, 2, mode="hard")
        sep_o = reconstruct(spec, trained, oracle, stats, "hard")
        oracle_score = np.mean([s.si_sdr_db for s in
                                evaluate(sep_o, [h, l], mixture=m).per_source])
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            rand = FrameAssignment(rng.integers(0, 2, len(labels)), 2, mode="hard")
            sep_r = reconstruct(spec, trained, rand, stats, "hard")
            rand_score = np.mean([s.si_sdr_db for s in
                                  evaluate(sep_r, [h, l], mixture=m).per_source])
            if oracle_score >= rand_score:
                wins += 1
        assert wins >= 19
