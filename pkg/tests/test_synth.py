import numpy as np
import numpy.testing as npt
import pytest
from scipy import stats

from specunet import synth
from specunet.pipeline import PipelineConfig, Spectrum, upper_hull


@pytest.fixture(scope="module")
def lib():
    return synth.gen_synthetic_library(28, seed=0)


class TestSyntheticLibrary:
    def test_same_seed_identical(self):
        a = synth.gen_synthetic_library(6, seed=3)
        b = synth.gen_synthetic_library(6, seed=3)
        npt.assert_array_equal(a.spectra, b.spectra)
        assert a.names == b.names

    def test_28_distinct_names(self, lib):
        assert lib.n_classes == 28
        assert len(set(lib.names)) == 28

    def test_values_in_unit_interval_positive(self, lib):
        assert lib.spectra.min() > 0.0
        assert lib.spectra.max() <= 1.0

    def test_every_spectrum_dips_below_hull(self, lib):
        for c in range(lib.n_classes):
            hull = upper_hull(lib.wavelengths, lib.spectra[c])
            assert np.max(hull - lib.spectra[c]) > 1e-3

    def test_needs_at_least_one_class(self):
        with pytest.raises(synth.LibraryError):
            synth.gen_synthetic_library(0)


class TestLibraryIO:
    def test_round_trip(self, lib, tmp_path):
        synth.save_library(lib, tmp_path)
        back = synth.load_library(tmp_path)
        assert back.names == lib.names
        npt.assert_array_equal(back.wavelengths, lib.wavelengths)
        npt.assert_array_equal(back.spectra, lib.spectra)

    def test_two_files_two_classes(self, tmp_path):
        lib2 = synth.gen_synthetic_library(2, seed=1)
        synth.save_library(lib2, tmp_path)
        assert synth.load_library(tmp_path).n_classes == 2

    def test_grid_mismatch_names_files(self, tmp_path):
        from specunet.pipeline import write_spectrum_csv

        lib2 = synth.gen_synthetic_library(2, seed=1)
        synth.save_library(lib2, tmp_path)
        other = Spectrum(np.linspace(1.1, 2.5, 240), np.full(240, 0.5))
        write_spectrum_csv(other, tmp_path / "class_01.csv")
        with pytest.raises(synth.LibraryError, match="class_01.csv"):
            synth.load_library(tmp_path)

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(synth.LibraryError, match="no endmember"):
            synth.load_library(tmp_path)


class TestProportions:
    def test_single_component_gets_everything(self, rng):
        npt.assert_array_equal(synth.draw_proportions(1, rng), [1.0])

    def test_sum_one_nonnegative(self, rng):
        draws = np.array([synth.draw_proportions(5, rng) for _ in range(20_000)])
        assert np.abs(draws.sum(axis=1) - 1.0).max() < 1e-12
        assert draws.min() >= 0.0

    def test_first_uniform_ks(self, rng):
        draws = np.array([synth.draw_proportions(5, rng)[0] for _ in range(20_000)])
        assert stats.kstest(draws, "uniform").pvalue > 0.01

    def test_invalid_count(self, rng):
        with pytest.raises(synth.LibraryError):
            synth.draw_proportions(0, rng)


class TestMixtureRecipe:
    def test_dominant_is_argmax_lowest_on_tie(self):
        recipe = synth.MixtureRecipe(((4, 0.25), (1, 0.5), (2, 0.25)), 0.0)
        assert recipe.dominant == 1
        tie = synth.MixtureRecipe(((7, 0.5), (3, 0.5)), 0.0)
        assert tie.dominant == 3

    def test_validation(self):
        with pytest.raises(synth.LibraryError):
            synth.MixtureRecipe(((0, 0.4), (1, 0.4)), 0.0)  # sum != 1
        with pytest.raises(synth.LibraryError):
            synth.MixtureRecipe(((0, 0.5), (0, 0.5)), 0.0)  # duplicate class
        with pytest.raises(synth.LibraryError):
            synth.MixtureRecipe(((0, 1.0),), 0.2)  # sigma too high


class TestMixing:
    def test_single_component_bit_exact(self, lib):
        recipe = synth.MixtureRecipe(((5, 1.0),), 0.0)
        npt.assert_array_equal(synth.mix_spectra(lib, recipe).values,
                               lib.spectra[5])

    def test_hand_mix_of_constants(self):
        lam = synth.default_grid(16)
        lib2 = synth.SpectralLibrary(
            ["a", "b"], lam, np.vstack([np.zeros(16), np.ones(16)]))
        recipe = synth.MixtureRecipe(((0, 0.3), (1, 0.7)), 0.0)
        npt.assert_allclose(synth.mix_spectra(lib2, recipe).values, 0.7)

    def test_convexity_bounds(self, lib, rng):
        for _ in range(30):
            recipe = synth.draw_recipe(lib.n_classes, 1, synth.NoiseSchedule(), rng)
            mixed = synth.mix_spectra(lib, recipe).values
            idx = [c for c, _ in recipe.components]
            assert mixed.min() >= lib.spectra[idx].min() - 1e-12
            assert mixed.max() <= lib.spectra[idx].max() + 1e-12

    def test_unknown_class_rejected(self, lib):
        recipe = synth.MixtureRecipe(((97, 1.0),), 0.0)
        with pytest.raises(synth.LibraryError, match="97"):
            synth.mix_spectra(lib, recipe)


class TestNoise:
    def test_sigma_zero_unchanged(self, lib, rng):
        s = lib.spectrum(0)
        npt.assert_array_equal(synth.add_noise(s, 0.0, rng).values, s.values)

    def test_sample_std_matches_sigma(self, rng):
        lam = synth.default_grid(240)
        s = Spectrum(lam, np.full(240, 0.5))
        draws = np.concatenate(
            [synth.add_noise(s, 0.05, rng).values - 0.5 for _ in range(4200)])
        assert abs(draws.std() / 0.05 - 1.0) < 0.01

    def test_sigma_out_of_range(self, lib, rng):
        with pytest.raises(synth.LibraryError, match="0.1"):
            synth.add_noise(lib.spectrum(0), 0.2, rng)


class TestMinMaxScale:
    def test_example(self):
        s = Spectrum(np.array([1.0, 1.1, 1.2]), np.array([2.0, 4.0, 6.0]))
        npt.assert_array_equal(synth.minmax_scale(s).values, [0.0, 0.5, 1.0])

    def test_idempotent(self, rng):
        s = Spectrum(synth.default_grid(32), rng.random(32))
        once = synth.minmax_scale(s)
        twice = synth.minmax_scale(once)
        npt.assert_allclose(twice.values, once.values, atol=1e-12)

    def test_constant_flags_zeros(self):
        s = Spectrum(synth.default_grid(8), np.full(8, 3.3))
        out = synth.minmax_scale(s)
        assert out.constant
        npt.assert_array_equal(out.values, 0.0)


class TestNoiseSchedule:
    def test_default_endpoints(self):
        sched = synth.NoiseSchedule()
        assert sched.upper_bound(5) == 0.02
        assert sched.upper_bound(20) == 0.02
        assert sched.upper_bound(95) == 0.1
        assert sched.upper_bound(81) == 0.1

    def test_nondecreasing_over_100_epochs(self):
        sched = synth.NoiseSchedule()
        bounds = [sched.upper_bound(e) for e in range(1, 101)]
        assert all(a <= b for a, b in zip(bounds, bounds[1:]))
        assert all(0 <= b <= 0.1 for b in bounds)

    def test_sigma_draw_within_bound(self, rng):
        sched = synth.NoiseSchedule()
        for epoch in (5, 50, 95):
            for _ in range(200):
                sigma = synth.sigma_for_epoch(sched, epoch, rng)
                assert 0 <= sigma <= sched.upper_bound(epoch)

    def test_decreasing_bounds_rejected(self):
        with pytest.raises(synth.LibraryError):
            synth.NoiseSchedule(epochs=(10.0, 20.0), bounds=(0.1, 0.02))

    def test_epoch_must_be_positive(self):
        with pytest.raises(synth.LibraryError):
            synth.NoiseSchedule().upper_bound(0)


class TestSamples:
    def test_single_component_sample(self, lib):
        # force n=1 by shrinking to a one-class library
        one = synth.SpectralLibrary([lib.names[0]], lib.wavelengths,
                                    lib.spectra[:1].copy())
        gen = synth.SampleGenerator(one, seed=3)
        s = gen.sample(epoch=1)
        assert s.label == 0
        assert len(s.recipe.components) == 1
        from specunet.pipeline import classical_pipeline_values

        npt.assert_array_equal(
            s.target, classical_pipeline_values(one.wavelengths, one.spectra[0]))

    def test_input_attains_zero_and_one(self, lib):
        gen = synth.SampleGenerator(lib, seed=4)
        for _ in range(10):
            s = gen.sample(epoch=1)
            assert s.input.min() == 0.0 and s.input.max() == 1.0

    def test_label_is_dominant(self, lib):
        gen = synth.SampleGenerator(lib, seed=5)
        for _ in range(50):
            s = gen.sample(epoch=1)
            assert s.label == s.recipe.dominant

    def test_stream_deterministic(self, lib):
        a = synth.SampleGenerator(lib, seed=6)
        b = synth.SampleGenerator(lib, seed=6)
        for _ in range(5):
            sa, sb = a.sample(1), b.sample(1)
            npt.assert_array_equal(sa.input, sb.input)
            assert sa.label == sb.label

    def test_worker_streams_disjoint_and_replicable(self, lib):
        base = synth.SampleGenerator(lib, seed=7)
        w1 = base.split(2)
        w2 = synth.SampleGenerator(lib, seed=7).split(2)
        s10, s20 = w1[0].sample(1), w2[0].sample(1)
        npt.assert_array_equal(s10.input, s20.input)  # replicable per stream
        assert not np.array_equal(w1[0]._targets[0], None)
        s11 = w1[1].sample(1)
        assert not np.array_equal(s10.input, s11.input)  # distinct streams

    def test_dominant_label_uniform_chi_square(self, lib, rng):
        sched = synth.NoiseSchedule()
        labels = [synth.draw_recipe(28, 1, sched, rng).dominant
                  for _ in range(30_000)]
        counts = np.bincount(labels, minlength=28)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_rank_frequency_uniform_per_rank(self, lib, rng):
        sched = synth.NoiseSchedule()
        ranks = {0: [], 1: [], 2: []}
        for _ in range(20_000):
            recipe = synth.draw_recipe(28, 1, sched, rng)
            ordered = sorted(recipe.components, key=lambda cp: -cp[1])
            for r in range(min(3, len(ordered))):
                ranks[r].append(ordered[r][0])
        for r, classes in ranks.items():
            counts = np.bincount(classes, minlength=28)
            assert stats.chisquare(counts).pvalue > 0.01, f"rank {r}"

    def test_top_proportion_unimodal_for_mixtures(self, rng):
        """Mode-count heuristic on the top-proportion histogram, conditioned
        on true mixtures (n >= 2); single-component draws put an atom at
        exactly 1.0 by construction."""
        sched = synth.NoiseSchedule()
        tops = []
        while len(tops) < 20_000:
            recipe = synth.draw_recipe(28, 1, sched, rng)
            if len(recipe.components) >= 2:
                tops.append(max(p for _, p in recipe.components))
        hist, _ = np.histogram(tops, bins=20, range=(0, 1))
        smooth = np.convolve(hist, np.ones(3) / 3, mode="same")
        interior_modes = sum(
            1 for i in range(1, 19)
            if smooth[i] > smooth[i - 1] and smooth[i] > smooth[i + 1]
        )
        assert interior_modes == 1

    def test_validation_set_spans_full_sigma(self, lib):
        val = synth.make_validation_set(lib, 300, seed=0)
        sigmas = np.array([s.recipe.sigma for s in val])
        assert sigmas.max() > 0.08 and sigmas.min() < 0.02
        again = synth.make_validation_set(lib, 300, seed=0)
        npt.assert_array_equal(val[0].input, again[0].input)
