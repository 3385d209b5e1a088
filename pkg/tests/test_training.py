import numpy as np
import numpy.testing as npt
import pytest

from specunet import ops, synth
from specunet.model import ArchitectureConfig, build_model
from specunet.pipeline import PipelineConfig
from specunet.training import (
    AdamState,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    early_stop,
    evaluate,
    train,
)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = [np.full(3, 2.0)]
        state = AdamState.for_params(p)
        _, new = adam_step(state, p, [np.zeros(3)])
        npt.assert_array_equal(new[0], p[0])

    def test_hand_worked_first_step(self):
        # theta=0, g=1, lr=1e-3, t=1: m=0.1, v=0.001, bias-corrected step -1e-3
        state = AdamState.for_params([np.zeros(1)], lr=1e-3)
        state, (theta,) = adam_step(state, [np.zeros(1)], [np.ones(1)])
        assert state.m[0][0] == pytest.approx(0.1)
        assert state.v[0][0] == pytest.approx(0.001)
        assert abs(theta[0] - (-1e-3)) < 1e-9

    def test_uncorrected_update_uses_raw_moments(self):
        state = AdamState.for_params([np.zeros(1)], lr=1e-3, uncorrected=True)
        _, (theta,) = adam_step(state, [np.zeros(1)], [np.ones(1)])
        expected = -1e-3 * 0.1 / (np.sqrt(0.001) + 1e-8)
        assert theta[0] == pytest.approx(expected, rel=1e-12)

    def test_identical_params_stay_identical(self, rng):
        params = [np.ones(4), np.ones(4)]
        state = AdamState.for_params(params)
        for i in range(100):
            g = rng.standard_normal(4)
            state, params = adam_step(state, params, [g, g.copy()])
        npt.assert_array_equal(params[0], params[1])

    def test_quadratic_descent_monotone_after_burn_in(self):
        for lr in (1e-3, 1e-2):
            state = AdamState.for_params([np.array([3.0])], lr=lr)
            p = [np.array([3.0])]
            losses = []
            for _ in range(300):
                state, p = adam_step(state, p, [p[0].copy()])
                losses.append(0.5 * p[0][0] ** 2)
            assert all(b <= a + 1e-15 for a, b in zip(losses[5:], losses[6:]))

    def test_nonfinite_gradient_aborts(self):
        p = [np.zeros(2)]
        state = AdamState.for_params(p)
        with pytest.raises(FloatingPointError, match="non-finite"):
            adam_step(state, p, [np.array([1.0, np.nan])])

    def test_moments_nonnegative_v(self, rng):
        p = [rng.standard_normal(8)]
        state = AdamState.for_params(p)
        for _ in range(50):
            state, p = adam_step(state, p, [rng.standard_normal(8)])
        assert np.all(state.v[0] >= 0)


class TestScheduler:
    def test_improving_losses_keep_lr(self):
        sched = PlateauScheduler(1e-4)
        for loss in np.linspace(1.0, 0.1, 30):
            assert sched.step(loss) == 1e-4

    def test_ten_stalls_cut_by_factor(self):
        sched = PlateauScheduler(1e-4)
        sched.step(1.0)
        for _ in range(9):
            assert sched.step(1.0) == 1e-4
        assert sched.step(1.0) == pytest.approx(1e-5)

    def test_improvement_resets_counter(self):
        sched = PlateauScheduler(1e-4)
        sched.step(1.0)
        for _ in range(9):
            sched.step(1.0)
        assert sched.step(0.5) == 1e-4 and sched.stalled == 0
        for _ in range(9):
            sched.step(0.5)
        assert sched.step(0.5) == pytest.approx(1e-5)


class TestEarlyStop:
    def test_nine_stalls_not_yet(self):
        assert not early_stop([1.0] + [1.0] * 9)

    def test_ten_stalls_fires(self):
        assert early_stop([1.0] + [1.0] * 10)

    def test_monotone_decrease_never_fires(self):
        losses = list(np.linspace(1.0, 0.01, 60))
        for i in range(1, 61):
            assert not early_stop(losses[:i])


@pytest.fixture(scope="module")
def tiny_setup():
    lib = synth.gen_synthetic_library(4, bands=16, seed=0)
    cfg = TrainConfig(batch_size=8, steps_per_epoch=4, max_epochs=3,
                      lr=1e-3, seed=0)
    val = synth.make_validation_set(lib, 24, seed=1)
    vx = np.stack([s.input for s in val])
    vt = np.stack([s.target for s in val])
    return lib, cfg, vx, vt


class TestTrain:
    def test_history_one_entry_per_epoch_lr_nonincreasing(self, tiny_setup):
        lib, cfg, vx, vt = tiny_setup
        model = build_model(ArchitectureConfig(1, "B", base_channels=2, bands=16),
                            seed=0)
        gen = synth.SampleGenerator(lib, cfg.noise_schedule, PipelineConfig(), 0)
        best, hist = train(model, gen, vx, vt, cfg)
        assert len(hist) == 3 and hist.termination == "completed"
        assert all(a >= b for a, b in zip(hist.lr, hist.lr[1:]))

    def test_deterministic_end_to_end_float64(self, tiny_setup):
        lib, cfg, vx, vt = tiny_setup
        runs = []
        for _ in range(2):
            model = build_model(
                ArchitectureConfig(1, "B", base_channels=2, bands=16),
                seed=0, dtype=np.float64)
            gen = synth.SampleGenerator(lib, cfg.noise_schedule,
                                        PipelineConfig(), 0)
            _, hist = train(model, gen, vx, vt, cfg)
            runs.append((hist.train_mse, hist.val_mse))
        assert runs[0] == runs[1]  # bit-for-bit equal floats

    def test_validation_never_feeds_gradients(self, tiny_setup):
        """Poisoned validation targets must not change the parameter
        trajectory (epochs < patience, so no scheduler/stop side effects)."""
        lib, cfg, vx, vt = tiny_setup
        finals = []
        for poison in (False, True):
            model = build_model(
                ArchitectureConfig(1, "B", base_channels=2, bands=16),
                seed=0, dtype=np.float64)
            gen = synth.SampleGenerator(lib, cfg.noise_schedule,
                                        PipelineConfig(), 0)
            targets = vt + 100.0 if poison else vt
            train(model, gen, vx, targets, cfg)
            finals.append([p.copy() for _, p in model.named_params()])
        for a, b in zip(*finals):
            npt.assert_array_equal(a, b)

    def test_best_val_checkpoint_not_worse_than_final(self, tiny_setup):
        lib, cfg, vx, vt = tiny_setup
        model = build_model(ArchitectureConfig(0, "B", base_channels=2, bands=16),
                            seed=1)
        gen = synth.SampleGenerator(lib, cfg.noise_schedule, PipelineConfig(), 1)
        best, hist = train(model, gen, vx, vt, cfg)
        assert evaluate(best, vx, vt).mse <= hist.val_mse[-1] + 1e-8

    def test_nan_loss_aborts_with_last_good_model(self, tiny_setup, monkeypatch):
        lib, cfg, vx, vt = tiny_setup
        model = build_model(ArchitectureConfig(0, "B", base_channels=2, bands=16),
                            seed=0)
        gen = synth.SampleGenerator(lib, cfg.noise_schedule, PipelineConfig(), 0)
        calls = {"n": 0}
        real = ops.mse_loss

        def sometimes_nan(pred, target):
            calls["n"] += 1
            return float("nan") if calls["n"] > 6 else real(pred, target)

        monkeypatch.setattr("specunet.training.ops.mse_loss", sometimes_nan)
        best, hist = train(model, gen, vx, vt, cfg)
        assert hist.termination == "nan_abort"
        assert np.all(np.isfinite(best.forward(vx.astype(np.float32))))

    def test_early_stop_terminates(self, tiny_setup, monkeypatch):
        lib, cfg, vx, vt = tiny_setup
        import dataclasses

        cfg2 = dataclasses.replace(cfg, max_epochs=30, early_stop_patience=3,
                                   lr=0.0 + 1e-12)  # effectively frozen model
        model = build_model(ArchitectureConfig(0, "B", base_channels=2, bands=16),
                            seed=0)
        gen = synth.SampleGenerator(lib, cfg2.noise_schedule, PipelineConfig(), 0)
        _, hist = train(model, gen, vx, vt, cfg2)
        assert hist.termination == "early_stop"
        assert len(hist) < 30

    def test_history_csv_round_trip(self, tiny_setup, tmp_path):
        from specunet.report import read_history_csv

        lib, cfg, vx, vt = tiny_setup
        model = build_model(ArchitectureConfig(0, "A", base_channels=2, bands=16),
                            seed=0)
        gen = synth.SampleGenerator(lib, cfg.noise_schedule, PipelineConfig(), 0)
        _, hist = train(model, gen, vx, vt, cfg)
        path = tmp_path / "hist.csv"
        hist.write_csv(path)
        with open(path) as fh:
            assert fh.readline().rstrip("\n") == "epoch,train_mse,val_mse,lr,sigma_hi"
        cols = read_history_csv(path)
        npt.assert_allclose(cols["train_mse"], hist.train_mse)


class TestEvaluate:
    def test_perfect_model_metrics(self, rng):
        model = build_model(ArchitectureConfig(0, "B", base_channels=2, bands=16),
                            seed=0)
        x = rng.random((4, 16)).astype(np.float32)
        out = np.asarray(model.forward(x), dtype=np.float64)
        m = evaluate(model, x, out)
        assert m.mse == pytest.approx(0.0, abs=1e-12)
        assert m.pearson_r == pytest.approx(1.0, abs=1e-9)

    def test_constant_output_flagged_r_zero(self, rng):
        model = build_model(ArchitectureConfig(0, "B", base_channels=2, bands=16),
                            seed=0)
        for layer in model.iter_layers():
            for p in layer.param_names:
                setattr(layer, p, np.zeros_like(getattr(layer, p)))
        x = rng.random((3, 16)).astype(np.float32)
        m = evaluate(model, x, rng.random((3, 16)))
        assert m.pearson_r == 0.0
        assert m.n_degenerate == 3

    def test_mse_matches_mse_loss_mean(self, rng):
        model = build_model(ArchitectureConfig(0, "A", base_channels=2, bands=16),
                            seed=3)
        x = rng.random((8, 16)).astype(np.float32)
        t = rng.random((8, 16))
        m = evaluate(model, x, t)
        per = [ops.mse_loss(np.asarray(model.forward(x[i]), dtype=np.float64),
                            t[i]) for i in range(8)]
        assert m.mse == pytest.approx(np.mean(per), abs=1e-12)

    def test_empty_dataset_rejected(self):
        model = build_model(ArchitectureConfig(0, "A", base_channels=2, bands=16),
                            seed=0)
        with pytest.raises(ValueError, match="nonempty"):
            evaluate(model, np.zeros((0, 16)), np.zeros((0, 16)))
