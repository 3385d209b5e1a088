"""Command-line interface.

Commands: gen-library, gen-dataset, gen-cube, train, ablate, preprocess,
classical, bench, gradcheck, kernel-bench, report. Global flags: --seed,
--precision {f32,f64}, --workers N, --config PATH, --backend {auto,...}.

The --config file is plain `key = value` lines ('#' comments); keys mirror
the TrainConfig and PipelineConfig fields, e.g.::

    lr = 1e-3
    batch_size = 50
    spike_window = 7
    continuum_mode = quotient
    noise_epochs = 20, 81
    noise_bounds = 0.02, 0.1
"""

import argparse
import dataclasses
import os
import sys
import time

import numpy as np

from . import backends, checkpoint, cube as cubemod, gradcheck, ops, synth
from .flops import count_flops
from .model import ArchitectureConfig, ablation_grid, build_model
from .pipeline import (
    PipelineConfig,
    classical_pipeline,
    read_spectrum_csv,
    write_spectrum_csv,
)
from .synth import NoiseSchedule, SampleGenerator, gen_synthetic_library, load_library
from .training import TrainConfig, evaluate, train

TRAIN_KEYS = {"batch_size": int, "steps_per_epoch": int, "max_epochs": int,
              "lr": float, "scheduler_factor": float, "scheduler_patience": int,
              "early_stop_patience": int, "uncorrected_adam": bool, "seed": int}
PIPE_KEYS = {"range_lo": float, "range_hi": float, "spike_window": int,
             "spike_threshold": float, "smooth_window": int,
             "smooth_polyorder": int, "continuum_mode": str}


def parse_config_file(path):
    """Read `key = value` lines into (train_overrides, pipeline_overrides)."""
    train_kw, pipe_kw, sched = {}, {}, {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in TRAIN_KEYS:
                cast = TRAIN_KEYS[key]
                train_kw[key] = (value.lower() in ("1", "true", "yes")
                                 if cast is bool else cast(value))
            elif key in PIPE_KEYS:
                pipe_kw[key] = PIPE_KEYS[key](value)
            elif key in ("noise_epochs", "noise_bounds"):
                sched[key] = tuple(float(v) for v in value.split(","))
            else:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    if sched:
        train_kw["noise_schedule"] = NoiseSchedule(
            epochs=sched.get("noise_epochs", NoiseSchedule().epochs),
            bounds=sched.get("noise_bounds", NoiseSchedule().bounds),
        )
    return train_kw, pipe_kw


def _load_lib(args):
    if args.library:
        return load_library(args.library)
    return gen_synthetic_library(args.classes, bands=args.bands, seed=args.seed)


def _add_lib_args(p, bands_default=240):
    p.add_argument("--library", help="endmember library directory (CSV per class)")
    p.add_argument("--classes", type=int, default=28,
                   help="synthetic library size when --library is not given")
    p.add_argument("--bands", type=int, default=bands_default)


def _add_arch_args(p):
    p.add_argument("--depth", type=int, default=3, choices=range(4))
    p.add_argument("--variant", default="B", choices=["A", "B", "C"])
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--kernel-size", type=int, default=3)


def build_parser():
    p = argparse.ArgumentParser(prog="specunet",
                                description="1D-UNet spectral preprocessing toolkit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--backend", choices=["auto"] + backends.available(),
                   default="auto", help="convolution kernel backend")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("gen-library", help="write a synthetic endmember library")
    q.add_argument("outdir")
    q.add_argument("--classes", type=int, default=28)
    q.add_argument("--bands", type=int, default=240)

    q = sub.add_parser("gen-dataset", help="write an .npz of training samples")
    q.add_argument("out")
    _add_lib_args(q)
    q.add_argument("--samples", type=int, default=1000)
    q.add_argument("--epoch", type=int, default=100,
                   help="curriculum epoch controlling the noise bound")

    q = sub.add_parser("gen-cube", help="write a synthetic mixture cube")
    q.add_argument("out")
    _add_lib_args(q)
    q.add_argument("--height", type=int, default=100)
    q.add_argument("--width", type=int, default=100)
    q.add_argument("--sigma-hi", type=float, default=0.05)

    q = sub.add_parser("train", help="train a model, write checkpoint + history")
    q.add_argument("out", help="checkpoint path")
    _add_lib_args(q)
    _add_arch_args(q)
    q.add_argument("--epochs", type=int)
    q.add_argument("--steps", type=int)
    q.add_argument("--batch-size", type=int)
    q.add_argument("--lr", type=float)
    q.add_argument("--val-size", type=int, default=1000)
    q.add_argument("--history", help="training history CSV path")
    q.add_argument("--uncorrected-adam", action="store_true",
                   help="drop the Adam bias-correction terms")
    q.add_argument("--quiet", action="store_true")

    q = sub.add_parser("ablate", help="FLOPs + val-loss table over the 12-config grid")
    q.add_argument("outdir")
    _add_lib_args(q)
    q.add_argument("--base-channels", type=int, default=16)
    q.add_argument("--kernel-size", type=int, default=3)
    q.add_argument("--epochs", type=int, default=2)
    q.add_argument("--steps", type=int, default=20)
    q.add_argument("--val-size", type=int, default=200)

    q = sub.add_parser("preprocess", help="run a cube through a trained model")
    q.add_argument("cube")
    q.add_argument("out")
    q.add_argument("--checkpoint", required=True)

    q = sub.add_parser("classical", help="classical pipeline on a cube or CSV spectrum")
    q.add_argument("input", help=".scub cube or .csv spectrum")
    q.add_argument("out")

    q = sub.add_parser("bench", help="classical vs neural wall-clock on a cube")
    q.add_argument("cube")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--repeats", type=int, default=3)
    q.add_argument("--json", help="write the report as JSON here")

    q = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    q.add_argument("--trials", type=int, default=100)
    q.add_argument("--model-trials", type=int, default=3)

    q = sub.add_parser("kernel-bench", help="compare conv kernel backends")
    q.add_argument("--batch", type=int, default=256)
    q.add_argument("--repeats", type=int, default=5)

    q = sub.add_parser("report", help="emit SVG/CSV plots")
    q.add_argument("--history", help="training history CSV")
    q.add_argument("--checkpoint", help="model for sample-spectra plots")
    _add_lib_args(q)
    q.add_argument("--outdir", default="report")
    return p


def cmd_gen_library(args, train_cfg, pipe_cfg):
    lib = gen_synthetic_library(args.classes, bands=args.bands, seed=args.seed)
    synth.save_library(lib, args.outdir)
    print(f"wrote {lib.n_classes}-class library to {args.outdir}")


def cmd_gen_dataset(args, train_cfg, pipe_cfg):
    lib = _load_lib(args)
    gen = SampleGenerator(lib, train_cfg.noise_schedule, pipe_cfg, args.seed)
    samples = [gen.sample(args.epoch) for _ in range(args.samples)]
    tmp = f"{args.out}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        np.savez_compressed(
            fh,
            inputs=np.stack([s.input for s in samples]),
            targets=np.stack([s.target for s in samples]),
            labels=np.array([s.label for s in samples]),
            sigmas=np.array([s.recipe.sigma for s in samples]),
            wavelengths=lib.wavelengths,
            class_names=np.array(lib.names),
        )
    os.replace(tmp, args.out)
    print(f"wrote {args.samples} samples to {args.out}")


def cmd_gen_cube(args, train_cfg, pipe_cfg):
    lib = _load_lib(args)
    cube = cubemod.synthetic_cube(lib, args.height, args.width,
                                  seed=args.seed, sigma_hi=args.sigma_hi)
    cubemod.write_cube(cube, args.out)
    print(f"wrote {args.height}x{args.width}x{lib.bands} cube to {args.out}")


def _dtype(args):
    return np.float64 if args.precision == "f64" else np.float32


def cmd_train(args, train_cfg, pipe_cfg):
    overrides = {}
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    if args.steps is not None:
        overrides["steps_per_epoch"] = args.steps
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["lr"] = args.lr
    if args.uncorrected_adam:
        overrides["uncorrected_adam"] = True
    overrides["seed"] = args.seed
    train_cfg = dataclasses.replace(train_cfg, **overrides)

    lib = _load_lib(args)
    config = ArchitectureConfig(args.depth, args.variant, args.base_channels,
                                args.kernel_size, args.bands)
    model = build_model(config, args.seed, dtype=_dtype(args))
    gen = SampleGenerator(lib, train_cfg.noise_schedule, pipe_cfg, args.seed)
    val = synth.make_validation_set(lib, args.val_size, pipe_cfg,
                                    seed=args.seed + 1)
    val_x = np.stack([s.input for s in val])
    val_t = np.stack([s.target for s in val])

    def progress(epoch, history):
        if not args.quiet:
            print(f"epoch {epoch:3d}  train {history.train_mse[-1]:.3e}  "
                  f"val {history.val_mse[-1]:.3e}  lr {history.lr[-1]:.1e}  "
                  f"sigma<={history.sigma_hi[-1]:.3f}")

    t0 = time.perf_counter()
    best, history = train(model, gen, val_x, val_t, train_cfg, callback=progress)
    dt = time.perf_counter() - t0
    if best.dtype != np.float32:
        print("note: checkpoints store float32; casting the model down")
        best = best.astype(np.float32)
    checkpoint.save(best, args.out)
    if args.history:
        history.write_csv(args.history)
    metrics = evaluate(best, val_x, val_t)
    print(f"done in {dt:.0f}s ({history.termination}); best val mse "
          f"{min(history.val_mse):.3e}, pearson r {metrics.pearson_r:.4f}; "
          f"checkpoint -> {args.out}")


def cmd_ablate(args, train_cfg, pipe_cfg):
    os.makedirs(args.outdir, exist_ok=True)
    lib = _load_lib(args)
    train_cfg = dataclasses.replace(train_cfg, max_epochs=args.epochs,
                                    steps_per_epoch=args.steps, seed=args.seed)
    val = synth.make_validation_set(lib, args.val_size, pipe_cfg,
                                    seed=args.seed + 1)
    val_x = np.stack([s.input for s in val])
    val_t = np.stack([s.target for s in val])
    rows = []
    print(f"{'config':<8s}{'params':>10s}{'FLOPs(M)':>10s}{'val MSE':>12s}{'r':>8s}")
    for config in ablation_grid(args.base_channels, args.kernel_size, args.bands):
        flops = count_flops(config)
        model = build_model(config, args.seed, dtype=_dtype(args))
        gen = SampleGenerator(lib, train_cfg.noise_schedule, pipe_cfg, args.seed)
        best, history = train(model, gen, val_x, val_t, train_cfg)
        metrics = evaluate(best, val_x, val_t)
        rows.append((config.name, model.n_params(), flops.total,
                     min(history.val_mse), metrics.pearson_r))
        print(f"{config.name:<8s}{rows[-1][1]:>10d}{flops.total/1e6:>10.2f}"
              f"{rows[-1][3]:>12.3e}{rows[-1][4]:>8.3f}")
    out = os.path.join(args.outdir, "ablation.csv")
    tmp = f"{out}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        fh.write("config,params,flops,val_mse,pearson_r\n")
        for name, nparams, flops, mse, r in rows:
            fh.write(f"{name},{nparams},{flops},{mse!r},{r!r}\n")
    os.replace(tmp, out)
    print(f"table -> {out}")


def cmd_preprocess(args, train_cfg, pipe_cfg):
    cube = cubemod.read_cube(args.cube)
    model = checkpoint.load(args.checkpoint)
    out = cubemod.preprocess_cube(cube, model, workers=args.workers)
    cubemod.write_cube(out, args.out)
    print(f"preprocessed {cube.n_pixels} pixels -> {args.out}")


def cmd_classical(args, train_cfg, pipe_cfg):
    if args.input.endswith(".csv"):
        spectrum = read_spectrum_csv(args.input)
        write_spectrum_csv(classical_pipeline(spectrum, pipe_cfg), args.out)
        print(f"processed spectrum -> {args.out}")
    else:
        cube = cubemod.read_cube(args.input)
        out = cubemod.classical_cube(cube, pipe_cfg, workers=args.workers)
        cubemod.write_cube(out, args.out)
        print(f"classically processed {cube.n_pixels} pixels -> {args.out}")


def cmd_bench(args, train_cfg, pipe_cfg):
    cube = cubemod.read_cube(args.cube)
    model = checkpoint.load(args.checkpoint)
    report = cubemod.bench(cube, model, pipe_cfg, workers=args.workers,
                           repeats=args.repeats)
    print(report.table())
    if args.json:
        tmp = f"{args.json}.tmp.{os.getpid()}"
        with open(tmp, "w") as fh:
            fh.write(report.to_json() + "\n")
        os.replace(tmp, args.json)
        print(f"report -> {args.json}")


def cmd_gradcheck(args, train_cfg, pipe_cfg):
    failed = False
    for name, fn in gradcheck.LAYER_CHECKS.items():
        worst = 0.0
        for trial in range(args.trials):
            rep = fn(args.seed + trial)
            worst = max(worst, rep.max_rel_err)
            failed |= not rep.passed
        print(f"{name:<20s} {args.trials} trials  worst rel err {worst:.3e}")
    for depth, variant in ((0, "B"), (1, "B"), (2, "A"), (3, "C")):
        bands = 16 * 2 ** max(0, depth - 2)
        config = ArchitectureConfig(depth, variant, base_channels=2, bands=bands)
        worst = 0.0
        for trial in range(args.model_trials):
            rep = gradcheck.check_model(config, args.seed + trial)
            worst = max(worst, rep.max_rel_err)
            failed |= not rep.passed
        print(f"model {config.name:<14s} {args.model_trials} trials  "
              f"worst rel err {worst:.3e}")
    if failed:
        raise SystemExit("gradient check FAILED")
    print("all gradient checks passed")


def cmd_kernel_bench(args, train_cfg, pipe_cfg):
    shapes = [
        ("conv s=1 8ch", 8, 8, 240, 1),
        ("conv s=2 16ch", 16, 16, 120, 2),
        ("conv s=1 64ch", 64, 64, 30, 1),
    ]
    rng = np.random.default_rng(args.seed)
    print(f"batch={args.batch}, median of {args.repeats} "
          f"(forward+backward, float32)")
    print(f"{'workload':<16s}" + "".join(f"{n:>12s}" for n in backends.available()))
    for label, ci, co, length, stride in shapes:
        x = rng.random((args.batch, ci, length)).astype(np.float32)
        w = rng.random((co, ci, 3)).astype(np.float32)
        b = np.zeros(co, dtype=np.float32)
        gy = rng.random((args.batch, co, -(-length // stride))).astype(np.float32)
        cells = []
        for name in backends.available():
            backends.use(name)
            times = []
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                ops.conv1d(x, w, b, stride)
                ops.conv1d_backward(x, w, gy, stride)
                times.append(time.perf_counter() - t0)
            cells.append(float(np.median(times)))
        print(f"{label:<16s}" + "".join(f"{t * 1e3:>10.2f}ms" for t in cells))
    backends._select_initial()


def cmd_report(args, train_cfg, pipe_cfg):
    from . import report as rp

    os.makedirs(args.outdir, exist_ok=True)
    wrote = []
    if args.history:
        out = os.path.join(args.outdir, "loss_curve.svg")
        rp.loss_curve_svg(args.history, out)
        wrote.append(out)
    if args.checkpoint:
        lib = _load_lib(args)
        model = checkpoint.load(args.checkpoint)
        out = os.path.join(args.outdir, "sample_spectra.svg")
        rp.sample_spectra_svg(lib, model, pipe_cfg, out, seed=args.seed)
        wrote.append(out)
    out = os.path.join(args.outdir, "flops_grid.csv")
    rp.flops_table_csv([count_flops(c) for c in ablation_grid()], out)
    wrote.append(out)
    print("wrote: " + ", ".join(wrote))


COMMANDS = {
    "gen-library": cmd_gen_library,
    "gen-dataset": cmd_gen_dataset,
    "gen-cube": cmd_gen_cube,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "preprocess": cmd_preprocess,
    "classical": cmd_classical,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "kernel-bench": cmd_kernel_bench,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.backend != "auto":
        backends.use(args.backend)
    train_kw, pipe_kw = {}, {}
    if args.config:
        try:
            train_kw, pipe_kw = parse_config_file(args.config)
        except (OSError, ValueError) as exc:
            print(f"specunet: {exc}", file=sys.stderr)
            return 2
    if "seed" in train_kw and args.seed == 0:
        args.seed = train_kw["seed"]
    try:
        train_cfg = TrainConfig(**train_kw)
        pipe_cfg = PipelineConfig(**pipe_kw)
        COMMANDS[args.command](args, train_cfg, pipe_cfg)
    except (ValueError, OSError, SystemExit) as exc:
        if isinstance(exc, SystemExit):
            raise
        print(f"specunet: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
