"""Static SVG/CSV reporting: loss curves and sample spectra vs the oracle."""

import csv
import os

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def read_history_csv(path):
    cols = {"epoch": [], "train_mse": [], "val_mse": [], "lr": [], "sigma_hi": []}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for key in cols:
                cols[key].append(float(row[key]))
    return cols


def loss_curve_svg(history_csv, out_path):
    plt = _plt()
    hist = read_history_csv(history_csv)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(hist["epoch"], hist["train_mse"], label="train MSE")
    ax.plot(hist["epoch"], hist["val_mse"], label="validation MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.plot(hist["epoch"], hist["sigma_hi"], color="gray", ls="--",
             label="noise sigma bound")
    ax2.set_ylabel("sigma upper bound")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def sample_spectra_svg(lib, model, pipeline_cfg, out_path, seed=0, n=4):
    """Overlay noisy mixture inputs, model outputs and oracle targets."""
    from .synth import NoiseSchedule, SampleGenerator

    plt = _plt()
    gen = SampleGenerator(lib, NoiseSchedule(), pipeline_cfg, seed)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), sharex=True)
    lam = lib.wavelengths
    for ax in np.atleast_1d(axes):
        s = gen.sample(epoch=100)
        out = model.forward(s.input.astype(model.dtype))
        ax.plot(lam, s.input, color="0.7", lw=0.8, label="scaled noisy mixture")
        ax.plot(lam, s.target, color="C0", lw=1.2, label="classical target")
        ax.plot(lam, out, color="C3", lw=1.0, ls="--", label="model output")
        ax.set_ylabel(lib.names[s.label], fontsize=8)
    np.atleast_1d(axes)[0].legend(fontsize=7)
    np.atleast_1d(axes)[-1].set_xlabel("wavelength (um)")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def flops_table_csv(reports, out_path):
    tmp = f"{out_path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["config", "flops", "flops_millions"])
        for rep in reports:
            writer.writerow([rep.config_name, rep.total,
                             f"{rep.total / 1e6:.4f}"])
    os.replace(tmp, out_path)
