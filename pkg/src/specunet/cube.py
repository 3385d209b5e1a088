"""Hyperspectral cube I/O, batch preprocessing and the speed benchmark.

Cube file layout: magic ``b"SCUB"``, u32 LE version (1), u32 LE H, W, B,
then B float32 LE wavelengths and H*W*B float32 LE values in
band-interleaved-by-pixel order (pixel-major, band-minor).

The neural path batches pixels through the network in fixed-size chunks; the
chunking is independent of the worker count and BLAS pools are pinned to one
thread while workers fan out, so results are bit-identical for any
``workers`` setting.
"""

import json
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .pipeline import PipelineConfig, classical_pipeline_values

MAGIC = b"SCUB"
VERSION = 1
PIXEL_CHUNK = 512  # fixed batching granularity, independent of workers


class CubeError(IOError):
    pass


@dataclass
class Cube:
    wavelengths: np.ndarray  # (bands,) float32, micrometers
    data: np.ndarray         # (H, W, bands) float32, BIP layout

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float32)
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != len(self.wavelengths):
            raise CubeError(
                f"cube data {self.data.shape} inconsistent with "
                f"{len(self.wavelengths)} wavelengths"
            )
        if len(self.wavelengths) >= 2 and not np.all(np.diff(self.wavelengths) > 0):
            raise CubeError("cube wavelengths must be strictly increasing")

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_pixels(self):
        return self.data.shape[0] * self.data.shape[1]


def write_cube(cube, path):
    h, w, b = cube.data.shape
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIII", VERSION, h, w, b))
            fh.write(cube.wavelengths.astype("<f4").tobytes())
            fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_cube(path):
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20 or head[:4] != MAGIC:
            raise CubeError(f"{path}: not a cube file (bad magic)")
        version, h, w, b = struct.unpack("<IIII", head[4:20])
        if version != VERSION:
            raise CubeError(f"{path}: unsupported version {version}")
        payload = fh.read()
    need = 4 * (b + h * w * b)
    if len(payload) < need:
        raise CubeError(
            f"{path}: header claims {h}x{w}x{b} data but the file holds "
            f"{len(payload)} payload bytes (need {need})"
        )
    lam = np.frombuffer(payload[:4 * b], dtype="<f4")
    data = np.frombuffer(payload[4 * b:need], dtype="<f4").reshape(h, w, b)
    return Cube(lam.copy(), data.copy())


def synthetic_cube(lib, height, width, seed=0, sigma_hi=0.05):
    """Random mixture pixels from a library, with per-pixel Gaussian noise."""
    from .synth import NoiseSchedule, draw_recipe, mix_spectra

    rng = np.random.default_rng(seed)
    schedule = NoiseSchedule(epochs=(1.0,), bounds=(min(sigma_hi, 0.1),))
    data = np.empty((height, width, lib.bands), dtype=np.float32)
    for i in range(height):
        for j in range(width):
            recipe = draw_recipe(lib.n_classes, 1, schedule, rng)
            v = mix_spectra(lib, recipe).values
            if recipe.sigma > 0:
                v = v + rng.normal(0, recipe.sigma, lib.bands)
            data[i, j] = v
    return Cube(lib.wavelengths.astype(np.float32), data)


def _scale_rows(flat):
    """Per-pixel min-max scale; constant pixels become zeros + mask entry."""
    lo = flat.min(axis=1, keepdims=True)
    hi = flat.max(axis=1, keepdims=True)
    span = hi - lo
    flat_rows = (span == 0).ravel()
    span[span == 0] = 1.0
    scaled = (flat - lo) / span
    scaled[flat_rows] = 0.0
    return scaled, flat_rows


def preprocess_cube(cube, model, workers=1, chunk=PIXEL_CHUNK):
    """Min-max scale every pixel and run it through the network (infer mode).

    Constant pixels propagate as flagged zeros without touching the model.
    Output is bit-identical for any worker count: chunk boundaries are fixed
    and each chunk is computed by exactly one worker with single-threaded
    BLAS.
    """
    if cube.data.shape[2] != model.config.bands:
        raise CubeError(
            f"cube bands {cube.data.shape[2]} != model bands {model.config.bands}"
        )
    h, w, b = cube.data.shape
    flat = cube.data.reshape(-1, b).astype(np.float32)
    scaled, flat_rows = _scale_rows(flat)
    out = np.empty_like(scaled)
    spans = [(s, min(s + chunk, len(scaled))) for s in range(0, len(scaled), chunk)]

    def run(span):
        s, e = span
        out[s:e] = model.forward(scaled[s:e])

    with threadpool_limits(limits=1):
        if workers <= 1:
            for span in spans:
                run(span)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, spans))
    out[flat_rows] = 0.0
    return Cube(cube.wavelengths, out.reshape(h, w, b))


def classical_cube(cube, cfg=PipelineConfig(), workers=1):
    """Run the classical pipeline over every pixel of a cube.

    The wavelength slice is applied once (all pixels share the grid), so the
    output has the in-range bands only.
    """
    lam = cube.wavelengths.astype(np.float64)
    mask = (lam >= cfg.range_lo) & (lam <= cfg.range_hi)
    if mask.sum() < 2:
        raise CubeError(
            f"fewer than 2 cube bands inside [{cfg.range_lo}, {cfg.range_hi}]"
        )
    lam = lam[mask]
    h, w, _ = cube.data.shape
    flat = cube.data[:, :, mask].reshape(h * w, -1).astype(np.float64)
    out = np.empty(flat.shape, dtype=np.float32)
    rows = range(len(flat))

    def run(i):
        out[i] = classical_pipeline_values(lam, flat[i], cfg)

    if workers <= 1:
        for i in rows:
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, rows))
    return Cube(lam.astype(np.float32), out.reshape(h, w, -1))


@dataclass
class BenchReport:
    pixels: int
    bands: int
    classical_seconds: float
    neural_seconds: float
    mean_abs_deviation: float
    backend: str
    workers: int
    repeats: int

    @property
    def speedup(self):
        return self.classical_seconds / self.neural_seconds

    def to_json(self):
        return json.dumps({
            "pixels": self.pixels,
            "bands": self.bands,
            "classical_seconds": self.classical_seconds,
            "neural_seconds": self.neural_seconds,
            "speedup": self.speedup,
            "mean_abs_deviation": self.mean_abs_deviation,
            "backend": self.backend,
            "workers": self.workers,
            "repeats": self.repeats,
        }, indent=2)

    def table(self):
        return "\n".join([
            f"pixels               {self.pixels} ({self.bands} bands)",
            f"classical pipeline   {self.classical_seconds:.3f} s",
            f"neural path          {self.neural_seconds:.3f} s "
            f"[{self.backend} backend, {self.workers} worker(s)]",
            f"speedup              {self.speedup:.2f}x",
            f"mean |delta|         {self.mean_abs_deviation:.5f}",
            f"(median of {self.repeats} runs)",
        ])


def bench(cube, model, cfg=PipelineConfig(), workers=1, repeats=3):
    """Median wall-clock of classical vs neural preprocessing on one cube."""
    from . import backends

    warm = Cube(cube.wavelengths, cube.data[:2, :2])
    preprocess_cube(warm, model, workers=workers)
    classical_cube(warm, cfg, workers=workers)

    neural_times, classical_times = [], []
    neural_out = classical_out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        neural_out = preprocess_cube(cube, model, workers=workers)
        neural_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        classical_out = classical_cube(cube, cfg, workers=workers)
        classical_times.append(time.perf_counter() - t0)
    dev = float(np.mean(np.abs(neural_out.data.astype(np.float64)
                               - classical_out.data.astype(np.float64))))
    return BenchReport(
        pixels=cube.n_pixels,
        bands=int(cube.data.shape[2]),
        classical_seconds=float(np.median(classical_times)),
        neural_seconds=float(np.median(neural_times)),
        mean_abs_deviation=dev,
        backend=backends.active().name,
        workers=workers,
        repeats=repeats,
    )
