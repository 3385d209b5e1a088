"""Spectral library handling and the mixture + noise + scaling augmentation.

Training inputs are convex mixtures of library endmembers with curriculum
Gaussian noise, min-max scaled; the target is the classical pipeline applied
to the pure endmember of the dominant mixture component. Real endmember
libraries load from a directory of per-class CSVs; a synthetic stand-in
generator (smooth baseline minus Gaussian absorption bands) covers everything
else.
"""

import os
from dataclasses import dataclass

import numpy as np

from .pipeline import (
    PipelineConfig,
    Spectrum,
    classical_pipeline_values,
    read_spectrum_csv,
    scale_minmax,
    write_spectrum_csv,
)

MAX_SIGMA = 0.1
MANIFEST = "library.txt"


class LibraryError(ValueError):
    pass


@dataclass
class SpectralLibrary:
    names: list
    wavelengths: np.ndarray       # shared grid, micrometers
    spectra: np.ndarray           # (n_classes, bands)

    def __post_init__(self):
        if len(self.names) < 1:
            raise LibraryError("library needs at least one class")
        if len(set(self.names)) != len(self.names):
            raise LibraryError("duplicate class names in library")
        if self.spectra.shape != (len(self.names), len(self.wavelengths)):
            raise LibraryError(
                f"spectra shape {self.spectra.shape} inconsistent with "
                f"{len(self.names)} classes x {len(self.wavelengths)} bands"
            )

    @property
    def n_classes(self):
        return len(self.names)

    @property
    def bands(self):
        return len(self.wavelengths)

    def spectrum(self, index):
        return Spectrum(self.wavelengths, self.spectra[index].copy())


def default_grid(bands=240, lo=1.0, hi=2.6):
    return np.linspace(lo, hi, bands)


def gen_synthetic_library(n_classes, bands=240, seed=0):
    """Stand-in endmember set: smooth baselines minus absorption Gaussians.

    Per class: a gentle quadratic baseline minus one deep diagnostic band
    (depth 0.35-0.5, width 0.04-0.1 um) plus up to one shallower secondary
    band, clipped into (0, 1]. Diagnostic band centers are jittered over a
    shuffled even partition of [1.05, 2.55] um so every class keeps a
    distinct signature, mirroring how real endmember libraries separate.
    Deterministic per seed.
    """
    if n_classes < 1:
        raise LibraryError("n_classes must be >= 1")
    rng = np.random.default_rng(seed)
    lam = default_grid(bands)
    t = (lam - lam[0]) / (lam[-1] - lam[0])
    spectra = np.empty((n_classes, bands))
    slots = rng.permutation(n_classes)
    for c in range(n_classes):
        v = (rng.uniform(0.55, 0.9)
             + rng.uniform(-0.15, 0.15) * t
             + rng.uniform(-0.1, 0.1) * t * t)
        slot_lo = 1.05 + 1.5 * slots[c] / n_classes
        center = slot_lo + 1.5 / n_classes * rng.uniform(0.2, 0.8)
        depth = rng.uniform(0.35, 0.5)
        width = rng.uniform(0.04, 0.1)
        v = v - depth * np.exp(-0.5 * ((lam - center) / width) ** 2)
        for _ in range(int(rng.integers(0, 2))):
            center = rng.uniform(1.05, 2.55)
            depth = rng.uniform(0.05, 0.15)
            width = rng.uniform(0.02, 0.1)
            v = v - depth * np.exp(-0.5 * ((lam - center) / width) ** 2)
        spectra[c] = np.clip(v, 1e-3, 1.0)
    names = [f"class_{c:02d}" for c in range(n_classes)]
    return SpectralLibrary(names, lam, spectra)


def save_library(lib, dirpath):
    """One `<class>.csv` per endmember plus a `library.txt` order manifest."""
    os.makedirs(dirpath, exist_ok=True)
    for i, name in enumerate(lib.names):
        write_spectrum_csv(lib.spectrum(i), os.path.join(dirpath, f"{name}.csv"))
    with open(os.path.join(dirpath, MANIFEST), "w", newline="\n") as fh:
        fh.write("\n".join(lib.names) + "\n")


def load_library(dirpath):
    """Load a library directory; all files must share one wavelength grid."""
    if not os.path.isdir(dirpath):
        raise LibraryError(f"{dirpath}: not a directory")
    manifest = os.path.join(dirpath, MANIFEST)
    if os.path.exists(manifest):
        with open(manifest) as fh:
            names = [line.strip() for line in fh if line.strip()]
    else:
        names = sorted(
            f[:-4] for f in os.listdir(dirpath) if f.endswith(".csv")
        )
    if not names:
        raise LibraryError(f"{dirpath}: no endmember CSV files found")
    if len(set(names)) != len(names):
        raise LibraryError(f"{dirpath}: duplicate class names")
    grid = None
    first_file = None
    rows = []
    for name in names:
        path = os.path.join(dirpath, f"{name}.csv")
        s = read_spectrum_csv(path)
        if grid is None:
            grid, first_file = s.wavelengths, path
        elif not np.array_equal(grid, s.wavelengths):
            raise LibraryError(
                f"wavelength grid of {path} does not match {first_file}"
            )
        rows.append(s.values)
    return SpectralLibrary(names, grid, np.vstack(rows))


@dataclass(frozen=True)
class MixtureRecipe:
    """(class index, proportion) pairs plus the noise sigma for one sample."""

    components: tuple
    sigma: float

    def __post_init__(self):
        classes = [c for c, _ in self.components]
        props = np.array([p for _, p in self.components])
        if len(set(classes)) != len(classes):
            raise LibraryError("mixture components must be distinct classes")
        if np.any(props < 0) or abs(props.sum() - 1.0) > 1e-12:
            raise LibraryError(
                f"proportions must be >= 0 and sum to 1, got sum {props.sum()!r}"
            )
        if not 0 <= self.sigma <= MAX_SIGMA:
            raise LibraryError(f"sigma must lie in [0, {MAX_SIGMA}], got {self.sigma}")

    @property
    def dominant(self):
        """Class index of the largest proportion; ties go to the lowest index."""
        props = [p for _, p in self.components]
        best = max(props)
        return min(c for c, p in self.components if p == best)


def draw_proportions(n_components, rng):
    """p1 ~ U(0,1); p_i ~ U(0, remainder); the last takes the remainder.

    The remainder closure makes the proportions sum to 1 exactly.
    """
    if n_components < 1:
        raise LibraryError("n_components must be >= 1")
    p = np.empty(n_components)
    remaining = 1.0
    for i in range(n_components - 1):
        p[i] = rng.uniform(0.0, remaining)
        remaining -= p[i]
    p[-1] = remaining
    return p


def mix_spectra(lib, recipe):
    """Pointwise convex combination of endmembers on the shared grid."""
    values = np.zeros(lib.bands)
    for c, p in recipe.components:
        if not 0 <= c < lib.n_classes:
            raise LibraryError(f"unknown class index {c}")
        values += p * lib.spectra[c]
    return Spectrum(lib.wavelengths, values)


def add_noise(s, sigma, rng):
    """Add i.i.d. Gaussian noise per band; sigma must lie in [0, 0.1]."""
    if not 0 <= sigma <= MAX_SIGMA:
        raise LibraryError(f"sigma must lie in [0, {MAX_SIGMA}], got {sigma}")
    if sigma == 0:
        return s.with_values(s.values.copy())
    return s.with_values(s.values + rng.normal(0.0, sigma, len(s)))


def minmax_scale(s):
    """Min-max scale a spectrum; constant input maps to zeros + flag."""
    values, flat = scale_minmax(s.values)
    return s.with_values(values, constant=flat)


@dataclass(frozen=True)
class NoiseSchedule:
    """Epoch-indexed upper bound for the noise sigma.

    Piecewise-linear between (epoch, bound) breakpoints, clamped outside:
    the default holds 0.02 through epoch 20, rises linearly to 0.1 at epoch
    81 and stays there.
    """

    epochs: tuple = (20.0, 81.0)
    bounds: tuple = (0.02, 0.1)

    def __post_init__(self):
        e = np.asarray(self.epochs, dtype=float)
        b = np.asarray(self.bounds, dtype=float)
        if e.shape != b.shape or e.ndim != 1 or len(e) < 1:
            raise LibraryError("schedule needs matching epoch/bound lists")
        if np.any(np.diff(e) <= 0):
            raise LibraryError("schedule epochs must be increasing")
        if np.any(np.diff(b) < 0):
            raise LibraryError("schedule bounds must be nondecreasing")
        if b.min() < 0 or b.max() > MAX_SIGMA:
            raise LibraryError(f"schedule bounds must lie in [0, {MAX_SIGMA}]")

    def upper_bound(self, epoch):
        if epoch < 1:
            raise LibraryError(f"epoch must be >= 1, got {epoch}")
        return float(np.interp(epoch, self.epochs, self.bounds))


def sigma_for_epoch(schedule, epoch, rng):
    """Draw sigma ~ U(0, schedule bound at this epoch)."""
    return float(rng.uniform(0.0, schedule.upper_bound(epoch)))


@dataclass
class TrainingSample:
    input: np.ndarray    # scaled augmented mixture, (bands,)
    target: np.ndarray   # oracle-preprocessed dominant endmember, (bands,)
    label: int           # dominant class index
    recipe: MixtureRecipe


def draw_recipe(n_classes, epoch, schedule, rng, max_components=5):
    """Component count ~ U{1..5}, distinct classes, curriculum sigma."""
    n = int(rng.integers(1, min(max_components, n_classes) + 1))
    classes = rng.choice(n_classes, size=n, replace=False)
    props = draw_proportions(n, rng)
    sigma = sigma_for_epoch(schedule, epoch, rng)
    return MixtureRecipe(tuple(zip(classes.tolist(), props.tolist())), sigma)


def make_sample(lib, epoch, schedule, pipeline_cfg, rng, target_cache=None):
    """Draw one augmented training sample with its oracle target."""
    recipe = draw_recipe(lib.n_classes, epoch, schedule, rng)
    mixed = mix_spectra(lib, recipe)
    noisy = add_noise(mixed, recipe.sigma, rng)
    scaled = minmax_scale(noisy)
    label = recipe.dominant
    if target_cache is not None and label in target_cache:
        target = target_cache[label]
    else:
        target = classical_pipeline_values(lib.wavelengths, lib.spectra[label],
                                           pipeline_cfg)
        if target_cache is not None:
            target_cache[label] = target
    return TrainingSample(scaled.values, target, label, recipe)


class SampleGenerator:
    """Replicable sample stream: same (library, schedule, seed) => same data.

    ``split(n)`` derives independent per-worker streams from the seed, so
    parallel workers produce disjoint deterministic sample sets.
    """

    def __init__(self, lib, schedule=NoiseSchedule(),
                 pipeline_cfg=PipelineConfig(), seed=0, _seq=None):
        self.lib = lib
        self.schedule = schedule
        self.pipeline_cfg = pipeline_cfg
        self.seed = seed
        self._seq = _seq if _seq is not None else np.random.SeedSequence(seed)
        self.rng = np.random.default_rng(self._seq)
        self._targets = {
            c: classical_pipeline_values(lib.wavelengths, lib.spectra[c], pipeline_cfg)
            for c in range(lib.n_classes)
        }

    def sample(self, epoch):
        return make_sample(self.lib, epoch, self.schedule, self.pipeline_cfg,
                           self.rng, self._targets)

    def batch(self, epoch, n):
        """n samples as stacked arrays: (inputs, targets, labels)."""
        samples = [self.sample(epoch) for _ in range(n)]
        inputs = np.stack([s.input for s in samples])
        targets = np.stack([s.target for s in samples])
        labels = np.array([s.label for s in samples])
        return inputs, targets, labels

    def split(self, n_workers):
        children = self._seq.spawn(n_workers)
        return [
            SampleGenerator(self.lib, self.schedule, self.pipeline_cfg,
                            self.seed, _seq=child)
            for child in children
        ]


def make_validation_set(lib, n, pipeline_cfg=PipelineConfig(), seed=1234):
    """Fixed held-out draw with sigma spanning the full [0, 0.1] range."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A1]))
    gen = SampleGenerator(lib, NoiseSchedule(), pipeline_cfg, seed)
    samples = []
    for _ in range(n):
        recipe = draw_recipe(lib.n_classes, 1, gen.schedule, rng)
        recipe = MixtureRecipe(recipe.components,
                               float(rng.uniform(0.0, MAX_SIGMA)))
        mixed = mix_spectra(lib, recipe)
        noisy = add_noise(mixed, recipe.sigma, rng)
        scaled = minmax_scale(noisy)
        label = recipe.dominant
        samples.append(TrainingSample(scaled.values, gen._targets[label],
                                      label, recipe))
    return samples
