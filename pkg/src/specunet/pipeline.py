"""The classical preprocessing chain: range selection and scaling, spike
removal, smoothing, continuum removal.

This is both the benchmark baseline and the oracle that generates training
targets. Stages are pure functions of a :class:`Spectrum` (wavelengths in
micrometers, reflectance values); array-level variants are exposed for bulk
cube processing where per-pixel object construction would dominate.

Degenerate constant spectra never raise: they map to all zeros with the
``constant`` flag set, and later stages pass them through, so whole-cube runs
cannot abort on a dead pixel.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import savgol_filter


class PipelineError(ValueError):
    pass


@dataclass
class Spectrum:
    """One pixel's reflectance on a strictly increasing wavelength grid."""

    wavelengths: np.ndarray
    values: np.ndarray
    constant: bool = False  # set when min-max scaling hit a flat spectrum

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.wavelengths.shape != self.values.shape or self.wavelengths.ndim != 1:
            raise PipelineError(
                f"wavelengths {self.wavelengths.shape} and values "
                f"{self.values.shape} must be equal-length 1-d arrays"
            )
        if len(self.wavelengths) >= 2 and not np.all(np.diff(self.wavelengths) > 0):
            raise PipelineError("wavelength grid must be strictly increasing")
        if not (np.all(np.isfinite(self.wavelengths)) and np.all(np.isfinite(self.values))):
            raise PipelineError("non-finite spectrum data")

    def __len__(self):
        return len(self.values)

    def with_values(self, values, constant=None):
        return Spectrum(self.wavelengths, values,
                        self.constant if constant is None else constant)


def read_spectrum_csv(path):
    """Read the `wavelength_um,value` CSV format."""
    lam, val = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["wavelength_um", "value"]:
            raise PipelineError(f"{path}: expected header 'wavelength_um,value'")
        for row in reader:
            if not row:
                continue
            lam.append(float(row[0]))
            val.append(float(row[1]))
    return Spectrum(np.array(lam), np.array(val))


def write_spectrum_csv(spectrum, path):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        fh.write("wavelength_um,value\n")
        for lam, v in zip(spectrum.wavelengths, spectrum.values):
            fh.write(f"{float(lam)!r},{float(v)!r}\n")
    os.replace(tmp, path)


@dataclass(frozen=True)
class PipelineConfig:
    range_lo: float = 1.0
    range_hi: float = 2.6
    spike_window: int = 7
    spike_threshold: float = 5.0
    smooth_window: int = 9
    smooth_polyorder: int = 2
    continuum_mode: str = "quotient"

    def __post_init__(self):
        if self.range_lo >= self.range_hi:
            raise PipelineError("range_lo must be < range_hi")
        for name in ("spike_window", "smooth_window"):
            w = getattr(self, name)
            if w < 3 or w % 2 == 0:
                raise PipelineError(f"{name} must be odd and >= 3, got {w}")
        if self.smooth_polyorder >= self.smooth_window:
            raise PipelineError("smooth_polyorder must be < smooth_window")
        if self.continuum_mode not in ("quotient", "subtract"):
            raise PipelineError(f"unknown continuum_mode {self.continuum_mode!r}")


def scale_minmax(values):
    """Min-max scale to [0, 1]; a constant input maps to zeros + flag."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo == 0:
        return np.zeros_like(values), True
    return (values - lo) / (hi - lo), False


def select_and_scale(s, cfg=PipelineConfig()):
    """Slice to [range_lo, range_hi] inclusive and min-max scale."""
    mask = (s.wavelengths >= cfg.range_lo) & (s.wavelengths <= cfg.range_hi)
    if mask.sum() < 2:
        raise PipelineError(
            f"fewer than 2 samples inside [{cfg.range_lo}, {cfg.range_hi}]"
        )
    scaled, flat = scale_minmax(s.values[mask])
    return Spectrum(s.wavelengths[mask], scaled, flat)


def _despike(values, window, threshold):
    n = len(values)
    half = window // 2
    out = values.copy()
    med = np.empty(n)
    mad = np.empty(n)
    win = sliding_window_view(values, window)
    med[half:n - half] = np.median(win, axis=1)
    mad[half:n - half] = np.median(np.abs(win - med[half:n - half, None]), axis=1)
    for i in list(range(half)) + list(range(n - half, n)):
        w = values[max(0, i - half):i + half + 1]
        med[i] = np.median(w)
        mad[i] = np.median(np.abs(w - med[i]))
    bad = np.abs(values - med) > threshold * 1.4826 * mad
    out[bad] = med[bad]
    return out


def remove_spikes(s, cfg=PipelineConfig()):
    """Replace rolling-median outliers (beyond threshold * 1.4826 * MAD).

    Edge positions use the centered window truncated at the boundary. Points
    passing the test are preserved bit-exactly.
    """
    if len(s) < cfg.spike_window:
        raise PipelineError(
            f"spectrum length {len(s)} < spike window {cfg.spike_window}"
        )
    return s.with_values(_despike(s.values, cfg.spike_window, cfg.spike_threshold))


def smooth(s, cfg=PipelineConfig()):
    """Savitzky-Golay smoothing (local least-squares polynomial fit).

    Edges are filled by evaluating the polynomial fitted to the terminal
    window (scipy's 'interp' mode).
    """
    if len(s) < cfg.smooth_window:
        raise PipelineError(
            f"spectrum length {len(s)} < smooth window {cfg.smooth_window}"
        )
    return s.with_values(
        savgol_filter(s.values, cfg.smooth_window, cfg.smooth_polyorder,
                      mode="interp")
    )


def upper_hull(wavelengths, values):
    """Upper convex hull by monotone chain, evaluated at every sample.

    Returns the piecewise-linear hull values; hull >= values everywhere with
    equality at the contact points, which always include both endpoints.
    """
    lam = np.asarray(wavelengths, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    n = len(lam)
    if n < 2:
        raise PipelineError("continuum removal needs at least 2 points")
    stack = []
    for i in range(n):
        while len(stack) >= 2:
            a, b = stack[-2], stack[-1]
            # pop b unless (a, b, i) turns strictly clockwise (concave chain)
            if ((lam[b] - lam[a]) * (v[i] - v[a])
                    - (v[b] - v[a]) * (lam[i] - lam[a])) >= 0:
                stack.pop()
            else:
                break
        stack.append(i)
    return np.interp(lam, lam[stack], v[stack])


def _remove_continuum_values(lam, v, mode):
    # shift by +1 only when needed to make division safe; the hull commutes
    # with constant shifts, and subtract mode cancels the shift exactly
    vv = v + 1.0 if v.min() <= 0 else v
    hull = upper_hull(lam, vv)
    if mode == "quotient":
        return np.minimum(vv / hull, 1.0)  # clamp collinear rounding dust
    return vv - hull


def remove_continuum(s, mode="quotient"):
    """Divide out (or subtract) the upper convex hull.

    Quotient mode returns values in (0, 1] and is idempotent; subtract mode
    returns values in (-inf, 0].
    """
    if mode not in ("quotient", "subtract"):
        raise PipelineError(f"unknown continuum mode {mode!r}")
    return s.with_values(_remove_continuum_values(s.wavelengths, s.values, mode))


def classical_pipeline(s, cfg=PipelineConfig()):
    """select_and_scale -> remove_spikes -> smooth -> remove_continuum."""
    t = select_and_scale(s, cfg)
    if t.constant:
        return t
    t = remove_spikes(t, cfg)
    t = smooth(t, cfg)
    return remove_continuum(t, cfg.continuum_mode)


def classical_pipeline_values(wavelengths, values, cfg=PipelineConfig()):
    """Array-level pipeline for bulk use; grid must already be inside range.

    Returns the processed values; constant pixels come back as zeros.
    """
    scaled, flat = scale_minmax(values)
    if flat:
        return scaled
    despiked = _despike(scaled, cfg.spike_window, cfg.spike_threshold)
    smoothed = savgol_filter(despiked, cfg.smooth_window, cfg.smooth_polyorder,
                             mode="interp")
    return _remove_continuum_values(wavelengths, smoothed, cfg.continuum_mode)
