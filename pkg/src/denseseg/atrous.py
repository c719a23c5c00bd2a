"""Hole-sampled (atrous) convolution with two equivalent evaluation routes.

A rate-r convolution samples its taps r pixels apart without adding weights,
widening the field of view of a k-tap filter to k + (k-1)(r-1) input samples.
Route one slides the sparse filter over the full-resolution input; route two
deinterlaces the input into r*r phase-shifted submaps, runs the dense filter
on each, and reinterlaces. Rate 1 reduces both to standard correlation.

Accumulation-order contract (needed for bit-exact cross-checks): per output
position, tap contributions are added in row-major tap order, each contribution
a float64 product reduced over input channels; the float64 accumulator is cast
to float32 once at the end. 1-D filtering stays in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from denseseg.core import FeatureMap, ShapeError


@dataclass(frozen=True)
class ConvKernel:
    """Filter bank with weights indexed (tap_row, tap_col, c_in, c_out)."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.weights), dtype=np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"kernel weights must be 4-d (kh, kw, c_in, c_out), got {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"kernel dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("kernel weights must be finite")
        object.__setattr__(self, "weights", arr)

    @property
    def k_h(self) -> int:
        return self.weights.shape[0]

    @property
    def k_w(self) -> int:
        return self.weights.shape[1]

    @property
    def c_in(self) -> int:
        return self.weights.shape[2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[3]


@dataclass(frozen=True)
class AtrousRate:
    """Sampling stride of the filter taps; rate 1 is a dense filter."""

    r: int

    def __post_init__(self) -> None:
        if not isinstance(self.r, (int, np.integer)) or isinstance(self.r, bool):
            raise TypeError(f"rate must be an integer, got {type(self.r).__name__}")
        if self.r < 1:
            raise ValueError(f"rate must be >= 1, got {self.r}")


def _rate_value(rate: AtrousRate | int) -> int:
    if isinstance(rate, AtrousRate):
        return rate.r
    AtrousRate(rate)  # reuse its validation
    return int(rate)


def effective_kernel_size(k: int, rate: AtrousRate | int) -> int:
    """Input samples spanned by a k-tap filter at the given rate."""
    r = _rate_value(rate)
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        raise ValueError(f"tap count must be a positive integer, got {k!r}")
    return int(k) + (int(k) - 1) * (r - 1)


def atrous_conv_1d(x, w, rate: AtrousRate | int) -> np.ndarray:
    """Valid-region rate-r correlation: y[i] = sum_k x[i + r*k] * w[k].

    Taps are not mirrored and the first tap sits at offset zero, so rate 1 is
    exactly standard valid correlation and a single-tap filter is a pointwise
    scale at any rate. Output length is len(x) - r*(len(w) - 1).
    """
    r = _rate_value(rate)
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 1 or w.ndim != 1:
        raise ShapeError("signal and filter must be 1-d")
    if len(w) < 1:
        raise ShapeError("filter must have at least one tap")
    if not (np.isfinite(x).all() and np.isfinite(w).all()):
        raise ValueError("signal and filter must be finite")
    span = r * (len(w) - 1)
    out_len = len(x) - span
    if out_len < 1:
        raise ShapeError(
            f"signal of length {len(x)} too short for {len(w)} taps at rate {r} "
            f"(needs at least {span + 1})"
        )
    out = np.zeros(out_len, dtype=np.float64)
    for k in range(len(w)):
        out += w[k] * x[k * r : k * r + out_len]
    return out


def _conv2d_accumulate(x: np.ndarray, w: np.ndarray, r: int, padding: bool) -> np.ndarray:
    """Shared rate-r correlation core on float64 arrays; returns float64.

    With padding, the output grid matches the input and the tap anchor is the
    kernel center (k-1)//2 per axis, so even kernels anchor one short of the
    middle and the extra zero padding lands after the data. Without padding,
    only fully covered positions are produced.
    """
    kh, kw, c_in, c_out = w.shape
    h, w_in = x.shape[:2]
    if padding:
        anchor_h, anchor_w = (kh - 1) // 2, (kw - 1) // 2
        x = np.pad(
            x,
            (
                (r * anchor_h, r * (kh - 1 - anchor_h)),
                (r * anchor_w, r * (kw - 1 - anchor_w)),
                (0, 0),
            ),
        )
        out_h, out_w = h, w_in
    else:
        out_h, out_w = h - r * (kh - 1), w_in - r * (kw - 1)
        if out_h < 1 or out_w < 1:
            raise ShapeError(
                f"input {h}x{w_in} too small for {kh}x{kw} taps at rate {r} without padding"
            )
    acc = np.zeros((out_h * out_w, c_out), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            window = x[i * r : i * r + out_h, j * r : j * r + out_w, :]
            acc += np.ascontiguousarray(window).reshape(-1, c_in) @ w[i, j]
    return acc.reshape(out_h, out_w, c_out)


def _check_input(fm: FeatureMap, kernel: ConvKernel) -> None:
    if fm.channels != kernel.c_in:
        raise ShapeError(
            f"input has {fm.channels} channels but kernel expects {kernel.c_in}"
        )


def atrous_conv_2d_holes(
    fm: FeatureMap, kernel: ConvKernel, rate: AtrousRate | int, padding: bool = True
) -> FeatureMap:
    """Rate-r correlation by sliding the hole-sampled filter over the input."""
    r = _rate_value(rate)
    _check_input(fm, kernel)
    out = _conv2d_accumulate(
        fm.data.astype(np.float64), kernel.weights.astype(np.float64), r, padding
    )
    return FeatureMap(out.astype(np.float32))


def atrous_conv_2d_subsampled(
    fm: FeatureMap, kernel: ConvKernel, rate: AtrousRate | int, padding: bool = True
) -> FeatureMap:
    """Rate-r correlation by phase deinterlacing.

    The input splits into r*r submaps, one per (row mod r, col mod r) phase;
    each is filtered densely at rate 1 and written back to its phase of the
    output grid. Produces the same map as the hole-sampling route.
    """
    r = _rate_value(rate)
    _check_input(fm, kernel)
    x = fm.data.astype(np.float64)
    w = kernel.weights.astype(np.float64)
    kh, kw = kernel.k_h, kernel.k_w
    h, w_in = fm.height, fm.width
    if r == 1:
        out = _conv2d_accumulate(x, w, 1, padding)
        return FeatureMap(out.astype(np.float32))
    if padding:
        out_h, out_w = h, w_in
    else:
        out_h, out_w = h - r * (kh - 1), w_in - r * (kw - 1)
        if out_h < 1 or out_w < 1:
            raise ShapeError(
                f"input {h}x{w_in} too small for {kh}x{kw} taps at rate {r} without padding"
            )
    out = np.zeros((out_h, out_w, kernel.c_out), dtype=np.float64)
    for py in range(min(r, h)):
        for px in range(min(r, w_in)):
            phase = np.ascontiguousarray(x[py::r, px::r, :])
            if not padding and (phase.shape[0] < kh or phase.shape[1] < kw):
                continue  # this phase covers no valid output position
            out[py::r, px::r, :] = _conv2d_accumulate(phase, w, 1, padding)
    return FeatureMap(out.astype(np.float32))


def _axis_samples(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align-corners source pairs (lo, hi, frac) for resampling one axis.

    Source position of output j is j*(n_in-1)/(n_out-1); computed with exact
    integer division so endpoint samples hit the input corners bit-exactly.
    """
    if n_in == 1 or n_out == 1:
        zeros = np.zeros(n_out, dtype=np.int64)
        return zeros, zeros, np.zeros(n_out, dtype=np.float64)
    num = np.arange(n_out, dtype=np.int64) * (n_in - 1)
    den = n_out - 1
    lo = num // den
    frac = (num - lo * den) / float(den)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, frac


def _resample_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable align-corners bilinear resample of (h, w, c) float64 data."""
    r_lo, r_hi, r_t = _axis_samples(data.shape[0], out_h)
    c_lo, c_hi, c_t = _axis_samples(data.shape[1], out_w)
    rows = data[r_lo] * (1.0 - r_t)[:, None, None] + data[r_hi] * r_t[:, None, None]
    return rows[:, c_lo] * (1.0 - c_t)[None, :, None] + rows[:, c_hi] * c_t[None, :, None]


def upsample_bilinear(fm: FeatureMap, factor: int) -> FeatureMap:
    """Enlarge a map factor-fold per axis with align-corners bilinear sampling."""
    if not isinstance(factor, (int, np.integer)) or isinstance(factor, bool) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return fm
    out = _resample_bilinear(
        fm.data.astype(np.float64), fm.height * factor, fm.width * factor
    )
    return FeatureMap(out.astype(np.float32))
