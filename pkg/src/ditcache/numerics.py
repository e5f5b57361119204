"""Shared math substrate: distances, orthonormal 2D DCT, radial bands, metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class DegenerateReferenceError(ValueError):
    """Raised when a relative change is requested against a zero-magnitude reference."""


class InsufficientTraceError(ValueError):
    pass


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def rel_l1_change(a, b) -> float:
    """mean(|a - b|) / mean(|b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    ref = float(np.mean(np.abs(b)))
    if ref == 0.0:
        raise DegenerateReferenceError("mean(|reference|) is zero")
    return float(np.mean(np.abs(a - b))) / ref


def l2_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.linalg.norm((a - b).ravel()))


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix C, so that coefficients = C @ x."""
    if n < 2:
        raise ValueError(f"DCT size must be >= 2, got {n}")
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    c[0, :] = math.sqrt(1.0 / n)
    return c


def dct2d(field) -> np.ndarray:
    """Orthonormal 2D DCT-II of a square grid.

    Extra leading axes are treated as a batch; the transform acts on the
    last two axes.
    """
    x = np.asarray(field, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"expected a square grid in the last two axes, got {x.shape}")
    c = dct_matrix(x.shape[-1])
    return c @ x @ c.T


def idct2d(coeffs) -> np.ndarray:
    y = np.asarray(coeffs, dtype=np.float64)
    if y.ndim < 2 or y.shape[-1] != y.shape[-2]:
        raise ShapeError(f"expected a square grid in the last two axes, got {y.shape}")
    c = dct_matrix(y.shape[-1])
    return c.T @ y @ c


@dataclass(frozen=True)
class SpectralBands:
    grid_side: int
    num_bands: int
    band_of: np.ndarray  # (n, n) int array of band ids

    def mask(self, band: int) -> np.ndarray:
        return self.band_of == band

    def counts(self) -> np.ndarray:
        return np.bincount(self.band_of.ravel(), minlength=self.num_bands)


def radial_band_partition(n: int, num_bands: int) -> SpectralBands:
    if n < 2:
        raise ValueError(f"grid side must be >= 2, got {n}")
    if num_bands < 1:
        raise ValueError(f"need at least one band, got {num_bands}")
    if num_bands > n:
        raise ValueError(f"too many bands: {num_bands} > grid side {n}")
    u, v = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    r = np.sqrt(u**2 + v**2)
    r_max = math.sqrt(2.0) * (n - 1)
    band = np.floor(num_bands * r / (r_max * (1.0 + 1e-12))).astype(np.int64)
    band = np.minimum(band, num_bands - 1)
    return SpectralBands(grid_side=n, num_bands=num_bands, band_of=band)


def tokens_to_grid(h: np.ndarray) -> np.ndarray:
    """Map a (B, N, D) token array onto (B, D, n, n) spatial grids, row-major."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3:
        raise ShapeError(f"expected (B, N, D), got {h.shape}")
    b, n_tok, d = h.shape
    n = math.isqrt(n_tok)
    if n * n != n_tok:
        raise ShapeError(f"token count {n_tok} is not a perfect square")
    return h.reshape(b, n, n, d).transpose(0, 3, 1, 2)


def band_volatility(trace: Sequence[np.ndarray], bands: SpectralBands) -> np.ndarray:
    """Mean relative L2 change of band-restricted DCT coefficients between adjacent steps.

    Each element of ``trace`` is a (B, N, D) hidden state. Coefficients of a
    band are pooled across batch, channels and spatial positions.
    """
    if len(trace) < 2:
        raise InsufficientTraceError(f"need at least 2 timesteps, got {len(trace)}")
    spectra = []
    for h in trace:
        grid = tokens_to_grid(h)
        if grid.shape[-1] != bands.grid_side:
            raise ShapeError(
                f"token grid side {grid.shape[-1]} does not match bands grid {bands.grid_side}"
            )
        spectra.append(dct2d(grid))
    masks = [bands.mask(b) for b in range(bands.num_bands)]
    out = np.zeros(bands.num_bands)
    for prev, cur in zip(spectra[:-1], spectra[1:]):
        for b, m in enumerate(masks):
            s_prev = prev[..., m]
            ref = np.linalg.norm(s_prev.ravel())
            if ref == 0.0:
                raise DegenerateReferenceError(f"band {b} has zero energy")
            out[b] += np.linalg.norm((cur[..., m] - s_prev).ravel()) / ref
    return out / (len(spectra) - 1)


@dataclass(frozen=True)
class Polynomial:
    coeffs: tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise ValueError("polynomial needs at least one coefficient")
        if not all(math.isfinite(c) for c in self.coeffs):
            raise ValueError(f"non-finite polynomial coefficient in {self.coeffs}")

    def __call__(self, d: float) -> float:
        return poly_eval(self, d)


def poly_eval(p: Polynomial, d: float) -> float:
    if not math.isfinite(d):
        raise ValueError(f"non-finite polynomial argument {d}")
    acc = 0.0
    for c in reversed(p.coeffs):
        acc = acc * d + c
    return acc


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the inputs are identical."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    mse = _mse(a, b)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


SSIM_WINDOW = 7


def ssim(a, b, data_range: float | None = None, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid ``window`` x ``window`` uniform windows.

    When ``data_range`` is omitted it is taken from the joint range of both
    grids, which keeps the metric symmetric in its arguments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.ndim != 2 or min(a.shape) < window:
        raise ShapeError(f"grid {a.shape} smaller than {window}x{window} window")
    if data_range is None:
        data_range = float(max(a.max(), b.max()) - min(a.min(), b.min()))
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = ((wa - mu_a[..., None, None]) * (wb - mu_b[..., None, None])).mean(axis=(-2, -1))

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    if np.any(den == 0):
        # zero data range and all-zero windows: the inputs are identical
        return 1.0
    return float(np.mean(num / den))


def psnr_hidden(a: np.ndarray, reference: np.ndarray) -> float:
    """Per-channel PSNR on the token grid, averaged over batch and channels."""
    ga, gr = tokens_to_grid(a), tokens_to_grid(reference)
    peak = float(gr.max() - gr.min())
    vals = [psnr(ga[i, c], gr[i, c], peak) for i in range(ga.shape[0]) for c in range(ga.shape[1])]
    return float(np.mean(vals))


def ssim_hidden(a: np.ndarray, reference: np.ndarray) -> float:
    """Per-channel SSIM on the token grid, averaged; data range from the reference."""
    ga, gr = tokens_to_grid(a), tokens_to_grid(reference)
    vals = []
    for i in range(ga.shape[0]):
        for c in range(ga.shape[1]):
            ref = gr[i, c]
            vals.append(ssim(ga[i, c], ref, data_range=float(ref.max() - ref.min())))
    return float(np.mean(vals))
