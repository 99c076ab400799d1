"""Fourier transforms and the truncated spectral convolution of a Fourier neural
operator layer, together with its adjoint.

All fields are channel-first: (batch, channels, n1, n2, n3). Transforms act on the
last three axes. The forward DFT is unnormalised and the inverse carries 1/N, the
numpy convention.

Retained modes
--------------
modes = (m1, m2, m3) keeps the frequencies |k1| < m1, |k2| < m2 and 0 <= k3 < m3 of the
real-input half spectrum. The spectral weights therefore have shape
(2 m1 - 1, 2 m2 - 1, m3, c_in, c_out); along the first two axes the weight index
follows the FFT ordering of a length (2m - 1) spectrum (0, 1, .., m-1, -(m-1), .., -1).
A grid can carry these modes without aliasing when n >= 2m - 1 on every axis, so one
set of weights serves every such resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, auto
from typing import Sequence, Tuple

import numpy as np

Modes = Tuple[int, int, int]
SPATIAL = (-3, -2, -1)


class OperatorError(ValueError):
    """Shape, mode or cache problem in the neural-operator layers."""


class Direction(Enum):
    forward = auto()
    inverse = auto()


def dft3(field: np.ndarray, direction: Direction = Direction.forward) -> np.ndarray:
    """Complex 3D DFT over the last three axes, any axis lengths (mixed radix)."""
    field = np.asarray(field)
    if field.ndim < 3:
        raise OperatorError(f"dft3 needs at least 3 axes, got shape {field.shape}")
    if min(field.shape[-3:]) == 0:
        raise OperatorError(f"dft3 got a zero-length axis in {field.shape}")
    if direction is Direction.forward:
        return np.fft.fftn(field, axes=SPATIAL)
    return np.fft.ifftn(field, axes=SPATIAL)


def check_modes(grid: Sequence[int], modes: Modes) -> None:
    if len(modes) != 3 or min(modes) < 1:
        raise OperatorError(f"modes must be 3 positive integers, got {modes}")
    for n, m in zip(grid, modes):
        if n < 2 * m - 1:
            raise OperatorError(
                f"grid {tuple(grid)} too coarse for modes {tuple(modes)}: need n >= 2m-1"
            )


def weight_shape(modes: Modes, c_in: int, c_out: int) -> Tuple[int, ...]:
    m1, m2, m3 = modes
    return (2 * m1 - 1, 2 * m2 - 1, m3, c_in, c_out)


def _signed_index(n: int, m: int) -> np.ndarray:
    """Positions of frequencies 0..m-1, -(m-1)..-1 in a length-n FFT axis."""
    return np.concatenate([np.arange(m), np.arange(n - m + 1, n)])


def mode_index(grid: Sequence[int], modes: Modes) -> Tuple[np.ndarray, ...]:
    """Open-mesh index of the retained block inside the rfftn half spectrum."""
    n1, n2, _ = grid
    m1, m2, m3 = modes
    return np.ix_(_signed_index(n1, m1), _signed_index(n2, m2), np.arange(m3))


def retained_spectrum(field: np.ndarray, modes: Modes) -> np.ndarray:
    """rfftn of a real field restricted to the retained block (normalised by N)."""
    grid = field.shape[-3:]
    check_modes(grid, modes)
    spectrum = np.fft.rfftn(field, axes=SPATIAL)
    return spectrum[(...,) + mode_index(grid, modes)] / np.prod(grid)


@dataclass(frozen=True)
class SpectralCache:
    """What the adjoint needs: the retained input spectrum and the grid."""

    kept: np.ndarray  # (batch, c_in, 2m1-1, 2m2-1, m3)
    grid: Tuple[int, int, int]


def _mode_major(block: np.ndarray) -> np.ndarray:
    """(batch, c, k1, k2, k3) -> (k1 k2 k3, batch, c) for per-mode matmuls."""
    return block.reshape(block.shape[0], block.shape[1], -1).transpose(2, 0, 1)


def _channel_major(stacked: np.ndarray, modes_shape: Tuple[int, ...]) -> np.ndarray:
    """Inverse of _mode_major."""
    return stacked.transpose(1, 2, 0).reshape(stacked.shape[1:] + modes_shape)


def spectral_conv(
    v: np.ndarray, weights: np.ndarray, modes: Modes
) -> Tuple[np.ndarray, SpectralCache]:
    """Transform, multiply every retained mode by its c_in x c_out complex matrix,
    drop all other modes, transform back. The output is real: the inverse real
    transform projects onto conjugate-symmetric spectra."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 5:
        raise OperatorError(f"expected (batch, channels, n1, n2, n3), got {v.shape}")
    grid = v.shape[-3:]
    check_modes(grid, modes)
    if weights.shape[:3] != weight_shape(modes, 1, 1)[:3] or weights.shape[3] != v.shape[1]:
        raise OperatorError(
            f"weights {weights.shape} do not match modes {modes} and {v.shape[1]} channels"
        )

    index = (...,) + mode_index(grid, modes)
    spectrum = np.fft.rfftn(v, axes=SPATIAL)
    kept = spectrum[index]
    out_spectrum = np.zeros(
        (v.shape[0], weights.shape[4]) + spectrum.shape[-3:], dtype=np.complex128
    )
    per_mode = weights.reshape((-1,) + weights.shape[3:])
    out_spectrum[index] = _channel_major(
        np.matmul(_mode_major(kept), per_mode), weights.shape[:3]
    )
    out = np.fft.irfftn(out_spectrum, s=grid, axes=SPATIAL)
    return out, SpectralCache(kept=kept, grid=tuple(grid))


def _irfft_adjoint_weights(n3: int, length: int) -> np.ndarray:
    """Multiplicity of each half-spectrum bin along the last axis: 1 for the zero
    (and Nyquist) bin, 2 for bins standing in for a conjugate pair."""
    w = np.full(length, 2.0)
    w[0] = 1.0
    if n3 % 2 == 0:
        w[-1] = 1.0
    return w


def spectral_conv_backward(
    grad_out: np.ndarray, weights: np.ndarray, modes: Modes, cache: SpectralCache
) -> Tuple[np.ndarray, np.ndarray]:
    """Adjoint of spectral_conv. Returns (grad_v, grad_weights).

    Complex gradients use the convention dL/dRe + i dL/dIm, so a gradient step on the
    real and imaginary parts is `w -= lr * grad`.
    """
    if cache is None:
        raise OperatorError("spectral_conv_backward called without a forward cache")
    grid = cache.grid
    N = float(np.prod(grid))
    index = (...,) + mode_index(grid, modes)

    # Adjoint of irfftn: rfftn scaled by the bin multiplicity over N.
    g_spec = np.fft.rfftn(grad_out, axes=SPATIAL)
    g_spec *= _irfft_adjoint_weights(grid[2], g_spec.shape[-1]) / N
    g_kept = g_spec[index]

    g_modes = _mode_major(g_kept)
    kept_h = np.conj(_mode_major(cache.kept)).transpose(0, 2, 1)
    grad_weights = np.matmul(kept_h, g_modes).reshape(weights.shape)
    per_mode_h = np.conj(weights.reshape((-1,) + weights.shape[3:])).transpose(0, 2, 1)
    g_in_kept = _channel_major(np.matmul(g_modes, per_mode_h), weights.shape[:3])

    # Adjoint of rfftn: real part of N * ifftn of the zero-filled full spectrum.
    full = np.zeros(g_in_kept.shape[:2] + tuple(grid), dtype=np.complex128)
    full[index] = g_in_kept
    grad_v = np.real(np.fft.ifftn(full, axes=SPATIAL)) * N
    return grad_v, grad_weights


def upsample_spectral(field: np.ndarray, grid: Sequence[int]) -> np.ndarray:
    """Band-limited interpolation of a real periodic field onto a finer grid by
    zero-padding its spectrum. Odd source lengths only, so no Nyquist bin is split."""
    field = np.asarray(field, dtype=np.float64)
    src = field.shape[-3:]
    if any(n % 2 == 0 for n in src) or any(g < n for g, n in zip(grid, src)):
        raise OperatorError(f"cannot upsample {tuple(src)} onto {tuple(grid)}")
    spectrum = np.fft.fftshift(np.fft.fftn(field, axes=SPATIAL), axes=SPATIAL)
    padded = np.zeros(field.shape[:-3] + tuple(grid), dtype=np.complex128)
    # Zero frequency sits at index n // 2 after fftshift.
    starts = [g // 2 - n // 2 for g, n in zip(grid, src)]
    region = (...,) + tuple(slice(s, s + n) for s, n in zip(starts, src))
    padded[region] = spectrum
    scale = np.prod(grid) / np.prod(src)
    padded = np.fft.ifftshift(padded, axes=SPATIAL)
    return np.real(np.fft.ifftn(padded, axes=SPATIAL)) * scale
