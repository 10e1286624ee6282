"""Dealiased pseudospectral products: advection and the 3D Lie derivative.

Products are computed on a padded physical grid large enough that no aliased
mode folds back into the retained band, which is the 2/3-rule in its exact
(zero-padding) form: for input bands ``A`` and ``B`` and output band ``M``
any grid with ``n >= A + B + M + 1`` points per axis reproduces the
truncated convolution to rounding error.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .fields import SpectralField, divergence_residual, biot_savart, DIV_FREE_TOL

__all__ = ["advect", "lie_derivative", "alias_free_grid", "place_modes", "extract_modes"]


def alias_free_grid(*band_max: int, out_max: int) -> int:
    """Smallest fast FFT length with no aliasing into the output band."""
    need = sum(band_max) + out_max + 1
    return sfft.next_fast_len(need)


def place_modes(coeffs: np.ndarray, max_mode: int, n: int) -> np.ndarray:
    """Scatter a cube-truncated coefficient array onto an n^d FFT lattice."""
    dim = coeffs.ndim - 1
    if n < 2 * max_mode + 1:
        raise ValueError(f"grid {n} too small for modes up to {max_mode}")
    out = np.zeros((n,) * dim + coeffs.shape[-1:], dtype=np.complex128)
    idx = np.arange(-max_mode, max_mode + 1) % n
    out[np.ix_(*([idx] * dim))] = coeffs
    return out


def extract_modes(hat: np.ndarray, max_mode: int) -> np.ndarray:
    """Gather the cube |k_j| <= max_mode from an FFT lattice."""
    dim = hat.ndim - 1
    n = hat.shape[0]
    idx = np.arange(-max_mode, max_mode + 1) % n
    return hat[np.ix_(*([idx] * dim))]


def _to_grid(coeffs: np.ndarray, max_mode: int, n: int) -> np.ndarray:
    """Physical-space samples on the n^d grid (real part; inputs are real fields)."""
    dim = coeffs.ndim - 1
    hat = place_modes(coeffs, max_mode, n)
    axes = tuple(range(dim))
    vals = sfft.ifftn(hat, axes=axes) * float(n) ** dim
    return np.ascontiguousarray(vals.real)


def _from_grid(vals: np.ndarray, max_mode: int) -> np.ndarray:
    dim = vals.ndim - 1
    n = vals.shape[0]
    axes = tuple(range(dim))
    hat = sfft.fftn(vals, axes=axes) / float(n) ** dim
    return extract_modes(hat, max_mode)


def _check_transport_field(V: SpectralField) -> None:
    if not V.is_vector:
        raise ValueError("transport field must be a vector field")
    if not V.div_free and divergence_residual(V) > DIV_FREE_TOL:
        raise ValueError("transport field must be divergence-free")


def advect(V: SpectralField, f: SpectralField, out_max_mode: int | None = None) -> SpectralField:
    """V . grad f with exact dealiasing; the zero mode of the product is dropped.

    For divergence-free V this is skew-symmetric: <f, V.grad f> = 0.
    """
    _check_transport_field(V)
    if f.dim != V.dim:
        raise ValueError("fields live in different dimensions")
    out_max = f.max_mode if out_max_mode is None else out_max_mode
    n = alias_free_grid(V.max_mode, f.max_mode, out_max=out_max)
    dim = f.dim

    vphys = _to_grid(V.coeffs, V.max_mode, n)
    ks = np.arange(-f.max_mode, f.max_mode + 1)
    prod = np.zeros((n,) * dim + (f.ncomp,))
    for j in range(dim):
        shape = [1] * dim
        shape[j] = 2 * f.max_mode + 1
        kj = ks.reshape(shape)
        dj = f.coeffs * (2j * np.pi * kj)[..., None]
        prod += vphys[..., j : j + 1] * _to_grid(dj, f.max_mode, n)

    out = _from_grid(prod, out_max)
    out[(out_max,) * dim] = 0.0
    return SpectralField(dim, f.ncomp, out_max, out)


def lie_derivative(xi: SpectralField, out_max_mode: int | None = None) -> SpectralField:
    """L_u xi = u.grad(xi) - xi.grad(u) with u recovered from the vorticity.

    3D only; the transport and stretching parts are each computed with exact
    dealiasing, so their difference is divergence-free to rounding error.
    """
    if xi.dim != 3:
        raise ValueError("lie_derivative is defined for 3D vorticity fields")
    u = biot_savart(xi)
    transport = advect(u, xi, out_max_mode)
    stretch = advect(xi, u, out_max_mode)
    return transport - stretch
