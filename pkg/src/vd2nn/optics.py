"""Scalar wavefields and the linear free-space operators acting on them.

All lengths are expressed in units of the wavelength unless a ``GridSpec``
says otherwise. Transforms are orthonormal (``norm="ortho"``) so that the
discrete energy of a field is preserved by every Fourier round trip.

Array-level helpers (``propagate_values``, ``shift_values`` ...) accept any
leading batch dimensions ``(..., n, n)``; the ``ComplexField`` wrappers are
the single-field public surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from vd2nn.errors import GridMismatchError, ShiftRangeError

__all__ = [
    "GridSpec",
    "ComplexField",
    "TransferFunction",
    "make_transfer_function",
    "propagate",
    "adjoint_propagate",
    "shift",
    "energy",
    "pad_values",
    "crop_values",
    "propagate_values",
    "shift_values",
    "shift_ramps",
    "transfer_values",
]


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid.

    Attributes:
        n: Samples per side. Must be even and at least 2.
        pitch: Sample spacing, in wavelengths by default (0.53 is the neuron size).
        wavelength: Wavelength in the same length unit as ``pitch``.
    """

    n: int
    pitch: float = 0.53
    wavelength: float = 1.0

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 2, got {self.n!r}")
        if not (self.pitch > 0 and np.isfinite(self.pitch)):
            raise ValueError(f"pitch must be positive, got {self.pitch!r}")
        if not (self.wavelength > 0 and np.isfinite(self.wavelength)):
            raise ValueError(f"wavelength must be positive, got {self.wavelength!r}")

    @property
    def aperture(self) -> float:
        """Edge length of the grid, ``n * pitch``."""
        return self.n * self.pitch

    def coordinates(self) -> np.ndarray:
        """Pixel-centre coordinates along one axis, symmetric about zero."""
        return (np.arange(self.n) - (self.n - 1) / 2) * self.pitch

    def max_shift(self) -> float:
        return self.n * self.pitch / 4


@dataclass(frozen=True, eq=False)
class ComplexField:
    """A complex wavefield sampled on ``grid``.

    ``values[row, col]``: row index runs along +y, column index along +x.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.complex128)
        if values.shape != (self.grid.n, self.grid.n):
            raise GridMismatchError(
                f"field values have shape {values.shape}, grid expects "
                f"{(self.grid.n, self.grid.n)}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ComplexField":
        return cls(grid, np.zeros((grid.n, grid.n), dtype=np.complex128))

    def with_values(self, values: np.ndarray) -> "ComplexField":
        return ComplexField(self.grid, values)

    def __add__(self, other: "ComplexField") -> "ComplexField":
        _check_same_grid(self.grid, other.grid)
        return self.with_values(self.values + other.values)

    def __mul__(self, scalar: complex) -> "ComplexField":
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Free-space transfer function on the 2n x 2n zero-padded frequency grid."""

    grid: GridSpec
    distance: float
    values: np.ndarray


def _check_same_grid(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


@lru_cache(maxsize=32)
def _padded_frequencies(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Longitudinal wavenumber term and per-pixel max(|fx|, |fy|) on the padded grid.

    Returns ``(kz, fmax)`` where ``kz = sqrt(1/lambda^2 - fx^2 - fy^2)`` on
    propagating components and NaN on evanescent ones.
    """
    f = sfft.fftfreq(2 * grid.n, d=grid.pitch)
    fy, fx = np.meshgrid(f, f, indexing="ij")
    arg = 1.0 / grid.wavelength**2 - fx**2 - fy**2
    kz = np.where(arg >= 0, np.sqrt(np.maximum(arg, 0.0)), np.nan)
    fmax = np.maximum(np.abs(fx), np.abs(fy))
    kz.setflags(write=False)
    fmax.setflags(write=False)
    return kz, fmax


def band_limit(grid: GridSpec, z: float) -> float:
    """Aliasing-free frequency bound of the band-limited angular spectrum."""
    du = 1.0 / (2 * grid.n * grid.pitch)
    return 1.0 / (grid.wavelength * np.sqrt((2.0 * du * abs(z)) ** 2 + 1.0))


def transfer_values(grid: GridSpec, z: float | np.ndarray) -> np.ndarray:
    """Transfer-function array(s) for one distance or an array of distances.

    With an array ``z`` of shape ``(B,)`` the result has shape ``(B, 2n, 2n)``.
    """
    kz, fmax = _padded_frequencies(grid)
    zs = np.asarray(z, dtype=np.float64)
    scalar = zs.ndim == 0
    zs = np.atleast_1d(zs)
    if not np.all(np.isfinite(zs)):
        raise ValueError("propagation distance must be finite")
    out = np.empty((zs.size,) + kz.shape, dtype=np.complex128)
    propagating = np.isfinite(kz)
    for i, zi in enumerate(zs):
        if zi == 0:
            out[i] = 1.0
            continue
        keep = propagating & (fmax <= band_limit(grid, zi))
        h = np.zeros(kz.shape, dtype=np.complex128)
        h[keep] = np.exp(2j * np.pi * zi * kz[keep])
        out[i] = h
    return out[0] if scalar else out


def make_transfer_function(grid: GridSpec, z: float) -> TransferFunction:
    """Band-limited angular-spectrum transfer function for a signed distance ``z``.

    Evanescent components and frequencies beyond the band limit are zeroed;
    ``z == 0`` yields an all-ones array.
    """
    values = transfer_values(grid, float(z))
    values.setflags(write=False)
    return TransferFunction(grid, float(z), values)


def pad_values(values: np.ndarray) -> np.ndarray:
    """Zero-pad the trailing two axes from n to 2n, keeping the field centred."""
    n = values.shape[-1]
    q = n // 2
    out = np.zeros(values.shape[:-2] + (2 * n, 2 * n), dtype=np.complex128)
    out[..., q : q + n, q : q + n] = values
    return out


def crop_values(values: np.ndarray) -> np.ndarray:
    """Inverse of ``pad_values``: keep the centre n x n block."""
    n = values.shape[-1] // 2
    q = n // 2
    return values[..., q : q + n, q : q + n]


def propagate_values(values: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Pad, transform, multiply by ``h``, inverse transform, crop.

    ``h`` is ``(2n, 2n)`` or broadcastable against the padded batch.
    """
    spectrum = sfft.fft2(pad_values(values), norm="ortho", overwrite_x=True)
    spectrum *= h
    return np.ascontiguousarray(crop_values(sfft.ifft2(spectrum, norm="ortho", overwrite_x=True)))


def propagate(field: ComplexField, h: TransferFunction) -> ComplexField:
    """Propagate ``field`` over ``h.distance`` through free space."""
    _check_same_grid(field.grid, h.grid)
    return field.with_values(propagate_values(field.values, h.values))


def adjoint_propagate(field: ComplexField, h: TransferFunction) -> ComplexField:
    """Hermitian adjoint of ``propagate`` (the same pipeline with ``conj(h)``)."""
    _check_same_grid(field.grid, h.grid)
    return field.with_values(propagate_values(field.values, np.conj(h.values)))


def shift_ramps(grid: GridSpec, dx, dy) -> tuple[np.ndarray, np.ndarray]:
    """Separable Fourier phase ramps for a lateral shift by ``(dx, dy)``.

    Scalars give ramps of shape ``(1, n)`` / ``(n, 1)``; arrays of shape
    ``(B,)`` give ``(B, 1, n)`` / ``(B, n, 1)`` for per-sample shifts.
    """
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    limit = grid.max_shift()
    if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
        raise ShiftRangeError("shift must be finite")
    if np.any(np.abs(dx) >= limit) or np.any(np.abs(dy) >= limit):
        raise ShiftRangeError(
            f"shift ({np.max(np.abs(dx))}, {np.max(np.abs(dy))}) exceeds the "
            f"supported range |d| < n*pitch/4 = {limit}"
        )
    f = sfft.fftfreq(grid.n, d=grid.pitch)
    rx = np.exp(-2j * np.pi * f * dx[..., None])[..., None, :]
    ry = np.exp(-2j * np.pi * f * dy[..., None])[..., :, None]
    return rx, ry


def shift_values(values: np.ndarray, grid: GridSpec, dx, dy) -> np.ndarray:
    """Fourier-shift the trailing n x n axes by ``(dx, dy)`` (periodic, unitary)."""
    if np.all(np.asarray(dx) == 0) and np.all(np.asarray(dy) == 0):
        return np.array(values, dtype=np.complex128)
    rx, ry = shift_ramps(grid, dx, dy)
    spectrum = sfft.fft2(values, norm="ortho")
    spectrum *= rx
    spectrum *= ry
    return sfft.ifft2(spectrum, norm="ortho", overwrite_x=True)


def shift(field: ComplexField, dx: float, dy: float) -> ComplexField:
    """Translate ``field`` by ``(dx, dy)`` using the Fourier shift theorem.

    The shift is periodic on the field's own grid, which makes it exactly
    unitary and invertible; the adjoint is ``shift(field, -dx, -dy)``.
    """
    return field.with_values(shift_values(field.values, field.grid, dx, dy))


def energy(field: ComplexField) -> float:
    """Discrete power ``sum |u|^2 * pitch^2``."""
    v = field.values
    return float(np.sum(v.real**2 + v.imag**2) * field.grid.pitch**2)
