"""Fourier-side representation of zero-mean periodic fields on the torus.

Conventions used throughout the package:

* basis functions ``e_k(x) = exp(2*pi*i k.x)`` for integer wavevectors
  ``k != 0``, so ``grad e_k = 2*pi*i*k e_k`` and
  ``lap e_k = -4*pi^2 |k|^2 e_k``;
* a field is ``X(x) = sum_k X_k e_k(x)`` with the reality constraint
  ``X_{-k} = conj(X_k)``; the zero mode is always absent (zero mean);
* Sobolev norms use plain ``|k|^(2s)`` weights,
  ``||X||_{H^s}^2 = sum_k |k|^(2s) |X_k|^2``, so ``s = 0`` is the L2 norm
  and the 2*pi factors of derivatives never enter norm identities.

Coefficients are stored on the full cube lattice ``|k_j| <= M`` as a dense
complex array of shape ``(2M+1,)*d + (m,)``; index ``i`` along an axis holds
``k = i - M``.  Reality is enforced at construction: callers hand in either a
mirror-symmetric array or coefficients for canonical representatives only
(first nonzero component positive), and the mirrors are derived.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "SpectralField",
    "is_canonical",
    "mode_norm_sq",
    "helmholtz_project",
    "helmholtz_complement",
    "sobolev_norm",
    "l2_inner",
    "laplacian",
    "heat_semigroup",
    "biot_savart",
    "curl",
    "divergence_residual",
    "random_field",
    "random_divergence_free",
]

#: relative tolerance below which a divergence-free violation is repaired
#: silently; larger violations are an error.
DIV_FREE_TOL = 1e-12


def mode_norm_sq(k: Sequence[int]) -> int:
    """|k|^2 as an exact integer."""
    return int(sum(int(c) * int(c) for c in k))


def is_canonical(k: Sequence[int]) -> bool:
    """True if the first nonzero component of k is positive.

    The canonical half-lattice indexes the independently writable
    coefficients; the mirror ``-k`` always carries the conjugate value.
    """
    for c in k:
        if c != 0:
            return c > 0
    return False


@lru_cache(maxsize=None)
def _k_grid(dim: int, max_mode: int) -> np.ndarray:
    """Integer wavevectors on the cube lattice, shape (2M+1,)*d + (d,)."""
    axes = [np.arange(-max_mode, max_mode + 1)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


@lru_cache(maxsize=None)
def _k_norm_sq(dim: int, max_mode: int) -> np.ndarray:
    ks = _k_grid(dim, max_mode)
    return np.sum(ks.astype(np.float64) ** 2, axis=-1)


@lru_cache(maxsize=None)
def _k_norm_sq_safe(dim: int, max_mode: int) -> np.ndarray:
    """|k|^2 with the zero mode replaced by 1 (its coefficient is zero)."""
    k2 = _k_norm_sq(dim, max_mode).copy()
    k2[(max_mode,) * dim] = 1.0
    return k2


def _mirror(coeffs: np.ndarray, dim: int) -> np.ndarray:
    """coeffs evaluated at -k: reverse every lattice axis."""
    sl = tuple([slice(None, None, -1)] * dim + [slice(None)])
    return coeffs[sl]


@dataclass(frozen=True)
class SpectralField:
    """Zero-mean field on T^d held as Fourier coefficients.

    ``ncomp`` is 1 for scalars and ``dim`` for vector fields.  Instances are
    immutable; all operations return new fields.  ``div_free`` marks fields
    known to satisfy ``k . X_k = 0`` on every mode.
    """

    dim: int
    ncomp: int
    max_mode: int
    coeffs: np.ndarray = field(repr=False)
    div_free: bool = False

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.ncomp not in (1, self.dim):
            raise ValueError(f"ncomp must be 1 or dim, got {self.ncomp}")
        expected = (2 * self.max_mode + 1,) * self.dim + (self.ncomp,)
        if self.coeffs.shape != expected:
            raise ValueError(
                f"coefficient array has shape {self.coeffs.shape}, expected {expected}"
            )

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zeros(dim: int, ncomp: int, max_mode: int) -> "SpectralField":
        shape = (2 * max_mode + 1,) * dim + (ncomp,)
        return SpectralField(dim, ncomp, max_mode, np.zeros(shape, dtype=np.complex128))

    @staticmethod
    def from_modes(
        dim: int,
        ncomp: int,
        max_mode: int,
        modes: Mapping[tuple, Sequence[complex]],
    ) -> "SpectralField":
        """Build a field from canonical-mode coefficients.

        Keys must be canonical wavevectors (first nonzero component
        positive); the mirror coefficients are derived by conjugation so the
        reality constraint cannot be violated.
        """
        out = np.zeros((2 * max_mode + 1,) * dim + (ncomp,), dtype=np.complex128)
        for k, value in modes.items():
            k = tuple(int(c) for c in k)
            if len(k) != dim:
                raise ValueError(f"wavevector {k} has wrong dimension")
            if all(c == 0 for c in k):
                raise ValueError("zero mode is excluded (fields have zero mean)")
            if not is_canonical(k):
                raise ValueError(
                    f"{k} is not canonical; set the mirror through its canonical representative"
                )
            if any(abs(c) > max_mode for c in k):
                raise ValueError(f"wavevector {k} outside cube truncation M={max_mode}")
            vec = np.asarray(value, dtype=np.complex128).reshape(ncomp)
            idx = tuple(c + max_mode for c in k)
            out[idx] = vec
            out[tuple(max_mode - c for c in k)] = np.conj(vec)
        return SpectralField(dim, ncomp, max_mode, out)

    @staticmethod
    def from_array(
        dim: int,
        ncomp: int,
        max_mode: int,
        coeffs: np.ndarray,
        div_free: bool = False,
        check: bool = True,
    ) -> "SpectralField":
        """Wrap a full-lattice coefficient array, validating the invariants."""
        coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
        fld = SpectralField(dim, ncomp, max_mode, coeffs, div_free)
        if check:
            scale = float(np.max(np.abs(coeffs))) or 1.0
            resid = np.max(np.abs(coeffs - np.conj(_mirror(coeffs, dim))))
            if resid > 1e-12 * scale:
                raise ValueError(
                    f"reality constraint violated: max |X_k - conj(X_-k)| = {resid:.3e}"
                )
            zero = coeffs[(max_mode,) * dim]
            if np.max(np.abs(zero)) > 1e-13 * scale:
                raise ValueError("zero mode must be absent (fields have zero mean)")
            if div_free:
                fld = _check_or_project(fld)
        return fld

    # -- basic queries -----------------------------------------------------

    @property
    def is_vector(self) -> bool:
        return self.ncomp == self.dim

    def coefficient(self, k: Sequence[int]) -> np.ndarray:
        idx = tuple(int(c) + self.max_mode for c in k)
        return self.coeffs[idx]

    def modes(self) -> Iterator[tuple[tuple, np.ndarray]]:
        """Yield (k, coefficient) over nonzero stored modes."""
        nz = np.nonzero(np.any(self.coeffs != 0, axis=-1))
        for idx in zip(*nz):
            k = tuple(int(i) - self.max_mode for i in idx)
            yield k, self.coeffs[idx]

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(
            self.dim,
            self.ncomp,
            self.max_mode,
            self.coeffs + other.coeffs,
            self.div_free and other.div_free,
        )

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(
            self.dim,
            self.ncomp,
            self.max_mode,
            self.coeffs - other.coeffs,
            self.div_free and other.div_free,
        )

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(
            self.dim, self.ncomp, self.max_mode, self.coeffs * scalar, self.div_free
        )

    __rmul__ = __mul__

    def _check_compatible(self, other: "SpectralField") -> None:
        if (self.dim, self.ncomp, self.max_mode) != (
            other.dim,
            other.ncomp,
            other.max_mode,
        ):
            raise ValueError("fields live on different lattices")

    def with_max_mode(self, max_mode: int) -> "SpectralField":
        """Embed into a larger cube or truncate to a smaller one."""
        if max_mode == self.max_mode:
            return self
        out = np.zeros((2 * max_mode + 1,) * self.dim + (self.ncomp,), np.complex128)
        m = min(max_mode, self.max_mode)
        src = tuple([slice(self.max_mode - m, self.max_mode + m + 1)] * self.dim)
        dst = tuple([slice(max_mode - m, max_mode + m + 1)] * self.dim)
        out[dst] = self.coeffs[src]
        return SpectralField(self.dim, self.ncomp, max_mode, out, self.div_free)


def _require_vector(X: SpectralField, op: str) -> None:
    if not X.is_vector:
        raise ValueError(f"{op} requires a {X.dim}-component vector field, got m={X.ncomp}")


def _check_or_project(X: SpectralField) -> SpectralField:
    """Enforce the divergence-free flag: repair tiny violations, reject large ones."""
    ks = _k_grid(X.dim, X.max_mode).astype(np.float64)
    kdot = np.einsum("...i,...i->...", ks, X.coeffs)
    scale = np.sqrt(np.sum(np.abs(X.coeffs) ** 2, axis=-1)) * np.sqrt(
        _k_norm_sq_safe(X.dim, X.max_mode)
    )
    bad = np.abs(kdot) > DIV_FREE_TOL * np.maximum(scale, 1e-300)
    if np.any(bad & (scale > 0)):
        worst = float(np.max(np.abs(kdot) / np.maximum(scale, 1e-300)))
        raise ValueError(
            f"field flagged divergence-free violates k.X_k = 0 (relative residual {worst:.3e})"
        )
    proj = helmholtz_project(replace(X, div_free=False))
    return replace(proj, div_free=True)


# -- projections -----------------------------------------------------------


def helmholtz_project(X: SpectralField) -> SpectralField:
    """Leray projection onto divergence-free fields: X_k -> (I - k k^T/|k|^2) X_k."""
    _require_vector(X, "helmholtz_project")
    ks = _k_grid(X.dim, X.max_mode).astype(np.float64)
    k2 = _k_norm_sq_safe(X.dim, X.max_mode)
    kdot = np.einsum("...i,...i->...", ks, X.coeffs)
    out = X.coeffs - ks * (kdot / k2)[..., None]
    return SpectralField(X.dim, X.ncomp, X.max_mode, out, div_free=True)


def helmholtz_complement(X: SpectralField) -> SpectralField:
    """Gradient part of X: X_k -> (k . X_k / |k|^2) k."""
    _require_vector(X, "helmholtz_complement")
    ks = _k_grid(X.dim, X.max_mode).astype(np.float64)
    k2 = _k_norm_sq_safe(X.dim, X.max_mode)
    kdot = np.einsum("...i,...i->...", ks, X.coeffs)
    out = ks * (kdot / k2)[..., None]
    return SpectralField(X.dim, X.ncomp, X.max_mode, out, div_free=False)


# -- norms and multipliers ---------------------------------------------------


def sobolev_norm(X: SpectralField, s: float) -> float:
    """(sum_k |k|^(2s) |X_k|^2)^(1/2); s may be negative, s=0 is L2."""
    if not np.isfinite(s):
        raise ValueError("Sobolev index must be finite")
    k2 = _k_norm_sq_safe(X.dim, X.max_mode)
    dens = np.sum(np.abs(X.coeffs) ** 2, axis=-1)
    return float(np.sqrt(np.sum(k2**s * dens)))


def l2_inner(X: SpectralField, Y: SpectralField) -> float:
    """L2 inner product of two real fields, sum_k X_k . conj(Y_k)."""
    X._check_compatible(Y)
    val = np.sum(X.coeffs * np.conj(Y.coeffs))
    return float(np.real(val))


def laplacian(X: SpectralField) -> SpectralField:
    """Multiply mode k by -4 pi^2 |k|^2."""
    k2 = _k_norm_sq(X.dim, X.max_mode)
    out = X.coeffs * (-4.0 * np.pi**2 * k2)[..., None]
    return SpectralField(X.dim, X.ncomp, X.max_mode, out, X.div_free)


def heat_semigroup(X: SpectralField, t: float, delta: float) -> SpectralField:
    """exp(t*delta*Lap): multiply mode k by exp(-4 pi^2 delta |k|^2 t)."""
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")
    if delta <= 0:
        raise ValueError(f"diffusivity must be positive, got {delta}")
    if t == 0:
        return X
    k2 = _k_norm_sq(X.dim, X.max_mode)
    out = X.coeffs * np.exp(-4.0 * np.pi**2 * delta * k2 * t)[..., None]
    return SpectralField(X.dim, X.ncomp, X.max_mode, out, X.div_free)


# -- vorticity / velocity ----------------------------------------------------


def curl(U: SpectralField) -> SpectralField:
    """curl of a velocity field: scalar grad-perp dot in 2D, the usual curl in 3D."""
    _require_vector(U, "curl")
    ks = _k_grid(U.dim, U.max_mode).astype(np.float64)
    tp = 2j * np.pi
    if U.dim == 2:
        # xi = d1 u2 - d2 u1
        out = (tp * ks[..., 0] * U.coeffs[..., 1] - tp * ks[..., 1] * U.coeffs[..., 0])[
            ..., None
        ]
        return SpectralField(2, 1, U.max_mode, out)
    out = tp * np.cross(ks, U.coeffs)
    return SpectralField(3, 3, U.max_mode, out, div_free=True)


def biot_savart(xi: SpectralField) -> SpectralField:
    """Velocity u with curl(u) = xi (3D) or grad-perp-dot(u) = xi (2D).

    Per mode, ``u_k = 2*pi*i k^perp xi_k / (-4 pi^2 |k|^2)`` in 2D and
    ``u_k = 2*pi*i (k x xi_k) / (4 pi^2 |k|^2)`` in 3D; the output is
    divergence-free and one derivative smoother than the input.
    """
    ks = _k_grid(xi.dim, xi.max_mode).astype(np.float64)
    k2 = _k_norm_sq_safe(xi.dim, xi.max_mode)
    if xi.dim == 2:
        if xi.ncomp != 1:
            raise ValueError("2D biot_savart expects a scalar vorticity")
        kperp = np.stack([-ks[..., 1], ks[..., 0]], axis=-1)
        out = 2j * np.pi * kperp * (xi.coeffs[..., 0] / (-4.0 * np.pi**2 * k2))[..., None]
    else:
        _require_vector(xi, "biot_savart")
        if not xi.div_free:
            checked = _check_or_project(xi)
            xi = checked
        out = 2j * np.pi * np.cross(ks, xi.coeffs) / (4.0 * np.pi**2 * k2)[..., None]
    return SpectralField(xi.dim, xi.dim, xi.max_mode, out, div_free=True)


def divergence_residual(X: SpectralField) -> float:
    """max_k |k . X_k| / (|k| |X_k|), the relative divergence-free defect."""
    _require_vector(X, "divergence_residual")
    ks = _k_grid(X.dim, X.max_mode).astype(np.float64)
    kdot = np.abs(np.einsum("...i,...i->...", ks, X.coeffs))
    scale = np.sqrt(np.sum(np.abs(X.coeffs) ** 2, axis=-1)) * np.sqrt(
        _k_norm_sq_safe(X.dim, X.max_mode)
    )
    mask = scale > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(kdot[mask] / scale[mask]))


# -- random fields -----------------------------------------------------------


def random_field(
    rng: np.random.Generator,
    dim: int,
    ncomp: int,
    max_mode: int,
    decay: float = 0.0,
    support_mode: int | None = None,
) -> SpectralField:
    """Random reality-constrained field with |X_k| ~ |k|^-decay.

    ``support_mode`` restricts the support to the cube |k_j| <= support_mode.
    """
    m = max_mode
    shape = (2 * m + 1,) * dim + (ncomp,)
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    k2 = _k_norm_sq_safe(dim, m)
    raw *= (k2 ** (-decay / 2.0))[..., None]
    if support_mode is not None:
        mask = np.zeros((2 * m + 1,) * dim, dtype=bool)
        sl = tuple([slice(m - support_mode, m + support_mode + 1)] * dim)
        mask[sl] = True
        raw[~mask] = 0.0
    raw[(m,) * dim] = 0.0
    sym = 0.5 * (raw + np.conj(_mirror(raw, dim)))
    return SpectralField(dim, ncomp, m, sym)


def random_divergence_free(
    rng: np.random.Generator,
    dim: int,
    max_mode: int,
    decay: float = 0.0,
    support_mode: int | None = None,
    h1_norm: float | None = None,
) -> SpectralField:
    """Random divergence-free vector field, optionally normalized in H^1."""
    X = random_field(rng, dim, dim, max_mode, decay, support_mode)
    V = helmholtz_project(X)
    if h1_norm is not None:
        cur = sobolev_norm(V, 1.0)
        if cur == 0.0:
            raise ValueError("random field degenerated to zero")
        V = V * (h1_norm / cur)
        V = replace(V, div_free=True)
    return V
