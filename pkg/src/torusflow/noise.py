"""Divergence-free transport noise on the torus.

The noise is built from ``sigma_{k,i}(x) = a_{k,i} e_k(x)`` where, for every
nonzero wavevector ``k``, the unit vectors ``a_{k,1}, ..., a_{k,d-1}`` form an
orthonormal basis of the plane ``k^perp`` and satisfy ``a_{k,i} = a_{-k,i}``.
Coefficient families ``theta`` are symmetric across lattice shells and carry
unit l2 norm; the annulus family concentrates on ``N <= |k| <= 2N`` with a
power-law profile.  Complex Brownian drivers pair ``W^{-k,i}`` with the
conjugate of ``W^{k,i}`` and have quadratic variation ``2t`` per pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .fields import SpectralField, is_canonical, l2_inner, mode_norm_sq

__all__ = [
    "basis_vectors",
    "NoiseBasis",
    "build_basis",
    "ThetaSequence",
    "theta_annulus",
    "theta_from_weights",
    "BrownianDriver",
    "IncrementTable",
    "covariance_at_origin",
    "noise_dimension_constant",
    "annulus_wavevectors",
]


def noise_dimension_constant(dim: int) -> float:
    """Normalizing constant d/(d-1) making the covariance at x equal 2*kappa*I."""
    return dim / (dim - 1.0)


# -- deterministic basis of k-perp -------------------------------------------


def _canonical_reps(kvecs: np.ndarray) -> np.ndarray:
    """Flip each wavevector to its canonical representative (first nonzero > 0)."""
    k = np.asarray(kvecs, dtype=np.float64)
    lead = np.zeros(k.shape[0])
    for j in range(k.shape[1]):
        lead = np.where(lead == 0, k[:, j], lead)
    sign = np.where(lead < 0, -1.0, 1.0)
    return k * sign[:, None]


def basis_vectors(dim: int, kvecs: np.ndarray) -> np.ndarray:
    """a_{k,i} for an (n, d) array of wavevectors; result has shape (n, d-1, d).

    2D: ``a_k = k_perp/|k|`` on the canonical half-lattice and its negative on
    the mirror, which is the same as ``a_k = c_perp/|c|`` for the canonical
    representative ``c`` of ``k``.  3D: with ``c`` the canonical
    representative, ``r = e3`` (or ``e1`` when ``c`` is parallel to ``e3``),
    ``a_{k,1} = c x r / |c x r|`` and ``a_{k,2} = c x a_{k,1} / |c|``.  Both
    constructions are even in k by design.
    """
    k = np.asarray(kvecs, dtype=np.float64)
    if k.ndim == 1:
        k = k[None, :]
    if np.any(np.all(k == 0, axis=1)):
        raise ValueError("zero wavevector has no transverse basis")
    c = _canonical_reps(k)
    norm = np.linalg.norm(c, axis=1)
    if dim == 2:
        a = np.stack([-c[:, 1], c[:, 0]], axis=1) / norm[:, None]
        return a[:, None, :]
    if dim != 3:
        raise ValueError("basis_vectors supports d in {2, 3}")
    r = np.zeros_like(c)
    parallel = (c[:, 0] == 0) & (c[:, 1] == 0)
    r[:, 2] = np.where(parallel, 0.0, 1.0)
    r[:, 0] = np.where(parallel, 1.0, 0.0)
    a1 = np.cross(c, r)
    a1 /= np.linalg.norm(a1, axis=1)[:, None]
    a2 = np.cross(c, a1) / norm[:, None]
    return np.stack([a1, a2], axis=1)


@dataclass(frozen=True)
class NoiseBasis:
    """Tabulated a_{k,i} over the cube |k_j| <= max_mode."""

    dim: int
    max_mode: int
    vectors: Mapping[tuple, np.ndarray] = field(repr=False)

    def vector(self, k, i: int) -> np.ndarray:
        """a_{k,i}; i runs from 1 to d-1."""
        return self.vectors[tuple(int(c) for c in k)][i - 1]

    def to_json(self) -> str:
        table = {
            ",".join(map(str, k)): [list(map(float, a)) for a in arrs]
            for k, arrs in sorted(self.vectors.items())
        }
        return json.dumps({"dim": self.dim, "max_mode": self.max_mode, "vectors": table})


def build_basis(dim: int, max_mode: int) -> NoiseBasis:
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if max_mode < 1:
        raise ValueError("max_mode must be >= 1")
    rng = range(-max_mode, max_mode + 1)
    kvecs = [
        k
        for k in np.stack(np.meshgrid(*([list(rng)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        if np.any(k)
    ]
    karr = np.asarray(kvecs)
    vecs = basis_vectors(dim, karr)
    table = {tuple(int(c) for c in k): vecs[n] for n, k in enumerate(karr)}
    return NoiseBasis(dim, max_mode, table)


# -- theta families -----------------------------------------------------------


def annulus_wavevectors(dim: int, scale: int) -> np.ndarray:
    """All lattice points with N <= |k| <= 2N, as an (n, d) int array."""
    n = int(scale)
    rng = np.arange(-2 * n, 2 * n + 1)
    mesh = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    k2 = np.sum(mesh * mesh, axis=1)
    keep = (k2 >= n * n) & (k2 <= 4 * n * n)
    return mesh[keep].astype(np.int64)


@dataclass(frozen=True)
class AnnulusSpec:
    scale: int
    gamma: float
    lambda_sq: float  # sum over the annulus of |k|^(-2 gamma)


@dataclass(frozen=True)
class ThetaSequence:
    """Symmetric, unit-norm noise coefficients with finite support."""

    dim: int
    kvecs: np.ndarray = field(repr=False)  # (n, d) int, full support
    weights: np.ndarray = field(repr=False)  # (n,) float, theta_k
    annulus: AnnulusSpec | None = None

    def __post_init__(self) -> None:
        k2 = np.sum(self.kvecs.astype(np.int64) ** 2, axis=1)
        if np.any(k2 == 0):
            raise ValueError("theta may not charge the zero mode")
        if np.any(self.weights < 0):
            raise ValueError("theta weights must be nonnegative")
        total = float(np.sum(self.weights**2))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"theta must have unit l2 norm, got sum theta^2 = {total!r}")
        # shell symmetry: theta_k constant on each |k|^2 level set
        order = np.argsort(k2, kind="stable")
        k2s, ws = k2[order], self.weights[order]
        boundaries = np.flatnonzero(np.diff(k2s)) + 1
        for shell in np.split(ws, boundaries):
            if shell.size and float(np.max(shell) - np.min(shell)) > 1e-14:
                raise ValueError("theta must be symmetric: equal weight on each shell")

    @property
    def support_size(self) -> int:
        return int(self.kvecs.shape[0])

    def sup_weight(self) -> float:
        return float(np.max(self.weights))

    def weight_of(self, k) -> float:
        k = np.asarray(k, dtype=np.int64)
        hit = np.all(self.kvecs == k[None, :], axis=1)
        idx = np.flatnonzero(hit)
        return float(self.weights[idx[0]]) if idx.size else 0.0

    def canonical_mask(self) -> np.ndarray:
        lead = np.zeros(self.kvecs.shape[0], dtype=np.int64)
        for j in range(self.dim):
            lead = np.where(lead == 0, self.kvecs[:, j], lead)
        return lead > 0

    def to_json(self) -> str:
        recs = [
            [list(map(int, k)), float(w)]
            for k, w in zip(self.kvecs.tolist(), self.weights.tolist())
        ]
        meta = None
        if self.annulus is not None:
            meta = {
                "scale": self.annulus.scale,
                "gamma": self.annulus.gamma,
                "lambda_sq": self.annulus.lambda_sq,
            }
        return json.dumps({"dim": self.dim, "annulus": meta, "weights": recs})


def theta_annulus(scale: int, gamma: float, dim: int) -> ThetaSequence:
    """theta^N: support N <= |k| <= 2N with weights |k|^-gamma / Lambda_N."""
    if scale < 1:
        raise ValueError("annulus scale must be >= 1")
    if gamma <= 0:
        raise ValueError("decay exponent gamma must be positive")
    kvecs = annulus_wavevectors(dim, scale)
    k2 = np.sum(kvecs.astype(np.float64) ** 2, axis=1)
    raw = k2 ** (-gamma / 2.0)
    lam_sq = float(np.sum(raw**2))
    weights = raw / np.sqrt(lam_sq)
    # remove the only rounding sin: renormalize exactly
    weights /= np.sqrt(float(np.sum(weights**2)))
    return ThetaSequence(dim, kvecs, weights, AnnulusSpec(int(scale), float(gamma), lam_sq))


def theta_from_weights(dim: int, table: Mapping[tuple, float]) -> ThetaSequence:
    """Symmetric theta from per-shell weights given on arbitrary representatives.

    ``table`` maps a wavevector to the weight of its whole shell; the support
    is completed to full shells and the result is l2-normalized.
    """
    shells: dict[int, float] = {}
    for k, w in table.items():
        shells[mode_norm_sq(k)] = float(w)
    if not shells or any(s == 0 for s in shells):
        raise ValueError("weights must be given on nonzero shells")
    rad = int(np.ceil(np.sqrt(max(shells))))
    rng = np.arange(-rad, rad + 1)
    mesh = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    k2 = np.sum(mesh * mesh, axis=1)
    keep = np.isin(k2, list(shells))
    kvecs = mesh[keep].astype(np.int64)
    weights = np.array([shells[int(s)] for s in k2[keep]], dtype=np.float64)
    weights /= np.sqrt(float(np.sum(weights**2)))
    return ThetaSequence(dim, kvecs, weights)


# -- Brownian increments ------------------------------------------------------


@dataclass(frozen=True)
class IncrementTable:
    """Complex increments for canonical wavevectors; mirrors are conjugate views."""

    kvecs: np.ndarray  # (n, d) canonical half of the support
    values: np.ndarray  # (n, d-1) complex, Delta W^{k,i}
    dt: float

    def increment(self, k, i: int) -> complex:
        k = np.asarray(k, dtype=np.int64)
        hit = np.all(self.kvecs == k[None, :], axis=1)
        idx = np.flatnonzero(hit)
        if idx.size:
            return complex(self.values[idx[0], i - 1])
        hit = np.all(self.kvecs == -k[None, :], axis=1)
        idx = np.flatnonzero(hit)
        if idx.size:
            return complex(np.conj(self.values[idx[0], i - 1]))
        raise KeyError(f"{tuple(k.tolist())} not in the increment table")


class BrownianDriver:
    """Stream of complex Brownian increments with the conjugation pairing.

    One driver serves one trajectory; ensembles derive independent child
    seeds from a master seed via ``spawn_seeds``.  Only canonical-half
    increments are ever drawn, so the constraint
    ``Delta W^{-k,i} = conj(Delta W^{k,i})`` cannot be violated.
    """

    def __init__(self, dim: int, seed) -> None:
        self.dim = dim
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    @staticmethod
    def spawn_seeds(master_seed, count: int) -> list[np.random.SeedSequence]:
        return np.random.SeedSequence(master_seed).spawn(count)

    def state(self) -> dict:
        return self._rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._rng.bit_generator.state = state

    def sample_for(self, kvecs: np.ndarray, dt: float) -> IncrementTable:
        """Increments for an explicit canonical (n, d) wavevector array."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        n = kvecs.shape[0]
        flat = self._rng.standard_normal(2 * n * (self.dim - 1))
        g = flat.reshape(n, self.dim - 1, 2)
        vals = (g[..., 0] + 1j * g[..., 1]) * np.sqrt(dt)
        return IncrementTable(kvecs, vals, dt)


def sample_increments(driver: BrownianDriver, dt: float, theta: ThetaSequence) -> IncrementTable:
    """One step of increments over the canonical half of theta's support.

    Each entry is ``(g1 + i g2) sqrt(dt)`` with independent standard normals,
    so ``E |Delta W|^2 = 2 dt`` and the pair (k, -k) carries conjugate values.
    """
    mask = theta.canonical_mask()
    return driver.sample_for(theta.kvecs[mask], dt)


# -- covariance ---------------------------------------------------------------


def covariance_at_origin(theta: ThetaSequence, kappa: float, dim: int | None = None) -> np.ndarray:
    """Q(x,x) = 2 C_d kappa sum_{k,i} theta_k^2 a_{k,i} (x) a_{k,i} = 2 kappa I_d."""
    d = theta.dim if dim is None else dim
    if d != theta.dim:
        raise ValueError("dimension mismatch with theta")
    total = float(np.sum(theta.weights**2))
    if abs(total - 1.0) > 1e-12:
        raise ValueError("theta must have unit l2 norm")
    avecs = basis_vectors(d, theta.kvecs)  # (n, d-1, d)
    w2 = theta.weights**2
    mat = np.einsum("n,nid,nie->de", w2, avecs, avecs)
    return 2.0 * noise_dimension_constant(d) * kappa * mat


def parseval_defect(X: SpectralField) -> float:
    """|sum_{k,i} |<X, sigma_{-k,i}>|^2 - ||X||^2| for a divergence-free X.

    The pairing picks out ``a_{k,i} . X_k``, so this checks that the
    sigma family is a complete orthonormal system of the divergence-free
    subspace up to the cube truncation.
    """
    if not X.is_vector:
        raise ValueError("parseval_defect expects a vector field")
    total = 0.0
    for k, coeff in X.modes():
        a = basis_vectors(X.dim, np.asarray(k)[None, :])[0]
        total += float(np.sum(np.abs(a @ coeff) ** 2))
    return abs(total - l2_inner(X, X))
