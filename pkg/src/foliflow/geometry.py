"""Foliated model geometries reduced to transverse quotient coordinates.

Two model families are supported:

* ``PERIODIC_TORUS`` -- a linear foliation of a torus with rational slope;
  the quotient is the flat torus [0,P_1) x ... x [0,P_n) and all fields are
  sampled on a periodic grid with spectral differentiation.
* ``AXISYMMETRIC_SPHERE`` -- a Hopf-type circle foliation with S^1-invariant
  transverse data; the quotient reduces to a latitude band of S^2 sampled on
  a 1-D cell-centred grid with fourth-order finite differences and parity
  ghosts at the poles.

Basic (leafwise constant) sections are exactly functions of the quotient
coordinates, so holonomy invariance of every field holds by construction.
The leafwise volume form enters only through the constant total leaf volume
``leaf_volume``, which weights all integrals.

Index conventions for component arrays (trailing axes after the grid axes):

* metric ``comps[..., i, j]`` = g_ij,
* connection ``gamma[..., k, i, j]`` = Gamma^k_ij,
* curvature ``riemann[..., m, i, k, l]`` = coefficient of d/dy^m in
  R(d/dy^i, d/dy^k) d/dy^l for the convention
  R(X,Y) = nabla_X nabla_Y - nabla_Y nabla_X - nabla_[X,Y].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import (InvalidGrid, ModelMismatch, SingularMetric,
                     UnsupportedCombination)
from .numerics import EVEN, ODD, LatitudeGrid, SpectralPlan, _is_power_of_two

SINGULAR_EIG_FLOOR = 1e-10


class GeometryKind(str, Enum):
    PERIODIC_TORUS = "periodic_torus"
    AXISYMMETRIC_SPHERE = "axisymmetric_sphere"


@dataclass(frozen=True)
class TorusGridSpec:
    """Per-axis node counts and period lengths of the quotient torus."""

    nodes: tuple[int, ...]
    periods: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))


@dataclass(frozen=True)
class SphereGridSpec:
    """Latitude node count and pole-exclusion margin (radians)."""

    latitude_nodes: int
    margin: float = 1e-3


@dataclass(frozen=True)
class FoliationModel:
    """Discrete model of a foliated manifold in transverse quotient coordinates."""

    kind: GeometryKind
    leaf_dim: int
    codim: int
    grid: TorusGridSpec | SphereGridSpec
    leaf_volume: float
    plan: Optional[SpectralPlan] = field(default=None, compare=False, repr=False)
    lat: Optional[LatitudeGrid] = field(default=None, compare=False, repr=False)

    # -- structure -----------------------------------------------------------

    @property
    def grid_shape(self) -> tuple[int, ...]:
        if self.kind is GeometryKind.PERIODIC_TORUS:
            return self.grid.nodes
        return (self.grid.latitude_nodes,)

    @property
    def grid_ndim(self) -> int:
        return len(self.grid_shape)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def min_spacing(self) -> float:
        if self.kind is GeometryKind.PERIODIC_TORUS:
            return min(self.plan.spacings)
        return self.lat.spacing

    def coordinates(self) -> list[np.ndarray]:
        """Quotient coordinates per transverse axis, grid-shaped."""
        if self.kind is GeometryKind.PERIODIC_TORUS:
            return self.plan.coordinates()
        return [self.lat.theta]

    # -- differentiation ------------------------------------------------------

    def partial(self, values: np.ndarray, axis: int, order: int = 1,
                parity: int = EVEN) -> np.ndarray:
        """Partial derivative of a single grid field along a transverse axis.

        On the sphere model only axis 0 (latitude) acts; axis 1 derivatives of
        axisymmetric fields vanish identically.  `parity` is the reflection
        sign of the field across the poles and is ignored on the torus.
        """
        if self.kind is GeometryKind.PERIODIC_TORUS:
            return self.plan.deriv(values, axis, order)
        if axis == 0:
            return self.lat.deriv(values, order, parity)
        return np.zeros_like(values)

    def tensor_gradient(self, comps: np.ndarray, rank: int) -> np.ndarray:
        """First partials of all components; new leading axis is the direction."""
        if self.kind is GeometryKind.PERIODIC_TORUS:
            return self.plan.gradient(comps)
        out = np.zeros((self.codim,) + comps.shape, dtype=comps.dtype)
        for idx in np.ndindex(comps.shape[1:]) if rank else [()]:
            sl = (slice(None),) + idx
            out[(0,) + sl] = self.lat.deriv(comps[sl], 1, _sphere_parity(idx))
        return out

    def tensor_hessian(self, comps: np.ndarray, rank: int) -> np.ndarray:
        """Second partials of all components; two leading direction axes."""
        if self.kind is GeometryKind.PERIODIC_TORUS:
            return self.plan.hessian(comps)
        out = np.zeros((self.codim, self.codim) + comps.shape, dtype=comps.dtype)
        for idx in np.ndindex(comps.shape[1:]) if rank else [()]:
            sl = (slice(None),) + idx
            out[(0, 0) + sl] = self.lat.deriv(comps[sl], 2, _sphere_parity(idx))
        return out

    # -- quadrature ------------------------------------------------------------

    def quadrature(self, values: np.ndarray) -> float:
        """Integral over the quotient in coordinate measure (no metric factor).

        Trapezoidal rule on the periodic torus (spectrally exact for smooth
        integrands); midpoint rule times the 2*pi azimuthal factor on the
        sphere band.
        """
        if self.kind is GeometryKind.PERIODIC_TORUS:
            cell = float(np.prod(self.plan.spacings))
            return float(np.sum(values) * cell)
        return 2.0 * np.pi * self.lat.quadrature(values)


def _sphere_parity(idx: tuple[int, ...]) -> int:
    """Reflection sign across the poles: each latitude index contributes -1."""
    return EVEN if sum(1 for i in idx if i == 0) % 2 == 0 else ODD


def build_model(kind: GeometryKind, grid_spec, leaf_volume: float,
                leaf_dim: int = 1) -> FoliationModel:
    """Construct and validate a foliation model."""
    if leaf_dim < 1:
        raise InvalidGrid("leaf dimension must be >= 1")
    if not leaf_volume > 0:
        raise InvalidGrid("leaf volume must be positive")

    if kind is GeometryKind.PERIODIC_TORUS:
        if not isinstance(grid_spec, TorusGridSpec):
            raise InvalidGrid("torus model requires a TorusGridSpec")
        codim = len(grid_spec.nodes)
        if codim not in (1, 2, 3, 4):
            raise UnsupportedCombination(f"torus codimension {codim} not in 1..4")
        if len(grid_spec.periods) != codim:
            raise InvalidGrid("periods and nodes must have equal length")
        for n in grid_spec.nodes:
            if n < 8 or not _is_power_of_two(n):
                raise InvalidGrid(f"torus node count {n} must be a power of two >= 8")
        for p in grid_spec.periods:
            if not p > 0:
                raise InvalidGrid("periods must be positive")
        plan = SpectralPlan(grid_spec.nodes, grid_spec.periods)
        return FoliationModel(kind, leaf_dim, codim, grid_spec, float(leaf_volume),
                              plan=plan)

    if kind is GeometryKind.AXISYMMETRIC_SPHERE:
        if not isinstance(grid_spec, SphereGridSpec):
            raise InvalidGrid("sphere model requires a SphereGridSpec")
        n = grid_spec.latitude_nodes
        if n < 8:
            raise InvalidGrid(f"latitude node count {n} must be >= 8")
        if not 0 < grid_spec.margin:
            raise InvalidGrid("pole-exclusion margin must be positive")
        if np.pi / (2 * n) < grid_spec.margin:
            raise InvalidGrid(
                f"cell-centred grid with {n} nodes enters the pole margin "
                f"{grid_spec.margin}; reduce the margin or the node count")
        lat = LatitudeGrid(n, grid_spec.margin)
        return FoliationModel(kind, leaf_dim, 2, grid_spec, float(leaf_volume),
                              lat=lat)

    raise UnsupportedCombination(f"unknown geometry kind {kind!r}")


# ---------------------------------------------------------------------------
# Fields on the transverse grid
# ---------------------------------------------------------------------------

def _require_same_model(a, b) -> None:
    if a.model != b.model:
        raise ModelMismatch("fields live on different foliation models")


@dataclass(frozen=True)
class BasicScalarField:
    """Basic (leafwise constant) scalar function sampled on the quotient grid."""

    model: FoliationModel
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        object.__setattr__(self, "values", v)
        if v.shape != self.model.grid_shape:
            raise ModelMismatch(
                f"scalar field shape {v.shape} does not match grid {self.model.grid_shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar field contains non-finite entries")


@dataclass(frozen=True)
class BasicVectorField:
    """Basic vector field, components against the coordinate frame d/dy^k."""

    model: FoliationModel
    comps: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.comps, dtype=float)
        object.__setattr__(self, "comps", v)
        n = self.model.codim
        if v.shape != self.model.grid_shape + (n,):
            raise ModelMismatch(f"vector field shape {v.shape} invalid")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector field contains non-finite entries")


@dataclass(frozen=True)
class TransverseMetricField:
    """Holonomy-invariant metric on the normal bundle, sampled on the grid.

    Symmetry is exact (validated bitwise); positive definiteness is checked
    at construction unless `check_positive=False`.
    """

    model: FoliationModel
    comps: np.ndarray
    check_positive: bool = True

    def __post_init__(self):
        v = np.asarray(self.comps, dtype=float)
        object.__setattr__(self, "comps", v)
        n = self.model.codim
        if v.shape != self.model.grid_shape + (n, n):
            raise ModelMismatch(f"metric field shape {v.shape} invalid")
        if not np.array_equal(v, np.swapaxes(v, -1, -2)):
            raise ValueError("metric components are not exactly symmetric")
        if not np.all(np.isfinite(v)):
            raise ValueError("metric field contains non-finite entries")
        if self.check_positive and self.min_eigenvalue() <= 0.0:
            raise SingularMetric("metric is not positive definite")

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.comps).min())

    def max_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.comps).max())

    def inverse(self) -> np.ndarray:
        if self.min_eigenvalue() < SINGULAR_EIG_FLOOR:
            raise SingularMetric(
                f"metric eigenvalue below {SINGULAR_EIG_FLOOR}; refusing to invert")
        return np.linalg.inv(self.comps)

    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.comps))


@dataclass(frozen=True)
class ConnectionField:
    """Christoffel coefficients gamma[..., k, i, j] = Gamma^k_ij, symmetric in (i, j)."""

    model: FoliationModel
    gamma: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", v)
        n = self.model.codim
        if v.shape != self.model.grid_shape + (n, n, n):
            raise ModelMismatch(f"connection field shape {v.shape} invalid")
        if not np.array_equal(v, np.swapaxes(v, -1, -2)):
            raise ValueError("connection is not exactly torsion-free")


@dataclass(frozen=True)
class CurvatureField:
    """Transverse curvature package: full tensor, Ricci contraction, scalar."""

    model: FoliationModel
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray


# ---------------------------------------------------------------------------
# Differential-geometric operations
# ---------------------------------------------------------------------------

def christoffel(g: TransverseMetricField) -> ConnectionField:
    """Transverse Levi-Civita connection of g.

    Gamma^k_ij = (1/2) g^{kl} (d_i g_jl + d_j g_il - d_l g_ij); the inverse
    metric contraction makes the connection metric-compatible and the
    symmetrised assembly makes torsion-freeness exact.
    """
    ginv = g.inverse()
    dg = g.model.tensor_gradient(g.comps, 2)
    gamma = _christoffel_from_partials(ginv, dg)
    return ConnectionField(g.model, gamma)


def _christoffel_from_partials(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    # t[..., l, i, j] = d_i g_jl + d_j g_il - d_l g_ij  (exactly symmetric in i, j)
    d = np.moveaxis(dg, 0, -3)  # [..., l, i, j] = d_l g_ij
    t = (np.einsum("...ijl->...lij", d)
         + np.einsum("...jil->...lij", d)
         - d)
    return 0.5 * np.einsum("...kl,...lij->...kij", ginv, t)


def curvature(g: TransverseMetricField) -> CurvatureField:
    """Transverse curvature, Ricci tensor and scalar curvature of g.

    The derivative of the connection is assembled analytically from first and
    second partials of g (never by differencing the discrete Gamma field), so
    the finite-difference error on the sphere model stays second order at the
    near-pole nodes and fourth order inside.
    """
    ginv = g.inverse()
    model = g.model
    dg = model.tensor_gradient(g.comps, 2)        # [a, ..., i, j]
    ddg = model.tensor_hessian(g.comps, 2)        # [a, b, ..., i, j]

    gamma = _christoffel_from_partials(ginv, dg)

    # d_a g^{kl} = -g^{kr} (d_a g_rs) g^{sl}
    dginv = -np.einsum("...kr,a...rs,...sl->a...kl", ginv, dg, ginv)

    # d_a Gamma^k_ij, assembled by the product rule.
    d = np.moveaxis(dg, 0, -3)
    t = (np.einsum("...ijl->...lij", d)
         + np.einsum("...jil->...lij", d)
         - d)
    dd = np.moveaxis(ddg, 1, -3)  # [a, ..., b, i, j] = d_a d_b g_ij
    dt = (np.einsum("a...ijl->a...lij", dd)
          + np.einsum("a...jil->a...lij", dd)
          - dd)
    dgamma = (0.5 * np.einsum("a...kl,...lij->a...kij", dginv, t)
              + 0.5 * np.einsum("...kl,a...lij->a...kij", ginv, dt))

    # R^m_ikl = d_i Gamma^m_kl - d_k Gamma^m_il
    #           + Gamma^m_ir Gamma^r_kl - Gamma^m_kr Gamma^r_il
    dgm = np.moveaxis(dgamma, 0, -4)                        # [..., a, m, i, j] = d_a Gamma^m_ij
    riem = (np.einsum("...imkl->...mikl", dgm)
            - np.einsum("...kmil->...mikl", dgm)
            + np.einsum("...mir,...rkl->...mikl", gamma, gamma)
            - np.einsum("...mkr,...ril->...mikl", gamma, gamma))

    # Rc_ij = g^{kl} g_mj R^m_ikl  (frame sum replaced by the inverse metric)
    ricci = np.einsum("...kl,...mikl,...mj->...ij", ginv, riem, g.comps)
    ricci = 0.5 * (ricci + np.swapaxes(ricci, -1, -2))
    scalar = np.einsum("...ij,...ij->...", ginv, ricci)
    return CurvatureField(model, riem, ricci, scalar)


def basic_laplacian(g: TransverseMetricField, f: BasicScalarField) -> BasicScalarField:
    """Basic Laplacian in the analyst convention (negative spectrum).

    Delta_B f = g^{ij} (d_i d_j f - Gamma^k_ij d_k f); with this sign
    d/dt - Delta_B is the transverse heat operator.
    """
    _require_same_model(g, f)
    ginv = g.inverse()
    model = g.model
    df = model.tensor_gradient(f.values, 0)
    ddf = model.tensor_hessian(f.values, 0)
    gamma = christoffel(g).gamma
    hess = np.moveaxis(np.moveaxis(ddf, 0, -1), 0, -1)  # [..., j, i] -> fine by symmetry
    lap = (np.einsum("...ij,...ij->...", ginv, hess)
           - np.einsum("...ij,...kij,k...->...", ginv, gamma, df))
    return BasicScalarField(model, lap)


def chi_integral(g: TransverseMetricField, f: BasicScalarField | np.ndarray) -> float:
    """Leafwise-weighted integral  V_L * int f sqrt(det g) dy  over the quotient.

    This is the pairing that makes the basic Laplacian self-adjoint; the
    leafwise volume form enters only through the constant total leaf volume.
    """
    values = f.values if isinstance(f, BasicScalarField) else np.asarray(f)
    if isinstance(f, BasicScalarField):
        _require_same_model(g, f)
    return g.model.leaf_volume * g.model.quadrature(values * g.sqrt_det())


@dataclass(frozen=True)
class TensorNorms:
    """Pointwise squared norm of a tensor plus its sup and L^2(chi) aggregates."""

    squared: np.ndarray
    sup: float
    l2_squared: float


def tensor_norm_squared(g: TransverseMetricField, tensor: np.ndarray,
                        n_up: int, n_down: int) -> np.ndarray:
    """Pointwise |T|^2_g, contracting upper indices with g and lower with g^-1."""
    ginv = g.inverse()
    rank = n_up + n_down
    if tensor.shape != g.model.grid_shape + (g.model.codim,) * rank:
        raise ModelMismatch("tensor shape does not match model/rank")
    a = [chr(ord("a") + i) for i in range(rank)]
    b = [chr(ord("a") + rank + i) for i in range(rank)]
    subs = ["..." + "".join(a), "..." + "".join(b)]
    ops = [tensor, tensor]
    for i in range(rank):
        subs.append(f"...{a[i]}{b[i]}")
        ops.append(g.comps if i < n_up else ginv)
    expr = ",".join(subs) + "->..."
    return np.einsum(expr, *ops, optimize=True)


def tensor_norms(g: TransverseMetricField,
                 reference_g: TransverseMetricField | None = None,
                 tensor: np.ndarray | None = None,
                 n_up: int = 0, n_down: int = 2) -> TensorNorms:
    """Norms measured with g; defaults to the metric deviation h = g - reference."""
    if tensor is None:
        if reference_g is None:
            raise ModelMismatch("need either an explicit tensor or a reference metric")
        _require_same_model(g, reference_g)
        tensor = g.comps - reference_g.comps
        n_up, n_down = 0, 2
    sq = tensor_norm_squared(g, tensor, n_up, n_down)
    return TensorNorms(squared=sq,
                       sup=float(np.sqrt(max(sq.max(), 0.0))),
                       l2_squared=chi_integral(g, sq))


# ---------------------------------------------------------------------------
# Convenience constructors
# ---------------------------------------------------------------------------

def flat_metric(model: FoliationModel, scale: float = 1.0) -> TransverseMetricField:
    """Constant multiple of the identity metric."""
    n = model.codim
    comps = np.zeros(model.grid_shape + (n, n))
    for i in range(n):
        comps[..., i, i] = scale
    return TransverseMetricField(model, comps)


def round_sphere_metric(model: FoliationModel, radius: float = 1.0) -> TransverseMetricField:
    """Round metric  r^2 (dtheta^2 + sin^2 theta dphi^2)  on the latitude band."""
    if model.kind is not GeometryKind.AXISYMMETRIC_SPHERE:
        raise UnsupportedCombination("round metric requires the sphere model")
    theta = model.lat.theta
    comps = np.zeros(model.grid_shape + (2, 2))
    comps[..., 0, 0] = radius ** 2
    comps[..., 1, 1] = (radius * np.sin(theta)) ** 2
    return TransverseMetricField(model, comps)


def conformal_metric(model: FoliationModel, u: np.ndarray) -> TransverseMetricField:
    """Conformally flat metric e^u * delta on a torus model."""
    n = model.codim
    comps = np.zeros(model.grid_shape + (n, n))
    for i in range(n):
        comps[..., i, i] = np.exp(u)
    return TransverseMetricField(model, comps)
