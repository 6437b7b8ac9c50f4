"""Transverse Ricci flow and its gauge-fixed companion.

Implements the direct flow  dg/dt = -2 Rc,  the modified strongly parabolic
flow  dg/dt = -2 Rc - L_X g  with the gauge vector field
X = g^{ij} (hatGamma - Gamma)^k_ij d/dy^k  induced by a fixed background
metric, reconstruction of direct-flow solutions by integrating X to a
foliation-preserving diffeomorphism and pulling back, and the uniqueness
energy diagnostics

    E(t) = int (|h|^2 + |A|^2 + |S|^2) chi ^ dmu,
    h = g - gbar,  A = Gamma - Gammabar,  S = R - Rbar,

whose discrete Gronwall behaviour E' <= C E is fitted per run.  Norms are
coordinate contractions with g and g^{-1} (equivalent to orthonormal-frame
sums; the frame-based oracle lives in the test suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (CFLViolation, DegenerateJacobian, InterpolationOutOfBand,
                     ModelMismatch, NonFiniteState, NonPositiveEnergy,
                     SingularMetric, StepRejected, UnsupportedCombination)
from .geometry import (BasicVectorField, ConnectionField, CurvatureField,
                       FoliationModel, GeometryKind, TransverseMetricField,
                       _christoffel_from_partials, chi_integral, christoffel,
                       curvature, tensor_norm_squared)
from .numerics import (SpectralPlan, TimeStepController, laplacian_symbol,
                       periodic_interpolate, rk4_step, semi_implicit_step)

RICCI_CSV_COLUMNS = ["t", "sup|Rc|", "min_eig", "max_eig", "E", "H", "I", "G",
                     "fitted C"]

GRONWALL_TOLERANCE = 0.05


@dataclass
class RicciFlowConfig:
    """Numerical controls for a transverse Ricci flow run."""

    scheme: str = "rk4"                    # "rk4" | "semi_implicit"
    dt_initial: float = 1e-4
    cfl_safety: float = 0.25
    t_end: float = 0.1
    normalize: bool = False
    background: Optional[TransverseMetricField] = None
    dt_min: float = 1e-9
    dt_max: float = math.inf
    sample_every: float = 0.0              # trace cadence in time; 0 = every step
    gauge_every: float = 0.0               # X-field recording cadence (modified flow)
    checkpoint_every: int = 0              # in accepted steps; 0 disables
    checkpoint_dir: Optional[str] = None
    eig_floor: float = 1e-8                # uniform-equivalence monitor
    eig_cap: float = 1e8
    dealias: bool = True

    def __post_init__(self):
        if not self.dt_initial > 0:
            raise ValueError("dt_initial must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.scheme not in ("rk4", "semi_implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def cfl_bound(g: TransverseMetricField, cfg: RicciFlowConfig) -> float:
    """Parabolic step bound  cfl_safety * dy^2 / (2 n max eig g^-1)."""
    n = g.model.codim
    max_inv = float(np.linalg.eigvalsh(g.inverse()).max())
    return cfg.cfl_safety * g.model.min_spacing ** 2 / (2.0 * n * max_inv)


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def _maybe_dealias(model: FoliationModel, arr: np.ndarray, on: bool) -> np.ndarray:
    if on and model.kind is GeometryKind.PERIODIC_TORUS:
        return model.plan.dealias(arr)
    return arr


def trf_rhs(g: TransverseMetricField, normalize: bool = False,
            dealias: bool = True) -> np.ndarray:
    """-2 Rc, optionally volume-normalised with the chi-averaged scalar curvature."""
    cur = curvature(g)
    rhs = -2.0 * cur.ricci
    if normalize:
        n = g.model.codim
        sbar = chi_integral(g, cur.scalar) / chi_integral(g, np.ones(g.model.grid_shape))
        rhs = rhs + (2.0 / n) * sbar * g.comps
    rhs = 0.5 * (rhs + np.swapaxes(rhs, -1, -2))
    return _maybe_dealias(g.model, rhs, dealias)


def deturck_field(g: TransverseMetricField,
                  background: TransverseMetricField) -> BasicVectorField:
    """Gauge vector field X^k = g^{ij} (hatGamma^k_ij - Gamma^k_ij)."""
    if g.model != background.model:
        raise ModelMismatch("metric and background live on different models")
    ginv = g.inverse()
    gamma = christoffel(g).gamma
    gamma_hat = christoffel(background).gamma
    comps = np.einsum("...ij,...kij->...k", ginv, gamma_hat - gamma)
    return BasicVectorField(g.model, comps)


def lie_derivative_metric(g: TransverseMetricField, x: BasicVectorField) -> np.ndarray:
    """(L_X g)_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k."""
    model = g.model
    dg = model.tensor_gradient(g.comps, 2)          # [k, ..., i, j]
    dx = model.tensor_gradient(x.comps, 1)          # [i, ..., k]
    dxm = np.moveaxis(dx, 0, -2)                    # [..., i, k] = d_i X^k
    out = (np.einsum("...k,k...ij->...ij", x.comps, dg)
           + np.einsum("...kj,...ik->...ij", g.comps, dxm)
           + np.einsum("...ik,...jk->...ij", g.comps, dxm))
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def modified_rhs(g: TransverseMetricField, background: TransverseMetricField,
                 dealias: bool = True) -> np.ndarray:
    """-2 Rc - L_X g; the principal part is the basic Laplacian of g."""
    x = deturck_field(g, background)
    rhs = trf_rhs(g, normalize=False, dealias=False) - lie_derivative_metric(g, x)
    rhs = 0.5 * (rhs + np.swapaxes(rhs, -1, -2))
    return _maybe_dealias(g.model, rhs, dealias)


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------

def _advance(g: TransverseMetricField, rhs_comps: Callable[[float, np.ndarray], np.ndarray],
             cfg: RicciFlowConfig, t: float, dt: float) -> TransverseMetricField:
    model = g.model
    if cfg.scheme == "rk4":
        bound = cfl_bound(g, cfg)
        if dt > bound * (1.0 + 1e-12):
            raise CFLViolation(f"dt={dt} exceeds CFL bound {bound}")
        new = rk4_step(rhs_comps, t, g.comps, dt)
    else:
        if model.kind is not GeometryKind.PERIODIC_TORUS:
            raise UnsupportedCombination("semi-implicit stepping requires a torus model")
        c0 = float(np.linalg.eigvalsh(g.inverse()).max())
        sym = laplacian_symbol(model.plan, c0)
        new = semi_implicit_step(rhs_comps, sym, model.plan, t, g.comps, dt)
    new = 0.5 * (new + np.swapaxes(new, -1, -2))
    try:
        out = TransverseMetricField(model, new)
    except SingularMetric as exc:
        raise StepRejected("positivity lost after step") from exc
    return out


def ricci_flow_step(g: TransverseMetricField, cfg: RicciFlowConfig,
                    dt: float) -> TransverseMetricField:
    """One step of dg/dt = -2 Rc (optionally normalised)."""
    def rhs(t, comps):
        gg = TransverseMetricField(g.model, comps, check_positive=False)
        return trf_rhs(gg, normalize=cfg.normalize, dealias=cfg.dealias)
    return _advance(g, rhs, cfg, 0.0, dt)


def modified_flow_step(g: TransverseMetricField, cfg: RicciFlowConfig,
                       dt: float) -> TransverseMetricField:
    """One step of the DeTurck-modified flow dg/dt = -2 Rc - L_X g."""
    background = cfg.background if cfg.background is not None else g
    def rhs(t, comps):
        gg = TransverseMetricField(g.model, comps, check_positive=False)
        return modified_rhs(gg, background, dealias=cfg.dealias)
    return _advance(g, rhs, cfg, 0.0, dt)


# ---------------------------------------------------------------------------
# Flow runner
# ---------------------------------------------------------------------------

@dataclass
class RicciFlowRun:
    """Sampled trajectory of a transverse Ricci flow run."""

    times: list[float]
    metrics: list[TransverseMetricField]
    rows: list[dict]
    x_times: list[float]
    x_fields: list[BasicVectorField]
    final: TransverseMetricField
    steps: int


def run_ricci_flow(g0: TransverseMetricField, cfg: RicciFlowConfig,
                   kind: str = "trf") -> RicciFlowRun:
    """Integrate a flow of the given kind ("trf", "modified") to cfg.t_end.

    Rejected steps (positivity loss, non-finite state) halve dt and retry;
    the uniform-equivalence monitor (eigenvalues within [eig_floor, eig_cap])
    aborts the run with StepRejected.  Diagnostics rows measure the Kotschwar
    energy package against cfg.background (default: the initial metric).
    """
    if kind not in ("trf", "modified"):
        raise ValueError(f"unknown flow kind {kind!r}")
    background = cfg.background if cfg.background is not None else g0
    reference = _geometry_package(background)

    model = g0.model
    if kind == "modified":
        def rhs(t, comps):
            gg = TransverseMetricField(model, comps, check_positive=False)
            return modified_rhs(gg, background, dealias=cfg.dealias)
    else:
        def rhs(t, comps):
            gg = TransverseMetricField(model, comps, check_positive=False)
            return trf_rhs(gg, normalize=cfg.normalize, dealias=cfg.dealias)

    control = TimeStepController(dt=cfg.dt_initial, dt_min=cfg.dt_min, dt_max=cfg.dt_max)
    g = g0
    t = 0.0
    steps = 0
    times: list[float] = []
    metrics: list[TransverseMetricField] = []
    rows: list[dict] = []
    x_times: list[float] = []
    x_fields: list[BasicVectorField] = []
    e_times: list[float] = []
    e_values: list[float] = []

    def monitor(gm: TransverseMetricField) -> None:
        lo, hi = gm.min_eigenvalue(), gm.max_eigenvalue()
        if lo < cfg.eig_floor or hi > cfg.eig_cap:
            raise StepRejected(
                f"uniform-equivalence monitor breached: eigenvalues [{lo}, {hi}]")

    def record(tt: float, gm: TransverseMetricField) -> None:
        diag = kotschwar_energy(gm, background, time=tt, gbar_package=reference)
        cur = curvature(gm)
        e_times.append(tt)
        e_values.append(diag.energy)
        fitted = float("nan")
        if len(e_values) >= 3 and min(e_values) > 0.0:
            fitted = gronwall_fit(e_times, e_values).slope
        rows.append({
            "t": tt,
            "sup|Rc|": float(np.abs(cur.ricci).max()),
            "min_eig": gm.min_eigenvalue(),
            "max_eig": gm.max_eigenvalue(),
            "E": diag.energy,
            "H": diag.h_norm_sq,
            "I": diag.a_norm_sq,
            "G": diag.s_norm_sq,
            "fitted C": fitted,
        })
        times.append(tt)
        metrics.append(gm)

    def record_gauge(tt: float, gm: TransverseMetricField) -> None:
        x_times.append(tt)
        x_fields.append(deturck_field(gm, background))

    monitor(g0)
    record(0.0, g0)
    if kind == "modified":
        record_gauge(0.0, g0)
    next_sample = cfg.sample_every
    next_gauge = cfg.gauge_every

    while t < cfg.t_end - 1e-14:
        if cfg.scheme == "rk4":
            dt = control.clamp(min(cfl_bound(g, cfg), cfg.t_end - t))
        else:
            dt = control.clamp(cfg.t_end - t)
        try:
            g_new = _advance(g, rhs, cfg, t, dt)
        except (StepRejected, NonFiniteState):
            control.on_reject()
            continue
        monitor(g_new)
        g = g_new
        t += dt
        steps += 1
        control.on_accept()

        if cfg.sample_every <= 0 or t >= next_sample - 1e-14:
            record(t, g)
            next_sample += cfg.sample_every
        if kind == "modified" and (cfg.gauge_every <= 0 or t >= next_gauge - 1e-14):
            record_gauge(t, g)
            next_gauge += cfg.gauge_every
        if cfg.checkpoint_every and steps % cfg.checkpoint_every == 0 \
                and cfg.checkpoint_dir is not None:
            from .fieldio import save_field
            save_field(f"{cfg.checkpoint_dir}/checkpoint_{steps:08d}.tfld", g)

    if times[-1] < t:
        record(t, g)
        if kind == "modified":
            record_gauge(t, g)
    return RicciFlowRun(times, metrics, rows, x_times, x_fields, g, steps)


# ---------------------------------------------------------------------------
# Gauge reconstruction
# ---------------------------------------------------------------------------

@dataclass
class DiffeoTrace:
    """Grid-sampled quotient diffeomorphisms phi_t (positions per node)."""

    model: FoliationModel
    times: list[float]
    positions: list[np.ndarray]    # each (codim,) + grid_shape

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]


def integrate_gauge(x_times: list[float], x_fields: list[BasicVectorField],
                    substeps: int = 1) -> DiffeoTrace:
    """Integrate d phi/dt = X_t(phi_t) from the identity map.

    RK4 macro steps between consecutive X samples with linear interpolation
    of X in time and Fourier-upsampled cubic interpolation in space; the
    time interpolation makes the scheme second order in the sample cadence.
    """
    if len(x_times) != len(x_fields) or len(x_times) < 1:
        raise ValueError("need matching, nonempty X samples")
    model = x_fields[0].model
    if model.kind is not GeometryKind.PERIODIC_TORUS:
        raise InterpolationOutOfBand("gauge integration is defined on torus models")
    plan = model.plan
    n = model.codim
    periods = np.array(model.grid.periods)

    pos = np.stack(plan.coordinates())   # identity map
    positions = [pos.copy()]
    times = [x_times[0]]

    def x_at(tt: float, p: np.ndarray) -> np.ndarray:
        # Piecewise-linear X in time, cubic in space.
        j = np.searchsorted(x_times, tt, side="right") - 1
        j = min(max(j, 0), len(x_times) - 2) if len(x_times) > 1 else 0
        if len(x_times) == 1:
            w = 0.0
        else:
            span = x_times[j + 1] - x_times[j]
            w = (tt - x_times[j]) / span if span > 0 else 0.0
        out = np.empty_like(p)
        wrapped = np.mod(p, periods.reshape((n,) + (1,) * model.grid_ndim))
        for k in range(n):
            lo = periodic_interpolate(x_fields[j].comps[..., k], wrapped, plan)
            if w > 0.0:
                hi = periodic_interpolate(x_fields[j + 1].comps[..., k], wrapped, plan)
                out[k] = (1.0 - w) * lo + w * hi
            else:
                out[k] = lo
        return out

    for j in range(len(x_times) - 1):
        t0, t1 = x_times[j], x_times[j + 1]
        h = (t1 - t0) / substeps
        tt = t0
        for _ in range(substeps):
            pos = rk4_step(lambda s, p: x_at(s, p), tt, pos, h)
            tt += h
        positions.append(pos.copy())
        times.append(t1)
    return DiffeoTrace(model, times, positions)


def pullback_metric(g: TransverseMetricField, positions: np.ndarray) -> TransverseMetricField:
    """(phi* g)_ij = (d phi^a / dy^i)(d phi^b / dy^j) g_ab(phi(y))."""
    model = g.model
    if model.kind is not GeometryKind.PERIODIC_TORUS:
        raise InterpolationOutOfBand("pullback is defined on torus models")
    plan = model.plan
    n = model.codim
    periods = np.array(model.grid.periods)

    coords = np.stack(plan.coordinates())
    disp = positions - coords            # periodic displacement field
    jac = np.empty(model.grid_shape + (n, n))
    for a in range(n):
        for i in range(n):
            jac[..., a, i] = (1.0 if a == i else 0.0) + plan.deriv(disp[a], i, 1)
    det = np.linalg.det(jac)
    if det.min() <= 0.0:
        raise DegenerateJacobian(f"pullback Jacobian determinant min {det.min()} <= 0")
    wrapped = np.mod(positions, periods.reshape((n,) + (1,) * model.grid_ndim))
    g_at = np.empty(model.grid_shape + (n, n))
    for a in range(n):
        for b in range(a, n):
            vals = periodic_interpolate(g.comps[..., a, b], wrapped, plan)
            g_at[..., a, b] = vals
            g_at[..., b, a] = vals
    out = np.einsum("...ai,...bj,...ab->...ij", jac, jac, g_at)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return TransverseMetricField(model, out)


# ---------------------------------------------------------------------------
# Kotschwar uniqueness energy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KotschwarDiagnostics:
    """L^2(chi) aggregates of the uniqueness-energy tensors at one time."""

    h_norm_sq: float
    a_norm_sq: float
    s_norm_sq: float
    u_norm_sq: float
    energy: float
    time: float


@dataclass(frozen=True)
class GeometryPackage:
    """Connection/curvature bundle of one metric, reusable across evaluations."""

    g: TransverseMetricField
    ginv: np.ndarray
    gamma: np.ndarray
    riemann: np.ndarray
    grad_riemann: np.ndarray   # [..., b, m, i, k, l] = nabla_b R^m_ikl


def _geometry_package(g: TransverseMetricField) -> GeometryPackage:
    cur = curvature(g)
    gamma = christoffel(g).gamma
    grad = _cov_deriv_13(g.model, cur.riemann, gamma)
    return GeometryPackage(g, g.inverse(), gamma, cur.riemann, grad)


def _cov_deriv_13(model: FoliationModel, T: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Covariant derivative of a (1,3) tensor; output [..., b, m, i, k, l]."""
    dT = np.moveaxis(model.tensor_gradient(T, 4), 0, -5)
    return (dT
            + np.einsum("...mbr,...rikl->...bmikl", gamma, T, optimize=True)
            - np.einsum("...rbi,...mrkl->...bmikl", gamma, T, optimize=True)
            - np.einsum("...rbk,...mirl->...bmikl", gamma, T, optimize=True)
            - np.einsum("...rbl,...mikr->...bmikl", gamma, T, optimize=True))


def kotschwar_energy(g: TransverseMetricField, gbar: TransverseMetricField,
                     time: float = 0.0,
                     g_package: GeometryPackage | None = None,
                     gbar_package: GeometryPackage | None = None) -> KotschwarDiagnostics:
    """Uniqueness-energy aggregates between two metrics on one model.

    E = int (|h|^2 + |A|^2 + |S|^2) chi ^ dmu with dmu the volume of g; the
    equality E = H + I + G holds exactly by construction.  U is the
    difference of the metric-contracted curvature gradients.
    """
    if g.model != gbar.model:
        raise ModelMismatch("Kotschwar energy requires a shared model")
    pg = g_package if g_package is not None else _geometry_package(g)
    pb = gbar_package if gbar_package is not None else _geometry_package(gbar)

    h = g.comps - gbar.comps
    a = pg.gamma - pb.gamma
    s = pg.riemann - pb.riemann
    # U^{a m}_{i k l} = g^{ab} nabla_b R^m_ikl - gbar^{ab} nabarla_b Rbar^m_ikl
    u = (np.einsum("...ab,...bmikl->...amikl", pg.ginv, pg.grad_riemann, optimize=True)
         - np.einsum("...ab,...bmikl->...amikl", pb.ginv, pb.grad_riemann, optimize=True))

    h_sq = tensor_norm_squared(g, h, 0, 2)
    a_sq = tensor_norm_squared(g, a, 1, 2)
    s_sq = tensor_norm_squared(g, s, 1, 3)
    u_sq = tensor_norm_squared(g, u, 2, 3)

    h_int = chi_integral(g, h_sq)
    a_int = chi_integral(g, a_sq)
    s_int = chi_integral(g, s_sq)
    u_int = chi_integral(g, u_sq)
    return KotschwarDiagnostics(h_int, a_int, s_int, u_int,
                                energy=h_int + a_int + s_int, time=time)


def kotschwar_pointwise(g: TransverseMetricField, gbar: TransverseMetricField) -> dict:
    """Pointwise squared-norm fields of h, A, S, gradient of S, and U (for tests)."""
    pg = _geometry_package(g)
    pb = _geometry_package(gbar)
    s = pg.riemann - pb.riemann
    grad_s = _cov_deriv_13(g.model, s, pg.gamma)
    u = (np.einsum("...ab,...bmikl->...amikl", pg.ginv, pg.grad_riemann, optimize=True)
         - np.einsum("...ab,...bmikl->...amikl", pb.ginv, pb.grad_riemann, optimize=True))
    return {
        "h_sq": tensor_norm_squared(g, g.comps - gbar.comps, 0, 2),
        "a_sq": tensor_norm_squared(g, pg.gamma - pb.gamma, 1, 2),
        "s_sq": tensor_norm_squared(g, s, 1, 3),
        "grad_s_sq": tensor_norm_squared(g, grad_s, 1, 4),
        "u_sq": tensor_norm_squared(g, u, 2, 3),
    }


# ---------------------------------------------------------------------------
# Gronwall fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GronwallFit:
    """Least-squares exponential rate of an energy trace.

    `slope` is the LS slope of log E(t); `c_discrete` is the smallest constant
    for which the one-step inequality E_{k+1} - E_k <= C dt E_k holds at every
    step; `consistent` reports whether c_discrete stays within the fitted
    slope inflated by the Gronwall tolerance (meaningful for growing traces).
    """

    slope: float
    c_discrete: float
    consistent: bool

    def __float__(self) -> float:
        return self.slope


def gronwall_fit(times, energies, tolerance: float = GRONWALL_TOLERANCE) -> GronwallFit:
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    if t.shape != e.shape or t.size < 2:
        raise NonPositiveEnergy("need at least two (t, E) samples")
    if np.any(e <= 0.0):
        raise NonPositiveEnergy("Gronwall fit requires strictly positive energies")
    slope = float(np.polyfit(t, np.log(e), 1)[0])
    ratios = (e[1:] - e[:-1]) / (np.diff(t) * e[:-1])
    c_discrete = float(ratios.max())
    bound = slope + tolerance * max(abs(slope), 1e-12)
    consistent = bool(c_discrete <= bound + 1e-12)
    return GronwallFit(slope=slope, c_discrete=c_discrete, consistent=consistent)
