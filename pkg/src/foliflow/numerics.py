"""Shared numerical infrastructure.

Spectral differentiation on periodic grids, parity-aware finite differences
for the axisymmetric latitude grid, classical and semi-implicit time
integrators, a step-size controller, and the independent second-order
finite-difference oracle used by the test suite.

The oracle path (`fd_oracle_derivative`) deliberately shares no
differentiation code with the spectral path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import NonFiniteState, PlanMismatch, StepRejected


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# Spectral differentiation on periodic grids
# ---------------------------------------------------------------------------

class SpectralPlan:
    """FFT workspace for a periodic grid.

    Holds per-axis angular wavenumbers and the 2/3-rule dealias mask.  Plans
    are immutable after construction and safe to share between threads; every
    transform allocates its own output.
    """

    def __init__(self, nodes: Sequence[int], periods: Sequence[float]):
        nodes = tuple(int(n) for n in nodes)
        periods = tuple(float(p) for p in periods)
        if len(nodes) != len(periods):
            raise PlanMismatch("nodes and periods must have equal length")
        for n in nodes:
            if not _is_power_of_two(n) or n < 8:
                raise PlanMismatch(f"node count {n} must be a power of two >= 8")
        self.nodes = nodes
        self.periods = periods
        self.ndim = len(nodes)
        self.spacings = tuple(p / n for n, p in zip(nodes, periods))
        # Angular wavenumbers per axis, in FFT ordering.
        self._k = [2.0 * np.pi * np.fft.fftfreq(n, d=p / n)
                   for n, p in zip(nodes, periods)]
        masks = []
        for ax, n in enumerate(nodes):
            m = np.abs(np.fft.fftfreq(n) * n) <= n / 3.0
            masks.append(m)
        mask = np.ones(nodes, dtype=bool)
        for ax, m in enumerate(masks):
            shape = [1] * self.ndim
            shape[ax] = nodes[ax]
            mask = mask & m.reshape(shape)
        self._dealias_mask = mask

    # -- plumbing ----------------------------------------------------------

    def _check(self, values: np.ndarray) -> None:
        if values.shape[: self.ndim] != self.nodes:
            raise PlanMismatch(
                f"field grid shape {values.shape[:self.ndim]} does not match plan {self.nodes}")

    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.ndim))

    def wavenumber(self, axis: int) -> np.ndarray:
        """Angular wavenumber along `axis`, broadcastable to grid shape."""
        shape = [1] * self.ndim
        shape[axis] = self.nodes[axis]
        return self._k[axis].reshape(shape)

    def coordinates(self) -> list[np.ndarray]:
        """Node coordinates per axis (open periodic grids)."""
        axes = [np.arange(n) * h for n, h in zip(self.nodes, self.spacings)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def forward(self, values: np.ndarray) -> np.ndarray:
        self._check(values)
        return np.fft.fftn(values, axes=self.axes())

    def inverse(self, spectrum: np.ndarray, real: bool = True) -> np.ndarray:
        out = np.fft.ifftn(spectrum, axes=self.axes())
        return out.real if real else out

    # -- derivatives -------------------------------------------------------

    def deriv(self, values: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
        """Spectral derivative of given order (1 or 2) along one axis."""
        if order not in (1, 2):
            raise PlanMismatch("derivative order must be 1 or 2")
        spec = self.forward(values)
        sym = (1j * self.wavenumber(axis)) ** order
        sym = self._reshape_symbol(sym, spec.ndim)
        out = self.inverse(spec * sym, real=not np.iscomplexobj(values))
        return out

    def partial2(self, values: np.ndarray, axis_a: int, axis_b: int) -> np.ndarray:
        """Mixed second derivative d^2/(dy^a dy^b)."""
        spec = self.forward(values)
        sym = (1j * self.wavenumber(axis_a)) * (1j * self.wavenumber(axis_b))
        sym = self._reshape_symbol(sym, spec.ndim)
        return self.inverse(spec * sym, real=not np.iscomplexobj(values))

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """All first partials; leading axis indexes the direction."""
        spec = self.forward(values)
        real = not np.iscomplexobj(values)
        out = np.empty((self.ndim,) + values.shape,
                       dtype=values.dtype if not real else np.float64)
        for ax in range(self.ndim):
            sym = self._reshape_symbol(1j * self.wavenumber(ax), spec.ndim)
            out[ax] = self.inverse(spec * sym, real=real)
        return out

    def hessian(self, values: np.ndarray) -> np.ndarray:
        """All second partials; two leading axes index the directions."""
        spec = self.forward(values)
        real = not np.iscomplexobj(values)
        out = np.empty((self.ndim, self.ndim) + values.shape,
                       dtype=values.dtype if not real else np.float64)
        for a in range(self.ndim):
            for b in range(a, self.ndim):
                sym = self._reshape_symbol(
                    (1j * self.wavenumber(a)) * (1j * self.wavenumber(b)), spec.ndim)
                out[a, b] = self.inverse(spec * sym, real=real)
                if b != a:
                    out[b, a] = out[a, b]
        return out

    def _reshape_symbol(self, sym: np.ndarray, field_ndim: int) -> np.ndarray:
        # Pad trailing component axes so the symbol broadcasts over them.
        extra = field_ndim - self.ndim
        if extra > 0:
            sym = sym.reshape(sym.shape + (1,) * extra)
        return sym

    # -- filtering and resampling -------------------------------------------

    def dealias(self, values: np.ndarray) -> np.ndarray:
        """Apply the 2/3-rule low-pass filter (used after pointwise nonlinearities)."""
        spec = self.forward(values)
        mask = self._reshape_symbol(self._dealias_mask.astype(float), spec.ndim)
        return self.inverse(spec * mask, real=not np.iscomplexobj(values))

    def upsample(self, values: np.ndarray, factor: int) -> np.ndarray:
        """Trigonometric interpolation onto a grid refined by an integer factor."""
        if factor == 1:
            return values.copy()
        out = values
        for ax in range(self.ndim):
            out = _upsample_axis(out, ax, self.nodes[ax], factor)
        return out


def _upsample_axis(values: np.ndarray, axis: int, n: int, factor: int) -> np.ndarray:
    """Zero-pad the spectrum along one axis, splitting the Nyquist bin."""
    spec = np.fft.fft(values, axis=axis)
    m = n * factor
    shape = list(spec.shape)
    shape[axis] = m
    padded = np.zeros(shape, dtype=complex)
    half = n // 2

    def sl(a, b):
        idx = [slice(None)] * spec.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    padded[sl(0, half)] = spec[sl(0, half)]
    padded[sl(m - half + 1, m)] = spec[sl(half + 1, n)]
    # Nyquist bin is shared between +half and -half on the fine grid.
    nyq = spec[sl(half, half + 1)]
    padded[sl(half, half + 1)] = 0.5 * nyq
    padded[sl(m - half, m - half + 1)] = 0.5 * nyq
    out = np.fft.ifft(padded, axis=axis) * factor
    return out.real if not np.iscomplexobj(values) else out


def periodic_interpolate(values: np.ndarray, points: np.ndarray,
                         plan: SpectralPlan, upsample: int = 4) -> np.ndarray:
    """Evaluate a periodic grid field at arbitrary points.

    Fourier-upsamples by `upsample`, then cubic-spline interpolates with
    periodic wrap.  `points` has shape (ndim, ...) in physical coordinates.
    """
    fine = plan.upsample(values, upsample)
    coords = [points[ax] / (plan.spacings[ax] / upsample) for ax in range(plan.ndim)]
    return ndimage.map_coordinates(fine, np.asarray(coords), order=3, mode="grid-wrap")


# ---------------------------------------------------------------------------
# Latitude grid for the axisymmetric sphere model
# ---------------------------------------------------------------------------

EVEN = 1
ODD = -1


class LatitudeGrid:
    """Cell-centred grid on the open latitude interval (0, pi).

    Nodes sit at (j + 1/2) * pi / n, so they respect any pole-exclusion
    margin delta <= pi / (2n).  Regularity at the poles is imposed through
    even/odd parity ghost values (reflection theta -> -theta maps the first
    interior nodes onto themselves), which lets fourth-order centred stencils
    run up to the ends of the band.
    """

    def __init__(self, n_nodes: int, margin: float = 1e-3):
        self.n_nodes = int(n_nodes)
        self.margin = float(margin)
        self.spacing = np.pi / self.n_nodes
        self.theta = (np.arange(self.n_nodes) + 0.5) * self.spacing

    def _pad(self, values: np.ndarray, parity: int) -> np.ndarray:
        if values.shape[0] != self.n_nodes:
            raise PlanMismatch("latitude field length does not match grid")
        left = parity * values[1::-1]
        right = parity * values[:-3:-1]
        return np.concatenate([left, values, right], axis=0)

    def deriv(self, values: np.ndarray, order: int = 1, parity: int = EVEN) -> np.ndarray:
        """Fourth-order centred derivative with parity ghosts at both poles."""
        p = self._pad(values, parity)
        h = self.spacing
        if order == 1:
            return (p[:-4] - 8.0 * p[1:-3] + 8.0 * p[3:-1] - p[4:]) / (12.0 * h)
        if order == 2:
            return (-p[:-4] + 16.0 * p[1:-3] - 30.0 * p[2:-2]
                    + 16.0 * p[3:-1] - p[4:]) / (12.0 * h * h)
        raise PlanMismatch("derivative order must be 1 or 2")

    def quadrature(self, values: np.ndarray) -> float:
        """Midpoint rule over the latitude band."""
        return float(np.sum(values) * self.spacing)


# ---------------------------------------------------------------------------
# Time integrators
# ---------------------------------------------------------------------------

def rk4_step(rhs: Callable[[float, np.ndarray], np.ndarray],
             t: float, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta 4 step of du/dt = rhs(t, u)."""
    k1 = rhs(t, state)
    k2 = rhs(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = rhs(t + dt, state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("non-finite state after RK4 step")
    return out


def semi_implicit_step(rhs: Callable[[float, np.ndarray], np.ndarray],
                       symbol: np.ndarray, plan: SpectralPlan,
                       t: float, state: np.ndarray, dt: float) -> np.ndarray:
    """IMEX Euler step: backward Euler on a constant-coefficient principal part.

    Solves  u+ = u + dt * (rhs(t, u) - L u) + dt * L u+  with L the spectral
    multiplier `symbol` (componentwise over trailing axes).  Unconditionally
    stable whenever `symbol` dominates the true principal symbol.
    """
    sym = plan._reshape_symbol(symbol, state.ndim)
    spec_u = plan.forward(state)
    lin_u = plan.inverse(spec_u * sym, real=not np.iscomplexobj(state))
    explicit = state + dt * (rhs(t, state) - lin_u)
    spec = plan.forward(explicit) / (1.0 - dt * sym)
    out = plan.inverse(spec, real=not np.iscomplexobj(state))
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("non-finite state after semi-implicit step")
    return out


def laplacian_symbol(plan: SpectralPlan, coefficient: float) -> np.ndarray:
    """Spectral symbol  -coefficient * |k|^2  of a constant-coefficient Laplacian."""
    k2 = np.zeros(plan.nodes)
    for ax in range(plan.ndim):
        k2 = k2 + plan.wavenumber(ax) ** 2
    return -coefficient * k2


@dataclass
class TimeStepController:
    """Reject/halve, accept/grow step-size control.

    Rejection halves dt; 20 consecutive accepted steps double it, capped at
    dt_max.  Falling below dt_min aborts the run.
    """

    dt: float
    dt_min: float = 1e-9
    dt_max: float = np.inf
    grow_after: int = 20
    _accepted: int = field(default=0, repr=False)

    def on_reject(self) -> None:
        self.dt *= 0.5
        self._accepted = 0
        if self.dt < self.dt_min:
            raise StepRejected(f"time step fell below dt_min={self.dt_min}")

    def on_accept(self) -> None:
        self._accepted += 1
        if self._accepted >= self.grow_after:
            self.dt = min(2.0 * self.dt, self.dt_max)
            self._accepted = 0

    def clamp(self, bound: float) -> float:
        return min(self.dt, bound)


# ---------------------------------------------------------------------------
# Independent finite-difference oracle (test reference path)
# ---------------------------------------------------------------------------

def fd_oracle_derivative(values: np.ndarray, axis: int, order: int,
                         spacing: float, refinement: int = 1,
                         periodic: bool = True) -> np.ndarray:
    """Centred second-order finite differences, optionally on a refined copy.

    Refinement trigonometrically interpolates onto a grid `refinement` times
    finer (periodic axes only), differentiates there with plain 2nd-order
    stencils, and restricts back to the original nodes.  Non-periodic axes use
    one-sided second-order closure at the ends.  This code path is kept
    independent of the spectral derivative machinery.
    """
    if refinement not in (1, 2, 4):
        raise ValueError("refinement must be 1, 2 or 4")
    work = values
    h = spacing
    if refinement > 1:
        if not periodic:
            raise ValueError("refinement requires a periodic axis")
        work = _upsample_axis(values, axis, values.shape[axis], refinement)
        h = spacing / refinement

    if periodic:
        up = np.roll(work, -1, axis=axis)
        dn = np.roll(work, 1, axis=axis)
        if order == 1:
            out = (up - dn) / (2.0 * h)
        elif order == 2:
            out = (up - 2.0 * work + dn) / (h * h)
        else:
            raise ValueError("order must be 1 or 2")
    else:
        out = _fd_one_sided(work, axis, order, h)

    if refinement > 1:
        take = [slice(None)] * out.ndim
        take[axis] = slice(None, None, refinement)
        out = out[tuple(take)]
    return out


def _fd_one_sided(values: np.ndarray, axis: int, order: int, h: float) -> np.ndarray:
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v, dtype=float)
    if order == 1:
        out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    elif order == 2:
        out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h)
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / (h * h)
    else:
        raise ValueError("order must be 1 or 2")
    return np.moveaxis(out, 0, axis)
