"""Equilibrium particle trajectories and their invariants.

Characteristics of the transport operator solve, backward in s,

    X'  = v1hat(V)
    V1' = +/- (E1^0(X) + v2hat(V) B^0(X))
    V2' = -/+ v1hat(V) B^0(X)

with sign by species charge and vhat = V / sqrt(1 + |V|^2).  The invariants

    e = sqrt(1 + |V|^2) +/- phi0(X)        p = V2 +/- psi0(X)

are exactly conserved along trajectories and double as integration error
monitors.  Positions are tracked unreduced (winding preserved); all field
and kernel evaluations are trigonometric series, which are periodic in X.

Two integrators live here: an adaptive DOP853 wrapper for individual
trajectories (dense output, drift report) and a fixed-substep vectorized
RK4 ensemble used by the orbit-quadrature engine, which advances every
phase-grid node simultaneously and maintains the unit phase e^{i k1 X}
needed by trigonometric kernels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .equilibrium import EquilibriumFields
from .errors import StepFailure
from .profiles import species_sign


@dataclass(frozen=True)
class PhasePoint:
    x: float
    v1: float
    v2: float
    species: str = "+"

    def reduced(self, period: float) -> "PhasePoint":
        return PhasePoint(self.x % period, self.v1, self.v2, self.species)


@dataclass
class Trajectory:
    """Sampled backward trajectory with invariant drift diagnostics."""

    s: np.ndarray
    x: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    e: np.ndarray
    p: np.ndarray
    species: str
    e_drift: float
    p_drift: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "x", "v1", "v2", "e", "p"])
            for row in zip(self.s, self.x, self.v1, self.v2, self.e, self.p):
                writer.writerow([repr(float(v)) for v in row])


def invariants_of(x, v1, v2, fields: EquilibriumFields, species: str):
    """Energy and canonical momentum (e, p) at phase points (vectorized)."""
    sgn = species_sign(species)
    gamma = np.sqrt(1.0 + np.asarray(v1) ** 2 + np.asarray(v2) ** 2)
    e = gamma + sgn * fields.phi_at(x)
    p = np.asarray(v2) + sgn * fields.psi_at(x)
    return e, p


def _rhs(fields: EquilibriumFields, sgn: float):
    def rhs(s, y):
        x, v1, v2 = y
        gamma = np.sqrt(1.0 + v1 * v1 + v2 * v2)
        v1h = v1 / gamma
        v2h = v2 / gamma
        e1 = fields.e1_at(x)
        b0 = fields.b0_at(x)
        return (v1h, sgn * (e1 + v2h * b0), -sgn * v1h * b0)
    return rhs


def integrate_trajectory(fields: EquilibriumFields, start: PhasePoint,
                         s_end: float, rtol: float = 1e-10, atol: float = 1e-12,
                         n_nodes: int = 201, max_step: float = np.inf) -> Trajectory:
    """Integrate one backward trajectory with DOP853 and dense output.

    s_end must be negative; the returned samples run from s = 0 down to
    s_end (strictly decreasing).  Invariant drifts are the max deviations of
    (e, p) from their s = 0 values over the samples.
    """
    if s_end >= 0.0:
        raise ValueError("s_end must be negative (backward integration)")
    sol = solve_ivp(_rhs(fields, species_sign(start.species)),
                    (0.0, s_end), (start.x, start.v1, start.v2),
                    method="DOP853", dense_output=True, rtol=rtol, atol=atol,
                    max_step=max_step)
    if not sol.success:
        raise StepFailure(f"trajectory integration failed: {sol.message}")
    s = np.linspace(0.0, s_end, n_nodes)
    x, v1, v2 = sol.sol(s)
    e, p = invariants_of(x, v1, v2, fields, start.species)
    return Trajectory(
        s=s, x=x, v1=v1, v2=v2, e=e, p=p, species=start.species,
        e_drift=float(np.max(np.abs(e - e[0]))),
        p_drift=float(np.max(np.abs(p - p[0]))),
    )


def estimate_bounce_period(fields: EquilibriumFields, species: str = "+",
                           n_samples: int = 6, horizon: float = 400.0) -> float:
    """Crude bounce/transit period estimate from sampled orbits.

    Times v1 sign flips on a few trajectories; falls back to the
    free-streaming crossing time P / <|v1hat|> when no orbit is trapped.
    This is a heuristic tunable, used only to floor averaging horizons.
    """
    period = fields.period
    if fields.is_field_free:
        return 2.0 * period / 0.5
    rng = np.random.default_rng(7)
    periods = []
    for _ in range(n_samples):
        start = PhasePoint(rng.uniform(0, period), rng.uniform(0.1, 1.2),
                           rng.uniform(-1.0, 1.0), species)
        traj = integrate_trajectory(fields, start, -horizon, rtol=1e-8,
                                    atol=1e-10, n_nodes=4001)
        sign = np.sign(traj.v1)
        flips = np.nonzero(np.diff(sign) != 0)[0]
        if flips.size >= 2:
            periods.append(2.0 * float(np.mean(np.diff(traj.s[flips]))) * -1.0)
    if periods:
        return float(np.median(periods))
    return 2.0 * period / 0.5


class OrbitEnsemble:
    """Vectorized backward integrator for an ensemble of phase points.

    All nodes advance together with fixed RK4 substeps of size <= max_step.
    When the equilibrium is field free, velocities are constant and the
    update is exact free streaming with a multiplicatively maintained unit
    phase z = e^{i k1 X} (one complex multiply per node per step); gap ids
    let the exponential factors be cached across identical step sizes.
    """

    def __init__(self, fields: EquilibriumFields, species: str, x0, v1_0, v2_0,
                 max_step: float = 0.12):
        self.fields = fields
        self.sgn = species_sign(species)
        self.species = species
        self.k1 = 2.0 * np.pi / fields.period
        self.max_step = float(max_step)
        self.x = np.array(x0, float, copy=True)
        self.v1 = np.array(np.broadcast_to(v1_0, self.x.shape), float)
        self.v2 = np.array(np.broadcast_to(v2_0, self.x.shape), float)
        self.s = 0.0
        self.field_free = fields.is_field_free
        self._e1_c, self._b0_c = fields.force_coefficients()
        self._force_modes = [m for m in range(max(self._e1_c.shape[0],
                                                  self._b0_c.shape[0]))
                             if (m < self._e1_c.shape[0] and self._e1_c[m] != 0.0)
                             or (m < self._b0_c.shape[0] and self._b0_c[m] != 0.0)]
        self._gamma = np.sqrt(1.0 + self.v1**2 + self.v2**2)
        self._phase_cache: dict[int, np.ndarray] = {}
        self.z = np.exp(1j * self.k1 * self.x)
        self._steps_since_renorm = 0

    # -- state views ------------------------------------------------------

    @property
    def gamma(self):
        if not self.field_free:
            self._gamma = np.sqrt(1.0 + self.v1**2 + self.v2**2)
        return self._gamma

    @property
    def v1hat(self):
        return self.v1 / self.gamma

    @property
    def v2hat(self):
        return self.v2 / self.gamma

    def invariants(self):
        return invariants_of(self.x, self.v1, self.v2, self.fields, self.species)

    # -- field evaluation along orbits -------------------------------------

    def _force(self, x):
        e1 = np.zeros(x.shape)
        b0 = np.zeros(x.shape)
        if not self._force_modes:
            return e1, b0
        z = np.exp(1j * self.k1 * x)
        zp = np.ones_like(z)
        m_max = self._force_modes[-1]
        for m in range(m_max + 1):
            if m > 0:
                zp = zp * z
            if m < self._e1_c.shape[0] and self._e1_c[m] != 0.0:
                e1 += (self._e1_c[m] * zp).real
            if m < self._b0_c.shape[0] and self._b0_c[m] != 0.0:
                b0 += (self._b0_c[m] * zp).real
        return e1, b0

    def _rhs(self, x, v1, v2):
        gamma = np.sqrt(1.0 + v1 * v1 + v2 * v2)
        v1h = v1 / gamma
        v2h = v2 / gamma
        e1, b0 = self._force(x)
        return v1h, self.sgn * (e1 + v2h * b0), -self.sgn * v1h * b0

    # -- advancing ----------------------------------------------------------

    def advance_by(self, gap: float, gap_id: int | None = None):
        """Advance all nodes by (negative) duration gap."""
        if gap == 0.0:
            return
        if self.field_free:
            self.x += self.v1hat * gap
            if gap_id is not None:
                ph = self._phase_cache.get(gap_id)
                if ph is None:
                    ph = np.exp(1j * self.k1 * self.v1hat * gap)
                    self._phase_cache[gap_id] = ph
                self.z = self.z * ph
            else:
                self.z = self.z * np.exp(1j * self.k1 * self.v1hat * gap)
            self._steps_since_renorm += 1
            if self._steps_since_renorm >= 512:
                # multiplicative phase updates drift in modulus at O(n eps)
                self.z /= np.abs(self.z)
                self._steps_since_renorm = 0
        else:
            n_sub = max(1, int(np.ceil(abs(gap) / self.max_step)))
            h = gap / n_sub
            for _ in range(n_sub):
                self._rk4_step(h)
            self.z = np.exp(1j * self.k1 * self.x)
        self.s += gap

    def _rk4_step(self, h):
        x, v1, v2 = self.x, self.v1, self.v2
        k1x, k1v1, k1v2 = self._rhs(x, v1, v2)
        k2x, k2v1, k2v2 = self._rhs(x + 0.5 * h * k1x, v1 + 0.5 * h * k1v1,
                                    v2 + 0.5 * h * k1v2)
        k3x, k3v1, k3v2 = self._rhs(x + 0.5 * h * k2x, v1 + 0.5 * h * k2v1,
                                    v2 + 0.5 * h * k2v2)
        k4x, k4v1, k4v2 = self._rhs(x + h * k3x, v1 + h * k3v1, v2 + h * k3v2)
        self.x = x + (h / 6.0) * (k1x + 2.0 * (k2x + k3x) + k4x)
        self.v1 = v1 + (h / 6.0) * (k1v1 + 2.0 * (k2v1 + k3v1) + k4v1)
        self.v2 = v2 + (h / 6.0) * (k1v2 + 2.0 * (k2v2 + k3v2) + k4v2)
