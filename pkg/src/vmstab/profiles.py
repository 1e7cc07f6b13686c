"""Equilibrium distribution profiles.

A two-species equilibrium is specified by densities mu+(e, p) and mu-(e, p)
in the particle invariants

    e = sqrt(1 + |v|^2) +/- phi0(x)      (energy, sign by species charge)
    p = v2 +/- psi0(x)                   (canonical momentum)

together with their partial derivatives mu_e, mu_p.  Profiles must decay in
energy at least like the weight w(e) = c (1 + |e|)^(-alpha) with alpha > 2,
which makes the velocity integrals of |mu_e| + |mu_p| finite.

Built-in families (all C^1, analytic partials):

    homogeneous-maxwellian     mu = amp * exp(-(e-1)/theta), isotropic, monotone
    nonmonotone-ring           mu = amp * exp(-(e-e_ring)^2 / (2 theta_e^2))
    two-stream                 ring in e times a Gaussian in p centered at p_shift
                               (counter-propagating v1 beams on every v2 section)
    purely-magnetic-symmetric  mu+(e,p) = mu-(e,-p), even double beam in p

A tabulated profile on a rectangular (e, p) grid can be loaded from CSV with
header ``e,p,mu_plus,mu_minus``; it is interpolated bilinearly and the partials
are the exact derivatives of the bilinear interpolant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError

SPECIES = ("+", "-")


def species_sign(species: str) -> float:
    if species == "+":
        return 1.0
    if species == "-":
        return -1.0
    raise ValueError(f"unknown species {species!r}")


@dataclass(frozen=True)
class EquilibriumProfile:
    """Two-species equilibrium density in invariant coordinates.

    The callables are vectorized over numpy arrays of (e, p).  ``alpha`` and
    ``c_weight`` define the decay weight w(e) = c_weight * (1+|e|)^(-alpha)
    that must dominate |mu_e| + |mu_p|; ``v_max`` is the velocity-domain
    truncation radius used by all quadratures; ``n0`` is the constant external
    radiation density entering the Gauss law.
    """

    mu_plus: Callable
    mu_minus: Callable
    mu_e_plus: Callable
    mu_e_minus: Callable
    mu_p_plus: Callable
    mu_p_minus: Callable
    period: float
    alpha: float
    c_weight: float
    v_max: float
    n0: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.period <= 0.0:
            raise ConfigError("period must be positive")
        if self.alpha <= 2.0:
            raise ConfigError("weight exponent alpha must exceed 2")
        if self.c_weight <= 0.0:
            raise ConfigError("weight scale c_weight must be positive")
        if self.v_max <= 0.0:
            raise ConfigError("v_max must be positive")

    def mu(self, species: str) -> Callable:
        return self.mu_plus if species == "+" else self.mu_minus

    def mu_e(self, species: str) -> Callable:
        return self.mu_e_plus if species == "+" else self.mu_e_minus

    def mu_p(self, species: str) -> Callable:
        return self.mu_p_plus if species == "+" else self.mu_p_minus

    def weight(self, e):
        """Decay weight w(e) = c (1 + |e|)^(-alpha)."""
        return self.c_weight * (1.0 + np.abs(e)) ** (-self.alpha)

    def validate_samples(self, e, p, rtol: float = 1e-9) -> float:
        """Check mu >= 0 and |mu_e|+|mu_p| <= w(e) on sample points.

        Returns the worst ratio (|mu_e|+|mu_p|)/w; raises ConfigError above
        1 + rtol or on negative densities.
        """
        worst = 0.0
        for s in SPECIES:
            dens = np.asarray(self.mu(s)(e, p))
            if np.any(dens < -rtol * (1.0 + np.max(np.abs(dens)))):
                raise ConfigError(f"mu{s} takes negative values")
            bound = np.abs(self.mu_e(s)(e, p)) + np.abs(self.mu_p(s)(e, p))
            ratio = float(np.max(bound / self.weight(e)))
            worst = max(worst, ratio)
        if worst > 1.0 + rtol:
            raise ConfigError(
                f"profile violates the decay bound: (|mu_e|+|mu_p|)/w = {worst:.3g}"
            )
        return worst


def _fit_weight_scale(mu_e_funcs, mu_p_funcs, alpha, e_max, margin=1.10):
    """Smallest c such that |mu_e|+|mu_p| <= c(1+|e|)^(-alpha) on a dense sample."""
    e = np.linspace(1.0, e_max, 801)[:, None]
    p = np.linspace(-e_max, e_max, 401)[None, :]
    c = 0.0
    for fe, fp in zip(mu_e_funcs, mu_p_funcs):
        bound = np.abs(fe(e, p)) + np.abs(fp(e, p))
        c = max(c, float(np.max(bound * (1.0 + e) ** alpha)))
    return margin * c


def homogeneous_maxwellian(period=2 * np.pi, amplitude=0.5, theta=1.0,
                           alpha=3.0, v_max=None, n0=0.0):
    """Isotropic monotone Maxwellian-type profile, identical for both species."""
    if v_max is None:
        v_max = _vmax_for_reach(1.0 + 27.6 * theta)

    def mu(e, p):
        return amplitude * np.exp(-(e - 1.0) / theta) * np.ones_like(np.asarray(p, float))

    def mu_e(e, p):
        return -mu(e, p) / theta

    def mu_p(e, p):
        return np.zeros(np.broadcast(np.asarray(e), np.asarray(p)).shape)

    e_max = 1.0 + np.sqrt(1.0 + 2.0 * v_max**2)
    c = _fit_weight_scale([mu_e, mu_e], [mu_p, mu_p], alpha, e_max)
    return EquilibriumProfile(
        mu, mu, mu_e, mu_e, mu_p, mu_p, period=period, alpha=alpha,
        c_weight=c, v_max=v_max, n0=n0, name="homogeneous-maxwellian",
        params=dict(amplitude=amplitude, theta=theta))


def nonmonotone_ring(period=2 * np.pi, amplitude=0.5, e_ring=1.8, theta_e=0.45,
                     alpha=3.0, v_max=None, n0=0.0):
    """Isotropic ring in energy; mu_e changes sign at e_ring (nonmonotone)."""
    if v_max is None:
        v_max = _vmax_for_reach(e_ring + 7.5 * theta_e)

    def mu(e, p):
        return amplitude * np.exp(-((e - e_ring) ** 2) / (2.0 * theta_e**2)) \
            * np.ones_like(np.asarray(p, float))

    def mu_e(e, p):
        return -(e - e_ring) / theta_e**2 * mu(e, p)

    def mu_p(e, p):
        return np.zeros(np.broadcast(np.asarray(e), np.asarray(p)).shape)

    e_max = 1.0 + np.sqrt(1.0 + 2.0 * v_max**2)
    c = _fit_weight_scale([mu_e, mu_e], [mu_p, mu_p], alpha, e_max)
    return EquilibriumProfile(
        mu, mu, mu_e, mu_e, mu_p, mu_p, period=period, alpha=alpha,
        c_weight=c, v_max=v_max, n0=n0, name="nonmonotone-ring",
        params=dict(amplitude=amplitude, e_ring=e_ring, theta_e=theta_e))


def two_stream(period=12.0, amplitude=0.35, e_ring=2.0, theta_e=0.5,
               theta_p=0.9, p_shift=0.25, alpha=3.0, v_max=None, n0=0.0):
    """Energy ring localized in canonical momentum, identical species.

    On each v2 section the v1 marginal is double humped at
    |v1| ~ sqrt(e_ring^2 - 1 - v2^2): a relativistic symmetric two-stream.
    A nonzero p_shift breaks the p-parity and turns on the B coupling while
    keeping the configuration charge and current neutral (the species are
    equal, so rho0 = j20 = 0 and the zero-field state is an exact
    equilibrium for n0 = 0).
    """
    if v_max is None:
        v_max = _vmax_for_reach(e_ring + 7.5 * theta_e,
                                p_extent=abs(p_shift) + 7.5 * theta_p)

    def mu(e, p):
        return amplitude * np.exp(-((e - e_ring) ** 2) / (2.0 * theta_e**2)) \
            * np.exp(-((p - p_shift) ** 2) / (2.0 * theta_p**2))

    def mu_e(e, p):
        return -(e - e_ring) / theta_e**2 * mu(e, p)

    def mu_p(e, p):
        return -(p - p_shift) / theta_p**2 * mu(e, p)

    e_max = 1.0 + np.sqrt(1.0 + 2.0 * v_max**2)
    c = _fit_weight_scale([mu_e, mu_e], [mu_p, mu_p], alpha, e_max)
    return EquilibriumProfile(
        mu, mu, mu_e, mu_e, mu_p, mu_p, period=period, alpha=alpha,
        c_weight=c, v_max=v_max, n0=n0, name="two-stream",
        params=dict(amplitude=amplitude, e_ring=e_ring, theta_e=theta_e,
                    theta_p=theta_p, p_shift=p_shift))


def purely_magnetic_symmetric(period=2 * np.pi, amplitude=0.4, beta=1.2,
                              p_beam=1.6, theta_p=0.55, alpha=3.0,
                              v_max=None, n0=0.0):
    """Counter-streaming double beam in p with mu+(e,p) = mu-(e,-p).

    The p-even shape keeps the charge density identically zero for phi0 = 0,
    so the self-consistent equilibrium is purely magnetic: phi0 = 0 and a
    pendulum-type periodic psi0 sourced by the beam current response.
    """
    if v_max is None:
        v_max = _vmax_for_reach(1.0 + 27.6 / beta,
                                p_extent=p_beam + 7.5 * theta_p)

    def _h(p):
        return 0.5 * (np.exp(-((p - p_beam) ** 2) / (2.0 * theta_p**2))
                      + np.exp(-((p + p_beam) ** 2) / (2.0 * theta_p**2)))

    def _dh(p):
        return 0.5 * (-(p - p_beam) / theta_p**2
                      * np.exp(-((p - p_beam) ** 2) / (2.0 * theta_p**2))
                      - (p + p_beam) / theta_p**2
                      * np.exp(-((p + p_beam) ** 2) / (2.0 * theta_p**2)))

    def mu_plus(e, p):
        return amplitude * np.exp(-beta * (e - 1.0)) * _h(p)

    def mu_e_plus(e, p):
        return -beta * mu_plus(e, p)

    def mu_p_plus(e, p):
        return amplitude * np.exp(-beta * (e - 1.0)) * _dh(p)

    # mirror species: mu-(e,p) = mu+(e,-p)
    def mu_minus(e, p):
        return mu_plus(e, -np.asarray(p))

    def mu_e_minus(e, p):
        return mu_e_plus(e, -np.asarray(p))

    def mu_p_minus(e, p):
        return -mu_p_plus(e, -np.asarray(p))

    e_max = 1.0 + np.sqrt(1.0 + 2.0 * v_max**2)
    c = _fit_weight_scale([mu_e_plus, mu_e_minus], [mu_p_plus, mu_p_minus],
                          alpha, e_max)
    return EquilibriumProfile(
        mu_plus, mu_minus, mu_e_plus, mu_e_minus, mu_p_plus, mu_p_minus,
        period=period, alpha=alpha, c_weight=c, v_max=v_max, n0=n0,
        name="purely-magnetic-symmetric",
        params=dict(amplitude=amplitude, beta=beta, p_beam=p_beam,
                    theta_p=theta_p))


def _vmax_for_reach(e_reach: float, p_extent: float = 0.0) -> float:
    """Truncation radius from the energy where the profile falls to ~1e-12."""
    reach = max(np.sqrt(max(e_reach, 1.0 + 1e-9) ** 2 - 1.0), p_extent + 1.0)
    return float(np.ceil(2.0 * reach) / 2.0)


def tabulated_profile(path, period, alpha=3.0, v_max=4.0, n0=0.0):
    """Load mu+/-(e, p) from CSV (header e,p,mu_plus,mu_minus) on a rectangular grid.

    Bilinear interpolation inside the table, zero outside; partials are the
    analytic derivatives of the bilinear patches (piecewise constant in the
    differentiated direction).
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        e_vals = np.array([float(r["e"]) for r in rows])
        p_vals = np.array([float(r["p"]) for r in rows])
        mp = np.array([float(r["mu_plus"]) for r in rows])
        mm = np.array([float(r["mu_minus"]) for r in rows])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: expected CSV header e,p,mu_plus,mu_minus") from exc
    e_grid = np.unique(e_vals)
    p_grid = np.unique(p_vals)
    if len(rows) != e_grid.size * p_grid.size:
        raise ConfigError(f"{path}: table is not a full rectangular (e,p) grid")
    tab_p = np.full((e_grid.size, p_grid.size), np.nan)
    tab_m = np.full_like(tab_p, np.nan)
    ie = np.searchsorted(e_grid, e_vals)
    ip = np.searchsorted(p_grid, p_vals)
    tab_p[ie, ip] = mp
    tab_m[ie, ip] = mm
    if np.any(np.isnan(tab_p)) or np.any(np.isnan(tab_m)):
        raise ConfigError(f"{path}: duplicate or missing (e,p) pairs")

    interp_p = _BilinearTable(e_grid, p_grid, tab_p)
    interp_m = _BilinearTable(e_grid, p_grid, tab_m)
    c = _fit_weight_scale([interp_p.d_e, interp_m.d_e],
                          [interp_p.d_p, interp_m.d_p], alpha,
                          e_max=float(e_grid[-1]))
    return EquilibriumProfile(
        interp_p, interp_m, interp_p.d_e, interp_m.d_e, interp_p.d_p,
        interp_m.d_p, period=period, alpha=alpha, c_weight=c, v_max=v_max,
        n0=n0, name="tabulated", params=dict(path=str(path)))


class _BilinearTable:
    """Bilinear interpolant of a rectangular table, zero outside its hull."""

    def __init__(self, e_grid, p_grid, table):
        self.e_grid = e_grid
        self.p_grid = p_grid
        self.table = table

    def _locate(self, e, p):
        e = np.asarray(e, float)
        p = np.asarray(p, float)
        e_b, p_b = np.broadcast_arrays(e, p)
        inside = ((e_b >= self.e_grid[0]) & (e_b <= self.e_grid[-1])
                  & (p_b >= self.p_grid[0]) & (p_b <= self.p_grid[-1]))
        ie = np.clip(np.searchsorted(self.e_grid, e_b) - 1, 0, self.e_grid.size - 2)
        ip = np.clip(np.searchsorted(self.p_grid, p_b) - 1, 0, self.p_grid.size - 2)
        de = self.e_grid[ie + 1] - self.e_grid[ie]
        dp = self.p_grid[ip + 1] - self.p_grid[ip]
        te = (e_b - self.e_grid[ie]) / de
        tp = (p_b - self.p_grid[ip]) / dp
        return ie, ip, te, tp, de, dp, inside

    def __call__(self, e, p):
        ie, ip, te, tp, _, _, inside = self._locate(e, p)
        t = self.table
        val = ((1 - te) * (1 - tp) * t[ie, ip] + te * (1 - tp) * t[ie + 1, ip]
               + (1 - te) * tp * t[ie, ip + 1] + te * tp * t[ie + 1, ip + 1])
        return np.where(inside, val, 0.0)

    def d_e(self, e, p):
        ie, ip, _, tp, de, _, inside = self._locate(e, p)
        t = self.table
        val = ((1 - tp) * (t[ie + 1, ip] - t[ie, ip])
               + tp * (t[ie + 1, ip + 1] - t[ie, ip + 1])) / de
        return np.where(inside, val, 0.0)

    def d_p(self, e, p):
        ie, ip, te, _, _, dp, inside = self._locate(e, p)
        t = self.table
        val = ((1 - te) * (t[ie, ip + 1] - t[ie, ip])
               + te * (t[ie + 1, ip + 1] - t[ie + 1, ip])) / dp
        return np.where(inside, val, 0.0)


BUILTIN_FAMILIES = {
    "homogeneous-maxwellian": homogeneous_maxwellian,
    "nonmonotone-ring": nonmonotone_ring,
    "two-stream": two_stream,
    "purely-magnetic-symmetric": purely_magnetic_symmetric,
}
