"""Self-consistent periodic equilibrium fields and coefficient moments.

The steady fields solve the pair of periodic Poisson problems

    -phi0'' = n0 + rho0(phi0, psi0)        rho0 = int (mu+ - mu-) dv
     psi0'' = -j20(phi0, psi0)             j20  = int v2hat (mu+ - mu-) dv

with E1^0 = -phi0' and B^0 = psi0'.  Both right-hand sides must have zero
mean for a periodic solution; the subtracted means are the neutrality
defects.  The solver is a damped Picard iteration in Fourier space with an
automatic spectral Newton fallback for the pendulum-type purely magnetic
branch, where the Picard map has unit-modulus modes and cannot contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NeutralityViolation, NonConvergence, TailTooLarge
from .profiles import SPECIES, EquilibriumProfile, species_sign

# ---------------------------------------------------------------------------
# spectral utilities on a uniform periodic grid
# ---------------------------------------------------------------------------


def wavenumbers(n_x: int, period: float) -> np.ndarray:
    """One-sided wavenumbers m*k1 for rfft layout."""
    return 2.0 * np.pi * np.arange(n_x // 2 + 1) / period


def spectral_derivative(values: np.ndarray, period: float, order: int = 1) -> np.ndarray:
    n = values.shape[-1]
    k = wavenumbers(n, period)
    fh = np.fft.rfft(values)
    fh = fh * (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        fh[..., -1] = 0.0  # odd derivative of the Nyquist mode is not representable
    return np.fft.irfft(fh, n)


def solve_poisson_mean_zero(rhs: np.ndarray, period: float):
    """Solve -u'' = rhs - mean(rhs) with mean(u) = 0; return (u, mean(rhs))."""
    n = rhs.shape[-1]
    k = wavenumbers(n, period)
    fh = np.fft.rfft(rhs)
    defect = fh[0].real / n
    fh[0] = 0.0
    fh[1:] /= k[1:] ** 2
    return np.fft.irfft(fh, n), float(defect)


def trig_coefficients(values: np.ndarray, drop_tol: float = 0.0):
    """One-sided complex mode coefficients c_m with f(x) = Re(sum c_m e^{i m k1 x}).

    c_0 is real; for even n the Nyquist coefficient is kept real (pure cosine).
    Coefficients below drop_tol * max|c| are zeroed so orbit-side evaluation
    can skip negligible modes.
    """
    n = values.shape[-1]
    fh = np.fft.rfft(values) / n
    c = np.empty_like(fh)
    c[0] = fh[0].real
    c[1:] = 2.0 * fh[1:]
    if n % 2 == 0:
        c[-1] = fh[-1].real
    if drop_tol > 0.0 and c.size:
        scale = np.max(np.abs(c))
        if scale > 0.0:
            c[np.abs(c) < drop_tol * scale] = 0.0
    return c


def evaluate_trig(coeffs: np.ndarray, period: float, x):
    """Evaluate a one-sided trig series at arbitrary (possibly unreduced) x."""
    x = np.asarray(x, float)
    z = np.exp(1j * (2.0 * np.pi / period) * x)
    acc = np.full(x.shape, complex(coeffs[0]))
    zp = np.ones_like(z)
    for m in range(1, coeffs.shape[0]):
        zp = zp * z
        if coeffs[m] != 0.0:
            acc += coeffs[m] * zp
    return acc.real


# ---------------------------------------------------------------------------
# velocity quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VelocityGrid:
    """Tensor Gauss-Legendre quadrature on [-v_max, v_max]^2.

    Arrays are shaped for broadcasting against x-resolved fields:
    v1, v2, weight, v1hat, v2hat, gamma all have shape (n_v, n_v).
    """

    v_max: float
    n_v: int
    nodes: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        x, w = np.polynomial.legendre.leggauss(self.n_v)
        object.__setattr__(self, "nodes", self.v_max * x)
        object.__setattr__(self, "weights", self.v_max * w)

    @property
    def v1(self):
        return self.nodes[:, None]

    @property
    def v2(self):
        return self.nodes[None, :]

    @property
    def weight2d(self):
        return self.weights[:, None] * self.weights[None, :]

    @property
    def gamma(self):
        return np.sqrt(1.0 + self.v1**2 + self.v2**2)

    @property
    def v1hat(self):
        return self.v1 / self.gamma

    @property
    def v2hat(self):
        return self.v2 / self.gamma


def invariant_coordinates(grid: VelocityGrid, phi, psi, species: str):
    """(e, p) arrays of shape (n_x, n_v, n_v) for potentials sampled on x nodes."""
    sgn = species_sign(species)
    phi = np.asarray(phi, float)[:, None, None]
    psi = np.asarray(psi, float)[:, None, None]
    e = grid.gamma[None, :, :] + sgn * phi
    p = np.broadcast_to(grid.v2[None, :, :], e.shape) + sgn * psi
    return e, p


def charge_current_moments(profile: EquilibriumProfile, grid: VelocityGrid, phi, psi):
    """rho0(x) and j20(x) for given potentials on the x grid."""
    w2 = grid.weight2d[None, :, :]
    v2hat = grid.v2hat[None, :, :]
    rho = 0.0
    j2 = 0.0
    for s in SPECIES:
        e, p = invariant_coordinates(grid, phi, psi, s)
        dens = profile.mu(s)(e, p)
        sgn = species_sign(s)
        rho = rho + sgn * np.sum(w2 * dens, axis=(1, 2))
        j2 = j2 + sgn * np.sum(w2 * v2hat * dens, axis=(1, 2))
    return rho, j2


# ---------------------------------------------------------------------------
# equilibrium fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumFields:
    """Discretized periodic equilibrium potentials and fields.

    phi0, psi0 carry mean-zero gauges; e1 = -phi0', b0 = psi0' are spectral
    derivatives, so mean(e1) = mean(b0) = 0 automatically.  Mode coefficient
    caches allow trigonometric evaluation at arbitrary (unreduced) positions
    along characteristics.
    """

    x: np.ndarray
    period: float
    phi0: np.ndarray
    psi0: np.ndarray
    e1: np.ndarray
    b0: np.ndarray
    _phi_c: np.ndarray = field(repr=False, default=None)
    _psi_c: np.ndarray = field(repr=False, default=None)
    _e1_c: np.ndarray = field(repr=False, default=None)
    _b0_c: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_potentials(cls, phi0, psi0, period, drop_tol=1e-13):
        phi0 = np.asarray(phi0, float)
        psi0 = np.asarray(psi0, float)
        n = phi0.shape[0]
        x = period * np.arange(n) / n
        e1 = -spectral_derivative(phi0, period)
        b0 = spectral_derivative(psi0, period)
        return cls(
            x=x, period=period, phi0=phi0, psi0=psi0, e1=e1, b0=b0,
            _phi_c=trig_coefficients(phi0, drop_tol),
            _psi_c=trig_coefficients(psi0, drop_tol),
            _e1_c=trig_coefficients(e1, drop_tol),
            _b0_c=trig_coefficients(b0, drop_tol),
        )

    @classmethod
    def zero(cls, n_x: int, period: float):
        z = np.zeros(n_x)
        return cls.from_potentials(z, z, period)

    @property
    def n_x(self):
        return self.x.shape[0]

    def phi_at(self, xq):
        return evaluate_trig(self._phi_c, self.period, xq)

    def psi_at(self, xq):
        return evaluate_trig(self._psi_c, self.period, xq)

    def e1_at(self, xq):
        return evaluate_trig(self._e1_c, self.period, xq)

    def b0_at(self, xq):
        return evaluate_trig(self._b0_c, self.period, xq)

    @property
    def is_field_free(self) -> bool:
        scale = 1.0 + np.max(np.abs(self.phi0)) + np.max(np.abs(self.psi0))
        return float(np.max(np.abs(self.e1)) + np.max(np.abs(self.b0))) < 1e-13 * scale

    def force_coefficients(self):
        """Truncated one-sided coefficients (e1_c, b0_c) for orbit-side evaluation."""
        return self._e1_c, self._b0_c


@dataclass
class EquilibriumSolveOptions:
    tol: float = 1e-10
    neutrality_tol: float = 1e-8
    max_iter: int = 400
    damping: float = 0.5
    newton_fallback: bool = True
    newton_modes: int = 12
    newton_max_iter: int = 40
    psi_seed: float = 0.0
    phi_seed: float = 0.0


@dataclass
class EquilibriumSolveInfo:
    iterations: int
    method: str
    residual_poisson: float
    residual_ampere: float
    neutrality_rho: float
    neutrality_j: float


def _residuals(profile, grid, period, phi, psi):
    rho, j2 = charge_current_moments(profile, grid, phi, psi)
    rhs_phi = profile.n0 + rho
    rhs_psi = -j2
    res_phi = -spectral_derivative(phi, period, 2) - rhs_phi
    res_psi = spectral_derivative(psi, period, 2) - rhs_psi
    return (float(np.max(np.abs(res_phi))), float(np.max(np.abs(res_psi))),
            float(abs(np.mean(rhs_phi))), float(abs(np.mean(rhs_psi))))


def solve_equilibrium(profile: EquilibriumProfile, n_x: int, grid: VelocityGrid,
                      opts: EquilibriumSolveOptions | None = None):
    """Solve the periodic equilibrium field equations.

    Returns (EquilibriumFields, EquilibriumSolveInfo).  Raises NonConvergence
    if neither damped Picard nor the Newton fallback reaches tolerance, and
    NeutralityViolation if the converged right-hand sides keep a mean defect
    above opts.neutrality_tol (the profile admits no periodic equilibrium at
    this n0).
    """
    opts = opts or EquilibriumSolveOptions()
    period = profile.period
    x = period * np.arange(n_x) / n_x
    k1 = 2.0 * np.pi / period
    phi = opts.phi_seed * np.cos(k1 * x)
    psi = opts.psi_seed * np.cos(k1 * x)

    method = "picard"
    best = np.inf
    stall = 0
    iterations = 0
    for it in range(opts.max_iter):
        iterations = it + 1
        rho, j2 = charge_current_moments(profile, grid, phi, psi)
        phi_new, _ = solve_poisson_mean_zero(profile.n0 + rho, period)
        psi_new, _ = solve_poisson_mean_zero(j2, period)  # psi'' = -j2
        phi = (1.0 - opts.damping) * phi + opts.damping * phi_new
        psi = (1.0 - opts.damping) * psi + opts.damping * psi_new
        res = max(_residuals(profile, grid, period, phi, psi)[:2])
        if res < opts.tol:
            break
        if res < 0.7 * best:
            best, stall = res, 0
        else:
            stall += 1
        if stall >= 12 or res > 1e6:
            break  # contraction lost; hand over to Newton if allowed
    res_p, res_a, d_rho, d_j = _residuals(profile, grid, period, phi, psi)

    if max(res_p, res_a) >= opts.tol and opts.newton_fallback:
        psi_n, ok = _newton_psi(profile, grid, period, n_x, opts)
        if ok:
            phi = np.zeros(n_x)
            psi = psi_n
            method = "picard+newton"
            res_p, res_a, d_rho, d_j = _residuals(profile, grid, period, phi, psi)

    if max(res_p, res_a) >= opts.tol:
        raise NonConvergence(
            f"equilibrium solve stalled at residual {max(res_p, res_a):.3e} "
            f"(tol {opts.tol:.1e}) after {iterations} Picard iterations")
    if max(d_rho, d_j) > opts.neutrality_tol:
        raise NeutralityViolation(
            f"source mean defects (rho: {d_rho:.3e}, j2: {d_j:.3e}) exceed "
            f"{opts.neutrality_tol:.1e}; no periodic equilibrium at n0={profile.n0}")

    fields = EquilibriumFields.from_potentials(phi, psi, period)
    info = EquilibriumSolveInfo(iterations, method, res_p, res_a, d_rho, d_j)
    return fields, info


def _newton_psi(profile, grid, period, n_x, opts):
    """Newton solve for psi in the odd-harmonic cosine subspace.

    Solves the psi-only system psi'' + j2(0, psi) = 0 with
    psi = sum_m c_m cos(m k1 x) over odd m.  On that subspace j2 has zero
    mean and no even harmonics whenever mu+(e,p) = mu-(e,-p) with even beam
    shape, which removes the translation zero mode that stalls Picard.
    """
    x = period * np.arange(n_x) / n_x
    k1 = 2.0 * np.pi / period
    modes = np.arange(1, 2 * opts.newton_modes, 2)  # odd harmonics
    basis = np.cos(np.outer(modes, k1 * x))  # (n_modes, n_x)

    def j2_of(c):
        psi = c @ basis
        _, j2 = charge_current_moments(profile, grid, np.zeros(n_x), psi)
        return j2

    def residual(c):
        # cos-mode projection of psi'' + j2
        j2 = j2_of(c)
        proj = 2.0 * (basis @ j2) / n_x
        return -((modes * k1) ** 2) * c + proj

    amp = opts.psi_seed if opts.psi_seed != 0.0 else 0.3
    c = np.zeros(modes.size)
    c[0] = amp
    for _ in range(opts.newton_max_iter):
        r = residual(c)
        if np.max(np.abs(r)) < 0.1 * opts.tol:
            break
        jac = np.empty((modes.size, modes.size))
        h = 1e-6 * max(1.0, np.max(np.abs(c)))
        for j in range(modes.size):
            cp = c.copy()
            cp[j] += h
            jac[:, j] = (residual(cp) - r) / h
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return None, False
        # keep Newton away from the trivial branch: damp huge first steps
        lim = 4.0 * max(np.max(np.abs(c)), amp)
        scale = min(1.0, lim / max(np.max(np.abs(step)), 1e-30))
        c = c + scale * step
    psi = c @ basis
    res = _residuals(profile, grid, period, np.zeros(n_x), psi)
    converged = max(res[0], res[1]) < opts.tol and np.max(np.abs(c)) > 1e-8
    return psi, bool(converged)


def equilibrium_residual(fields: EquilibriumFields, profile: EquilibriumProfile,
                         grid: VelocityGrid):
    """Sup-norm residuals of the steady Gauss and Ampere laws plus mean defects.

    Returns dict with keys poisson, ampere, neutrality_rho, neutrality_j.
    """
    res_p, res_a, d_rho, d_j = _residuals(
        profile, grid, fields.period, fields.phi0, fields.psi0)
    return {"poisson": res_p, "ampere": res_a,
            "neutrality_rho": d_rho, "neutrality_j": d_j}


# ---------------------------------------------------------------------------
# coefficient fields for operator assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientFields:
    """Local velocity moments entering the multiplication parts of the operators.

    sigma_e  = sum_s int mu_e^s dv
    sigma_p  = sum_s int mu_p^s dv
    sigma_vp = sum_s int v2hat mu_p^s dv
    """

    sigma_e: np.ndarray
    sigma_p: np.ndarray
    sigma_vp: np.ndarray
    tail: float


def coefficient_moments(profile: EquilibriumProfile, vgrid: VelocityGrid,
                        phi_x, psi_x, tail_tol: float = 1e-8):
    """Coefficient moments for potentials sampled on an arbitrary x grid."""
    w2 = vgrid.weight2d[None, :, :]
    v2hat = vgrid.v2hat[None, :, :]
    sig_e = 0.0
    sig_p = 0.0
    sig_vp = 0.0
    tail = 0.0
    shell = np.zeros((vgrid.n_v, vgrid.n_v), bool)
    shell[0, :] = shell[-1, :] = True
    shell[:, 0] = shell[:, -1] = True
    for s in SPECIES:
        e, p = invariant_coordinates(vgrid, phi_x, psi_x, s)
        m_e = profile.mu_e(s)(e, p)
        m_p = profile.mu_p(s)(e, p)
        sig_e = sig_e + np.sum(w2 * m_e, axis=(1, 2))
        sig_p = sig_p + np.sum(w2 * m_p, axis=(1, 2))
        sig_vp = sig_vp + np.sum(w2 * v2hat * m_p, axis=(1, 2))
        dens = np.abs(m_e) + np.abs(m_p)
        tail = max(tail, float(np.max(np.sum((w2 * dens)[:, shell], axis=1))))
    scale = max(float(np.max(np.abs(sig_e))), float(np.max(np.abs(sig_vp))), 1e-30)
    if tail > tail_tol * max(scale, 1.0):
        raise TailTooLarge(
            f"boundary shell contributes {tail:.3e} (scale {scale:.3e}); "
            f"increase v_max")
    return CoefficientFields(sigma_e=sig_e, sigma_p=sig_p, sigma_vp=sig_vp, tail=tail)


def eval_coefficient_fields(profile: EquilibriumProfile, fields: EquilibriumFields,
                            grid: VelocityGrid, tail_tol: float = 1e-8):
    """Velocity moments of mu_e, mu_p over the truncated domain, per x node.

    Raises TailTooLarge when the outermost quadrature shell contributes more
    than tail_tol relative to the integrals' scale, indicating v_max is too
    small for this profile.
    """
    return coefficient_moments(profile, grid, fields.phi0, fields.psi0, tail_tol)
